//! Exponential-moving-average teacher update and its momentum schedule.

use super::ModelParams;
use crate::error::{Error, Result};

/// In-place `teacher <- lambda*teacher + (1-lambda)*student`, applied to
/// every encoder and predictor tensor.
pub fn ema_update(teacher: &mut ModelParams, student: &ModelParams, lambda: f64) -> Result<()> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::config(format!("momentum {lambda} outside [0, 1)")));
    }
    let student_tensors = student.tensors();
    let mut teacher_tensors = teacher.tensors_mut();
    if teacher_tensors.len() != student_tensors.len()
        || teacher_tensors
            .iter()
            .zip(&student_tensors)
            .any(|(t, s)| t.len() != s.len())
    {
        return Err(Error::config("teacher/student shape mismatch"));
    }
    for (t, s) in teacher_tensors.iter_mut().zip(&student_tensors) {
        if lambda == 0.0 {
            t.copy_from_slice(s);
            continue;
        }
        for (tv, sv) in t.iter_mut().zip(s.iter()) {
            // lambda*t + (1-lambda)*s, written so that t == s is an exact
            // fixed point in floating point.
            *tv -= (1.0 - lambda) * (*tv - *sv);
        }
    }
    Ok(())
}

/// Linear interpolation of the EMA momentum over training steps.
#[derive(Debug, Clone, Copy)]
pub struct MomentumSchedule {
    pub start: f64,
    pub end: f64,
}

impl MomentumSchedule {
    pub fn new(start: f64, end: f64) -> Self {
        MomentumSchedule { start, end }
    }

    pub fn at(&self, step: usize, total_steps: usize) -> f64 {
        if total_steps == 0 {
            return self.start;
        }
        let t = (step as f64 / total_steps as f64).clamp(0.0, 1.0);
        self.start + (self.end - self.start) * t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(seed: u64) -> ModelParams {
        ModelParams::init(&[3, 4, 2], 3, seed).unwrap()
    }

    fn flatten(p: &ModelParams) -> Vec<f64> {
        p.tensors().iter().flat_map(|t| t.iter().copied()).collect()
    }

    #[test]
    fn lambda_zero_copies_student() {
        let mut teacher = params(1);
        let student = params(2);
        ema_update(&mut teacher, &student, 0.0).unwrap();
        assert_eq!(flatten(&teacher), flatten(&student));
    }

    #[test]
    fn identical_models_are_a_fixed_point() {
        let student = params(3);
        for lambda in [0.0, 0.3, 0.999] {
            let mut teacher = student.clone();
            ema_update(&mut teacher, &student, lambda).unwrap();
            assert_eq!(flatten(&teacher), flatten(&student));
        }
    }

    #[test]
    fn update_is_the_exact_affine_combination() {
        let mut teacher = params(4);
        let student = params(5);
        let t0 = flatten(&teacher);
        let s = flatten(&student);
        let lambda = 0.7;
        ema_update(&mut teacher, &student, lambda).unwrap();
        for ((after, before), sv) in flatten(&teacher).iter().zip(&t0).zip(&s) {
            // Bitwise equal to the implemented rearrangement of the affine
            // combination, and within rounding of the textbook form.
            assert_eq!(*after, before - (1.0 - lambda) * (before - sv));
            let textbook = lambda * before + (1.0 - lambda) * sv;
            assert!((after - textbook).abs() <= 1e-15 * textbook.abs().max(1.0));
        }
    }

    #[test]
    fn constant_student_decays_geometrically() {
        let mut teacher = params(6);
        let student = params(7);
        let q0 = flatten(&teacher);
        let p = flatten(&student);
        let lambda: f64 = 0.9;
        let steps = 10;
        for _ in 0..steps {
            ema_update(&mut teacher, &student, lambda).unwrap();
        }
        let decay = lambda.powi(steps);
        for ((after, q), pv) in flatten(&teacher).iter().zip(&q0).zip(&p) {
            let expected_gap = decay * (q - pv);
            assert!(
                ((after - pv) - expected_gap).abs() < 1e-10,
                "geometric decay violated"
            );
        }
    }

    #[test]
    fn shape_mismatch_is_a_configuration_error() {
        let mut teacher = params(8);
        let student = ModelParams::init(&[3, 5, 2], 3, 8).unwrap();
        assert!(matches!(
            ema_update(&mut teacher, &student, 0.5),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn momentum_schedule_matches_reference_endpoints() {
        let sched = MomentumSchedule::new(0.999, 0.9999);
        assert_eq!(sched.at(0, 1000), 0.999);
        assert_eq!(sched.at(1000, 1000), 0.9999);
        assert!((sched.at(500, 1000) - 0.99945).abs() < 1e-12);
    }
}
