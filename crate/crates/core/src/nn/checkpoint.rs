//! Parameter checkpoints: one plain-text header line listing layer shapes,
//! then all tensors as little-endian 32-bit floats.
//!
//! Layout after the header, in order: for each encoder layer its weight
//! (row-major, out x in) then bias; then the predictor weight and bias.

use super::{DenseLayer, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::Mat;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let mut file = BufWriter::new(std::fs::File::create(path)?);
    let mut header = String::from("mlp-ckpt enc");
    for layer in &params.encoder {
        header.push_str(&format!(" {}x{}", layer.out_dim(), layer.in_dim()));
    }
    header.push_str(&format!(
        " pred {}x{}\n",
        params.predictor.out_dim(),
        params.predictor.in_dim()
    ));
    file.write_all(header.as_bytes())?;
    for tensor in params.tensors() {
        for &v in tensor {
            file.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let display = path.display().to_string();
    let mut reader = BufReader::new(std::fs::File::open(path)?);

    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if reader.read(&mut byte)? == 0 {
            return Err(Error::format(&display, "missing header line"));
        }
        if byte[0] == b'\n' {
            break;
        }
        header.push(byte[0]);
    }
    let header = String::from_utf8(header)
        .map_err(|_| Error::format(&display, "header is not valid text"))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some("mlp-ckpt") || tokens.next() != Some("enc") {
        return Err(Error::format(&display, "unrecognized checkpoint header"));
    }
    let mut encoder_shapes = Vec::new();
    let mut predictor_shape = None;
    let mut in_pred = false;
    for tok in tokens {
        if tok == "pred" {
            in_pred = true;
            continue;
        }
        let (rows, cols) = parse_shape(tok)
            .ok_or_else(|| Error::format(&display, format!("bad shape token `{tok}`")))?;
        if in_pred {
            predictor_shape = Some((rows, cols));
        } else {
            encoder_shapes.push((rows, cols));
        }
    }
    let predictor_shape =
        predictor_shape.ok_or_else(|| Error::format(&display, "missing predictor shape"))?;
    if encoder_shapes.is_empty() {
        return Err(Error::format(&display, "missing encoder shapes"));
    }

    let mut read_layer = |rows: usize, cols: usize| -> Result<DenseLayer> {
        let mut weight = Mat::zeros(rows, cols);
        read_f32s(&mut reader, weight.as_mut_slice(), &display)?;
        let mut bias = vec![0.0; rows];
        read_f32s(&mut reader, &mut bias, &display)?;
        Ok(DenseLayer { weight, bias })
    };

    let mut encoder = Vec::new();
    for (rows, cols) in encoder_shapes {
        encoder.push(read_layer(rows, cols)?);
    }
    let predictor = read_layer(predictor_shape.0, predictor_shape.1)?;

    let mut trailing = [0u8; 1];
    if reader.read(&mut trailing)? != 0 {
        return Err(Error::format(&display, "trailing bytes after tensors"));
    }
    let params = ModelParams { encoder, predictor };
    params.validate()?;
    Ok(params)
}

fn parse_shape(token: &str) -> Option<(usize, usize)> {
    let (rows, cols) = token.split_once('x')?;
    Some((rows.parse().ok()?, cols.parse().ok()?))
}

fn read_f32s(reader: &mut impl Read, out: &mut [f64], path: &str) -> Result<()> {
    let mut buf = [0u8; 4];
    for v in out {
        reader
            .read_exact(&mut buf)
            .map_err(|_| Error::format(path, "truncated tensor data"))?;
        *v = f32::from_le_bytes(buf) as f64;
    }
    Ok(())
}
