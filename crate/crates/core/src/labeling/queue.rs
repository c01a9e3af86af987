//! Per-sample ring buffers of recent pseudo labels with mode correction.

use std::collections::VecDeque;

/// One bounded label history per sample. The corrected label is the mode of
/// the buffer; ties go to the most recently enqueued among the tied labels.
#[derive(Debug, Clone)]
pub struct LabelQueue {
    capacity: usize,
    buffers: Vec<VecDeque<u32>>,
}

impl LabelQueue {
    pub fn new(num_samples: usize, capacity: usize) -> Self {
        assert!(capacity >= 1, "queue length must be at least 1");
        LabelQueue {
            capacity,
            buffers: vec![VecDeque::with_capacity(capacity.min(64)); num_samples],
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.buffers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buffers.is_empty()
    }

    /// Pushes `label` into the sample's buffer (evicting the oldest entry at
    /// capacity) and returns the buffer mode.
    pub fn enqueue_and_correct(&mut self, sample: usize, label: u32) -> u32 {
        let buf = &mut self.buffers[sample];
        if buf.len() == self.capacity {
            buf.pop_front();
        }
        buf.push_back(label);
        mode_most_recent(buf.iter().copied())
    }

    pub fn buffer(&self, sample: usize) -> impl Iterator<Item = u32> + '_ {
        self.buffers[sample].iter().copied()
    }
}

/// Mode of a label sequence, ties broken toward the label whose latest
/// occurrence is most recent.
fn mode_most_recent(labels: impl Iterator<Item = u32>) -> u32 {
    // (label, count, last position); linear scan keeps insertion cheap for
    // the short buffers used here.
    let mut stats: Vec<(u32, usize, usize)> = Vec::new();
    for (pos, label) in labels.enumerate() {
        match stats.iter_mut().find(|(l, _, _)| *l == label) {
            Some(entry) => {
                entry.1 += 1;
                entry.2 = pos;
            }
            None => stats.push((label, 1, pos)),
        }
    }
    stats
        .into_iter()
        .max_by_key(|&(_, count, last)| (count, last))
        .map(|(label, _, _)| label)
        .expect("mode of a non-empty buffer")
}
