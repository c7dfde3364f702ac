//! Cone color classifier working on LiDAR cone positions alone.
//!
//! The network sees up to 15 body-frame cone positions sorted by range and
//! labels each as red, blue or padding. Left/right structure of the track is
//! the only cue.

pub mod adam;
pub mod dataset;
pub mod io;
pub mod network;
pub mod train;

use thiserror::Error;

pub use adam::{adam_step, Adam, AdamConfig, Moments};
pub use dataset::{generate_dataset, Dataset, DatasetConfig};
pub use network::{Architecture, Network};
pub use train::{train, EpochMetrics, TrainConfig, TrainResult};

/// Cones per sample.
pub const MAX_CONES: usize = 15;
pub const INPUT_DIM: usize = 2 * MAX_CONES;
pub const NUM_CLASSES: usize = 3;

pub const LABEL_PAD: u8 = 0;
pub const LABEL_RED: u8 = 1;
pub const LABEL_BLUE: u8 = 2;

#[derive(Debug, Error)]
pub enum ConenetError {
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("dataset generation produced {got} of {want} samples")]
    Shortfall { got: usize, want: usize },
    #[error("dataset csv line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("model file: {0}")]
    Decode(String),
    #[error(transparent)]
    Track(#[from] crate::track::TrackError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeSample {
    pub input: [f64; INPUT_DIM],
    pub labels: [u8; MAX_CONES],
}

impl ConeSample {
    pub fn real_count(&self) -> usize {
        self.labels.iter().filter(|l| **l != LABEL_PAD).count()
    }

    /// Checks that padding is exactly zero and follows the real cones.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.real_count();
        for k in 0..MAX_CONES {
            let l = self.labels[k];
            if l > LABEL_BLUE {
                return Err(format!("label {l} at position {k}"));
            }
            if k < n && l == LABEL_PAD {
                return Err(format!("padding at position {k} precedes a real cone"));
            }
            if k >= n && (self.input[2 * k] != 0.0 || self.input[2 * k + 1] != 0.0) {
                return Err(format!("padded position {k} is not (0, 0)"));
            }
            if !self.input[2 * k].is_finite() || !self.input[2 * k + 1].is_finite() {
                return Err(format!("non-finite coordinate at position {k}"));
            }
        }
        Ok(())
    }

    /// Reflects across the body x axis and swaps red and blue.
    pub fn mirrored(&self) -> Self {
        let mut out = self.clone();
        for k in 0..MAX_CONES {
            if self.labels[k] != LABEL_PAD {
                out.input[2 * k + 1] = -self.input[2 * k + 1];
            }
            out.labels[k] = match self.labels[k] {
                LABEL_RED => LABEL_BLUE,
                LABEL_BLUE => LABEL_RED,
                l => l,
            };
        }
        out
    }
}

/// Sorts cones by range, keeps the nearest 15 and interleaves `(x, y)`,
/// zero padding the rest. Returns the permutation used.
pub fn encode_order(cones: &[[f64; 2]]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cones.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = cones[a][0].hypot(cones[a][1]);
        let rb = cones[b][0].hypot(cones[b][1]);
        ra.total_cmp(&rb).then(a.cmp(&b))
    });
    order.truncate(MAX_CONES);
    order
}

pub fn encode_input(cones: &[[f64; 2]]) -> [f64; INPUT_DIM] {
    let mut out = [0.0; INPUT_DIM];
    for (k, &i) in encode_order(cones).iter().enumerate() {
        out[2 * k] = cones[i][0];
        out[2 * k + 1] = cones[i][1];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn three_cones_then_zeros() {
        let v = encode_input(&[[3.0, 1.0], [1.0, 0.5], [2.0, -1.0]]);
        assert_eq!(&v[..6], &[1.0, 0.5, 2.0, -1.0, 3.0, 1.0]);
        assert!(v[6..].iter().all(|x| *x == 0.0));
        assert!(encode_input(&[]).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn seventeen_cones_keep_nearest() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cones: Vec<[f64; 2]> = (0..17)
            .map(|_| [rng.random_range(-9.0..9.0), rng.random_range(-9.0..9.0)])
            .collect();
        let mut ranges: Vec<(f64, [f64; 2])> = cones.iter().map(|c| (c[0].hypot(c[1]), *c)).collect();
        // insertion sort as an independent ordering
        for i in 1..ranges.len() {
            let mut j = i;
            while j > 0 && ranges[j - 1].0 > ranges[j].0 {
                ranges.swap(j - 1, j);
                j -= 1;
            }
        }
        let v = encode_input(&cones);
        for k in 0..MAX_CONES {
            assert_eq!([v[2 * k], v[2 * k + 1]], ranges[k].1);
        }
    }

    #[test]
    fn mirror_is_valid_and_involutive() {
        let mut s = ConeSample {
            input: encode_input(&[[2.0, 1.5], [4.0, -1.5]]),
            labels: [0; MAX_CONES],
        };
        s.labels[0] = LABEL_BLUE;
        s.labels[1] = LABEL_RED;
        let m = s.mirrored();
        m.validate().unwrap();
        assert_eq!(m.labels[0], LABEL_RED);
        assert_eq!(m.input[1], -1.5);
        assert_eq!(m.mirrored(), s);
    }
}
