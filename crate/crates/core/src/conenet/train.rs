//! Mini-batch training with Adam and best-validation snapshotting.

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AdamConfig, Adam, Architecture, ConeSample, ConenetError, Dataset, Network, LABEL_PAD, MAX_CONES};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch: usize,
    pub epochs: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    /// Cones farther than this are left out of accuracy figures.
    pub eval_range: f64,
    pub seed: u64,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            adam: AdamConfig::default(),
            batch: 16,
            epochs: 200,
            n_train: 6000,
            n_val: 2000,
            n_test: 2000,
            eval_range: 10.0,
            seed: 0,
            architecture: Architecture::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConenetError> {
        if self.batch == 0 || self.epochs == 0 || self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return Err(ConenetError::BadConfig(
                "batch, epochs and split sizes must be positive".into(),
            ));
        }
        if !(self.adam.lr > 0.0) {
            return Err(ConenetError::BadConfig("learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Snapshot with the best validation accuracy.
    pub network: Network,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
    pub test_accuracy: f64,
    pub test_loss: f64,
}

/// Per-cone accuracy over labeled cones within `range`, and mean loss.
pub fn evaluate(net: &Network, samples: &[ConeSample], range: f64) -> (f64, f64) {
    let mut ws = net.workspace();
    let mut correct = 0usize;
    let mut total = 0usize;
    let mut loss = 0.0;
    let mut labeled = 0usize;
    for s in samples {
        let (l, c) = net.sample_loss(s, &mut ws);
        loss += l;
        labeled += c;
        let pred = net.predict(&s.input, &mut ws);
        let (c, t) = count_correct(s, &pred, range);
        correct += c;
        total += t;
    }
    let acc = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
    let loss = if labeled == 0 { 0.0 } else { loss / labeled as f64 };
    (acc, loss)
}

/// `(correct, counted)` labeled cones of one sample within `range`.
pub fn count_correct(s: &ConeSample, pred: &[u8; MAX_CONES], range: f64) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for k in 0..MAX_CONES {
        if s.labels[k] == LABEL_PAD || s.input[2 * k].hypot(s.input[2 * k + 1]) > range {
            continue;
        }
        total += 1;
        if pred[k] == s.labels[k] {
            correct += 1;
        }
    }
    (correct, total)
}

pub fn train(config: &TrainConfig, data: &Dataset) -> Result<TrainResult, ConenetError> {
    config.validate()?;
    let need = config.n_train + config.n_val + config.n_test;
    if data.len() < need {
        return Err(ConenetError::BadConfig(format!(
            "dataset has {} samples, split needs {need}",
            data.len()
        )));
    }
    let train_set = &data.samples[..config.n_train];
    let val_set = &data.samples[config.n_train..config.n_train + config.n_val];
    let test_set = &data.samples[config.n_train + config.n_val..need];

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = Network::new(config.architecture.clone(), config.seed);
    let mut adam = Adam::new(config.adam, net.param_count());
    let mut grad = vec![0.0; net.param_count()];
    let mut ws = net.workspace();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Network)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch).enumerate() {
            let batch: Vec<&ConeSample> = chunk.iter().map(|&i| &train_set[i]).collect();
            let loss = net.loss_and_grad(&batch, &mut grad, &mut ws);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(ConenetError::Diverged {
                    epoch,
                    batch: b,
                    loss,
                });
            }
            adam.step(net.params_mut(), &grad);
            loss_sum += loss;
            batches += 1;
        }
        let (val_accuracy, val_loss) = evaluate(&net, val_set, config.eval_range);
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / batches as f64,
            val_loss,
            val_accuracy,
        };
        info!(
            "epoch {epoch}: train loss {:.5}, val loss {:.5}, val acc {:.4}",
            m.train_loss, m.val_loss, m.val_accuracy
        );
        metrics.push(m);
        if best.as_ref().map_or(true, |b| val_accuracy > b.0) {
            best = Some((val_accuracy, epoch, net.clone()));
        }
    }
    let (_, best_epoch, network) = best.expect("at least one epoch");
    let (test_accuracy, test_loss) = evaluate(&network, test_set, config.eval_range);
    Ok(TrainResult {
        network,
        best_epoch,
        metrics,
        test_accuracy,
        test_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conenet::{generate_dataset, DatasetConfig};

    fn quick() -> TrainConfig {
        TrainConfig {
            epochs: 4,
            n_train: 200,
            n_val: 50,
            n_test: 50,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn short_run_learns_and_repeats() {
        let data = generate_dataset(&DatasetConfig::default(), 300, 1).unwrap();
        let a = train(&quick(), &data).unwrap();
        let b = train(&quick(), &data).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert!(a.metrics.last().unwrap().train_loss < a.metrics[0].train_loss);
    }

    #[test]
    fn rejects_small_dataset() {
        let data = generate_dataset(&DatasetConfig::default(), 100, 1).unwrap();
        assert!(matches!(train(&quick(), &data), Err(ConenetError::BadConfig(_))));
    }

    #[test]
    fn divergence_reported() {
        let data = generate_dataset(&DatasetConfig::default(), 300, 1).unwrap();
        let mut cfg = quick();
        cfg.adam.lr = f64::INFINITY;
        assert!(matches!(train(&cfg, &data), Err(ConenetError::Diverged { .. })));
    }
}
