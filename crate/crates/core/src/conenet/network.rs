//! 1-D convolutional classifier over the cone sequence.
//!
//! Activations are stored position-major (`[position][channel]`). Conv
//! weights are laid out `[tap][in][out]` and the dense layer `[in][out]`, so
//! every inner loop runs over contiguous output channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConeSample, LABEL_PAD, MAX_CONES, NUM_CLASSES};

pub const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// Channel counts from input to last conv layer.
    pub channels: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            channels: vec![2, 16, 32, 32, 32],
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    w: usize,
    b: usize,
    ci: usize,
    co: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    arch: Architecture,
    params: Vec<f64>,
}

/// Scratch buffers reused across samples.
pub struct Workspace {
    acts: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
    logits: Vec<f64>,
    dlogits: Vec<f64>,
}

impl Network {
    pub fn param_count_for(arch: &Architecture) -> usize {
        let conv: usize = arch
            .channels
            .windows(2)
            .map(|w| KERNEL * w[0] * w[1] + w[1])
            .sum();
        let feat = MAX_CONES * arch.channels.last().copied().unwrap_or(0);
        conv + feat * MAX_CONES * NUM_CLASSES + MAX_CONES * NUM_CLASSES
    }

    /// He-uniform conv weights, Glorot-uniform dense weights, zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Self {
        assert!(arch.channels.len() >= 2 && arch.channels.iter().all(|c| *c > 0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Self {
            params: vec![0.0; Self::param_count_for(&arch)],
            arch,
        };
        for blk in net.conv_blocks() {
            let fan_in = (KERNEL * blk.ci) as f64;
            let bound = (6.0 / fan_in).sqrt();
            for p in &mut net.params[blk.w..blk.w + KERNEL * blk.ci * blk.co] {
                *p = rng.random_range(-bound..bound);
            }
        }
        let fc = net.dense_block();
        let bound = (6.0 / (fc.ci + fc.co) as f64).sqrt();
        for p in &mut net.params[fc.w..fc.w + fc.ci * fc.co] {
            *p = rng.random_range(-bound..bound);
        }
        net
    }

    /// Builds a network from raw parameters.
    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Option<Self> {
        (arch.channels.len() >= 2
            && arch.channels.iter().all(|c| *c > 0)
            && params.len() == Self::param_count_for(&arch))
        .then_some(Self { arch, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn conv_blocks(&self) -> Vec<Block> {
        let mut off = 0;
        self.arch
            .channels
            .windows(2)
            .map(|w| {
                let blk = Block {
                    w: off,
                    b: off + KERNEL * w[0] * w[1],
                    ci: w[0],
                    co: w[1],
                };
                off = blk.b + w[1];
                blk
            })
            .collect()
    }

    fn dense_block(&self) -> Block {
        let conv = self.conv_blocks();
        let last = conv.last().expect("at least one conv layer");
        let w = last.b + last.co;
        let ci = MAX_CONES * last.co;
        let co = MAX_CONES * NUM_CLASSES;
        Block {
            w,
            b: w + ci * co,
            ci,
            co,
        }
    }

    pub fn workspace(&self) -> Workspace {
        Workspace {
            acts: self
                .arch
                .channels
                .iter()
                .map(|c| vec![0.0; MAX_CONES * c])
                .collect(),
            grads: self
                .arch
                .channels
                .iter()
                .map(|c| vec![0.0; MAX_CONES * c])
                .collect(),
            logits: vec![0.0; MAX_CONES * NUM_CLASSES],
            dlogits: vec![0.0; MAX_CONES * NUM_CLASSES],
        }
    }

    fn forward_into(&self, input: &[f64], ws: &mut Workspace) {
        assert_eq!(input.len(), 2 * MAX_CONES, "input must have 30 values");
        ws.acts[0].copy_from_slice(input);
        for (l, blk) in self.conv_blocks().iter().enumerate() {
            let (lo, hi) = ws.acts.split_at_mut(l + 1);
            let x = &lo[l];
            let y = &mut hi[0];
            let (ci, co) = (blk.ci, blk.co);
            let bias = &self.params[blk.b..blk.b + co];
            let w = &self.params[blk.w..blk.w + KERNEL * ci * co];
            for t in 0..MAX_CONES {
                let out = &mut y[t * co..(t + 1) * co];
                out.copy_from_slice(bias);
                for k in 0..KERNEL {
                    let src = t + k;
                    if src < 1 || src > MAX_CONES {
                        continue;
                    }
                    let xin = &x[(src - 1) * ci..src * ci];
                    let wk = &w[k * ci * co..(k + 1) * ci * co];
                    for (i, &xv) in xin.iter().enumerate() {
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &wk[i * co..(i + 1) * co];
                        for (o, wv) in out.iter_mut().zip(wrow) {
                            *o += xv * wv;
                        }
                    }
                }
                for o in out.iter_mut() {
                    if *o < 0.0 {
                        *o = 0.0;
                    }
                }
            }
        }
        let fc = self.dense_block();
        let h = ws.acts.last().expect("conv output");
        let w = &self.params[fc.w..fc.w + fc.ci * fc.co];
        ws.logits.copy_from_slice(&self.params[fc.b..fc.b + fc.co]);
        for (j, &hv) in h.iter().enumerate() {
            if hv == 0.0 {
                continue;
            }
            let wrow = &w[j * fc.co..(j + 1) * fc.co];
            for (z, wv) in ws.logits.iter_mut().zip(wrow) {
                *z += hv * wv;
            }
        }
    }

    /// Class probabilities, row-major `[cone][class]`.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut ws = self.workspace();
        self.forward_into(input, &mut ws);
        let mut p = ws.logits.clone();
        for row in p.chunks_mut(NUM_CLASSES) {
            softmax(row);
        }
        p
    }

    /// Most probable class per cone.
    pub fn predict(&self, input: &[f64], ws: &mut Workspace) -> [u8; MAX_CONES] {
        self.forward_into(input, ws);
        let mut out = [0u8; MAX_CONES];
        for (k, row) in ws.logits.chunks(NUM_CLASSES).enumerate() {
            let mut best = 0;
            for c in 1..NUM_CLASSES {
                if row[c] > row[best] {
                    best = c;
                }
            }
            out[k] = best as u8;
        }
        out
    }

    /// Summed cross-entropy over labeled positions of one sample; returns
    /// `(loss_sum, labeled_count)`.
    pub fn sample_loss(&self, sample: &ConeSample, ws: &mut Workspace) -> (f64, usize) {
        self.forward_into(&sample.input, ws);
        let mut loss = 0.0;
        let mut n = 0;
        for (k, row) in ws.logits.chunks(NUM_CLASSES).enumerate() {
            let y = sample.labels[k];
            if y == LABEL_PAD {
                continue;
            }
            loss += log_sum_exp(row) - row[y as usize];
            n += 1;
        }
        (loss, n)
    }

    /// Mean cross-entropy over all labeled positions in `batch`.
    pub fn loss(&self, batch: &[&ConeSample]) -> f64 {
        let mut ws = self.workspace();
        let mut total = 0.0;
        let mut n = 0;
        for s in batch {
            let (l, c) = self.sample_loss(s, &mut ws);
            total += l;
            n += c;
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }

    /// Mean loss over `batch` and its gradient, written into `grad`.
    pub fn loss_and_grad(&self, batch: &[&ConeSample], grad: &mut [f64], ws: &mut Workspace) -> f64 {
        assert_eq!(grad.len(), self.params.len());
        grad.fill(0.0);
        let n: usize = batch.iter().map(|s| s.real_count()).sum();
        if n == 0 {
            return 0.0;
        }
        let scale = 1.0 / n as f64;
        let mut total = 0.0;
        for s in batch {
            total += self.accumulate(s, scale, grad, ws);
        }
        total * scale
    }

    /// Adds `scale` times the gradient of this sample's summed loss.
    fn accumulate(&self, sample: &ConeSample, scale: f64, grad: &mut [f64], ws: &mut Workspace) -> f64 {
        self.forward_into(&sample.input, ws);
        let mut loss = 0.0;
        for (k, (row, drow)) in ws
            .logits
            .chunks(NUM_CLASSES)
            .zip(ws.dlogits.chunks_mut(NUM_CLASSES))
            .enumerate()
        {
            let y = sample.labels[k];
            if y == LABEL_PAD {
                drow.fill(0.0);
                continue;
            }
            loss += log_sum_exp(row) - row[y as usize];
            drow.copy_from_slice(row);
            softmax(drow);
            drow[y as usize] -= 1.0;
            for d in drow.iter_mut() {
                *d *= scale;
            }
        }

        let fc = self.dense_block();
        let last = self.arch.channels.len() - 1;
        {
            let h = &ws.acts[last];
            let gh = &mut ws.grads[last];
            let w = &self.params[fc.w..fc.w + fc.ci * fc.co];
            let (gw_all, gb_all) = grad[fc.w..fc.b + fc.co].split_at_mut(fc.ci * fc.co);
            for (g, d) in gb_all.iter_mut().zip(&ws.dlogits) {
                *g += d;
            }
            for j in 0..fc.ci {
                let wrow = &w[j * fc.co..(j + 1) * fc.co];
                let mut acc = 0.0;
                for (wv, d) in wrow.iter().zip(&ws.dlogits) {
                    acc += wv * d;
                }
                gh[j] = acc;
                let hv = h[j];
                if hv != 0.0 {
                    let gwrow = &mut gw_all[j * fc.co..(j + 1) * fc.co];
                    for (g, d) in gwrow.iter_mut().zip(&ws.dlogits) {
                        *g += hv * d;
                    }
                }
            }
        }

        let blocks = self.conv_blocks();
        for (l, blk) in blocks.iter().enumerate().rev() {
            let (ci, co) = (blk.ci, blk.co);
            let (glo, ghi) = ws.grads.split_at_mut(l + 1);
            let gy = &mut ghi[0];
            let y = &ws.acts[l + 1];
            // through the ReLU
            for (g, v) in gy.iter_mut().zip(y) {
                if *v <= 0.0 {
                    *g = 0.0;
                }
            }
            let x = &ws.acts[l];
            let gx = &mut glo[l];
            let need_gx = l > 0;
            if need_gx {
                gx.fill(0.0);
            }
            let w = &self.params[blk.w..blk.w + KERNEL * ci * co];
            let (gw, gb) = grad[blk.w..blk.b + co].split_at_mut(KERNEL * ci * co);
            for t in 0..MAX_CONES {
                let gout = &gy[t * co..(t + 1) * co];
                for (g, d) in gb.iter_mut().zip(gout) {
                    *g += d;
                }
                for k in 0..KERNEL {
                    let src = t + k;
                    if src < 1 || src > MAX_CONES {
                        continue;
                    }
                    let s = src - 1;
                    for i in 0..ci {
                        let row = (k * ci + i) * co;
                        let xv = x[s * ci + i];
                        if xv != 0.0 {
                            for (g, d) in gw[row..row + co].iter_mut().zip(gout) {
                                *g += xv * d;
                            }
                        }
                        if need_gx {
                            let mut acc = 0.0;
                            for (wv, d) in w[row..row + co].iter().zip(gout) {
                                acc += wv * d;
                            }
                            gx[s * ci + i] += acc;
                        }
                    }
                }
            }
        }
        loss
    }
}

fn softmax(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conenet::{encode_input, LABEL_BLUE, LABEL_RED};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sample(rng: &mut ChaCha8Rng) -> ConeSample {
        let n = rng.random_range(1..=MAX_CONES);
        let cones: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.random_range(-9.0..9.0), rng.random_range(-6.0..6.0)])
            .collect();
        let mut labels = [LABEL_PAD; MAX_CONES];
        for l in labels.iter_mut().take(n) {
            *l = if rng.random::<bool>() { LABEL_RED } else { LABEL_BLUE };
        }
        ConeSample {
            input: encode_input(&cones),
            labels,
        }
    }

    #[test]
    fn parameter_count() {
        let net = Network::new(Architecture::default(), 0);
        let expected = (3 * 2 * 16 + 16) + (3 * 16 * 32 + 32) + 2 * (3 * 32 * 32 + 32) + 480 * 45 + 45;
        assert_eq!(net.param_count(), expected);
    }

    #[test]
    fn rows_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::new(Architecture::default(), 3);
        for _ in 0..20 {
            let s = random_sample(&mut rng);
            let p = net.forward(&s.input);
            assert_eq!(p.len(), MAX_CONES * NUM_CLASSES);
            for row in p.chunks(3) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|v| *v > 0.0 && *v < 1.0));
            }
        }
    }

    fn zero_dense(net: &mut Network) {
        let fc = net.dense_block();
        net.params_mut()[fc.w..].fill(0.0);
    }

    #[test]
    fn zero_dense_layer_is_uniform_and_costs_ln3() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Network::new(Architecture::default(), 4);
        zero_dense(&mut net);
        let s = random_sample(&mut rng);
        for v in net.forward(&s.input) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((net.loss(&[&s]) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn pad_only_sample_has_zero_gradient() {
        let net = Network::new(Architecture::default(), 5);
        let s = ConeSample {
            input: [0.0; 30],
            labels: [LABEL_PAD; MAX_CONES],
        };
        let mut g = vec![1.0; net.param_count()];
        let mut ws = net.workspace();
        assert_eq!(net.loss_and_grad(&[&s], &mut g, &mut ws), 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn output_is_continuous_in_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = Network::new(Architecture::default(), 7);
        let s = random_sample(&mut rng);
        let base = net.forward(&s.input);
        for h in [1e-3, 1e-4, 1e-5] {
            let mut x = s.input;
            x[0] += h;
            let p = net.forward(&x);
            let change = p.iter().zip(&base).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            // bounded Lipschitz ratio
            assert!(change / h < 50.0, "ratio {}", change / h);
        }
    }

    #[test]
    fn gradient_matches_central_differences_sampled() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = Network::new(Architecture::default(), 9);
        // move off the zero-bias ReLU kinks at padded positions
        for p in net.params_mut() {
            *p += rng.random_range(-0.05..0.05);
        }
        let samples: Vec<ConeSample> = (0..4).map(|_| random_sample(&mut rng)).collect();
        let batch: Vec<&ConeSample> = samples.iter().collect();
        let mut g = vec![0.0; net.param_count()];
        let mut ws = net.workspace();
        net.loss_and_grad(&batch, &mut g, &mut ws);
        let mut probe = net.clone();
        let h = 1e-5;
        // every parameter of the small layers, a stride through the dense layer
        let fc = net.dense_block().w;
        let idx: Vec<usize> = (0..fc).step_by(7).chain((fc..net.param_count()).step_by(97)).collect();
        for i in idx {
            let p0 = net.params[i];
            probe.params[i] = p0 + h;
            let lp = probe.loss(&batch);
            probe.params[i] = p0 - h;
            let lm = probe.loss(&batch);
            probe.params[i] = p0;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6);
            assert!(rel < 1e-4, "param {i}: analytic {} fd {}", g[i], fd);
        }
    }
}
