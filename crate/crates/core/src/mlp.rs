//! Feedforward binary classifier: ReLU hidden layers, sigmoid output,
//! mean binary cross-entropy, minibatch Adam with optional early stopping.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ScalingParams};
use crate::error::{AuditError, Result};

const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    /// Upper bound on full passes over the training rows.
    pub max_epochs: usize,
    pub early_stopping: bool,
    pub validation_fraction: f64,
    pub patience: usize,
    pub tolerance: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 64, 16],
            learning_rate: 1e-3,
            max_epochs: 400,
            early_stopping: true,
            validation_fraction: 0.1,
            patience: 10,
            tolerance: 1e-4,
            batch_size: 32,
            seed: 42,
        }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AuditError::Config(format!("mlp config: {m}")));
        if self.hidden.contains(&0) {
            return bad("hidden sizes must be >= 1");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be > 0");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation fraction must lie in (0, 1)");
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch size and max epochs must be >= 1");
        }
        Ok(())
    }
}

/// Dense layer; `w` is row-major `[n_in][n_out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    /// `out = input * w + b` for `n` rows, skipping zero activations.
    fn affine(&self, input: &[f64], n: usize, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(n * self.n_out);
        for r in 0..n {
            let start = out.len();
            out.extend_from_slice(&self.b);
            let row = &mut out[start..];
            for (i, &a) in input[r * self.n_in..(r + 1) * self.n_in].iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let w = &self.w[i * self.n_out..(i + 1) * self.n_out];
                for (o, &wk) in row.iter_mut().zip(w) {
                    *o += a * wk;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

/// Per-layer gradients, same shapes as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

impl Network {
    /// Glorot-uniform weights and biases, `U(-l, l)` with `l = sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot(sizes: &[usize], rng: &mut impl Rng) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (n_in, n_out) = (w[0], w[1]);
                let limit = (6.0 / (n_in + n_out) as f64).sqrt();
                Layer {
                    n_in,
                    n_out,
                    w: (0..n_in * n_out).map(|_| rng.random_range(-limit..limit)).collect(),
                    b: (0..n_out).map(|_| rng.random_range(-limit..limit)).collect(),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Layer {
                n_in: w[0],
                n_out: w[1],
                w: vec![0.0; w[0] * w[1]],
                b: vec![0.0; w[1]],
            })
            .collect();
        Self { layers }
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    /// Pre-activations of every layer for a row-major batch of `n` rows.
    fn forward_trace(&self, x: &[f64], n: usize) -> Vec<Vec<f64>> {
        let mut trace: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut act = x.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.affine(&act, n, &mut z);
            if k < last {
                act = z.iter().map(|&v| v.max(0.0)).collect();
            }
            trace.push(z);
        }
        trace
    }

    /// Sigmoid outputs for a row-major batch of `n` rows. No validation.
    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut a = x.to_vec();
        let mut z = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.affine(&a, n, &mut z);
            if k < last {
                for v in z.iter_mut() {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut a, &mut z);
        }
        a.into_iter().map(sigmoid).collect()
    }

    pub fn loss(&self, x: &[f64], y: &[f64]) -> f64 {
        let n = y.len();
        let p = self.forward(x, n);
        p.iter().zip(y).map(|(&p, &y)| bce(p, y)).sum::<f64>() / n as f64
    }

    /// Mean BCE over the batch and its gradient by backpropagation.
    pub fn loss_and_gradients(&self, x: &[f64], y: &[f64]) -> (f64, Gradients) {
        let n = y.len();
        let trace = self.forward_trace(x, n);
        let logits = trace.last().unwrap();
        let mut loss = 0.0;
        // dL/dz at the output
        let mut delta: Vec<f64> = logits
            .iter()
            .zip(y)
            .map(|(&z, &t)| {
                let p = sigmoid(z);
                loss += bce(p, t);
                (p - t) / n as f64
            })
            .collect();
        loss /= n as f64;

        let mut gw = vec![Vec::new(); self.layers.len()];
        let mut gb = vec![Vec::new(); self.layers.len()];
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let (ni, no) = (layer.n_in, layer.n_out);
            let input: std::borrow::Cow<[f64]> = if k == 0 {
                x.into()
            } else {
                trace[k - 1].iter().map(|&v| v.max(0.0)).collect::<Vec<_>>().into()
            };
            let mut dw = vec![0.0; ni * no];
            let mut db = vec![0.0; no];
            for r in 0..n {
                let d = &delta[r * no..(r + 1) * no];
                for (acc, &dv) in db.iter_mut().zip(d) {
                    *acc += dv;
                }
                for (i, &a) in input[r * ni..(r + 1) * ni].iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (acc, &dv) in dw[i * no..(i + 1) * no].iter_mut().zip(d) {
                        *acc += a * dv;
                    }
                }
            }
            if k > 0 {
                let prev = &trace[k - 1];
                let mut next = vec![0.0; n * ni];
                for r in 0..n {
                    let d = &delta[r * no..(r + 1) * no];
                    for i in 0..ni {
                        if prev[r * ni + i] <= 0.0 {
                            continue;
                        }
                        let w = &layer.w[i * no..(i + 1) * no];
                        next[r * ni + i] = w.iter().zip(d).map(|(a, b)| a * b).sum();
                    }
                }
                delta = next;
            }
            gw[k] = dw;
            gb[k] = db;
        }
        (loss, Gradients { w: gw, b: gb })
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Vec<f64>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w, &mut l.b])
    }
}

impl Gradients {
    fn iter(&self) -> impl Iterator<Item = &Vec<f64>> {
        self.w.iter().zip(&self.b).flat_map(|(w, b)| [w, b])
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &Network, learning_rate: f64) -> Self {
        let shapes: Vec<Vec<f64>> = net
            .layers
            .iter()
            .flat_map(|l| [vec![0.0; l.w.len()], vec![0.0; l.b.len()]])
            .collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (((param, g), m), v) in net
            .params_mut()
            .zip(grads.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..param.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                param[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Mean training loss per epoch.
    pub loss: Vec<f64>,
    /// Validation accuracy per epoch (empty without early stopping).
    pub validation_accuracy: Vec<f64>,
    /// 0-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub network: Network,
    pub history: TrainingHistory,
    pub config: MlpConfig,
    /// Scaling the inputs were trained under, if the caller records it.
    pub scaling: Option<ScalingParams>,
}

fn gather(x: &ArrayView2<f64>, y: &[u8], rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::with_capacity(rows.len() * x.ncols());
    for &r in rows {
        xs.extend(x.row(r).iter());
    }
    (xs, rows.iter().map(|&r| f64::from(y[r])).collect())
}

fn batch_accuracy(net: &Network, x: &[f64], y: &[f64]) -> f64 {
    let p = net.forward(x, y.len());
    let hits = p
        .iter()
        .zip(y)
        .filter(|(&p, &t)| f64::from(u8::from(p >= 0.5)) == t)
        .count();
    hits as f64 / y.len() as f64
}

/// Trains on already-standardized rows. Deterministic for a fixed seed.
pub fn fit_mlp(train: &Dataset, cfg: &MlpConfig) -> Result<MlpModel> {
    cfg.validate()?;
    let n = train.n_rows();
    if n < 10 {
        return Err(AuditError::InvalidInput(format!(
            "mlp training needs at least 10 rows, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut sizes = vec![train.n_features()];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut net = Network::glorot(&sizes, &mut rng);
    let mut adam = Adam::new(&net, cfg.learning_rate);

    let x = train.x.view();
    let mut fit_rows: Vec<usize> = (0..n).collect();
    let mut val = None;
    if cfg.early_stopping {
        fit_rows.shuffle(&mut rng);
        let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1);
        let val_rows = fit_rows.split_off(n - n_val);
        val = Some(gather(&x, &train.y, &val_rows));
    }

    let mut history = TrainingHistory::default();
    let mut best = (f64::NEG_INFINITY, net.clone());
    let mut since_improvement = 0;
    for epoch in 0..cfg.max_epochs {
        fit_rows.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in fit_rows.chunks(cfg.batch_size) {
            let (xb, yb) = gather(&x, &train.y, chunk);
            let (loss, grads) = net.loss_and_gradients(&xb, &yb);
            if !loss.is_finite() {
                return Err(AuditError::Diverged { epoch });
            }
            total += loss * chunk.len() as f64;
            adam.step(&mut net, &grads);
        }
        history.loss.push(total / fit_rows.len() as f64);

        if let Some((xv, yv)) = &val {
            let acc = batch_accuracy(&net, xv, yv);
            history.validation_accuracy.push(acc);
            if acc < best.0 + cfg.tolerance {
                since_improvement += 1;
            } else {
                since_improvement = 0;
            }
            if acc > best.0 {
                best = (acc, net.clone());
                history.best_epoch = epoch;
            }
            if since_improvement >= cfg.patience {
                history.stopped_early = true;
                break;
            }
        } else {
            history.best_epoch = epoch;
        }
    }
    if val.is_some() {
        net = best.1;
    }
    Ok(MlpModel {
        network: net,
        history,
        config: cfg.clone(),
        scaling: None,
    })
}

impl MlpModel {
    pub fn n_features(&self) -> usize {
        self.network.n_inputs()
    }

    pub fn predict_proba(&self, rows: ArrayView2<f64>) -> Result<Vec<f64>> {
        if rows.ncols() != self.n_features() {
            return Err(AuditError::Dimension {
                expected: self.n_features(),
                found: rows.ncols(),
            });
        }
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(AuditError::InvalidInput("non-finite input to mlp".into()));
        }
        let flat: Vec<f64> = rows.iter().copied().collect();
        Ok(self.network.forward(&flat, rows.nrows()))
    }

    pub fn predict(&self, rows: ArrayView2<f64>) -> Result<Vec<u8>> {
        Ok(self
            .predict_proba(rows)?
            .into_iter()
            .map(|p| u8::from(p >= 0.5))
            .collect())
    }
}

fn param_mut(net: &mut Network, layer: usize, which: usize, i: usize) -> &mut f64 {
    let l = &mut net.layers[layer];
    if which == 0 { &mut l.w[i] } else { &mut l.b[i] }
}

/// Largest relative error between backprop gradients and central finite
/// differences over every parameter, `|a - n| / max(|a| + |n|, 1e-10)`.
pub fn numerical_gradient_check(net: &Network, x: ArrayView2<f64>, y: &[u8], step: f64) -> f64 {
    let flat: Vec<f64> = x.iter().copied().collect();
    let yf: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let (_, grads) = net.loss_and_gradients(&flat, &yf);
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for k in 0..net.layers.len() {
        for which in 0..2 {
            let len = if which == 0 { net.layers[k].w.len() } else { net.layers[k].b.len() };
            for i in 0..len {
                let orig = *param_mut(&mut probe, k, which, i);
                *param_mut(&mut probe, k, which, i) = orig + step;
                let up = probe.loss(&flat, &yf);
                *param_mut(&mut probe, k, which, i) = orig - step;
                let down = probe.loss(&flat, &yf);
                *param_mut(&mut probe, k, which, i) = orig;
                let numeric = (up - down) / (2.0 * step);
                let analytic = if which == 0 { grads.w[k][i] } else { grads.b[k][i] };
                let rel = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-10);
                worst = worst.max(rel);
            }
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand_chacha::ChaCha8Rng;

    fn blobs(n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::with_capacity(n * 2);
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 2) as u8;
            let c = if label == 1 { 1.5 } else { -1.5 };
            x.push(c + rng.random_range(-1.0..1.0));
            x.push(c + rng.random_range(-1.0..1.0));
            y.push(label);
        }
        Dataset::new(
            Array2::from_shape_vec((n, 2), x).unwrap(),
            vec!["a".into(), "b".into()],
            y,
        )
        .unwrap()
    }

    #[test]
    fn separable_blobs() {
        let d = blobs(200, 3);
        let model = fit_mlp(&d, &MlpConfig::default()).unwrap();
        let pred = model.predict(d.x.view()).unwrap();
        let acc = crate::tree::accuracy(&pred, &d.y);
        assert!(acc >= 0.99, "accuracy {acc}");
        assert!(model.history.loss.len() <= 400);
        assert!(model.history.loss.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn early_stopping_keeps_best_epoch() {
        let d = blobs(120, 9);
        let m = fit_mlp(&d, &MlpConfig { hidden: vec![8], ..Default::default() }).unwrap();
        let h = &m.history;
        let best = h.validation_accuracy.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(h.validation_accuracy[h.best_epoch], best);
    }

    #[test]
    fn zero_network_predicts_half() {
        let model = MlpModel {
            network: Network::zeros(&[3, 4, 1]),
            history: TrainingHistory::default(),
            config: MlpConfig::default(),
            scaling: None,
        };
        let p = model.predict_proba(Array2::from_elem((5, 3), 2.0).view()).unwrap();
        assert_eq!(p, [0.5; 5]);
        assert!(model.predict_proba(Array2::zeros((1, 2)).view()).is_err());
        assert!(model
            .predict_proba(Array2::from_elem((1, 3), f64::NAN).view())
            .is_err());
    }

    #[test]
    fn prediction_is_pure_and_batch_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::glorot(&[3, 16, 8, 1], &mut rng);
        let row = [0.3, -1.2, 0.8];
        let once = net.forward(&row, 1);
        assert_eq!(once, net.forward(&row, 1));
        let twice = net.forward(&[row, row].concat(), 2);
        assert_eq!(twice, [once[0], once[0]]);
    }

    #[test]
    fn gradient_check_small_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Network::glorot(&[2, 4, 1], &mut rng);
        let x = Array2::from_shape_fn((6, 2), |_| rng.random_range(-2.0..2.0));
        let y = [0, 1, 1, 0, 1, 0];
        let err = numerical_gradient_check(&net, x.view(), &y, 1e-5);
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn gradient_check_zero_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Network::glorot(&[2, 4, 1], &mut rng);
        let x = Array2::zeros((4, 2));
        let y = [0, 1, 1, 1];
        let (_, g) = net.loss_and_gradients(&[0.0; 8], &[0.0, 1.0, 1.0, 1.0]);
        assert!(g.w[0].iter().all(|&v| v == 0.0));
        assert!(numerical_gradient_check(&net, x.view(), &y, 1e-5) < 1e-5);
    }

    #[test]
    fn one_adam_step_descends() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = Network::glorot(&[3, 5, 1], &mut rng);
        let x: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
        let (before, g) = net.loss_and_gradients(&x, &y);
        let mut adam = Adam::new(&net, 1e-4);
        adam.step(&mut net, &g);
        assert!(net.loss(&x, &y) < before);
    }

    #[test]
    fn deterministic_history() {
        let d = blobs(80, 4);
        let cfg = MlpConfig { hidden: vec![6, 3], max_epochs: 30, ..Default::default() };
        assert_eq!(fit_mlp(&d, &cfg).unwrap(), fit_mlp(&d, &cfg).unwrap());
    }

    #[test]
    fn rejects_tiny_or_bad_input() {
        let d = blobs(8, 0);
        assert!(fit_mlp(&d, &MlpConfig::default()).is_err());
        let d = blobs(20, 0);
        assert!(fit_mlp(&d, &MlpConfig { learning_rate: 0.0, ..Default::default() }).is_err());
    }
}
