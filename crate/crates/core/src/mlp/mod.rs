//! A from-scratch multi-label MLP: three ReLU hidden layers with inverted
//! dropout, independent sigmoid outputs, binary cross-entropy or a
//! diversity-aware variant of it, and Adam.
//!
//! Parameters are stored in f32; every forward, loss, and gradient
//! computation runs in f64 so analytic gradients can be checked against
//! finite differences tightly.

mod train;

pub use train::{train, Checkpoint, DiversityTarget, EpochRecord, TrainOptions, TrainingHistory};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::{Matrix, PredictionMatrix};

/// Predicted probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP]
/// inside every loss so logs stay finite.
pub const PROB_CLAMP: f64 = 1e-7;

/// Hyperparameters and shape of one network. Serializable so a training
/// run can be described by a single JSON file.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// Exactly three hidden layer widths.
    pub hidden_sizes: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub dropout: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_learning_rate() -> f64 {
    1e-4
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_eps() -> f64 {
    1e-8
}

fn default_batch_size() -> usize {
    64
}

fn default_max_epochs() -> usize {
    50
}

impl NetworkConfig {
    pub fn new(input_dim: usize, hidden_sizes: [usize; 3], num_classes: usize) -> Self {
        NetworkConfig {
            input_dim,
            hidden_sizes: hidden_sizes.to_vec(),
            num_classes,
            dropout: 0.0,
            learning_rate: default_learning_rate(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
            batch_size: default_batch_size(),
            max_epochs: default_max_epochs(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 {
            return Err(Error::param("input_dim and num_classes must be positive"));
        }
        if self.hidden_sizes.len() != 3 || self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::param(format!(
                "expected exactly 3 positive hidden sizes, got {:?}",
                self.hidden_sizes
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param(format!(
                "dropout {} must be in [0, 1)",
                self.dropout
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::param("learning rate must be finite and positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::param("Adam betas must be in [0, 1)"));
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return Err(Error::param("Adam eps must be finite and positive"));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::param("batch_size and max_epochs must be positive"));
        }
        Ok(())
    }

    /// Layer widths input-first: [input, h1, h2, h3, classes].
    pub fn layer_sizes(&self) -> [usize; 5] {
        [
            self.input_dim,
            self.hidden_sizes[0],
            self.hidden_sizes[1],
            self.hidden_sizes[2],
            self.num_classes,
        ]
    }
}

/// Weights and bias of one affine layer, row-major `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

struct Layer {
    in_dim: usize,
    out_dim: usize,
    w: Vec<f32>,
    b: Vec<f32>,
    // Adam first/second moments, kept in f64.
    mw: Vec<f64>,
    vw: Vec<f64>,
    mb: Vec<f64>,
    vb: Vec<f64>,
}

impl Layer {
    fn from_params(in_dim: usize, out_dim: usize, p: LayerParams) -> Result<Self> {
        if p.weights.len() != in_dim * out_dim || p.bias.len() != out_dim {
            return Err(Error::dim(format!(
                "layer expects {out_dim}x{in_dim} weights and {out_dim} biases, got {} and {}",
                p.weights.len(),
                p.bias.len()
            )));
        }
        if p.weights.iter().chain(&p.bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("layer parameters".to_string()));
        }
        Ok(Layer {
            in_dim,
            out_dim,
            mw: vec![0.0; p.weights.len()],
            vw: vec![0.0; p.weights.len()],
            mb: vec![0.0; p.bias.len()],
            vb: vec![0.0; p.bias.len()],
            w: p.weights,
            b: p.bias,
        })
    }
}

/// Whether a forward pass samples dropout masks.
#[derive(Debug, Clone, Copy)]
pub enum ForwardMode {
    /// No dropout; deterministic.
    Eval,
    /// Fresh dropout masks drawn from a generator seeded with `seed`.
    Train { seed: u64 },
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardTrace {
    batch: usize,
    /// B x input_dim.
    input: Vec<f64>,
    /// Per hidden layer: affine outputs before ReLU, B x h.
    pre: Vec<Vec<f64>>,
    /// Per hidden layer: activations after ReLU and dropout, B x h.
    post: Vec<Vec<f64>>,
    /// Per hidden layer: dropout multipliers (0 or 1/(1-p)); None when no
    /// dropout was applied.
    masks: Option<Vec<Vec<f32>>>,
    /// B x num_classes sigmoid outputs, unclamped.
    predictions: Vec<f64>,
}

impl ForwardTrace {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn masks(&self) -> Option<&[Vec<f32>]> {
        self.masks.as_deref()
    }
}

/// Loss to apply to a batch of predictions.
#[derive(Debug, Clone, Copy)]
pub enum LossKind<'a> {
    /// Mean binary cross-entropy over all batch entries.
    Bce,
    /// `(1 - lambda) * BCE(pred, labels) - lambda * H(pred, ensemble)`
    /// where H is cross-entropy against the ensemble's confidences:
    /// low values reward predictions that disagree with the ensemble.
    /// `ensemble` is row-aligned with the batch, B x num_classes.
    DiversityAware { ensemble: &'a [f32], lambda: f64 },
}

/// Per-layer gradients in f64, same shapes as the layer parameters.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean binary cross-entropy over all entries; `labels` holds 0.0/1.0.
pub fn bce_loss(predictions: &[f64], labels: &[f32]) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::dim(format!(
            "loss over {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut sum = 0.0f64;
    for (&p, &y) in predictions.iter().zip(labels) {
        let p = clamp_prob(p);
        let y = y as f64;
        sum -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(sum / predictions.len() as f64)
}

/// The diversity-aware objective; see [`LossKind::DiversityAware`]. Can be
/// negative once the repulsion term dominates.
pub fn diversity_aware_loss(
    predictions: &[f64],
    labels: &[f32],
    ensemble: &[f32],
    lambda: f64,
) -> Result<f64> {
    if predictions.len() != labels.len()
        || predictions.len() != ensemble.len()
        || predictions.is_empty()
    {
        return Err(Error::dim(format!(
            "loss over {} predictions, {} labels, {} ensemble entries",
            predictions.len(),
            labels.len(),
            ensemble.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::param(format!("lambda {lambda} must be in [0, 1]")));
    }
    let mut sum = 0.0f64;
    for ((&p, &y), &q) in predictions.iter().zip(labels).zip(ensemble) {
        let p = clamp_prob(p);
        let y = y as f64;
        let q = q as f64;
        // (1 - lambda) * bce term minus lambda * cross-entropy against q,
        // folded into one weighted log pair.
        let a = (1.0 - lambda) * y - lambda * q;
        let b = (1.0 - lambda) * (1.0 - y) - lambda * (1.0 - q);
        sum -= a * p.ln() + b * (1.0 - p).ln();
    }
    Ok(sum / predictions.len() as f64)
}

/// Applies `loss` to a batch's predictions.
pub fn batch_loss(predictions: &[f64], labels: &[f32], loss: &LossKind) -> Result<f64> {
    match loss {
        LossKind::Bce => bce_loss(predictions, labels),
        LossKind::DiversityAware { ensemble, lambda } => {
            diversity_aware_loss(predictions, labels, ensemble, *lambda)
        }
    }
}

pub struct Network {
    config: NetworkConfig,
    layers: Vec<Layer>,
    step: u64,
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("config", &self.config)
            .field("num_parameters", &self.num_parameters())
            .field("step", &self.step)
            .finish()
    }
}

/// Glorot-uniform initialization: each layer's weights are drawn from
/// `U(-sqrt(6/(fan_in+fan_out)), +sqrt(...))` in declaration order, biases
/// start at zero. Deterministic per seed.
pub fn init_network(config: &NetworkConfig) -> Result<Network> {
    config.validate()?;
    let sizes = config.layer_sizes();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut layers = Vec::with_capacity(4);
    for l in 0..4 {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<f32> = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound) as f32)
            .collect();
        layers.push(Layer::from_params(
            fan_in,
            fan_out,
            LayerParams {
                weights: w,
                bias: vec![0.0; fan_out],
            },
        )?);
    }
    Ok(Network {
        config: config.clone(),
        layers,
        step: 0,
    })
}

impl Network {
    /// Rebuilds a network from saved parameters with fresh optimizer state.
    pub fn from_parts(config: NetworkConfig, params: Vec<LayerParams>) -> Result<Network> {
        config.validate()?;
        if params.len() != 4 {
            return Err(Error::dim(format!(
                "expected 4 parameter layers, got {}",
                params.len()
            )));
        }
        let sizes = config.layer_sizes();
        let mut layers = Vec::with_capacity(4);
        for (l, p) in params.into_iter().enumerate() {
            layers.push(Layer::from_params(sizes[l], sizes[l + 1], p)?);
        }
        Ok(Network {
            config,
            layers,
            step: 0,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    /// Copies the current parameters out, e.g. for checkpointing.
    pub fn snapshot(&self) -> Vec<LayerParams> {
        self.layers
            .iter()
            .map(|l| LayerParams {
                weights: l.w.clone(),
                bias: l.b.clone(),
            })
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn affine(layer: &Layer, input: &[f64], batch: usize, out: &mut Vec<f64>) {
        out.clear();
        out.reserve(batch * layer.out_dim);
        for b in 0..batch {
            let x = &input[b * layer.in_dim..(b + 1) * layer.in_dim];
            for o in 0..layer.out_dim {
                let row = &layer.w[o * layer.in_dim..(o + 1) * layer.in_dim];
                let mut acc = layer.b[o] as f64;
                for (wi, &xi) in row.iter().zip(x) {
                    acc += *wi as f64 * xi;
                }
                out.push(acc);
            }
        }
    }

    /// Forward pass over a batch, recording everything backprop needs.
    /// Dropout (train mode, p > 0) zeroes each hidden activation with
    /// probability p and scales survivors by 1/(1-p); masks are drawn
    /// per layer, then per sample, then per unit.
    pub fn forward_trace(&self, batch: &Matrix, mode: ForwardMode) -> Result<ForwardTrace> {
        if batch.cols() != self.config.input_dim {
            return Err(Error::dim(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.config.input_dim
            )));
        }
        let b = batch.rows();
        let p_drop = self.config.dropout;
        let mut rng = match mode {
            ForwardMode::Train { seed } if p_drop > 0.0 => Some(ChaCha8Rng::seed_from_u64(seed)),
            _ => None,
        };

        let input: Vec<f64> = batch.values().iter().map(|&x| x as f64).collect();
        let mut pre = Vec::with_capacity(3);
        let mut post = Vec::with_capacity(3);
        let mut masks: Option<Vec<Vec<f32>>> = rng.as_ref().map(|_| Vec::with_capacity(3));

        let mut cur = input.clone();
        for l in 0..3 {
            let mut z = Vec::new();
            Self::affine(&self.layers[l], &cur, b, &mut z);
            let mut act: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
            if let Some(rng) = rng.as_mut() {
                let scale = 1.0 / (1.0 - p_drop);
                let mask: Vec<f32> = (0..act.len())
                    .map(|_| {
                        if rng.random::<f64>() < p_drop {
                            0.0
                        } else {
                            scale as f32
                        }
                    })
                    .collect();
                for (a, &m) in act.iter_mut().zip(&mask) {
                    *a *= m as f64;
                }
                masks.as_mut().unwrap().push(mask);
            }
            pre.push(z);
            cur = act.clone();
            post.push(act);
        }

        let mut z_out = Vec::new();
        Self::affine(&self.layers[3], &cur, b, &mut z_out);
        let predictions: Vec<f64> = z_out.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect();

        Ok(ForwardTrace {
            batch: b,
            input,
            pre,
            post,
            masks,
            predictions,
        })
    }

    /// Convenience forward returning only the (unclamped) probabilities.
    pub fn forward(&self, batch: &Matrix, mode: ForwardMode) -> Result<Vec<f64>> {
        Ok(self.forward_trace(batch, mode)?.predictions)
    }

    /// Analytic gradients of the batch-mean loss with respect to every
    /// parameter. Entries whose prediction sits at the probability clamp
    /// contribute zero, matching the clamped loss exactly.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        labels: &[f32],
        loss: &LossKind,
    ) -> Result<Gradients> {
        let b = trace.batch;
        let c = self.config.num_classes;
        if labels.len() != b * c {
            return Err(Error::dim(format!(
                "got {} labels for a {b}x{c} batch",
                labels.len()
            )));
        }
        let (ensemble, lambda) = match loss {
            LossKind::Bce => (None, 0.0),
            LossKind::DiversityAware { ensemble, lambda } => {
                if ensemble.len() != b * c {
                    return Err(Error::dim(format!(
                        "got {} ensemble targets for a {b}x{c} batch",
                        ensemble.len()
                    )));
                }
                if !(0.0..=1.0).contains(lambda) {
                    return Err(Error::param(format!("lambda {lambda} must be in [0, 1]")));
                }
                (Some(*ensemble), *lambda)
            }
        };

        let n = (b * c) as f64;
        let mut delta: Vec<f64> = Vec::with_capacity(b * c);
        for i in 0..b * c {
            let p = trace.predictions[i];
            let y = labels[i] as f64;
            let q = ensemble.map(|e| e[i] as f64).unwrap_or(0.0);
            let a_coef = (1.0 - lambda) * y - lambda * q;
            let b_coef = (1.0 - lambda) * (1.0 - y) - lambda * (1.0 - q);
            // d(clamped loss)/dz; zero where the clamp is active.
            if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                delta.push((b_coef * p - a_coef * (1.0 - p)) / n);
            } else {
                delta.push(0.0);
            }
        }

        let mut grads: Vec<LayerGrad> = self
            .layers
            .iter()
            .map(|l| LayerGrad {
                dw: vec![0.0; l.w.len()],
                db: vec![0.0; l.b.len()],
            })
            .collect();

        let mut d_out = delta;
        for l in (0..4).rev() {
            let layer = &self.layers[l];
            let input: &[f64] = if l == 0 {
                &trace.input
            } else {
                &trace.post[l - 1]
            };
            let g = &mut grads[l];
            for bi in 0..b {
                let d_row = &d_out[bi * layer.out_dim..(bi + 1) * layer.out_dim];
                let x_row = &input[bi * layer.in_dim..(bi + 1) * layer.in_dim];
                for o in 0..layer.out_dim {
                    let d = d_row[o];
                    if d == 0.0 {
                        continue;
                    }
                    g.db[o] += d;
                    let w_row = &mut g.dw[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (wi, &xi) in w_row.iter_mut().zip(x_row) {
                        *wi += d * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Propagate to the previous layer's activations, then back
            // through dropout and ReLU.
            let prev_dim = layer.in_dim;
            let mut d_prev = vec![0.0f64; b * prev_dim];
            for bi in 0..b {
                let d_row = &d_out[bi * layer.out_dim..(bi + 1) * layer.out_dim];
                let dp = &mut d_prev[bi * prev_dim..(bi + 1) * prev_dim];
                for o in 0..layer.out_dim {
                    let d = d_row[o];
                    if d == 0.0 {
                        continue;
                    }
                    let w_row = &layer.w[o * prev_dim..(o + 1) * prev_dim];
                    for (dpi, &wi) in dp.iter_mut().zip(w_row) {
                        *dpi += d * wi as f64;
                    }
                }
            }
            let h = l - 1;
            if let Some(masks) = &trace.masks {
                for (dv, &m) in d_prev.iter_mut().zip(&masks[h]) {
                    *dv *= m as f64;
                }
            }
            for (dv, &z) in d_prev.iter_mut().zip(&trace.pre[h]) {
                if z <= 0.0 {
                    *dv = 0.0;
                }
            }
            d_out = d_prev;
        }

        Ok(Gradients { layers: grads })
    }

    /// One Adam update. The step counter increments before the bias
    /// corrections. Non-finite gradients or parameters abort with a
    /// divergence error rather than being written back.
    pub fn adam_step(&mut self, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != self.layers.len() {
            return Err(Error::dim("gradient layer count mismatch".to_string()));
        }
        for (layer, g) in self.layers.iter().zip(&grads.layers) {
            if g.dw.len() != layer.w.len() || g.db.len() != layer.b.len() {
                return Err(Error::dim("gradient shape mismatch".to_string()));
            }
            if g.dw.iter().chain(&g.db).any(|v| !v.is_finite()) {
                return Err(Error::DivergedGradient);
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (lr, b1, b2, eps) = (c.learning_rate, c.beta1, c.beta2, c.adam_eps);

        let update = |theta: &mut [f32], m: &mut [f64], v: &mut [f64], g: &[f64]| {
            for i in 0..theta.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let step = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                let next = (theta[i] as f64 - step) as f32;
                if !next.is_finite() {
                    return Err(Error::DivergedGradient);
                }
                theta[i] = next;
            }
            Ok(())
        };
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            update(&mut layer.w, &mut layer.mw, &mut layer.vw, &g.dw)?;
            update(&mut layer.b, &mut layer.mb, &mut layer.vb, &g.db)?;
        }
        Ok(())
    }

    /// Deterministic inference: eval-mode forward over `features` with
    /// outputs clamped into [PROB_CLAMP, 1 - PROB_CLAMP]. The result is
    /// identical for any batching because each sample is independent.
    pub fn predict(&self, features: &Matrix) -> Result<PredictionMatrix> {
        if features.cols() != self.config.input_dim {
            return Err(Error::dim(format!(
                "features have {} columns, network expects {}",
                features.cols(),
                self.config.input_dim
            )));
        }
        let n = features.rows();
        let c = self.config.num_classes;
        let mut values = Vec::with_capacity(n * c);
        let step = self.config.batch_size.max(1);
        let mut start = 0;
        while start < n {
            let end = (start + step).min(n);
            let ids: Vec<usize> = (start..end).collect();
            let chunk = features.subset_rows(&ids)?;
            let trace = self.forward_trace(&chunk, ForwardMode::Eval)?;
            values.extend(trace.predictions.iter().map(|&p| clamp_prob(p) as f32));
            start = end;
        }
        PredictionMatrix::new(n, c, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> NetworkConfig {
        NetworkConfig::new(1, [1, 1, 1], 1)
    }

    /// All-ones weights, zero biases.
    fn ones_net(config: &NetworkConfig) -> Network {
        let sizes = config.layer_sizes();
        let params = (0..4)
            .map(|l| LayerParams {
                weights: vec![1.0; sizes[l] * sizes[l + 1]],
                bias: vec![0.0; sizes[l + 1]],
            })
            .collect();
        Network::from_parts(config.clone(), params).unwrap()
    }

    fn mat(rows: usize, cols: usize, v: &[f32]) -> Matrix {
        Matrix::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        let mut c = tiny_config();
        c.hidden_sizes = vec![1, 1];
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.dropout = 1.0;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.learning_rate = 0.0;
        assert!(c.validate().is_err());
        assert!(tiny_config().validate().is_ok());
    }

    #[test]
    fn forward_chain_of_identity_layers() {
        let net = ones_net(&tiny_config());
        // Positive input passes through every ReLU: p = sigmoid(1).
        let p = net.forward(&mat(1, 1, &[1.0]), ForwardMode::Eval).unwrap();
        assert!((p[0] - 0.731_058_578_630_004_9).abs() < 1e-12);
        // Negative input dies at the first ReLU: p = sigmoid(0).
        let p = net.forward(&mat(1, 1, &[-1.0]), ForwardMode::Eval).unwrap();
        assert_eq!(p[0], 0.5);
    }

    #[test]
    fn init_respects_glorot_bound_and_zero_bias() {
        let config = NetworkConfig::new(3, [3, 3, 3], 3);
        let net = init_network(&config).unwrap();
        // fan_in + fan_out = 6 for every layer, so the bound is exactly 1.
        for lp in net.snapshot() {
            assert!(lp.weights.iter().all(|w| w.abs() <= 1.0));
            assert!(lp.weights.iter().any(|w| w.abs() > 0.2));
            assert!(lp.bias.iter().all(|&b| b == 0.0));
        }
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let mut config = NetworkConfig::new(4, [5, 6, 7], 3);
        config.seed = 9;
        let a = init_network(&config).unwrap().snapshot();
        let b = init_network(&config).unwrap().snapshot();
        assert_eq!(a, b);
        config.seed = 10;
        let c = init_network(&config).unwrap().snapshot();
        assert_ne!(a, c);
    }

    #[test]
    fn bce_matches_hand_values() {
        // p = 0.5 scores ln 2 for either label value.
        let l = bce_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        // -ln(0.9)
        let l = bce_loss(&[0.9], &[1.0]).unwrap();
        assert!((l - 0.105_360_515_657_826_28).abs() < 1e-15);
    }

    #[test]
    fn bce_clamp_keeps_certain_wrong_finite() {
        let l = bce_loss(&[0.0], &[1.0]).unwrap();
        assert!((l - (-PROB_CLAMP.ln())).abs() < 1e-12);
        assert!(l.is_finite());
    }

    #[test]
    fn diversity_loss_at_half_is_scaled_ln2() {
        // At p = 0.5 both terms equal ln 2 regardless of labels/targets,
        // so the total is (1 - 2*lambda) * ln 2.
        let l = diversity_aware_loss(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0], &[0.9, 0.1, 0.5, 0.2], 0.3)
            .unwrap();
        assert!((l - 0.4 * std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn diversity_loss_rewards_disagreement_with_ensemble() {
        // Same prediction and label; the loss must be lower when the
        // ensemble disagrees with the prediction (q = 0.75 vs p = 0.2).
        // Ensemble values are f32-exact so the frozen constants hold.
        let against = diversity_aware_loss(&[0.2], &[1.0], &[0.75], 0.3).unwrap();
        let aligned = diversity_aware_loss(&[0.2], &[1.0], &[0.25], 0.3).unwrap();
        assert!((against - 0.747_747_242_057_631_9).abs() < 1e-12);
        assert!((aligned - 0.955_691_396_225_615_5).abs() < 1e-12);
        assert!(against < aligned);
    }

    #[test]
    fn diversity_loss_at_lambda_zero_is_bce() {
        let preds = [0.3, 0.8, 0.1];
        let labels = [1.0, 0.0, 0.0];
        let a = diversity_aware_loss(&preds, &labels, &[0.5, 0.5, 0.5], 0.0).unwrap();
        let b = bce_loss(&preds, &labels).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn output_delta_matches_p_minus_y() {
        let config = tiny_config();
        let net = ones_net(&config);
        let trace = net
            .forward_trace(&mat(1, 1, &[0.7]), ForwardMode::Eval)
            .unwrap();
        let p = trace.predictions()[0];
        let g = net.backward(&trace, &[1.0], &LossKind::Bce).unwrap();
        // B = C = 1, so d loss / d output bias is exactly p - y.
        assert!((g.layers[3].db[0] - (p - 1.0)).abs() < 1e-15);

        // f32-exact ensemble value so the coefficients below are exact.
        let g = net
            .backward(
                &trace,
                &[1.0],
                &LossKind::DiversityAware {
                    ensemble: &[0.75],
                    lambda: 0.3,
                },
            )
            .unwrap();
        let a = 0.7 * 1.0 - 0.3 * 0.75;
        let b = 0.7 * 0.0 - 0.3 * 0.25;
        assert!((g.layers[3].db[0] - (b * p - a * (1.0 - p))).abs() < 1e-15);
    }

    fn flatten(params: &[LayerParams]) -> Vec<f32> {
        let mut out = Vec::new();
        for p in params {
            out.extend_from_slice(&p.weights);
            out.extend_from_slice(&p.bias);
        }
        out
    }

    fn unflatten(config: &NetworkConfig, flat: &[f32]) -> Vec<LayerParams> {
        let sizes = config.layer_sizes();
        let mut out = Vec::new();
        let mut at = 0;
        for l in 0..4 {
            let nw = sizes[l] * sizes[l + 1];
            let weights = flat[at..at + nw].to_vec();
            at += nw;
            let bias = flat[at..at + sizes[l + 1]].to_vec();
            at += sizes[l + 1];
            out.push(LayerParams { weights, bias });
        }
        out
    }

    /// Central finite differences over every parameter of a small net,
    /// for both losses. The analytic gradient must agree to 1e-4
    /// relative error wherever the magnitude is meaningful.
    #[test]
    fn backward_matches_finite_differences() {
        let mut config = NetworkConfig::new(2, [3, 2, 3], 2);
        config.seed = 31;
        let net = init_network(&config).unwrap();
        let base = flatten(&net.snapshot());
        // Inputs chosen so every sample keeps at least one live ReLU and
        // no pre-activation sits within the perturbation of a kink.
        let x = mat(3, 2, &[0.4, 0.7, 1.2, 0.3, 0.9, -0.6]);
        let labels = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
        let ensemble = [0.8, 0.2, 0.6, 0.4, 0.3, 0.9];
        let losses = [
            LossKind::Bce,
            LossKind::DiversityAware {
                ensemble: &ensemble,
                lambda: 0.3,
            },
        ];

        for loss in &losses {
            let trace = net.forward_trace(&x, ForwardMode::Eval).unwrap();
            let analytic = net.backward(&trace, &labels, loss).unwrap();
            let flat_grad: Vec<f64> = analytic
                .layers
                .iter()
                .flat_map(|g| g.dw.iter().chain(&g.db).copied())
                .collect();

            let eval = |flat: &[f32]| -> f64 {
                let n = Network::from_parts(config.clone(), unflatten(&config, flat)).unwrap();
                let t = n.forward_trace(&x, ForwardMode::Eval).unwrap();
                batch_loss(t.predictions(), &labels, loss).unwrap()
            };
            // Activation signature: central differences are only valid
            // when no ReLU flips between the two evaluation points.
            let pattern = |flat: &[f32]| -> Vec<bool> {
                let n = Network::from_parts(config.clone(), unflatten(&config, flat)).unwrap();
                let t = n.forward_trace(&x, ForwardMode::Eval).unwrap();
                t.pre
                    .iter()
                    .flat_map(|layer| layer.iter().map(|&z| z > 0.0))
                    .collect()
            };

            let mut skipped = 0usize;
            for i in 0..base.len() {
                let mut h = 1e-3f32;
                let mut checked = false;
                while h >= 1e-6 {
                    let mut up = base.clone();
                    up[i] += h;
                    let mut dn = base.clone();
                    dn[i] -= h;
                    if pattern(&up) != pattern(&dn) {
                        h /= 4.0;
                        continue;
                    }
                    let width = up[i] as f64 - dn[i] as f64;
                    let fd = (eval(&up) - eval(&dn)) / width;
                    let denom = fd.abs().max(flat_grad[i].abs()).max(1e-8);
                    assert!(
                        (fd - flat_grad[i]).abs() / denom < 1e-4,
                        "param {i}: fd {fd} vs analytic {}",
                        flat_grad[i]
                    );
                    checked = true;
                    break;
                }
                if !checked {
                    skipped += 1;
                }
            }
            assert!(
                skipped * 10 <= base.len(),
                "{skipped} of {} parameters sat on ReLU kinks",
                base.len()
            );
        }
    }

    #[test]
    fn dropout_masks_scale_survivors_and_zero_gradients() {
        let mut config = NetworkConfig::new(2, [8, 8, 8], 2);
        config.dropout = 0.5;
        config.seed = 3;
        let net = init_network(&config).unwrap();
        let x = mat(1, 2, &[0.9, -0.4]);
        let trace = net
            .forward_trace(&x, ForwardMode::Train { seed: 77 })
            .unwrap();
        let masks = trace.masks().expect("train mode with dropout has masks");
        assert_eq!(masks.len(), 3);
        let mut saw_zero = None;
        for (l, mask) in masks.iter().enumerate() {
            assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
            if saw_zero.is_none() {
                if let Some(j) = mask.iter().position(|&m| m == 0.0) {
                    saw_zero = Some((l, j));
                }
            }
        }
        let (l, j) = saw_zero.expect("seed 77 produces at least one dropped unit");

        // A dropped unit's incoming weights and bias get zero gradient,
        // as does the column of outgoing weights reading from it.
        let g = net.backward(&trace, &[1.0, 0.0], &LossKind::Bce).unwrap();
        let in_dim = if l == 0 { 2 } else { 8 };
        assert!(g.layers[l].dw[j * in_dim..(j + 1) * in_dim]
            .iter()
            .all(|&v| v == 0.0));
        assert_eq!(g.layers[l].db[j], 0.0);
        let next = &g.layers[l + 1];
        let next_out = next.db.len();
        for o in 0..next_out {
            assert_eq!(next.dw[o * 8 + j], 0.0);
        }
    }

    #[test]
    fn dropout_masks_are_deterministic_per_seed() {
        let mut config = NetworkConfig::new(2, [4, 4, 4], 1);
        config.dropout = 0.3;
        let net = init_network(&config).unwrap();
        let x = mat(2, 2, &[0.1, 0.2, 0.3, 0.4]);
        let a = net
            .forward_trace(&x, ForwardMode::Train { seed: 5 })
            .unwrap();
        let b = net
            .forward_trace(&x, ForwardMode::Train { seed: 5 })
            .unwrap();
        assert_eq!(a.masks().unwrap(), b.masks().unwrap());
        assert_eq!(a.predictions(), b.predictions());
        let c = net
            .forward_trace(&x, ForwardMode::Train { seed: 6 })
            .unwrap();
        assert_ne!(a.masks().unwrap(), c.masks().unwrap());
    }

    #[test]
    fn eval_mode_ignores_dropout() {
        let mut config = NetworkConfig::new(2, [4, 4, 4], 2);
        config.dropout = 0.9;
        let net = init_network(&config).unwrap();
        let x = mat(1, 2, &[1.0, -1.0]);
        let a = net.forward(&x, ForwardMode::Eval).unwrap();
        let b = net.forward(&x, ForwardMode::Eval).unwrap();
        assert_eq!(a, b);
        // With dropout 0, train mode is also exactly eval.
        let mut plain = config.clone();
        plain.dropout = 0.0;
        let net = init_network(&plain).unwrap();
        let a = net.forward(&x, ForwardMode::Eval).unwrap();
        let b = net.forward(&x, ForwardMode::Train { seed: 1 }).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut config = NetworkConfig::new(1, [1, 1, 1], 1);
        config.learning_rate = 0.01;
        let mut net = ones_net(&config);
        let grads = Gradients {
            layers: (0..4)
                .map(|_| LayerGrad {
                    dw: vec![1.0],
                    db: vec![-2.0],
                })
                .collect(),
        };
        net.adam_step(&grads).unwrap();
        for lp in net.snapshot() {
            // After one step m-hat = g and v-hat = g^2, so the move is
            // lr * sign(g) up to the eps in the denominator.
            assert!((lp.weights[0] - (1.0 - 0.01)).abs() < 1e-6);
            assert!((lp.bias[0] - 0.01).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut net = ones_net(&tiny_config());
        let grads = Gradients {
            layers: (0..4)
                .map(|i| LayerGrad {
                    dw: vec![if i == 2 { f64::NAN } else { 0.0 }],
                    db: vec![0.0],
                })
                .collect(),
        };
        assert!(matches!(
            net.adam_step(&grads),
            Err(Error::DivergedGradient)
        ));
    }

    #[test]
    fn predict_is_batch_size_invariant_and_clamped() {
        let mut config = NetworkConfig::new(3, [6, 5, 4], 4);
        config.seed = 12;
        let net = init_network(&config).unwrap();
        let rows: Vec<f32> = (0..30).map(|i| (i as f32 * 0.37).sin()).collect();
        let features = mat(10, 3, &rows);
        let a = net.predict(&features).unwrap();
        let mut small = config.clone();
        small.batch_size = 1;
        let net_small = Network::from_parts(small, net.snapshot()).unwrap();
        let b = net_small.predict(&features).unwrap();
        assert_eq!(a.values(), b.values());
        let lo = PROB_CLAMP as f32;
        assert!(a.values().iter().all(|&p| p >= lo && p <= 1.0 - lo));
    }

    #[test]
    fn snapshot_roundtrip_preserves_predictions() {
        let mut config = NetworkConfig::new(4, [5, 5, 5], 3);
        config.seed = 8;
        let net = init_network(&config).unwrap();
        let rebuilt = Network::from_parts(config, net.snapshot()).unwrap();
        let x = mat(2, 4, &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8]);
        assert_eq!(
            net.forward(&x, ForwardMode::Eval).unwrap(),
            rebuilt.forward(&x, ForwardMode::Eval).unwrap()
        );
    }
}
