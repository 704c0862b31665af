//! Multilayer perceptron with two outputs (the per-slot minimum and maximum
//! load differences), trained with Adam on MSE plus optional L1 penalties,
//! input-layer dropout and early stopping on a chronological validation
//! split. Everything is seeded and bit-reproducible.

use crate::features::{FeatureMatrix, Standardizer, N_COLS};
use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation in layer {0}")]
    NonFiniteActivation(usize),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("too few rows: {0}")]
    TooFewRows(usize),
    #[error("training diverged: validation loss became non-finite at epoch {0}")]
    DivergedLoss(usize),
    #[error("hyperparameters invalid: {0}")]
    BadHyperparams(String),
    #[error(transparent)]
    Feature(#[from] crate::features::FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
    Sigmoid,
    Softmax,
    Softplus,
    Tanh,
}

pub const ACTIVATIONS: [Activation; 6] = [
    Activation::Elu,
    Activation::Relu,
    Activation::Sigmoid,
    Activation::Softmax,
    Activation::Softplus,
    Activation::Tanh,
];

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::Softplus => "softplus",
            Activation::Tanh => "tanh",
        }
    }

    /// Applies the activation to a pre-activation batch (rows = samples).
    /// Softmax normalizes each row across the layer's units.
    fn apply(&self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Elu => z.mapv(|v| if v > 0.0 { v } else { v.exp() - 1.0 }),
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::Softplus => z.mapv(|v| {
                // numerically stable ln(1+e^v)
                if v > 30.0 {
                    v
                } else {
                    v.exp().ln_1p()
                }
            }),
            Activation::Tanh => z.mapv(f64::tanh),
            Activation::Softmax => {
                let mut out = z.clone();
                for mut row in out.rows_mut() {
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum: f64 = row.sum();
                    row.mapv_inplace(|v| v / sum);
                }
                out
            }
        }
    }

    /// Converts the gradient w.r.t. the post-activation `h` into the gradient
    /// w.r.t. the pre-activation, given both batches.
    fn backprop(&self, grad_h: &Array2<f64>, z: &Array2<f64>, h: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Elu => {
                let mut g = grad_h.clone();
                g.zip_mut_with(z, |g, &z| {
                    if z <= 0.0 {
                        *g *= z.exp();
                    }
                });
                g
            }
            Activation::Relu => {
                let mut g = grad_h.clone();
                g.zip_mut_with(z, |g, &z| {
                    if z <= 0.0 {
                        *g = 0.0;
                    }
                });
                g
            }
            Activation::Sigmoid => {
                let mut g = grad_h.clone();
                g.zip_mut_with(h, |g, &h| *g *= h * (1.0 - h));
                g
            }
            Activation::Softplus => {
                let mut g = grad_h.clone();
                g.zip_mut_with(z, |g, &z| *g *= 1.0 / (1.0 + (-z).exp()));
                g
            }
            Activation::Tanh => {
                let mut g = grad_h.clone();
                g.zip_mut_with(h, |g, &h| *g *= 1.0 - h * h);
                g
            }
            Activation::Softmax => {
                // dL/dz_j = s_j (g_j - sum_k g_k s_k) per row
                let mut out = Array2::zeros(grad_h.raw_dim());
                for (r, (g_row, s_row)) in grad_h.rows().into_iter().zip(h.rows()).enumerate() {
                    let dot: f64 = g_row.iter().zip(s_row.iter()).map(|(g, s)| g * s).sum();
                    for (j, (g, s)) in g_row.iter().zip(s_row.iter()).enumerate() {
                        out[[r, j]] = s * (g - dot);
                    }
                }
                out
            }
        }
    }
}

/// Per-hidden-layer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub activation: Activation,
    pub neurons: usize,
    pub l1_activity: Option<f64>,
    pub l1_weight: Option<f64>,
}

/// A sampled hyperparameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHyperparams {
    /// Input feature mask over the 21 canonical columns.
    pub features: Vec<bool>,
    /// Dropout rate after the input layer, when used.
    pub dropout: Option<f64>,
    /// Two or three hidden layers.
    pub layers: Vec<LayerParams>,
    pub learning_rate: f64,
}

impl MlpHyperparams {
    pub fn validate(&self) -> Result<(), MlpError> {
        if self.features.len() != N_COLS {
            return Err(MlpError::BadHyperparams(format!(
                "feature mask has {} entries",
                self.features.len()
            )));
        }
        if !self.features.iter().any(|&b| b) {
            return Err(MlpError::BadHyperparams("no features selected".into()));
        }
        if !(2..=3).contains(&self.layers.len()) {
            return Err(MlpError::BadHyperparams(format!("{} hidden layers", self.layers.len())));
        }
        for l in &self.layers {
            if !(4..=128).contains(&l.neurons) {
                return Err(MlpError::BadHyperparams(format!("{} neurons", l.neurons)));
            }
            for r in [l.l1_activity, l.l1_weight].into_iter().flatten() {
                if !(1e-5..=10.0).contains(&r) {
                    return Err(MlpError::BadHyperparams(format!("l1 rate {r}")));
                }
            }
        }
        if let Some(p) = self.dropout {
            if !(0.0..1.0).contains(&p) || p == 0.0 {
                return Err(MlpError::BadHyperparams(format!("dropout rate {p}")));
            }
        }
        if !(1e-5..=1e-1).contains(&self.learning_rate) {
            return Err(MlpError::BadHyperparams(format!("learning rate {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn selected_columns(&self) -> Vec<usize> {
        (0..self.features.len()).filter(|&i| self.features[i]).collect()
    }

    /// Number of tunable scalars this set realizes (at most 43).
    pub fn tunable_count(&self) -> usize {
        let mut n = self.features.len() + 1 + 1; // mask + depth + learning rate
        n += 1 + usize::from(self.dropout.is_some());
        for l in &self.layers {
            n += 2; // activation + neurons
            n += 1 + usize::from(l.l1_activity.is_some());
            n += 1 + usize::from(l.l1_weight.is_some());
        }
        n
    }
}

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InitScheme {
    /// Uniform in +-sqrt(6/(fan_in+fan_out)).
    #[default]
    ScaledUniform,
    Zeros,
}

/// Fixed training-loop settings (the tuner does not search these).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub init: InitScheme,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1500,
            patience: 50,
            batch_size: 7 * 48,
            validation_fraction: 0.25,
            init: InitScheme::ScaledUniform,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Weight stacks of the network: hidden layers then the 2-unit linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activations: Vec<Activation>,
}

pub const N_OUTPUTS: usize = 2;

impl Network {
    pub fn init(params: &MlpHyperparams, n_inputs: usize, init: InitScheme, rng: &mut ChaCha8Rng) -> Self {
        let mut dims = vec![n_inputs];
        dims.extend(params.layers.iter().map(|l| l.neurons));
        dims.push(N_OUTPUTS);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let w_mat = match init {
                InitScheme::Zeros => Array2::zeros((fan_in, fan_out)),
                InitScheme::ScaledUniform => {
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    Array2::from_shape_fn((fan_in, fan_out), |_| {
                        (rng.gen::<f64>() * 2.0 - 1.0) * bound
                    })
                }
            };
            weights.push(w_mat);
            biases.push(Array1::zeros(fan_out));
        }
        let activations = params.layers.iter().map(|l| l.activation).collect();
        Self { weights, biases, activations }
    }

    pub fn n_hidden(&self) -> usize {
        self.activations.len()
    }

    /// Inference pass: `H_0 = X`, `H_i = a_i(H_{i-1} W_i + b_i)`, linear
    /// 2-unit output. Dropout is inactive here.
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>, MlpError> {
        if x.ncols() != self.weights[0].nrows() {
            return Err(MlpError::ShapeMismatch(format!(
                "input has {} columns, layer expects {}",
                x.ncols(),
                self.weights[0].nrows()
            )));
        }
        let mut h = x.clone();
        for (i, act) in self.activations.iter().enumerate() {
            let z = h.dot(&self.weights[i]) + &self.biases[i];
            h = act.apply(&z);
            if h.iter().any(|v| !v.is_finite()) {
                return Err(MlpError::NonFiniteActivation(i));
            }
        }
        let last = self.weights.len() - 1;
        Ok(h.dot(&self.weights[last]) + &self.biases[last])
    }

    /// Loss and full gradient of MSE plus the L1 penalties over one batch.
    /// The input must already carry any dropout scaling.
    pub fn loss_and_grad(
        &self,
        x: &Array2<f64>,
        y: &Array2<f64>,
        params: &MlpHyperparams,
    ) -> Result<(f64, Gradients), MlpError> {
        let b = x.nrows() as f64;
        let n_hidden = self.n_hidden();
        let mut pre = Vec::with_capacity(n_hidden);
        let mut post = Vec::with_capacity(n_hidden);
        let mut h = x.clone();
        for (i, act) in self.activations.iter().enumerate() {
            let z = h.dot(&self.weights[i]) + &self.biases[i];
            let a = act.apply(&z);
            pre.push(z);
            post.push(a.clone());
            h = a;
        }
        let last = self.weights.len() - 1;
        let out = h.dot(&self.weights[last]) + &self.biases[last];

        // MSE averaged over batch and both outputs
        let resid = &out - y;
        let mut loss = resid.iter().map(|v| v * v).sum::<f64>() / (b * N_OUTPUTS as f64);
        for (i, lp) in params.layers.iter().enumerate() {
            if let Some(r) = lp.l1_activity {
                loss += r * post[i].iter().map(|v| v.abs()).sum::<f64>() / b;
            }
            if let Some(r) = lp.l1_weight {
                loss += r * self.weights[i].iter().map(|v| v.abs()).sum::<f64>();
            }
        }

        let mut dw = vec![Array2::zeros((0, 0)); self.weights.len()];
        let mut db = vec![Array1::zeros(0); self.biases.len()];
        // output layer
        let grad_out = resid.mapv(|v| 2.0 * v / (b * N_OUTPUTS as f64));
        dw[last] = post[n_hidden - 1].t().dot(&grad_out);
        db[last] = grad_out.sum_axis(Axis(0));
        let mut grad_h = grad_out.dot(&self.weights[last].t());
        for i in (0..n_hidden).rev() {
            if let Some(r) = params.layers[i].l1_activity {
                grad_h.zip_mut_with(&post[i], |g, &h| *g += r * sign0(h) / b);
            }
            let grad_z = self.activations[i].backprop(&grad_h, &pre[i], &post[i]);
            let below = if i == 0 { x } else { &post[i - 1] };
            dw[i] = below.t().dot(&grad_z);
            db[i] = grad_z.sum_axis(Axis(0));
            if i > 0 {
                grad_h = grad_z.dot(&self.weights[i].t());
            }
        }
        for (i, lp) in params.layers.iter().enumerate() {
            if let Some(r) = lp.l1_weight {
                dw[i].zip_mut_with(&self.weights[i], |g, &w| *g += r * sign0(w));
            }
        }
        for g in dw.iter().flat_map(|m| m.iter()).chain(db.iter().flat_map(|v| v.iter())) {
            if !g.is_finite() {
                return Err(MlpError::NonFiniteGradient);
            }
        }
        Ok((loss, Gradients { dw, db }))
    }
}

fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub dw: Vec<Array2<f64>>,
    pub db: Vec<Array1<f64>>,
}

/// Adam optimizer state over the network's tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: u64,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    pub fn new(net: &Network, lr: f64, cfg: &TrainConfig) -> Self {
        Self {
            m_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            t: 0,
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.epsilon,
        }
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for i in 0..net.weights.len() {
            azip(&mut self.m_w[i], &grads.dw[i], |m, g| *m = b1 * *m + (1.0 - b1) * g);
            azip(&mut self.v_w[i], &grads.dw[i], |v, g| *v = b2 * *v + (1.0 - b2) * g * g);
            let (m, v) = (&self.m_w[i], &self.v_w[i]);
            net.weights[i].zip_mut_with(
                &(m.mapv(|m| m / bc1) / (v.mapv(|v| (v / bc2).sqrt() + eps))),
                |w, s| *w -= lr * s,
            );
            azip1(&mut self.m_b[i], &grads.db[i], |m, g| *m = b1 * *m + (1.0 - b1) * g);
            azip1(&mut self.v_b[i], &grads.db[i], |v, g| *v = b2 * *v + (1.0 - b2) * g * g);
            let (m, v) = (&self.m_b[i], &self.v_b[i]);
            net.biases[i].zip_mut_with(
                &(m.mapv(|m| m / bc1) / (v.mapv(|v| (v / bc2).sqrt() + eps))),
                |b, s| *b -= lr * s,
            );
        }
    }
}

fn azip(a: &mut Array2<f64>, b: &Array2<f64>, f: impl Fn(&mut f64, f64)) {
    a.zip_mut_with(b, |x, &y| f(x, y));
}

fn azip1(a: &mut Array1<f64>, b: &Array1<f64>, f: impl Fn(&mut f64, f64)) {
    a.zip_mut_with(b, |x, &y| f(x, y));
}

/// Inverted dropout: zeroes entries with probability `p` and scales the
/// survivors by `1/(1-p)`, so inference needs no rescaling.
pub fn apply_dropout(x: &Array2<f64>, p: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 - p;
    let mut out = x.clone();
    out.mapv_inplace(|v| v); // no-op keeps layout
    for v in out.iter_mut() {
        if rng.gen::<f64>() < p {
            *v = 0.0;
        } else {
            *v /= keep;
        }
    }
    out
}

/// A trained model: weight stacks, the standardizer it expects, and the
/// early-stopping bookkeeping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpFit {
    pub params: MlpHyperparams,
    pub network: Network,
    pub standardizer: Standardizer,
    pub seed: u64,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_mse: f64,
}

impl MlpFit {
    /// Predictions for every row of a raw (unstandardized) matrix; rows with
    /// missing inputs give NaN.
    pub fn predict(&self, matrix: &FeatureMatrix) -> Result<Array2<f64>, MlpError> {
        let std = self.standardizer.transform(matrix)?;
        let cols = self.params.selected_columns();
        let n = std.n_rows();
        let mut x = Array2::zeros((n, cols.len()));
        for (j, &c) in cols.iter().enumerate() {
            for r in 0..n {
                x[[r, j]] = std.x[[r, c]];
            }
        }
        // NaN inputs poison the network; evaluate valid rows only.
        let valid: Vec<usize> = (0..n).filter(|&r| std.row_valid[r]).collect();
        let mut xv = Array2::zeros((valid.len(), cols.len()));
        for (i, &r) in valid.iter().enumerate() {
            xv.row_mut(i).assign(&x.row(r));
        }
        let pred = self.network.forward(&xv)?;
        let mut out = Array2::from_elem((n, N_OUTPUTS), f64::NAN);
        for (i, &r) in valid.iter().enumerate() {
            out.row_mut(r).assign(&pred.row(i));
        }
        Ok(out)
    }
}

/// Extracts the selected, standardized input block and the two-column target
/// block for the matrix's usable rows.
fn design_from_matrix(
    matrix: &FeatureMatrix,
    params: &MlpHyperparams,
) -> Result<(Array2<f64>, Array2<f64>, Standardizer), MlpError> {
    let stats = Standardizer::fit(matrix)?;
    let std = stats.transform(matrix)?;
    let rows = std.fit_rows();
    if rows.is_empty() {
        return Err(MlpError::TooFewRows(0));
    }
    let cols = params.selected_columns();
    let mut x = Array2::zeros((rows.len(), cols.len()));
    let mut y = Array2::zeros((rows.len(), N_OUTPUTS));
    for (i, &r) in rows.iter().enumerate() {
        for (j, &c) in cols.iter().enumerate() {
            x[[i, j]] = std.x[[r, c]];
        }
        y[[i, 0]] = std.y_min[r];
        y[[i, 1]] = std.y_max[r];
    }
    Ok((x, y, stats))
}

fn mse(net: &Network, x: &Array2<f64>, y: &Array2<f64>) -> Result<f64, MlpError> {
    let pred = net.forward(x)?;
    let resid = &pred - y;
    Ok(resid.iter().map(|v| v * v).sum::<f64>() / (x.nrows() as f64 * N_OUTPUTS as f64))
}

/// Trains a network on the matrix's usable rows. The chronological last
/// `validation_fraction` of rows is held out; training stops when the
/// validation MSE has not improved for `patience` epochs (or at the epoch
/// cap) and the best-validation weights are restored.
pub fn train(
    params: &MlpHyperparams,
    matrix: &FeatureMatrix,
    seed: u64,
    cfg: &TrainConfig,
) -> Result<MlpFit, MlpError> {
    params.validate()?;
    let (x, y, stats) = design_from_matrix(matrix, params)?;
    let n = x.nrows();
    let n_val = ((n as f64 * cfg.validation_fraction).round() as usize).clamp(1, n - 1);
    let n_train = n - n_val;
    if n_train < 2 * cfg.batch_size.min(n_train.max(1)) && n_train < 8 {
        return Err(MlpError::TooFewRows(n_train));
    }
    let x_train = x.slice(ndarray::s![..n_train, ..]).to_owned();
    let y_train = y.slice(ndarray::s![..n_train, ..]).to_owned();
    let x_val = x.slice(ndarray::s![n_train.., ..]).to_owned();
    let y_val = y.slice(ndarray::s![n_train.., ..]).to_owned();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::init(params, x.ncols(), cfg.init, &mut rng);
    let mut adam = Adam::new(&net, params.learning_rate, cfg);

    let mut best = mse(&net, &x_val, &y_val)?;
    let mut best_net = net.clone();
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut stopped_epoch = 0usize;

    let mut order: Vec<usize> = (0..n_train).collect();
    for epoch in 1..=cfg.max_epochs {
        stopped_epoch = epoch;
        // seeded Fisher-Yates shuffle
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size) {
            let mut xb = Array2::zeros((chunk.len(), x.ncols()));
            let mut yb = Array2::zeros((chunk.len(), N_OUTPUTS));
            for (i, &r) in chunk.iter().enumerate() {
                xb.row_mut(i).assign(&x_train.row(r));
                yb.row_mut(i).assign(&y_train.row(r));
            }
            let xb = match params.dropout {
                Some(p) => apply_dropout(&xb, p, &mut rng),
                None => xb,
            };
            let (_, grads) = net.loss_and_grad(&xb, &yb, params)?;
            adam.step(&mut net, &grads);
        }
        let val = mse(&net, &x_val, &y_val);
        let val = match val {
            Ok(v) if v.is_finite() => v,
            _ => return Err(MlpError::DivergedLoss(epoch)),
        };
        if val < best {
            best = val;
            best_net = net.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    Ok(MlpFit {
        params: params.clone(),
        network: best_net,
        standardizer: stats,
        seed,
        stopped_epoch,
        best_epoch,
        best_val_mse: best,
    })
}
