//! Classification models trained by the simulator: multinomial logistic
//! regression and a one-hidden-layer ReLU network, both with softmax
//! cross-entropy loss and hand-written per-example backward passes.
//!
//! Parameter layout is flat and fixed:
//!   logistic:  [W (classes x input, row-major), b (classes)]
//!   mlp:       [W1 (hidden x input), b1 (hidden), W2 (classes x hidden), b2 (classes)]

use crate::error::{Error, Result};
use crate::rng::{stream_key, stream_tag, StreamRng};
use crate::tensor::{Example, ParamVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LogisticRegression,
    #[serde(rename = "mlp-1hidden")]
    Mlp1Hidden,
}

/// Architecture description; immutable for a run.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    /// Hidden width; must be 0 for logistic regression and >= 1 for the MLP.
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        let spec = ModelSpec { kind, input_dim, hidden_dim, num_classes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be >= 1".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec("num_classes must be >= 2".into()));
        }
        match self.kind {
            ModelKind::LogisticRegression if self.hidden_dim != 0 => {
                Err(Error::InvalidSpec("logistic-regression takes hidden_dim = 0".into()))
            }
            ModelKind::Mlp1Hidden if self.hidden_dim == 0 => {
                Err(Error::InvalidSpec("mlp-1hidden needs hidden_dim >= 1".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::LogisticRegression => self.num_classes * (self.input_dim + 1),
            ModelKind::Mlp1Hidden => {
                self.hidden_dim * (self.input_dim + 1) + self.num_classes * (self.hidden_dim + 1)
            }
        }
    }

    /// Deterministic init: each layer (weights and bias together) is drawn
    /// uniformly from [-1/sqrt(fan_in), +1/sqrt(fan_in)], in layout order.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = StreamRng::new(stream_key(&[seed, stream_tag::INIT]));
        let mut values = Vec::with_capacity(self.param_count());
        let draw_layer = |rng: &mut StreamRng, count: usize, fan_in: usize, out: &mut Vec<f64>| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..count {
                out.push(bound * (2.0 * rng.uniform() - 1.0));
            }
        };
        match self.kind {
            ModelKind::LogisticRegression => {
                let c = self.num_classes;
                let d = self.input_dim;
                draw_layer(&mut rng, c * d + c, d, &mut values);
            }
            ModelKind::Mlp1Hidden => {
                let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
                draw_layer(&mut rng, h * d + h, d, &mut values);
                draw_layer(&mut rng, c * h + c, h, &mut values);
            }
        }
        ParamVector::new(values).expect("init draws are finite")
    }

    fn check_example(&self, example: &Example) -> Result<()> {
        if example.features.len() != self.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "example has {} features, model expects {}",
                example.features.len(),
                self.input_dim
            )));
        }
        if example.label >= self.num_classes {
            return Err(Error::ShapeMismatch(format!(
                "label {} out of range for {} classes",
                example.label, self.num_classes
            )));
        }
        Ok(())
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.dim() != self.param_count() {
            return Err(Error::ShapeMismatch(format!(
                "parameter vector has dim {}, model expects {}",
                params.dim(),
                self.param_count()
            )));
        }
        Ok(())
    }

    /// Class scores before softmax.
    pub fn logits(&self, params: &ParamVector, features: &[f64]) -> Vec<f64> {
        let p = params.values();
        match self.kind {
            ModelKind::LogisticRegression => {
                let (d, c) = (self.input_dim, self.num_classes);
                let (w, b) = p.split_at(c * d);
                (0..c)
                    .map(|k| {
                        b[k] + w[k * d..(k + 1) * d]
                            .iter()
                            .zip(features)
                            .map(|(wi, xi)| wi * xi)
                            .sum::<f64>()
                    })
                    .collect()
            }
            ModelKind::Mlp1Hidden => {
                let act = self.hidden_activations(p, features);
                let (_, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
                let (w2, b2) = self.second_layer(p);
                (0..c)
                    .map(|k| {
                        b2[k] + w2[k * h..(k + 1) * h]
                            .iter()
                            .zip(&act)
                            .map(|(wi, ai)| wi * ai)
                            .sum::<f64>()
                    })
                    .collect()
            }
        }
    }

    fn hidden_activations(&self, p: &[f64], features: &[f64]) -> Vec<f64> {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let (w1, rest) = p.split_at(h * d);
        let b1 = &rest[..h];
        (0..h)
            .map(|j| {
                let pre = b1[j]
                    + w1[j * d..(j + 1) * d]
                        .iter()
                        .zip(features)
                        .map(|(wi, xi)| wi * xi)
                        .sum::<f64>();
                pre.max(0.0)
            })
            .collect()
    }

    fn second_layer<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
        let rest = &p[h * d + h..];
        let (w2, b2) = rest.split_at(c * h);
        (w2, b2)
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn batch_loss(&self, params: &ParamVector, batch: &[Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        self.check_params(params)?;
        let mut total = 0.0;
        for example in batch {
            self.check_example(example)?;
            let logits = self.logits(params, &example.features);
            total += log_sum_exp(&logits) - logits[example.label];
        }
        Ok(total / batch.len() as f64)
    }

    /// Gradient of one example's loss, same layout as the parameters.
    pub fn example_grad(&self, params: &ParamVector, example: &Example) -> Result<ParamVector> {
        self.check_params(params)?;
        self.check_example(example)?;
        let p = params.values();
        let x = &example.features;
        let mut grad = vec![0.0; params.dim()];
        match self.kind {
            ModelKind::LogisticRegression => {
                let (d, c) = (self.input_dim, self.num_classes);
                let logits = self.logits(params, x);
                let delta = softmax_residual(&logits, example.label);
                for k in 0..c {
                    for i in 0..d {
                        grad[k * d + i] = delta[k] * x[i];
                    }
                    grad[c * d + k] = delta[k];
                }
            }
            ModelKind::Mlp1Hidden => {
                let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
                let act = self.hidden_activations(p, x);
                let (w2, b2) = self.second_layer(p);
                let logits: Vec<f64> = (0..c)
                    .map(|k| {
                        b2[k] + w2[k * h..(k + 1) * h]
                            .iter()
                            .zip(&act)
                            .map(|(wi, ai)| wi * ai)
                            .sum::<f64>()
                    })
                    .collect();
                let delta = softmax_residual(&logits, example.label);
                let w2_off = h * d + h;
                let b2_off = w2_off + c * h;
                for k in 0..c {
                    for j in 0..h {
                        grad[w2_off + k * h + j] = delta[k] * act[j];
                    }
                    grad[b2_off + k] = delta[k];
                }
                // ReLU passes gradient only where the activation is positive;
                // the subgradient at exactly zero is taken as zero.
                for j in 0..h {
                    if act[j] > 0.0 {
                        let dpre: f64 = (0..c).map(|k| w2[k * h + j] * delta[k]).sum();
                        for i in 0..d {
                            grad[j * d + i] = dpre * x[i];
                        }
                        grad[h * d + j] = dpre;
                    }
                }
            }
        }
        Ok(ParamVector::from_raw(grad))
    }

    /// Per-example loss gradients; their mean equals `batch_gradient`.
    pub fn per_example_grads(&self, params: &ParamVector, batch: &[Example]) -> Result<Vec<ParamVector>> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        batch.iter().map(|ex| self.example_grad(params, ex)).collect()
    }

    /// Gradient of the mean batch loss, accumulated in one pass. Kept as an
    /// independent route from `per_example_grads` so the two can cross-check
    /// each other.
    pub fn batch_gradient(&self, params: &ParamVector, batch: &[Example]) -> Result<ParamVector> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut acc = vec![0.0; params.dim()];
        for example in batch {
            let g = self.example_grad(params, example)?;
            for (a, v) in acc.iter_mut().zip(g.values()) {
                *a += v;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        Ok(ParamVector::from_raw(acc.into_iter().map(|v| v * scale).collect()))
    }

    /// Fraction of examples whose argmax logit matches the label; ties go to
    /// the lowest class index.
    pub fn accuracy(&self, params: &ParamVector, dataset: &[Example]) -> Result<f64> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.check_params(params)?;
        let mut correct = 0usize;
        for example in dataset {
            self.check_example(example)?;
            let logits = self.logits(params, &example.features);
            let mut best = 0usize;
            for (k, &l) in logits.iter().enumerate().skip(1) {
                if l > logits[best] {
                    best = k;
                }
            }
            if best == example.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / dataset.len() as f64)
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// softmax(logits) minus the one-hot label, the shared backward seed.
fn softmax_residual(logits: &[f64], label: usize) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter()
        .enumerate()
        .map(|(k, e)| e / z - if k == label { 1.0 } else { 0.0 })
        .collect()
}
