//! Logistic-regression models stored as flat parameter vectors.
//!
//! Parameters are laid out one output row at a time: `input_dim` weights
//! followed by that output's bias. A binary model has one row, a
//! multinomial model one row per class.

use rand::distr::{Distribution, Uniform};
use rand::seq::SliceRandom;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::datasets::{DataShard, Dataset};
use crate::error::{Error, Result};
use crate::rng::{self, SimRng};

/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    BinaryLogistic,
    MultinomialLogistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
}

impl ModelSpec {
    pub fn binary(input_dim: usize) -> Self {
        Self {
            kind: ModelKind::BinaryLogistic,
            input_dim,
            num_classes: 1,
        }
    }

    pub fn multinomial(input_dim: usize, num_classes: usize) -> Self {
        Self {
            kind: ModelKind::MultinomialLogistic,
            input_dim,
            num_classes,
        }
    }

    /// Picks the model family that fits a dataset.
    pub fn for_dataset(ds: &Dataset) -> Self {
        if ds.num_classes() <= 2 {
            Self::binary(ds.dim())
        } else {
            Self::multinomial(ds.dim(), ds.num_classes())
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("model input_dim must be positive"));
        }
        match self.kind {
            ModelKind::BinaryLogistic if self.num_classes != 1 => Err(Error::config(
                "binary-logistic models take num_classes = 1",
            )),
            ModelKind::MultinomialLogistic if self.num_classes < 2 => Err(Error::config(
                "multinomial-logistic models need num_classes >= 2",
            )),
            _ => Ok(()),
        }
    }

    /// Number of output rows (1 for binary, k for multinomial).
    pub fn outputs(&self) -> usize {
        self.num_classes.max(1)
    }

    pub fn param_count(&self) -> usize {
        (self.input_dim + 1) * self.outputs()
    }

    /// Number of classes in the label space.
    pub fn label_classes(&self) -> usize {
        match self.kind {
            ModelKind::BinaryLogistic => 2,
            ModelKind::MultinomialLogistic => self.num_classes,
        }
    }

    fn check_data(&self, ds: &Dataset) -> Result<()> {
        if ds.dim() != self.input_dim {
            return Err(Error::shape(format!(
                "model expects {} features, data has {}",
                self.input_dim,
                ds.dim()
            )));
        }
        if let Some(&bad) = ds.labels().iter().find(|&&l| l >= self.label_classes()) {
            return Err(Error::shape(format!(
                "label {bad} outside the model's {} classes",
                self.label_classes()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn new(spec: ModelSpec, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.param_count() {
            return Err(Error::shape(format!(
                "{} values for a model with {} parameters",
                values.len(),
                spec.param_count()
            )));
        }
        Ok(Self { spec, values })
    }

    pub fn zeros(spec: ModelSpec) -> Self {
        Self {
            values: vec![0.0; spec.param_count()],
            spec,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn row(&self, o: usize) -> &[f64] {
        let w = self.spec.input_dim + 1;
        &self.values[o * w..(o + 1) * w]
    }

    fn score(&self, o: usize, x: &[f64]) -> f64 {
        let row = self.row(o);
        let (w, b) = row.split_at(self.spec.input_dim);
        w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + b[0]
    }

    /// Predicted class for one feature vector. Binary models predict class 1
    /// only when the sigmoid score is strictly above 0.5; multinomial ties go
    /// to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        match self.spec.kind {
            ModelKind::BinaryLogistic => usize::from(sigmoid(self.score(0, x)) > 0.5),
            ModelKind::MultinomialLogistic => {
                let mut best = 0;
                let mut best_score = f64::NEG_INFINITY;
                for o in 0..self.spec.outputs() {
                    let s = self.score(o, x);
                    if s > best_score {
                        best = o;
                        best_score = s;
                    }
                }
                best
            }
        }
    }
}

/// Mini-batch regime for one local epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BatchSize {
    #[default]
    Full,
    Size(usize),
}

impl Serialize for BatchSize {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            BatchSize::Full => s.serialize_str("full"),
            BatchSize::Size(n) => s.serialize_u64(*n as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BatchSize {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Size(u64),
            Name(String),
        }
        match Repr::deserialize(d)? {
            Repr::Size(0) => Err(serde::de::Error::custom("batch_size must be positive")),
            Repr::Size(n) => Ok(BatchSize::Size(n as usize)),
            Repr::Name(s) if s == "full" => Ok(BatchSize::Full),
            Repr::Name(s) => Err(serde::de::Error::custom(format!(
                "batch_size must be a positive integer or \"full\", got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub weight_decay: f64,
    #[serde(default)]
    pub batch_size: BatchSize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            weight_decay: 0.01,
            batch_size: BatchSize::Full,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        // Zero is allowed so consensus-only runs can switch training off.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be a finite non-negative number"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("weight_decay must be a finite non-negative number"));
        }
        if self.batch_size == BatchSize::Size(0) {
            return Err(Error::config("batch_size must be positive"));
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Uniform[-0.05, 0.05] initialization, a pure function of `(spec, seed)`.
pub fn init_params(spec: ModelSpec, seed: u64) -> Result<ModelParams> {
    spec.validate()?;
    let dist = Uniform::new_inclusive(-INIT_SCALE, INIT_SCALE).expect("valid interval");
    let mut rng = rng::from_seed(seed);
    let values = (0..spec.param_count()).map(|_| dist.sample(&mut rng)).collect();
    ModelParams::new(spec, values)
}

/// Mean cross-entropy over `rows` plus `weight_decay / 2 * ||params||^2`.
pub fn objective(params: &ModelParams, data: &Dataset, weight_decay: f64) -> Result<f64> {
    params.spec.check_data(data)?;
    if data.is_empty() {
        return Err(Error::precondition("objective on empty data"));
    }
    let mut total = 0.0;
    for (x, y) in data.rows() {
        total += match params.spec.kind {
            ModelKind::BinaryLogistic => {
                let z = params.score(0, x);
                softplus(z) - if y == 1 { z } else { 0.0 }
            }
            ModelKind::MultinomialLogistic => {
                let scores: Vec<f64> = (0..params.spec.outputs()).map(|o| params.score(o, x)).collect();
                log_sum_exp(&scores) - scores[y]
            }
        };
    }
    let l2: f64 = params.values.iter().map(|v| v * v).sum();
    Ok(total / data.len() as f64 + 0.5 * weight_decay * l2)
}

fn log_sum_exp(scores: &[f64]) -> f64 {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln()
}

/// Gradient of [`objective`] restricted to the rows in `batch`:
/// `(1/|B|) * sum of per-sample gradients + weight_decay * params`.
pub fn gradient(params: &ModelParams, data: &Dataset, batch: &[usize], weight_decay: f64) -> Vec<f64> {
    let spec = params.spec;
    let width = spec.input_dim + 1;
    let mut grad = vec![0.0; spec.param_count()];
    let mut probs = vec![0.0; spec.outputs()];
    for &i in batch {
        let x = data.row(i);
        let y = data.label(i);
        match spec.kind {
            ModelKind::BinaryLogistic => {
                probs[0] = sigmoid(params.score(0, x)) - if y == 1 { 1.0 } else { 0.0 };
            }
            ModelKind::MultinomialLogistic => {
                for (o, p) in probs.iter_mut().enumerate() {
                    *p = params.score(o, x);
                }
                let lse = log_sum_exp(&probs);
                for (o, p) in probs.iter_mut().enumerate() {
                    *p = (*p - lse).exp() - if o == y { 1.0 } else { 0.0 };
                }
            }
        }
        for (o, &err) in probs.iter().enumerate() {
            let g = &mut grad[o * width..(o + 1) * width];
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += err * xj;
            }
            g[spec.input_dim] += err;
        }
    }
    let inv = 1.0 / batch.len() as f64;
    for (g, w) in grad.iter_mut().zip(&params.values) {
        *g = *g * inv + weight_decay * w;
    }
    grad
}

/// One local epoch of mini-batch SGD over the shard. With a full batch the
/// epoch is a single gradient step and the random stream is not consumed.
pub fn train_step(params: &ModelParams, shard: &DataShard, hyper: &Hyperparams, rng: &mut SimRng) -> Result<ModelParams> {
    params.spec.check_data(&shard.data)?;
    if shard.is_empty() {
        return Err(Error::precondition(format!("node {} holds an empty shard", shard.owner)));
    }
    let n = shard.len();
    let mut order: Vec<usize> = (0..n).collect();
    let batch = match hyper.batch_size {
        BatchSize::Size(b) if b < n => {
            order.shuffle(rng);
            b
        }
        _ => n,
    };
    let mut out = params.clone();
    for chunk in order.chunks(batch) {
        let grad = gradient(&out, &shard.data, chunk, hyper.weight_decay);
        for (w, g) in out.values.iter_mut().zip(grad) {
            *w -= hyper.learning_rate * g;
        }
    }
    if !out.is_finite() {
        return Err(Error::Diverged(format!(
            "training on node {} produced non-finite parameters",
            shard.owner
        )));
    }
    Ok(out)
}

/// Elementwise unweighted mean, summed in the order given.
pub fn average_models<'a, I>(models: I) -> Result<ModelParams>
where
    I: IntoIterator<Item = &'a ModelParams>,
{
    weighted_average(models.into_iter().map(|m| (m, 1.0)))
}

/// Elementwise mean weighted by the paired non-negative weights.
pub fn weighted_average<'a, I>(models: I) -> Result<ModelParams>
where
    I: IntoIterator<Item = (&'a ModelParams, f64)>,
{
    let mut iter = models.into_iter();
    let Some((first, w0)) = iter.next() else {
        return Err(Error::precondition("cannot average an empty list of models"));
    };
    let spec = first.spec;
    let mut sum: Vec<f64> = first.values.iter().map(|v| v * w0).collect();
    let mut total = w0;
    for (m, w) in iter {
        if m.spec != spec {
            return Err(Error::shape("cannot average models with different specs"));
        }
        for (s, v) in sum.iter_mut().zip(&m.values) {
            *s += v * w;
        }
        total += w;
    }
    if !(total > 0.0) {
        return Err(Error::precondition("model weights sum to zero"));
    }
    sum.iter_mut().for_each(|s| *s /= total);
    Ok(ModelParams { spec, values: sum })
}

/// Fraction of correctly classified rows.
pub fn evaluate(params: &ModelParams, test: &Dataset) -> Result<f64> {
    params.spec.check_data(test)?;
    if test.is_empty() {
        return Err(Error::precondition("evaluation on an empty test set"));
    }
    let correct = test.rows().filter(|&(x, y)| params.predict(x) == y).count();
    Ok(correct as f64 / test.len() as f64)
}
