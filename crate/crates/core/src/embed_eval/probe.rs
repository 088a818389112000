//! Linear probes on frozen embeddings.
//!
//! One epoch is one full-batch Adam step. The learning rate is halved after
//! three epochs without a drop in validation loss, training stops after ten,
//! and the best-validation parameters are returned.

use serde::{Deserialize, Serialize};

use super::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    LogisticClassifier,
    LinearRegressor,
}

impl std::str::FromStr for ProbeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classifier" | "logistic" | "logistic_classifier" => Ok(ProbeKind::LogisticClassifier),
            "regressor" | "linear" | "linear_regressor" => Ok(ProbeKind::LinearRegressor),
            other => Err(Error::invalid(format!("unknown probe kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Epochs without improvement before the learning rate is halved.
    pub patience: usize,
    /// Epochs without improvement before training stops.
    pub stop_after: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            learning_rate: 1e-4,
            max_epochs: 20_000,
            patience: 3,
            stop_after: 10,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Outcome of feeding one validation loss to a [`PlateauSchedule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Improved,
    Stalled,
    Halved,
    Stop,
}

/// Learning-rate bookkeeping driven by validation losses alone, so it can be
/// exercised on a scripted trace.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    pub lr: f64,
    pub best: f64,
    patience: usize,
    stop_after: usize,
    since_best: usize,
    since_change: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, initial_loss: f64, patience: usize, stop_after: usize) -> Self {
        PlateauSchedule {
            lr,
            best: initial_loss,
            patience,
            stop_after,
            since_best: 0,
            since_change: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> Step {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
            self.since_change = 0;
            return Step::Improved;
        }
        self.since_best += 1;
        self.since_change += 1;
        if self.since_best >= self.stop_after {
            Step::Stop
        } else if self.since_change >= self.patience {
            self.lr /= 2.0;
            self.since_change = 0;
            Step::Halved
        } else {
            Step::Stalled
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub kind: ProbeKind,
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Regressor output is `scale * (w.x + b) + shift`; identity for the
    /// classifier.
    pub scale: f64,
    pub shift: f64,
}

impl ProbeModel {
    fn initial(kind: ProbeKind, dim: usize, scale: f64, shift: f64) -> Self {
        ProbeModel {
            kind,
            weights: vec![0.0; dim],
            bias: 0.0,
            scale,
            shift,
        }
    }

    /// Raw linear output `w.x + b` per row.
    pub fn decision(&self, x: &EmbeddingMatrix) -> Result<Vec<f64>> {
        if x.dim() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                got: x.dim(),
            });
        }
        Ok(x.rows().map(|r| linear(&self.weights, self.bias, r)).collect())
    }

    /// Probability of the positive class, or the regressed value.
    pub fn predict(&self, x: &EmbeddingMatrix) -> Result<Vec<f64>> {
        let z = self.decision(x)?;
        Ok(match self.kind {
            ProbeKind::LogisticClassifier => z.into_iter().map(sigmoid).collect(),
            ProbeKind::LinearRegressor => z.into_iter().map(|v| self.scale * v + self.shift).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub valid_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeFit {
    pub model: ProbeModel,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

fn linear(w: &[f64], b: f64, row: &[f32]) -> f64 {
    w.iter().zip(row).map(|(&a, &x)| a * x as f64).sum::<f64>() + b
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
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Training objective over a fixed design matrix. For the classifier the
/// targets are 0/1; for the regressor they are already standardized.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    pub kind: ProbeKind,
    pub x: &'a EmbeddingMatrix,
    pub targets: Vec<f64>,
    pub pos_weight: f64,
}

impl Objective<'_> {
    /// Mean loss at `(w, b)`.
    pub fn loss(&self, w: &[f64], b: f64) -> f64 {
        let total: f64 = self
            .x
            .rows()
            .zip(&self.targets)
            .map(|(r, &t)| {
                let z = linear(w, b, r);
                match self.kind {
                    ProbeKind::LogisticClassifier => self.pos_weight * t * softplus(-z) + (1.0 - t) * softplus(z),
                    ProbeKind::LinearRegressor => {
                        let d = (z - t).abs();
                        if d < 1.0 {
                            0.5 * d * d
                        } else {
                            d - 0.5
                        }
                    }
                }
            })
            .sum();
        total / self.targets.len() as f64
    }

    /// Gradient of [`Objective::loss`] with respect to `w` and `b`.
    pub fn gradient(&self, w: &[f64], b: f64) -> (Vec<f64>, f64) {
        let n = self.targets.len() as f64;
        let mut gw = vec![0.0; w.len()];
        let mut gb = 0.0;
        for (r, &t) in self.x.rows().zip(&self.targets) {
            let z = linear(w, b, r);
            let dz = match self.kind {
                ProbeKind::LogisticClassifier => {
                    let s = sigmoid(z);
                    self.pos_weight * t * (s - 1.0) + (1.0 - t) * s
                }
                ProbeKind::LinearRegressor => (z - t).clamp(-1.0, 1.0),
            } / n;
            for (g, &x) in gw.iter_mut().zip(r) {
                *g += dz * x as f64;
            }
            gb += dz;
        }
        (gw, gb)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    /// Updates `params` in place from `grad`; the last entry is the bias.
    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, cfg: &ProbeConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.eps);
        }
    }
}

fn check_targets(kind: ProbeKind, x: &EmbeddingMatrix, y: &[f64]) -> Result<()> {
    if x.n() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.n(),
            got: y.len(),
        });
    }
    if x.n() == 0 {
        return Err(Error::invalid("probe needs at least one sample"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite probe target"));
    }
    if kind == ProbeKind::LogisticClassifier && y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::invalid("classifier labels must be 0 or 1"));
    }
    Ok(())
}

/// Fits a linear probe on `(train_x, train_y)`, selecting parameters by
/// validation loss.
pub fn train_probe(
    train_x: &EmbeddingMatrix,
    train_y: &[f64],
    valid_x: &EmbeddingMatrix,
    valid_y: &[f64],
    kind: ProbeKind,
    cfg: &ProbeConfig,
) -> Result<ProbeFit> {
    check_targets(kind, train_x, train_y)?;
    check_targets(kind, valid_x, valid_y)?;
    if train_x.dim() != valid_x.dim() {
        return Err(Error::DimensionMismatch {
            expected: train_x.dim(),
            got: valid_x.dim(),
        });
    }
    if !(cfg.learning_rate > 0.0) || cfg.patience == 0 || cfg.stop_after == 0 {
        return Err(Error::invalid("learning rate, patience and stop_after must be positive"));
    }
    let d = train_x.dim();

    let (scale, shift, pos_weight) = match kind {
        ProbeKind::LogisticClassifier => {
            let pos = train_y.iter().filter(|&&v| v == 1.0).count();
            let neg = train_y.len() - pos;
            if pos == 0 || neg == 0 {
                return Err(Error::invalid("classifier training set has a single class"));
            }
            (1.0, 0.0, neg as f64 / pos as f64)
        }
        ProbeKind::LinearRegressor => {
            let n = train_y.len() as f64;
            let mean = train_y.iter().sum::<f64>() / n;
            let std = (train_y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            (if std > 0.0 { std } else { 1.0 }, mean, 1.0)
        }
    };
    let standardize = |y: &[f64]| -> Vec<f64> {
        match kind {
            ProbeKind::LogisticClassifier => y.to_vec(),
            ProbeKind::LinearRegressor => y.iter().map(|v| (v - shift) / scale).collect(),
        }
    };
    let train = Objective {
        kind,
        x: train_x,
        targets: standardize(train_y),
        pos_weight,
    };
    let valid = Objective {
        kind,
        x: valid_x,
        targets: standardize(valid_y),
        pos_weight,
    };

    let mut best = ProbeModel::initial(kind, d, scale, shift);
    let mut best_epoch = 0;
    let mut params = vec![0.0; d + 1];
    let mut schedule = PlateauSchedule::new(cfg.learning_rate, valid.loss(&best.weights, best.bias), cfg.patience, cfg.stop_after);
    let mut adam = Adam::new(d + 1);
    let mut history = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        let (w, b) = params.split_at(d);
        let train_loss = train.loss(w, b[0]);
        let (mut grad, gb) = train.gradient(w, b[0]);
        grad.push(gb);
        let lr = schedule.lr;
        adam.step(&mut params, &grad, lr, cfg);
        let (w, b) = params.split_at(d);
        let valid_loss = valid.loss(w, b[0]);
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            valid_loss,
        });
        match schedule.observe(valid_loss) {
            Step::Improved => {
                best.weights.copy_from_slice(w);
                best.bias = b[0];
                best_epoch = epoch;
            }
            Step::Stop => break,
            Step::Stalled | Step::Halved => {}
        }
    }
    Ok(ProbeFit {
        model: best,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmbeddingMatrix {
        let rows: Vec<Vec<f32>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        EmbeddingMatrix::from_rows((0..n).map(|i| format!("r{i}")).collect(), &rows).unwrap()
    }

    fn relative_gap(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in [ProbeKind::LogisticClassifier, ProbeKind::LinearRegressor] {
            for _ in 0..10 {
                let x = random_matrix(&mut rng, 12, 4);
                let targets: Vec<f64> = match kind {
                    ProbeKind::LogisticClassifier => (0..12).map(|i| (i % 3 == 0) as u8 as f64).collect(),
                    ProbeKind::LinearRegressor => (0..12).map(|_| rng.random_range(-3.0..3.0)).collect(),
                };
                let obj = Objective { kind, x: &x, targets, pos_weight: 2.0 };
                let w: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let b = rng.random_range(-0.5..0.5);
                let (gw, gb) = obj.gradient(&w, b);
                let h = 1e-4;
                for i in 0..4 {
                    let (mut up, mut down) = (w.clone(), w.clone());
                    up[i] += h;
                    down[i] -= h;
                    let fd = (obj.loss(&up, b) - obj.loss(&down, b)) / (2.0 * h);
                    assert!(relative_gap(fd, gw[i]) < 1e-4, "{kind:?} w{i}: {fd} vs {}", gw[i]);
                }
                let fd = (obj.loss(&w, b + h) - obj.loss(&w, b - h)) / (2.0 * h);
                assert!(relative_gap(fd, gb) < 1e-4);
            }
        }
    }

    #[test]
    fn scripted_trace_halves_then_stops() {
        let mut s = PlateauSchedule::new(1e-4, 1.0, 3, 10);
        assert_eq!(s.observe(0.9), Step::Improved);
        assert_eq!(s.observe(0.95), Step::Stalled);
        assert_eq!(s.observe(0.9), Step::Stalled);
        assert_eq!(s.observe(0.91), Step::Halved);
        assert_eq!(s.lr, 5e-5);
        assert_eq!(s.observe(0.8), Step::Improved);
        let steps: Vec<Step> = (0..10).map(|_| s.observe(0.85)).collect();
        use Step::*;
        assert_eq!(steps, [Stalled, Stalled, Halved, Stalled, Stalled, Halved, Stalled, Stalled, Halved, Stop]);
        assert_eq!(s.lr, 5e-5 / 8.0);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_matrix(&mut rng, 10, 3);
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let cfg = ProbeConfig { max_epochs: 0, ..ProbeConfig::default() };
        let fit = train_probe(&x, &y, &x, &y, ProbeKind::LinearRegressor, &cfg).unwrap();
        assert_eq!(fit.model.weights, [0.0; 3]);
        assert_eq!(fit.model.bias, 0.0);
        assert_eq!(fit.model.predict(&x).unwrap(), vec![4.5; 10]);
        let labels: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let fit = train_probe(&x, &labels, &x, &labels, ProbeKind::LogisticClassifier, &cfg).unwrap();
        assert_eq!(fit.model.predict(&x).unwrap(), vec![0.5; 10]);
    }

    #[test]
    fn single_class_training_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_matrix(&mut rng, 4, 2);
        let r = train_probe(&x, &[1.0; 4], &x, &[1.0, 0.0, 1.0, 0.0], ProbeKind::LogisticClassifier, &ProbeConfig::default());
        assert!(r.is_err());
        let r = train_probe(&x, &[1.0, 0.5, 0.0, 1.0], &x, &[1.0; 4], ProbeKind::LogisticClassifier, &ProbeConfig::default());
        assert!(r.is_err());
    }
}
