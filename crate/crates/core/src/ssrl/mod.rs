//! Self-supervised regression on a Gaussian toy task.
//!
//! A latent target `y` is observed by two independent sensors,
//! `x_jc = y + ε₁` and `x_j = y + ε₂`. A fixed pseudo-predictor reads the
//! second sensor, `g(x_j) = x_j + bias_g`, and a regressor `f` is trained on
//! the first sensor to match `g` without ever seeing `y`. For this task the
//! optimum of that loss is `E[g(x_j) | x_jc] = w·x_jc + bias_g` with
//! `w = σ_y² / (σ_y² + σ₁²)`, and its test error splits into the squared gap
//! to the supervised optimum plus `Var(y | x_jc)`.

mod mlp;

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mlp::{Mlp, MLP_HIDDEN};

#[derive(Debug, Error)]
pub enum SsrlError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training stopped at the epoch cap ({epochs}) while the loss still fell by {last_delta:e} per epoch")]
    NonConvergence { epochs: usize, last_delta: f64 },
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("report: {0}")]
    Report(String),
}

pub type Result<T> = std::result::Result<T, SsrlError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaussianTask {
    pub sigma_y: f64,
    pub sigma_1: f64,
    pub sigma_2: f64,
    pub bias_g: f64,
    pub n: usize,
    pub seed: u64,
}

impl Default for GaussianTask {
    fn default() -> Self {
        Self {
            sigma_y: 1.0,
            sigma_1: 0.5,
            sigma_2: 0.5,
            bias_g: 0.2,
            n: 100_000,
            seed: 0,
        }
    }
}

impl GaussianTask {
    /// Sensor noise may be zero; the latent spread may not.
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_y > 0.0 && self.sigma_y.is_finite()) {
            return Err(SsrlError::InvalidTask("sigma_y must be positive".into()));
        }
        for (name, s) in [("sigma_1", self.sigma_1), ("sigma_2", self.sigma_2)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(SsrlError::InvalidTask(format!("{name} must be >= 0")));
            }
        }
        if !self.bias_g.is_finite() {
            return Err(SsrlError::InvalidTask("bias_g must be finite".into()));
        }
        if self.n < 2 {
            return Err(SsrlError::InvalidTask("n must be >= 2".into()));
        }
        Ok(())
    }

    /// Slope of `E[y | x_jc]`, which is also the slope of `E[g(x_j) | x_jc]`.
    pub fn optimal_weight(&self) -> f64 {
        let vy = self.sigma_y * self.sigma_y;
        vy / (vy + self.sigma_1 * self.sigma_1)
    }

    /// `Var(y | x_jc)`.
    pub fn conditional_variance(&self) -> f64 {
        let (vy, v1) = (self.sigma_y * self.sigma_y, self.sigma_1 * self.sigma_1);
        vy * v1 / (vy + v1)
    }

    /// The same task with a different seed and sample count.
    pub fn resampled(&self, seed: u64, n: usize) -> Self {
        Self { seed, n, ..*self }
    }
}

/// Samples of one task. `y` is kept for evaluation and supervised training.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x_jc: Vec<f64>,
    pub x_j: Vec<f64>,
    pub y: Vec<f64>,
    pub bias_g: f64,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Pseudo-labels `g(x_j)`.
    pub fn pseudo_labels(&self) -> Vec<f64> {
        self.x_j.iter().map(|x| x + self.bias_g).collect()
    }

    /// Inputs paired with the pseudo-labels; built from `x_jc` and `x_j` only.
    pub fn ssil_set(&self) -> TrainingSet {
        TrainingSet {
            inputs: self.x_jc.clone(),
            targets: self.pseudo_labels(),
        }
    }

    /// Inputs paired with the latent targets.
    pub fn supervised_set(&self) -> TrainingSet {
        TrainingSet {
            inputs: self.x_jc.clone(),
            targets: self.y.clone(),
        }
    }

    pub fn training_set(&self, mode: TrainMode) -> TrainingSet {
        match mode {
            TrainMode::Ssil => self.ssil_set(),
            TrainMode::Supervised => self.supervised_set(),
        }
    }
}

pub fn make_task(task: &GaussianTask) -> Result<Dataset> {
    task.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(task.seed);
    let mut data = Dataset {
        x_jc: Vec::with_capacity(task.n),
        x_j: Vec::with_capacity(task.n),
        y: Vec::with_capacity(task.n),
        bias_g: task.bias_g,
    };
    for _ in 0..task.n {
        let z: [f64; 3] = [
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        ];
        let y = task.sigma_y * z[0];
        data.y.push(y);
        data.x_jc.push(y + task.sigma_1 * z[1]);
        data.x_j.push(y + task.sigma_2 * z[2]);
    }
    Ok(data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Ssil,
    Supervised,
}

/// What a regressor is fitted to. There is no `y` channel: in ssil mode the
/// targets are the pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Training stops once the loss changes by less than `loss_tol` between
    /// epochs while the gradient norm is below `grad_tol`.
    pub loss_tol: f64,
    pub grad_tol: f64,
    /// Heavy-ball coefficient in `[0, 1)`; 0 is plain gradient descent.
    pub momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.2,
            epochs: 10_000,
            loss_tol: 1e-10,
            grad_tol: 1e-8,
            momentum: 0.0,
        }
    }
}

/// Largest per-epoch loss decrease still accepted at the epoch cap.
pub const STALL_TOL: f64 = 1e-6;

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.epochs == 0 {
            return Err(SsrlError::InvalidConfig("lr must be positive and epochs >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(SsrlError::InvalidConfig("momentum must be in [0, 1)".into()));
        }
        if !(self.loss_tol >= 0.0 && self.grad_tol >= 0.0) {
            return Err(SsrlError::InvalidConfig("tolerances must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub epochs: usize,
    pub final_loss: f64,
    pub converged: bool,
}

/// A scalar model trainable by full-batch gradient descent on squared error.
pub trait Regressor {
    fn predict(&self, x: f64) -> f64;

    /// Mean squared error and its gradient with respect to the parameters.
    fn loss_and_gradient(&self, data: &TrainingSet) -> (f64, Vec<f64>);

    /// Adds `-lr · gradient` to the parameters.
    fn descend(&mut self, gradient: &[f64], lr: f64);
}

/// Deterministic full-batch gradient descent. Hitting the epoch cap is an
/// error only while the loss is still falling faster than [`STALL_TOL`].
pub fn fit<R: Regressor>(model: &mut R, data: &TrainingSet, cfg: &TrainConfig) -> Result<TrainStats> {
    cfg.validate()?;
    if data.inputs.len() != data.targets.len() || data.inputs.is_empty() {
        return Err(SsrlError::InvalidTask("training set is empty or ragged".into()));
    }
    let mut previous = f64::INFINITY;
    let mut last_delta = f64::INFINITY;
    let mut velocity: Vec<f64> = Vec::new();
    for epoch in 0..cfg.epochs {
        let (loss, grad) = model.loss_and_gradient(data);
        if !loss.is_finite() {
            return Err(SsrlError::Diverged { epoch, loss });
        }
        last_delta = previous - loss;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if last_delta.abs() < cfg.loss_tol && grad_norm < cfg.grad_tol {
            return Ok(TrainStats {
                epochs: epoch,
                final_loss: loss,
                converged: true,
            });
        }
        previous = loss;
        if velocity.is_empty() {
            velocity = grad;
        } else {
            for (v, g) in velocity.iter_mut().zip(&grad) {
                *v = cfg.momentum * *v + g;
            }
        }
        model.descend(&velocity, cfg.lr);
    }
    if last_delta > STALL_TOL {
        return Err(SsrlError::NonConvergence {
            epochs: cfg.epochs,
            last_delta,
        });
    }
    let (final_loss, _) = model.loss_and_gradient(data);
    Ok(TrainStats {
        epochs: cfg.epochs,
        final_loss,
        converged: false,
    })
}

/// Fits `model` to `dataset` in the given mode.
pub fn train<R: Regressor>(model: &mut R, dataset: &Dataset, mode: TrainMode, cfg: &TrainConfig) -> Result<TrainStats> {
    fit(model, &dataset.training_set(mode), cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LinearRegressor {
    pub weight: f64,
    pub intercept: f64,
}

impl Regressor for LinearRegressor {
    fn predict(&self, x: f64) -> f64 {
        self.weight * x + self.intercept
    }

    fn loss_and_gradient(&self, data: &TrainingSet) -> (f64, Vec<f64>) {
        let (mut loss, mut gw, mut gb) = (0.0, 0.0, 0.0);
        for (&x, &t) in data.inputs.iter().zip(&data.targets) {
            let e = self.predict(x) - t;
            loss += e * e;
            gw += e * x;
            gb += e;
        }
        let n = data.inputs.len() as f64;
        (loss / n, vec![2.0 * gw / n, 2.0 * gb / n])
    }

    fn descend(&mut self, gradient: &[f64], lr: f64) {
        self.weight -= lr * gradient[0];
        self.intercept -= lr * gradient[1];
    }
}

/// Test-set estimate of the three terms of the decomposition
/// `E[(f_ssil − y)²] = E[(f_ssil − f_sup)²] + Var(y | x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub lhs: f64,
    pub gap_term: f64,
    /// Closed form for the Gaussian task.
    pub variance_term: f64,
    /// `bias_g² + Var(y | x)`, the value `lhs` takes at the exact optimum.
    pub closed_form_lhs: f64,
    pub n_test: usize,
}

impl DecompositionReport {
    /// `|lhs − (gap + variance)| / lhs`.
    pub fn identity_error(&self) -> f64 {
        (self.lhs - (self.gap_term + self.variance_term)).abs() / self.lhs
    }
}

/// Evaluates on a fresh test set of `n_test` samples drawn from `task` with a
/// seed derived from `task.seed`, so it never overlaps the training draw.
pub fn error_decomposition(
    f_ssil: &impl Regressor,
    f_sup: &impl Regressor,
    task: &GaussianTask,
    n_test: usize,
) -> Result<DecompositionReport> {
    let test = make_task(&task.resampled(test_seed(task.seed), n_test))?;
    let (mut lhs, mut gap) = (0.0, 0.0);
    for (&x, &y) in test.x_jc.iter().zip(&test.y) {
        let p = f_ssil.predict(x);
        lhs += (p - y) * (p - y);
        let d = p - f_sup.predict(x);
        gap += d * d;
    }
    let n = n_test as f64;
    let variance_term = task.conditional_variance();
    Ok(DecompositionReport {
        lhs: lhs / n,
        gap_term: gap / n,
        variance_term,
        closed_form_lhs: task.bias_g * task.bias_g + variance_term,
        n_test,
    })
}

fn test_seed(seed: u64) -> u64 {
    crate::simulator::frame_seed(seed, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    Mlp,
}

/// One configuration of a sweep: both models trained, then decomposed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsrlRow {
    pub model: ModelKind,
    pub seed: u64,
    pub bias_g: f64,
    pub sigma_2: f64,
    /// Parameters of the linear ssil model; NaN for the MLP.
    pub weight: f64,
    pub intercept: f64,
    pub report: DecompositionReport,
}

/// Trains an ssil and a supervised model on `task` and decomposes the error
/// of the former on `n_test` fresh samples.
pub fn run_configuration(task: &GaussianTask, model: ModelKind, cfg: &TrainConfig, n_test: usize) -> Result<SsrlRow> {
    let data = make_task(task)?;
    let (weight, intercept, report) = match model {
        ModelKind::Linear => {
            let mut ssil = LinearRegressor::default();
            let mut sup = LinearRegressor::default();
            train(&mut ssil, &data, TrainMode::Ssil, cfg)?;
            train(&mut sup, &data, TrainMode::Supervised, cfg)?;
            (
                ssil.weight,
                ssil.intercept,
                error_decomposition(&ssil, &sup, task, n_test)?,
            )
        }
        ModelKind::Mlp => {
            let mut ssil = Mlp::new(task.seed);
            let mut sup = Mlp::new(task.seed);
            train(&mut ssil, &data, TrainMode::Ssil, cfg)?;
            train(&mut sup, &data, TrainMode::Supervised, cfg)?;
            (f64::NAN, f64::NAN, error_decomposition(&ssil, &sup, task, n_test)?)
        }
    };
    Ok(SsrlRow {
        model,
        seed: task.seed,
        bias_g: task.bias_g,
        sigma_2: task.sigma_2,
        weight,
        intercept,
        report,
    })
}

pub const REPORT_HEADER: &str =
    "model,seed,bias_g,sigma_2,weight,intercept,lhs,gap_term,variance_term,gap_plus_variance,closed_form_lhs,identity_error,n_test";

pub fn write_report_csv<W: Write>(rows: &[SsrlRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let err = |e: csv::Error| SsrlError::Report(e.to_string());
    w.write_record(REPORT_HEADER.split(',')).map_err(err)?;
    for r in rows {
        let model = match r.model {
            ModelKind::Linear => "linear",
            ModelKind::Mlp => "mlp",
        };
        let rep = &r.report;
        w.write_record([
            model.to_string(),
            r.seed.to_string(),
            r.bias_g.to_string(),
            r.sigma_2.to_string(),
            r.weight.to_string(),
            r.intercept.to_string(),
            rep.lhs.to_string(),
            rep.gap_term.to_string(),
            rep.variance_term.to_string(),
            (rep.gap_term + rep.variance_term).to_string(),
            rep.closed_form_lhs.to_string(),
            rep.identity_error().to_string(),
            rep.n_test.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| SsrlError::Report(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_sensors_see_the_target() {
        let task = GaussianTask {
            sigma_1: 0.0,
            sigma_2: 0.0,
            bias_g: 0.0,
            n: 50,
            ..Default::default()
        };
        let d = make_task(&task).unwrap();
        assert_eq!(d.x_jc, d.y);
        assert_eq!(d.x_j, d.y);
        assert_eq!(make_task(&task).unwrap(), d);
    }

    #[test]
    fn target_moments() {
        let task = GaussianTask {
            sigma_y: 2.0,
            n: 100_000,
            seed: 4,
            ..Default::default()
        };
        let d = make_task(&task).unwrap();
        let n = d.len() as f64;
        let mean = d.y.iter().sum::<f64>() / n;
        let var = d.y.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 3.0 * 2.0 / n.sqrt(), "{mean}");
        // Var of the sample variance of a normal is 2σ⁴/(n−1).
        assert!((var - 4.0).abs() < 3.0 * (2.0 * 16.0 / (n - 1.0)).sqrt(), "{var}");
    }

    #[test]
    fn rejects_bad_tasks() {
        for bad in [
            GaussianTask {
                sigma_y: 0.0,
                ..Default::default()
            },
            GaussianTask {
                sigma_1: -1.0,
                ..Default::default()
            },
            GaussianTask {
                n: 1,
                ..Default::default()
            },
            GaussianTask {
                bias_g: f64::NAN,
                ..Default::default()
            },
        ] {
            assert!(make_task(&bad).is_err());
        }
    }

    #[test]
    fn noiseless_training_is_exact() {
        let task = GaussianTask {
            sigma_1: 0.0,
            sigma_2: 0.0,
            bias_g: 0.3,
            n: 1000,
            ..Default::default()
        };
        let d = make_task(&task).unwrap();
        let mut f = LinearRegressor::default();
        let stats = train(&mut f, &d, TrainMode::Ssil, &TrainConfig::default()).unwrap();
        assert!(stats.converged);
        assert!(
            (f.weight - 1.0).abs() < 1e-7 && (f.intercept - 0.3).abs() < 1e-7,
            "{f:?}"
        );
    }

    #[test]
    fn ssil_set_ignores_the_latent_target() {
        let mut d = make_task(&GaussianTask {
            n: 500,
            ..Default::default()
        })
        .unwrap();
        let before = d.ssil_set();
        d.y.iter_mut().for_each(|y| *y = f64::NAN);
        assert_eq!(d.ssil_set(), before);
    }

    #[test]
    fn cap_with_falling_loss_is_an_error() {
        let d = make_task(&GaussianTask {
            n: 100,
            ..Default::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            lr: 1e-3,
            epochs: 5,
            ..Default::default()
        };
        let mut f = LinearRegressor::default();
        assert!(matches!(
            train(&mut f, &d, TrainMode::Ssil, &cfg),
            Err(SsrlError::NonConvergence { .. })
        ));
        let cfg = TrainConfig {
            lr: 5.0,
            epochs: 500,
            ..Default::default()
        };
        let mut f = LinearRegressor::default();
        assert!(matches!(
            train(&mut f, &d, TrainMode::Ssil, &cfg),
            Err(SsrlError::Diverged { .. })
        ));
    }

    #[test]
    fn report_csv_has_header_and_rows() {
        let task = GaussianTask {
            n: 2000,
            ..Default::default()
        };
        let row = run_configuration(&task, ModelKind::Linear, &TrainConfig::default(), 2000).unwrap();
        let mut buf = Vec::new();
        write_report_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(REPORT_HEADER));
        assert!(lines.next().unwrap().starts_with("linear,0,0.2,0.5,"));
        assert_eq!(lines.next(), None);
    }
}
