//! L2-regularized logistic regression on standardized features.
//!
//! The objective over `n` examples with labels `y` in {-1, +1} is
//!
//! ```text
//! (1/n) * sum_i log(1 + exp(-y_i (w.x_i + b)))  +  ||w||^2 / (2 c n)
//! ```
//!
//! which is the usual `C * sum(loss) + ||w||^2 / 2` scaled by `1 / (c n)`:
//! a larger `c` means weaker regularization. The bias is not penalized.
//! Minimization is full-batch Newton with Armijo backtracking, starting
//! from zero, so fits are deterministic and the objective never increases.

use std::collections::HashSet;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Standardizer;
use crate::indexing::{Dataset, Example};
use crate::metrics::{auroc, patient_level_auroc, EvalMode, PredictionRecord, PredictionSet};
use crate::sampling::Fold;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepPolicy {
    /// Armijo sufficient-decrease constant.
    pub sufficient_decrease: f64,
    pub max_halvings: usize,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            sufficient_decrease: 1e-4,
            max_halvings: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub c_grid: Vec<f64>,
    pub max_iterations: usize,
    /// Convergence threshold on the Euclidean norm of the full gradient.
    pub tolerance: f64,
    pub step: StepPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            c_grid: vec![1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3],
            max_iterations: 100,
            tolerance: 1e-6,
            step: StepPolicy::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.c_grid.is_empty() {
            return Err(Error::Config("c_grid is empty".into()));
        }
        if self.c_grid.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Config("c_grid values must be positive".into()));
        }
        if self.c_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("c_grid must be strictly ascending".into()));
        }
        if !(self.tolerance > 0.0) || self.max_iterations == 0 {
            return Err(Error::Config("tolerance and max_iterations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// Objective at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
}

/// Regularized logistic objective over a dense standardized design.
#[derive(Clone, Debug)]
pub struct Objective {
    x: Vec<f64>,
    targets: Vec<f64>,
    n: usize,
    d: usize,
    lambda: f64,
}

fn softplus(m: f64) -> f64 {
    if m > 0.0 {
        m + (-m).exp().ln_1p()
    } else {
        m.exp().ln_1p()
    }
}

fn sigmoid(m: f64) -> f64 {
    if m >= 0.0 {
        1.0 / (1.0 + (-m).exp())
    } else {
        let e = m.exp();
        e / (1.0 + e)
    }
}

impl Objective {
    /// `x` is row-major `n x d`; `labels` are 0/1.
    pub fn new(x: Vec<f64>, labels: &[u8], d: usize, c: f64) -> Result<Self> {
        let n = labels.len();
        if x.len() != n * d {
            return Err(Error::LengthMismatch(format!("{} values for {n} x {d} design", x.len())));
        }
        if n == 0 {
            return Err(Error::EmptyTrainingSet);
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteFeature { index: i / d.max(1) });
        }
        Ok(Self {
            x,
            targets: labels.iter().map(|&l| f64::from(l)).collect(),
            n,
            d,
            lambda: 1.0 / (c * n as f64),
        })
    }

    /// Number of features; `theta` has one more entry for the bias.
    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn set_c(&mut self, c: f64) {
        self.lambda = 1.0 / (c * self.n as f64);
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    fn margins(&self, theta: &[f64]) -> Vec<f64> {
        let (w, b) = theta.split_at(self.d);
        (0..self.n)
            .map(|i| self.row(i).iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + b[0])
            .collect()
    }

    fn value_at(&self, margins: &[f64], w: &[f64]) -> f64 {
        let loss: f64 = margins
            .iter()
            .zip(&self.targets)
            .map(|(&m, &t)| softplus(m) - t * m)
            .sum();
        loss / self.n as f64 + 0.5 * self.lambda * w.iter().map(|v| v * v).sum::<f64>()
    }

    fn gradient_at(&self, margins: &[f64], w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.d + 1];
        for (i, (&m, &t)) in margins.iter().zip(&self.targets).enumerate() {
            let r = sigmoid(m) - t;
            for (gj, xj) in g.iter_mut().zip(self.row(i)) {
                *gj += r * xj;
            }
            g[self.d] += r;
        }
        let inv_n = 1.0 / self.n as f64;
        for (j, gj) in g.iter_mut().enumerate() {
            *gj *= inv_n;
            if j < self.d {
                *gj += self.lambda * w[j];
            }
        }
        g
    }

    /// `theta` is `(w_0, ..., w_{d-1}, b)`.
    pub fn value(&self, theta: &[f64]) -> f64 {
        self.value_at(&self.margins(theta), &theta[..self.d])
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        self.gradient_at(&self.margins(theta), &theta[..self.d])
    }

    fn hessian(&self, margins: &[f64]) -> DMatrix<f64> {
        let p = self.d + 1;
        let mut h = vec![0.0; p * p];
        let mut row = vec![1.0; p];
        for (i, &m) in margins.iter().enumerate() {
            let s = sigmoid(m);
            let wgt = s * (1.0 - s);
            if wgt == 0.0 {
                continue;
            }
            row[..self.d].copy_from_slice(self.row(i));
            for j in 0..p {
                let a = wgt * row[j];
                let hj = &mut h[j * p..];
                for k in j..p {
                    hj[k] += a * row[k];
                }
            }
        }
        let inv_n = 1.0 / self.n as f64;
        let mut m = DMatrix::zeros(p, p);
        for j in 0..p {
            for k in j..p {
                let v = h[j * p + k] * inv_n;
                m[(j, k)] = v;
                m[(k, j)] = v;
            }
            if j < self.d {
                m[(j, j)] += self.lambda;
            }
        }
        m
    }

    fn newton_direction(&self, margins: &[f64], g: &[f64]) -> Vec<f64> {
        let h = self.hessian(margins);
        let rhs = DVector::from_iterator(g.len(), g.iter().map(|v| -v));
        let mut damping = 0.0;
        loop {
            let mut hd = h.clone();
            if damping > 0.0 {
                for j in 0..hd.nrows() {
                    hd[(j, j)] += damping;
                }
            }
            if let Some(chol) = hd.cholesky() {
                return chol.solve(&rhs).iter().copied().collect();
            }
            damping = if damping == 0.0 { 1e-12 } else { damping * 10.0 };
            if damping > 1e6 {
                // fall back to steepest descent
                return rhs.iter().copied().collect();
            }
        }
    }

    /// Minimizes from `init` (zero when `None`).
    pub fn minimize(&self, init: Option<&[f64]>, config: &TrainConfig) -> (Vec<f64>, FitDiagnostics) {
        let p = self.d + 1;
        let mut theta = init.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
        let mut margins = self.margins(&theta);
        let mut f = self.value_at(&margins, &theta[..self.d]);
        let mut diag = FitDiagnostics {
            objective_trace: vec![f],
            ..Default::default()
        };
        let mut g = self.gradient_at(&margins, &theta[..self.d]);
        loop {
            diag.gradient_norm = norm(&g);
            if diag.gradient_norm <= config.tolerance {
                diag.converged = true;
                break;
            }
            if diag.iterations >= config.max_iterations {
                break;
            }
            let dir = self.newton_direction(&margins, &g);
            let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
            let dmargins = {
                let (dw, db) = dir.split_at(self.d);
                (0..self.n)
                    .map(|i| self.row(i).iter().zip(dw).map(|(a, b)| a * b).sum::<f64>() + db[0])
                    .collect::<Vec<f64>>()
            };
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=config.step.max_halvings {
                let trial_m: Vec<f64> = margins.iter().zip(&dmargins).map(|(m, dm)| m + step * dm).collect();
                let trial_t: Vec<f64> = theta.iter().zip(&dir).map(|(t, d)| t + step * d).collect();
                let trial_f = self.value_at(&trial_m, &trial_t[..self.d]);
                if trial_f <= f + config.step.sufficient_decrease * step * slope {
                    accepted = Some((trial_t, trial_m, trial_f));
                    break;
                }
                step *= 0.5;
            }
            let Some((t, m, fv)) = accepted else {
                // no representable decrease left
                break;
            };
            theta = t;
            margins = m;
            f = fv;
            diag.iterations += 1;
            diag.objective_trace.push(f);
            g = self.gradient_at(&margins, &theta[..self.d]);
        }
        (theta, diag)
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub feature_names: Vec<String>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub standardizer: Standardizer,
    pub c_selected: f64,
    #[serde(skip)]
    pub diagnostics: FitDiagnostics,
}

/// On-disk model layout.
#[derive(Serialize, Deserialize)]
struct ModelFile {
    feature_names: Vec<String>,
    weights: Vec<f64>,
    bias: f64,
    standardizer_mean: Vec<f64>,
    standardizer_std: Vec<f64>,
    c_selected: f64,
}

impl LinearModel {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        let file = ModelFile {
            feature_names: self.feature_names.clone(),
            weights: self.weights.clone(),
            bias: self.bias,
            standardizer_mean: self.standardizer.mean.clone(),
            standardizer_std: self.standardizer.std.clone(),
            c_selected: self.c_selected,
        };
        serde_json::to_writer_pretty(out, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(input: R) -> Result<Self> {
        let f: ModelFile = serde_json::from_reader(input)?;
        let d = f.weights.len();
        if [f.feature_names.len(), f.standardizer_mean.len(), f.standardizer_std.len()]
            .iter()
            .any(|&l| l != d)
        {
            return Err(Error::LengthMismatch("model file vectors differ in length".into()));
        }
        Ok(Self {
            feature_names: f.feature_names,
            weights: f.weights,
            bias: f.bias,
            standardizer: Standardizer {
                mean: f.standardizer_mean,
                std: f.standardizer_std,
            },
            c_selected: f.c_selected,
            diagnostics: FitDiagnostics::default(),
        })
    }
}

fn check_classes(examples: &[Example]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let pos = examples.iter().filter(|e| e.label == 1).count();
    if pos == 0 || pos == examples.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

fn fit_standardizer(examples: &[Example], d: usize) -> Result<Standardizer> {
    if let Some(i) = examples
        .iter()
        .position(|e| e.features.iter().any(|v| v.is_infinite()))
    {
        return Err(Error::NonFiniteFeature { index: i });
    }
    Standardizer::fit(examples.iter().map(|e| e.features.as_slice()), d)
}

fn design(examples: &[Example], standardizer: &Standardizer) -> Result<Vec<f64>> {
    let d = standardizer.dim();
    let mut x = vec![0.0; examples.len() * d];
    for (ex, row) in examples.iter().zip(x.chunks_mut(d.max(1))) {
        standardizer.apply_into(&ex.features, &mut row[..d])?;
    }
    Ok(x)
}

/// Training data standardized once, reusable across `c` values.
struct Prepared {
    standardizer: Standardizer,
    objective: Objective,
}

impl Prepared {
    fn new(examples: &[Example], d: usize) -> Result<Self> {
        check_classes(examples)?;
        let standardizer = fit_standardizer(examples, d)?;
        let x = design(examples, &standardizer)?;
        let labels: Vec<u8> = examples.iter().map(|e| e.label).collect();
        let objective = Objective::new(x, &labels, d, 1.0)?;
        Ok(Self {
            standardizer,
            objective,
        })
    }

    fn fit(&mut self, c: f64, config: &TrainConfig, init: Option<&[f64]>) -> (Vec<f64>, FitDiagnostics) {
        self.objective.set_c(c);
        self.objective.minimize(init, config)
    }
}

/// Fits a model with regularization `c` on every example of `dataset`.
pub fn train(dataset: &Dataset, c: f64, config: &TrainConfig) -> Result<LinearModel> {
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::Config(format!("c must be positive, got {c}")));
    }
    let d = dataset.feature_dictionary.len();
    let mut prepared = Prepared::new(&dataset.examples, d)?;
    let (theta, diagnostics) = prepared.fit(c, config, None);
    Ok(LinearModel {
        feature_names: dataset.feature_dictionary.entries().to_vec(),
        weights: theta[..d].to_vec(),
        bias: theta[d],
        standardizer: prepared.standardizer,
        c_selected: c,
        diagnostics,
    })
}

/// `w . standardize(x) + b` for each example.
pub fn decision_scores(model: &LinearModel, examples: &[Example]) -> Result<Vec<f64>> {
    let d = model.weights.len();
    let mut z = vec![0.0; d];
    examples
        .iter()
        .map(|ex| {
            model.standardizer.apply_into(&ex.features, &mut z)?;
            Ok(z.iter().zip(&model.weights).map(|(a, b)| a * b).sum::<f64>() + model.bias)
        })
        .collect()
}

pub fn prediction_set(examples: &[Example], scores: &[f64]) -> PredictionSet {
    PredictionSet {
        records: examples
            .iter()
            .zip(scores)
            .map(|(e, &score)| PredictionRecord {
                admission_id: e.admission_id.clone(),
                t_p: e.t_p,
                score,
                label: e.label,
            })
            .collect(),
    }
}

pub fn evaluate(examples: &[Example], scores: &[f64], mode: EvalMode) -> Result<f64> {
    match mode {
        EvalMode::Pointwise => auroc(scores, &examples.iter().map(|e| e.label).collect::<Vec<_>>()),
        EvalMode::PatientLevel => patient_level_auroc(&prediction_set(examples, scores)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CSelection {
    pub c: f64,
    /// Mean validation AUROC per grid value.
    pub mean_auroc: Vec<f64>,
}

/// Grid value with the highest score; ties go to the smallest value.
pub fn argmax_c(grid: &[f64], scores: &[f64]) -> Option<f64> {
    let mut best: Option<(f64, f64)> = None;
    for (&c, &s) in grid.iter().zip(scores) {
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((c, s));
        }
    }
    best.map(|(c, _)| c)
}

/// Cross-validated choice of `c`: for every fold the grid is swept in
/// ascending order, each fit warm-started from the previous one.
pub fn select_c(train_set: &Dataset, folds: &[Fold], config: &TrainConfig, mode: EvalMode) -> Result<CSelection> {
    config.validate()?;
    if folds.is_empty() {
        return Err(Error::EmptyInput("no cross-validation folds"));
    }
    let d = train_set.feature_dictionary.len();
    let mut totals = vec![0.0; config.c_grid.len()];
    for fold in folds {
        let fit_ids: HashSet<&str> = fold.fit_ids.iter().map(String::as_str).collect();
        let val_ids: HashSet<&str> = fold.val_ids.iter().map(String::as_str).collect();
        let fit = train_set.restrict(&fit_ids);
        let val = train_set.restrict(&val_ids);
        let mut prepared = Prepared::new(&fit.examples, d)?;
        let val_x = design(&val.examples, &prepared.standardizer)?;
        let mut warm: Option<Vec<f64>> = None;
        for (slot, &c) in config.c_grid.iter().enumerate() {
            let (theta, _) = prepared.fit(c, config, warm.as_deref());
            let scores: Vec<f64> = val_x
                .chunks(d.max(1))
                .take(val.len())
                .map(|row| row.iter().zip(&theta[..d]).map(|(a, b)| a * b).sum::<f64>() + theta[d])
                .collect();
            totals[slot] += evaluate(&val.examples, &scores, mode)?;
            warm = Some(theta);
        }
    }
    let mean_auroc: Vec<f64> = totals.iter().map(|t| t / folds.len() as f64).collect();
    let c = argmax_c(&config.c_grid, &mean_auroc).expect("grid is non-empty");
    Ok(CSelection { c, mean_auroc })
}
