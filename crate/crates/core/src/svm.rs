//! Soft-margin SVMs on precomputed Gram matrices or explicit features,
//! one-vs-rest multiclass, and weight mining for linear models.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_C: f64 = 10.0;
pub const DEFAULT_TOL: f64 = 1e-4;
/// SMO iteration cap, raised to `100n` for large problems.
pub const MAX_ITERATIONS: u64 = 10_000_000;
pub const DEFAULT_WEIGHT_THRESHOLD: f64 = 1e-3;

const TAU: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub tol: f64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: DEFAULT_C,
            tol: DEFAULT_TOL,
        }
    }
}

impl SvmParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!("invalid SVM parameters C={} tol={}", self.c, self.tol)));
        }
        Ok(())
    }
}

/// Dual solution of `min ½ αᵀQα - Σα` with `0 ≤ α ≤ C`, `yᵀα = 0`,
/// `Q_ij = y_i y_j K_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    /// Decision offset: `f(x) = Σ α_i y_i K(x_i, x) + bias`.
    pub bias: f64,
    pub iterations: u64,
    pub objective: f64,
}

/// SMO with second-order working-set selection; ties go to the lowest index.
pub fn solve_dual(gram: &DMatrix<f64>, y: &[f64], params: SvmParams) -> Result<DualSolution> {
    params.validate()?;
    let n = y.len();
    if gram.nrows() != n || gram.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: gram.nrows(),
        });
    }
    if n < 2 || !y.iter().any(|&v| v > 0.0) || !y.iter().any(|&v| v < 0.0) {
        return Err(Error::SingleClass);
    }
    let c = params.c;
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let diag: Vec<f64> = (0..n).map(|t| gram[(t, t)]).collect();
    let max_iter = MAX_ITERATIONS.max(100 * n as u64);
    let in_up = |a: f64, yt: f64| if yt > 0.0 { a < c } else { a > 0.0 };
    let in_low = |a: f64, yt: f64| if yt > 0.0 { a > 0.0 } else { a < c };
    let mut iterations = 0u64;
    loop {
        let mut i = usize::MAX;
        let mut gmax = f64::NEG_INFINITY;
        for t in 0..n {
            if in_up(alpha[t], y[t]) {
                let v = -y[t] * grad[t];
                if v > gmax {
                    gmax = v;
                    i = t;
                }
            }
        }
        let mut gmin = f64::INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        let ki = if i == usize::MAX { None } else { Some(gram.column(i)) };
        for t in 0..n {
            if !in_low(alpha[t], y[t]) {
                continue;
            }
            let v = -y[t] * grad[t];
            gmin = gmin.min(v);
            if let Some(ki) = &ki {
                let b = gmax - v;
                if b > 0.0 {
                    let mut a = diag[i] + diag[t] - 2.0 * ki[t];
                    if a <= 0.0 {
                        a = TAU;
                    }
                    let score = -b * b / a;
                    if score < best {
                        best = score;
                        j = t;
                    }
                }
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < params.tol {
            break;
        }
        if iterations >= max_iter {
            return Err(Error::NoConvergence(iterations));
        }
        iterations += 1;
        let ki = gram.column(i);
        let kj = gram.column(j);
        let quad = (diag[i] + diag[j] - 2.0 * ki[j]).max(TAU);
        let mut step = (gmax + y[j] * grad[j]) / quad;
        step = step.min(if y[i] > 0.0 { c - alpha[i] } else { alpha[i] });
        step = step.min(if y[j] > 0.0 { alpha[j] } else { c - alpha[j] });
        alpha[i] = (alpha[i] + y[i] * step).clamp(0.0, c);
        alpha[j] = (alpha[j] - y[j] * step).clamp(0.0, c);
        for t in 0..n {
            grad[t] += y[t] * step * (ki[t] - kj[t]);
        }
    }
    let bias = -offset(&alpha, &grad, y, c);
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    Ok(DualSolution {
        alpha,
        bias,
        iterations,
        objective,
    })
}

/// ρ: mean of `y_i G_i` over free variables, or the midpoint of the
/// feasible interval when none are free.
fn offset(alpha: &[f64], grad: &[f64], y: &[f64], c: f64) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..alpha.len() {
        let yg = y[t] * grad[t];
        let at_upper = alpha[t] >= c;
        let at_lower = alpha[t] <= 0.0;
        if !at_upper && !at_lower {
            sum += yg;
            count += 1;
        } else if (y[t] > 0.0) == at_upper {
            ub = ub.min(yg);
        } else {
            lb = lb.max(yg);
        }
    }
    if count > 0 {
        sum / count as f64
    } else {
        0.5 * (ub + lb)
    }
}

/// Dual objective `½ αᵀQα - Σα` evaluated directly.
pub fn dual_objective(gram: &DMatrix<f64>, y: &[f64], alpha: &[f64]) -> f64 {
    let n = y.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += alpha[i] * alpha[j] * y[i] * y[j] * gram[(i, j)];
        }
    }
    0.5 * quad - alpha.iter().sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Linear,
    Kernel,
}

/// One binary machine; `decision(x) = w·x + b` or `Σ coef_i K(x_{s_i}, x) + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryMachine {
    /// Label scored positive.
    pub positive: usize,
    pub bias: f64,
    /// Linear weights (linear models only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Indices into the training set with α > 0.
    pub support: Vec<usize>,
    /// α at the support indices.
    pub alpha: Vec<f64>,
    /// Labels (±1) at the support indices.
    pub support_labels: Vec<f64>,
    pub iterations: u64,
}

impl BinaryMachine {
    fn from_dual(sol: DualSolution, y: &[f64], positive: usize, features: Option<&DMatrix<f64>>) -> Self {
        let support: Vec<usize> = (0..y.len()).filter(|&t| sol.alpha[t] > 0.0).collect();
        let weights = features.map(|x| {
            let mut w = vec![0.0; x.ncols()];
            for &s in &support {
                let coef = sol.alpha[s] * y[s];
                for (wk, xk) in w.iter_mut().zip(x.row(s).iter()) {
                    *wk += coef * xk;
                }
            }
            w
        });
        BinaryMachine {
            positive,
            bias: sol.bias,
            weights,
            alpha: support.iter().map(|&s| sol.alpha[s]).collect(),
            support_labels: support.iter().map(|&s| y[s]).collect(),
            support,
            iterations: sol.iterations,
        }
    }

    /// `input` holds feature rows (linear) or kernel rows against the
    /// full training set (kernel).
    fn decisions(&self, input: &DMatrix<f64>) -> Vec<f64> {
        match &self.weights {
            Some(w) => input
                .row_iter()
                .map(|r| r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + self.bias)
                .collect(),
            None => input
                .row_iter()
                .map(|r| {
                    self.support
                        .iter()
                        .zip(self.alpha.iter().zip(&self.support_labels))
                        .map(|(&s, (a, y))| a * y * r[s])
                        .sum::<f64>()
                        + self.bias
                })
                .collect(),
        }
    }
}

/// A trained SVM: binary (two classes, one machine) or one-vs-rest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub kind: ModelKind,
    pub c: f64,
    /// Class labels in ascending order.
    pub classes: Vec<usize>,
    pub machines: Vec<BinaryMachine>,
    /// Feature dimension (linear) or training-set size (kernel).
    pub input_dim: usize,
}

/// Training data for [`train_binary`] and [`train_ovr`].
#[derive(Clone, Copy, Debug)]
pub enum TrainInput<'a> {
    /// Rows are samples; trains a linear model.
    Features(&'a DMatrix<f64>),
    /// Precomputed training Gram; trains a kernel model.
    Gram(&'a DMatrix<f64>),
}

impl TrainInput<'_> {
    fn n(&self) -> usize {
        match self {
            TrainInput::Features(x) | TrainInput::Gram(x) => x.nrows(),
        }
    }
}

fn gram_of(input: TrainInput<'_>) -> std::borrow::Cow<'_, DMatrix<f64>> {
    match input {
        TrainInput::Features(x) => std::borrow::Cow::Owned(x * x.transpose()),
        TrainInput::Gram(k) => std::borrow::Cow::Borrowed(k),
    }
}

fn check_labels(input: TrainInput<'_>, labels: &[usize]) -> Result<Vec<usize>> {
    if input.n() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: input.n(),
            got: labels.len(),
        });
    }
    if let TrainInput::Gram(k) = input {
        if k.ncols() != k.nrows() {
            return Err(Error::DimensionMismatch {
                expected: k.nrows(),
                got: k.ncols(),
            });
        }
    }
    let mut classes = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    Ok(classes)
}

fn signed(labels: &[usize], positive: usize) -> Vec<f64> {
    labels.iter().map(|&l| if l == positive { 1.0 } else { -1.0 }).collect()
}

fn input_dim(input: TrainInput<'_>) -> (ModelKind, usize, Option<&DMatrix<f64>>) {
    match input {
        TrainInput::Features(x) => (ModelKind::Linear, x.ncols(), Some(x)),
        TrainInput::Gram(k) => (ModelKind::Kernel, k.ncols(), None),
    }
}

/// Two-class SVM; the larger label is the positive class.
pub fn train_binary(input: TrainInput<'_>, labels: &[usize], params: SvmParams) -> Result<SvmModel> {
    let classes = check_labels(input, labels)?;
    if classes.len() != 2 {
        return Err(Error::InvalidConfig(format!("binary SVM needs 2 classes, got {}", classes.len())));
    }
    let gram = gram_of(input);
    let y = signed(labels, classes[1]);
    let sol = solve_dual(&gram, &y, params)?;
    let (kind, dim, features) = input_dim(input);
    Ok(SvmModel {
        kind,
        c: params.c,
        machines: vec![BinaryMachine::from_dual(sol, &y, classes[1], features)],
        classes,
        input_dim: dim,
    })
}

/// One binary machine per class, class vs the rest.
pub fn train_ovr(input: TrainInput<'_>, labels: &[usize], params: SvmParams) -> Result<SvmModel> {
    let classes = check_labels(input, labels)?;
    let gram = gram_of(input);
    let (kind, dim, features) = input_dim(input);
    let machines = classes
        .par_iter()
        .map(|&cls| {
            let y = signed(labels, cls);
            let sol = solve_dual(&gram, &y, params)?;
            Ok(BinaryMachine::from_dual(sol, &y, cls, features))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SvmModel {
        kind,
        c: params.c,
        classes,
        machines,
        input_dim: dim,
    })
}

impl SvmModel {
    fn check_input(&self, input: &DMatrix<f64>) -> Result<()> {
        if input.ncols() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: input.ncols(),
            });
        }
        Ok(())
    }

    /// Decision values, one row per input and one column per machine.
    pub fn decision_values(&self, input: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(input)?;
        let cols: Vec<Vec<f64>> = self.machines.iter().map(|m| m.decisions(input)).collect();
        Ok(DMatrix::from_fn(input.nrows(), cols.len(), |r, c| cols[c][r]))
    }

    /// Binary: positive class when the decision is ≥ 0. OvR: argmax,
    /// ties to the lowest class.
    pub fn predict(&self, input: &DMatrix<f64>) -> Result<Vec<usize>> {
        let dv = self.decision_values(input)?;
        Ok(dv
            .row_iter()
            .map(|r| {
                if self.machines.len() == 1 {
                    if r[0] >= 0.0 {
                        self.classes[1]
                    } else {
                        self.classes[0]
                    }
                } else {
                    let mut best = 0;
                    for k in 1..r.len() {
                        if r[k] > r[best] {
                            best = k;
                        }
                    }
                    self.machines[best].positive
                }
            })
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Thresholded weights scaled per class to `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightReport {
    pub threshold: f64,
    pub classes: Vec<usize>,
    /// One scaled vector per class.
    pub weights: Vec<Vec<f64>>,
    /// `(class, feature)` pairs with `|w| ≥ 0.5` in exactly one class.
    pub intention_specific: Vec<(usize, usize)>,
}

/// Scaled magnitude above which a component counts as high.
pub const HIGH_WEIGHT: f64 = 0.5;

pub fn mine_weights(model: &SvmModel, threshold: f64) -> Result<WeightReport> {
    if model.kind != ModelKind::Linear {
        return Err(Error::NotLinear);
    }
    let mut weights = Vec::with_capacity(model.machines.len());
    for m in &model.machines {
        let w = m.weights.as_ref().ok_or(Error::NotLinear)?;
        let mut kept: Vec<f64> = w.iter().map(|&v| if v.abs() < threshold { 0.0 } else { v }).collect();
        let max = kept.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if max > 0.0 {
            kept.iter_mut().for_each(|v| *v /= max);
        }
        weights.push(kept);
    }
    let dim = weights.first().map_or(0, Vec::len);
    let mut intention_specific = Vec::new();
    for f in 0..dim {
        let high: Vec<usize> = (0..weights.len()).filter(|&k| weights[k][f].abs() >= HIGH_WEIGHT).collect();
        if let [k] = high[..] {
            intention_specific.push((model.machines[k].positive, f));
        }
    }
    intention_specific.sort_unstable();
    Ok(WeightReport {
        threshold,
        classes: model.machines.iter().map(|m| m.positive).collect(),
        weights,
        intention_specific,
    })
}
