//! Differentiable objectives with analytic gradients, and a central
//! finite-difference checker for them.

use std::borrow::Cow;
use std::sync::Arc;

use thiserror::Error;

use crate::data::{Batch, Dataset};
use crate::numerics::{ParamVector, Rng};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObjectiveError {
    #[error("parameter vector has {found} entries, objective expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("batch index {index} is out of range for {n} samples")]
    InvalidBatchIndex { index: usize, n: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("parameters contain a non-finite value at index {0}")]
    NonFiniteParameter(usize),
    #[error("invalid objective: {0}")]
    Invalid(String),
}

/// A known minimizer and its loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub w: ParamVector,
    pub loss: f64,
}

/// A loss over mini-batches with an analytic gradient.
///
/// Batch losses are means over the selected samples. Objectives without a
/// dataset report a single sample.
pub trait Objective: Send + Sync {
    /// Identifies the objective and its parameters.
    fn name(&self) -> String;

    fn dim(&self) -> usize;

    fn num_samples(&self) -> usize;

    fn eval(&self, w: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector), ObjectiveError>;

    fn loss(&self, w: &ParamVector, batch: &Batch) -> Result<f64, ObjectiveError> {
        self.eval(w, batch).map(|(loss, _)| loss)
    }

    fn known_optimum(&self) -> Option<Optimum> {
        None
    }
}

fn check_params(w: &[f64], expected: usize) -> Result<(), ObjectiveError> {
    if w.len() != expected {
        return Err(ObjectiveError::DimensionMismatch {
            expected,
            found: w.len(),
        });
    }
    match w.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(ObjectiveError::NonFiniteParameter(i)),
        None => Ok(()),
    }
}

fn resolve_batch(batch: &Batch, n: usize) -> Result<Cow<'_, [usize]>, ObjectiveError> {
    match batch {
        Batch::Full => Ok(Cow::Owned((0..n).collect())),
        Batch::Indices(idx) => {
            if idx.is_empty() {
                return Err(ObjectiveError::EmptyBatch);
            }
            if let Some(&index) = idx.iter().find(|&&i| i >= n) {
                return Err(ObjectiveError::InvalidBatchIndex { index, n });
            }
            Ok(Cow::Borrowed(idx))
        }
    }
}

/// Separable quadratic `f(w) = sum_i a_i w_i^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObjective {
    coefficients: ParamVector,
}

impl QuadraticObjective {
    pub fn new(coefficients: ParamVector) -> Result<Self, ObjectiveError> {
        if coefficients.is_empty() {
            return Err(ObjectiveError::Invalid(
                "quadratic needs at least one coefficient".into(),
            ));
        }
        Ok(Self { coefficients })
    }

    /// `x^2 + 4 y^2`, on which Adam with a large first-moment weight zig-zags.
    pub fn counterexample() -> Self {
        Self {
            coefficients: [1.0, 4.0].into(),
        }
    }

    pub fn coefficients(&self) -> &ParamVector {
        &self.coefficients
    }
}

impl Objective for QuadraticObjective {
    fn name(&self) -> String {
        format!("quadratic{:?}", self.coefficients.as_slice())
    }

    fn dim(&self) -> usize {
        self.coefficients.len()
    }

    fn num_samples(&self) -> usize {
        1
    }

    fn eval(&self, w: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector), ObjectiveError> {
        check_params(w, self.dim())?;
        resolve_batch(batch, 1)?;
        let loss = self
            .coefficients
            .iter()
            .zip(w.iter())
            .map(|(a, x)| a * x * x)
            .sum();
        let grad = self
            .coefficients
            .iter()
            .zip(w.iter())
            .map(|(a, x)| 2.0 * a * x)
            .collect();
        Ok((loss, ParamVector::from_vec_unchecked(grad)))
    }

    fn known_optimum(&self) -> Option<Optimum> {
        self.coefficients
            .iter()
            .all(|&a| a >= 0.0)
            .then(|| Optimum {
                w: ParamVector::zeros(self.dim()),
                loss: 0.0,
            })
    }
}

/// `(1 - x)^2 + 100 (y - x^2)^2` and its gradient.
pub fn rosenbrock(w: &[f64]) -> Result<(f64, ParamVector), ObjectiveError> {
    check_params(w, 2)?;
    let (x, y) = (w[0], w[1]);
    let r = y - x * x;
    let loss = (1.0 - x).powi(2) + 100.0 * r * r;
    let grad = vec![-2.0 * (1.0 - x) - 400.0 * x * r, 200.0 * r];
    Ok((loss, ParamVector::from_vec_unchecked(grad)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Rosenbrock;

impl Objective for Rosenbrock {
    fn name(&self) -> String {
        "rosenbrock".into()
    }

    fn dim(&self) -> usize {
        2
    }

    fn num_samples(&self) -> usize {
        1
    }

    fn eval(&self, w: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector), ObjectiveError> {
        resolve_batch(batch, 1)?;
        rosenbrock(w)
    }

    fn known_optimum(&self) -> Option<Optimum> {
        Some(Optimum {
            w: [1.0, 1.0].into(),
            loss: 0.0,
        })
    }
}

/// Softmax of `logits` in place; returns `log(sum(exp(logits)))`.
fn softmax_in_place(logits: &mut [f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z /= sum;
    }
    max + sum.ln()
}

/// Multi-class logistic regression with mean cross-entropy loss.
///
/// Parameters are `classes` rows of `dim + 1` values: the weights for each
/// feature followed by the bias.
#[derive(Debug, Clone)]
pub struct LogisticRegressionObjective {
    data: Arc<Dataset>,
}

impl LogisticRegressionObjective {
    pub fn new(data: Arc<Dataset>) -> Self {
        Self { data }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    fn logits(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let width = self.data.dim() + 1;
        for (c, z) in out.iter_mut().enumerate() {
            let row = &w[c * width..(c + 1) * width];
            *z = row[..width - 1]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + row[width - 1];
        }
    }

    /// Class probabilities for sample `i`.
    pub fn probabilities(&self, w: &ParamVector, i: usize) -> Result<Vec<f64>, ObjectiveError> {
        check_params(w, self.dim())?;
        resolve_batch(&Batch::Indices(vec![i]), self.data.len())?;
        let mut p = vec![0.0; self.data.classes()];
        self.logits(w, self.data.row(i), &mut p);
        softmax_in_place(&mut p);
        Ok(p)
    }
}

impl Objective for LogisticRegressionObjective {
    fn name(&self) -> String {
        format!("logreg[{}]", self.data.name())
    }

    fn dim(&self) -> usize {
        self.data.classes() * (self.data.dim() + 1)
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn eval(&self, w: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector), ObjectiveError> {
        check_params(w, self.dim())?;
        let idx = resolve_batch(batch, self.data.len())?;
        let classes = self.data.classes();
        let width = self.data.dim() + 1;
        let mut grad = vec![0.0; self.dim()];
        let mut p = vec![0.0; classes];
        let mut loss = 0.0;
        for &i in idx.iter() {
            let x = self.data.row(i);
            let y = self.data.label(i);
            self.logits(w, x, &mut p);
            let z_y = p[y];
            let lse = softmax_in_place(&mut p);
            loss += lse - z_y;
            for c in 0..classes {
                let err = p[c] - if c == y { 1.0 } else { 0.0 };
                let row = &mut grad[c * width..(c + 1) * width];
                for (g, xj) in row[..width - 1].iter_mut().zip(x) {
                    *g += err * xj;
                }
                row[width - 1] += err;
            }
        }
        let scale = 1.0 / idx.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((loss * scale, ParamVector::from_vec_unchecked(grad)))
    }
}

/// One-hidden-layer ReLU network with softmax cross-entropy.
///
/// Parameter layout: hidden weights (`hidden x dim`, row-major), hidden
/// biases, output weights (`classes x hidden`), output biases.
#[derive(Debug, Clone)]
pub struct MlpObjective {
    data: Arc<Dataset>,
    hidden: usize,
}

struct MlpLayout {
    d: usize,
    h: usize,
    c: usize,
}

impl MlpLayout {
    fn w1(&self) -> std::ops::Range<usize> {
        0..self.h * self.d
    }
    fn b1(&self) -> std::ops::Range<usize> {
        let s = self.h * self.d;
        s..s + self.h
    }
    fn w2(&self) -> std::ops::Range<usize> {
        let s = self.h * self.d + self.h;
        s..s + self.c * self.h
    }
    fn b2(&self) -> std::ops::Range<usize> {
        let s = self.h * self.d + self.h + self.c * self.h;
        s..s + self.c
    }
    fn len(&self) -> usize {
        self.h * self.d + self.h + self.c * self.h + self.c
    }
}

impl MlpObjective {
    pub fn new(data: Arc<Dataset>, hidden: usize) -> Result<Self, ObjectiveError> {
        if hidden == 0 {
            return Err(ObjectiveError::Invalid(
                "hidden layer width must be at least 1".into(),
            ));
        }
        Ok(Self { data, hidden })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn layout(&self) -> MlpLayout {
        MlpLayout {
            d: self.data.dim(),
            h: self.hidden,
            c: self.data.classes(),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let l = self.layout();
        let mut rng = Rng::new(seed);
        let mut w = vec![0.0; l.len()];
        let a1 = (6.0 / (l.d + l.h) as f64).sqrt();
        for x in &mut w[l.w1()] {
            *x = rng.uniform(-a1, a1);
        }
        let a2 = (6.0 / (l.h + l.c) as f64).sqrt();
        for x in &mut w[l.w2()] {
            *x = rng.uniform(-a2, a2);
        }
        ParamVector::from_vec_unchecked(w)
    }

    fn hidden_preactivations(&self, w: &[f64], x: &[f64], out: &mut [f64]) {
        let l = self.layout();
        let w1 = &w[l.w1()];
        let b1 = &w[l.b1()];
        for (k, z) in out.iter_mut().enumerate() {
            *z = w1[k * l.d..(k + 1) * l.d]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                + b1[k];
        }
    }

    /// Smallest hidden pre-activation magnitude over the batch; a finite
    /// difference of width `h` is free of ReLU kinks when this exceeds the
    /// largest change `h` can induce.
    pub fn min_abs_preactivation(
        &self,
        w: &ParamVector,
        batch: &Batch,
    ) -> Result<f64, ObjectiveError> {
        check_params(w, self.dim())?;
        let idx = resolve_batch(batch, self.data.len())?;
        let mut z = vec![0.0; self.hidden];
        let mut min = f64::INFINITY;
        for &i in idx.iter() {
            self.hidden_preactivations(w, self.data.row(i), &mut z);
            min = z.iter().fold(min, |m, v| m.min(v.abs()));
        }
        Ok(min)
    }
}

impl Objective for MlpObjective {
    fn name(&self) -> String {
        format!("mlp[h={}][{}]", self.hidden, self.data.name())
    }

    fn dim(&self) -> usize {
        self.layout().len()
    }

    fn num_samples(&self) -> usize {
        self.data.len()
    }

    fn eval(&self, w: &ParamVector, batch: &Batch) -> Result<(f64, ParamVector), ObjectiveError> {
        check_params(w, self.dim())?;
        let idx = resolve_batch(batch, self.data.len())?;
        let l = self.layout();
        let w2 = &w[l.w2()];
        let b2 = &w[l.b2()];
        let mut grad = vec![0.0; l.len()];
        let mut z1 = vec![0.0; l.h];
        let mut a1 = vec![0.0; l.h];
        let mut p = vec![0.0; l.c];
        let mut da1 = vec![0.0; l.h];
        let mut loss = 0.0;

        for &i in idx.iter() {
            let x = self.data.row(i);
            let y = self.data.label(i);
            self.hidden_preactivations(w, x, &mut z1);
            for (a, &z) in a1.iter_mut().zip(&z1) {
                *a = z.max(0.0);
            }
            for (c, out) in p.iter_mut().enumerate() {
                *out = w2[c * l.h..(c + 1) * l.h]
                    .iter()
                    .zip(&a1)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    + b2[c];
            }
            let z_y = p[y];
            let lse = softmax_in_place(&mut p);
            loss += lse - z_y;

            da1.iter_mut().for_each(|v| *v = 0.0);
            {
                let (head, tail) = grad.split_at_mut(l.w2().start);
                let gw2 = &mut tail[..l.c * l.h];
                for c in 0..l.c {
                    let dz = p[c] - if c == y { 1.0 } else { 0.0 };
                    for k in 0..l.h {
                        gw2[c * l.h + k] += dz * a1[k];
                        da1[k] += dz * w2[c * l.h + k];
                    }
                }
                let gw1 = &mut head[..l.h * l.d];
                for k in 0..l.h {
                    // ReLU subgradient at 0 is 0
                    if z1[k] > 0.0 {
                        let dz = da1[k];
                        for (g, xj) in gw1[k * l.d..(k + 1) * l.d].iter_mut().zip(x) {
                            *g += dz * xj;
                        }
                    }
                }
            }
            for k in 0..l.h {
                if z1[k] > 0.0 {
                    grad[l.b1().start + k] += da1[k];
                }
            }
            for c in 0..l.c {
                grad[l.b2().start + c] += p[c] - if c == y { 1.0 } else { 0.0 };
            }
        }
        let scale = 1.0 / idx.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        Ok((loss * scale, ParamVector::from_vec_unchecked(grad)))
    }
}

/// Largest relative disagreement between the analytic gradient and a central
/// finite difference of step `h`, over all coordinates.
///
/// Each coordinate contributes `|fd - an| / max(1e-12, |fd| + |an|)`.
pub fn gradcheck(
    obj: &dyn Objective,
    w: &ParamVector,
    batch: &Batch,
    h: f64,
) -> Result<f64, ObjectiveError> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(ObjectiveError::Invalid(format!(
            "step must be positive, got {h}"
        )));
    }
    let (_, analytic) = obj.eval(w, batch)?;
    let mut probe = w.clone();
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let orig = w[i];
        probe.as_mut_slice()[i] = orig + h;
        let up = obj.loss(&probe, batch)?;
        probe.as_mut_slice()[i] = orig - h;
        let down = obj.loss(&probe, batch)?;
        probe.as_mut_slice()[i] = orig;
        let fd = (up - down) / (2.0 * h);
        let an = analytic[i];
        let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}
