//! The DEAM optimizer and the baselines it is compared against.
//!
//! DEAM replaces Adam's fixed first-moment weight with one derived from the
//! angle between the previous update volume `m / sqrt(v_hat)` and the
//! current gradient, and adds a backtrack coefficient that partially undoes
//! the previous update when that angle is obtuse. Both are computed from the
//! same angle each step. The second moment uses the AMSGrad running maximum.
//! No bias correction is applied to either moment.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{angle_between, l2_norm, sqrt_ratio, NumericsError, ParamVector};

/// Normalizing constant for the adaptive momentum weight, `10 (2 + pi) / (2 pi)`.
///
/// Chosen so that the angle-driven weight averages to 0.1 when the angle is
/// uniform on `[0, pi]` and epsilon is zero.
pub const K: f64 = 10.0 * (2.0 + PI) / (2.0 * PI);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("angle {0} is outside [0, pi]")]
    AngleOutOfRange(f64),
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("state dimension {state} does not match {what} dimension {found}")]
    DimensionMismatch {
        state: usize,
        what: &'static str,
        found: usize,
    },
    #[error("non-finite value in {field} at step {step}")]
    NonFinite { field: &'static str, step: u64 },
}

/// Definition of the backtrack coefficient `d_t` as a function of the angle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BacktrackVariant {
    /// `min(0.5 cos theta, 0)`.
    #[default]
    ClampedCos,
    /// `0.5 cos theta`.
    UnclampedCos,
    /// `-1 / (1 + exp(-(theta - pi/2))) + 1/2`.
    SigmoidBased,
    /// `-2 / (1 + exp(-2 (theta - pi/2))) + 1`.
    TanhBased,
    /// Always zero.
    None,
}

impl BacktrackVariant {
    pub const ALL: [BacktrackVariant; 5] = [
        BacktrackVariant::ClampedCos,
        BacktrackVariant::UnclampedCos,
        BacktrackVariant::SigmoidBased,
        BacktrackVariant::TanhBased,
        BacktrackVariant::None,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BacktrackVariant::ClampedCos => "clamped_cos",
            BacktrackVariant::UnclampedCos => "unclamped_cos",
            BacktrackVariant::SigmoidBased => "sigmoid_based",
            BacktrackVariant::TanhBased => "tanh_based",
            BacktrackVariant::None => "none",
        }
    }

    /// Closed interval containing every value the variant can take on `[0, pi]`.
    pub fn range(self) -> (f64, f64) {
        let sigmoid_edge = 1.0 / (1.0 + (-FRAC_PI_2).exp()) - 0.5;
        let tanh_edge = FRAC_PI_2.tanh();
        match self {
            BacktrackVariant::ClampedCos => (-0.5, 0.0),
            BacktrackVariant::UnclampedCos => (-0.5, 0.5),
            BacktrackVariant::SigmoidBased => (-sigmoid_edge, sigmoid_edge),
            BacktrackVariant::TanhBased => (-tanh_edge, tanh_edge),
            BacktrackVariant::None => (0.0, 0.0),
        }
    }
}

impl fmt::Display for BacktrackVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How the first-moment weight is chosen each step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum MomentumWeight {
    /// Derived from the angle via [`deam_beta1`].
    #[default]
    Adaptive,
    /// A fixed weight on the current gradient. Used to reduce DEAM to
    /// bias-correction-free AMSGrad.
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeamHyperparams {
    pub beta2: f64,
    pub epsilon: f64,
    pub div_guard: f64,
    pub backtrack: BacktrackVariant,
    pub momentum_weight: MomentumWeight,
}

impl Default for DeamHyperparams {
    fn default() -> Self {
        Self {
            beta2: 0.999,
            epsilon: 0.001,
            div_guard: 1e-8,
            backtrack: BacktrackVariant::ClampedCos,
            momentum_weight: MomentumWeight::Adaptive,
        }
    }
}

impl DeamHyperparams {
    pub fn with_backtrack(mut self, backtrack: BacktrackVariant) -> Self {
        self.backtrack = backtrack;
        self
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn k(&self) -> f64 {
        K
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        if !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(OptimizerError::InvalidHyperparameter(format!(
                "beta2 must lie in (0, 1), got {}",
                self.beta2
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0 / K) {
            return Err(OptimizerError::InvalidHyperparameter(format!(
                "epsilon must lie in (0, 1/K) = (0, {}), got {}",
                1.0 / K,
                self.epsilon
            )));
        }
        if !(self.div_guard >= 0.0 && self.div_guard.is_finite()) {
            return Err(OptimizerError::InvalidHyperparameter(format!(
                "div_guard must be finite and non-negative, got {}",
                self.div_guard
            )));
        }
        if let MomentumWeight::Fixed(b) = self.momentum_weight {
            if !(b > 0.0 && b <= 1.0) {
                return Err(OptimizerError::InvalidHyperparameter(format!(
                    "fixed momentum weight must lie in (0, 1], got {b}"
                )));
            }
        }
        Ok(())
    }
}

fn check_angle(theta: f64) -> Result<(), OptimizerError> {
    if (0.0..=PI).contains(&theta) {
        Ok(())
    } else {
        Err(OptimizerError::AngleOutOfRange(theta))
    }
}

/// Adaptive weight on the current gradient: `sin(theta) / K + epsilon` for an
/// acute angle, `1 / K` otherwise.
///
/// Only `hp.epsilon` is read; epsilon is not range-checked here so that the
/// `epsilon = 0` limit can be evaluated.
pub fn deam_beta1(theta: f64, hp: &DeamHyperparams) -> Result<f64, OptimizerError> {
    check_angle(theta)?;
    if theta < FRAC_PI_2 {
        Ok(theta.sin() / K + hp.epsilon)
    } else {
        Ok(1.0 / K)
    }
}

pub fn deam_backtrack(theta: f64, variant: BacktrackVariant) -> Result<f64, OptimizerError> {
    check_angle(theta)?;
    let shifted = theta - FRAC_PI_2;
    Ok(match variant {
        BacktrackVariant::ClampedCos => (0.5 * theta.cos()).min(0.0),
        BacktrackVariant::UnclampedCos => 0.5 * theta.cos(),
        BacktrackVariant::SigmoidBased => -1.0 / (1.0 + (-shifted).exp()) + 0.5,
        BacktrackVariant::TanhBased => -2.0 / (1.0 + (-2.0 * shifted).exp()) + 1.0,
        BacktrackVariant::None => 0.0,
    })
}

/// Per-step quantities reported by DEAM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub theta: f64,
    pub beta1_t: f64,
    pub d_t: f64,
    pub grad_norm: f64,
}

fn check_eta(eta: f64) -> Result<(), OptimizerError> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(OptimizerError::InvalidLearningRate(eta))
    }
}

fn check_dims(state: usize, w: &[f64], g: &[f64]) -> Result<(), OptimizerError> {
    if w.len() != state {
        return Err(OptimizerError::DimensionMismatch {
            state,
            what: "parameter",
            found: w.len(),
        });
    }
    if g.len() != state {
        return Err(OptimizerError::DimensionMismatch {
            state,
            what: "gradient",
            found: g.len(),
        });
    }
    Ok(())
}

fn ensure_finite(values: &[f64], field: &'static str, step: u64) -> Result<(), OptimizerError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(OptimizerError::NonFinite { field, step })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeamState {
    m: ParamVector,
    v: ParamVector,
    v_hat: ParamVector,
    delta_prev: ParamVector,
    t: u64,
    hp: DeamHyperparams,
}

impl DeamState {
    pub fn new(dim: usize, hp: DeamHyperparams) -> Result<Self, OptimizerError> {
        hp.validate()?;
        Ok(Self {
            m: ParamVector::zeros(dim),
            v: ParamVector::zeros(dim),
            v_hat: ParamVector::zeros(dim),
            delta_prev: ParamVector::zeros(dim),
            t: 0,
            hp,
        })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn m(&self) -> &ParamVector {
        &self.m
    }

    pub fn v(&self) -> &ParamVector {
        &self.v
    }

    pub fn v_hat(&self) -> &ParamVector {
        &self.v_hat
    }

    pub fn delta_prev(&self) -> &ParamVector {
        &self.delta_prev
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn hyperparams(&self) -> &DeamHyperparams {
        &self.hp
    }

    /// The previous update volume `m / (sqrt(v_hat) + guard)`, zero wherever
    /// `v_hat` is zero.
    pub fn update_volume(&self) -> ParamVector {
        let guard = self.hp.div_guard;
        let out = self
            .m
            .iter()
            .zip(self.v_hat.iter())
            .map(|(&m, &vh)| {
                if vh == 0.0 {
                    0.0
                } else {
                    sqrt_ratio(m, vh, guard)
                }
            })
            .collect();
        ParamVector::from_vec_unchecked(out)
    }

    /// Applies one update to `w` using the gradient `g` evaluated at `w`.
    ///
    /// On error neither `w` nor the state is modified.
    pub fn step(
        &mut self,
        w: &mut ParamVector,
        g: &ParamVector,
        eta: f64,
    ) -> Result<StepDiagnostics, OptimizerError> {
        let dim = self.dim();
        check_dims(dim, w, g)?;
        check_eta(eta)?;
        let step = self.t + 1;
        ensure_finite(g, "gradient", step)?;

        let hp = self.hp;
        let theta = angle_between(&self.update_volume(), g)?;
        let beta1 = match hp.momentum_weight {
            MomentumWeight::Adaptive => deam_beta1(theta, &hp)?,
            MomentumWeight::Fixed(b) => b,
        };
        let d = deam_backtrack(theta, hp.backtrack)?;

        let mut m = Vec::with_capacity(dim);
        let mut v = Vec::with_capacity(dim);
        let mut v_hat = Vec::with_capacity(dim);
        let mut delta = Vec::with_capacity(dim);
        let mut new_w = Vec::with_capacity(dim);
        for i in 0..dim {
            let gi = g[i];
            let mi = (1.0 - beta1) * self.m[i] + beta1 * gi;
            let vi = hp.beta2 * self.v[i] + (1.0 - hp.beta2) * gi * gi;
            let vhi = self.v_hat[i].max(vi);
            let di = d * self.delta_prev[i] - eta * sqrt_ratio(mi, vhi, hp.div_guard);
            m.push(mi);
            v.push(vi);
            v_hat.push(vhi);
            delta.push(di);
            new_w.push(w[i] + di);
        }
        ensure_finite(&m, "m", step)?;
        ensure_finite(&v, "v", step)?;
        ensure_finite(&v_hat, "v_hat", step)?;
        ensure_finite(&delta, "delta", step)?;
        ensure_finite(&new_w, "w", step)?;

        self.m = ParamVector::from_vec_unchecked(m);
        self.v = ParamVector::from_vec_unchecked(v);
        self.v_hat = ParamVector::from_vec_unchecked(v_hat);
        self.delta_prev = ParamVector::from_vec_unchecked(delta);
        self.t = step;
        *w = ParamVector::from_vec_unchecked(new_w);

        Ok(StepDiagnostics {
            theta,
            beta1_t: beta1,
            d_t: d,
            grad_norm: l2_norm(g),
        })
    }
}

/// Reference optimizers with textbook update rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineConfig {
    Sgd,
    /// Heavy ball: `u = momentum * u - eta * g; w += u`.
    SgdMomentum {
        momentum: f64,
    },
    AdaGrad {
        div_guard: f64,
    },
    RmsProp {
        rho: f64,
        div_guard: f64,
    },
    Adam {
        beta1: f64,
        beta2: f64,
        div_guard: f64,
    },
    AmsGrad {
        beta1: f64,
        beta2: f64,
        div_guard: f64,
    },
}

impl BaselineConfig {
    pub const fn sgd_momentum() -> Self {
        BaselineConfig::SgdMomentum { momentum: 0.9 }
    }

    pub const fn adagrad() -> Self {
        BaselineConfig::AdaGrad { div_guard: 1e-8 }
    }

    pub const fn rmsprop() -> Self {
        BaselineConfig::RmsProp {
            rho: 0.9,
            div_guard: 1e-8,
        }
    }

    pub const fn adam() -> Self {
        BaselineConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            div_guard: 1e-8,
        }
    }

    pub const fn amsgrad() -> Self {
        BaselineConfig::AmsGrad {
            beta1: 0.9,
            beta2: 0.999,
            div_guard: 1e-8,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineConfig::Sgd => "sgd",
            BaselineConfig::SgdMomentum { .. } => "sgd_momentum",
            BaselineConfig::AdaGrad { .. } => "adagrad",
            BaselineConfig::RmsProp { .. } => "rmsprop",
            BaselineConfig::Adam { .. } => "adam",
            BaselineConfig::AmsGrad { .. } => "amsgrad",
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let rate = |name: &str, x: f64| {
            if (0.0..1.0).contains(&x) {
                Ok(())
            } else {
                Err(OptimizerError::InvalidHyperparameter(format!(
                    "{name} must lie in [0, 1), got {x}"
                )))
            }
        };
        let guard = |x: f64| {
            if x >= 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(OptimizerError::InvalidHyperparameter(format!(
                    "div_guard must be finite and non-negative, got {x}"
                )))
            }
        };
        match *self {
            BaselineConfig::Sgd => Ok(()),
            BaselineConfig::SgdMomentum { momentum } => rate("momentum", momentum),
            BaselineConfig::AdaGrad { div_guard } => guard(div_guard),
            BaselineConfig::RmsProp { rho, div_guard } => {
                rate("rho", rho)?;
                guard(div_guard)
            }
            BaselineConfig::Adam {
                beta1,
                beta2,
                div_guard,
            }
            | BaselineConfig::AmsGrad {
                beta1,
                beta2,
                div_guard,
            } => {
                rate("beta1", beta1)?;
                rate("beta2", beta2)?;
                guard(div_guard)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    config: BaselineConfig,
    // velocity, accumulator, or first moment, depending on the method
    first: Vec<f64>,
    second: Vec<f64>,
    second_max: Vec<f64>,
    t: u64,
}

impl BaselineState {
    pub fn new(dim: usize, config: BaselineConfig) -> Result<Self, OptimizerError> {
        config.validate()?;
        Ok(Self {
            config,
            first: vec![0.0; dim],
            second: vec![0.0; dim],
            second_max: vec![0.0; dim],
            t: 0,
        })
    }

    pub fn config(&self) -> &BaselineConfig {
        &self.config
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn step(
        &mut self,
        w: &mut ParamVector,
        g: &ParamVector,
        eta: f64,
    ) -> Result<(), OptimizerError> {
        let dim = self.first.len();
        check_dims(dim, w, g)?;
        check_eta(eta)?;
        let step = self.t + 1;
        ensure_finite(g, "gradient", step)?;

        let mut first = self.first.clone();
        let mut second = self.second.clone();
        let mut second_max = self.second_max.clone();
        let mut new_w = w.as_slice().to_vec();

        match self.config {
            BaselineConfig::Sgd => {
                for (wi, gi) in new_w.iter_mut().zip(g.iter()) {
                    *wi -= eta * gi;
                }
            }
            BaselineConfig::SgdMomentum { momentum } => {
                for i in 0..dim {
                    first[i] = momentum * first[i] - eta * g[i];
                    new_w[i] += first[i];
                }
            }
            BaselineConfig::AdaGrad { div_guard } => {
                for i in 0..dim {
                    second[i] += g[i] * g[i];
                    new_w[i] -= eta * sqrt_ratio(g[i], second[i], div_guard);
                }
            }
            BaselineConfig::RmsProp { rho, div_guard } => {
                for i in 0..dim {
                    second[i] = rho * second[i] + (1.0 - rho) * g[i] * g[i];
                    new_w[i] -= eta * sqrt_ratio(g[i], second[i], div_guard);
                }
            }
            BaselineConfig::Adam {
                beta1,
                beta2,
                div_guard,
            } => {
                let bc1 = 1.0 - beta1.powf(step as f64);
                let bc2 = 1.0 - beta2.powf(step as f64);
                for i in 0..dim {
                    first[i] = beta1 * first[i] + (1.0 - beta1) * g[i];
                    second[i] = beta2 * second[i] + (1.0 - beta2) * g[i] * g[i];
                    let m_hat = first[i] / bc1;
                    let v_hat = second[i] / bc2;
                    new_w[i] -= eta * sqrt_ratio(m_hat, v_hat, div_guard);
                }
            }
            BaselineConfig::AmsGrad {
                beta1,
                beta2,
                div_guard,
            } => {
                let bc1 = 1.0 - beta1.powf(step as f64);
                let bc2 = 1.0 - beta2.powf(step as f64);
                for i in 0..dim {
                    first[i] = beta1 * first[i] + (1.0 - beta1) * g[i];
                    second[i] = beta2 * second[i] + (1.0 - beta2) * g[i] * g[i];
                    second_max[i] = second_max[i].max(second[i]);
                    let m_hat = first[i] / bc1;
                    let v_hat = second_max[i] / bc2;
                    new_w[i] -= eta * sqrt_ratio(m_hat, v_hat, div_guard);
                }
            }
        }

        ensure_finite(&first, "first_moment", step)?;
        ensure_finite(&second, "second_moment", step)?;
        ensure_finite(&new_w, "w", step)?;
        self.first = first;
        self.second = second;
        self.second_max = second_max;
        self.t = step;
        *w = ParamVector::from_vec_unchecked(new_w);
        Ok(())
    }
}

/// Learning-rate schedule. Steps are numbered from 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// `eta / sqrt(t)`.
    InverseSqrt,
}

impl Schedule {
    pub fn rate(self, eta: f64, t: u64) -> f64 {
        match self {
            Schedule::Constant => eta,
            Schedule::InverseSqrt => eta / (t.max(1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerSpec {
    Deam(DeamHyperparams),
    Baseline(BaselineConfig),
}

impl OptimizerSpec {
    pub fn name(&self) -> String {
        match self {
            OptimizerSpec::Deam(hp) if hp.backtrack == BacktrackVariant::ClampedCos => {
                "deam".to_string()
            }
            OptimizerSpec::Deam(hp) => format!("deam[{}]", hp.backtrack),
            OptimizerSpec::Baseline(b) => b.name().to_string(),
        }
    }

    pub fn build(&self, dim: usize) -> Result<OptimizerState, OptimizerError> {
        Ok(match self {
            OptimizerSpec::Deam(hp) => OptimizerState::Deam(DeamState::new(dim, *hp)?),
            OptimizerSpec::Baseline(b) => OptimizerState::Baseline(BaselineState::new(dim, *b)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptimizerState {
    Deam(DeamState),
    Baseline(BaselineState),
}

impl OptimizerState {
    /// One update; DEAM additionally reports its diagnostics.
    pub fn step(
        &mut self,
        w: &mut ParamVector,
        g: &ParamVector,
        eta: f64,
    ) -> Result<Option<StepDiagnostics>, OptimizerError> {
        match self {
            OptimizerState::Deam(s) => s.step(w, g, eta).map(Some),
            OptimizerState::Baseline(s) => s.step(w, g, eta).map(|()| None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp() -> DeamHyperparams {
        DeamHyperparams::default()
    }

    #[test]
    fn k_matches_closed_form() {
        // 1/K = 2 pi / (10 (2 + pi)) = 0.12220...
        assert!((1.0 / K - 0.122_203_094_070_331_45).abs() < 1e-15);
    }

    #[test]
    fn beta1_examples() {
        assert_eq!(deam_beta1(0.0, &hp()).unwrap(), 0.001);
        assert!((deam_beta1(PI, &hp()).unwrap() - 0.122_203_094_070_331_45).abs() < 1e-15);
        let no_eps = DeamHyperparams {
            epsilon: 0.0,
            ..hp()
        };
        // (sqrt(2)/2) * 2 pi / (10 (2 + pi)) = 0.08641063649910893
        let b = deam_beta1(PI / 4.0, &no_eps).unwrap();
        assert!((b - 0.086_410_636_499_108_93).abs() < 1e-15, "{b}");
    }

    #[test]
    fn beta1_branch_boundary() {
        assert_eq!(deam_beta1(FRAC_PI_2, &hp()).unwrap(), 1.0 / K);
        let below = deam_beta1(FRAC_PI_2 - 1e-9, &hp()).unwrap();
        assert!((below - (1.0 / K + 0.001)).abs() < 1e-12);
        assert!((below - 1.0 / K).abs() <= hp().epsilon + 1e-12);
    }

    #[test]
    fn angle_out_of_range_is_rejected() {
        assert_eq!(
            deam_beta1(-0.1, &hp()),
            Err(OptimizerError::AngleOutOfRange(-0.1))
        );
        assert!(deam_beta1(PI + 1e-9, &hp()).is_err());
        assert!(deam_beta1(f64::NAN, &hp()).is_err());
        assert!(deam_backtrack(4.0, BacktrackVariant::None).is_err());
    }

    #[test]
    fn backtrack_examples() {
        assert_eq!(
            deam_backtrack(PI, BacktrackVariant::ClampedCos).unwrap(),
            -0.5
        );
        assert_eq!(
            deam_backtrack(PI / 4.0, BacktrackVariant::ClampedCos).unwrap(),
            0.0
        );
        assert!(
            deam_backtrack(FRAC_PI_2, BacktrackVariant::SigmoidBased)
                .unwrap()
                .abs()
                < 1e-12
        );
        assert!(
            deam_backtrack(FRAC_PI_2, BacktrackVariant::TanhBased)
                .unwrap()
                .abs()
                < 1e-12
        );
        assert!((deam_backtrack(0.0, BacktrackVariant::UnclampedCos).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(deam_backtrack(PI, BacktrackVariant::None).unwrap(), 0.0);
    }

    #[test]
    fn backtrack_values_stay_in_declared_range() {
        for variant in BacktrackVariant::ALL {
            let (lo, hi) = variant.range();
            for k in 0..=1000 {
                let theta = PI * k as f64 / 1000.0;
                let d = deam_backtrack(theta, variant).unwrap();
                assert!(d >= lo - 1e-15 && d <= hi + 1e-15, "{variant} {theta} {d}");
            }
        }
    }

    #[test]
    fn hyperparameter_validation() {
        assert!(DeamHyperparams::default().validate().is_ok());
        assert!(hp().with_epsilon(0.0).validate().is_err());
        assert!(hp().with_epsilon(0.2).validate().is_err());
        let bad_beta2 = DeamHyperparams { beta2: 1.0, ..hp() };
        assert!(DeamState::new(2, bad_beta2).is_err());
        assert!(BaselineConfig::Adam {
            beta1: 1.0,
            beta2: 0.999,
            div_guard: 1e-8
        }
        .validate()
        .is_err());
        assert!(BaselineConfig::AdaGrad { div_guard: -1.0 }
            .validate()
            .is_err());
    }

    #[test]
    fn first_step_on_counterexample() {
        // Hand evaluation, fresh state, g = (-8, -8), eta = 1, epsilon = 0.001:
        // theta = 0, beta1 = 0.001, m = (-0.008, -0.008), v = v_hat = (0.064, 0.064),
        // delta = 0.008 / (sqrt(0.064) + 1e-8) = 0.031622776...
        let mut state = DeamState::new(2, hp()).unwrap();
        let mut w: ParamVector = [-4.0, -1.0].into();
        let diag = state.step(&mut w, &[-8.0, -8.0].into(), 1.0).unwrap();
        assert_eq!(diag.theta, 0.0);
        assert_eq!(diag.beta1_t, 0.001);
        assert_eq!(diag.d_t, 0.0);
        for i in 0..2 {
            assert!((state.m()[i] + 0.008).abs() < 1e-15);
            assert!((state.v()[i] - 0.064).abs() < 1e-15);
            assert_eq!(state.v_hat()[i], state.v()[i]);
        }
        let expected_delta = 0.008 / (0.064f64.sqrt() + 1e-8);
        assert!((state.delta_prev()[0] - expected_delta).abs() < 1e-15);
        assert!((w[0] - (-3.968_377_224_648_316)).abs() < 1e-14);
        assert!((w[1] - (-0.968_377_224_648_316_1)).abs() < 1e-14);
        assert_eq!(state.t(), 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut state = DeamState::new(3, hp()).unwrap();
        let mut w: ParamVector = [1.0, -2.0, 0.5].into();
        let before = w.clone();
        let diag = state.step(&mut w, &ParamVector::zeros(3), 0.1).unwrap();
        assert_eq!(w, before);
        assert!(state.m().is_zero() && state.v().is_zero() && state.v_hat().is_zero());
        assert!(state.delta_prev().is_zero());
        assert_eq!(diag.theta, 0.0);
        assert_eq!(diag.d_t, 0.0);
    }

    #[test]
    fn constant_gradient_follows_geometric_recursion() {
        let c = 3.0;
        let mut state = DeamState::new(1, hp()).unwrap();
        let mut w: ParamVector = [0.0].into();
        for t in 1..=20 {
            let diag = state.step(&mut w, &[c].into(), 0.01).unwrap();
            assert_eq!(diag.theta, 0.0, "step {t}");
            assert_eq!(diag.beta1_t, 0.001);
            let expected = c * (1.0 - (1.0f64 - 0.001).powi(t));
            assert!((state.m()[0] - expected).abs() < 1e-14, "step {t}");
        }
    }

    #[test]
    fn obtuse_angle_triggers_backtrack() {
        let mut state = DeamState::new(2, hp()).unwrap();
        let mut w: ParamVector = [0.0, 0.0].into();
        state.step(&mut w, &[1.0, 1.0].into(), 0.1).unwrap();
        let diag = state.step(&mut w, &[-1.0, -1.0].into(), 0.1).unwrap();
        assert!((diag.theta - PI).abs() < 1e-12);
        assert_eq!(diag.beta1_t, 1.0 / K);
        assert!((diag.d_t + 0.5).abs() < 1e-12);
    }

    #[test]
    fn step_errors_leave_state_untouched() {
        let mut state = DeamState::new(2, hp()).unwrap();
        let mut w: ParamVector = [0.0, 0.0].into();
        state.step(&mut w, &[1.0, 2.0].into(), 0.1).unwrap();
        let snapshot = (state.clone(), w.clone());
        assert!(matches!(
            state.step(&mut w, &[1.0].into(), 0.1),
            Err(OptimizerError::DimensionMismatch { .. })
        ));
        assert_eq!(
            state.step(&mut w, &[1.0, 1.0].into(), 0.0),
            Err(OptimizerError::InvalidLearningRate(0.0))
        );
        let bad = ParamVector::from_vec_unchecked(vec![f64::NAN, 1.0]);
        assert_eq!(
            state.step(&mut w, &bad, 0.1),
            Err(OptimizerError::NonFinite {
                field: "gradient",
                step: 2
            })
        );
        assert_eq!((state, w), snapshot);
    }

    #[test]
    fn overflowing_update_names_field_and_step() {
        let mut state = DeamState::new(1, hp()).unwrap();
        let mut w: ParamVector = [f64::MAX].into();
        let err = state.step(&mut w, &[-1.0].into(), f64::MAX).unwrap_err();
        assert!(
            matches!(err, OptimizerError::NonFinite { step: 1, .. }),
            "{err}"
        );
    }

    #[test]
    fn sgd_step_example() {
        let mut state = BaselineState::new(2, BaselineConfig::Sgd).unwrap();
        let mut w: ParamVector = [0.0, 0.0].into();
        state.step(&mut w, &[1.0, -2.0].into(), 0.1).unwrap();
        assert!((w[0] + 0.1).abs() < 1e-15 && (w[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_on_counterexample() {
        for beta1 in [0.9, 0.0] {
            let cfg = BaselineConfig::Adam {
                beta1,
                beta2: 0.999,
                div_guard: 0.0,
            };
            let mut state = BaselineState::new(2, cfg).unwrap();
            let mut w: ParamVector = [-4.0, -1.0].into();
            state.step(&mut w, &[-8.0, -8.0].into(), 1.0).unwrap();
            assert!((w[0] + 3.0).abs() < 1e-9 && w[1].abs() < 1e-9, "{w:?}");
        }
    }

    #[test]
    fn heavy_ball_accumulates_velocity() {
        let mut state = BaselineState::new(1, BaselineConfig::sgd_momentum()).unwrap();
        let mut w: ParamVector = [0.0].into();
        state.step(&mut w, &[1.0].into(), 0.1).unwrap();
        state.step(&mut w, &[1.0].into(), 0.1).unwrap();
        // u1 = -0.1, u2 = 0.9 * -0.1 - 0.1 = -0.19
        assert!((w[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn adagrad_and_rmsprop_first_steps() {
        let mut ada = BaselineState::new(1, BaselineConfig::AdaGrad { div_guard: 0.0 }).unwrap();
        let mut w: ParamVector = [0.0].into();
        ada.step(&mut w, &[4.0].into(), 0.5).unwrap();
        assert!((w[0] + 0.5).abs() < 1e-15);
        ada.step(&mut w, &[3.0].into(), 0.5).unwrap();
        // accumulator 25, step 0.5 * 3 / 5
        assert!((w[0] + 0.8).abs() < 1e-15);

        let mut rms = BaselineState::new(
            1,
            BaselineConfig::RmsProp {
                rho: 0.75,
                div_guard: 0.0,
            },
        )
        .unwrap();
        let mut w: ParamVector = [0.0].into();
        rms.step(&mut w, &[2.0].into(), 1.0).unwrap();
        // E = 0.25 * 4 = 1, step = 2 / 1
        assert!((w[0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn amsgrad_denominator_never_shrinks() {
        let cfg = BaselineConfig::AmsGrad {
            beta1: 0.0,
            beta2: 0.5,
            div_guard: 0.0,
        };
        let mut state = BaselineState::new(1, cfg).unwrap();
        let mut w: ParamVector = [0.0].into();
        state.step(&mut w, &[10.0].into(), 1.0).unwrap();
        let before = w[0];
        state.step(&mut w, &[0.1].into(), 1.0).unwrap();
        // Adam would take a step near 0.1 / sqrt((0.5*50 + 0.005)/0.75); AMSGrad
        // keeps the max of the raw second moment (50) and corrects by 0.75.
        let expected = 0.1 / (50.0f64 / 0.75).sqrt();
        assert!(((before - w[0]) - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_coordinates_stay_put_without_guard() {
        for cfg in [
            BaselineConfig::AdaGrad { div_guard: 0.0 },
            BaselineConfig::RmsProp {
                rho: 0.9,
                div_guard: 0.0,
            },
            BaselineConfig::Adam {
                beta1: 0.9,
                beta2: 0.999,
                div_guard: 0.0,
            },
        ] {
            let mut state = BaselineState::new(2, cfg).unwrap();
            let mut w: ParamVector = [1.0, 1.0].into();
            state.step(&mut w, &[0.5, 0.0].into(), 0.1).unwrap();
            assert_eq!(w[1], 1.0, "{cfg:?}");
        }
    }

    #[test]
    fn schedules() {
        assert_eq!(Schedule::Constant.rate(0.3, 100), 0.3);
        assert_eq!(Schedule::InverseSqrt.rate(1.0, 1), 1.0);
        assert_eq!(Schedule::InverseSqrt.rate(1.0, 4), 0.5);
    }

    #[test]
    fn optimizer_names() {
        assert_eq!(OptimizerSpec::Deam(hp()).name(), "deam");
        assert_eq!(
            OptimizerSpec::Deam(hp().with_backtrack(BacktrackVariant::None)).name(),
            "deam[none]"
        );
        assert_eq!(
            OptimizerSpec::Baseline(BaselineConfig::amsgrad()).name(),
            "amsgrad"
        );
    }
}
