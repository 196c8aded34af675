//! ICRT parameters `(β, θ)` and the structural functions built from them.
//!
//! Only a finite prefix of `θ` can be simulated. The prefix is stored
//! explicitly together with `tail_sq`, an assumed value of the squared mass
//! of the dropped tail, which bounds the error `psi` makes by ignoring it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error("beta must be nonnegative, got {0}")]
    NegativeBeta(f64),
    #[error("theta must be nonincreasing (theta[{index}] = {next} > theta[{prev_index}] = {prev})", prev_index = .index - 1)]
    UnsortedTheta { index: usize, prev: f64, next: f64 },
    #[error("theta entries must be finite and positive, theta[{index}] = {value}")]
    NonpositiveThetaEntry { index: usize, value: f64 },
    #[error("beta = 0 requires an infinite theta sum (divergent_sum = true)")]
    BrownianlessZeroBeta,
    #[error("tail_sq must be finite and nonnegative, got {0}")]
    NegativeTail(f64),
    #[error("argument t must be nonnegative, got {0}")]
    NegativeT(f64),
    #[error("argument x must be nonnegative, got {0}")]
    NegativeX(f64),
    #[error("eps must be positive, got {0}")]
    NonpositiveEps(f64),
    #[error("power-law exponent {0} gives an infinite sum of squares")]
    NotSquareSummable(f64),
}

/// Validated `(β, θ)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawThetaSpec", into = "RawThetaSpec")]
pub struct ThetaSpec {
    beta: f64,
    theta: Vec<f64>,
    tail_sq: f64,
    divergent_sum: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawThetaSpec {
    beta: f64,
    theta: Vec<f64>,
    #[serde(default)]
    tail_sq: f64,
    divergent_sum: bool,
}

impl TryFrom<RawThetaSpec> for ThetaSpec {
    type Error = ParamsError;

    fn try_from(raw: RawThetaSpec) -> Result<Self, Self::Error> {
        ThetaSpec::validate(raw.beta, raw.theta, raw.divergent_sum)?.with_tail_sq(raw.tail_sq)
    }
}

impl From<ThetaSpec> for RawThetaSpec {
    fn from(spec: ThetaSpec) -> Self {
        RawThetaSpec {
            beta: spec.beta,
            theta: spec.theta,
            tail_sq: spec.tail_sq,
            divergent_sum: spec.divergent_sum,
        }
    }
}

impl ThetaSpec {
    /// Checks the parameter invariants. Unsorted input is rejected rather
    /// than sorted, so that hub indices keep the caller's meaning.
    pub fn validate(beta: f64, theta: Vec<f64>, divergent_sum: bool) -> Result<Self, ParamsError> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(ParamsError::NegativeBeta(beta));
        }
        for (index, &value) in theta.iter().enumerate() {
            if !(value > 0.0) || !value.is_finite() {
                return Err(ParamsError::NonpositiveThetaEntry { index, value });
            }
            if index > 0 && value > theta[index - 1] {
                return Err(ParamsError::UnsortedTheta { index, prev: theta[index - 1], next: value });
            }
        }
        if beta == 0.0 && !divergent_sum {
            return Err(ParamsError::BrownianlessZeroBeta);
        }
        Ok(ThetaSpec { beta, theta, tail_sq: 0.0, divergent_sum })
    }

    pub fn with_tail_sq(mut self, tail_sq: f64) -> Result<Self, ParamsError> {
        if !(tail_sq >= 0.0) || !tail_sq.is_finite() {
            return Err(ParamsError::NegativeTail(tail_sq));
        }
        self.tail_sq = tail_sq;
        Ok(self)
    }

    /// The Brownian CRT: `β = 1`, no hubs.
    pub fn brownian() -> Self {
        ThetaSpec { beta: 1.0, theta: Vec::new(), tail_sq: 0.0, divergent_sum: false }
    }

    /// `θ_i = c · i^{-exponent}` for `i = 1..=n_terms`.
    ///
    /// With `normalize`, `c` is chosen so that `β + Σ_{i≤n} θ_i² = 1`. The
    /// tail estimate uses the integral bound for the dropped terms, and
    /// `divergent_sum` is set when `exponent ≤ 1`.
    pub fn power_law(beta: f64, n_terms: usize, exponent: f64, normalize: bool) -> Result<Self, ParamsError> {
        if exponent <= 0.5 {
            return Err(ParamsError::NotSquareSummable(exponent));
        }
        let raw: Vec<f64> = (1..=n_terms).map(|i| (i as f64).powf(-exponent)).collect();
        let scale = if normalize {
            let sq: f64 = raw.iter().map(|x| x * x).sum();
            if sq > 0.0 && beta < 1.0 {
                ((1.0 - beta) / sq).sqrt()
            } else {
                1.0
            }
        } else {
            1.0
        };
        let theta: Vec<f64> = raw.into_iter().map(|x| x * scale).collect();
        let tail = scale * scale * (n_terms as f64 + 0.5).powf(1.0 - 2.0 * exponent) / (2.0 * exponent - 1.0);
        ThetaSpec::validate(beta, theta, exponent <= 1.0)?.with_tail_sq(tail)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn tail_sq(&self) -> f64 {
        self.tail_sq
    }

    pub fn divergent_sum(&self) -> bool {
        self.divergent_sum
    }

    /// `Σ θ_i²` over the retained prefix.
    pub fn theta_sq(&self) -> f64 {
        self.theta.iter().map(|x| x * x).sum()
    }

    /// Whether two retained entries coincide. Hub-count distance estimates
    /// only converge almost surely when all entries are distinct.
    pub fn has_ties(&self) -> bool {
        self.theta.windows(2).any(|w| w[0] == w[1])
    }

    pub fn psi(&self, t: f64) -> Result<f64, ParamsError> {
        Ok(self.psi_bounded(t)?.value)
    }

    /// `Ψ(t)` over the retained prefix, together with the bound
    /// `t²/2 · tail_sq` on the contribution of the dropped tail.
    pub fn psi_bounded(&self, t: f64) -> Result<PsiValue, ParamsError> {
        if !(t >= 0.0) {
            return Err(ParamsError::NegativeT(t));
        }
        Ok(PsiValue { value: self.psi_unchecked(t), tail_bound: 0.5 * t * t * self.tail_sq })
    }

    pub(crate) fn psi_unchecked(&self, t: f64) -> f64 {
        let hubs: f64 = self.theta.iter().map(|&th| exp_remainder(th * t)).sum();
        0.5 * self.beta * t * t + hubs
    }

    /// `Ψ'(t) = βt + Σ θ_i (1 - e^{-θ_i t})`.
    pub fn psi_prime(&self, t: f64) -> f64 {
        self.beta * t + self.theta.iter().map(|&th| -th * (-th * t).exp_m1()).sum::<f64>()
    }

    /// Inverse of `Ψ` by bracketing and bisection. The returned `t`
    /// satisfies `|Ψ(t) - x| ≤ 1e-10 · max(1, x)` unless the bracket has
    /// shrunk to adjacent floats first.
    pub fn psi_inv(&self, x: f64) -> Result<f64, ParamsError> {
        if !(x >= 0.0) {
            return Err(ParamsError::NegativeX(x));
        }
        if x == 0.0 {
            return Ok(0.0);
        }
        let tol = 1e-10 * x.max(1.0);
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.psi_unchecked(hi) < x {
            lo = hi;
            hi *= 2.0;
        }
        loop {
            let mid = 0.5 * (lo + hi);
            let value = self.psi_unchecked(mid);
            if (value - x).abs() <= tol || mid <= lo || mid >= hi {
                return Ok(mid);
            }
            if value < x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }

    /// `γ_θ(ε) = Σ θ_i 1{θ_i > ε}`.
    pub fn gamma_theta(&self, eps: f64) -> Result<f64, ParamsError> {
        if !(eps > 0.0) {
            return Err(ParamsError::NonpositiveEps(eps));
        }
        // theta is sorted, so the qualifying entries form a prefix
        let cut = self.theta.partition_point(|&th| th > eps);
        Ok(self.theta[..cut].iter().sum())
    }

    /// Largest `ε` on the grid `eps0 · 2^{-j}` with `γ_θ(ε) ≥ target`.
    pub fn eps_for_gamma(&self, target: f64, eps0: f64) -> Option<f64> {
        let mut eps = eps0;
        for _ in 0..200 {
            if self.gamma_theta(eps).ok()? >= target {
                return Some(eps);
            }
            eps *= 0.5;
        }
        None
    }

    /// `g(t) = βt²/2 + Σ (θ_i t - log(1 + θ_i t))`, so that the first
    /// cutpoint satisfies `P(η₁ > t) = exp(-g(t))`.
    pub fn first_cut_log_survival(&self, t: f64) -> f64 {
        let hubs: f64 = self.theta.iter().map(|&th| log_remainder(th * t)).sum();
        0.5 * self.beta * t * t + hubs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiValue {
    pub value: f64,
    pub tail_bound: f64,
}

/// `e^{-x} - 1 + x` without cancellation for small `x`.
fn exp_remainder(x: f64) -> f64 {
    if x < 1e-3 {
        let x2 = x * x;
        x2 * (0.5 - x / 6.0 + x2 / 24.0 - x2 * x / 120.0)
    } else {
        (-x).exp_m1() + x
    }
}

/// `x - log(1 + x)` without cancellation for small `x`.
fn log_remainder(x: f64) -> f64 {
    if x < 1e-3 {
        let x2 = x * x;
        x2 * (0.5 - x / 3.0 + x2 / 4.0 - x2 * x / 5.0)
    } else {
        x - x.ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_hub() -> ThetaSpec {
        ThetaSpec::validate(0.0, vec![1.0], true).unwrap()
    }

    #[test]
    fn validate_examples() {
        let b = ThetaSpec::validate(1.0, vec![], false).unwrap();
        assert_eq!(b, ThetaSpec::brownian());
        assert_eq!(
            ThetaSpec::validate(0.0, vec![0.5, 0.3], false),
            Err(ParamsError::BrownianlessZeroBeta)
        );
        assert!(matches!(
            ThetaSpec::validate(1.0, vec![0.3, 0.5], true),
            Err(ParamsError::UnsortedTheta { index: 1, .. })
        ));
        assert!(matches!(ThetaSpec::validate(-1.0, vec![], true), Err(ParamsError::NegativeBeta(_))));
        assert!(matches!(
            ThetaSpec::validate(1.0, vec![0.5, 0.0], true),
            Err(ParamsError::NonpositiveThetaEntry { index: 1, .. })
        ));
    }

    #[test]
    fn psi_examples() {
        assert_eq!(ThetaSpec::brownian().psi(2.0).unwrap(), 2.0);
        assert_eq!(single_hub().psi(0.0).unwrap(), 0.0);
        assert!((single_hub().psi(1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(matches!(single_hub().psi(-1.0), Err(ParamsError::NegativeT(_))));
    }

    #[test]
    fn psi_inv_examples() {
        assert!((ThetaSpec::brownian().psi_inv(2.0).unwrap() - 2.0).abs() < 1e-9);
        assert_eq!(single_hub().psi_inv(0.0).unwrap(), 0.0);
        let t = single_hub().psi_inv((-1.0f64).exp()).unwrap();
        assert!((t - 1.0).abs() < 1e-8);
        assert!(matches!(single_hub().psi_inv(-0.1), Err(ParamsError::NegativeX(_))));
    }

    #[test]
    fn gamma_examples() {
        let spec = ThetaSpec::validate(1.0, vec![0.5, 0.3, 0.2], true).unwrap();
        assert!((spec.gamma_theta(0.25).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(spec.gamma_theta(0.6).unwrap(), 0.0);
        assert!(matches!(spec.gamma_theta(0.0), Err(ParamsError::NonpositiveEps(_))));

        let theta: Vec<f64> = (1..=1000).map(|i| (i as f64).powf(-2.0 / 3.0)).collect();
        let spec = ThetaSpec::validate(0.0, theta, true).unwrap();
        // brute-force partial sum over the defining indicator
        let mut oracle = 0.0;
        for i in 1..=1000 {
            let th = (i as f64).powf(-2.0 / 3.0);
            if th > 0.2 {
                oracle += th;
            }
        }
        assert!((spec.gamma_theta(0.2).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_and_rejection() {
        let spec = ThetaSpec::validate(0.5, vec![0.4, 0.1], true).unwrap().with_tail_sq(0.01).unwrap();
        let text = serde_json::to_string(&spec).unwrap();
        assert!(text.contains("\"tail_sq\":0.01"));
        let back: ThetaSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back, spec);
        let bad = r#"{"beta": 0.0, "theta": [0.5], "tail_sq": 0.0, "divergent_sum": false}"#;
        assert!(serde_json::from_str::<ThetaSpec>(bad).is_err());
    }

    #[test]
    fn power_law_is_normalized() {
        let spec = ThetaSpec::power_law(0.0, 1000, 0.6, true).unwrap();
        assert!((spec.theta_sq() - 1.0).abs() < 1e-12);
        assert!(spec.divergent_sum());
        assert!(spec.tail_sq() > 0.0);
        assert!(!spec.has_ties());
        assert!(ThetaSpec::validate(1.0, vec![0.3, 0.3], true).unwrap().has_ties());
    }

    #[test]
    fn first_cut_survival_matches_brownian() {
        let b = ThetaSpec::brownian();
        assert!((b.first_cut_log_survival(1.5) - 1.125).abs() < 1e-15);
        let h = single_hub();
        assert!((h.first_cut_log_survival(2.0) - (2.0 - 3.0f64.ln())).abs() < 1e-15);
    }

    fn spec_strategy() -> impl Strategy<Value = ThetaSpec> {
        (0.0f64..2.0, proptest::collection::vec(0.001f64..2.0, 0..20)).prop_map(|(beta, mut theta)| {
            theta.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let beta = if theta.is_empty() { beta + 0.1 } else { beta };
            ThetaSpec::validate(beta, theta, true).unwrap()
        })
    }

    proptest! {
        #[test]
        fn psi_strictly_increasing(spec in spec_strategy(), a in 0.0f64..50.0, b in 0.0f64..50.0) {
            prop_assume!((a - b).abs() > 1e-6);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(spec.psi(lo).unwrap() < spec.psi(hi).unwrap());
        }

        #[test]
        fn psi_upper_bound(spec in spec_strategy(), t in 0.0f64..100.0) {
            let bound = 0.5 * t * t * (spec.beta() + spec.theta_sq() + spec.tail_sq());
            prop_assert!(spec.psi(t).unwrap() <= bound * (1.0 + 1e-12));
        }

        #[test]
        fn gamma_monotone(spec in spec_strategy(), a in 1e-4f64..3.0, b in 1e-4f64..3.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(spec.gamma_theta(lo).unwrap() >= spec.gamma_theta(hi).unwrap());
        }
    }

    #[test]
    fn psi_inverse_on_log_grid() {
        let specs = [
            ThetaSpec::brownian(),
            single_hub(),
            ThetaSpec::validate(0.3, vec![0.9, 0.5, 0.5, 0.01], true).unwrap(),
            ThetaSpec::power_law(0.0, 2000, 0.6, true).unwrap(),
        ];
        for spec in &specs {
            for j in 0..=36 {
                let x = 10f64.powf(-3.0 + j as f64 * 0.25);
                let t = spec.psi_inv(x).unwrap();
                let err = (spec.psi(t).unwrap() - x).abs();
                assert!(err <= 1e-10 * x.max(1.0), "x={x} err={err}");
            }
        }
    }
}
