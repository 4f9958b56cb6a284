//! Explicit contraction rates and constants, and exponential-rate fitting.

use serde::{Deserialize, Serialize};

use crate::error::ensure_finite;
use crate::model::{check_example21, check_example22, AssumptionReport};
use crate::{Error, Result};

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid("beta", "must be finite and > 0"));
    }
    Ok(())
}

/// `2 + 2β + β² + √(β⁴ + 4)`, the denominator shared by κ and the twist bound.
fn kinetic_denominator(beta: f64) -> f64 {
    2.0 + 2.0 * beta + beta * beta + (beta.powi(4) + 4.0).sqrt()
}

/// `κ = 2(β − θ₁ − θ₂) / (2 + 2β + β² + √(β⁴ + 4))`. Negative exactly when
/// `θ₁ + θ₂ > β`, in which case no contraction is guaranteed.
pub fn kappa(beta: f64, theta1: f64, theta2: f64) -> Result<f64> {
    check_beta(beta)?;
    ensure_finite("theta1/theta2", &[theta1, theta2])?;
    Ok(2.0 * (beta - theta1 - theta2) / kinetic_denominator(beta))
}

/// Whether `θ₁ + θ₂ < β`.
pub fn check_condition_c(beta: f64, theta1: f64, theta2: f64) -> Result<AssumptionReport> {
    check_beta(beta)?;
    let margin = beta - theta1 - theta2;
    Ok(AssumptionReport {
        satisfied: margin > 0.0,
        margin,
        detail: format!("β − θ₁ − θ₂ = {margin}"),
    })
}

/// Lipschitz pair `(θ₁, θ₂)` of the mean-attraction interaction:
/// `θ₁ = θ(½ + √(2+2β+β²))`, `θ₂ = (θ/2)√(2+2β+β²)`.
pub fn theta_pair(beta: f64, theta: f64) -> Result<(f64, f64)> {
    check_beta(beta)?;
    if !(theta >= 0.0) || !theta.is_finite() {
        return Err(Error::invalid("theta", "must be finite and >= 0"));
    }
    let s = (2.0 + 2.0 * beta + beta * beta).sqrt();
    Ok((theta * (0.5 + s), 0.5 * theta * s))
}

/// κ of the degenerate granular media equation evaluated directly:
/// `(2β − θ(1 + 3√(2+2β+β²))) / (2 + 2β + β² + √(β⁴+4))`.
pub fn example22_kappa(beta: f64, theta: f64) -> Result<f64> {
    check_beta(beta)?;
    let s = (2.0 + 2.0 * beta + beta * beta).sqrt();
    Ok((2.0 * beta - theta * (1.0 + 3.0 * s)) / kinetic_denominator(beta))
}

/// Twisted-metric constants `(a, r, C)` with `a = √((1+β+β²)/(1+β))`,
/// `r = 1/√((1+β)(1+β+β²))` and `C = (2+2β+β²+√(β⁴+4)) / (2(1+β))`, the
/// bound `ψ̄_B² ≤ C ψ_B²`.
pub fn twist_constants(beta: f64) -> Result<(f64, f64, f64)> {
    check_beta(beta)?;
    let q = 1.0 + beta + beta * beta;
    let a = (q / (1.0 + beta)).sqrt();
    let r = 1.0 / ((1.0 + beta) * q).sqrt();
    let c = kinetic_denominator(beta) / (2.0 * (1.0 + beta));
    Ok((a, r, c))
}

/// Granular media rate `λ + δ₁ − δ₂`.
pub fn rate_example21(lambda: f64, delta1: f64, delta2: f64) -> f64 {
    lambda + delta1 - delta2
}

/// `(δ₁, δ₂)` for `W(x, y) = (δ/2)|x − y|²`: the Hessian on `R^{2d}` has
/// eigenvalues `0` and `2δ`, so `δ₁ = min(0, 2δ)` and `δ₂ = 2|δ|`.
pub fn quadratic_pair_deltas(delta: f64) -> (f64, f64) {
    ((2.0 * delta).min(0.0), 2.0 * delta.abs())
}

/// Non-degenerate rate `K₂ − K₁` in its two published forms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thm23Rate {
    /// Exponent for `W₂²` and `Ent`: `K₂ − K₁`.
    pub squared: f64,
    /// Exponent for unsquared `W₂`: `(K₂ − K₁)/2`.
    pub unsquared: f64,
}

pub fn rate_thm23(k1: f64, k2: f64) -> Result<Thm23Rate> {
    ensure_finite("K1/K2", &[k1, k2])?;
    let d = k2 - k1;
    Ok(Thm23Rate {
        squared: d,
        unsquared: 0.5 * d,
    })
}

/// `λ_a β (1 − r₀)²`; requires `r₀ < 1`.
pub fn rate_thm22(lambda_a: f64, beta_ls: f64, r0: f64) -> Result<f64> {
    ensure_finite("rate_thm22 inputs", &[lambda_a, beta_ls, r0])?;
    if !(lambda_a > 0.0) {
        return Err(Error::invalid("lambda_a", "must be > 0"));
    }
    if !(beta_ls > 0.0) {
        return Err(Error::invalid("beta_ls", "must be > 0"));
    }
    if r0 < 0.0 {
        return Err(Error::invalid("r0", "must be >= 0"));
    }
    if r0 >= 1.0 {
        return Err(Error::AssumptionViolated {
            assumption: "(H3)",
            detail: format!("r0 = {r0} must be < 1"),
        });
    }
    Ok(lambda_a * beta_ls * (1.0 - r0).powi(2))
}

/// Right-hand sides of the granular decay bound at time `t` for prefactor `c`:
/// the printed form uses the sum `W₂² + Ent`, the likely intended form the
/// minimum of the two.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thm22Bound {
    pub sum_variant: f64,
    pub min_variant: f64,
}

pub fn thm22_bound(c: f64, rate: f64, t: f64, w2_sq0: f64, ent0: f64) -> Result<Thm22Bound> {
    if t < 1.0 {
        return Err(Error::OutOfRange { t, threshold: 1.0 });
    }
    let e = c * (-rate * t).exp();
    Ok(Thm22Bound {
        sum_variant: e * (w2_sq0 + ent0),
        min_variant: e * w2_sq0.min(ent0),
    })
}

/// Which hypothesis the combined bound starts from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `W₂² ≤ c₁ e^{−λt} W₂²(0)` for `t ≥ t₁` yields decay in both metrics.
    W2ToEntropy,
    /// `Ent ≤ c₂ e^{−λt} Ent(0)` for `t ≥ t₂` yields decay in both metrics.
    EntropyToW2,
}

/// Decay bound obtained by combining a log-Harnack inequality (constant `c₀`
/// at time `t₀`), a Talagrand inequality (constant `C`) and one exponential
/// decay hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayBound {
    pub c0: f64,
    pub t0: f64,
    pub talagrand: f64,
    pub coefficient: f64,
    pub lambda: f64,
    pub t1: f64,
    pub direction: Direction,
}

/// Bound values at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayValue {
    /// `coefficient · e^{−λ(t−t₀)} · min{…}`.
    pub envelope: f64,
    pub entropy: f64,
    pub w2_sq: f64,
}

pub fn combine_rates(
    c0: f64,
    t0: f64,
    talagrand: f64,
    coefficient: f64,
    lambda: f64,
    t1: f64,
    direction: Direction,
) -> Result<DecayBound> {
    ensure_finite("combine_rates inputs", &[c0, t0, talagrand, coefficient, lambda, t1])?;
    for (name, v) in [("c0", c0), ("C", talagrand), ("c1", coefficient), ("lambda", lambda)] {
        if !(v > 0.0) {
            return Err(Error::InvalidParameter {
                name,
                reason: "must be > 0".into(),
            });
        }
    }
    if t0 < 0.0 || t1 < 0.0 {
        return Err(Error::invalid("t0/t1", "must be >= 0"));
    }
    Ok(DecayBound {
        c0,
        t0,
        talagrand,
        coefficient,
        lambda,
        t1,
        direction,
    })
}

impl DecayBound {
    pub fn threshold(&self) -> f64 {
        self.t0 + self.t1
    }

    /// Bounds on `Ent(μ_t|μ_∞)` and `W₂(μ_t, μ_∞)²` given the initial values.
    pub fn eval(&self, t: f64, w2_sq0: f64, ent0: f64) -> Result<DecayValue> {
        if !(t >= self.threshold()) {
            return Err(Error::OutOfRange {
                t,
                threshold: self.threshold(),
            });
        }
        let decay = self.coefficient * (-self.lambda * (t - self.t0)).exp();
        Ok(match self.direction {
            Direction::W2ToEntropy => {
                let env = decay * w2_sq0.min(self.talagrand * ent0);
                DecayValue {
                    envelope: env,
                    entropy: self.c0 * env,
                    w2_sq: env,
                }
            }
            Direction::EntropyToW2 => {
                let env = decay * (self.c0 * w2_sq0).min(ent0);
                DecayValue {
                    envelope: env,
                    entropy: env,
                    w2_sq: self.talagrand * env,
                }
            }
        })
    }
}

/// Least-squares exponential fit `value ≈ e^{intercept − rate·t}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub intercept: f64,
    /// Root-mean-square residual of `ln value`.
    pub residual: f64,
    pub window: (f64, f64),
    pub points: usize,
}

/// Window that drops the first 20% of `[t_first, t_last]`.
pub fn default_window(times: &[f64]) -> Option<(f64, f64)> {
    let (first, last) = (*times.first()?, *times.last()?);
    Some((first + 0.2 * (last - first), last))
}

/// Fits `ln value` against `t` over `window` (inclusive). With no window the
/// first 20% of the time span is discarded.
pub fn fit_exp_rate(times: &[f64], values: &[f64], window: Option<(f64, f64)>) -> Result<RateFit> {
    crate::error::ensure_dim("values", times.len(), values.len())?;
    let window = match window {
        Some(w) => w,
        None => default_window(times).ok_or_else(|| Error::invalid("times", "empty series"))?,
    };
    if !(window.0 <= window.1) {
        return Err(Error::invalid("window", "t_min must not exceed t_max"));
    }
    let (mut ts, mut ys) = (Vec::new(), Vec::new());
    for (&t, &v) in times.iter().zip(values) {
        if t >= window.0 && t <= window.1 {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(
                    "values",
                    format!("non-positive or non-finite value {v} at t = {t} inside the fit window"),
                ));
            }
            ts.push(t);
            ys.push(v.ln());
        }
    }
    let n = ts.len();
    if n < 3 {
        return Err(Error::invalid("window", format!("needs at least 3 points, found {n}")));
    }
    let nf = n as f64;
    let tm = ts.iter().sum::<f64>() / nf;
    let ym = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = ts.iter().map(|t| (t - tm).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("window", "all fit times coincide"));
    }
    let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * tm;
    let ss: f64 = ts
        .iter()
        .zip(&ys)
        .map(|(t, y)| (y - intercept - slope * t).powi(2))
        .sum();
    Ok(RateFit {
        rate: -slope,
        intercept,
        residual: (ss / nf).sqrt(),
        window,
        points: n,
    })
}

/// Inputs for [`rate_table`]; every field is optional and only the constants
/// whose inputs are present get evaluated.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateParams {
    pub beta: Option<f64>,
    /// Mean-attraction strength; determines `θ₁, θ₂` unless they are given.
    pub theta: Option<f64>,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub lambda: Option<f64>,
    pub delta1: Option<f64>,
    pub delta2: Option<f64>,
    pub lambda_a: Option<f64>,
    pub beta_ls: Option<f64>,
    pub r0: Option<f64>,
    pub k1: Option<f64>,
    pub k2: Option<f64>,
    pub c0: Option<f64>,
    pub talagrand: Option<f64>,
    pub c1: Option<f64>,
    pub decay_lambda: Option<f64>,
}

/// Every constant evaluable from a [`RateParams`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub kappa: Option<f64>,
    pub kappa_direct: Option<f64>,
    pub condition_c: Option<AssumptionReport>,
    pub example22: Option<AssumptionReport>,
    pub a_twist: Option<f64>,
    pub r_twist: Option<f64>,
    pub ac3_const: Option<f64>,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub rate_granular: Option<f64>,
    pub example21: Option<AssumptionReport>,
    pub rate_thm23: Option<Thm23Rate>,
    pub rate_thm22: Option<f64>,
    pub c0: Option<f64>,
    #[serde(rename = "C")]
    pub talagrand: Option<f64>,
    pub c1: Option<f64>,
    pub lambda: Option<f64>,
}

/// Evaluates all applicable formulas. Domain errors (including `r₀ ≥ 1`) are
/// returned, not swallowed.
pub fn rate_table(p: &RateParams) -> Result<RateConstants> {
    let mut out = RateConstants {
        c0: p.c0,
        talagrand: p.talagrand,
        c1: p.c1,
        lambda: p.decay_lambda,
        ..Default::default()
    };
    if let Some(beta) = p.beta {
        let (a, r, c) = twist_constants(beta)?;
        out.a_twist = Some(a);
        out.r_twist = Some(r);
        out.ac3_const = Some(c);
        let pair = match (p.theta1, p.theta2, p.theta) {
            (Some(t1), Some(t2), _) => Some((t1, t2)),
            (None, None, Some(theta)) => Some(theta_pair(beta, theta)?),
            (None, None, None) => None,
            _ => {
                return Err(Error::invalid(
                    "theta1/theta2",
                    "give both theta1 and theta2, or theta alone",
                ))
            }
        };
        if let Some((t1, t2)) = pair {
            out.theta1 = Some(t1);
            out.theta2 = Some(t2);
            out.kappa = Some(kappa(beta, t1, t2)?);
            out.condition_c = Some(check_condition_c(beta, t1, t2)?);
        }
        if let Some(theta) = p.theta {
            out.kappa_direct = Some(example22_kappa(beta, theta)?);
            out.example22 = Some(check_example22(beta, theta)?);
        }
    }
    if let (Some(l), Some(d1), Some(d2)) = (p.lambda, p.delta1, p.delta2) {
        out.rate_granular = Some(rate_example21(l, d1, d2));
        out.example21 = Some(check_example21(l, d1, d2));
    }
    if let (Some(k1), Some(k2)) = (p.k1, p.k2) {
        out.rate_thm23 = Some(rate_thm23(k1, k2)?);
    }
    if let Some(r0) = p.r0 {
        let la = p.lambda_a.unwrap_or(1.0);
        let bl = p
            .beta_ls
            .ok_or_else(|| Error::invalid("beta_ls", "required together with r0"))?;
        out.rate_thm22 = Some(rate_thm22(la, bl, r0)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn kappa_examples() {
        assert_relative_eq!(kappa(1.0, 0.0, 0.0).unwrap(), 0.276_393_2, epsilon = 1e-7);
        assert_relative_eq!(kappa(2.0, 0.5, 0.5).unwrap(), 0.138_196_6, epsilon = 1e-7);
        assert!(kappa(1.0, 0.6, 0.5).unwrap() < 0.0);
        assert!(!check_condition_c(1.0, 0.6, 0.5).unwrap().satisfied);
        assert!(kappa(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn theta_pair_examples() {
        let (t1, t2) = theta_pair(1.0, 0.1).unwrap();
        assert_relative_eq!(t1, 0.273_606_8, epsilon = 1e-7);
        assert_relative_eq!(t2, 0.111_803_4, epsilon = 1e-7);
        assert_eq!(theta_pair(1.0, 0.0).unwrap(), (0.0, 0.0));
        assert_relative_eq!(kappa(1.0, t1, t2).unwrap(), 0.169_868_0, epsilon = 1e-6);
    }

    #[test]
    fn twist_examples() {
        let (a, r, c) = twist_constants(1.0).unwrap();
        assert_relative_eq!(a, 1.224_744_9, epsilon = 1e-7);
        assert_relative_eq!(r, 0.408_248_3, epsilon = 1e-7);
        assert_relative_eq!(c, 1.809_017_0, epsilon = 1e-7);
    }

    #[test]
    fn thm22_examples() {
        assert_eq!(rate_thm22(1.0, 1.0, 0.0).unwrap(), 1.0);
        assert_eq!(rate_thm22(2.0, 0.5, 0.5).unwrap(), 0.25);
        match rate_thm22(1.0, 1.0, 1.0) {
            Err(Error::AssumptionViolated { assumption, .. }) => assert_eq!(assumption, "(H3)"),
            other => panic!("unexpected {other:?}"),
        }
        let b = thm22_bound(1.0, 1.0, 1.0, 2.0, 3.0).unwrap();
        assert_relative_eq!(b.sum_variant, 5.0 * (-1.0f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(b.min_variant, 2.0 * (-1.0f64).exp(), epsilon = 1e-15);
    }

    #[test]
    fn granular_rate_for_quadratic_pair() {
        let (d1, d2) = quadratic_pair_deltas(0.2);
        assert_eq!(d1, 0.0);
        assert_relative_eq!(rate_example21(1.0, d1, d2), 0.6, epsilon = 1e-15);
        let (d1, d2) = quadratic_pair_deltas(-0.5);
        assert_eq!((d1, d2), (-1.0, 1.0));
    }

    #[test]
    fn thm23_variants() {
        let r = rate_thm23(0.5, 2.5).unwrap();
        assert_eq!(r.squared, 2.0);
        assert_eq!(r.unsquared, 1.0);
    }

    #[test]
    fn combine_examples() {
        let b = combine_rates(1.0, 0.0, 1.0, 1.0, 1.0, 0.0, Direction::W2ToEntropy).unwrap();
        let v = b.eval(2.0, 3.0, 5.0).unwrap();
        assert_relative_eq!(v.envelope, (-2.0f64).exp() * 3.0, epsilon = 1e-15);

        let b = combine_rates(2.0, 1.0, 1.5, 1.0, 1.0, 0.5, Direction::W2ToEntropy).unwrap();
        let v = b.eval(2.0, 0.8, 1.0).unwrap();
        assert_relative_eq!(v.entropy, 2.0 * (-1.0f64).exp() * 0.8f64.min(1.5), epsilon = 1e-15);
        assert!(matches!(b.eval(1.2, 0.8, 1.0), Err(Error::OutOfRange { .. })));

        let b = combine_rates(2.0, 1.0, 1.5, 1.0, 1.0, 0.0, Direction::EntropyToW2).unwrap();
        let v = b.eval(1.0, 0.3, 1.0).unwrap();
        assert_relative_eq!(v.entropy, 0.6, epsilon = 1e-15);
        assert_relative_eq!(v.w2_sq, 0.9, epsilon = 1e-15);
    }

    #[test]
    fn fit_examples() {
        let t = [0.0, 1.0, 2.0];
        let v: Vec<f64> = t.iter().map(|t| (-2.0f64 * t).exp()).collect();
        let f = fit_exp_rate(&t, &v, Some((0.0, 2.0))).unwrap();
        assert_relative_eq!(f.rate, 2.0, epsilon = 1e-12);
        assert!(f.residual < 1e-12);
        let v: Vec<f64> = t.iter().map(|t| 3.0 * (-0.5 * t).exp()).collect();
        let f = fit_exp_rate(&t, &v, Some((0.0, 2.0))).unwrap();
        assert_relative_eq!(f.rate, 0.5, epsilon = 1e-12);
        assert_relative_eq!(f.intercept, 3f64.ln(), epsilon = 1e-12);
        assert!(fit_exp_rate(&t, &[1.0, 0.0, 1.0], Some((0.0, 2.0))).is_err());
        assert!(fit_exp_rate(&t, &[1.0, 0.5, 0.2], Some((0.5, 2.0))).is_err());
    }

    #[test]
    fn default_window_drops_transient() {
        let t: Vec<f64> = (0..=10).map(f64::from).collect();
        let v: Vec<f64> = t.iter().map(|&t| if t < 2.0 { -1.0 } else { (-t).exp() }).collect();
        let f = fit_exp_rate(&t, &v, None).unwrap();
        assert_eq!(f.window, (2.0, 10.0));
        assert_relative_eq!(f.rate, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn table_reports_h3() {
        let p = RateParams {
            r0: Some(1.0),
            beta_ls: Some(1.0),
            ..Default::default()
        };
        assert!(matches!(rate_table(&p), Err(Error::AssumptionViolated { .. })));
        let p = RateParams {
            beta: Some(1.0),
            theta: Some(0.1),
            ..Default::default()
        };
        let t = rate_table(&p).unwrap();
        assert_relative_eq!(t.kappa.unwrap(), 0.169_868_0, epsilon = 1e-6);
        assert_relative_eq!(t.kappa_direct.unwrap(), t.kappa.unwrap(), epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn kappa_identity(beta in 0.01f64..20.0) {
            let k = kappa(beta, 0.0, 0.0).unwrap();
            let d = 2.0 + 2.0 * beta + beta * beta + (beta.powi(4) + 4.0).sqrt();
            prop_assert!((k * d - 2.0 * beta).abs() <= 1e-12 * beta.max(1.0));
        }

        #[test]
        fn kappa_decreasing(beta in 0.1f64..5.0, t1 in 0.0f64..2.0, t2 in 0.0f64..2.0, eps in 1e-3f64..1.0) {
            let k = kappa(beta, t1, t2).unwrap();
            prop_assert!(kappa(beta, t1 + eps, t2).unwrap() < k);
            prop_assert!(kappa(beta, t1, t2 + eps).unwrap() < k);
        }

        #[test]
        fn direct_kappa_matches_pair(beta in 0.05f64..10.0, theta in 0.0f64..3.0) {
            let (t1, t2) = theta_pair(beta, theta).unwrap();
            let a = kappa(beta, t1, t2).unwrap();
            let b = example22_kappa(beta, theta).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn twist_identities(beta in 1e-3f64..50.0) {
            let (a, r, _) = twist_constants(beta).unwrap();
            prop_assert!(r > 0.0 && r < 1.0);
            prop_assert!((r - (a - beta / a)).abs() < 1e-12);
            prop_assert!((a * a - beta - r * a).abs() < 1e-12 * beta.max(1.0));
            prop_assert!((1.0 - r * a - beta / (1.0 + beta)).abs() < 1e-12);
        }

        #[test]
        fn combined_bound_nonincreasing(t in 1.0f64..10.0, dt in 0.0f64..5.0, lam in 0.01f64..3.0) {
            for dir in [Direction::W2ToEntropy, Direction::EntropyToW2] {
                let b = combine_rates(1.5, 0.5, 2.0, 1.2, lam, 0.5, dir).unwrap();
                let v1 = b.eval(t, 1.0, 0.7).unwrap();
                let v2 = b.eval(t + dt, 1.0, 0.7).unwrap();
                prop_assert!(v2.entropy <= v1.entropy && v2.w2_sq <= v1.w2_sq);
            }
        }
    }
}
