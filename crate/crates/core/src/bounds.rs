//! Closed-form filtering-error bounds for the fully observed ETKF.
//!
//! * [`wellposed_bound`]: exponential-growth bound on `E ||E_j||^2` without
//!   inflation.
//! * [`DerivedConstants`]: `D`, `a`, the eigenvalue floor `lambda_*`, the rate
//!   `theta`, `Theta` and the inflation threshold `alpha_0`.
//! * [`finite_time_bound`] / [`asymptotic_bound`]: uniform-in-time bound on
//!   `E |e_j|^2` under multiplicative inflation.
//! * [`gamma_scaling_exponent`]: log-log slope of the asymptotic bound in the
//!   noise scale `gamma`.
//!
//! All functions are pure scalar arithmetic. `beta`, `rho` and `epsilon` are
//! inputs; nothing here checks that they are valid for a given model.

use alloc::vec::Vec;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams {
    /// Growth constant (1/time). One-sided for [`wellposed_bound`], Lipschitz for the inflated bounds.
    pub beta: f64,
    /// Young-inequality slack (1/time).
    pub epsilon: f64,
    /// Absorbing-ball radius.
    pub rho: f64,
    /// Assimilation interval.
    pub h: f64,
    /// Observation-noise scale, `Gamma = gamma^2 I`.
    pub gamma: f64,
    pub n_members: usize,
    pub m: usize,
    pub alpha: f64,
    /// Lower bound on the minimum eigenvalue of the initial covariance.
    pub lambda0: f64,
}

impl BoundParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.beta, self.epsilon, self.rho, self.h, self.gamma, self.alpha, self.lambda0]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("bound parameters must be finite"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be positive"));
        }
        if !(self.rho > 0.0) || !(self.h > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::InvalidParameter("rho, h and gamma must be positive"));
        }
        if self.n_members < 2 || self.m < 1 {
            return Err(Error::InvalidParameter("need N >= 2 and m >= 1"));
        }
        if !(self.alpha >= 1.0) {
            return Err(Error::InvalidInflation(self.alpha));
        }
        if !(self.lambda0 > 0.0) {
            return Err(Error::InvalidParameter("lambda0 must be positive"));
        }
        Ok(())
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        BoundParams { alpha, ..self }
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        BoundParams { gamma, ..self }
    }

    /// `epsilon = beta / 10`, the default slack.
    pub fn default_epsilon(beta: f64) -> f64 {
        beta.abs() / 10.0
    }
}

/// `(e^{x j} - 1) / (e^{x} - 1)`, equal to `j` at `x = 0`.
fn exp_geometric_sum(x: f64, j: usize) -> f64 {
    if x == 0.0 {
        return j as f64;
    }
    libm::expm1(x * j as f64) / libm::expm1(x)
}

/// `(1 - theta^j) / (1 - theta)`, equal to `j` at `theta = 1`.
fn geometric_sum(theta: f64, j: usize) -> f64 {
    if theta == 1.0 {
        return j as f64;
    }
    (1.0 - powi(theta, j)) / (1.0 - theta)
}

fn powi(x: f64, j: usize) -> f64 {
    libm::pow(x, j as f64)
}

/// `e^{2 beta h j} E0 + (N - 1) gamma^2 (e^{2 beta h j} - 1) / (e^{2 beta h} - 1)`.
///
/// At `beta = 0` the second term takes its limit `j (N - 1) gamma^2`.
pub fn wellposed_bound(j: usize, e0_sq: f64, p: &BoundParams) -> f64 {
    let rate = 2.0 * p.beta * p.h;
    let growth = libm::exp(rate * j as f64);
    growth * e0_sq + (p.n_members - 1) as f64 * p.gamma * p.gamma * exp_geometric_sum(rate, j)
}

/// `D = 2 beta^2 rho^2 / (2 (beta + epsilon) epsilon)`.
pub fn constant_d(p: &BoundParams) -> f64 {
    2.0 * p.beta * p.beta * p.rho * p.rho / (2.0 * (p.beta + p.epsilon) * p.epsilon)
}

/// `a = 8 N / (N - 1) beta rho^2`.
pub fn constant_a(p: &BoundParams) -> f64 {
    let n = p.n_members as f64;
    8.0 * (n / (n - 1.0)) * p.beta * p.rho * p.rho
}

/// Uniform lower bound on the forecast minimum eigenvalue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaFloor {
    Floor(f64),
    /// `e^{-a h} alpha^2 <= 1`: no positive floor.
    NoFloor,
}

impl LambdaFloor {
    pub fn value(self) -> Option<f64> {
        match self {
            LambdaFloor::Floor(v) => Some(v),
            LambdaFloor::NoFloor => None,
        }
    }
}

/// `min{e^{-ah} lambda0, gamma^2/alpha^2 (e^{-ah} alpha^2 - 1)}`, defined only when `e^{-ah} alpha^2 > 1`.
pub fn lambda_star(p: &BoundParams) -> LambdaFloor {
    let decay = libm::exp(-constant_a(p) * p.h);
    let a2 = p.alpha * p.alpha;
    let q = decay * a2;
    if !(q > 1.0) {
        return LambdaFloor::NoFloor;
    }
    let first = decay * p.lambda0;
    let second = p.gamma * p.gamma / a2 * (q - 1.0);
    LambdaFloor::Floor(first.min(second))
}

/// `theta = (1 + alpha^2/gamma^2 lambda_*)^{-2} e^{2 (beta + epsilon) h}`; contracting iff `< 1`.
pub fn theta(p: &BoundParams, lam_star: f64) -> f64 {
    let shrink = 1.0 + p.alpha * p.alpha / (p.gamma * p.gamma) * lam_star;
    libm::exp(2.0 * (p.beta + p.epsilon) * p.h) / (shrink * shrink)
}

/// `(1 + alpha^2/gamma^2 lambda_*)^{-2}` for the given `alpha`.
fn shrink_factor(alpha: f64, gamma: f64, lam_star: f64) -> f64 {
    let s = 1.0 + alpha * alpha / (gamma * gamma) * lam_star;
    1.0 / (s * s)
}

/// Inflation threshold
/// `alpha_0 = max{lambda0^{-1/2} gamma e^{ah} (e^{(beta+eps)h} - 1)^{1/2}, e^{(a+beta+eps)h/2}}`.
///
/// Any `alpha > alpha_0` gives `theta < 1`.
pub fn alpha_zero(p: &BoundParams) -> f64 {
    let a = constant_a(p);
    let growth = (p.beta + p.epsilon) * p.h;
    let first = p.gamma * libm::exp(a * p.h) * libm::sqrt(libm::expm1(growth).max(0.0)) / libm::sqrt(p.lambda0);
    let second = libm::exp(0.5 * (a * p.h + growth));
    first.max(second)
}

/// All derived quantities for one parameter set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    pub d: f64,
    pub a: f64,
    pub lambda_star: LambdaFloor,
    /// Rate built from `lambda_*` (taken as 0 when there is no floor).
    pub theta: f64,
    /// `Theta = (1 + alpha_0^2/gamma^2 lambda_*)^{-2}`.
    pub theta_cap: f64,
    pub alpha0: f64,
}

impl DerivedConstants {
    pub fn compute(p: &BoundParams) -> Result<Self> {
        p.validate()?;
        let lambda_star = lambda_star(p);
        let lam = lambda_star.value().unwrap_or(0.0);
        let alpha0 = alpha_zero(p);
        Ok(DerivedConstants {
            d: constant_d(p),
            a: constant_a(p),
            lambda_star,
            theta: theta(p, lam),
            theta_cap: shrink_factor(alpha0, p.gamma, lam),
            alpha0,
        })
    }

    /// Same constants with `Theta` built from the run's own `alpha` instead of `alpha_0`.
    pub fn with_run_alpha_cap(self, p: &BoundParams) -> Self {
        let lam = self.lambda_star.value().unwrap_or(0.0);
        DerivedConstants { theta_cap: shrink_factor(p.alpha, p.gamma, lam), ..self }
    }

    pub fn is_contracting(&self) -> bool {
        self.theta < 1.0
    }
}

/// Finite-time bound on `E |e_j|^2`:
/// `theta^j (E0 + D) + m gamma^2 S_j + (S_j (1 - Theta) - 1) D` with
/// `S_j = (1 - theta^j)/(1 - theta)` (`S_j = j` at `theta = 1`).
pub fn finite_time_bound(j: usize, e0_sq: f64, p: &BoundParams, c: &DerivedConstants) -> f64 {
    let s = geometric_sum(c.theta, j);
    powi(c.theta, j) * (e0_sq + c.d) + p.m as f64 * p.gamma * p.gamma * s + (s * (1.0 - c.theta_cap) - 1.0) * c.d
}

/// One step of the recursion `B -> theta (B + D) + m gamma^2 - Theta D`.
pub fn bound_recursion_step(b: f64, p: &BoundParams, c: &DerivedConstants) -> f64 {
    c.theta * (b + c.d) + p.m as f64 * p.gamma * p.gamma - c.theta_cap * c.d
}

/// `m gamma^2 / (1 - theta) + ((1 - Theta)/(1 - theta) - 1) D`.
pub fn asymptotic_bound(p: &BoundParams, c: &DerivedConstants) -> Result<f64> {
    if !(c.theta < 1.0) {
        return Err(Error::NotContracting(c.theta));
    }
    let inv = 1.0 / (1.0 - c.theta);
    Ok(p.m as f64 * p.gamma * p.gamma * inv + ((1.0 - c.theta_cap) * inv - 1.0) * c.d)
}

/// `g(lambda) = e^{-ah} alpha^2 lambda / (1 + alpha^2/gamma^2 lambda)`, the
/// per-cycle lower bound on the forecast minimum eigenvalue.
pub fn floor_map(lambda: f64, p: &BoundParams) -> f64 {
    let a2 = p.alpha * p.alpha;
    libm::exp(-constant_a(p) * p.h) * a2 * lambda / (1.0 + a2 / (p.gamma * p.gamma) * lambda)
}

/// Limit of iterating [`floor_map`]: `gamma^2/alpha^2 (e^{-ah} alpha^2 - 1)` or 0.
pub fn floor_fixed_point(p: &BoundParams) -> f64 {
    let a2 = p.alpha * p.alpha;
    let q = libm::exp(-constant_a(p) * p.h) * a2;
    if q > 1.0 {
        p.gamma * p.gamma / a2 * (q - 1.0)
    } else {
        0.0
    }
}

/// Least-squares slope of `ln asymptotic_bound` against `ln gamma`.
pub fn gamma_scaling_exponent(template: &BoundParams, gammas: &[f64]) -> Result<f64> {
    if gammas.len() < 2 {
        return Err(Error::InvalidParameter("need at least two gamma values"));
    }
    let mut points = Vec::with_capacity(gammas.len());
    for &g in gammas {
        let p = template.with_gamma(g);
        let c = DerivedConstants::compute(&p)?;
        points.push((libm::log(g), libm::log(asymptotic_bound(&p, &c)?)));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidParameter("gamma values must be distinct"));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> BoundParams {
        BoundParams { beta: 1.0, epsilon: 0.1, rho: 1.0, h: 0.1, gamma: 0.5, n_members: 3, m: 3, alpha: 1.0, lambda0: 1.0 }
    }

    #[test]
    fn wellposed_examples() {
        let p = params();
        assert_eq!(wellposed_bound(0, 1.7, &p), 1.7);
        let one = wellposed_bound(1, 1.7, &p);
        let expected = libm::exp(0.2) * 1.7 + 2.0 * 0.25;
        assert!((one - expected).abs() < 1e-14);
        // direct scalar evaluation: e^{0.4} + 2 * 0.25 * (e^{0.4} - 1) / (e^{0.2} - 1)
        let two = wellposed_bound(2, 1.0, &p);
        let direct = 0.4f64.exp() + 0.5 * (0.4f64.exp() - 1.0) / (0.2f64.exp() - 1.0);
        assert!((two - direct).abs() < 1e-13);
        assert!((two - 2.602_52).abs() < 1e-5);
    }

    #[test]
    fn wellposed_zero_growth_limit() {
        let p = BoundParams { beta: 0.0, ..params() };
        assert!((wellposed_bound(7, 1.0, &p) - (1.0 + 7.0 * 2.0 * 0.25)).abs() < 1e-14);
        let tiny = BoundParams { beta: 1e-13, ..params() };
        assert!((wellposed_bound(7, 1.0, &tiny) - wellposed_bound(7, 1.0, &p)).abs() < 1e-9);
    }

    #[test]
    fn constant_examples() {
        let p = BoundParams { beta: 1.0, rho: 1.0, epsilon: 1.0, ..params() };
        assert_eq!(constant_d(&p), 0.5);
        assert_eq!(constant_d(&BoundParams { beta: 0.0, ..p }), 0.0);
        let scaled = constant_d(&BoundParams { rho: 3.0, ..p });
        assert!((scaled - 9.0 * constant_d(&p)).abs() < 1e-14);
        let p2 = BoundParams { n_members: 2, ..p };
        assert_eq!(constant_a(&p2), 16.0);
        assert_eq!(constant_a(&BoundParams { beta: 0.0, ..p }), 0.0);
        let mut last = f64::INFINITY;
        for n in 2..200 {
            let a = constant_a(&BoundParams { n_members: n, ..p });
            assert!(a < last && a > 8.0);
            last = a;
        }
    }

    #[test]
    fn floor_examples() {
        let p = BoundParams { beta: 0.0, alpha: 1.0, ..params() };
        assert_eq!(lambda_star(&p), LambdaFloor::NoFloor);
        let p = BoundParams { beta: 0.0, alpha: 1.5, lambda0: 0.3, ..params() };
        let expected = (0.3f64).min(0.25 * (1.0 - 1.0 / 2.25));
        assert!((lambda_star(&p).value().unwrap() - expected).abs() < 1e-15);
        let big = BoundParams { lambda0: 1e9, alpha: 3.0, ..params() };
        let q = libm::exp(-constant_a(&big) * big.h) * 9.0;
        assert!((lambda_star(&big).value().unwrap() - 0.25 / 9.0 * (q - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn theta_examples() {
        let p = params().with_alpha(2.0);
        assert!((theta(&p, 0.0) - libm::exp(2.0 * 1.1 * 0.1)).abs() < 1e-15);
        let threshold = (libm::exp(1.1 * 0.1) - 1.0) * p.gamma * p.gamma / (p.alpha * p.alpha);
        assert!((theta(&p, threshold) - 1.0).abs() < 1e-14);
        assert!(theta(&p, 2.0 * threshold) < theta(&p, threshold));
    }

    #[test]
    fn alpha_zero_examples() {
        let base = params();
        let a = constant_a(&base);
        let g = (base.beta + base.epsilon) * base.h;
        let lambda0 = base.gamma * base.gamma * libm::exp(2.0 * a * base.h) * libm::expm1(g);
        let p = BoundParams { lambda0, ..base };
        assert!((alpha_zero(&p) - libm::exp(0.5 * (a * base.h + g))).abs() < 1e-12);
        // nothing grows: a = 0 needs beta = 0; the first term vanishes as epsilon -> 0
        let still = BoundParams { beta: 0.0, epsilon: 1e-300, ..base };
        assert!((alpha_zero(&still) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn finite_time_examples() {
        let p = params().with_alpha(40.0);
        let c = DerivedConstants::compute(&p).unwrap();
        assert!((finite_time_bound(0, 0.8, &p, &c) - 0.8).abs() < 1e-12);
        let zero = DerivedConstants { theta: 0.0, ..c };
        let mut b = 0.8;
        for j in 1..10 {
            b = bound_recursion_step(b, &p, &zero);
            let direct = finite_time_bound(j, 0.8, &p, &zero);
            assert!((direct - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn asymptotic_examples() {
        let p = params().with_alpha(40.0);
        let c = DerivedConstants::compute(&p).unwrap();
        assert!(c.is_contracting());
        let nod = DerivedConstants { d: 0.0, ..c };
        assert!((asymptotic_bound(&p, &nod).unwrap() - 3.0 * 0.25 / (1.0 - c.theta)).abs() < 1e-14);
        let same = DerivedConstants { theta_cap: c.theta, ..c };
        assert!((asymptotic_bound(&p, &same).unwrap() - 3.0 * 0.25 / (1.0 - c.theta)).abs() < 1e-12);
        let far = finite_time_bound(1_000_000, 0.8, &p, &c);
        let lim = asymptotic_bound(&p, &c).unwrap();
        assert!((far - lim).abs() <= 1e-9 * lim.abs());
        let bad = DerivedConstants { theta: 1.0, ..c };
        assert_eq!(asymptotic_bound(&p, &bad), Err(Error::NotContracting(1.0)));
        // theta = 1 degenerates to the linear limit
        let j = 5;
        let lin = finite_time_bound(j, 0.8, &p, &bad);
        let expected = 0.8 + c.d + 3.0 * 0.25 * 5.0 + (5.0 * (1.0 - c.theta_cap) - 1.0) * c.d;
        assert!((lin - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn gamma_scaling_without_drift() {
        let template = BoundParams { beta: 0.0, epsilon: 0.1, rho: 1.0, h: 0.1, gamma: 1.0, n_members: 6, m: 3, alpha: 1.5, lambda0: 1.0 };
        let slope = gamma_scaling_exponent(&template, &[1e-2, 1e-3, 1e-4]).unwrap();
        assert!((slope - 2.0).abs() < 1e-3);
        let narrow = gamma_scaling_exponent(&template, &[0.1, 0.05]).unwrap();
        assert!((1.8..=2.2).contains(&narrow));
        let p = template.with_gamma(1e-3);
        let q = template.with_gamma(2e-3);
        let bp = asymptotic_bound(&p, &DerivedConstants::compute(&p).unwrap()).unwrap();
        let bq = asymptotic_bound(&q, &DerivedConstants::compute(&q).unwrap()).unwrap();
        assert!((bq / bp - 4.0).abs() < 1e-6);
        assert!(gamma_scaling_exponent(&template, &[0.1]).is_err());
    }

    #[test]
    fn floor_dynamics_fixed_point() {
        let p = BoundParams { beta: 0.01, alpha: 1.3, ..params() };
        let fp = floor_fixed_point(&p);
        assert!(fp > 0.0);
        assert!((floor_map(fp, &p) - fp).abs() < 1e-15);
        let mut l = 5.0;
        for _ in 0..10_000 {
            l = floor_map(l, &p);
        }
        assert!((l - fp).abs() < 1e-10);
    }

    #[test]
    fn validation() {
        assert!(BoundParams { epsilon: 0.0, ..params() }.validate().is_err());
        assert!(BoundParams { alpha: 0.5, ..params() }.validate().is_err());
        assert!(BoundParams { n_members: 1, ..params() }.validate().is_err());
        assert!(params().validate().is_ok());
    }
}
