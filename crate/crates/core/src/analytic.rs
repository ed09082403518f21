//! Closed-form stationary analysis of the anonymization queue.
//!
//! The queue's balance equations admit a probability generating function
//! whose denominator is the characteristic polynomial
//!
//! ```text
//! f(z) = rho * z^(k+1) - (r + rho) * z^k + r,        rho = lambda / mu
//! ```
//!
//! `f(1) = 0` always; under stability (`lambda < mu*r*k`) exactly one real
//! root `z0` lies beyond 1, and the stationary distribution is geometric with
//! ratio `1/z0` from state `k` on:
//!
//! ```text
//! P_n = (1/k) * (1 - z0^-(n+1))                 for 0 <= n < k
//! P_n = (1/k) * (z0^(k-n-1) - z0^-(n+1))        for n >= k
//! ```
//!
//! Everything else in this module is bookkeeping around that root: solving
//! for it, summing the distribution, and evaluating the mean-value formulas.

use thiserror::Error;

use crate::params::{MetricsReport, ParamError, Provenance, SystemParams};
use crate::scalar::{count, lit, Scalar};

/// Default tolerance on `|f(z0)|` for the root solve.
pub const DEFAULT_ROOT_TOL: f64 = 1e-10;

/// Number of explicitly tabulated states in a reported distribution.
pub const DEFAULT_N_REPORT: usize = 200;

/// Failures of the characteristic-root solve.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RootError {
    #[error("no characteristic root beyond 1: requires stable parameters (lambda < mu*r*k)")]
    NoRootBeyondOne,
    #[error("root residual {residual} did not reach tolerance {tol}")]
    ToleranceNotReached { residual: f64, tol: f64 },
    #[error("invalid parameters: {0}")]
    BadParams(#[from] ParamError),
}

/// Failures of the `r = 1` reduction check.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ReductionError {
    #[error("reduction check requires r = 1, got {0}")]
    RNotOne(f64),
    #[error("general solution deviates from the r = 1 special case at n = {n}: |diff| = {diff}")]
    ReductionMismatch { n: usize, diff: f64 },
    #[error(transparent)]
    Root(#[from] RootError),
}

/// The dominant root `z0 > 1` of the characteristic polynomial, together
/// with the parameters it was solved for and two quality measures.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicRoot<T> {
    params: SystemParams<T>,
    z0: T,
    residual: T,
    identity_gap: T,
}

/// Full characteristic polynomial `f(z) = rho z^(k+1) - (r+rho) z^k + r`.
fn char_poly<T: Scalar>(params: &SystemParams<T>, z: T) -> T {
    let rho = params.rho();
    let r = params.r();
    let zk = z.powi(params.k() as i32);
    rho * zk * z - (r + rho) * zk + r
}

/// Deflated polynomial `q(z) = f(z) / (z - 1) = rho z^k - r (z^(k-1) + ... + 1)`.
///
/// Dividing out the trivial root at 1 leaves a polynomial with exactly one
/// positive real root (one sign change), which makes bracketing safe:
/// `q(1) = rho - r k < 0` under stability and `q(z) -> +inf`.
fn deflated_poly<T: Scalar>(params: &SystemParams<T>, z: T) -> T {
    let rho = params.rho();
    let r = params.r();
    // Horner evaluation of rho z^k - r z^(k-1) - ... - r z - r.
    let mut acc = rho;
    for _ in 0..params.k() {
        acc = acc * z - r;
    }
    acc
}

impl<T: Scalar> CharacteristicRoot<T> {
    /// Solves for `z0` at the default tolerance.
    pub fn solve(params: &SystemParams<T>) -> Result<Self, RootError> {
        solve_z0(params, lit(DEFAULT_ROOT_TOL))
    }

    /// Wraps an externally supplied root value (for example a published
    /// operating point) without enforcing any residual tolerance. The
    /// residual and identity gap still describe how well `z0` fits
    /// `params`, so callers can see the mismatch they are working with.
    pub fn with_value(params: SystemParams<T>, z0: T) -> Self {
        let residual = char_poly(&params, z0).abs();
        let identity_gap = root_identity_gap(&params, z0);
        Self {
            params,
            z0,
            residual,
            identity_gap,
        }
    }

    pub fn params(&self) -> &SystemParams<T> {
        &self.params
    }

    pub fn z0(&self) -> T {
        self.z0
    }

    /// `|f(z0)|` of the full characteristic polynomial.
    pub fn residual(&self) -> T {
        self.residual
    }

    /// Defect in the root identity `(rho/r)(z0 - 1) = 1 - z0^-k`, which is
    /// algebraically equivalent to `f(z0) = 0`.
    pub fn identity_gap(&self) -> T {
        self.identity_gap
    }
}

fn root_identity_gap<T: Scalar>(params: &SystemParams<T>, z0: T) -> T {
    let lhs = params.rho() / params.r() * (z0 - T::one());
    let rhs = T::one() - z0.powi(-(params.k() as i32));
    (lhs - rhs).abs()
}

/// Finds the unique root `z0 > 1` of the characteristic polynomial by
/// bisection on the deflated polynomial, to residual `|f(z0)| <= tol`.
pub fn solve_z0<T: Scalar>(params: &SystemParams<T>, tol: T) -> Result<CharacteristicRoot<T>, RootError> {
    if !params.is_stable() {
        return Err(RootError::NoRootBeyondOne);
    }

    // q just above 1 must be negative; the root lies beyond.
    let mut lo = T::one() + T::epsilon() * lit(4.0);
    if deflated_poly(params, lo) >= T::zero() {
        return Err(RootError::NoRootBeyondOne);
    }

    // Double an upper bound until the sign flips.
    let mut hi = lit::<T>(2.0);
    let mut guard = 0;
    while deflated_poly(params, hi) <= T::zero() {
        hi = hi * lit(2.0);
        guard += 1;
        if guard > 1100 {
            return Err(RootError::NoRootBeyondOne);
        }
    }

    let mut best = hi;
    let mut best_res = char_poly(params, hi).abs();
    for _ in 0..512 {
        let mid = (lo + hi) * lit(0.5);
        let res = char_poly(params, mid).abs();
        if res < best_res {
            best = mid;
            best_res = res;
        }
        if best_res <= tol {
            break;
        }
        if deflated_poly(params, mid) < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= T::epsilon() * hi {
            break;
        }
    }

    if best_res > tol {
        return Err(RootError::ToleranceNotReached {
            residual: best_res.to_f64().unwrap_or(f64::NAN),
            tol: tol.to_f64().unwrap_or(f64::NAN),
        });
    }

    let identity_gap = root_identity_gap(params, best);
    if identity_gap > tol * lit(10.0) {
        return Err(RootError::ToleranceNotReached {
            residual: identity_gap.to_f64().unwrap_or(f64::NAN),
            tol: (tol * lit::<T>(10.0)).to_f64().unwrap_or(f64::NAN),
        });
    }

    Ok(CharacteristicRoot {
        params: *params,
        z0: best,
        residual: best_res,
        identity_gap,
    })
}

/// Stationary probability of state `n` from the piecewise closed form.
///
/// Uses only non-positive powers of `z0`, so it cannot overflow however
/// large the root is.
pub fn state_prob<T: Scalar>(root: &CharacteristicRoot<T>, n: usize) -> T {
    let k = root.params.k();
    let z0 = root.z0;
    let inv_k = T::one() / count::<T>(k);
    let low_term = z0.powi(-(n as i32 + 1));
    if n < k {
        inv_k * (T::one() - low_term)
    } else {
        inv_k * (z0.powi(k as i32 - n as i32 - 1) - low_term)
    }
}

/// How a reported distribution was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistributionKind {
    AnalyticPiecewise,
    CtmcNumeric,
    SimulationEmpirical,
}

/// Geometric tail `P_n = coefficient * ratio^(n+1)` valid for `n >= start`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricTail<T> {
    /// Decay ratio, `1/z0`.
    pub ratio: T,
    /// First state the geometric law covers (the batch size `k`).
    pub start: usize,
    /// Leading coefficient `(z0^k - 1) / k`.
    pub coefficient: T,
}

/// A queue-length distribution: explicit probabilities for the first states
/// plus, for the analytic kind, an exact geometric tail descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution<T> {
    kind: DistributionKind,
    probs: Vec<T>,
    tail: Option<GeometricTail<T>>,
}

impl<T: Scalar> StationaryDistribution<T> {
    /// Tabulates the analytic distribution for states `0..=n_report` and
    /// attaches the tail descriptor.
    pub fn analytic(root: &CharacteristicRoot<T>, n_report: usize) -> Self {
        let k = root.params.k();
        let z0 = root.z0;
        // The table always covers the pre-batch states so that the tail
        // descriptor (valid from k on) never has to reach below its start.
        let n_report = n_report.max(k);
        let probs = (0..=n_report).map(|n| state_prob(root, n)).collect();
        let tail = GeometricTail {
            ratio: z0.recip(),
            start: k,
            coefficient: (z0.powi(k as i32) - T::one()) / count::<T>(k),
        };
        Self {
            kind: DistributionKind::AnalyticPiecewise,
            probs,
            tail: Some(tail),
        }
    }

    /// Wraps an explicit probability vector (CTMC or empirical); anything
    /// beyond the vector is taken to be zero.
    pub fn from_probs(kind: DistributionKind, probs: Vec<T>) -> Self {
        Self {
            kind,
            probs,
            tail: None,
        }
    }

    pub fn kind(&self) -> DistributionKind {
        self.kind
    }

    /// Number of explicitly tabulated states.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn tail(&self) -> Option<&GeometricTail<T>> {
        self.tail.as_ref()
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    /// `P_n`, from the table or the tail law.
    pub fn prob(&self, n: usize) -> T {
        if n < self.probs.len() {
            return self.probs[n];
        }
        match &self.tail {
            Some(tail) => tail_term(tail, n),
            None => T::zero(),
        }
    }

    /// Total probability mass including the closed-form tail beyond the
    /// tabulated range. Exactly 1 (to rounding) for the analytic kind.
    pub fn total_mass(&self) -> T {
        let head: T = self.probs.iter().copied().sum();
        head + self.tail_mass_from(self.probs.len())
    }

    /// `sum_{n >= n0} P_n`: closed form over the geometric tail plus any
    /// tabulated states below it; for tailless kinds, whatever the table
    /// still holds from `n0` on.
    pub fn tail_mass_from(&self, n0: usize) -> T {
        match &self.tail {
            Some(tail) => {
                let geo_from = n0.max(tail.start);
                let head: T = (n0..geo_from).map(|n| self.prob(n)).sum();
                // sum A t^(n+1) for n >= geo_from, computed in
                // underflow-safe non-positive powers:
                // (t^(n+1-k) - t^(n+1)) / (k (1 - t)).
                let t = tail.ratio;
                let k = tail.start;
                let a = t.powi((geo_from + 1 - k) as i32) - t.powi(geo_from as i32 + 1);
                head + a / (count::<T>(k) * (T::one() - t))
            }
            None => {
                let head: T = self.probs.iter().skip(n0).copied().sum();
                head
            }
        }
    }

    /// Mean queue length `sum n P_n`, with the tail summed in closed form.
    pub fn mean(&self) -> T {
        let mut head = T::zero();
        for (n, p) in self.probs.iter().enumerate() {
            head += count::<T>(n) * *p;
        }
        head + self.tail_mean_from(self.probs.len())
    }

    fn tail_mean_from(&self, n0: usize) -> T {
        match &self.tail {
            Some(tail) if n0 >= tail.start => {
                // sum n A t^(n+1) for n >= n0
                //   = A t^(n0+1) (n0 - (n0-1) t) / (1-t)^2,
                // again with A t^(n0+1) expanded to avoid overflow in A.
                let t = tail.ratio;
                let k = tail.start;
                let lead = (t.powi((n0 + 1 - k) as i32) - t.powi(n0 as i32 + 1)) / count::<T>(k);
                let n0t = count::<T>(n0);
                let one_minus_t = T::one() - t;
                lead * (n0t - (n0t - T::one()) * t) / (one_minus_t * one_minus_t)
            }
            Some(_) => panic!("tail mean requested before the tail start"),
            None => T::zero(),
        }
    }
}

fn tail_term<T: Scalar>(tail: &GeometricTail<T>, n: usize) -> T {
    // A t^(n+1) = (t^(n+1-k) - t^(n+1)) / k, safe for any magnitude of z0.
    let t = tail.ratio;
    let k = tail.start;
    (t.powi((n + 1 - k) as i32) - t.powi(n as i32 + 1)) / count::<T>(k)
}

/// The mean-value formulas evaluated exactly as printed:
///
/// ```text
/// L  = lambda/(mu r k) * (k     - 1/(z0-1))      W  = L  / lambda
/// Lq = lambda/(mu r k) * ((k-1) - 1/(z0-1))      Wq = Lq / lambda
/// S  = lambda/(mu r k)
/// ```
///
/// These are reported verbatim even where they leave the valid range; a
/// `warning` is attached when `L` is negative or strays more than 1% from
/// the distribution layer.
pub fn paper_metrics<T: Scalar>(root: &CharacteristicRoot<T>) -> MetricsReport<T> {
    let p = root.params;
    let s = p.utilization();
    let inv = (root.z0 - T::one()).recip();
    let k = count::<T>(p.k());
    let l = s * (k - inv);
    let lq = s * (k - T::one() - inv);
    let w = l / p.lambda();
    let wq = lq / p.lambda();

    let reference = distribution_metrics(root);
    let rel = crate::params::relative_error(l, reference.l);
    let mut warning = None;
    if l < T::zero() {
        warning = Some(format!("closed-form L = {l} is negative in this regime"));
    } else if rel > lit(0.01) {
        warning = Some(format!(
            "closed-form L = {l} deviates {:.2}% from the distribution value {}",
            rel * lit::<T>(100.0),
            reference.l
        ));
    }

    MetricsReport {
        params: p,
        l,
        lq,
        w,
        wq,
        s,
        provenance: Provenance::ClosedForm,
        warning,
    }
}

/// Metrics computed from the stationary distribution itself:
/// `L = sum n P_n` (tail in closed form), `W = L/lambda` by Little's law,
/// `Wq = W - 1/mu`, `Lq = lambda Wq`, `S = lambda/(mu r k)`.
pub fn distribution_metrics<T: Scalar>(root: &CharacteristicRoot<T>) -> MetricsReport<T> {
    let p = root.params;
    let dist = StationaryDistribution::analytic(root, DEFAULT_N_REPORT);
    let l = dist.mean();
    let w = l / p.lambda();
    let wq = w - p.mu().recip();
    let lq = p.lambda() * wq;
    MetricsReport {
        params: p,
        l,
        lq,
        w,
        wq,
        s: p.utilization(),
        provenance: Provenance::Distribution,
        warning: None,
    }
}

/// Classical M/M/1 baseline (`k = 1`, `r = 1`): `L = rho/(1-rho)`,
/// `W = 1/(mu-lambda)`, `Lq = rho^2/(1-rho)`, `Wq = rho/(mu-lambda)`,
/// `S = rho`. Requires `lambda < mu`.
pub fn mm1_metrics<T: Scalar>(lambda: T, mu: T) -> Result<MetricsReport<T>, ParamError> {
    let params = SystemParams::new(lambda, mu, 1, T::one())?;
    let rho = params.rho();
    let one_minus = T::one() - rho;
    Ok(MetricsReport {
        params,
        l: rho / one_minus,
        lq: rho * rho / one_minus,
        w: (mu - lambda).recip(),
        wq: rho / (mu - lambda),
        s: rho,
        provenance: Provenance::Mm1Baseline,
        warning: None,
    })
}

/// Outcome of the `r = 1` reduction check.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionReport<T> {
    /// Largest deviation between the general solution and the printed
    /// special case over the checked states.
    pub max_abs_diff: T,
    /// States `k..=checked_upto` were compared.
    pub checked_upto: usize,
    /// Whether the additional M/M/1 comparison ran (only for `k = 1`).
    pub mm1_checked: bool,
}

/// Verifies that at `r = 1` the general stationary solution collapses to
/// the printed special case `P_n = z0^(k-n-1) (1 - z0^-k) / k` for
/// `n = k..=50`, and for `k = 1` additionally to the M/M/1 law
/// `P_n = (1-rho) rho^n`.
pub fn reduction_check<T: Scalar>(
    params: &SystemParams<T>,
    tol: T,
) -> Result<ReductionReport<T>, ReductionError> {
    if params.r() != T::one() {
        return Err(ReductionError::RNotOne(params.r().to_f64().unwrap_or(f64::NAN)));
    }
    let root = CharacteristicRoot::solve(params)?;
    let z0 = root.z0();
    let k = params.k();
    let inv_k = T::one() / count::<T>(k);
    let upto = 50;

    let mut max_abs_diff = T::zero();
    let mut check = |n: usize, a: T, b: T| -> Result<(), ReductionError> {
        let diff = (a - b).abs();
        if diff > tol {
            return Err(ReductionError::ReductionMismatch {
                n,
                diff: diff.to_f64().unwrap_or(f64::NAN),
            });
        }
        if diff > max_abs_diff {
            max_abs_diff = diff;
        }
        Ok(())
    };

    // General piecewise solution versus the r = 1 special case, evaluated
    // as printed (different floating-point paths, same algebraic value).
    let one_minus_zk = T::one() - z0.powi(-(k as i32));
    for n in k..=upto {
        let general = state_prob(&root, n);
        let special = z0.powi(k as i32 - n as i32 - 1) * inv_k * one_minus_zk;
        check(n, general, special)?;
    }

    let mm1_checked = k == 1;
    if mm1_checked {
        let rho = params.rho();
        for n in 0..=upto {
            let general = state_prob(&root, n);
            let mm1 = (T::one() - rho) * rho.powi(n as i32);
            check(n, general, mm1)?;
        }
    }

    Ok(ReductionReport {
        max_abs_diff,
        checked_upto: upto,
        mm1_checked,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p64(lambda: f64, mu: f64, k: usize, r: f64) -> SystemParams<f64> {
        SystemParams::new(lambda, mu, k, r).unwrap()
    }

    #[test]
    fn root_matches_published_operating_point() {
        // rho = 0.5, r = 1, k = 3: z^3 - 2z^2 - 2z - 2 = 0 has its real
        // root near 2.9196 (the published table value).
        let root = CharacteristicRoot::solve(&p64(5.0, 10.0, 3, 1.0)).unwrap();
        assert!((root.z0() - 2.9196).abs() < 5e-4, "z0 = {}", root.z0());
        assert!(root.residual() <= 1e-10);
        assert!(root.identity_gap() <= 1e-9);
    }

    #[test]
    fn root_in_default_mixed_regime() {
        // Solving with the table's r = 0.33 instead gives a much smaller
        // root, near 1.4381 (independent bisection of the factored cubic
        // z^3 - 0.66 z^2 - 0.66 z - 0.66).
        let root = CharacteristicRoot::solve(&p64(5.0, 10.0, 3, 0.33)).unwrap();
        assert!((root.z0() - 1.4381).abs() < 5e-4, "z0 = {}", root.z0());
    }

    #[test]
    fn degree_one_root_is_exact() {
        // k = 1 collapses the deflated polynomial to rho z - r, so
        // z0 = r/rho exactly; at rho = 0.5, r = 1 that is 2.
        let root = CharacteristicRoot::solve(&p64(5.0, 10.0, 1, 1.0)).unwrap();
        assert!((root.z0() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn unstable_parameters_have_no_root_beyond_one() {
        let p = SystemParams::new_allowing_unstable(12.0, 10.0, 3, 0.33).unwrap();
        assert_eq!(CharacteristicRoot::solve(&p).unwrap_err(), RootError::NoRootBeyondOne);
    }

    #[test]
    fn z0_decreases_with_load() {
        // Heavier load pushes the root toward 1 from above.
        let mut prev = f64::INFINITY;
        for lambda in [1.0, 2.0, 3.0, 5.0, 7.0, 9.0] {
            let z0 = CharacteristicRoot::solve(&p64(lambda, 10.0, 3, 1.0))
                .unwrap()
                .z0();
            assert!(z0 > 1.0);
            assert!(z0 < prev, "z0 not decreasing at lambda = {lambda}");
            prev = z0;
        }
    }

    #[test]
    fn with_value_reports_residual_without_rejecting() {
        // Wrapping the published z0 = 2.9196 with the r = 0.33 parameters
        // is allowed; the residual simply shows the mismatch.
        let root = CharacteristicRoot::with_value(p64(5.0, 10.0, 3, 0.33), 2.9196);
        assert!(root.residual() > 1e-3);
    }

    #[test]
    fn boundary_state_probabilities() {
        // At the r = 1 operating point: P_0 = (1/3)(1 - 1/z0) with
        // z0 = 2.91964 gives 0.21916.
        let root = CharacteristicRoot::solve(&p64(5.0, 10.0, 3, 1.0)).unwrap();
        assert!((state_prob(&root, 0) - 0.21916).abs() < 5e-5);
        // P_n grows toward 1/k on the flat part: P_2 > P_1 > P_0.
        assert!(state_prob(&root, 1) > state_prob(&root, 0));
        assert!(state_prob(&root, 2) > state_prob(&root, 1));
        // Geometric decay beyond k: P_{n+1} = P_n / z0 for n >= k.
        let ratio = state_prob(&root, 7) / state_prob(&root, 6);
        assert!((ratio - 1.0 / root.z0()).abs() < 1e-12);
    }

    #[test]
    fn distribution_is_normalized_with_tail() {
        let root = CharacteristicRoot::solve(&p64(5.0, 10.0, 3, 0.33)).unwrap();
        let dist = StationaryDistribution::analytic(&root, DEFAULT_N_REPORT);
        assert!((dist.total_mass() - 1.0).abs() < 1e-8);
        // prob() hands out tail values past the table seamlessly.
        let direct = state_prob(&root, DEFAULT_N_REPORT + 5);
        assert!((dist.prob(DEFAULT_N_REPORT + 5) - direct).abs() < 1e-15);
    }

    #[test]
    fn normalization_is_insensitive_to_table_length() {
        let root = CharacteristicRoot::solve(&p64(9.0, 10.0, 3, 0.33)).unwrap();
        for n_report in [10, 50, 500] {
            let dist = StationaryDistribution::analytic(&root, n_report);
            assert!(
                (dist.total_mass() - 1.0).abs() < 1e-8,
                "mass off at n_report = {n_report}"
            );
        }
    }

    #[test]
    fn mean_is_independent_of_table_length() {
        let root = CharacteristicRoot::solve(&p64(5.0, 10.0, 3, 0.33)).unwrap();
        let short = StationaryDistribution::analytic(&root, 20).mean();
        let long = StationaryDistribution::analytic(&root, 400).mean();
        assert!((short - long).abs() < 1e-10);
    }

    #[test]
    fn distribution_metrics_at_default_parameters() {
        // Series summation with the closed-form tail: L ~ 3.283 at the
        // default operating point, and W = L/lambda.
        let root = CharacteristicRoot::solve(&p64(5.0, 10.0, 3, 0.33)).unwrap();
        let m = distribution_metrics(&root);
        assert!((m.l - 3.283).abs() < 5e-3, "L = {}", m.l);
        assert!((m.w - m.l / 5.0).abs() < 1e-12);
        assert!((m.wq - (m.w - 0.1)).abs() < 1e-12);
        assert!((m.s - 5.0 / 9.9).abs() < 1e-12);
        assert!(m.little_residual() < 1e-12);
    }

    #[test]
    fn distribution_metrics_at_r_one() {
        let root = CharacteristicRoot::solve(&p64(5.0, 10.0, 3, 1.0)).unwrap();
        let m = distribution_metrics(&root);
        assert!((m.l - 1.521).abs() < 5e-3, "L = {}", m.l);
    }

    #[test]
    fn paper_metrics_at_published_table_point() {
        // Evaluated verbatim at the published operating point (r = 0.33
        // with the table's z0 = 2.9196): S = 5/9.9 and
        // L = S * (3 - 1/1.9196) ~ 1.2521.
        let root = CharacteristicRoot::with_value(p64(5.0, 10.0, 3, 0.33), 2.9196);
        let m = paper_metrics(&root);
        assert!((m.s - 0.50505).abs() < 5e-5);
        assert!((m.l - 1.2521).abs() < 5e-4, "L = {}", m.l);
        assert!((m.l - m.lq - m.s).abs() < 1e-12, "L - Lq must equal S");
        // Far from the distribution value at these mismatched inputs.
        assert!(m.warning.is_some());
    }

    #[test]
    fn closed_form_degenerates_at_mm1_point() {
        // k = 1, r = 1, rho = 0.5: z0 = 2, so L = rho/... collapses to
        // 0.5 * (1 - 1/(2-1)) = 0 while the true M/M/1 mean is 1.
        let root = CharacteristicRoot::solve(&p64(5.0, 10.0, 1, 1.0)).unwrap();
        let paper = paper_metrics(&root);
        assert!(paper.l.abs() < 1e-9, "closed-form L = {}", paper.l);
        assert!(paper.warning.is_some());
        let dist = distribution_metrics(&root);
        assert!((dist.l - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mm1_metrics_are_textbook() {
        let m = mm1_metrics(5.0f64, 10.0).unwrap();
        assert!((m.l - 1.0).abs() < 1e-12);
        assert!((m.w - 0.2).abs() < 1e-12);
        assert!((m.lq - 0.5).abs() < 1e-12);
        assert!((m.wq - 0.1).abs() < 1e-12);
        assert!((m.s - 0.5).abs() < 1e-12);
        assert!(mm1_metrics(10.0f64, 10.0).is_err());
        assert!(mm1_metrics(12.0f64, 10.0).is_err());
    }

    #[test]
    fn distribution_agrees_with_mm1_at_the_special_point() {
        let root = CharacteristicRoot::solve(&p64(5.0, 10.0, 1, 1.0)).unwrap();
        let dist = distribution_metrics(&root);
        let mm1 = mm1_metrics(5.0f64, 10.0).unwrap();
        assert!((dist.l - mm1.l).abs() < 1e-9);
        assert!((dist.w - mm1.w).abs() < 1e-9);
        for n in 0..=50 {
            let p = state_prob(&root, n);
            let geo = 0.5f64.powi(n as i32 + 1);
            assert!((p - geo).abs() < 1e-10, "P_{n} = {p} vs {geo}");
        }
    }

    #[test]
    fn reduction_check_passes_at_r_one() {
        let report = reduction_check(&p64(5.0, 10.0, 3, 1.0), 1e-10).unwrap();
        assert!(report.max_abs_diff <= 1e-10);
        assert!(!report.mm1_checked);
        let report = reduction_check(&p64(5.0, 10.0, 1, 1.0), 1e-10).unwrap();
        assert!(report.mm1_checked);
    }

    #[test]
    fn reduction_check_requires_r_one() {
        assert!(matches!(
            reduction_check(&p64(5.0, 10.0, 3, 0.33), 1e-10).unwrap_err(),
            ReductionError::RNotOne(_)
        ));
    }

    #[test]
    fn f32_solve_reaches_a_loose_tolerance() {
        // The generic path works in single precision at a tolerance the
        // format can actually achieve.
        let p = SystemParams::<f32>::new(5.0, 10.0, 3, 1.0).unwrap();
        let root = solve_z0(&p, 1e-4f32).unwrap();
        assert!((root.z0() - 2.9196f32).abs() < 5e-3);
        // Tolerances far below single precision either genuinely reach
        // the requested residual (bisection can land on an exact f32
        // zero) or report failure; a root that misses the bar is never
        // returned silently.
        match solve_z0(&p, 1e-10f32) {
            Ok(root) => assert!(root.residual() <= 1e-10),
            Err(RootError::ToleranceNotReached { residual, .. }) => assert!(residual > 1e-10),
            Err(other) => panic!("unexpected error {other:?}"),
        }
    }
}
