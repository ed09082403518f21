//! Numerical oracle: the truncated continuous-time Markov chain.
//!
//! States are queue lengths `0..=N`. Transitions are arrivals `n -> n+1` at
//! rate `lambda` (disabled at the truncation boundary `N`, i.e. a reflecting
//! cut-off) and successful batch services `n -> n-k` at rate `mu*r` for
//! `n >= k`. Failed attempts leave the state unchanged and therefore do not
//! appear in the generator. The stationary vector of this chain is computed
//! without reference to the characteristic-root algebra, which is what makes
//! it an independent check of the closed forms.

use thiserror::Error;

use crate::analytic::{DistributionKind, StationaryDistribution};
use crate::params::{MetricsReport, Provenance, SystemParams};
use crate::scalar::{count, lit, Scalar};

/// Dimension above which [`stationary`] switches from the dense direct
/// solve to power iteration on the uniformized chain.
pub const DENSE_LIMIT: usize = 2000;

/// Mass tolerated in the top 10 states before the truncation is declared
/// too small to represent the infinite chain.
pub const TAIL_MASS_LIMIT: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CtmcError {
    #[error("truncation N = {n} too small: need at least 10k = {required} states")]
    TruncationTooSmall { n: usize, required: usize },
    #[error("truncation N = {n} too small: tail mass {tail_mass} exceeds {limit}")]
    TailMassTooLarge { n: usize, tail_mass: f64, limit: f64 },
    #[error("linear system is singular (pivot {pivot} at column {col})")]
    SingularSystem { col: usize, pivot: f64 },
    #[error("power iteration did not converge within {iterations} sweeps")]
    NotConverged { iterations: usize },
}

/// Generator of the truncated chain. The rate structure is implicit (three
/// diagonals' worth of entries), so only the parameters and the truncation
/// are stored; [`GeneratorMatrix::rate`] materializes any entry on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorMatrix<T> {
    params: SystemParams<T>,
    n: usize,
}

impl<T: Scalar> GeneratorMatrix<T> {
    /// Builds the generator truncated at state `n` (inclusive). Requires
    /// `n >= 10k` so the boundary sits well beyond the batch dynamics.
    pub fn build(params: &SystemParams<T>, n: usize) -> Result<Self, CtmcError> {
        let required = 10 * params.k();
        if n < required {
            return Err(CtmcError::TruncationTooSmall { n, required });
        }
        Ok(Self { params: *params, n })
    }

    pub fn params(&self) -> &SystemParams<T> {
        &self.params
    }

    /// Truncation state (the largest represented queue length).
    pub fn truncation(&self) -> usize {
        self.n
    }

    /// Number of states, `N + 1`.
    pub fn dim(&self) -> usize {
        self.n + 1
    }

    /// Rate `Q[from][to]`, including the negative diagonal.
    pub fn rate(&self, from: usize, to: usize) -> T {
        let lambda = self.params.lambda();
        let mu_r = self.params.mu() * self.params.r();
        let k = self.params.k();
        if to == from + 1 && to <= self.n {
            lambda
        } else if from >= k && to + k == from {
            mu_r
        } else if from == to {
            let mut out = T::zero();
            if from < self.n {
                out += lambda;
            }
            if from >= k {
                out += mu_r;
            }
            -out
        } else {
            T::zero()
        }
    }

    /// Sum of row `from`; zero for a conservative generator.
    pub fn row_sum(&self, from: usize) -> T {
        (0..self.dim()).map(|to| self.rate(from, to)).sum()
    }
}

/// Stationary vector of the truncated chain plus solution diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmcSolution<T> {
    probs: Vec<T>,
    residual: T,
    tail_mass: T,
}

impl<T: Scalar> CtmcSolution<T> {
    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    pub fn prob(&self, n: usize) -> T {
        self.probs.get(n).copied().unwrap_or_else(T::zero)
    }

    /// Worst absolute defect of the balance equations
    /// (`P_0 lambda = P_k mu r` and its two general forms) evaluated on the
    /// solved vector, over all states whose equations involve only
    /// represented states.
    pub fn residual(&self) -> T {
        self.residual
    }

    /// Probability mass in the top 10 states; a truncation-quality gauge.
    pub fn tail_mass(&self) -> T {
        self.tail_mass
    }

    pub fn mean(&self) -> T {
        self.probs
            .iter()
            .enumerate()
            .map(|(n, p)| count::<T>(n) * *p)
            .sum()
    }

    /// The solution as a tailless distribution table.
    pub fn distribution(&self) -> StationaryDistribution<T> {
        StationaryDistribution::from_probs(DistributionKind::CtmcNumeric, self.probs.clone())
    }
}

/// Solves `pi Q = 0`, `sum pi = 1` for the truncated generator.
///
/// Small systems go through a dense direct solve (one balance equation
/// replaced by normalization, Gaussian elimination with partial pivoting);
/// larger ones through power iteration on the uniformized jump chain.
pub fn stationary<T: Scalar>(g: &GeneratorMatrix<T>) -> Result<CtmcSolution<T>, CtmcError> {
    let probs = if g.dim() <= DENSE_LIMIT + 1 {
        solve_dense(g)?
    } else {
        solve_power(g)?
    };
    finish_solution(g, probs)
}

/// Forces the dense path (used by tests to cross-check the two solvers).
pub fn stationary_dense<T: Scalar>(g: &GeneratorMatrix<T>) -> Result<CtmcSolution<T>, CtmcError> {
    let probs = solve_dense(g)?;
    finish_solution(g, probs)
}

/// Forces the power-iteration path.
pub fn stationary_power<T: Scalar>(g: &GeneratorMatrix<T>) -> Result<CtmcSolution<T>, CtmcError> {
    let probs = solve_power(g)?;
    finish_solution(g, probs)
}

fn finish_solution<T: Scalar>(
    g: &GeneratorMatrix<T>,
    mut probs: Vec<T>,
) -> Result<CtmcSolution<T>, CtmcError> {
    // Clamp the tiny negative rounding artifacts and renormalize.
    for p in probs.iter_mut() {
        if *p < T::zero() {
            debug_assert!(
                p.abs() < lit(1e-9),
                "stationary solve produced a substantially negative probability"
            );
            *p = T::zero();
        }
    }
    let total: T = probs.iter().copied().sum();
    for p in probs.iter_mut() {
        *p = *p / total;
    }

    let residual = balance_residual(g, &probs);
    let tail_mass: T = probs.iter().rev().take(10).copied().sum();
    if tail_mass > lit(TAIL_MASS_LIMIT) {
        return Err(CtmcError::TailMassTooLarge {
            n: g.truncation(),
            tail_mass: tail_mass.to_f64().unwrap_or(f64::NAN),
            limit: TAIL_MASS_LIMIT,
        });
    }
    Ok(CtmcSolution {
        probs,
        residual,
        tail_mass,
    })
}

/// Evaluates the printed balance equations on a candidate vector:
///
/// ```text
/// n = 0:        P_0 lambda            = P_k     mu r
/// 0 < n < k:    P_n lambda            = P_{n-1} lambda + P_{n+k} mu r
/// n >= k:       P_n (mu r + lambda)   = P_{n-1} lambda + P_{n+k} mu r
/// ```
///
/// Only states with `n + k <= N` are checked; at the reflecting boundary
/// the truncated chain deliberately deviates from the infinite one.
pub fn balance_residual<T: Scalar>(g: &GeneratorMatrix<T>, probs: &[T]) -> T {
    let lambda = g.params().lambda();
    let mu_r = g.params().mu() * g.params().r();
    let k = g.params().k();
    let mut worst = T::zero();
    for n in 0..=(g.truncation().saturating_sub(k)) {
        let inflow = if n == 0 {
            probs[k] * mu_r
        } else {
            probs[n - 1] * lambda + probs[n + k] * mu_r
        };
        let outflow = if n < k {
            probs[n] * lambda
        } else {
            probs[n] * (mu_r + lambda)
        };
        let defect = (inflow - outflow).abs();
        if defect > worst {
            worst = defect;
        }
    }
    worst
}

/// Dense Gaussian elimination on `Q^T pi = 0` with the last balance
/// equation replaced by `sum pi = 1`.
fn solve_dense<T: Scalar>(g: &GeneratorMatrix<T>) -> Result<Vec<T>, CtmcError> {
    let dim = g.dim();
    let mut a = vec![T::zero(); dim * dim];
    let mut b = vec![T::zero(); dim];

    for row in 0..dim - 1 {
        // Row `row` of Q^T holds the balance equation of state `row`:
        // entries Q[col][row] over all cols. Materialize just the nonzero
        // band: arrival from row-1, departure from row+k, and the diagonal.
        a[row * dim + row] = g.rate(row, row);
        if row > 0 {
            a[row * dim + (row - 1)] = g.rate(row - 1, row);
        }
        if row + g.params().k() < dim {
            let from = row + g.params().k();
            a[row * dim + from] = g.rate(from, row);
        }
    }
    for col in 0..dim {
        a[(dim - 1) * dim + col] = T::one();
    }
    b[dim - 1] = T::one();

    gaussian_solve(&mut a, &mut b, dim)?;
    Ok(b)
}

/// In-place partial-pivot elimination; the solution lands in `b`.
fn gaussian_solve<T: Scalar>(a: &mut [T], b: &mut [T], dim: usize) -> Result<(), CtmcError> {
    for col in 0..dim {
        let mut pivot_row = col;
        let mut pivot_mag = a[col * dim + col].abs();
        for row in col + 1..dim {
            let mag = a[row * dim + col].abs();
            if mag > pivot_mag {
                pivot_row = row;
                pivot_mag = mag;
            }
        }
        if pivot_mag < T::min_positive_value() * lit(1e20) {
            return Err(CtmcError::SingularSystem {
                col,
                pivot: pivot_mag.to_f64().unwrap_or(0.0),
            });
        }
        if pivot_row != col {
            for j in 0..dim {
                a.swap(col * dim + j, pivot_row * dim + j);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * dim + col];
        for row in col + 1..dim {
            let factor = a[row * dim + col] / pivot;
            if factor == T::zero() {
                continue;
            }
            a[row * dim + col] = T::zero();
            for j in col + 1..dim {
                let upper = a[col * dim + j];
                a[row * dim + j] = a[row * dim + j] - factor * upper;
            }
            b[row] = b[row] - factor * b[col];
        }
    }
    for col in (0..dim).rev() {
        let mut acc = b[col];
        for j in col + 1..dim {
            acc = acc - a[col * dim + j] * b[j];
        }
        b[col] = acc / a[col * dim + col];
    }
    Ok(())
}

/// Power iteration on the uniformized chain `P = I + Q / Lambda` with
/// `Lambda = lambda + mu r` (the largest total exit rate). The iteration
/// exploits the sparse band directly, so each sweep is O(N).
fn solve_power<T: Scalar>(g: &GeneratorMatrix<T>) -> Result<Vec<T>, CtmcError> {
    let dim = g.dim();
    let lambda = g.params().lambda();
    let mu_r = g.params().mu() * g.params().r();
    let k = g.params().k();
    let big = lambda + mu_r;

    let mut pi = vec![T::one() / count::<T>(dim); dim];
    let mut next = vec![T::zero(); dim];
    let tol = T::epsilon() * lit(16.0);
    let max_sweeps = 4_000_000 / dim.max(1) + 200_000;

    for sweep in 0..max_sweeps {
        for x in next.iter_mut() {
            *x = T::zero();
        }
        for n in 0..dim {
            let p = pi[n];
            if p == T::zero() {
                continue;
            }
            let mut stay = T::one();
            if n < dim - 1 {
                let move_up = lambda / big;
                next[n + 1] += p * move_up;
                stay -= move_up;
            }
            if n >= k {
                let move_down = mu_r / big;
                next[n - k] += p * move_down;
                stay -= move_down;
            }
            next[n] += p * stay;
        }
        let total: T = next.iter().copied().sum();
        let mut delta = T::zero();
        for n in 0..dim {
            let v = next[n] / total;
            let d = (v - pi[n]).abs();
            if d > delta {
                delta = d;
            }
            pi[n] = v;
        }
        if delta < tol {
            return Ok(pi);
        }
        let _ = sweep;
    }
    Err(CtmcError::NotConverged {
        iterations: max_sweeps,
    })
}

/// Metrics from the CTMC stationary vector: `L = sum n pi_n`,
/// `W = L/lambda`, `Wq = W - 1/mu`, `Lq = lambda Wq`,
/// `S = lambda/(mu r k)`.
pub fn ctmc_metrics<T: Scalar>(sol: &CtmcSolution<T>, params: &SystemParams<T>) -> MetricsReport<T> {
    let l = sol.mean();
    let w = l / params.lambda();
    let wq = w - params.mu().recip();
    let lq = params.lambda() * wq;
    MetricsReport {
        params: *params,
        l,
        lq,
        w,
        wq,
        s: params.utilization(),
        provenance: Provenance::Ctmc,
        warning: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{state_prob, CharacteristicRoot};

    fn p64(lambda: f64, mu: f64, k: usize, r: f64) -> SystemParams<f64> {
        SystemParams::new(lambda, mu, k, r).unwrap()
    }

    #[test]
    fn generator_structure_at_default_parameters() {
        let g = GeneratorMatrix::build(&p64(5.0, 10.0, 3, 0.33), 300).unwrap();
        assert_eq!(g.dim(), 301);
        // Arrivals on the superdiagonal.
        assert_eq!(g.rate(0, 1), 5.0);
        assert_eq!(g.rate(299, 300), 5.0);
        // No arrival out of the truncation state.
        assert_eq!(g.rate(300, 300), -(10.0 * 0.33));
        // Batch departures k below, only from n >= k.
        assert!((g.rate(3, 0) - 3.3).abs() < 1e-12);
        assert_eq!(g.rate(2, 0), 0.0);
        assert!((g.rate(10, 7) - 3.3).abs() < 1e-12);
        // The failed-attempt self-loop does not exist: state 5's total
        // outflow is arrival plus successful service only.
        assert!((g.rate(5, 5) + 5.0 + 3.3).abs() < 1e-12);
        // Conservative rows.
        for n in [0, 1, 2, 3, 150, 299, 300] {
            assert!(g.row_sum(n).abs() < 1e-12, "row {n}");
        }
    }

    #[test]
    fn truncation_must_cover_ten_batches() {
        assert!(matches!(
            GeneratorMatrix::build(&p64(5.0, 10.0, 3, 0.33), 29),
            Err(CtmcError::TruncationTooSmall { required: 30, .. })
        ));
        assert!(GeneratorMatrix::build(&p64(5.0, 10.0, 3, 0.33), 30).is_ok());
    }

    #[test]
    fn stationary_matches_analytic_distribution() {
        let params = p64(5.0, 10.0, 3, 0.33);
        let g = GeneratorMatrix::build(&params, 300).unwrap();
        let sol = stationary(&g).unwrap();
        let root = CharacteristicRoot::solve(&params).unwrap();
        for n in 0..=270 {
            let diff = (sol.prob(n) - state_prob(&root, n)).abs();
            assert!(diff < 1e-10, "state {n}: diff {diff}");
        }
        assert!(sol.residual() < 1e-10);
        assert!(sol.tail_mass() < 1e-12);
        let mass: f64 = sol.probs().iter().sum();
        assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mm1_special_case_is_geometric() {
        let params = p64(5.0, 10.0, 1, 1.0);
        let g = GeneratorMatrix::build(&params, 300).unwrap();
        let sol = stationary(&g).unwrap();
        for n in 0..=100 {
            let expected = 0.5f64.powi(n as i32 + 1);
            assert!((sol.prob(n as usize) - expected).abs() < 1e-10, "state {n}");
        }
        let m = ctmc_metrics(&sol, &params);
        assert!((m.l - 1.0).abs() < 1e-9);
        assert!((m.w - 0.2).abs() < 1e-9);
    }

    #[test]
    fn doubling_the_truncation_leaves_l_unchanged() {
        let params = p64(5.0, 10.0, 3, 0.33);
        let l300 = stationary(&GeneratorMatrix::build(&params, 300).unwrap())
            .unwrap()
            .mean();
        let l600 = stationary(&GeneratorMatrix::build(&params, 600).unwrap())
            .unwrap()
            .mean();
        assert!((l300 - l600).abs() < 1e-9, "L300 {l300} vs L600 {l600}");
    }

    #[test]
    fn power_iteration_agrees_with_dense_solve() {
        let params = p64(5.0, 10.0, 3, 0.33);
        let g = GeneratorMatrix::build(&params, 320).unwrap();
        let dense = stationary_dense(&g).unwrap();
        let power = stationary_power(&g).unwrap();
        for n in 0..g.dim() {
            assert!(
                (dense.prob(n) - power.prob(n)).abs() < 1e-11,
                "state {n} disagrees"
            );
        }
    }

    #[test]
    fn large_truncations_switch_to_power_iteration() {
        // Above DENSE_LIMIT the automatic path must still reproduce the
        // analytic distribution.
        let params = p64(5.0, 10.0, 3, 0.33);
        let g = GeneratorMatrix::build(&params, DENSE_LIMIT + 100).unwrap();
        let sol = stationary(&g).unwrap();
        let root = CharacteristicRoot::solve(&params).unwrap();
        for n in 0..=60 {
            assert!((sol.prob(n) - state_prob(&root, n)).abs() < 1e-9, "state {n}");
        }
    }

    #[test]
    fn heavy_load_with_small_truncation_fails_tail_check() {
        // lambda = 9.8 of a drain 9.9: the queue is long, so at N = 60 the
        // top states still carry visible mass.
        let params = p64(9.8, 10.0, 3, 0.33);
        let g = GeneratorMatrix::build(&params, 60).unwrap();
        assert!(matches!(
            stationary(&g),
            Err(CtmcError::TailMassTooLarge { .. })
        ));
    }

    #[test]
    fn ctmc_metrics_follow_the_reporting_conventions() {
        let params = p64(5.0, 10.0, 3, 0.33);
        let sol = stationary(&GeneratorMatrix::build(&params, 300).unwrap()).unwrap();
        let m = ctmc_metrics(&sol, &params);
        assert!((m.w - m.l / 5.0).abs() < 1e-12);
        assert!((m.wq - (m.w - 0.1)).abs() < 1e-12);
        assert!((m.lq - 5.0 * m.wq).abs() < 1e-12);
        assert!((m.s - 5.0 / 9.9).abs() < 1e-12);
    }
}
