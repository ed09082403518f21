//! Deterministic cross-layer checks on a parameter grid: the closed form
//! against the truncated-chain oracle, and the qualitative load response
//! of the root and the mean queue length.

use cloakq_core::analytic::{distribution_metrics, CharacteristicRoot, StationaryDistribution};
use cloakq_core::ctmc::{stationary, GeneratorMatrix};
use cloakq_core::SystemParams;

#[test]
fn ctmc_and_closed_form_agree_on_a_grid() {
    for lambda in [1.0f64, 5.0, 9.0] {
        for k in [2usize, 5] {
            for r in [0.33, 1.0] {
                let Ok(params) = SystemParams::new(lambda, 10.0, k, r) else {
                    continue; // unstable corner of the grid
                };
                let n = 300;
                let sol = stationary(&GeneratorMatrix::build(&params, n).unwrap()).unwrap();
                let root = CharacteristicRoot::solve(&params).unwrap();
                let dist = StationaryDistribution::analytic(&root, n);
                for state in 0..=n - 10 * k {
                    let gap = (dist.prob(state) - sol.prob(state)).abs();
                    assert!(
                        gap <= 1e-8,
                        "lambda {lambda} k {k} r {r} state {state}: gap {gap}"
                    );
                }
                let l_exact = dist.mean();
                let rel = (sol.mean() - l_exact).abs() / l_exact;
                assert!(rel <= 1e-6, "lambda {lambda} k {k} r {r}: rel L gap {rel}");
            }
        }
    }
}

#[test]
fn the_root_shrinks_toward_one_as_load_grows() {
    let mut previous = f64::INFINITY;
    for lambda in 1..=9 {
        let params = SystemParams::new(f64::from(lambda), 10.0, 3, 0.33).unwrap();
        let z0 = CharacteristicRoot::solve(&params).unwrap().z0();
        assert!(z0 > 1.0);
        assert!(z0 < previous, "z0 must fall with load, got {z0} after {previous}");
        previous = z0;
    }
}

#[test]
fn the_mean_queue_grows_with_load() {
    let mut previous = 0.0;
    for lambda in 1..=9 {
        let params = SystemParams::new(f64::from(lambda), 10.0, 3, 0.33).unwrap();
        let l = distribution_metrics(&CharacteristicRoot::solve(&params).unwrap()).l;
        assert!(l > previous, "L must grow with load, got {l} after {previous}");
        previous = l;
    }
}
