//! Model parameters, query records, and the shared metrics report.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{lit, Scalar};

/// Rejection reasons for model parameters.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("arrival rate lambda must be positive and finite, got {0}")]
    BadLambda(f64),
    #[error("service rate mu must be positive and finite, got {0}")]
    BadMu(f64),
    #[error("anonymity requirement k must be at least 1")]
    BadK,
    #[error("anonymization probability r must lie in (0, 1], got {0}")]
    BadR(f64),
    #[error("unstable parameters: lambda = {lambda} must stay below mu*r*k = {drain}")]
    Unstable { lambda: f64, drain: f64 },
    #[error("region dimensions must be positive and finite, got {0} x {1}")]
    BadRegion(f64, f64),
}

fn as_f64<T: Scalar>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Parameters of the anonymization queue.
///
/// `lambda` is the query arrival rate, `mu` the rate at which anonymization
/// attempts complete, `k` the batch (anonymity set) size, and `r` the
/// probability that an attempt succeeds. The queue drains at rate
/// `mu * r * k` when busy, so the stability condition is
/// `lambda < mu * r * k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams<T> {
    lambda: T,
    mu: T,
    k: usize,
    r: T,
}

impl<T: Scalar> SystemParams<T> {
    /// Validates every field, including stability.
    pub fn new(lambda: T, mu: T, k: usize, r: T) -> Result<Self, ParamError> {
        let p = Self::new_allowing_unstable(lambda, mu, k, r)?;
        if !p.is_stable() {
            return Err(ParamError::Unstable {
                lambda: as_f64(lambda),
                drain: as_f64(p.drain_rate()),
            });
        }
        Ok(p)
    }

    /// Validates positivity and ranges but tolerates an unstable load.
    ///
    /// Only the simulator accepts such parameters, and only in an explicit
    /// unstable-run mode; the analytic and CTMC layers require stability.
    pub fn new_allowing_unstable(lambda: T, mu: T, k: usize, r: T) -> Result<Self, ParamError> {
        if !(lambda.is_finite() && lambda > T::zero()) {
            return Err(ParamError::BadLambda(as_f64(lambda)));
        }
        if !(mu.is_finite() && mu > T::zero()) {
            return Err(ParamError::BadMu(as_f64(mu)));
        }
        if k == 0 {
            return Err(ParamError::BadK);
        }
        if !(r.is_finite() && r > T::zero() && r <= T::one()) {
            return Err(ParamError::BadR(as_f64(r)));
        }
        Ok(Self { lambda, mu, k, r })
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn r(&self) -> T {
        self.r
    }

    /// Offered load per attempt, `lambda / mu`.
    pub fn rho(&self) -> T {
        self.lambda / self.mu
    }

    /// Maximum long-run drain rate `mu * r * k`.
    pub fn drain_rate(&self) -> T {
        self.mu * self.r * crate::scalar::count::<T>(self.k)
    }

    /// Server utilization `lambda / (mu * r * k)`.
    pub fn utilization(&self) -> T {
        self.lambda / self.drain_rate()
    }

    pub fn is_stable(&self) -> bool {
        self.lambda < self.drain_rate()
    }
}

/// Rectangular deployment region of width `x` and height `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region<T> {
    x: T,
    y: T,
}

impl<T: Scalar> Region<T> {
    pub fn new(x: T, y: T) -> Result<Self, ParamError> {
        if !(x.is_finite() && x > T::zero() && y.is_finite() && y > T::zero()) {
            return Err(ParamError::BadRegion(as_f64(x), as_f64(y)));
        }
        Ok(Self { x, y })
    }

    /// The unit square, the default experimental region.
    pub fn unit() -> Self {
        Self {
            x: T::one(),
            y: T::one(),
        }
    }

    pub fn x(&self) -> T {
        self.x
    }

    pub fn y(&self) -> T {
        self.y
    }

    pub fn area(&self) -> T {
        self.x * self.y
    }

    pub fn contains(&self, x: T, y: T) -> bool {
        x >= T::zero() && x <= self.x && y >= T::zero() && y <= self.y
    }
}

/// A location-based query as submitted to the anonymizer.
///
/// Each query carries its submitter's identity, a position and timestamp,
/// the anonymity level `k` it demands, spatial tolerances `dx`/`dy` (full
/// widths of the acceptable cloaking rectangle centered on the position), a
/// temporal tolerance `dt`, and an opaque content payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbsQuery<T> {
    pub user_id: u64,
    pub query_no: u64,
    pub x: T,
    pub y: T,
    pub timestamp: T,
    pub k: usize,
    pub dx: T,
    pub dy: T,
    pub dt: T,
    pub content: String,
}

impl<T: Scalar> LbsQuery<T> {
    /// A query with only the geometry fields filled in, as used by the
    /// clique tests and the simulator.
    pub fn at(user_id: u64, x: T, y: T, dx: T, dy: T) -> Self {
        Self {
            user_id,
            query_no: 0,
            x,
            y,
            timestamp: T::zero(),
            k: 1,
            dx,
            dy,
            dt: T::zero(),
            content: String::new(),
        }
    }
}

/// Which layer of the toolkit produced a metrics report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    /// The mean-value formulas evaluated literally as printed.
    #[serde(rename = "paper-closed-form")]
    ClosedForm,
    /// Expectations of the stationary distribution (series plus tail).
    #[serde(rename = "distribution")]
    Distribution,
    /// Numerical solution of the truncated Markov chain.
    #[serde(rename = "ctmc")]
    Ctmc,
    /// Discrete-event simulation estimates.
    #[serde(rename = "simulation")]
    Simulation,
    /// Classical M/M/1 formulas (the `k = 1`, `r = 1` special case).
    #[serde(rename = "mm1-baseline")]
    Mm1Baseline,
}

impl Provenance {
    pub fn label(&self) -> &'static str {
        match self {
            Provenance::ClosedForm => "paper-closed-form",
            Provenance::Distribution => "distribution",
            Provenance::Ctmc => "ctmc",
            Provenance::Simulation => "simulation",
            Provenance::Mm1Baseline => "mm1-baseline",
        }
    }
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.label())
    }
}

/// The standard performance metrics, tagged with their origin.
///
/// `l`/`lq` are mean number in system/queue, `w`/`wq` mean sojourn/waiting
/// time, and `s` server utilization. The closed-form layer can report
/// out-of-range values (even negative `l`) in parts of the parameter space;
/// when that happens, or when it strays more than 1% from the distribution
/// layer, `warning` says so.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub params: SystemParams<T>,
    #[serde(rename = "L")]
    pub l: T,
    #[serde(rename = "Lq")]
    pub lq: T,
    #[serde(rename = "W")]
    pub w: T,
    #[serde(rename = "Wq")]
    pub wq: T,
    #[serde(rename = "S")]
    pub s: T,
    pub provenance: Provenance,
    pub warning: Option<String>,
}

impl<T: Scalar> MetricsReport<T> {
    /// Relative Little's-law gap `|L - lambda * W| / L`.
    ///
    /// For the distribution and CTMC layers this is zero by construction;
    /// for simulation output it measures estimator consistency.
    pub fn little_residual(&self) -> T {
        let expected = self.params.lambda() * self.w;
        if self.l == T::zero() {
            (self.l - expected).abs()
        } else {
            ((self.l - expected) / self.l).abs()
        }
    }

    /// Metric values in report order `L, Lq, W, Wq, S`.
    pub fn values(&self) -> [(&'static str, T); 5] {
        [
            ("L", self.l),
            ("Lq", self.lq),
            ("W", self.w),
            ("Wq", self.wq),
            ("S", self.s),
        ]
    }
}

/// Standard relative difference used in cross-layer comparisons: absolute
/// difference when the reference is (numerically) zero, relative otherwise.
pub fn relative_error<T: Scalar>(value: T, reference: T) -> T {
    let diff = (value - reference).abs();
    if reference.abs() < lit::<T>(1e-300) {
        diff
    } else {
        diff / reference.abs()
    }
}
