//! Spatial side of the anonymizer: tolerance rectangles, constraint graphs,
//! cliques, and estimates of the anonymization probability `r`.
//!
//! Pending queries form a graph in which an edge means "these two requests
//! can share a cloaking region". A batch of `k` queries is anonymizable
//! exactly when it induces a complete subgraph, so the per-attempt success
//! probability `r` of the queueing model is, geometrically, the probability
//! that `k` random queries form a clique.

use thiserror::Error;

use crate::params::{LbsQuery, Region};
use crate::rng::RandomStream;
use crate::scalar::{count, lit, Scalar};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("clique size k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("expected {expected} per-query entries, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("Monte Carlo estimation needs at least one sample")]
    NoSamples,
    #[error("tolerance bounds must satisfy 0 <= lo <= hi")]
    BadToleranceRange,
}

/// Pairwise compatibility rules between two queries.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeRule<T> {
    /// Each position lies inside the other query's tolerance rectangle
    /// (`|x_p - x_q| <= dx_q / 2` etc., in both directions).
    MutualContainment,
    /// Euclidean distance at most `d_avg`, the mean pairwise distance over
    /// the node set the graph was built from. With fewer than two prior
    /// nodes the mean is undefined and the rule is vacuously false, which
    /// is the conservative reading (no edges until a population exists).
    AverageDistance { d_avg: Option<T> },
    /// Each position lies inside the other query's minimum bounding box,
    /// realized as a square of the configured area centered on the query.
    Mmb { side_p: T, side_q: T },
}

/// Evaluates one pairwise rule. The region is the common deployment area;
/// positions are expected to lie inside it.
pub fn edge<T: Scalar>(
    p: &LbsQuery<T>,
    q: &LbsQuery<T>,
    rule: &EdgeRule<T>,
    region: &Region<T>,
) -> bool {
    debug_assert!(region.contains(p.x, p.y) && region.contains(q.x, q.y));
    let two = lit::<T>(2.0);
    let dx = (p.x - q.x).abs();
    let dy = (p.y - q.y).abs();
    match rule {
        EdgeRule::MutualContainment => {
            dx <= q.dx / two && dy <= q.dy / two && dx <= p.dx / two && dy <= p.dy / two
        }
        EdgeRule::AverageDistance { d_avg } => match d_avg {
            Some(threshold) => (dx * dx + dy * dy).sqrt() <= *threshold,
            None => false,
        },
        EdgeRule::Mmb { side_p, side_q } => {
            dx <= *side_q / two && dy <= *side_q / two && dx <= *side_p / two && dy <= *side_p / two
        }
    }
}

/// Which rule a constraint graph should apply, before per-node data
/// (average distances, MMB sides) has been resolved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeRuleKind {
    MutualContainment,
    AverageDistance,
    Mmb,
}

/// Mean pairwise Euclidean distance; `None` below two nodes.
pub fn average_pairwise_distance<T: Scalar>(nodes: &[LbsQuery<T>]) -> Option<T> {
    if nodes.len() < 2 {
        return None;
    }
    let mut total = T::zero();
    let mut pairs = 0usize;
    for i in 0..nodes.len() {
        for j in i + 1..nodes.len() {
            let dx = nodes[i].x - nodes[j].x;
            let dy = nodes[i].y - nodes[j].y;
            total += (dx * dx + dy * dy).sqrt();
            pairs += 1;
        }
    }
    Some(total / count::<T>(pairs))
}

/// Undirected compatibility graph over a set of pending queries.
#[derive(Debug, Clone)]
pub struct ConstraintGraph {
    n: usize,
    adj: Vec<bool>,
}

impl ConstraintGraph {
    /// Builds the graph for `nodes` under the given rule. For the MMB rule,
    /// `mmb_areas` must supply one area per node; the other rules ignore it.
    pub fn build<T: Scalar>(
        nodes: &[LbsQuery<T>],
        kind: EdgeRuleKind,
        mmb_areas: Option<&[T]>,
        region: &Region<T>,
    ) -> Result<Self, GeometryError> {
        let n = nodes.len();
        let sides: Option<Vec<T>> = match kind {
            EdgeRuleKind::Mmb => {
                let areas = mmb_areas.ok_or(GeometryError::LengthMismatch {
                    expected: n,
                    got: 0,
                })?;
                if areas.len() != n {
                    return Err(GeometryError::LengthMismatch {
                        expected: n,
                        got: areas.len(),
                    });
                }
                Some(areas.iter().map(|a| a.sqrt()).collect())
            }
            _ => None,
        };
        let d_avg = match kind {
            EdgeRuleKind::AverageDistance => average_pairwise_distance(nodes),
            _ => None,
        };

        let mut adj = vec![false; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let rule = match kind {
                    EdgeRuleKind::MutualContainment => EdgeRule::MutualContainment,
                    EdgeRuleKind::AverageDistance => EdgeRule::AverageDistance { d_avg },
                    EdgeRuleKind::Mmb => {
                        let sides = sides.as_ref().expect("sides resolved above");
                        EdgeRule::Mmb {
                            side_p: sides[i],
                            side_q: sides[j],
                        }
                    }
                };
                if edge(&nodes[i], &nodes[j], &rule, region) {
                    adj[i * n + j] = true;
                    adj[j * n + i] = true;
                }
            }
        }
        Ok(Self { n, adj })
    }

    /// Graph from an explicit adjacency closure (tests, random graphs).
    pub fn from_edges(n: usize, mut connected: impl FnMut(usize, usize) -> bool) -> Self {
        let mut adj = vec![false; n * n];
        for i in 0..n {
            for j in i + 1..n {
                if connected(i, j) {
                    adj[i * n + j] = true;
                    adj[j * n + i] = true;
                }
            }
        }
        Self { n, adj }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        i != j && self.adj[i * self.n + j]
    }

    pub fn degree(&self, i: usize) -> usize {
        (0..self.n).filter(|&j| self.adjacent(i, j)).count()
    }
}

/// Searches for a `k`-clique containing the most recent arrival (the last
/// node). Returns the member indices in ascending order, or `None`. For
/// `k = 1` the newest node alone qualifies.
pub fn clique_exists(g: &ConstraintGraph, k: usize) -> Option<Vec<usize>> {
    if g.len() == 0 || k == 0 || k > g.len() {
        return None;
    }
    let anchor = g.len() - 1;
    if k == 1 {
        return Some(vec![anchor]);
    }
    let candidates: Vec<usize> = (0..anchor).filter(|&j| g.adjacent(anchor, j)).collect();
    let mut chosen = Vec::with_capacity(k);
    if extend_clique(g, &candidates, 0, &mut chosen, k - 1) {
        chosen.push(anchor);
        Some(chosen)
    } else {
        None
    }
}

/// Searches for any `k`-clique in the graph (no anchoring).
pub fn any_clique(g: &ConstraintGraph, k: usize) -> Option<Vec<usize>> {
    if k == 0 || k > g.len() {
        return None;
    }
    if k == 1 {
        return Some(vec![0]);
    }
    let all: Vec<usize> = (0..g.len()).collect();
    let mut chosen = Vec::with_capacity(k);
    if extend_clique(g, &all, 0, &mut chosen, k) {
        Some(chosen)
    } else {
        None
    }
}

/// Depth-first extension: grow `chosen` with candidates from index `from`
/// on, keeping every pair adjacent. Exhaustive over the candidate subsets,
/// which is fine at the batch sizes in scope.
fn extend_clique(
    g: &ConstraintGraph,
    candidates: &[usize],
    from: usize,
    chosen: &mut Vec<usize>,
    need: usize,
) -> bool {
    if need == 0 {
        return true;
    }
    if candidates.len() - from < need {
        return false;
    }
    for idx in from..candidates.len() {
        let c = candidates[idx];
        if chosen.iter().all(|&m| g.adjacent(m, c)) {
            chosen.push(c);
            if extend_clique(g, candidates, idx + 1, chosen, need - 1) {
                return true;
            }
            chosen.pop();
        }
    }
    false
}

/// Closed-form clique-probability estimates; `printed` is the formula
/// evaluated literally, `independence` the variant that treats each
/// directed containment as an independent area ratio. Both are coarse
/// approximations — the Monte Carlo estimate is the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CliqueProbability<T> {
    pub printed: T,
    pub independence: T,
}

/// Anonymization probability for tolerance-rectangle cloaking over `k`
/// queries with per-query tolerances `(dx_i, dy_i)`:
///
/// ```text
/// printed       = prod_i (dx_i dy_i)^(k-1) / (X Y)^(2k)
/// independence  = prod_i (dx_i dy_i)^(k-1) / (X Y)^(k(k-1))
/// ```
///
/// The two coincide exactly at `k = 3`, where `2k = k(k-1)`. Degenerate
/// (zero-area) tolerances simply yield probability zero.
pub fn r_cliquecloak<T: Scalar>(
    tolerances: &[(T, T)],
    region: &Region<T>,
    k: usize,
) -> Result<CliqueProbability<T>, GeometryError> {
    if k < 2 {
        return Err(GeometryError::KTooSmall(k));
    }
    if tolerances.len() != k {
        return Err(GeometryError::LengthMismatch {
            expected: k,
            got: tolerances.len(),
        });
    }
    let areas: Vec<T> = tolerances.iter().map(|&(dx, dy)| dx * dy).collect();
    Ok(clique_probability_from_areas(&areas, region, k))
}

/// Same structure for MMB cloaking, with per-query MMB areas.
pub fn r_iclique<T: Scalar>(
    mmb_areas: &[T],
    region: &Region<T>,
    k: usize,
) -> Result<CliqueProbability<T>, GeometryError> {
    if k < 2 {
        return Err(GeometryError::KTooSmall(k));
    }
    if mmb_areas.len() != k {
        return Err(GeometryError::LengthMismatch {
            expected: k,
            got: mmb_areas.len(),
        });
    }
    Ok(clique_probability_from_areas(mmb_areas, region, k))
}

fn clique_probability_from_areas<T: Scalar>(
    areas: &[T],
    region: &Region<T>,
    k: usize,
) -> CliqueProbability<T> {
    let region_area = region.area();
    let prod = areas
        .iter()
        .fold(T::one(), |acc, &a| acc * a.powi(k as i32 - 1));
    let printed = prod / region_area.powi(2 * k as i32);
    let independence = prod / region_area.powi((k * (k - 1)) as i32);
    CliqueProbability {
        printed,
        independence,
    }
}

/// How per-query tolerances are generated in Monte Carlo sampling and the
/// geometric simulation mode.
#[derive(Debug, Clone, PartialEq)]
pub enum ToleranceModel<T> {
    /// One fixed `(dx, dy)` per batch slot, cycled for arrival streams.
    Fixed(Vec<(T, T)>),
    /// Independent uniform draws, `dx in [lo, hi]` and likewise for dy.
    IidUniform { dx: (T, T), dy: (T, T) },
}

impl<T: Scalar> ToleranceModel<T> {
    /// Uniform fixed tolerance for all queries.
    pub fn square(side: T, n: usize) -> Self {
        ToleranceModel::Fixed(vec![(side, side); n])
    }

    fn validate(&self, k: usize) -> Result<(), GeometryError> {
        match self {
            ToleranceModel::Fixed(list) => {
                if list.len() != k {
                    return Err(GeometryError::LengthMismatch {
                        expected: k,
                        got: list.len(),
                    });
                }
                if list
                    .iter()
                    .any(|&(dx, dy)| dx < T::zero() || dy < T::zero())
                {
                    return Err(GeometryError::BadToleranceRange);
                }
                Ok(())
            }
            ToleranceModel::IidUniform { dx, dy } => {
                for &(lo, hi) in [dx, dy] {
                    if !(lo >= T::zero() && hi >= lo) {
                        return Err(GeometryError::BadToleranceRange);
                    }
                }
                Ok(())
            }
        }
    }

    /// Tolerance for the `i`-th query of a sample or arrival stream.
    pub fn draw(&self, i: usize, stream: &mut RandomStream) -> (T, T) {
        match self {
            ToleranceModel::Fixed(list) => list[i % list.len()],
            ToleranceModel::IidUniform { dx, dy } => (
                stream.uniform_in(dx.0, dx.1),
                stream.uniform_in(dy.0, dy.1),
            ),
        }
    }
}

/// Full geometric configuration for clique-probability estimation and the
/// geometric simulation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GeometryConfig<T> {
    pub region: Region<T>,
    pub k: usize,
    pub tolerances: ToleranceModel<T>,
    pub edge_rule: EdgeRuleKind,
    /// Per-slot MMB areas, required only by the MMB rule.
    pub mmb_areas: Option<Vec<T>>,
}

impl<T: Scalar> GeometryConfig<T> {
    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.k < 1 {
            return Err(GeometryError::KTooSmall(self.k));
        }
        self.tolerances.validate(self.k)?;
        if self.edge_rule == EdgeRuleKind::Mmb {
            let areas = self.mmb_areas.as_ref().ok_or(GeometryError::LengthMismatch {
                expected: self.k,
                got: 0,
            })?;
            if areas.len() != self.k {
                return Err(GeometryError::LengthMismatch {
                    expected: self.k,
                    got: areas.len(),
                });
            }
        }
        Ok(())
    }

    /// Draws one synthetic query (position plus tolerance).
    pub fn draw_query(&self, id: u64, slot: usize, stream: &mut RandomStream) -> LbsQuery<T> {
        let x = stream.uniform_in(T::zero(), self.region.x());
        let y = stream.uniform_in(T::zero(), self.region.y());
        let (dx, dy) = self.tolerances.draw(slot, stream);
        LbsQuery::at(id, x, y, dx, dy)
    }

    /// MMB areas for a window of `n` queries starting at slot offset
    /// `first`, cycling the configured list.
    pub fn mmb_window(&self, first: usize, n: usize) -> Option<Vec<T>> {
        self.mmb_areas
            .as_ref()
            .map(|areas| (0..n).map(|i| areas[(first + i) % areas.len()]).collect())
    }
}

/// Monte Carlo estimate of the clique probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate<T> {
    pub estimate: T,
    pub std_error: T,
    pub samples: u64,
    pub successes: u64,
}

/// Estimates the probability that `k` freshly drawn queries are mutually
/// compatible (form a complete graph) under the configured edge rule.
/// Deterministic given the stream state.
pub fn mc_clique_prob<T: Scalar>(
    cfg: &GeometryConfig<T>,
    samples: u64,
    stream: &mut RandomStream,
) -> Result<McEstimate<T>, GeometryError> {
    cfg.validate()?;
    if samples == 0 {
        return Err(GeometryError::NoSamples);
    }
    let mut successes = 0u64;
    let mut nodes = Vec::with_capacity(cfg.k);
    for _ in 0..samples {
        nodes.clear();
        for slot in 0..cfg.k {
            nodes.push(cfg.draw_query(slot as u64, slot, stream));
        }
        let g = ConstraintGraph::build(
            &nodes,
            cfg.edge_rule,
            cfg.mmb_window(0, cfg.k).as_deref(),
            &cfg.region,
        )?;
        if clique_exists(&g, cfg.k).is_some() {
            successes += 1;
        }
    }
    let n = T::from_u64(samples).expect("sample count representable");
    let p = T::from_u64(successes).expect("success count representable") / n;
    let std_error = (p * (T::one() - p) / n).sqrt();
    Ok(McEstimate {
        estimate: p,
        std_error,
        samples,
        successes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::streams;

    fn unit() -> Region<f64> {
        Region::unit()
    }

    fn q(x: f64, y: f64, tol: f64) -> LbsQuery<f64> {
        LbsQuery::at(0, x, y, tol, tol)
    }

    #[test]
    fn containment_edge_examples() {
        // Offsets (0.02, 0.05) fit inside half-tolerances of 0.1 each way.
        assert!(edge(
            &q(0.3, 0.3, 0.2),
            &q(0.32, 0.35, 0.2),
            &EdgeRule::MutualContainment,
            &unit()
        ));
        // Nodes ~0.58 apart cannot see each other with dx = 0.2.
        assert!(!edge(
            &q(0.1, 0.1, 0.2),
            &q(0.51, 0.51, 0.2),
            &EdgeRule::MutualContainment,
            &unit()
        ));
    }

    #[test]
    fn containment_requires_both_directions() {
        // p has a huge tolerance, q a tiny one: the offset fits in p's
        // rectangle but not q's, so there is no edge.
        let p = LbsQuery::at(0, 0.5, 0.5, 1.0, 1.0);
        let mut qq = LbsQuery::at(1, 0.6, 0.5, 0.05, 0.05);
        assert!(!edge(&p, &qq, &EdgeRule::MutualContainment, &unit()));
        qq.dx = 0.5;
        qq.dy = 0.5;
        assert!(edge(&p, &qq, &EdgeRule::MutualContainment, &unit()));
    }

    #[test]
    fn edge_rules_are_symmetric() {
        let mut stream = RandomStream::new(7, streams::GEOMETRY_MC);
        let rules = [
            EdgeRule::MutualContainment,
            EdgeRule::AverageDistance { d_avg: Some(0.3) },
            EdgeRule::Mmb {
                side_p: 0.4,
                side_q: 0.25,
            },
        ];
        for _ in 0..200 {
            let a = q(
                stream.uniform_in(0.0, 1.0),
                stream.uniform_in(0.0, 1.0),
                stream.uniform_in(0.0, 0.5),
            );
            let b = q(
                stream.uniform_in(0.0, 1.0),
                stream.uniform_in(0.0, 1.0),
                stream.uniform_in(0.0, 0.5),
            );
            for rule in &rules {
                // MMB sides swap with the arguments.
                let flipped = match rule {
                    EdgeRule::Mmb { side_p, side_q } => EdgeRule::Mmb {
                        side_p: *side_q,
                        side_q: *side_p,
                    },
                    other => other.clone(),
                };
                assert_eq!(
                    edge(&a, &b, rule, &unit()),
                    edge(&b, &a, &flipped, &unit())
                );
            }
        }
    }

    #[test]
    fn average_distance_rule_is_vacuous_without_population() {
        let nodes: Vec<LbsQuery<f64>> = vec![q(0.5, 0.5, 0.2)];
        assert_eq!(average_pairwise_distance(&nodes), None);
        assert!(!edge(
            &q(0.5, 0.5, 0.2),
            &q(0.5, 0.5, 0.2),
            &EdgeRule::AverageDistance { d_avg: None },
            &unit()
        ));
    }

    #[test]
    fn clique_search_finds_an_anchored_clique() {
        // Five nodes; nodes 1, 3, 4 mutually adjacent, the rest sparse.
        // Node 4 is the most recent arrival, so the clique must contain it.
        let g = ConstraintGraph::from_edges(5, |i, j| {
            matches!(
                (i, j),
                (1, 3) | (1, 4) | (3, 4) | (0, 2)
            )
        });
        let clique = clique_exists(&g, 3).unwrap();
        assert_eq!(clique, vec![1, 3, 4]);
        assert!(clique_exists(&g, 4).is_none());
    }

    #[test]
    fn anchored_search_misses_cliques_without_the_newest_node() {
        // A triangle among older nodes does not count for the newest.
        let g = ConstraintGraph::from_edges(4, |i, j| {
            matches!((i, j), (0, 1) | (0, 2) | (1, 2))
        });
        assert!(clique_exists(&g, 3).is_none());
        assert_eq!(any_clique(&g, 3).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn singleton_clique_is_the_newest_node() {
        let g = ConstraintGraph::from_edges(3, |_, _| false);
        assert_eq!(clique_exists(&g, 1).unwrap(), vec![2]);
    }

    #[test]
    fn clique_search_agrees_with_brute_force() {
        // Random graphs up to 12 nodes: the anchored search must agree
        // with explicit enumeration of all k-subsets containing the anchor.
        let mut stream = RandomStream::new(20260823, streams::GEOMETRY_MC);
        for trial in 0..1000 {
            let n = 2 + (stream.next_u64() % 11) as usize;
            let k = 1 + (stream.next_u64() % 6) as usize;
            let p = stream.unit::<f64>() * 0.9 + 0.05;
            let mut flips = Vec::new();
            let g = ConstraintGraph::from_edges(n, |_, _| {
                let b = stream.bernoulli(p);
                flips.push(b);
                b
            });
            let found = clique_exists(&g, k);
            let expected = brute_force_anchored(&g, k);
            assert_eq!(
                found.is_some(),
                expected,
                "trial {trial}: n={n} k={k} disagreement"
            );
            if let Some(members) = found {
                assert_eq!(members.len(), k);
                assert!(members.contains(&(n - 1)));
                for i in 0..k {
                    for j in i + 1..k {
                        assert!(g.adjacent(members[i], members[j]));
                    }
                }
            }
        }
    }

    /// Plain k-subset enumeration oracle (anchor required).
    fn brute_force_anchored(g: &ConstraintGraph, k: usize) -> bool {
        let n = g.len();
        if k == 0 || k > n {
            return false;
        }
        let anchor = n - 1;
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            let subset: Vec<usize> = idx.clone();
            if subset.contains(&anchor) {
                let complete = (0..k).all(|i| {
                    (i + 1..k).all(|j| g.adjacent(subset[i], subset[j]))
                });
                if complete {
                    return true;
                }
            }
            // next combination
            let mut i = k;
            loop {
                if i == 0 {
                    return false;
                }
                i -= 1;
                if idx[i] != i + n - k {
                    break;
                }
            }
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }

    #[test]
    fn adding_edges_preserves_cliques() {
        let mut stream = RandomStream::new(5, streams::GEOMETRY_MC);
        for _ in 0..200 {
            let n = 3 + (stream.next_u64() % 8) as usize;
            let k = 2 + (stream.next_u64() % 3) as usize;
            let mut edges = vec![false; n * n];
            for i in 0..n {
                for j in i + 1..n {
                    if stream.bernoulli(0.4) {
                        edges[i * n + j] = true;
                    }
                }
            }
            let g = ConstraintGraph::from_edges(n, |i, j| edges[i * n + j]);
            if clique_exists(&g, k).is_none() {
                continue;
            }
            // Add one random missing edge; the clique must survive.
            let mut added = edges.clone();
            'outer: for i in 0..n {
                for j in i + 1..n {
                    if !added[i * n + j] {
                        added[i * n + j] = true;
                        break 'outer;
                    }
                }
            }
            let g2 = ConstraintGraph::from_edges(n, |i, j| added[i * n + j]);
            assert!(clique_exists(&g2, k).is_some());
        }
    }

    #[test]
    fn printed_formula_examples() {
        // k = 3, equal tolerances 0.2 x 0.2 in the unit square:
        // (a^2)^3 / 1 = a^6 with a = 0.04.
        let tol = [(0.2, 0.2); 3];
        let p = r_cliquecloak(&tol, &unit(), 3).unwrap();
        let a: f64 = 0.04;
        assert!((p.printed - a.powi(6)).abs() < 1e-18);
        // 2k = k(k-1) at k = 3, so the two variants coincide.
        assert!((p.printed - p.independence).abs() < 1e-18);
    }

    #[test]
    fn variant_exponents_differ_at_k_two() {
        // In a half-area region the denominators differ: (XY)^4 vs (XY)^2.
        let region = Region::new(1.0, 0.5).unwrap();
        let tol = [(0.2, 0.2); 2];
        let p = r_cliquecloak(&tol, &region, 2).unwrap();
        let a: f64 = 0.04;
        assert!((p.printed - a * a / 0.5f64.powi(4)).abs() < 1e-15);
        assert!((p.independence - a * a / 0.5f64.powi(2)).abs() < 1e-15);
        assert!(p.printed != p.independence);
    }

    #[test]
    fn formulas_are_monotone_in_tolerance() {
        let mut prev = 0.0;
        for side in [0.05, 0.1, 0.2, 0.4] {
            let p = r_cliquecloak(&[(side, side); 3], &unit(), 3).unwrap();
            assert!(p.printed > prev);
            prev = p.printed;
        }
    }

    #[test]
    fn degenerate_tolerances_yield_zero_not_an_error() {
        let p = r_cliquecloak(&[(0.0, 0.2), (0.2, 0.2), (0.2, 0.2)], &unit(), 3).unwrap();
        assert_eq!(p.printed, 0.0);
    }

    #[test]
    fn preconditions_are_enforced() {
        assert!(matches!(
            r_cliquecloak(&[(0.2, 0.2)], &unit(), 1),
            Err(GeometryError::KTooSmall(1))
        ));
        assert!(matches!(
            r_cliquecloak(&[(0.2, 0.2); 2], &unit(), 3),
            Err(GeometryError::LengthMismatch { expected: 3, got: 2 })
        ));
        assert!(matches!(
            r_iclique(&[0.1, 0.1], &unit(), 3),
            Err(GeometryError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn iclique_uses_mmb_areas_directly() {
        let p = r_iclique(&[0.04, 0.04, 0.04], &unit(), 3).unwrap();
        let q = r_cliquecloak(&[(0.2, 0.2); 3], &unit(), 3).unwrap();
        assert!((p.printed - q.printed).abs() < 1e-18);
    }

    fn mc_config(side: f64, k: usize) -> GeometryConfig<f64> {
        GeometryConfig {
            region: unit(),
            k,
            tolerances: ToleranceModel::square(side, k),
            edge_rule: EdgeRuleKind::MutualContainment,
            mmb_areas: None,
        }
    }

    #[test]
    fn mc_matches_the_exact_pair_probability() {
        // For k = 2 with 0.2-square tolerances in the unit square the
        // containment probability is (0.1 * (2 - 0.1))^2 = 0.0361 exactly.
        let mut stream = RandomStream::new(31, streams::GEOMETRY_MC);
        let est = mc_clique_prob(&mc_config(0.2, 2), 200_000, &mut stream).unwrap();
        let exact = 0.0361;
        assert!(
            (est.estimate - exact).abs() < 3.0 * est.std_error.max(1e-6),
            "estimate {} vs {exact} (se {})",
            est.estimate,
            est.std_error
        );
    }

    #[test]
    fn mc_full_region_tolerances_always_succeed() {
        // Tolerance rectangles covering the whole region make every pair
        // compatible.
        let mut stream = RandomStream::new(32, streams::GEOMETRY_MC);
        let est = mc_clique_prob(&mc_config(2.0, 3), 20_000, &mut stream).unwrap();
        assert_eq!(est.estimate, 1.0);
        assert_eq!(est.std_error, 0.0);
    }

    #[test]
    fn mc_zero_tolerances_never_succeed() {
        let mut stream = RandomStream::new(33, streams::GEOMETRY_MC);
        let est = mc_clique_prob(&mc_config(0.0, 2), 20_000, &mut stream).unwrap();
        assert_eq!(est.estimate, 0.0);
    }

    #[test]
    fn mc_is_deterministic_per_stream() {
        let mut a = RandomStream::new(11, streams::GEOMETRY_MC);
        let mut b = RandomStream::new(11, streams::GEOMETRY_MC);
        let ea = mc_clique_prob(&mc_config(0.3, 3), 50_000, &mut a).unwrap();
        let eb = mc_clique_prob(&mc_config(0.3, 3), 50_000, &mut b).unwrap();
        assert_eq!(ea.estimate, eb.estimate);
    }

    #[test]
    fn mc_respects_the_mmb_rule() {
        let cfg = GeometryConfig {
            region: unit(),
            k: 2,
            tolerances: ToleranceModel::square(0.0, 2),
            edge_rule: EdgeRuleKind::Mmb,
            mmb_areas: Some(vec![4.0, 4.0]),
        };
        // MMB squares of area 4 cover the unit region entirely, so the
        // zero spatial tolerances are irrelevant under this rule.
        let mut stream = RandomStream::new(17, streams::GEOMETRY_MC);
        let est = mc_clique_prob(&cfg, 10_000, &mut stream).unwrap();
        assert_eq!(est.estimate, 1.0);
    }

    #[test]
    fn mc_validates_its_configuration() {
        let mut stream = RandomStream::new(1, streams::GEOMETRY_MC);
        assert!(matches!(
            mc_clique_prob(&mc_config(0.2, 2), 0, &mut stream),
            Err(GeometryError::NoSamples)
        ));
        let mut bad = mc_config(0.2, 2);
        bad.tolerances = ToleranceModel::Fixed(vec![(0.2, 0.2)]);
        assert!(matches!(
            mc_clique_prob(&bad, 10, &mut stream),
            Err(GeometryError::LengthMismatch { .. })
        ));
        let mut neg = mc_config(0.2, 2);
        neg.tolerances = ToleranceModel::IidUniform {
            dx: (0.3, 0.1),
            dy: (0.0, 0.1),
        };
        assert!(matches!(
            mc_clique_prob(&neg, 10, &mut stream),
            Err(GeometryError::BadToleranceRange)
        ));
    }
}
