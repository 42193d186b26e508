//! Path-coupling check for the uniform-arrival chain: two copies one driver
//! move apart see the same request each round.

use std::collections::BTreeMap;

use num_rational::Ratio;
use num_traits::{One, Zero};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::{nadap_matrix, Scalar, TransitionMatrix};
use crate::grid::{Grid, Location, RequestModel, Weights};
use crate::policies::Boundary;
use crate::state_space::{DriverState, StateSpace};

pub type Q = Ratio<i64>;

/// The move rule of the coupled copies: move iff the origin has a driver
/// and the destination has room.
fn step(state: &DriverState, from: Location, to: Location) -> DriverState {
    if from != to && state.get(from) >= 1 && !state.is_full(to) {
        state.apply_move(from, to).expect("checked feasible")
    } else {
        state.clone()
    }
}

/// Joint one-step law of `(X', Y')` when both copies process the same
/// request, with probabilities taken from `model`.
pub fn coupled_step_distribution(
    x: &DriverState,
    y: &DriverState,
    model: &RequestModel,
) -> Result<Vec<(DriverState, DriverState, Q)>> {
    if x.capacity() != y.capacity() || x.total() != y.total() || x.n() != y.n() || x.l1_distance(y) != 2 {
        return Err(Error::InvalidArgument(format!(
            "({x}) and ({y}) are not a neighbor pair"
        )));
    }
    if x.n() != model.grid().n() {
        return Err(Error::InvalidArgument("states do not match the model's grid".into()));
    }
    let mut joint: BTreeMap<(DriverState, DriverState), Q> = BTreeMap::new();
    let mut idle = Q::one();
    for (u, v, p, _) in model.requests() {
        let p = Q::from_f64(p)?;
        idle -= p;
        *joint.entry((step(x, u, v), step(y, u, v))).or_insert_with(Q::zero) += p;
    }
    if !idle.is_zero() {
        *joint.entry((x.clone(), y.clone())).or_insert_with(Q::zero) += idle;
    }
    Ok(joint.into_iter().map(|((a, b), p)| (a, b, p)).collect())
}

/// Marginals of a joint law, as sparse maps over state ranks.
fn marginals(space: &StateSpace, joint: &[(DriverState, DriverState, Q)]) -> Result<(BTreeMap<usize, Q>, BTreeMap<usize, Q>)> {
    let mut first = BTreeMap::new();
    let mut second = BTreeMap::new();
    for (a, b, p) in joint {
        *first.entry(space.rank(a)?).or_insert_with(Q::zero) += *p;
        *second.entry(space.rank(b)?).or_insert_with(Q::zero) += *p;
    }
    Ok((first, second))
}

fn row_map(p: &TransitionMatrix<Q>, i: usize) -> BTreeMap<usize, Q> {
    p.row(i).map(|(j, v)| (j, *v)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairContraction {
    pub x: usize,
    pub y: usize,
    /// `E[d(X', Y')]`.
    #[serde(serialize_with = "ratio_as_f64")]
    pub expected: Q,
    /// `E[d(X', Y')] / d(x, y)`.
    #[serde(serialize_with = "ratio_as_f64")]
    pub ratio: Q,
}

fn ratio_as_f64<S: serde::Serializer>(q: &Q, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(q.to_f64())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingReport {
    pub rows: usize,
    pub cols: usize,
    pub m: u32,
    pub c: u32,
    /// Arrival probability per pair, `1/n²`.
    #[serde(serialize_with = "ratio_as_f64")]
    pub p: Q,
    pub pairs: Vec<PairContraction>,
    #[serde(serialize_with = "ratio_as_f64")]
    pub worst_beta: Q,
    /// Allowed contraction `1 − 1/n²`.
    #[serde(serialize_with = "ratio_as_f64")]
    pub bound: Q,
    /// Metric diameter `2m`.
    pub diameter: u32,
    pub eps: f64,
    /// `ln(D/ε) / (1 − worst_beta)`.
    pub tau_bound: f64,
}

/// Checks `E[d(X',Y')] ≤ (1 − 1/n²)·d(x,y)` on every neighbor pair of the
/// uniform instance, along with faithfulness of both marginals.
pub fn verify_contraction(grid: Grid, m: u32, c: u32, eps: f64) -> Result<CouplingReport> {
    if c > 2 {
        return Err(Error::OutOfScope(format!(
            "contraction is only established for c <= 2, got c = {c}"
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("ε must lie in (0, 1), got {eps}")));
    }
    let n = grid.n();
    let n2 = (n * n) as i64;
    let model = RequestModel::uniform(grid, 1.0 / n2 as f64, Weights::Constant(1.0))?;
    let space = StateSpace::new(grid, m, c)?;
    let chain = nadap_matrix::<Q>(&space, &model, 1.0, Boundary::Drop)?;
    let bound = Q::one() - Q::new(1, n2);
    let two = Q::from_integer(2);

    let pairs: Vec<PairContraction> = space
        .neighbor_pairs()
        .into_par_iter()
        .map(|pair| -> Result<PairContraction> {
            let joint = coupled_step_distribution(&pair.x, &pair.y, &model)?;
            let (i, j) = (space.rank(&pair.x)?, space.rank(&pair.y)?);
            let (first, second) = marginals(&space, &joint)?;
            if first != row_map(&chain, i) || second != row_map(&chain, j) {
                return Err(Error::InvalidArgument(format!(
                    "coupling of ({}) and ({}) is not faithful to the chain",
                    pair.x, pair.y
                )));
            }
            let expected = joint
                .iter()
                .fold(Q::zero(), |acc, (a, b, p)| acc + *p * Q::from_integer(a.l1_distance(b) as i64));
            Ok(PairContraction {
                x: i,
                y: j,
                expected,
                ratio: expected / two,
            })
        })
        .collect::<Result<_>>()?;

    let worst = pairs.iter().map(|p| p.ratio).max().unwrap_or_else(Q::zero);
    if let Some(bad) = pairs.iter().find(|p| p.ratio > bound) {
        return Err(Error::ContractionViolated {
            x: space.unrank(bad.x)?.to_string(),
            y: space.unrank(bad.y)?.to_string(),
            ratio: bad.ratio.to_f64(),
        });
    }
    let diameter = 2 * m;
    let tau_bound = (diameter as f64 / eps).ln() / (1.0 - worst.to_f64());
    Ok(CouplingReport {
        rows: grid.rows(),
        cols: grid.cols(),
        m,
        c,
        p: Q::new(1, n2),
        pairs,
        worst_beta: worst,
        bound,
        diameter,
        eps,
        tau_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::{build_transition_nadap, mixing_analysis, stationary_distribution};
    use proptest::prelude::*;

    fn st(counts: &[u32], c: u32) -> DriverState {
        DriverState::new(counts.to_vec(), c).unwrap()
    }

    fn model(rows: usize, cols: usize) -> RequestModel {
        let g = Grid::new(rows, cols).unwrap();
        RequestModel::uniform(g, 1.0 / (g.n() * g.n()) as f64, Weights::Constant(1.0)).unwrap()
    }

    fn coalescing_requests(x: &DriverState, y: &DriverState, n: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if step(x, u, v) == step(y, u, v) {
                    out.push((u, v));
                }
            }
        }
        out
    }

    #[test]
    fn single_driver_case_coalesces_on_two_requests() {
        // X_a = 1, X_b = 0 with a = 0, b = 3 on a 3x3 grid
        let x = st(&[1, 0, 0, 0, 0, 0, 0, 1, 0], 2);
        let y = st(&[0, 0, 0, 1, 0, 0, 0, 1, 0], 2);
        assert_eq!(coalescing_requests(&x, &y, 9), vec![(0, 3), (3, 0)]);
        let joint = coupled_step_distribution(&x, &y, &model(3, 3)).unwrap();
        let e: Q = joint.iter().map(|(a, b, p)| *p * Q::from_integer(a.l1_distance(b) as i64)).sum();
        assert_eq!(e, Q::from_integer(2) * (Q::one() - Q::new(2, 81)));
    }

    #[test]
    fn full_origin_case_coalesces_once() {
        // X_a = 2, X_b = 0 against Y_a = 1, Y_b = 1
        let x = st(&[2, 0, 0, 0], 2);
        let y = st(&[1, 1, 0, 0], 2);
        assert_eq!(coalescing_requests(&x, &y, 4), vec![(1, 0)]);
        let joint = coupled_step_distribution(&x, &y, &model(2, 2)).unwrap();
        let e: Q = joint.iter().map(|(a, b, p)| *p * Q::from_integer(a.l1_distance(b) as i64)).sum();
        assert_eq!(e, Q::from_integer(2) * (Q::one() - Q::new(1, 16)));
    }

    #[test]
    fn rejects_non_neighbors() {
        let x = st(&[2, 0, 0, 0], 2);
        let y = st(&[0, 0, 1, 1], 2);
        assert!(coupled_step_distribution(&x, &y, &model(2, 2)).is_err());
    }

    #[test]
    fn two_by_two_instances_contract() {
        for (m, c) in [(2, 2), (1, 1)] {
            let r = verify_contraction(Grid::new(2, 2).unwrap(), m, c, 0.01).unwrap();
            assert!(r.worst_beta <= Q::new(15, 16), "m={m} c={c}");
            assert!(!r.pairs.is_empty());
        }
        assert!(matches!(
            verify_contraction(Grid::new(2, 2).unwrap(), 2, 3, 0.01),
            Err(Error::OutOfScope(_))
        ));
    }

    #[test]
    fn implied_bound_exceeds_exact_mixing_time() {
        let g = Grid::new(2, 2).unwrap();
        let r = verify_contraction(g, 2, 2, 0.01).unwrap();
        assert!(r.tau_bound >= 400f64.ln() * 16.0 - 1e-9);
        let space = StateSpace::new(g, 2, 2).unwrap();
        let p = build_transition_nadap(&space, &model(2, 2), 1.0).unwrap();
        let st = stationary_distribution(&p).unwrap();
        let mix = mixing_analysis(&p, &st.pi, &[0.01], 200).unwrap();
        assert!(r.tau_bound >= mix.tau_for(0.01).unwrap() as f64);
    }

    #[test]
    fn metric_facts_on_pairs() {
        let g = Grid::new(2, 3).unwrap();
        let space = StateSpace::new(g, 3, 2).unwrap();
        for pair in space.neighbor_pairs() {
            assert_eq!(pair.x.l1_distance(&pair.y), 2);
        }
        for x in space.iter() {
            for y in space.iter() {
                assert!(x.l1_distance(&y) <= 6);
            }
        }
    }

    proptest! {
        #[test]
        fn l1_is_a_metric(i in 0usize..156, j in 0usize..156, k in 0usize..156) {
            let space = StateSpace::new(Grid::new(3, 3).unwrap(), 3, 2).unwrap();
            let (x, y, z) = (space.unrank(i).unwrap(), space.unrank(j).unwrap(), space.unrank(k).unwrap());
            prop_assert_eq!(x.l1_distance(&y), y.l1_distance(&x));
            prop_assert_eq!(x.l1_distance(&x), 0);
            prop_assert!(x.l1_distance(&z) <= x.l1_distance(&y) + y.l1_distance(&z));
            prop_assert_eq!(x.l1_distance(&y) == 0, i == j);
        }
    }
}
