//! Empirical measures on path space and the operations the comparison
//! machinery needs: exact Wasserstein-2 transport, stochastic dominance
//! with coupling witnesses, monotone and mixture couplings, marginals and
//! the meet pushforward.
//!
//! Uniform-weight clouds with equal atom counts keep transport and
//! dominance exactly solvable (assignment / perfect matching). Weighted
//! measures appear only as outputs and support sampling; their dominance
//! check generalises the matching criterion through a max-flow
//! feasibility problem.

mod assignment;
mod flow;
mod matching;

use crate::rng::CounterRng;
use crate::segments::{PathSegment, SegmentError, SegmentJson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest atom count accepted by the exact assignment solver.
pub const DEFAULT_ASSIGNMENT_CAP: usize = 512;
/// Largest product size `meet_pushforward` keeps before subsampling.
pub const DEFAULT_MEET_CAP: usize = 65_536;

const WEIGHT_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeasureError {
    #[error("atom counts differ: {left} vs {right}")]
    AtomCountMismatch { left: usize, right: usize },
    #[error("measure must contain at least one atom")]
    Empty,
    #[error("atom count {n} exceeds the exact-solver cap {cap}")]
    CapExceeded { n: usize, cap: usize },
    #[error("stochastic dominance does not hold; no monotone coupling exists")]
    DominanceFails,
    #[error("mixture weight eps = {0} is outside [0, 1)")]
    EpsOutOfRange(f64),
    #[error("invalid weights: {0}")]
    BadWeights(String),
    #[error(transparent)]
    Segment(#[from] SegmentError),
}

/// A uniform-weight cloud of path segments approximating a law with
/// finite second moment.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    atoms: Vec<PathSegment>,
}

impl EmpiricalMeasure {
    pub fn new(atoms: Vec<PathSegment>) -> Result<EmpiricalMeasure, MeasureError> {
        if atoms.is_empty() {
            return Err(MeasureError::Empty);
        }
        let (dim, cols) = (atoms[0].dim(), atoms[0].cols());
        for a in &atoms[1..] {
            if a.dim() != dim || a.cols() != cols {
                return Err(SegmentError::ShapeMismatch {
                    expected_dim: dim,
                    expected_cols: cols,
                    dim: a.dim(),
                    cols: a.cols(),
                }
                .into());
            }
        }
        Ok(EmpiricalMeasure { atoms })
    }

    /// The Dirac measure at a single segment.
    pub fn dirac(atom: PathSegment) -> EmpiricalMeasure {
        EmpiricalMeasure { atoms: vec![atom] }
    }

    pub fn atoms(&self) -> &[PathSegment] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.atoms[0].dim(), self.atoms[0].cols())
    }

    /// Mean of `sup_norm^2` over atoms — the second moment that membership
    /// in the finite-second-moment class asks for.
    pub fn second_moment(&self) -> f64 {
        let s: f64 = self.atoms.iter().map(|a| a.sup_norm().powi(2)).sum();
        s / self.atoms.len() as f64
    }

    fn check_compatible(&self, other: &EmpiricalMeasure) -> Result<(), MeasureError> {
        if self.len() != other.len() {
            return Err(MeasureError::AtomCountMismatch { left: self.len(), right: other.len() });
        }
        let (d, c) = self.shape();
        let (d2, c2) = other.shape();
        if (d, c) != (d2, c2) {
            return Err(SegmentError::ShapeMismatch {
                expected_dim: d,
                expected_cols: c,
                dim: d2,
                cols: c2,
            }
            .into());
        }
        Ok(())
    }
}

/// Weighted atoms; produced by marginals, mixtures and the meet
/// pushforward, and sampled from at simulation start.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMeasure {
    atoms: Vec<PathSegment>,
    weights: Vec<f64>,
}

impl WeightedMeasure {
    pub fn new(atoms: Vec<PathSegment>, weights: Vec<f64>) -> Result<WeightedMeasure, MeasureError> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(MeasureError::BadWeights(format!(
                "{} atoms vs {} weights",
                atoms.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(MeasureError::BadWeights("weights must be positive and finite".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(MeasureError::BadWeights(format!("weights sum to {total}, expected 1")));
        }
        Ok(WeightedMeasure { atoms, weights })
    }

    pub fn atoms(&self) -> &[PathSegment] {
        &self.atoms
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the atom selected by a uniform draw `u` in [0, 1).
    pub fn sample_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.weights.len() - 1
    }
}

/// A joint distribution on pairs of segments, stored as weighted atom
/// pairs. Houses the monotone coupling and its Dirac mixtures.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pairs: Vec<(PathSegment, PathSegment)>,
    weights: Vec<f64>,
}

impl Coupling {
    pub fn new(
        pairs: Vec<(PathSegment, PathSegment)>,
        weights: Vec<f64>,
    ) -> Result<Coupling, MeasureError> {
        if pairs.is_empty() || pairs.len() != weights.len() {
            return Err(MeasureError::BadWeights(format!(
                "{} pairs vs {} weights",
                pairs.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(MeasureError::BadWeights("weights must be positive and finite".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOL {
            return Err(MeasureError::BadWeights(format!("weights sum to {total}, expected 1")));
        }
        let (d, c) = (pairs[0].0.dim(), pairs[0].0.cols());
        for (l, r) in &pairs {
            for s in [l, r] {
                if s.dim() != d || s.cols() != c {
                    return Err(SegmentError::ShapeMismatch {
                        expected_dim: d,
                        expected_cols: c,
                        dim: s.dim(),
                        cols: s.cols(),
                    }
                    .into());
                }
            }
        }
        Ok(Coupling { pairs, weights })
    }

    /// The Dirac coupling at one pair.
    pub fn dirac(left: PathSegment, right: PathSegment) -> Result<Coupling, MeasureError> {
        Coupling::new(vec![(left, right)], vec![1.0])
    }

    /// The diagonal coupling of a uniform cloud with itself.
    pub fn diagonal(mu: &EmpiricalMeasure) -> Coupling {
        let w = 1.0 / mu.len() as f64;
        Coupling {
            pairs: mu.atoms().iter().map(|a| (a.clone(), a.clone())).collect(),
            weights: vec![w; mu.len()],
        }
    }

    pub fn pairs(&self) -> &[(PathSegment, PathSegment)] {
        &self.pairs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.pairs[0].0.dim(), self.pairs[0].0.cols())
    }

    /// Whether every pair satisfies `left <= right` (full mass on the
    /// ordered set).
    pub fn is_ordered(&self) -> bool {
        self.pairs.iter().all(|(l, r)| l.leq(r).unwrap_or(false))
    }

    /// Index of the pair selected by a uniform draw `u` in [0, 1).
    pub fn sample_index(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.weights.len() - 1
    }
}

/// Outcome of a stochastic-dominance query, with the perfect matching as
/// the coupling witness when dominance holds.
#[derive(Debug, Clone, PartialEq)]
pub struct DominanceWitness {
    pub holds: bool,
    /// Atom-index pairs `(i, j)` with `mu.atom[i] <= nu.atom[j]`.
    pub matching: Option<Vec<(usize, usize)>>,
}

/// Exact Wasserstein-2 distance between equal-size uniform clouds, with
/// sup-norm ground cost, at the default solver cap.
pub fn w2(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64, MeasureError> {
    w2_with_cap(mu, nu, DEFAULT_ASSIGNMENT_CAP)
}

/// Exact Wasserstein-2 with an explicit atom-count cap; refuses rather
/// than approximating beyond it.
pub fn w2_with_cap(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    cap: usize,
) -> Result<f64, MeasureError> {
    mu.check_compatible(nu)?;
    let n = mu.len();
    if n > cap {
        return Err(MeasureError::CapExceeded { n, cap });
    }
    let cost: Vec<Vec<f64>> = mu
        .atoms()
        .iter()
        .map(|a| {
            nu.atoms()
                .iter()
                .map(|b| {
                    let d = a.sup_dist(b).expect("shapes checked");
                    d * d
                })
                .collect()
        })
        .collect();
    let (_, total) = assignment::solve(&cost);
    // Tiny negative totals can appear from dual round-off on identical clouds.
    Ok((total.max(0.0) / n as f64).sqrt())
}

/// Stochastic order between equal-size uniform clouds via the coupling
/// characterisation: dominance holds iff the bipartite graph of ordered
/// atom pairs has a perfect matching.
pub fn stochastic_leq(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
) -> Result<DominanceWitness, MeasureError> {
    mu.check_compatible(nu)?;
    let n = mu.len();
    let adj: Vec<Vec<usize>> = mu
        .atoms()
        .iter()
        .map(|a| {
            nu.atoms()
                .iter()
                .enumerate()
                .filter_map(|(j, b)| a.leq(b).expect("shapes checked").then_some(j))
                .collect()
        })
        .collect();
    let pairs = matching::hopcroft_karp(n, n, &adj);
    if pairs.iter().all(|&j| j != usize::MAX) {
        Ok(DominanceWitness {
            holds: true,
            matching: Some(pairs.iter().enumerate().map(|(i, &j)| (i, j)).collect()),
        })
    } else {
        Ok(DominanceWitness { holds: false, matching: None })
    }
}

/// A coupling of `mu <= nu` giving full mass to the ordered set, built
/// from the dominance matching with uniform weights.
pub fn monotone_coupling(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
) -> Result<Coupling, MeasureError> {
    let witness = stochastic_leq(mu, nu)?;
    let matching = witness.matching.ok_or(MeasureError::DominanceFails)?;
    let n = mu.len();
    let pairs = matching
        .iter()
        .map(|&(i, j)| (mu.atoms()[i].clone(), nu.atoms()[j].clone()))
        .collect();
    Coupling::new(pairs, vec![1.0 / n as f64; n])
}

/// The mixture `(1 - eps) * pi0 + eps * delta_{(xi, eta)}`.
pub fn mixture_coupling(
    pi0: &Coupling,
    xi: &PathSegment,
    eta: &PathSegment,
    eps: f64,
) -> Result<Coupling, MeasureError> {
    if !(0.0..1.0).contains(&eps) {
        return Err(MeasureError::EpsOutOfRange(eps));
    }
    if eps == 0.0 {
        return Ok(pi0.clone());
    }
    let mut pairs = pi0.pairs().to_vec();
    let mut weights: Vec<f64> = pi0.weights().iter().map(|w| w * (1.0 - eps)).collect();
    pairs.push((xi.clone(), eta.clone()));
    weights.push(eps);
    Coupling::new(pairs, weights)
}

/// Left and right marginals of a coupling, as weighted measures.
pub fn marginals(pi: &Coupling) -> (WeightedMeasure, WeightedMeasure) {
    let left = pi.pairs().iter().map(|(l, _)| l.clone()).collect();
    let right = pi.pairs().iter().map(|(_, r)| r.clone()).collect();
    let w = pi.weights().to_vec();
    (
        WeightedMeasure { atoms: left, weights: w.clone() },
        WeightedMeasure { atoms: right, weights: w },
    )
}

/// Result of the meet pushforward, recording whether (and with which
/// seed) the product was subsampled.
#[derive(Debug, Clone)]
pub struct MeetPushforward {
    pub measure: WeightedMeasure,
    pub subsampled: bool,
    pub seed: u64,
}

/// Pushforward of `mu x nu` under the pointwise meet, at the default
/// product cap.
pub fn meet_pushforward(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    seed: u64,
) -> Result<MeetPushforward, MeasureError> {
    meet_pushforward_with_cap(mu, nu, DEFAULT_MEET_CAP, seed)
}

/// Meet pushforward with an explicit cap; products larger than the cap
/// are subsampled with the seeded generator.
pub fn meet_pushforward_with_cap(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    cap: usize,
    seed: u64,
) -> Result<MeetPushforward, MeasureError> {
    let (d, c) = mu.shape();
    let (d2, c2) = nu.shape();
    if (d, c) != (d2, c2) {
        return Err(SegmentError::ShapeMismatch {
            expected_dim: d,
            expected_cols: c,
            dim: d2,
            cols: c2,
        }
        .into());
    }
    let n = mu.len();
    let m = nu.len();
    if n * m <= cap {
        let mut atoms = Vec::with_capacity(n * m);
        for a in mu.atoms() {
            for b in nu.atoms() {
                atoms.push(a.meet(b)?);
            }
        }
        let w = 1.0 / (n * m) as f64;
        let measure = WeightedMeasure::new(atoms, vec![w; n * m])?;
        Ok(MeetPushforward { measure, subsampled: false, seed })
    } else {
        let rng = CounterRng::new(seed);
        let mut atoms = Vec::with_capacity(cap);
        for k in 0..cap {
            let i = rng.index(2 * k as u64, n);
            let j = rng.index(2 * k as u64 + 1, m);
            atoms.push(mu.atoms()[i].meet(&nu.atoms()[j])?);
        }
        let w = 1.0 / cap as f64;
        let measure = WeightedMeasure::new(atoms, vec![w; cap])?;
        Ok(MeetPushforward { measure, subsampled: true, seed })
    }
}

/// Strassen-type dominance for weighted measures: a feasibility max-flow
/// on the domination graph. Returns true iff a coupling supported on the
/// ordered set exists.
pub fn weighted_stochastic_leq(
    a: &WeightedMeasure,
    b: &WeightedMeasure,
) -> Result<bool, MeasureError> {
    let n = a.len();
    let m = b.len();
    let source = 0;
    let sink = n + m + 1;
    let mut net = flow::FlowNetwork::new(n + m + 2);
    for (i, w) in a.weights().iter().enumerate() {
        net.add_edge(source, 1 + i, *w);
    }
    for (j, w) in b.weights().iter().enumerate() {
        net.add_edge(1 + n + j, sink, *w);
    }
    for (i, x) in a.atoms().iter().enumerate() {
        for (j, y) in b.atoms().iter().enumerate() {
            if x.leq(y)? {
                net.add_edge(1 + i, 1 + n + j, f64::INFINITY);
            }
        }
    }
    let flow = net.max_flow(source, sink);
    Ok(flow >= 1.0 - 1e-9)
}

/// JSON form of a measure: `{shape, atoms}` with each atom a segment
/// object.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureJson {
    pub shape: (usize, usize),
    pub atoms: Vec<SegmentJson>,
}

impl MeasureJson {
    pub fn from_measure(mu: &EmpiricalMeasure, dt: f64) -> MeasureJson {
        MeasureJson {
            shape: mu.shape(),
            atoms: mu.atoms().iter().map(|a| SegmentJson::from_segment(a, dt)).collect(),
        }
    }

    pub fn to_measure(&self) -> Result<EmpiricalMeasure, MeasureError> {
        let atoms: Result<Vec<_>, _> = self.atoms.iter().map(|a| a.to_segment()).collect();
        let mu = EmpiricalMeasure::new(atoms?)?;
        if mu.shape() != self.shape {
            return Err(MeasureError::BadWeights(format!(
                "declared shape {:?} does not match atoms {:?}",
                self.shape,
                mu.shape()
            )));
        }
        Ok(mu)
    }
}

/// JSON form of a coupling: `{pairs: [{left, right, weight}]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingJson {
    pub pairs: Vec<CouplingPairJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingPairJson {
    pub left: SegmentJson,
    pub right: SegmentJson,
    pub weight: f64,
}

impl CouplingJson {
    pub fn from_coupling(pi: &Coupling, dt: f64) -> CouplingJson {
        CouplingJson {
            pairs: pi
                .pairs()
                .iter()
                .zip(pi.weights())
                .map(|((l, r), w)| CouplingPairJson {
                    left: SegmentJson::from_segment(l, dt),
                    right: SegmentJson::from_segment(r, dt),
                    weight: *w,
                })
                .collect(),
        }
    }

    pub fn to_coupling(&self) -> Result<Coupling, MeasureError> {
        let mut pairs = Vec::with_capacity(self.pairs.len());
        let mut weights = Vec::with_capacity(self.pairs.len());
        for p in &self.pairs {
            pairs.push((p.left.to_segment()?, p.right.to_segment()?));
            weights.push(p.weight);
        }
        Coupling::new(pairs, weights)
    }
}
