//! Randomized checkers for the coefficient assumptions and for the
//! drift-order and diffusion-structure conditions.
//!
//! The checkers probe black-box coefficient models at premise-satisfying
//! inputs built by construction: ordered segment pairs with a forced
//! coordinate equality at the endpoint, and ordered laws obtained by
//! nonnegative shifts of a base cloud. They report witnesses, never
//! certificates; `estimate_h1` in particular returns a lower bound on any
//! valid modulus over the probed range.

use crate::coeffs::{eval_coeff, CoeffExpr, CoeffModel, EvalError, LawMoments};
use crate::measures::{w2, EmpiricalMeasure, MeasureError};
use crate::rng::CounterRng;
use crate::segments::{PathSegment, TimeGrid};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gap tolerance for reporting a violation; well above double-precision
/// evaluation noise for DSL-sized expressions.
pub const VIOLATION_TOL: f64 = 1e-9;

const DEGENERATE_TOL: f64 = 1e-30;

#[derive(Debug, Error)]
pub enum ConditionError {
    #[error("all probes were degenerate (zero denominator); nothing to estimate")]
    AllProbesDegenerate,
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// Probe-generation parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub num_probes: usize,
    /// Explicit time points; random times are drawn from their span.
    pub time_points: Vec<f64>,
    /// Amplitude of random segment entries.
    pub seg_scale: f64,
    /// Atoms per probe law.
    pub law_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            num_probes: 1000,
            time_points: vec![0.0, 0.5, 1.0],
            seg_scale: 1.0,
            law_size: 4,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    fn time_for_probe(&self, rng: &CounterRng, probe: usize) -> f64 {
        // Alternate between the listed points and uniform draws over
        // their span.
        if !self.time_points.is_empty() && probe % 2 == 0 {
            self.time_points[(probe / 2) % self.time_points.len()]
        } else {
            let hi = self
                .time_points
                .iter()
                .cloned()
                .fold(1.0f64, f64::max);
            rng.child(0x70).uniform_in(probe as u64, 0.0, hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    DriftOrder,
    SigmaEquality,
    SigmaStructure,
}

/// One probe that broke a condition, with the evaluated sides as witness.
/// The probe inputs are reproducible from `(seed, probe)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub probe: usize,
    pub t: f64,
    /// 1-based coordinate index.
    pub coord: usize,
    /// 1-based Brownian column for diffusion violations.
    pub noise_col: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
}

/// Full checker output for one scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionReport {
    pub alpha_hat: f64,
    pub k_hat: Vec<GrowthPoint>,
    pub violations: Vec<Violation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthPoint {
    pub t: f64,
    pub value: f64,
}

fn random_segment(rng: &CounterRng, dim: usize, cols: usize, scale: f64) -> PathSegment {
    let data = (0..dim * cols).map(|k| scale * rng.normal(k as u64)).collect();
    PathSegment::new(dim, data).expect("normal draws are finite")
}

/// Adds i.i.d. nonnegative noise to every entry.
fn shift_up(rng: &CounterRng, seg: &PathSegment, scale: f64) -> PathSegment {
    let data = seg
        .data()
        .iter()
        .enumerate()
        .map(|(k, v)| v + scale * rng.normal(k as u64).abs())
        .collect();
    PathSegment::new(seg.dim(), data).expect("finite")
}

fn random_law(rng: &CounterRng, size: usize, dim: usize, cols: usize, scale: f64) -> EmpiricalMeasure {
    let atoms = (0..size)
        .map(|a| random_segment(&rng.child(a as u64), dim, cols, scale))
        .collect();
    EmpiricalMeasure::new(atoms).expect("nonempty")
}

/// Ordered law pair: `nu` is `mu` with nonnegative shifts atom by atom, so
/// the identity coupling witnesses `mu <= nu`.
fn ordered_laws(
    rng: &CounterRng,
    size: usize,
    dim: usize,
    cols: usize,
    scale: f64,
) -> (EmpiricalMeasure, EmpiricalMeasure) {
    let mu = random_law(&rng.child(0), size, dim, cols, scale);
    let nu_atoms = mu
        .atoms()
        .iter()
        .enumerate()
        .map(|(a, s)| shift_up(&rng.child(1).child(a as u64), s, scale))
        .collect();
    (mu.clone(), EmpiricalMeasure::new(nu_atoms).expect("nonempty"))
}

fn eval_vector(
    exprs: &[CoeffExpr],
    t: f64,
    seg: &PathSegment,
    law: &LawMoments,
) -> Result<Vec<f64>, EvalError> {
    exprs.iter().map(|e| eval_coeff(e, t, &seg.view(), law)).collect()
}

fn sq_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Max over probe pairs of the squared-increment ratio from the
/// continuity assumption. A lower bound on any valid modulus at the
/// probed times; never a certificate.
pub fn estimate_h1(
    models: (&CoeffModel, &CoeffModel),
    grid: &TimeGrid,
    cfg: &ProbeConfig,
) -> Result<f64, ConditionError> {
    let (sys, sys_bar) = models;
    let dim = sys.dim;
    let cols = grid.lag_steps + 1;
    let root = CounterRng::new(cfg.seed).child(0x41);
    let mut best: Option<f64> = None;
    for probe in 0..cfg.num_probes {
        let rng = root.child(probe as u64);
        let t = cfg.time_for_probe(&rng, probe);
        let xi = random_segment(&rng.child(1), dim, cols, cfg.seg_scale);
        let eta = random_segment(&rng.child(2), dim, cols, cfg.seg_scale);
        let mu = random_law(&rng.child(3), cfg.law_size, dim, cols, cfg.seg_scale);
        let nu = random_law(&rng.child(4), cfg.law_size, dim, cols, cfg.seg_scale);
        let dist_w2 = w2(&mu, &nu)?;
        let denom = xi.sup_dist(&eta).expect("same shape").powi(2) + dist_w2 * dist_w2;
        if denom < DEGENERATE_TOL {
            continue;
        }
        let law_mu = LawMoments::from_measure(&mu);
        let law_nu = LawMoments::from_measure(&nu);
        let mut numer = 0.0;
        for drift in [&sys.drift, &sys_bar.drift] {
            let a = eval_vector(drift, t, &xi, &law_mu)?;
            let b = eval_vector(drift, t, &eta, &law_nu)?;
            numer += sq_norm_diff(&a, &b);
        }
        for diffusion in [&sys.diffusion, &sys_bar.diffusion] {
            for row in diffusion {
                let a = eval_vector(row, t, &xi, &law_mu)?;
                let b = eval_vector(row, t, &eta, &law_nu)?;
                numer += sq_norm_diff(&a, &b);
            }
        }
        let ratio = numer / denom;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or(ConditionError::AllProbesDegenerate)
}

/// Evaluates the growth functional at the zero path and the Dirac measure
/// at zero, for each listed time.
pub fn check_h2(
    models: (&CoeffModel, &CoeffModel),
    grid: &TimeGrid,
    time_points: &[f64],
) -> Result<Vec<GrowthPoint>, ConditionError> {
    let (sys, sys_bar) = models;
    let dim = sys.dim;
    let cols = grid.lag_steps + 1;
    let zero = PathSegment::zeros(dim, cols);
    let delta0 = LawMoments::dirac_zero(dim, cols);
    let mut out = Vec::with_capacity(time_points.len());
    for &t in time_points {
        let mut value = 0.0;
        for drift in [&sys.drift, &sys_bar.drift] {
            let v = eval_vector(drift, t, &zero, &delta0)?;
            value += v.iter().map(|x| x * x).sum::<f64>();
        }
        for diffusion in [&sys.diffusion, &sys_bar.diffusion] {
            for row in diffusion {
                let v = eval_vector(row, t, &zero, &delta0)?;
                value += v.iter().map(|x| x * x).sum::<f64>();
            }
        }
        out.push(GrowthPoint { t, value });
    }
    Ok(out)
}

/// Probes the drift-order condition: on ordered inputs with the i-th
/// endpoint forced equal, `b^i` must not exceed `bbar^i`.
pub fn check_drift_order(
    b: &[CoeffExpr],
    b_bar: &[CoeffExpr],
    grid: &TimeGrid,
    cfg: &ProbeConfig,
) -> Result<Vec<Violation>, ConditionError> {
    let dim = b.len();
    let cols = grid.lag_steps + 1;
    let root = CounterRng::new(cfg.seed).child(0xD0);
    let mut violations = Vec::new();
    for probe in 0..cfg.num_probes {
        let rng = root.child(probe as u64);
        let t = cfg.time_for_probe(&rng, probe);
        let xi = random_segment(&rng.child(1), dim, cols, cfg.seg_scale);
        let eta = shift_up(&rng.child(2), &xi, cfg.seg_scale);
        let (mu, nu) = ordered_laws(&rng.child(3), cfg.law_size, dim, cols, cfg.seg_scale);
        let law_mu = LawMoments::from_measure(&mu);
        let law_nu = LawMoments::from_measure(&nu);
        for i in 0..dim {
            // Force the premise eta^i(0) = xi^i(0); the pair stays ordered.
            let mut eta_i = eta.to_rows();
            eta_i[i][cols - 1] = xi.value(i, cols - 1);
            let eta_i = PathSegment::from_rows(&eta_i).expect("finite");
            debug_assert!(xi.leq(&eta_i).unwrap());
            let lhs = eval_coeff(&b[i], t, &xi.view(), &law_mu)?;
            let rhs = eval_coeff(&b_bar[i], t, &eta_i.view(), &law_nu)?;
            let gap = lhs - rhs;
            if gap > VIOLATION_TOL {
                violations.push(Violation {
                    kind: ViolationKind::DriftOrder,
                    probe,
                    t,
                    coord: i + 1,
                    noise_col: None,
                    lhs,
                    rhs,
                    gap,
                });
            }
        }
    }
    Ok(violations)
}

/// Probes the diffusion condition: (a) equality of the two diffusion
/// matrices on identical inputs, (b) invariance of `sigma^{ij}` under
/// changes of anything but the i-th endpoint value.
pub fn check_diffusion_structure(
    sigma: &[Vec<CoeffExpr>],
    sigma_bar: &[Vec<CoeffExpr>],
    grid: &TimeGrid,
    cfg: &ProbeConfig,
) -> Result<Vec<Violation>, ConditionError> {
    let dim = sigma.len();
    let noise_dim = sigma.first().map_or(0, |r| r.len());
    let cols = grid.lag_steps + 1;
    let root = CounterRng::new(cfg.seed).child(0x51);
    let mut violations = Vec::new();
    for probe in 0..cfg.num_probes {
        let rng = root.child(probe as u64);
        let t = cfg.time_for_probe(&rng, probe);
        // (a) equality probes on identical inputs.
        let xi = random_segment(&rng.child(1), dim, cols, cfg.seg_scale);
        let mu = random_law(&rng.child(2), cfg.law_size, dim, cols, cfg.seg_scale);
        let law_mu = LawMoments::from_measure(&mu);
        for i in 0..dim {
            for j in 0..noise_dim {
                let lhs = eval_coeff(&sigma[i][j], t, &xi.view(), &law_mu)?;
                let rhs = eval_coeff(&sigma_bar[i][j], t, &xi.view(), &law_mu)?;
                let gap = (lhs - rhs).abs();
                if gap > VIOLATION_TOL {
                    violations.push(Violation {
                        kind: ViolationKind::SigmaEquality,
                        probe,
                        t,
                        coord: i + 1,
                        noise_col: Some(j + 1),
                        lhs,
                        rhs,
                        gap,
                    });
                }
            }
        }
        // (b) structure probes: everything re-randomized except xi^i(0).
        let eta = random_segment(&rng.child(3), dim, cols, cfg.seg_scale);
        let nu = random_law(&rng.child(4), cfg.law_size, dim, cols, cfg.seg_scale);
        let law_nu = LawMoments::from_measure(&nu);
        for i in 0..dim {
            let mut eta_i = eta.to_rows();
            eta_i[i][cols - 1] = xi.value(i, cols - 1);
            let eta_i = PathSegment::from_rows(&eta_i).expect("finite");
            for j in 0..noise_dim {
                let lhs = eval_coeff(&sigma[i][j], t, &xi.view(), &law_mu)?;
                let rhs = eval_coeff(&sigma[i][j], t, &eta_i.view(), &law_nu)?;
                let gap = (lhs - rhs).abs();
                if gap > VIOLATION_TOL {
                    violations.push(Violation {
                        kind: ViolationKind::SigmaStructure,
                        probe,
                        t,
                        coord: i + 1,
                        noise_col: Some(j + 1),
                        lhs,
                        rhs,
                        gap,
                    });
                }
            }
        }
    }
    Ok(violations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::parse_coeff;

    fn grid() -> TimeGrid {
        TimeGrid::new(0.0, 1.0, 0.25, 0.25).unwrap()
    }

    fn cfg() -> ProbeConfig {
        ProbeConfig { num_probes: 50, law_size: 4, ..Default::default() }
    }

    fn model1(b: &str, sigma: &str) -> CoeffModel {
        let g = grid();
        CoeffModel::new(
            1,
            1,
            vec![parse_coeff(b, 1, &g).unwrap()],
            vec![vec![parse_coeff(sigma, 1, &g).unwrap()]],
        )
        .unwrap()
    }

    #[test]
    fn h1_current_value_drift_is_at_most_two() {
        let m = model1("x[1](0)", "0");
        let a = estimate_h1((&m, &m), &grid(), &cfg()).unwrap();
        assert!(a > 0.0);
        assert!(a <= 2.0 + 1e-12, "alpha_hat = {a}");
    }

    #[test]
    fn h1_constant_coefficients_give_zero() {
        let m = model1("3", "5");
        let a = estimate_h1((&m, &m), &grid(), &cfg()).unwrap();
        assert_eq!(a, 0.0);
    }

    #[test]
    fn h1_mean_field_drift_is_at_most_two() {
        // |mean difference| <= W2 bounds the ratio by 2.
        let m = model1("E[x[1](0)]", "0");
        let a = estimate_h1((&m, &m), &grid(), &cfg()).unwrap();
        assert!(a <= 2.0 + 1e-9, "alpha_hat = {a}");
    }

    #[test]
    fn h2_examples() {
        let g = grid();
        let zero = model1("0", "0");
        for p in check_h2((&zero, &zero), &g, &[0.0, 1.0, 2.0]).unwrap() {
            assert_eq!(p.value, 0.0);
        }
        let one = model1("1", "0");
        for p in check_h2((&one, &one), &g, &[0.0, 1.0]).unwrap() {
            assert_eq!(p.value, 2.0);
        }
        let tdrift = model1("t", "0");
        let pts = check_h2((&tdrift, &tdrift), &g, &[2.0]).unwrap();
        assert_eq!(pts[0].value, 8.0);
    }

    #[test]
    fn drift_order_lagged_value_passes() {
        // xi <= eta forces xi(-0.25) <= eta(-0.25), so equal lagged drifts
        // conform.
        let g = grid();
        let b = vec![parse_coeff("x[1](-0.25)", 1, &g).unwrap()];
        let v = check_drift_order(&b, &b, &g, &cfg()).unwrap();
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn drift_order_constant_offset_violates_every_probe() {
        let g = grid();
        let b = vec![parse_coeff("x[1](0)", 1, &g).unwrap()];
        let b_bar = vec![parse_coeff("x[1](0) - 1", 1, &g).unwrap()];
        let c = cfg();
        let v = check_drift_order(&b, &b_bar, &g, &c).unwrap();
        assert_eq!(v.len(), c.num_probes);
        for viol in &v {
            assert!((viol.gap - 1.0).abs() < 1e-12);
            assert_eq!(viol.kind, ViolationKind::DriftOrder);
        }
    }

    #[test]
    fn drift_order_mean_field_passes() {
        let g = grid();
        let b = vec![parse_coeff("E[x[1](0)]", 1, &g).unwrap()];
        let v = check_drift_order(&b, &b, &g, &cfg()).unwrap();
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn diffusion_current_value_passes() {
        let g = grid();
        let s = vec![vec![parse_coeff("x[1](0)", 1, &g).unwrap()]];
        let v = check_diffusion_structure(&s, &s, &g, &cfg()).unwrap();
        assert!(v.is_empty(), "{v:?}");
    }

    #[test]
    fn diffusion_lagged_value_breaks_structure() {
        let g = grid();
        let s = vec![vec![parse_coeff("x[1](-0.25)", 1, &g).unwrap()]];
        let v = check_diffusion_structure(&s, &s, &g, &cfg()).unwrap();
        assert!(!v.is_empty());
        assert!(v.iter().all(|x| x.kind == ViolationKind::SigmaStructure));
    }

    #[test]
    fn diffusion_measure_dependence_breaks_structure() {
        let g = grid();
        let s = vec![vec![parse_coeff("E[x[1](0)]", 1, &g).unwrap()]];
        let v = check_diffusion_structure(&s, &s, &g, &cfg()).unwrap();
        assert!(!v.is_empty());
        assert!(v.iter().all(|x| x.kind == ViolationKind::SigmaStructure));
    }

    #[test]
    fn diffusion_inequality_flags_equality_kind() {
        let g = grid();
        let s = vec![vec![parse_coeff("x[1](0)", 1, &g).unwrap()]];
        let sb = vec![vec![parse_coeff("2*x[1](0)", 1, &g).unwrap()]];
        let v = check_diffusion_structure(&s, &sb, &g, &cfg()).unwrap();
        assert!(v.iter().any(|x| x.kind == ViolationKind::SigmaEquality));
    }

    #[test]
    fn checkers_are_deterministic_in_the_seed() {
        let g = grid();
        let b = vec![parse_coeff("x[1](0)", 1, &g).unwrap()];
        let b_bar = vec![parse_coeff("x[1](0) - 1", 1, &g).unwrap()];
        let v1 = check_drift_order(&b, &b_bar, &g, &cfg()).unwrap();
        let v2 = check_drift_order(&b, &b_bar, &g, &cfg()).unwrap();
        assert_eq!(v1, v2);
    }
}
