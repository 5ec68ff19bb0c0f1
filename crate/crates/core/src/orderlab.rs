//! Order-preservation experiments: the smoothed positive-part family,
//! the per-particle violation statistic, replicated preservation trials,
//! and the drift-gap probe built on perturbed monotone couplings.

use crate::coeffs::{eval_coeff, LawMoments};
use crate::measures::{
    mixture_coupling, stochastic_leq, EmpiricalMeasure, MeasureError, WeightedMeasure,
};
use crate::rng::CounterRng;
use crate::scenario::{NecessitySection, ScenarioSpec};
use crate::segments::PathSegment;
use crate::simulate::{run, ParticleCloud, SimConfig, SimError};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OrderlabError {
    #[error("initial coupling is not ordered: some pair has left !<= right")]
    InitialNotOrdered,
    #[error("necessity premise violated: {0}")]
    Premise(String),
    #[error("scenario has no [necessity] section")]
    NoNecessity,
    #[error("no particle carries the tagged pair; increase N or eps")]
    NoTaggedParticles,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Measure(#[from] MeasureError),
}

/// The C^2 ramp `psi_n`: value, first and second derivative at `s`.
///
/// `psi_n'' = 4n^2 s` on `[0, 1/(2n)]`, `-4n^2 (s - 1/n)` on
/// `[1/(2n), 1/n]`, zero elsewhere, with `psi_n(s) = psi_n'(s) = 0` for
/// `s <= 0`. Integrating gives `psi_n(s) = s - 1/(2n)` for `s >= 1/n`,
/// so `0 <= s^+ - psi_n(s) <= 1/(2n)` everywhere.
pub fn psi(n: u32, s: f64) -> (f64, f64, f64) {
    let nf = n as f64;
    let half = 1.0 / (2.0 * nf);
    let full = 1.0 / nf;
    if s <= 0.0 {
        (0.0, 0.0, 0.0)
    } else if s <= half {
        let n2 = nf * nf;
        ((2.0 / 3.0) * n2 * s * s * s, 2.0 * n2 * s * s, 4.0 * n2 * s)
    } else if s < full {
        let n2 = nf * nf;
        let u = s - full;
        let val = 1.0 / (12.0 * nf) + (s - half) - (2.0 * n2 / 3.0) * (u * u * u + half * half * half);
        (val, 1.0 - 2.0 * n2 * u * u, -4.0 * n2 * u)
    } else {
        (s - half, 1.0, 0.0)
    }
}

/// The exponential gauge `g_n(s) = e^{ns} - 1`; diagnostic only.
pub fn g(n: u32, s: f64) -> f64 {
    (n as f64 * s).exp_m1()
}

/// Per-particle violation statistic: the sup over simulated times and
/// coordinates of `(X^i - Xbar^i)^+`.
pub fn violation_stat(cloud: &ParticleCloud) -> Vec<f64> {
    let lag = cloud.grid.lag_steps;
    let total = cloud.grid.total_cols();
    cloud
        .x
        .iter()
        .zip(&cloud.x_bar)
        .map(|(tx, txb)| {
            let mut worst = 0.0f64;
            for col in lag..total {
                for i in 0..cloud.dim {
                    worst = worst.max(tx.value(i, col) - txb.value(i, col));
                }
            }
            worst.max(0.0)
        })
        .collect()
}

/// Running mean over particles of `sup_{r <= t} max_i psi_n((X-Xbar)^i(r))^2`,
/// one entry per simulated grid time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiTrace {
    pub n: u32,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Aggregate of one replicated preservation trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub replications: usize,
    pub n_particles: usize,
    pub tolerance: f64,
    pub max_stat: f64,
    pub p95_stat: f64,
    pub median_stat: f64,
    pub violating_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psi_trace: Option<PsiTrace>,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Runs `replications` independent coupled simulations and aggregates the
/// violation statistic across every particle of every replication.
///
/// Replication seeds derive from the scenario seed by counter mixing, so
/// the report is identical regardless of thread count or replication
/// scheduling.
pub fn run_preservation_trial(spec: &ScenarioSpec) -> Result<TrialReport, OrderlabError> {
    if !spec.initial.is_ordered() {
        return Err(OrderlabError::InitialNotOrdered);
    }
    let seed_rng = CounterRng::new(spec.sim.seed).child(0x7E1A);
    let reps: Vec<Result<(Vec<f64>, Option<Vec<f64>>), SimError>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let cfg = SimConfig { seed: seed_rng.bits(rep as u64), ..spec.sim };
            let cloud = run(
                &spec.grid,
                (&spec.models.0, &spec.models.1),
                &spec.initial,
                &cfg,
            )?;
            let trace = spec.psi_n.map(|n| psi_trace_sums(&cloud, n));
            Ok((violation_stat(&cloud), trace))
        })
        .collect();

    let mut stats = Vec::with_capacity(spec.replications * spec.sim.n_particles);
    let mut trace_sums: Option<Vec<f64>> = None;
    for r in reps {
        let (s, trace) = r?;
        stats.extend(s);
        if let Some(t) = trace {
            match &mut trace_sums {
                Some(acc) => acc.iter_mut().zip(&t).for_each(|(a, v)| *a += v),
                None => trace_sums = Some(t),
            }
        }
    }

    let violating = stats.iter().filter(|&&s| s > spec.tolerance).count();
    let mut sorted = stats.clone();
    sorted.sort_by(f64::total_cmp);
    let total = stats.len();
    let psi_trace = trace_sums.map(|sums| {
        let count = (spec.replications * spec.sim.n_particles) as f64;
        let lag = spec.grid.lag_steps;
        PsiTrace {
            n: spec.psi_n.unwrap(),
            times: (0..=spec.grid.steps)
                .map(|k| spec.grid.time_of_col(lag + k))
                .collect(),
            values: sums.into_iter().map(|s| s / count).collect(),
        }
    });
    Ok(TrialReport {
        replications: spec.replications,
        n_particles: spec.sim.n_particles,
        tolerance: spec.tolerance,
        max_stat: sorted[total - 1],
        p95_stat: quantile_sorted(&sorted, 0.95),
        median_stat: quantile_sorted(&sorted, 0.5),
        violating_fraction: violating as f64 / total as f64,
        psi_trace,
    })
}

fn psi_trace_sums(cloud: &ParticleCloud, n: u32) -> Vec<f64> {
    let lag = cloud.grid.lag_steps;
    let steps = cloud.grid.steps;
    let mut sums = vec![0.0; steps + 1];
    for (tx, txb) in cloud.x.iter().zip(&cloud.x_bar) {
        let mut running = 0.0f64;
        for (k, sum) in sums.iter_mut().enumerate() {
            let col = lag + k;
            let mut gap = 0.0f64;
            for i in 0..cloud.dim {
                gap = gap.max(tx.value(i, col) - txb.value(i, col));
            }
            running = running.max(psi(n, gap).0);
            *sum += running * running;
        }
    }
    sums
}

/// A necessity probe setup: the perturbed initial coupling together with
/// the tagged pair it carries.
#[derive(Debug, Clone)]
pub struct NecessityScenario {
    pub spec: ScenarioSpec,
    pub xi: PathSegment,
    pub eta: PathSegment,
    /// 1-based coordinate with `xi^i(0) = eta^i(0)`.
    pub coord: usize,
    pub eps: f64,
    /// Mixture marginals `(1-eps) mu + eps delta_xi` and the analogue for
    /// `eta`, for direct coefficient evaluation.
    pub mu_eps: WeightedMeasure,
    pub nu_eps: WeightedMeasure,
}

/// Builds the perturbed coupling `pi_eps = (1-eps) pi_0 + eps delta_(xi,eta)`
/// from the monotone coupling `pi_0` of `(mu, nu)`, after checking the
/// premises: `xi <= eta`, equality at the designated coordinate's endpoint,
/// and `mu <= nu` in stochastic order.
pub fn build_necessity_scenario(
    base: &ScenarioSpec,
    xi: PathSegment,
    eta: PathSegment,
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    eps: f64,
    coord: usize,
) -> Result<NecessityScenario, OrderlabError> {
    let d = base.dim;
    if coord < 1 || coord > d {
        return Err(OrderlabError::Premise(format!("coord must lie in 1..={d}")));
    }
    if !xi.leq(&eta).map_err(|e| OrderlabError::Premise(e.to_string()))? {
        return Err(OrderlabError::Premise("xi !<= eta".into()));
    }
    let end = xi.cols() - 1;
    if xi.value(coord - 1, end) != eta.value(coord - 1, end) {
        return Err(OrderlabError::Premise(
            "xi and eta must agree at the designated coordinate's endpoint".into(),
        ));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(OrderlabError::Premise("eps must lie in (0, 1)".into()));
    }
    if !stochastic_leq(mu, nu)?.holds {
        return Err(OrderlabError::Premise("mu !<= nu in stochastic order".into()));
    }
    let pi0 = crate::measures::monotone_coupling(mu, nu)?;
    let pi_eps = mixture_coupling(&pi0, &xi, &eta, eps)?;

    let mix = |m: &EmpiricalMeasure, atom: &PathSegment| -> Result<WeightedMeasure, MeasureError> {
        let w = (1.0 - eps) / m.len() as f64;
        let mut atoms: Vec<PathSegment> = m.atoms().to_vec();
        let mut weights = vec![w; m.len()];
        atoms.push(atom.clone());
        weights.push(eps);
        WeightedMeasure::new(atoms, weights)
    };
    let mu_eps = mix(mu, &xi)?;
    let nu_eps = mix(nu, &eta)?;

    let mut spec = base.clone();
    spec.initial = pi_eps;
    Ok(NecessityScenario { spec, xi, eta, coord, eps, mu_eps, nu_eps })
}

/// Builds the necessity scenario from the scenario file's `[necessity]`
/// section: constant histories for `(xi, eta)` and a generated ordered pair
/// of atom clouds for `(mu, nu)`.
pub fn necessity_from_spec(base: &ScenarioSpec) -> Result<NecessityScenario, OrderlabError> {
    let nec = base.necessity.as_ref().ok_or(OrderlabError::NoNecessity)?;
    let cols = base.grid.lag_steps + 1;
    let seg = |vals: &[f64]| {
        PathSegment::constant(vals, cols).map_err(|e| OrderlabError::Premise(e.to_string()))
    };
    let xi = seg(&nec.xi)?;
    let eta = seg(&nec.eta)?;
    let (mu, nu) = generate_ordered_laws(nec, base.dim, cols)?;
    build_necessity_scenario(base, xi, eta, &mu, &nu, nec.eps, nec.coord)
}

fn generate_ordered_laws(
    nec: &NecessitySection,
    d: usize,
    cols: usize,
) -> Result<(EmpiricalMeasure, EmpiricalMeasure), OrderlabError> {
    let rng = CounterRng::new(nec.law_seed).child(0x1A3);
    let mut lo = Vec::with_capacity(nec.law_atoms);
    let mut hi = Vec::with_capacity(nec.law_atoms);
    for k in 0..nec.law_atoms {
        let krng = rng.child(k as u64);
        let base: Vec<f64> = (0..d)
            .map(|i| nec.xi[i] + krng.child(0).uniform_in(i as u64, -0.5, 0.5))
            .collect();
        let upper: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(i, c)| c + krng.child(1).uniform_in(i as u64, 0.0, 0.5))
            .collect();
        lo.push(PathSegment::constant(&base, cols).map_err(|e| OrderlabError::Premise(e.to_string()))?);
        hi.push(PathSegment::constant(&upper, cols).map_err(|e| OrderlabError::Premise(e.to_string()))?);
    }
    Ok((EmpiricalMeasure::new(lo)?, EmpiricalMeasure::new(hi)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    /// Probe horizon in time units.
    pub s: f64,
    /// Monte-Carlo mean of `(X^i - Xbar^i)(t0 + s) / s` over tagged pairs.
    pub estimate: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftGapReport {
    pub coord: usize,
    pub eps: f64,
    /// Number of particle pairs carrying the tagged atom, summed over
    /// replications.
    pub tagged: usize,
    pub points: Vec<GapPoint>,
    /// `b^i(t0, xi, mu_eps)` evaluated directly from the expressions.
    pub direct_lhs: f64,
    /// `bbar^i(t0, eta, nu_eps)` evaluated directly.
    pub direct_rhs: f64,
    pub direct_gap: f64,
}

/// Simulates from `pi_eps`, tags the particles that drew the atom pair
/// `(xi, eta)` exactly, and estimates the short-time drift gap
/// `(1/s) E[1_A (X^i - Xbar^i)(t0 + s)]` normalised by `P(A)`.
pub fn drift_gap_probe(
    ns: &NecessityScenario,
    s_steps: &[usize],
) -> Result<DriftGapReport, OrderlabError> {
    let spec = &ns.spec;
    let i = ns.coord - 1;
    let lag = spec.grid.lag_steps;
    let max_step = *s_steps.iter().max().unwrap_or(&1);
    if max_step == 0 || max_step > spec.grid.steps {
        return Err(OrderlabError::Premise(format!(
            "s_steps entries must lie in 1..={}",
            spec.grid.steps
        )));
    }

    let seed_rng = CounterRng::new(spec.sim.seed).child(0x9AB);
    let reps: Vec<Result<Vec<Vec<f64>>, SimError>> = (0..spec.replications)
        .into_par_iter()
        .map(|rep| {
            let cfg = SimConfig { seed: seed_rng.bits(rep as u64), ..spec.sim };
            let cloud = run(
                &spec.grid,
                (&spec.models.0, &spec.models.1),
                &spec.initial,
                &cfg,
            )?;
            // Event A: the particle drew exactly the tagged atom pair.
            let tagged: Vec<usize> = (0..cloud.n_particles())
                .filter(|&p| {
                    history_matches(&cloud, p, &ns.xi, &ns.eta, lag)
                })
                .collect();
            let mut per_s = Vec::with_capacity(s_steps.len());
            for &s in s_steps {
                let col = lag + s;
                let horizon = s as f64 * spec.grid.dt;
                per_s.push(
                    tagged
                        .iter()
                        .map(|&p| {
                            (cloud.x[p].value(i, col) - cloud.x_bar[p].value(i, col)) / horizon
                        })
                        .collect::<Vec<f64>>(),
                );
            }
            Ok(per_s)
        })
        .collect();

    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); s_steps.len()];
    for r in reps {
        let per_s = r?;
        for (acc, v) in samples.iter_mut().zip(per_s) {
            acc.extend(v);
        }
    }
    let tagged = samples[0].len();
    if tagged == 0 {
        return Err(OrderlabError::NoTaggedParticles);
    }

    let points = s_steps
        .iter()
        .zip(&samples)
        .map(|(&s, vals)| {
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                / (n - 1.0).max(1.0);
            GapPoint {
                s: s as f64 * spec.grid.dt,
                estimate: mean,
                std_error: (var / n).sqrt(),
            }
        })
        .collect();

    let law_mu = LawMoments::from_weighted(&ns.mu_eps);
    let law_nu = LawMoments::from_weighted(&ns.nu_eps);
    let t0 = spec.grid.t0;
    let lhs = eval_coeff(&spec.models.0.drift[i], t0, &ns.xi.view(), &law_mu)
        .map_err(|e| OrderlabError::Premise(format!("drift evaluation failed: {e}")))?;
    let rhs = eval_coeff(&spec.models.1.drift[i], t0, &ns.eta.view(), &law_nu)
        .map_err(|e| OrderlabError::Premise(format!("drift evaluation failed: {e}")))?;

    Ok(DriftGapReport {
        coord: ns.coord,
        eps: ns.eps,
        tagged,
        points,
        direct_lhs: lhs,
        direct_rhs: rhs,
        direct_gap: lhs - rhs,
    })
}

fn history_matches(
    cloud: &ParticleCloud,
    p: usize,
    xi: &PathSegment,
    eta: &PathSegment,
    lag: usize,
) -> bool {
    let d = cloud.dim;
    for col in 0..=lag {
        for i in 0..d {
            if cloud.x[p].value(i, col).to_bits() != xi.value(i, col).to_bits()
                || cloud.x_bar[p].value(i, col).to_bits() != eta.value(i, col).to_bits()
            {
                return false;
            }
        }
    }
    true
}
