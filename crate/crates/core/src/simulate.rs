//! Coupled interacting-particle Euler–Maruyama integrator for the pair
//! system, with shared Brownian increments and empirical-law feedback.
//!
//! Both equations of a particle are driven by the same increments, and the
//! increments are a pure function of `(seed, particle, step)`, so results
//! are bit-exact reproducible and independent of worker count. Within one
//! step both systems see the laws computed from the state before the step.

use crate::coeffs::{eval_coeff, CoeffModel, EvalError, LawMoments, MomentAccumulator};
use crate::measures::Coupling;
use crate::rng::{normal_pair, CounterRng};
use crate::segments::{SegmentError, TimeGrid, Trajectory};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("numeric blow-up in system {system} at particle {particle}, step {step}")]
    BlowUp { system: SystemTag, particle: usize, step: usize },
    #[error("coefficient evaluation failed in system {system} at particle {particle}, step {step}: {source}")]
    Eval {
        system: SystemTag,
        particle: usize,
        step: usize,
        source: EvalError,
    },
    #[error("initial coupling does not match the grid: {0}")]
    BadInitial(String),
    #[error(transparent)]
    Segment(#[from] SegmentError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemTag {
    X,
    XBar,
}

impl std::fmt::Display for SystemTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SystemTag::X => write!(f, "X"),
            SystemTag::XBar => write!(f, "Xbar"),
        }
    }
}

/// Particle-count, seed and noise-dimension configuration for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_particles: usize,
    pub seed: u64,
    pub noise_dim: usize,
    #[serde(default)]
    pub antithetic: bool,
}

/// Deterministic map `(seed, particle, step) -> m` standard normal
/// increments scaled by `sqrt(dt)`. X and X-bar of one particle share
/// the same increments.
#[derive(Debug, Clone, Copy)]
pub struct NoisePlan {
    root: CounterRng,
    pub noise_dim: usize,
    pub antithetic: bool,
}

impl NoisePlan {
    pub fn new(seed: u64, noise_dim: usize, antithetic: bool) -> NoisePlan {
        NoisePlan { root: CounterRng::new(seed), noise_dim, antithetic }
    }

    /// Fills `out` (length `noise_dim`) with the increments of `particle`
    /// at `step`.
    pub fn increments(&self, particle: usize, step: usize, sqrt_dt: f64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.noise_dim);
        let (base, sign) = if self.antithetic {
            (particle / 2, if particle % 2 == 0 { 1.0 } else { -1.0 })
        } else {
            (particle, 1.0)
        };
        let stream = self.root.child(base as u64).child(step as u64);
        let mut j = 0;
        let mut pair = 0u64;
        while j < self.noise_dim {
            let (z0, z1) = normal_pair(stream.bits(pair));
            out[j] = sign * sqrt_dt * z0;
            if j + 1 < self.noise_dim {
                out[j + 1] = sign * sqrt_dt * z1;
            }
            j += 2;
            pair += 1;
        }
    }
}

/// The N-particle state of the coupled pair system.
#[derive(Debug, Clone)]
pub struct ParticleCloud {
    pub grid: TimeGrid,
    pub dim: usize,
    pub x: Vec<Trajectory>,
    pub x_bar: Vec<Trajectory>,
}

impl ParticleCloud {
    pub fn n_particles(&self) -> usize {
        self.x.len()
    }
}

/// Draws N initial pairs from the coupling and populates both systems'
/// histories particle by particle.
pub fn init_cloud(
    coupling: &Coupling,
    n: usize,
    seed: u64,
    grid: &TimeGrid,
) -> Result<ParticleCloud, SimError> {
    let (dim, cols) = coupling.shape();
    if cols != grid.lag_steps + 1 {
        return Err(SimError::BadInitial(format!(
            "coupling atoms have {cols} columns, grid lag window needs {}",
            grid.lag_steps + 1
        )));
    }
    let rng = CounterRng::new(seed).child(0x1A17);
    let mut x = Vec::with_capacity(n);
    let mut x_bar = Vec::with_capacity(n);
    for p in 0..n {
        let k = coupling.sample_index(rng.uniform(p as u64));
        let (xi, eta) = &coupling.pairs()[k];
        x.push(Trajectory::with_history(*grid, xi)?);
        x_bar.push(Trajectory::with_history(*grid, eta)?);
    }
    Ok(ParticleCloud { grid: *grid, dim, x, x_bar })
}

/// Advances both systems by one Euler–Maruyama step. The empirical laws of
/// the X and X-bar clouds are computed once, from the pre-step state, and
/// every particle then updates against them with shared increments.
pub fn euler_step(
    cloud: &mut ParticleCloud,
    step: usize,
    models: (&CoeffModel, &CoeffModel),
    noise: &NoisePlan,
) -> Result<(), SimError> {
    let grid = cloud.grid;
    let col = grid.lag_steps + step;
    let t = grid.t0 + step as f64 * grid.dt;
    let dt = grid.dt;
    let sqrt_dt = dt.sqrt();
    let dim = cloud.dim;
    let m = noise.noise_dim;

    let law_x = cloud_law(&cloud.x, col, dim, grid.lag_steps + 1);
    let law_xbar = cloud_law(&cloud.x_bar, col, dim, grid.lag_steps + 1);

    let results: Vec<Result<(), SimError>> = cloud
        .x
        .par_iter_mut()
        .zip(cloud.x_bar.par_iter_mut())
        .enumerate()
        .map(|(p, (tx, txb))| {
            let mut dw = vec![0.0; m];
            noise.increments(p, step, sqrt_dt, &mut dw);
            advance(tx, SystemTag::X, models.0, &law_x, p, step, col, t, dt, &dw)?;
            advance(txb, SystemTag::XBar, models.1, &law_xbar, p, step, col, t, dt, &dw)?;
            Ok(())
        })
        .collect();
    for r in results {
        r?;
    }
    Ok(())
}

fn cloud_law(trajs: &[Trajectory], col: usize, dim: usize, cols: usize) -> LawMoments {
    let mut acc = MomentAccumulator::new(dim, cols);
    for t in trajs {
        acc.add(&t.segment_at_col(col).expect("column in range"), 1.0);
    }
    acc.finish()
}

#[allow(clippy::too_many_arguments)]
fn advance(
    traj: &mut Trajectory,
    system: SystemTag,
    model: &CoeffModel,
    law: &LawMoments,
    particle: usize,
    step: usize,
    col: usize,
    t: f64,
    dt: f64,
    dw: &[f64],
) -> Result<(), SimError> {
    let dim = model.dim;
    let mut next = vec![0.0; dim];
    {
        let seg = traj.segment_at_col(col).expect("column in range");
        for i in 0..dim {
            let b = eval_coeff(&model.drift[i], t, &seg, law)
                .map_err(|source| SimError::Eval { system, particle, step, source })?;
            let mut v = seg.lagged(i, 0) + b * dt;
            for (j, dwj) in dw.iter().enumerate() {
                let s = eval_coeff(&model.diffusion[i][j], t, &seg, law)
                    .map_err(|source| SimError::Eval { system, particle, step, source })?;
                v += s * dwj;
            }
            if !v.is_finite() {
                return Err(SimError::BlowUp { system, particle, step });
            }
            next[i] = v;
        }
    }
    traj.set_col(col + 1, &next);
    Ok(())
}

/// Runs the full coupled simulation over `[t0, t_end]`.
pub fn run(
    grid: &TimeGrid,
    models: (&CoeffModel, &CoeffModel),
    initial: &Coupling,
    cfg: &SimConfig,
) -> Result<ParticleCloud, SimError> {
    let noise = NoisePlan::new(cfg.seed, cfg.noise_dim, cfg.antithetic);
    let mut cloud = init_cloud(initial, cfg.n_particles, cfg.seed, grid)?;
    for step in 0..grid.steps {
        euler_step(&mut cloud, step, models, &noise)?;
    }
    Ok(cloud)
}

/// Writes one system's trajectories as CSV: rows are grid times, columns
/// are particle-by-coordinate.
pub fn write_trajectories_csv<W: std::io::Write>(
    w: &mut W,
    trajs: &[Trajectory],
    grid: &TimeGrid,
) -> std::io::Result<()> {
    let dim = trajs.first().map(|t| t.dim()).unwrap_or(0);
    let mut header = vec!["time".to_string()];
    for p in 0..trajs.len() {
        for i in 0..dim {
            header.push(format!("p{p}_x{}", i + 1));
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for col in 0..grid.total_cols() {
        let mut row = vec![format!("{}", grid.time_of_col(col))];
        for traj in trajs {
            for i in 0..dim {
                row.push(format!("{}", traj.value(i, col)));
            }
        }
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
