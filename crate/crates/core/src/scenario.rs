//! Scenario files: one structured document drives simulation, order
//! trials, necessity probes and condition checks, so checkers and
//! simulations share the same model definitions.
//!
//! The format is TOML with strict tables; unknown keys are errors.

use crate::coeffs::{parse_coeff, CoeffModel};
use crate::conditions::ProbeConfig;
use crate::measures::{Coupling, CouplingJson};
use crate::rng::CounterRng;
use crate::segments::{PathSegment, TimeGrid};
use crate::simulate::SimConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Toml(String),
    #[error("invalid scenario at `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn invalid(key: &str, reason: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Invalid { key: key.to_string(), reason: reason.to_string() }
}

/// The on-disk scenario document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub grid: GridSection,
    pub dims: DimsSection,
    pub models: ModelsSection,
    pub initial: InitialSection,
    pub sim: SimSection,
    #[serde(default)]
    pub probes: ProbesSection,
    #[serde(default)]
    pub necessity: Option<NecessitySection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    pub r0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimsSection {
    pub d: usize,
    pub m: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsSection {
    pub b: Vec<String>,
    pub bbar: Vec<String>,
    pub sigma: Vec<Vec<String>>,
    pub sigmabar: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "type", rename_all = "lowercase")]
pub enum InitialSection {
    /// A coupling JSON file on disk.
    File { path: String },
    /// A generated coupling.
    Builtin(BuiltinInitial),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "name", rename_all = "snake_case")]
pub enum BuiltinInitial {
    /// Pairs of constant histories `(c, c + g)` with `c ~ U[low, high]`
    /// and `g ~ U[gap_low, gap_high]`; ordered by construction.
    OrderedUniformConstants {
        atoms: usize,
        low: f64,
        high: f64,
        gap_low: f64,
        gap_high: f64,
        seed: u64,
    },
    /// A single Dirac pair of constant histories.
    ConstantPair { left: Vec<f64>, right: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    #[serde(rename = "N")]
    pub n_particles: usize,
    pub seed: u64,
    pub replications: usize,
    #[serde(default)]
    pub antithetic: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbesSection {
    pub num_probes: usize,
    pub tolerance: f64,
    pub time_points: Vec<f64>,
    pub seg_scale: f64,
    pub law_size: usize,
    pub seed: u64,
    /// Optional smoothing index for the positive-part diagnostic trace.
    pub psi_n: Option<u32>,
}

impl Default for ProbesSection {
    fn default() -> Self {
        ProbesSection {
            num_probes: 1000,
            tolerance: 1e-9,
            time_points: Vec::new(),
            seg_scale: 1.0,
            law_size: 4,
            seed: 0,
            psi_n: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NecessitySection {
    pub eps: f64,
    /// 1-based designated coordinate with `xi^i(0) = eta^i(0)`.
    pub coord: usize,
    /// Constant history values per coordinate.
    pub xi: Vec<f64>,
    pub eta: Vec<f64>,
    pub law_atoms: usize,
    pub law_seed: u64,
    /// Probe horizons as multiples of dt.
    pub s_steps: Vec<usize>,
}

/// A fully validated scenario, ready to run.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub grid: TimeGrid,
    pub dim: usize,
    pub noise_dim: usize,
    pub models: (CoeffModel, CoeffModel),
    pub initial: Coupling,
    pub sim: SimConfig,
    pub replications: usize,
    pub probes: ProbeConfig,
    pub tolerance: f64,
    pub psi_n: Option<u32>,
    pub necessity: Option<NecessitySection>,
    /// The source document, kept for provenance in reports.
    pub file: ScenarioFile,
}

impl ScenarioSpec {
    pub fn model_hashes(&self) -> (String, String) {
        (self.models.0.hash(), self.models.1.hash())
    }
}

/// Loads and fully validates a scenario file.
pub fn load_scenario(path: &str) -> Result<ScenarioSpec, ScenarioError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| ScenarioError::Io { path: path.to_string(), source })?;
    let file: ScenarioFile =
        toml::from_str(&text).map_err(|e| ScenarioError::Toml(e.to_string()))?;
    build_spec(file, path)
}

/// Validates an already-parsed document.
pub fn build_spec(file: ScenarioFile, origin: &str) -> Result<ScenarioSpec, ScenarioError> {
    let grid = TimeGrid::new(file.grid.t0, file.grid.t_end, file.grid.dt, file.grid.r0)
        .map_err(|e| invalid("grid", e))?;
    let d = file.dims.d;
    let m = file.dims.m;
    if d == 0 {
        return Err(invalid("dims.d", "must be at least 1"));
    }
    if m == 0 {
        return Err(invalid("dims.m", "must be at least 1"));
    }

    let parse_vec = |key: &str, srcs: &[String]| -> Result<Vec<_>, ScenarioError> {
        if srcs.len() != d {
            return Err(invalid(key, format!("expected {d} entries, got {}", srcs.len())));
        }
        srcs.iter()
            .enumerate()
            .map(|(i, s)| {
                parse_coeff(s, d, &grid).map_err(|e| invalid(&format!("{key}[{i}]"), e))
            })
            .collect()
    };
    let parse_mat = |key: &str, srcs: &[Vec<String>]| -> Result<Vec<Vec<_>>, ScenarioError> {
        if srcs.len() != d || srcs.iter().any(|row| row.len() != m) {
            return Err(invalid(key, format!("expected a {d}x{m} matrix of expressions")));
        }
        srcs.iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .map(|(j, s)| {
                        parse_coeff(s, d, &grid)
                            .map_err(|e| invalid(&format!("{key}[{i}][{j}]"), e))
                    })
                    .collect()
            })
            .collect()
    };

    let b = parse_vec("models.b", &file.models.b)?;
    let bbar = parse_vec("models.bbar", &file.models.bbar)?;
    let sigma = parse_mat("models.sigma", &file.models.sigma)?;
    let sigmabar = parse_mat("models.sigmabar", &file.models.sigmabar)?;
    let model = CoeffModel::new(d, m, b, sigma).map_err(|e| invalid("models", e))?;
    let model_bar = CoeffModel::new(d, m, bbar, sigmabar).map_err(|e| invalid("models", e))?;

    let initial = build_initial(&file.initial, d, &grid, origin)?;

    if file.sim.n_particles == 0 {
        return Err(invalid("sim.N", "must be at least 1"));
    }
    if file.sim.replications == 0 {
        return Err(invalid("sim.replications", "must be at least 1"));
    }
    let sim = SimConfig {
        n_particles: file.sim.n_particles,
        seed: file.sim.seed,
        noise_dim: m,
        antithetic: file.sim.antithetic,
    };

    if file.probes.num_probes == 0 {
        return Err(invalid("probes.num_probes", "must be at least 1"));
    }
    if file.probes.law_size == 0 {
        return Err(invalid("probes.law_size", "must be at least 1"));
    }
    let probes = ProbeConfig {
        num_probes: file.probes.num_probes,
        time_points: if file.probes.time_points.is_empty() {
            vec![grid.t0, (grid.t0 + grid.t_end) / 2.0, grid.t_end]
        } else {
            file.probes.time_points.clone()
        },
        seg_scale: file.probes.seg_scale,
        law_size: file.probes.law_size,
        seed: file.probes.seed,
    };

    if let Some(nec) = &file.necessity {
        if !(nec.eps > 0.0 && nec.eps < 1.0) {
            return Err(invalid("necessity.eps", "must lie in (0, 1)"));
        }
        if nec.coord < 1 || nec.coord > d {
            return Err(invalid("necessity.coord", format!("must lie in 1..={d}")));
        }
        if nec.xi.len() != d || nec.eta.len() != d {
            return Err(invalid("necessity.xi", format!("xi and eta need {d} entries")));
        }
        if nec.xi.iter().zip(&nec.eta).any(|(a, b)| a > b) {
            return Err(invalid("necessity.xi", "xi must be componentwise <= eta"));
        }
        if nec.xi[nec.coord - 1] != nec.eta[nec.coord - 1] {
            return Err(invalid(
                "necessity.coord",
                "xi and eta must agree at the designated coordinate",
            ));
        }
        if nec.law_atoms == 0 {
            return Err(invalid("necessity.law_atoms", "must be at least 1"));
        }
        if nec.s_steps.is_empty() || nec.s_steps.iter().any(|&s| s == 0 || s > grid.steps) {
            return Err(invalid(
                "necessity.s_steps",
                format!("entries must lie in 1..={}", grid.steps),
            ));
        }
    }

    Ok(ScenarioSpec {
        grid,
        dim: d,
        noise_dim: m,
        models: (model, model_bar),
        initial,
        sim,
        replications: file.sim.replications,
        tolerance: file.probes.tolerance,
        psi_n: file.probes.psi_n,
        probes,
        necessity: file.necessity.clone(),
        file,
    })
}

fn build_initial(
    section: &InitialSection,
    d: usize,
    grid: &TimeGrid,
    origin: &str,
) -> Result<Coupling, ScenarioError> {
    let cols = grid.lag_steps + 1;
    match section {
        InitialSection::File { path } => {
            // Relative paths resolve against the scenario file's directory.
            let resolved = std::path::Path::new(origin)
                .parent()
                .map(|dir| dir.join(path))
                .filter(|p| p.exists())
                .unwrap_or_else(|| std::path::PathBuf::from(path));
            let text = std::fs::read_to_string(&resolved).map_err(|source| ScenarioError::Io {
                path: resolved.display().to_string(),
                source,
            })?;
            let js: CouplingJson = serde_json::from_str(&text)
                .map_err(|e| invalid("initial.path", format!("coupling JSON: {e}")))?;
            let pi = js.to_coupling().map_err(|e| invalid("initial.path", e))?;
            let (pd, pc) = pi.shape();
            if pd != d || pc != cols {
                return Err(invalid(
                    "initial.path",
                    format!("coupling shape {pd}x{pc} does not match scenario {d}x{cols}"),
                ));
            }
            Ok(pi)
        }
        InitialSection::Builtin(BuiltinInitial::OrderedUniformConstants {
            atoms,
            low,
            high,
            gap_low,
            gap_high,
            seed,
        }) => {
            if *atoms == 0 {
                return Err(invalid("initial.atoms", "must be at least 1"));
            }
            if gap_low > gap_high || *gap_low < 0.0 {
                return Err(invalid("initial.gap_low", "need 0 <= gap_low <= gap_high"));
            }
            let rng = CounterRng::new(*seed).child(0xC0);
            let mut pairs = Vec::with_capacity(*atoms);
            for k in 0..*atoms {
                let krng = rng.child(k as u64);
                let base: Vec<f64> =
                    (0..d).map(|i| krng.child(0).uniform_in(i as u64, *low, *high)).collect();
                let upper: Vec<f64> = base
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c + krng.child(1).uniform_in(i as u64, *gap_low, *gap_high))
                    .collect();
                pairs.push((
                    PathSegment::constant(&base, cols).map_err(|e| invalid("initial", e))?,
                    PathSegment::constant(&upper, cols).map_err(|e| invalid("initial", e))?,
                ));
            }
            let w = 1.0 / *atoms as f64;
            Coupling::new(pairs, vec![w; *atoms]).map_err(|e| invalid("initial", e))
        }
        InitialSection::Builtin(BuiltinInitial::ConstantPair { left, right }) => {
            if left.len() != d || right.len() != d {
                return Err(invalid(
                    "initial.left",
                    format!("left and right need {d} entries"),
                ));
            }
            Coupling::dirac(
                PathSegment::constant(left, cols).map_err(|e| invalid("initial", e))?,
                PathSegment::constant(right, cols).map_err(|e| invalid("initial", e))?,
            )
            .map_err(|e| invalid("initial", e))
        }
    }
}
