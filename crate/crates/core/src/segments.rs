//! Discretised path space: segments on a uniform lag grid, the
//! componentwise partial order, the lattice meet and the uniform norm.
//!
//! A segment represents a continuous function on `[-r0, 0]` with values in
//! `R^d` by its values at the `L + 1` grid points `-r0 + j*dt`. Order and
//! meet are grid-pointwise; off-grid queries are errors rather than
//! interpolations.

use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

/// Relative tolerance used when snapping times onto the grid.
const GRID_SNAP_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("shape mismatch: expected {expected_dim}x{expected_cols}, got {dim}x{cols}")]
    ShapeMismatch {
        expected_dim: usize,
        expected_cols: usize,
        dim: usize,
        cols: usize,
    },
    #[error("time {t} is not on the grid (dt = {dt})")]
    OffGrid { t: f64, dt: f64 },
    #[error("segment window ending at t = {t} exits the trajectory domain")]
    WindowOutOfRange { t: f64 },
    #[error("non-finite value at coordinate {coord}, column {col}")]
    NonFinite { coord: usize, col: usize },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Uniform time grid: lag window of `lag_steps` steps of size `dt` before
/// `t0`, and `steps` integration steps from `t0` to `t_end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t_end: f64,
    pub dt: f64,
    /// L: number of lag steps; the delay horizon is `L * dt`.
    pub lag_steps: usize,
    /// Number of integration steps between `t0` and `t_end`.
    pub steps: usize,
    /// The delay horizon as requested, before rounding up to a multiple of dt.
    pub requested_r0: f64,
}

impl TimeGrid {
    /// Builds a grid, rounding `r0` (and, if needed, `t_end - t0`) up to the
    /// nearest multiple of `dt`. Use [`TimeGrid::r0_adjusted`] to see whether
    /// the delay horizon moved.
    pub fn new(t0: f64, t_end: f64, dt: f64, r0: f64) -> Result<TimeGrid, SegmentError> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(SegmentError::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if !(t_end > t0) {
            return Err(SegmentError::InvalidGrid(format!(
                "t_end ({t_end}) must exceed t0 ({t0})"
            )));
        }
        if !(r0 >= 0.0) || !r0.is_finite() {
            return Err(SegmentError::InvalidGrid(format!("r0 must be >= 0, got {r0}")));
        }
        let lag_steps = div_round_up(r0, dt);
        let steps = div_round_up(t_end - t0, dt);
        let t_end = t0 + steps as f64 * dt;
        Ok(TimeGrid { t0, t_end, dt, lag_steps, steps, requested_r0: r0 })
    }

    /// The effective delay horizon `L * dt`.
    pub fn r0(&self) -> f64 {
        self.lag_steps as f64 * self.dt
    }

    /// Whether the requested delay horizon was rounded up.
    pub fn r0_adjusted(&self) -> bool {
        (self.r0() - self.requested_r0).abs() > GRID_SNAP_TOL * self.dt
    }

    /// Total number of grid columns over `[t0 - r0, t_end]`.
    pub fn total_cols(&self) -> usize {
        self.lag_steps + self.steps + 1
    }

    /// Time of column `j` (column 0 sits at `t0 - r0`).
    pub fn time_of_col(&self, j: usize) -> f64 {
        self.t0 - self.r0() + j as f64 * self.dt
    }

    /// Column index of an on-grid time, or an error if `t` is off-grid or
    /// outside `[t0 - r0, t_end]`.
    pub fn col_of_time(&self, t: f64) -> Result<usize, SegmentError> {
        let x = (t - (self.t0 - self.r0())) / self.dt;
        let j = x.round();
        if (x - j).abs() > GRID_SNAP_TOL.max(GRID_SNAP_TOL * x.abs()) {
            return Err(SegmentError::OffGrid { t, dt: self.dt });
        }
        if j < 0.0 || j as usize >= self.total_cols() {
            return Err(SegmentError::WindowOutOfRange { t });
        }
        Ok(j as usize)
    }

    /// Snaps a lag `theta` in `[-r0, 0]` to its column offset from the
    /// segment end: `x[i](theta)` reads `lag_cols = -theta/dt` columns back.
    pub fn lag_cols_of(&self, theta: f64) -> Result<usize, SegmentError> {
        let x = -theta / self.dt;
        let j = x.round();
        if (x - j).abs() > GRID_SNAP_TOL.max(GRID_SNAP_TOL * x.abs()) {
            return Err(SegmentError::OffGrid { t: theta, dt: self.dt });
        }
        if j < 0.0 || j as usize > self.lag_steps {
            return Err(SegmentError::InvalidGrid(format!(
                "lag {theta} outside [-{}, 0]",
                self.r0()
            )));
        }
        Ok(j as usize)
    }
}

fn div_round_up(x: f64, dt: f64) -> usize {
    let q = x / dt;
    let r = q.round();
    if (q - r).abs() <= GRID_SNAP_TOL.max(GRID_SNAP_TOL * q.abs()) {
        r as usize
    } else {
        q.ceil() as usize
    }
}

/// A borrowed `d x cols` block of path values, column-major
/// (`data[j * dim + i]` is coordinate `i` at column `j`).
#[derive(Debug, Clone, Copy)]
pub struct SegmentView<'a> {
    pub dim: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

impl<'a> SegmentView<'a> {
    #[inline]
    pub fn value(&self, coord: usize, col: usize) -> f64 {
        self.data[col * self.dim + coord]
    }

    /// Value of coordinate `coord` at `lag_cols` columns before the segment
    /// end (so `lagged(i, 0)` is the current value `x^i(0)`).
    #[inline]
    pub fn lagged(&self, coord: usize, lag_cols: usize) -> f64 {
        self.value(coord, self.cols - 1 - lag_cols)
    }

    pub fn to_owned_segment(&self) -> PathSegment {
        PathSegment { dim: self.dim, data: self.data.to_vec() }
    }

    fn check_shape(&self, other: &SegmentView) -> Result<(), SegmentError> {
        if self.dim != other.dim || self.cols != other.cols {
            return Err(SegmentError::ShapeMismatch {
                expected_dim: self.dim,
                expected_cols: self.cols,
                dim: other.dim,
                cols: other.cols,
            });
        }
        Ok(())
    }

    /// Componentwise `<=` at every grid point.
    pub fn leq(&self, other: &SegmentView) -> Result<bool, SegmentError> {
        self.check_shape(other)?;
        Ok(self.data.iter().zip(other.data).all(|(a, b)| a <= b))
    }

    /// Componentwise pointwise minimum.
    pub fn meet(&self, other: &SegmentView) -> Result<PathSegment, SegmentError> {
        self.check_shape(other)?;
        let data = self.data.iter().zip(other.data).map(|(a, b)| a.min(*b)).collect();
        Ok(PathSegment { dim: self.dim, data })
    }

    /// Uniform norm: max over columns of the Euclidean norm of the column.
    pub fn sup_norm(&self) -> f64 {
        let mut best = 0.0f64;
        for j in 0..self.cols {
            let col = &self.data[j * self.dim..(j + 1) * self.dim];
            let sq: f64 = col.iter().map(|v| v * v).sum();
            best = best.max(sq);
        }
        best.sqrt()
    }

    /// Sup-norm distance `|| self - other ||_inf`.
    pub fn sup_dist(&self, other: &SegmentView) -> Result<f64, SegmentError> {
        self.check_shape(other)?;
        let mut best = 0.0f64;
        for j in 0..self.cols {
            let a = &self.data[j * self.dim..(j + 1) * self.dim];
            let b = &other.data[j * self.dim..(j + 1) * self.dim];
            let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            best = best.max(sq);
        }
        Ok(best.sqrt())
    }
}

/// An owned discretised path segment: `d` coordinates on `L + 1` lag
/// columns, column-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    dim: usize,
    data: Vec<f64>,
}

impl PathSegment {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<PathSegment, SegmentError> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(SegmentError::InvalidGrid(format!(
                "segment data length {} is not a positive multiple of dim {}",
                data.len(),
                dim
            )));
        }
        for (k, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(SegmentError::NonFinite { coord: k % dim, col: k / dim });
            }
        }
        Ok(PathSegment { dim, data })
    }

    /// Builds from row-major `values[coord][col]`.
    pub fn from_rows(values: &[Vec<f64>]) -> Result<PathSegment, SegmentError> {
        let dim = values.len();
        if dim == 0 || values[0].is_empty() {
            return Err(SegmentError::InvalidGrid("empty segment".into()));
        }
        let cols = values[0].len();
        if values.iter().any(|r| r.len() != cols) {
            return Err(SegmentError::InvalidGrid("ragged segment rows".into()));
        }
        let mut data = vec![0.0; dim * cols];
        for (i, row) in values.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                data[j * dim + i] = *v;
            }
        }
        PathSegment::new(dim, data)
    }

    /// A segment constant in time: `value[i]` at every column.
    pub fn constant(value: &[f64], cols: usize) -> Result<PathSegment, SegmentError> {
        let dim = value.len();
        let mut data = Vec::with_capacity(dim * cols);
        for _ in 0..cols {
            data.extend_from_slice(value);
        }
        PathSegment::new(dim, data)
    }

    pub fn zeros(dim: usize, cols: usize) -> PathSegment {
        PathSegment { dim, data: vec![0.0; dim * cols] }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cols(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn value(&self, coord: usize, col: usize) -> f64 {
        self.data[col * self.dim + coord]
    }

    pub fn view(&self) -> SegmentView<'_> {
        SegmentView { dim: self.dim, cols: self.cols(), data: &self.data }
    }

    pub fn leq(&self, other: &PathSegment) -> Result<bool, SegmentError> {
        self.view().leq(&other.view())
    }

    pub fn meet(&self, other: &PathSegment) -> Result<PathSegment, SegmentError> {
        self.view().meet(&other.view())
    }

    pub fn sup_norm(&self) -> f64 {
        self.view().sup_norm()
    }

    pub fn sup_dist(&self, other: &PathSegment) -> Result<f64, SegmentError> {
        self.view().sup_dist(&other.view())
    }

    /// Row-major copy, `values[coord][col]`.
    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        let cols = self.cols();
        (0..self.dim)
            .map(|i| (0..cols).map(|j| self.value(i, j)).collect())
            .collect()
    }
}

/// JSON form of a segment: `{dim, dt, r0, values}` with row-major values.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentJson {
    pub dim: usize,
    pub dt: f64,
    pub r0: f64,
    pub values: Vec<Vec<f64>>,
}

impl SegmentJson {
    pub fn from_segment(seg: &PathSegment, dt: f64) -> SegmentJson {
        SegmentJson {
            dim: seg.dim(),
            dt,
            r0: (seg.cols() - 1) as f64 * dt,
            values: seg.to_rows(),
        }
    }

    pub fn to_segment(&self) -> Result<PathSegment, SegmentError> {
        if self.values.len() != self.dim {
            return Err(SegmentError::InvalidGrid(format!(
                "values has {} rows but dim = {}",
                self.values.len(),
                self.dim
            )));
        }
        PathSegment::from_rows(&self.values)
    }
}

/// A full solution path on `[t0 - r0, t_end]`, column-major like a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    dim: usize,
    data: Vec<f64>,
}

impl Trajectory {
    /// Allocates a trajectory whose history columns (over `[t0 - r0, t0]`)
    /// are copied from `history`; later columns start at zero and are filled
    /// by the integrator.
    pub fn with_history(grid: TimeGrid, history: &PathSegment) -> Result<Trajectory, SegmentError> {
        if history.cols() != grid.lag_steps + 1 {
            return Err(SegmentError::ShapeMismatch {
                expected_dim: history.dim(),
                expected_cols: grid.lag_steps + 1,
                dim: history.dim(),
                cols: history.cols(),
            });
        }
        let dim = history.dim();
        let mut data = vec![0.0; dim * grid.total_cols()];
        data[..dim * (grid.lag_steps + 1)].copy_from_slice(history.data());
        Ok(Trajectory { grid, dim, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn value(&self, coord: usize, col: usize) -> f64 {
        self.data[col * self.dim + coord]
    }

    #[inline]
    pub fn set_value(&mut self, coord: usize, col: usize, v: f64) {
        self.data[col * self.dim + coord] = v;
    }

    pub fn col(&self, col: usize) -> &[f64] {
        &self.data[col * self.dim..(col + 1) * self.dim]
    }

    pub fn set_col(&mut self, col: usize, values: &[f64]) {
        self.data[col * self.dim..(col + 1) * self.dim].copy_from_slice(values);
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// The segment window of the `L + 1` columns ending at column `col`.
    pub fn segment_at_col(&self, col: usize) -> Result<SegmentView<'_>, SegmentError> {
        let lag = self.grid.lag_steps;
        if col < lag || col >= self.grid.total_cols() {
            return Err(SegmentError::WindowOutOfRange { t: self.grid.time_of_col(col) });
        }
        Ok(SegmentView {
            dim: self.dim,
            cols: lag + 1,
            data: &self.data[(col - lag) * self.dim..(col + 1) * self.dim],
        })
    }

    /// The segment window `[t - r0, t]` for an on-grid `t >= t0`.
    pub fn segment_at(&self, t: f64) -> Result<SegmentView<'_>, SegmentError> {
        let col = self.grid.col_of_time(t)?;
        if col < self.grid.lag_steps {
            return Err(SegmentError::WindowOutOfRange { t });
        }
        self.segment_at_col(col)
    }
}

/// Writes a segment as CSV: header row of segment times, one row per
/// coordinate.
pub fn write_segment_csv<W: Write>(w: &mut W, seg: &PathSegment, dt: f64) -> std::io::Result<()> {
    let cols = seg.cols();
    let r0 = (cols - 1) as f64 * dt;
    let header: Vec<String> = (0..cols).map(|j| format!("{}", -r0 + j as f64 * dt)).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in seg.to_rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}
