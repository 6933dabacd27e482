//! Uniform grids, discrete fields, and the explicit monotone finite
//! difference scheme for the transformed equation `∂_t v = F^φ(t, x, Dv, D²v)`.
//!
//! The scheme is the classical monotone one: upwind one-sided first
//! differences chosen per the sign of the effective drift, central second
//! differences, and — in two dimensions — a seven-point stencil whose
//! diagonal leg carries the cross-derivative, valid while the diffusion
//! matrix is diagonally dominant. Under the step bound produced by
//! [`cfl_dt`] every update is a convex combination of neighboring values
//! plus the zero-order term, which is what drives the comparison and
//! contraction properties downstream.

use crate::error::{Error, Result};
use crate::operators::{ControlCoefficients, OperatorKind, TransformedOperator};
use crate::Vector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Uniform grid on the centered box `[-extent, extent]^n` (n = 1 or 2) with
/// spacing `h`, evolved up to `horizon` and reported on `output_slices + 1`
/// uniformly spaced time slices (including both endpoints).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Grid {
    pub n: usize,
    pub extent: f64,
    pub spacing: f64,
    pub horizon: f64,
    /// Explicit time step; when absent the CFL bound is used.
    #[serde(default)]
    pub dt: Option<f64>,
    pub output_slices: usize,
}

impl Grid {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > 2 {
            return Err(Error::UnsupportedGridDim(self.n));
        }
        if !(self.extent > 0.0) || !(self.spacing > 0.0) || self.spacing > self.extent {
            return Err(Error::GridMismatch(format!(
                "extent {} and spacing {} do not form a grid",
                self.extent, self.spacing
            )));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::GridMismatch("horizon must be positive".into()));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(Error::GridMismatch("explicit dt must be positive".into()));
            }
        }
        if self.output_slices == 0 {
            return Err(Error::GridMismatch(
                "at least one output slice is required".into(),
            ));
        }
        Ok(())
    }

    /// Nodes along one axis: `-extent + k h`, `k = 0..per_dim`.
    pub fn per_dim(&self) -> usize {
        (2.0 * self.extent / self.spacing).round() as usize + 1
    }

    pub fn node_count(&self) -> usize {
        self.per_dim().pow(self.n as u32)
    }

    pub fn coord(&self, k: usize) -> f64 {
        -self.extent + k as f64 * self.spacing
    }

    /// Multi-index of a flat node index (row-major, x fastest).
    pub fn unflatten(&self, flat: usize) -> (usize, usize) {
        let m = self.per_dim();
        (flat % m, flat / m)
    }

    pub fn flatten(&self, ix: usize, iy: usize) -> usize {
        ix + iy * self.per_dim()
    }

    pub fn node(&self, flat: usize) -> Vector {
        let (ix, iy) = self.unflatten(flat);
        match self.n {
            1 => Vector::from_element(1, self.coord(ix)),
            _ => Vector::from_column_slice(&[self.coord(ix), self.coord(iy)]),
        }
    }

    pub fn all_nodes(&self) -> Vec<Vector> {
        (0..self.node_count()).map(|k| self.node(k)).collect()
    }

    /// The times at which solutions are reported.
    pub fn output_times(&self) -> Vec<f64> {
        (0..=self.output_slices)
            .map(|k| self.horizon * k as f64 / self.output_slices as f64)
            .collect()
    }

    fn same_shape(&self, other: &Grid) -> bool {
        self.n == other.n
            && self.extent == other.extent
            && self.spacing == other.spacing
            && self.per_dim() == other.per_dim()
    }
}

/// A scalar field sampled on a grid at one or more times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Field {
    pub grid: Grid,
    pub times: Vec<f64>,
    /// `slices[k][node]` with nodes flattened row-major.
    pub slices: Vec<Vec<f64>>,
}

impl Field {
    /// Single-slice field at `t = 0` sampled from a closure.
    pub fn from_fn(grid: Grid, f: impl Fn(&Vector) -> f64) -> Field {
        let values = (0..grid.node_count()).map(|k| f(&grid.node(k))).collect();
        Field {
            grid,
            times: vec![0.0],
            slices: vec![values],
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.slices
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0_f64, |a, &b| a.max(b.abs()))
    }

    pub fn slice(&self, k: usize) -> &[f64] {
        &self.slices[k]
    }

    /// Multilinear interpolation of slice `k` at an arbitrary point, clamped
    /// to the box. Queries within `1e-9` of a node snap to the node value
    /// exactly, so node-aligned reads are bit-for-bit.
    pub fn interp(&self, k: usize, x: &Vector) -> f64 {
        let g = &self.grid;
        let m = g.per_dim();
        let locate = |c: f64| -> (usize, f64) {
            let s = (c.clamp(-g.extent, g.extent) + g.extent) / g.spacing;
            let mut i = s.floor() as isize;
            if i < 0 {
                i = 0;
            }
            if i as usize >= m - 1 {
                i = (m - 2) as isize;
            }
            let frac = s - i as f64;
            if frac < 1e-9 {
                (i as usize, 0.0)
            } else if frac > 1.0 - 1e-9 {
                (i as usize + 1, 0.0)
            } else {
                (i as usize, frac)
            }
        };
        let sl = &self.slices[k];
        match g.n {
            1 => {
                let (i, fx) = locate(x[0]);
                if fx == 0.0 {
                    sl[i]
                } else {
                    (1.0 - fx) * sl[i] + fx * sl[i + 1]
                }
            }
            _ => {
                let (i, fx) = locate(x[0]);
                let (j, fy) = locate(x[1]);
                if fx == 0.0 && fy == 0.0 {
                    return sl[g.flatten(i, j)];
                }
                let ii = if fx == 0.0 { i } else { i + 1 };
                let jj = if fy == 0.0 { j } else { j + 1 };
                let v00 = sl[g.flatten(i, j)];
                let v10 = sl[g.flatten(ii, j)];
                let v01 = sl[g.flatten(i, jj)];
                let v11 = sl[g.flatten(ii, jj)];
                (1.0 - fx) * (1.0 - fy) * v00
                    + fx * (1.0 - fy) * v10
                    + (1.0 - fx) * fy * v01
                    + fx * fy * v11
            }
        }
    }

    /// CSV rendering: header `t,x[,y],value`, one row per (slice, node).
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut out = String::new();
        if g.n == 1 {
            out.push_str("t,x,value\n");
        } else {
            out.push_str("t,x,y,value\n");
        }
        for (k, t) in self.times.iter().enumerate() {
            for node in 0..g.node_count() {
                let (ix, iy) = g.unflatten(node);
                if g.n == 1 {
                    out.push_str(&format!("{t},{},{}\n", g.coord(ix), self.slices[k][node]));
                } else {
                    out.push_str(&format!(
                        "{t},{},{},{}\n",
                        g.coord(ix),
                        g.coord(iy),
                        self.slices[k][node]
                    ));
                }
            }
        }
        out
    }
}

/// Largest pointwise gap between two fields on the same grid with the same
/// report times.
pub fn sup_distance(a: &Field, b: &Field) -> Result<f64> {
    if !a.grid.same_shape(&b.grid) {
        return Err(Error::GridMismatch(
            "fields live on different grids".into(),
        ));
    }
    if a.times.len() != b.times.len()
        || a.times
            .iter()
            .zip(&b.times)
            .any(|(s, t)| (s - t).abs() > 1e-9 * s.abs().max(1.0))
    {
        return Err(Error::GridMismatch(
            "fields are reported at different times".into(),
        ));
    }
    let mut worst = 0.0_f64;
    for (sa, sb) in a.slices.iter().zip(&b.slices) {
        for (va, vb) in sa.iter().zip(sb) {
            worst = worst.max((va - vb).abs());
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Step bound
// ---------------------------------------------------------------------------

/// Sup bounds of the transformed coefficients used by the step bound.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CoefficientBounds {
    /// Operator-norm bound of the effective diffusion matrices.
    pub lambda: f64,
    /// Max-norm bound of the effective drifts.
    pub beta: f64,
}

/// Estimate coefficient bounds by sampling the transformed coefficients over
/// the grid corners/center and a few times and controls.
pub fn estimate_bounds(
    op: &TransformedOperator,
    grid: &Grid,
    time_samples: usize,
) -> Result<CoefficientBounds> {
    grid.validate()?;
    let mut lambda = 0.0_f64;
    let mut beta = 0.0_f64;
    let m = grid.per_dim();
    let probe_axis = [0usize, m / 2, m - 1];
    let mut points = Vec::new();
    match grid.n {
        1 => {
            for &i in &probe_axis {
                points.push(grid.node(i));
            }
        }
        _ => {
            for &i in &probe_axis {
                for &j in &probe_axis {
                    points.push(grid.node(grid.flatten(i, j)));
                }
            }
        }
    }
    let p_probe = Vector::from_element(grid.n, 1.0);
    for s in 0..time_samples.max(2) {
        let t = grid.horizon * s as f64 / (time_samples.max(2) - 1) as f64;
        for x in &points {
            for hint in [None, Some(&p_probe)] {
                let coeffs = op.scheme_coefficients(t, x, hint)?;
                for row in &coeffs.per_control {
                    for c in row {
                        // Operator norm of a symmetric PSD matrix = max eigenvalue
                        // ≤ max row sum (and n ≤ 2 keeps this tight enough).
                        let a = &c.diffusion;
                        let mut rowsum = 0.0_f64;
                        for r in 0..a.nrows() {
                            let s: f64 = (0..a.ncols()).map(|cc| a[(r, cc)].abs()).sum();
                            rowsum = rowsum.max(s);
                        }
                        lambda = lambda.max(rowsum);
                        beta = beta.max(c.drift.amax());
                    }
                }
            }
        }
    }
    Ok(CoefficientBounds { lambda, beta })
}

/// Largest stable explicit step for coefficient bounds `(Λ, β)` on an
/// `n`-dimensional grid of spacing `h`:
///
/// `dt = 0.9 / (2 n Λ / h² + n β / h)`
///
/// `None` when both bounds vanish (no constraint).
pub fn cfl_from_bounds(lambda: f64, beta: f64, n: usize, h: f64) -> Option<f64> {
    let denom = 2.0 * n as f64 * lambda / (h * h) + n as f64 * beta / h;
    if denom <= 0.0 {
        None
    } else {
        Some(0.9 / denom)
    }
}

/// Step bound for a transformed operator on a grid; falls back to
/// `horizon / 100` for coefficient-free (pure transport) problems.
pub fn cfl_dt(
    op: &TransformedOperator,
    grid: &Grid,
    bounds: Option<CoefficientBounds>,
) -> Result<f64> {
    let b = match bounds {
        Some(b) => b,
        None => estimate_bounds(op, grid, 5)?,
    };
    let dt = cfl_from_bounds(b.lambda, b.beta, grid.n, grid.spacing)
        .unwrap_or(grid.horizon / 100.0);
    Ok(dt.min(grid.horizon))
}

// ---------------------------------------------------------------------------
// The monotone step
// ---------------------------------------------------------------------------

struct Stencil<'a> {
    grid: &'a Grid,
    values: &'a [f64],
}

impl Stencil<'_> {
    /// Value with constant extension beyond the boundary.
    fn at(&self, ix: isize, iy: isize) -> f64 {
        let m = self.grid.per_dim() as isize;
        let cx = ix.clamp(0, m - 1) as usize;
        let cy = iy.clamp(0, m - 1) as usize;
        self.values[self.grid.flatten(cx, cy)]
    }
}

/// The spatial part of one control's coefficient evaluation at one node:
/// `tr(a D²v) + w · Dv + constant` with upwind first differences and the
/// seven-point second-difference stencil. Returns the value and the diagonal
/// (center) weight sum for the monotonicity audit.
fn control_update(
    grid: &Grid,
    st: &Stencil,
    ix: isize,
    iy: isize,
    c: &ControlCoefficients,
) -> Result<(f64, f64)> {
    let h = grid.spacing;
    let h2 = h * h;
    let center = st.at(ix, iy);
    let mut val = c.constant;
    let mut center_weight = 0.0;

    match grid.n {
        1 => {
            let a = c.diffusion[(0, 0)];
            let w = c.drift[0];
            val += a * (st.at(ix + 1, iy) - 2.0 * center + st.at(ix - 1, iy)) / h2;
            center_weight += 2.0 * a / h2;
            if w >= 0.0 {
                val += w * (st.at(ix + 1, iy) - center) / h;
            } else {
                val += w * (center - st.at(ix - 1, iy)) / h;
            }
            center_weight += w.abs() / h;
        }
        _ => {
            let a11 = c.diffusion[(0, 0)];
            let a22 = c.diffusion[(1, 1)];
            let a12 = 0.5 * (c.diffusion[(0, 1)] + c.diffusion[(1, 0)]);
            let cross = a12.abs();
            if a11 < cross - 1e-12 || a22 < cross - 1e-12 {
                let node = vec![ix as usize, iy as usize];
                return Err(Error::NotDiagonallyDominant {
                    node,
                    a11,
                    a22,
                    a12: cross,
                });
            }
            // Second differences with the cross term on the diagonal leg.
            val += (a11 - cross) * (st.at(ix + 1, iy) - 2.0 * center + st.at(ix - 1, iy)) / h2;
            val += (a22 - cross) * (st.at(ix, iy + 1) - 2.0 * center + st.at(ix, iy - 1)) / h2;
            if cross > 0.0 {
                if a12 >= 0.0 {
                    val += cross
                        * (st.at(ix + 1, iy + 1) - 2.0 * center + st.at(ix - 1, iy - 1))
                        / h2;
                } else {
                    val += cross
                        * (st.at(ix + 1, iy - 1) - 2.0 * center + st.at(ix - 1, iy + 1))
                        / h2;
                }
            }
            center_weight += 2.0 * (a11 + a22 - cross) / h2;
            // Upwind drifts.
            for (axis, w) in [(0usize, c.drift[0]), (1, c.drift[1])] {
                let (dx, dy) = if axis == 0 { (1, 0) } else { (0, 1) };
                if w >= 0.0 {
                    val += w * (st.at(ix + dx, iy + dy) - center) / h;
                } else {
                    val += w * (center - st.at(ix - dx, iy - dy)) / h;
                }
                center_weight += w.abs() / h;
            }
        }
    }
    Ok((val, center_weight))
}

/// Central-difference gradient at a node (used to freeze the quasilinear
/// gradient argument for the step).
fn node_gradient(grid: &Grid, st: &Stencil, ix: isize, iy: isize) -> Vector {
    let h = grid.spacing;
    match grid.n {
        1 => Vector::from_element(1, (st.at(ix + 1, iy) - st.at(ix - 1, iy)) / (2.0 * h)),
        _ => Vector::from_column_slice(&[
            (st.at(ix + 1, iy) - st.at(ix - 1, iy)) / (2.0 * h),
            (st.at(ix, iy + 1) - st.at(ix, iy - 1)) / (2.0 * h),
        ]),
    }
}

/// Grids at least this large update their nodes through the rayon pool; the
/// desk-scale grids in the tests stay serial to skip the scheduling cost.
/// Both paths run the same per-node arithmetic, so outputs are identical.
const PARALLEL_NODE_THRESHOLD: usize = 4096;

/// One explicit Euler step of length `dt` from time `t`: returns the new
/// slice. Every nodal update is audited for monotonicity (the center weight
/// must keep the update a positive combination). Updates read the previous
/// slice only and are data-parallel across nodes.
pub fn step(
    op: &TransformedOperator,
    grid: &Grid,
    values: &[f64],
    t: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    if values.len() != grid.node_count() {
        return Err(Error::GridMismatch(format!(
            "slice of {} values on a grid of {} nodes",
            values.len(),
            grid.node_count()
        )));
    }
    let st = Stencil { grid, values };
    let quasilinear = op.base.kind == OperatorKind::Quasilinear;
    let update = |node: usize| -> Result<f64> {
        let (ixu, iyu) = grid.unflatten(node);
        let (ix, iy) = (ixu as isize, iyu as isize);
        let x = grid.node(node);
        let hint_store;
        let hint = if quasilinear {
            hint_store = node_gradient(grid, &st, ix, iy);
            Some(&hint_store)
        } else {
            None
        };
        let coeffs = op.scheme_coefficients(t, &x, hint)?;
        let mut outer = f64::NEG_INFINITY;
        for row in &coeffs.per_control {
            let mut inner = f64::INFINITY;
            for c in row {
                let (val, center_weight) = control_update(grid, &st, ix, iy, c)?;
                if dt * center_weight > 1.0 + 1e-12 {
                    return Err(Error::NonMonotone {
                        node: vec![ixu, iyu],
                        detail: format!(
                            "dt {dt} times center weight {center_weight} exceeds 1; \
                             tighten the step"
                        ),
                    });
                }
                inner = inner.min(val);
            }
            outer = outer.max(inner);
        }
        let next = values[node] + dt * outer;
        if !next.is_finite() {
            return Err(Error::NonFinite {
                stage: crate::Stage::PdeSolve,
                detail: format!("node ({ixu}, {iyu}) at t = {t}"),
            });
        }
        Ok(next)
    };
    if values.len() >= PARALLEL_NODE_THRESHOLD {
        (0..values.len()).into_par_iter().map(update).collect()
    } else {
        (0..values.len()).map(update).collect()
    }
}

/// Solve report: the step actually used and per-slice sup norms.
#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub dt: f64,
    pub steps: usize,
    pub bounds: CoefficientBounds,
    pub sup_per_slice: Vec<f64>,
}

/// March `∂_t v = F^φ` from the single-slice initial field to the grid
/// horizon, storing the solution at the grid's output times. Steps shorten
/// to land exactly on output times, so fields from different runs on the
/// same grid share their report times exactly.
///
/// The step size is the CFL bound from sampled coefficient bounds unless the
/// grid pins one. Sampling can undershoot the true supremum, so when the
/// per-node monotonicity audit trips an *estimated* step, the march restarts
/// with the step halved (a pinned step is the caller's to fix and the error
/// propagates).
pub fn solve_pde(op: &TransformedOperator, initial: &Field) -> Result<(Field, SolveReport)> {
    let grid = initial.grid.clone();
    grid.validate()?;
    if op.n() != grid.n {
        return Err(Error::DimensionMismatch(format!(
            "operator on R^{} for a grid of dimension {}",
            op.n(),
            grid.n
        )));
    }
    if initial.slices.len() != 1 {
        return Err(Error::GridMismatch(
            "initial field must carry exactly one slice".into(),
        ));
    }
    let bounds = estimate_bounds(op, &grid, 5)?;
    let pinned = grid.dt.is_some();
    let mut dt_base = match grid.dt {
        Some(dt) => dt,
        None => cfl_from_bounds(bounds.lambda, bounds.beta, grid.n, grid.spacing)
            .unwrap_or(grid.horizon / 100.0)
            .min(grid.horizon),
    };
    for _ in 0..6 {
        match march(op, &grid, initial, dt_base, bounds) {
            Err(Error::NonMonotone { .. }) if !pinned => dt_base *= 0.5,
            other => return other,
        }
    }
    march(op, &grid, initial, dt_base, bounds)
}

fn march(
    op: &TransformedOperator,
    grid: &Grid,
    initial: &Field,
    dt_base: f64,
    bounds: CoefficientBounds,
) -> Result<(Field, SolveReport)> {
    let outputs = grid.output_times();
    let mut slices = Vec::with_capacity(outputs.len());
    let mut sups = Vec::with_capacity(outputs.len());
    let mut current = initial.slices[0].clone();
    let sup_of = |s: &[f64]| s.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    slices.push(current.clone());
    sups.push(sup_of(&current));
    let mut t = 0.0;
    let mut steps = 0usize;
    let tol = 1e-12 * grid.horizon.max(1.0);
    for &t_out in &outputs[1..] {
        while t < t_out - tol {
            let dt = dt_base.min(t_out - t);
            current = step(op, grid, &current, t, dt)?;
            t += dt;
            steps += 1;
        }
        t = t_out;
        slices.push(current.clone());
        sups.push(sup_of(&current));
    }
    Ok((
        Field {
            grid: grid.clone(),
            times: outputs,
            slices,
        },
        SolveReport {
            dt: dt_base,
            steps,
            bounds,
            sup_per_slice: sups,
        },
    ))
}

// ---------------------------------------------------------------------------

/// Ready-made initial data for solves and presets.
pub enum InitialData {
    Gaussian {
        amplitude: f64,
        center: Vector,
        width: f64,
    },
    /// Smooth compact bump `amplitude · exp(1 - 1/(1 - |x-c|²/R²))` inside
    /// radius `R`, zero outside.
    Bump {
        amplitude: f64,
        center: Vector,
        radius: f64,
    },
    /// Indicator of the box `|x - c|_∞ ≤ halfwidth` (discontinuous).
    Box {
        amplitude: f64,
        center: Vector,
        halfwidth: f64,
    },
    Zero,
    Custom(std::sync::Arc<dyn Fn(&Vector) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for InitialData {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            InitialData::Gaussian { .. } => "Gaussian",
            InitialData::Bump { .. } => "Bump",
            InitialData::Box { .. } => "Box",
            InitialData::Zero => "Zero",
            InitialData::Custom(_) => "Custom",
        };
        f.write_str(name)
    }
}

impl InitialData {
    pub fn eval(&self, x: &Vector) -> f64 {
        match self {
            InitialData::Gaussian {
                amplitude,
                center,
                width,
            } => {
                let d2 = (x - center).norm_squared();
                amplitude * (-d2 / (2.0 * width * width)).exp()
            }
            InitialData::Bump {
                amplitude,
                center,
                radius,
            } => {
                let s = (x - center).norm_squared() / (radius * radius);
                if s >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - 1.0 / (1.0 - s)).exp()
                }
            }
            InitialData::Box {
                amplitude,
                center,
                halfwidth,
            } => {
                let inside = (x - center).amax() <= *halfwidth;
                if inside {
                    *amplitude
                } else {
                    0.0
                }
            }
            InitialData::Zero => 0.0,
            InitialData::Custom(f) => f(x),
        }
    }

    pub fn field(&self, grid: Grid) -> Field {
        Field::from_fn(grid, |x| self.eval(x))
    }
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{solve_flow_rough, FlowParams};
    use crate::operators::{transform_operator, Operator};
    use crate::Matrix;
    use crate::roughpath::RoughDriver;
    use crate::vecfield::VectorFieldSet;
    use std::sync::Arc;

    fn grid1(extent: f64, h: f64, horizon: f64, slices: usize) -> Grid {
        Grid {
            n: 1,
            extent,
            spacing: h,
            horizon,
            dt: None,
            output_slices: slices,
        }
    }

    /// Identity transform of a 1-D operator for scheme-only tests.
    fn plain(op: Operator, horizon: f64) -> TransformedOperator {
        let fields = VectorFieldSet::constant(vec![Vector::zeros(op.n)]).unwrap();
        let driver = RoughDriver::stationary(1, horizon, 2).unwrap();
        let flow = solve_flow_rough(&fields, &driver, FlowParams::default()).unwrap();
        transform_operator(&op, Arc::new(flow)).unwrap()
    }

    #[test]
    fn grid_geometry() {
        let g = grid1(2.0, 0.5, 1.0, 4);
        g.validate().unwrap();
        assert_eq!(g.per_dim(), 9);
        assert_eq!(g.node_count(), 9);
        assert_eq!(g.coord(0), -2.0);
        assert_eq!(g.coord(8), 2.0);
        assert_eq!(g.output_times(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g2 = Grid { n: 2, ..g.clone() };
        assert_eq!(g2.node_count(), 81);
        let node = g2.node(g2.flatten(1, 3));
        assert_eq!(node[0], -1.5);
        assert_eq!(node[1], -0.5);
        assert!(Grid { n: 3, ..g.clone() }.validate().is_err());
    }

    /// CFL instances: Λ = 1, β = 0, n = 1, h = 0.1 → 0.9/(2·100) = 0.0045;
    /// Λ = 0, β = 1, n = 2, h = 0.2 → 0.9/(2·5) = 0.09.
    #[test]
    fn cfl_bound_formula() {
        let dt = cfl_from_bounds(1.0, 0.0, 1, 0.1).unwrap();
        assert!((dt - 0.0045).abs() < 1e-15, "{dt}");
        let dt = cfl_from_bounds(0.0, 1.0, 2, 0.2).unwrap();
        assert!((dt - 0.09).abs() < 1e-15, "{dt}");
        assert!(cfl_from_bounds(0.0, 0.0, 1, 0.1).is_none());
    }

    #[test]
    fn cfl_dt_estimates_and_falls_back() {
        let heat = Operator::linear_const(
            Matrix::from_element(1, 1, 1.0),
            Vector::zeros(1),
        )
        .unwrap();
        let top = plain(heat, 1.0);
        let g = grid1(1.0, 0.1, 1.0, 2);
        let dt = cfl_dt(&top, &g, None).unwrap();
        // σ = 1 → a = 1 → Λ = 1: dt = 0.0045.
        assert!((dt - 0.0045).abs() < 1e-12, "{dt}");
        // Zero operator → fallback horizon/100.
        let zero = plain(Operator::zero(1), 1.0);
        let dt = cfl_dt(&zero, &g, None).unwrap();
        assert!((dt - 0.01).abs() < 1e-15);
        // Supplied bounds short-circuit estimation.
        let dt = cfl_dt(&top, &g, Some(CoefficientBounds { lambda: 2.0, beta: 0.0 })).unwrap();
        assert!((dt - 0.00225).abs() < 1e-12);
    }

    /// Heat equation ∂_t v = v_xx (σ = √2·... : tr(σσ^T X) with σ = 1 gives
    /// exactly v_xx). Gaussian initial data spreads with variance s² + 2t.
    #[test]
    fn heat_equation_matches_closed_form() {
        let op = Operator::linear_const(
            Matrix::from_element(1, 1, 1.0),
            Vector::zeros(1),
        )
        .unwrap();
        let top = plain(op, 0.25);
        let grid = grid1(4.0, 0.05, 0.25, 5);
        let s0: f64 = 0.5;
        let init = InitialData::Gaussian {
            amplitude: 1.0,
            center: Vector::zeros(1),
            width: s0,
        };
        let (field, report) = solve_pde(&top, &init.field(grid)).unwrap();
        assert!(report.steps > 0);
        // Compare on the middle of the domain at the final time (boundary
        // effects decay like the Gaussian tail at |x| = 4).
        let t = 0.25;
        let var = s0 * s0 + 2.0 * t;
        let mut worst = 0.0_f64;
        for k in 0..field.grid.node_count() {
            let x = field.grid.node(k)[0];
            if x.abs() > 2.0 {
                continue;
            }
            let exact = (s0 * s0 / var).sqrt() * (-x * x / (2.0 * var)).exp();
            let got = field.slices.last().unwrap()[k];
            worst = worst.max((got - exact).abs());
        }
        assert!(worst < 2e-3, "heat error {worst}");
    }

    /// Pure drift ∂_t v = w v_x moves data leftward (for w > 0 the upwind
    /// scheme transports the profile towards -x as t grows... the solution of
    /// v_t = w v_x is v(t, x) = v0(x + w t)).
    #[test]
    fn upwind_transport_moves_the_profile() {
        let w = 1.0;
        let op = Operator::linear_const(
            Matrix::zeros(1, 1),
            Vector::from_element(1, w),
        )
        .unwrap();
        let top = plain(op, 0.5);
        let grid = grid1(3.0, 0.01, 0.5, 1);
        let init = InitialData::Gaussian {
            amplitude: 1.0,
            center: Vector::zeros(1),
            width: 0.4,
        };
        let (field, _) = solve_pde(&top, &init.field(grid)).unwrap();
        let mut worst = 0.0_f64;
        for k in 0..field.grid.node_count() {
            let x = field.grid.node(k)[0];
            if x.abs() > 1.5 {
                continue;
            }
            let exact = (-(x + w * 0.5_f64).powi(2) / (2.0 * 0.16)).exp();
            let got = field.slices.last().unwrap()[k];
            worst = worst.max((got - exact).abs());
        }
        // First-order upwind smears at O(h^{1/2}..h) for smooth data; the
        // grid is fine enough for a loose bound.
        assert!(worst < 0.02, "transport error {worst}");
    }

    /// Monotonicity: raising the initial data anywhere never lowers the
    /// solution anywhere (checked for an HJB operator with two controls).
    #[test]
    fn comparison_principle_holds_discretely() {
        use crate::operators::{DriftFn, SigmaFn};
        let sigma: SigmaFn = Arc::new(|_t, _x, _p, g, _b| {
            Matrix::from_element(1, 1, if g == 0 { 0.8 } else { 1.2 })
        });
        let drift: DriftFn = Arc::new(|_t, _x, _p, g, _b| {
            Vector::from_element(1, if g == 0 { 1.0 } else { -1.0 })
        });
        let op = Operator::hjb(1, 1, 2, sigma, drift).unwrap();
        let top = plain(op, 0.1);
        let grid = grid1(2.0, 0.05, 0.1, 1);
        let lo = InitialData::Gaussian {
            amplitude: 1.0,
            center: Vector::zeros(1),
            width: 0.5,
        };
        let hi = InitialData::Custom(Arc::new(move |x: &Vector| {
            let d2 = x.norm_squared();
            (-d2 / 0.5).exp() + 0.3 * (3.0 * x[0]).sin().max(0.0)
        }));
        let (fl, _) = solve_pde(&top, &lo.field(grid.clone())).unwrap();
        let (fh, _) = solve_pde(&top, &hi.field(grid)).unwrap();
        for (sl, sh) in fl.slices.iter().zip(&fh.slices) {
            for (a, b) in sl.iter().zip(sh) {
                assert!(b >= &(a - 1e-12), "comparison violated: {a} vs {b}");
            }
        }
    }

    /// Contraction in sup norm for the same HJB operator: the gap between
    /// two solutions never exceeds the initial gap.
    #[test]
    fn sup_gap_contracts() {
        use crate::operators::{DriftFn, SigmaFn};
        let sigma: SigmaFn = Arc::new(|_t, _x, _p, g, _b| {
            Matrix::from_element(1, 1, if g == 0 { 0.5 } else { 1.0 })
        });
        let drift: DriftFn = Arc::new(|_t, _x, _p, g, _b| {
            Vector::from_element(1, if g == 0 { 0.7 } else { -0.4 })
        });
        let op = Operator::hjb(1, 1, 2, sigma, drift).unwrap();
        let top = plain(op, 0.2);
        let grid = grid1(2.0, 0.05, 0.2, 2);
        let a = InitialData::Gaussian {
            amplitude: 1.0,
            center: Vector::zeros(1),
            width: 0.5,
        };
        let b = InitialData::Custom(Arc::new(move |x: &Vector| {
            (-x.norm_squared() / 0.5).exp() + 0.2 * (2.0 + x[0]).cos()
        }));
        let fa = a.field(grid.clone());
        let fb = b.field(grid.clone());
        let gap0 = fa
            .slices[0]
            .iter()
            .zip(&fb.slices[0])
            .map(|(u, v)| (u - v).abs())
            .fold(0.0_f64, f64::max);
        let (sa, _) = solve_pde(&top, &fa).unwrap();
        let (sb, _) = solve_pde(&top, &fb).unwrap();
        let gap = sup_distance(&sa, &sb).unwrap();
        assert!(
            gap <= gap0 + 1e-12,
            "gap grew from {gap0} to {gap}"
        );
    }

    /// Two-dimensional diffusion with a cross term against the product
    /// closed form: a = [[1, ρ], [ρ, 1]] has Gaussian solution with
    /// covariance Σ_t = Σ_0 + 2 t a.
    #[test]
    fn cross_term_diffusion_2d() {
        // σ chosen with ρ = 0.5: σ = chol([[1, .5], [.5, 1]]).
        let rho: f64 = 0.5;
        let sigma = Matrix::from_row_slice(
            2,
            2,
            &[1.0, 0.0, rho, (1.0 - rho * rho).sqrt()],
        );
        let op = Operator::linear_const(sigma, Vector::zeros(2)).unwrap();
        let fields = VectorFieldSet::constant(vec![Vector::zeros(2)]).unwrap();
        let driver = RoughDriver::stationary(1, 0.1, 2).unwrap();
        let flow = solve_flow_rough(&fields, &driver, FlowParams::default()).unwrap();
        let top = transform_operator(&op, Arc::new(flow)).unwrap();
        let grid = Grid {
            n: 2,
            extent: 3.0,
            spacing: 0.1,
            horizon: 0.1,
            dt: None,
            output_slices: 1,
        };
        let s0: f64 = 0.6;
        let init = InitialData::Gaussian {
            amplitude: 1.0,
            center: Vector::zeros(2),
            width: s0,
        };
        let (field, _) = solve_pde(&top, &init.field(grid)).unwrap();
        // Closed form: N(0, Σ) density ratio with Σ = s0² I + 2 t a.
        let t = 0.1;
        let a = Matrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let cov = Matrix::identity(2, 2) * (s0 * s0) + 2.0 * t * a;
        let det0 = (s0 * s0) * (s0 * s0);
        let det = cov[(0, 0)] * cov[(1, 1)] - cov[(0, 1)] * cov[(1, 0)];
        let inv = Matrix::from_row_slice(
            2,
            2,
            &[cov[(1, 1)] / det, -cov[(0, 1)] / det, -cov[(1, 0)] / det, cov[(0, 0)] / det],
        );
        let mut worst = 0.0_f64;
        for k in 0..field.grid.node_count() {
            let x = field.grid.node(k);
            if x.amax() > 1.5 {
                continue;
            }
            let quad = (inv.clone() * &x).dot(&x);
            let exact = (det0 / det).sqrt() * (-quad / 2.0).exp();
            let got = field.slices.last().unwrap()[k];
            worst = worst.max((got - exact).abs());
        }
        assert!(worst < 4e-3, "2d diffusion error {worst}");
    }

    #[test]
    fn dominance_violation_is_reported() {
        // a = [[0.1, 1], [1, 0.1]] is not diagonally dominant; σ with that
        // square is impossible (not PSD), so synthesize via a custom linear
        // sigma whose product has a big cross term... instead use σ = [[1],[1]]
        // (rank one): a = [[1,1],[1,1]] is dominant (a11 = a12). Perturb with
        // unequal diagonals: σ = [[1, 0], [1, ε]] gives a = [[1, 1], [1, 1+ε²]],
        // still dominant. To actually trip the check we drive a11 below |a12|
        // through the flow: impossible for PSD. So call the stencil directly.
        let g = Grid {
            n: 2,
            extent: 1.0,
            spacing: 0.5,
            horizon: 1.0,
            dt: None,
            output_slices: 1,
        };
        let values = vec![0.0; g.node_count()];
        let st = Stencil {
            grid: &g,
            values: &values,
        };
        let c = ControlCoefficients {
            diffusion: Matrix::from_row_slice(2, 2, &[0.1, 1.0, 1.0, 0.1]),
            drift: Vector::zeros(2),
            constant: 0.0,
        };
        let err = control_update(&g, &st, 1, 1, &c).unwrap_err();
        assert!(matches!(err, Error::NotDiagonallyDominant { .. }));
    }

    #[test]
    fn oversized_step_trips_the_monotonicity_audit() {
        let op = Operator::linear_const(
            Matrix::from_element(1, 1, 1.0),
            Vector::zeros(1),
        )
        .unwrap();
        let top = plain(op, 1.0);
        let mut grid = grid1(1.0, 0.1, 1.0, 1);
        grid.dt = Some(0.01); // CFL would demand 0.0045.
        let init = InitialData::Gaussian {
            amplitude: 1.0,
            center: Vector::zeros(1),
            width: 0.3,
        };
        let err = solve_pde(&top, &init.field(grid)).unwrap_err();
        assert!(matches!(err, Error::NonMonotone { .. }), "{err:?}");
    }

    #[test]
    fn interpolation_snaps_and_blends() {
        let grid = grid1(1.0, 0.5, 1.0, 1);
        let f = Field::from_fn(grid, |x| x[0] * 2.0);
        // Node-exact: bit-for-bit.
        assert_eq!(f.interp(0, &Vector::from_element(1, -0.5)), -1.0);
        // Midpoint blends.
        assert!((f.interp(0, &Vector::from_element(1, 0.25)) - 0.5).abs() < 1e-12);
        // Clamped beyond the box.
        assert_eq!(f.interp(0, &Vector::from_element(1, 5.0)), 2.0);
        // 2-D bilinear.
        let g2 = Grid {
            n: 2,
            extent: 1.0,
            spacing: 0.5,
            horizon: 1.0,
            dt: None,
            output_slices: 1,
        };
        let f2 = Field::from_fn(g2, |x| x[0] + 3.0 * x[1]);
        let q = Vector::from_column_slice(&[0.25, -0.25]);
        assert!((f2.interp(0, &q) - (0.25 - 0.75)).abs() < 1e-12);
    }

    #[test]
    fn sup_distance_requires_matching_layout() {
        let ga = grid1(1.0, 0.5, 1.0, 1);
        let gb = grid1(1.0, 0.25, 1.0, 1);
        let fa = Field::from_fn(ga.clone(), |_| 1.0);
        let fb = Field::from_fn(gb, |_| 0.0);
        assert!(sup_distance(&fa, &fb).is_err());
        let fc = Field::from_fn(ga, |_| 0.25);
        assert_eq!(sup_distance(&fa, &fc).unwrap(), 0.75);
    }

    #[test]
    fn csv_layout_is_stable() {
        let grid = grid1(0.5, 0.5, 1.0, 1);
        let f = Field::from_fn(grid, |x| x[0]);
        let csv = f.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,x,value");
        assert_eq!(lines[1], "0,-0.5,-0.5");
        assert_eq!(lines.len(), 1 + 3);
    }
}
