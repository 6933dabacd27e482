//! The characteristic flow of the driving signal and its first two spatial
//! derivatives.
//!
//! For fields `V = (V_1, ..., V_d)` and a driver `z`, the flow `φ_t` solves
//! `dφ_t(x) = V(φ_t(x)) dz_t`, `φ_0 = id`. The PDE transformation needs, at
//! each `(t, x)`, the triple
//!
//! - `φ_t(x)` — the flow itself,
//! - `J(t, x) = Dφ_t^{-1}(φ_t(x))` — the inverse-flow Jacobian evaluated
//!   along the forward trajectory,
//! - `H(t, x) = D²φ_t^{-1}(φ_t(x))` — the corresponding Hessian stack,
//!
//! all of which are integrated *forward* along the trajectory of `x` (no
//! matrix inversion): writing `g = φ^{-1}`, the identity `g(t, φ_t(x)) = x`
//! differentiates into transport equations for `J` and `H` with
//! `J(0) = I`, `H(0) = 0`.
//!
//! Smooth drivers are integrated with an adaptive Runge–Kutta scheme; rough
//! drivers use a second-order increment scheme consuming both signature
//! levels per driver interval, which is exact for linear fields and for
//! pure-area drivers with the sine/cosine pair.

use crate::error::{Error, Result};
use crate::roughpath::{RoughDriver, SignatureElement};
use crate::vecfield::{hess_dot_vec, VectorFieldSet};
use crate::{Matrix, Vector};
use std::collections::HashMap;
use std::sync::Arc;

/// Flow value and inverse-flow derivative data at one `(t, x)`.
#[derive(Debug, Clone)]
pub struct FlowState {
    /// `φ_t(x)`.
    pub point: Vector,
    /// `Dφ_t^{-1}` evaluated at `φ_t(x)`.
    pub jac_inv: Matrix,
    /// `D²φ_t^{-1}` at `φ_t(x)`: `hess_inv[k][(a, b)] = ∂_a ∂_b (φ_t^{-1})^k`.
    pub hess_inv: Vec<Matrix>,
}

impl FlowState {
    fn initial(x: &Vector) -> FlowState {
        let n = x.len();
        FlowState {
            point: x.clone(),
            jac_inv: Matrix::identity(n, n),
            hess_inv: vec![Matrix::zeros(n, n); n],
        }
    }

    fn is_finite(&self) -> bool {
        self.point.iter().all(|v| v.is_finite())
            && self.jac_inv.iter().all(|v| v.is_finite())
            && self
                .hess_inv
                .iter()
                .all(|m| m.iter().all(|v| v.is_finite()))
    }
}

/// Tunables for the flow solves.
#[derive(Debug, Clone)]
pub struct FlowParams {
    /// Spatial points whose trajectories are tabulated at every driver time.
    /// Queries at other points re-integrate from `t = 0`.
    pub lattice: Vec<Vector>,
    /// Blow-up guard: integration aborts when `|y|` exceeds this.
    pub guard: f64,
    /// Local error target per adaptive step (smooth drivers).
    pub rk_tol: f64,
    /// Smallest step the adaptive integrator may take before giving up.
    pub min_dt: f64,
    /// Points at which the forward/backward round trip is measured for the
    /// quality figure; defaults to a subset of the lattice.
    pub probes: Vec<Vector>,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            lattice: Vec::new(),
            guard: 1e8,
            rk_tol: 1e-8,
            min_dt: 1e-10,
            probes: Vec::new(),
        }
    }
}

/// Driver representation the flow integrates against.
#[derive(Clone)]
enum Driving {
    /// Sampled smooth path, linear between samples: `times` and positions.
    Smooth { times: Vec<f64>, points: Vec<Vector> },
    /// Level-2 rough driver.
    Rough(RoughDriver),
}

impl Driving {
    fn times(&self) -> &[f64] {
        match self {
            Driving::Smooth { times, .. } => times,
            Driving::Rough(d) => &d.times,
        }
    }

    fn horizon(&self) -> f64 {
        *self.times().last().unwrap()
    }

    fn channels(&self) -> usize {
        match self {
            Driving::Smooth { points, .. } => points[0].len(),
            Driving::Rough(d) => d.d,
        }
    }
}

/// Solved flow: a table of [`FlowState`]s over `lattice × driver times`,
/// plus enough data to answer queries at arbitrary `(t, x)` by partial steps
/// or fresh integration.
pub struct FlowSolution {
    fields: Arc<VectorFieldSet>,
    driving: Driving,
    lattice: Vec<Vector>,
    lattice_index: HashMap<Vec<u64>, usize>,
    /// `table[p][k]` = state of lattice point `p` at driver time `k`.
    table: Vec<Vec<FlowState>>,
    params: FlowParams,
    /// Sup over probe points of `|φ_T^{-1}(φ_T(x)) - x|`.
    pub quality: f64,
}

impl std::fmt::Debug for FlowSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowSolution")
            .field("lattice_points", &self.lattice.len())
            .field("time_points", &self.driving.times().len())
            .field("quality", &self.quality)
            .finish()
    }
}

fn key_of(x: &Vector) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Solve the flow for a sampled smooth driver (`points[k] = z_{times[k]}`,
/// linear in between) with the adaptive Runge–Kutta integrator.
pub fn solve_flow_smooth(
    fields: &VectorFieldSet,
    times: Vec<f64>,
    points: Vec<Vector>,
    params: FlowParams,
) -> Result<FlowSolution> {
    if times.len() != points.len() || times.len() < 2 {
        return Err(Error::DimensionMismatch(format!(
            "{} sample times for {} sample points",
            times.len(),
            points.len()
        )));
    }
    if points[0].len() != fields.d {
        return Err(Error::DimensionMismatch(format!(
            "driver has {} channels but the field set has d = {}",
            points[0].len(),
            fields.d
        )));
    }
    if !times.windows(2).all(|w| w[1] > w[0]) {
        return Err(Error::NonMonotoneTimes);
    }
    build_solution(fields, Driving::Smooth { times, points }, params)
}

/// Solve the flow for a level-2 rough driver with the increment scheme.
pub fn solve_flow_rough(
    fields: &VectorFieldSet,
    driver: &RoughDriver,
    params: FlowParams,
) -> Result<FlowSolution> {
    driver.validate()?;
    if driver.d != fields.d {
        return Err(Error::DimensionMismatch(format!(
            "driver has {} channels but the field set has d = {}",
            driver.d, fields.d
        )));
    }
    build_solution(fields, Driving::Rough(driver.clone()), params)
}

fn build_solution(
    fields: &VectorFieldSet,
    driving: Driving,
    params: FlowParams,
) -> Result<FlowSolution> {
    let fields = Arc::new(fields.clone());
    let mut table = Vec::with_capacity(params.lattice.len());
    let mut lattice_index = HashMap::new();
    for (idx, x) in params.lattice.iter().enumerate() {
        if x.len() != fields.n {
            return Err(Error::DimensionMismatch(format!(
                "lattice point of length {} on R^{}",
                x.len(),
                fields.n
            )));
        }
        lattice_index.entry(key_of(x)).or_insert(idx);
        table.push(integrate_table(&fields, &driving, x, &params)?);
    }
    let mut solution = FlowSolution {
        fields,
        driving,
        lattice: params.lattice.clone(),
        lattice_index,
        table,
        quality: 0.0,
        params,
    };
    solution.quality = solution.measure_quality()?;
    Ok(solution)
}

// ---------------------------------------------------------------------------
// Forward integration
// ---------------------------------------------------------------------------

/// Per-step derivative data of the fields at the current point.
struct FieldData {
    v: Vec<Vector>,
    a: Vec<Matrix>,
    h: Vec<Vec<Matrix>>,
}

fn field_data(fields: &VectorFieldSet, y: &Vector) -> Result<FieldData> {
    let d = fields.d;
    let mut v = Vec::with_capacity(d);
    let mut a = Vec::with_capacity(d);
    let mut h = Vec::with_capacity(d);
    for i in 0..d {
        v.push(fields.eval(i, y)?);
        a.push(fields.jac(i, y)?);
        h.push(fields.hess(i, y)?);
    }
    Ok(FieldData { v, a, h })
}

/// `Φ_i` from the transport equation of the inverse-flow Hessian:
/// `Φ_i^k = S + S^T + Σ_m J_{km} h_i[m]` with `S = H^k A_i`.
fn phi_term(data: &FieldData, i: usize, jac: &Matrix, hess: &[Matrix]) -> Vec<Matrix> {
    let n = jac.nrows();
    let ai = &data.a[i];
    let hi = &data.h[i];
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let s = &hess[k] * ai;
        let mut m = &s + s.transpose();
        for mm in 0..n {
            let w = jac[(k, mm)];
            if w != 0.0 {
                m += w * &hi[mm];
            }
        }
        out.push(m);
    }
    out
}

/// One increment step of the rough scheme: consumes `(a, M)` of a signature
/// increment and advances `(y, J, H)` to second order.
fn rough_step(
    fields: &VectorFieldSet,
    state: &mut FlowState,
    inc: &SignatureElement,
) -> Result<()> {
    let d = fields.d;
    let n = fields.n;
    let y = state.point.clone();
    let data = field_data(fields, &y)?;
    let a1 = &inc.level1;
    let m2 = &inc.level2;

    // Point update: Δy = Σ_i v_i a^i + Σ_{ij} M^{ij} (A_j v_i).
    let mut dy = Vector::zeros(n);
    for i in 0..d {
        if a1[i] != 0.0 {
            dy += a1[i] * &data.v[i];
        }
    }
    for i in 0..d {
        for j in 0..d {
            let w = m2[(i, j)];
            if w != 0.0 {
                dy += w * (&data.a[j] * &data.v[i]);
            }
        }
    }

    // Jacobian update: ΔJ = -J [ Σ_i A_i a^i + Σ_{ij} M^{ij} ((h_j·v_i) - A_i A_j) ].
    let mut gen1 = Matrix::zeros(n, n);
    for i in 0..d {
        if a1[i] != 0.0 {
            gen1 += a1[i] * &data.a[i];
        }
    }
    let mut hv = vec![vec![None::<Matrix>; d]; d]; // hv[j][i] = (h_j · v_i)
    for i in 0..d {
        for j in 0..d {
            let w = m2[(i, j)];
            if w != 0.0 {
                let hji = hess_dot_vec(&data.h[j], &data.v[i]);
                gen1 += w * (&hji - &data.a[i] * &data.a[j]);
                hv[j][i] = Some(hji);
            }
        }
    }
    let dj = -&state.jac_inv * gen1;

    // Hessian update.
    let phis: Vec<Vec<Matrix>> = (0..d)
        .map(|i| phi_term(&data, i, &state.jac_inv, &state.hess_inv))
        .collect();
    let mut dh = vec![Matrix::zeros(n, n); n];
    for i in 0..d {
        if a1[i] != 0.0 {
            for k in 0..n {
                dh[k] -= a1[i] * &phis[i][k];
            }
        }
    }
    for i in 0..d {
        for j in 0..d {
            let w = m2[(i, j)];
            if w == 0.0 {
                continue;
            }
            let hji = hv[j][i]
                .take()
                .unwrap_or_else(|| hess_dot_vec(&data.h[j], &data.v[i]));
            let tji = fields.third_directional(j, &y, &data.v[i])?;
            let jai = &state.jac_inv * &data.a[i];
            for k in 0..n {
                // Second-order transport generator for H along channel pair
                // (i, j); see the derivative of Φ along the i-th field.
                let s = &state.hess_inv[k] * &hji;
                let mut g = &s + s.transpose();
                for m in 0..n {
                    let wj = state.jac_inv[(k, m)];
                    if wj != 0.0 {
                        g += wj * &tji[m];
                    }
                    let wa = jai[(k, m)];
                    if wa != 0.0 {
                        g -= wa * &data.h[j][m];
                    }
                }
                let p = &phis[i][k] * &data.a[j];
                g -= &p + p.transpose();
                dh[k] -= w * g;
            }
        }
    }

    state.point += dy;
    state.jac_inv += dj;
    for (hk, dhk) in state.hess_inv.iter_mut().zip(dh) {
        *hk += dhk;
    }
    Ok(())
}

/// Joint state laid out for the Runge–Kutta integrator.
fn smooth_rhs(
    fields: &VectorFieldSet,
    state: &FlowState,
    zdot: &Vector,
) -> Result<(Vector, Matrix, Vec<Matrix>)> {
    let n = fields.n;
    let data = field_data(fields, &state.point)?;
    let mut dy = Vector::zeros(n);
    let mut gen = Matrix::zeros(n, n);
    for i in 0..fields.d {
        let w = zdot[i];
        if w != 0.0 {
            dy += w * &data.v[i];
            gen += w * &data.a[i];
        }
    }
    let dj = -&state.jac_inv * gen;
    let mut dh = vec![Matrix::zeros(n, n); n];
    for i in 0..fields.d {
        let w = zdot[i];
        if w == 0.0 {
            continue;
        }
        let phi = phi_term(&data, i, &state.jac_inv, &state.hess_inv);
        for k in 0..n {
            dh[k] -= w * &phi[k];
        }
    }
    Ok((dy, dj, dh))
}

fn state_axpy(state: &FlowState, h: f64, delta: &(Vector, Matrix, Vec<Matrix>)) -> FlowState {
    let mut out = state.clone();
    out.point += h * &delta.0;
    out.jac_inv += h * &delta.1;
    for (hk, dk) in out.hess_inv.iter_mut().zip(&delta.2) {
        *hk += h * dk;
    }
    out
}

fn rk4_step(
    fields: &VectorFieldSet,
    state: &FlowState,
    zdot: &Vector,
    h: f64,
) -> Result<FlowState> {
    let k1 = smooth_rhs(fields, state, zdot)?;
    let k2 = smooth_rhs(fields, &state_axpy(state, 0.5 * h, &k1), zdot)?;
    let k3 = smooth_rhs(fields, &state_axpy(state, 0.5 * h, &k2), zdot)?;
    let k4 = smooth_rhs(fields, &state_axpy(state, h, &k3), zdot)?;
    let mut out = state.clone();
    out.point += (h / 6.0) * (&k1.0 + 2.0 * &k2.0 + 2.0 * &k3.0 + &k4.0);
    out.jac_inv += (h / 6.0) * (&k1.1 + 2.0 * &k2.1 + 2.0 * &k3.1 + &k4.1);
    for (i, hk) in out.hess_inv.iter_mut().enumerate() {
        *hk += (h / 6.0) * (&k1.2[i] + 2.0 * &k2.2[i] + 2.0 * &k3.2[i] + &k4.2[i]);
    }
    Ok(out)
}

fn state_distance(a: &FlowState, b: &FlowState) -> f64 {
    let mut e = (&a.point - &b.point).amax();
    e = e.max((&a.jac_inv - &b.jac_inv).amax());
    for (x, y) in a.hess_inv.iter().zip(&b.hess_inv) {
        e = e.max((x - y).amax());
    }
    e
}

/// Integrate one linear driver segment `[0, len]` with slope `zdot`,
/// adaptively subdividing until the step-doubling error estimate meets the
/// tolerance.
fn smooth_segment(
    fields: &VectorFieldSet,
    state: &mut FlowState,
    zdot: &Vector,
    len: f64,
    t0: f64,
    params: &FlowParams,
) -> Result<()> {
    let mut done = 0.0;
    let mut h = len;
    while done < len - 1e-15 * len.max(1.0) {
        h = h.min(len - done);
        let full = rk4_step(fields, state, zdot, h)?;
        let half = rk4_step(fields, state, zdot, 0.5 * h)?;
        let half2 = rk4_step(fields, &half, zdot, 0.5 * h)?;
        let err = state_distance(&full, &half2) / 15.0;
        if err > params.rk_tol && h > params.min_dt {
            h *= 0.5;
            continue;
        }
        if err > params.rk_tol * 100.0 && h <= params.min_dt {
            return Err(Error::StepUnderflow { t: t0 + done, err });
        }
        *state = half2;
        if !state.is_finite() || state.point.amax() > params.guard {
            return Err(Error::FlowDiverged {
                t: t0 + done + h,
                norm: state.point.amax(),
                guard: params.guard,
            });
        }
        done += h;
        if err < params.rk_tol / 32.0 {
            h *= 2.0;
        }
    }
    Ok(())
}

/// Integrate a full trajectory, recording the state at each driver time.
fn integrate_table(
    fields: &VectorFieldSet,
    driving: &Driving,
    x: &Vector,
    params: &FlowParams,
) -> Result<Vec<FlowState>> {
    let times = driving.times();
    let mut states = Vec::with_capacity(times.len());
    let mut state = FlowState::initial(x);
    states.push(state.clone());
    match driving {
        Driving::Smooth { times, points } => {
            for k in 0..times.len() - 1 {
                let len = times[k + 1] - times[k];
                let zdot = (&points[k + 1] - &points[k]) / len;
                smooth_segment(fields, &mut state, &zdot, len, times[k], params)?;
                states.push(state.clone());
            }
        }
        Driving::Rough(driver) => {
            for k in 0..times.len() - 1 {
                let inc = driver.increment_between(k, k + 1);
                rough_step(fields, &mut state, &inc)?;
                if !state.is_finite() || state.point.amax() > params.guard {
                    return Err(Error::FlowDiverged {
                        t: times[k + 1],
                        norm: state.point.amax(),
                        guard: params.guard,
                    });
                }
                states.push(state.clone());
            }
        }
    }
    Ok(states)
}

// ---------------------------------------------------------------------------
// Queries
// ---------------------------------------------------------------------------

impl FlowSolution {
    pub fn horizon(&self) -> f64 {
        self.driving.horizon()
    }

    pub fn dim(&self) -> usize {
        self.fields.n
    }

    pub fn channels(&self) -> usize {
        self.driving.channels()
    }

    pub fn times(&self) -> &[f64] {
        self.driving.times()
    }

    fn locate_time(&self, t: f64) -> Result<(usize, f64)> {
        let horizon = self.horizon();
        let tol = 1e-12 * horizon.max(1.0);
        if t < -tol || t > horizon + tol {
            return Err(Error::Extrapolation { t, horizon });
        }
        let t = t.clamp(0.0, horizon);
        let times = self.driving.times();
        let k = match times.binary_search_by(|probe| probe.partial_cmp(&t).unwrap()) {
            Ok(k) => return Ok((k, 0.0)),
            Err(k) => k - 1,
        };
        let (t0, t1) = (times[k], times[k + 1]);
        if (t - t0).abs() <= tol {
            Ok((k, 0.0))
        } else if (t1 - t).abs() <= tol {
            Ok((k + 1, 0.0))
        } else {
            Ok((k, (t - t0) / (t1 - t0)))
        }
    }

    /// Full state `(φ_t(x), J, H)` at an arbitrary `(t, x)`. Lattice points
    /// read from the table; other points re-integrate from `t = 0`.
    pub fn state(&self, t: f64, x: &Vector) -> Result<FlowState> {
        let (k, lam) = self.locate_time(t)?;
        let stored;
        let row: &[FlowState] = match self.lattice_index.get(&key_of(x)) {
            Some(&idx) => &self.table[idx],
            None => {
                stored = integrate_table(&self.fields, &self.partial_driving(k, lam), x, &self.params)?;
                return Ok(stored.last().unwrap().clone());
            }
        };
        if lam == 0.0 {
            return Ok(row[k].clone());
        }
        let mut state = row[k].clone();
        self.advance_partial(&mut state, k, lam)?;
        Ok(state)
    }

    /// Driving restricted to `[0, t_k + lam·(t_{k+1} - t_k)]` for fresh
    /// integrations of off-lattice points.
    fn partial_driving(&self, k: usize, lam: f64) -> Driving {
        match &self.driving {
            Driving::Smooth { times, points } => {
                let mut ts: Vec<f64> = times[..=k].to_vec();
                let mut ps: Vec<Vector> = points[..=k].to_vec();
                if lam > 0.0 {
                    let t = times[k] + lam * (times[k + 1] - times[k]);
                    let p = &points[k] + lam * (&points[k + 1] - &points[k]);
                    ts.push(t);
                    ps.push(p);
                }
                if ts.len() == 1 {
                    // Degenerate zero-length driving: pad one stationary step.
                    ts.push(ts[0].max(1e-300) * (1.0 + 1e-9) + 1e-300);
                    ps.push(ps[0].clone());
                }
                Driving::Smooth {
                    times: ts,
                    points: ps,
                }
            }
            Driving::Rough(d) => {
                let mut times: Vec<f64> = d.times[..=k].to_vec();
                let mut elements: Vec<SignatureElement> = d.elements[..=k].to_vec();
                if lam > 0.0 {
                    let t = d.times[k] + lam * (d.times[k + 1] - d.times[k]);
                    let inc = d.increment_between(k, k + 1).geodesic_scale(lam);
                    elements.push(elements[k].product(&inc).expect("matching dims"));
                    times.push(t);
                }
                if times.len() == 1 {
                    times.push(times[0].max(1e-300) * (1.0 + 1e-9) + 1e-300);
                    elements.push(elements[0].clone());
                }
                Driving::Rough(RoughDriver {
                    d: d.d,
                    p: d.p,
                    times,
                    elements,
                    kind: d.kind,
                })
            }
        }
    }

    fn advance_partial(&self, state: &mut FlowState, k: usize, lam: f64) -> Result<()> {
        match &self.driving {
            Driving::Smooth { times, points } => {
                let len = lam * (times[k + 1] - times[k]);
                let zdot = (&points[k + 1] - &points[k]) / (times[k + 1] - times[k]);
                smooth_segment(&self.fields, state, &zdot, len, times[k], &self.params)
            }
            Driving::Rough(d) => {
                let inc = d.increment_between(k, k + 1).geodesic_scale(lam);
                rough_step(&self.fields, state, &inc)?;
                if !state.is_finite() || state.point.amax() > self.params.guard {
                    return Err(Error::FlowDiverged {
                        t: d.times[k] + lam * (d.times[k + 1] - d.times[k]),
                        norm: state.point.amax(),
                        guard: self.params.guard,
                    });
                }
                Ok(())
            }
        }
    }

    /// `φ_t(x)`.
    pub fn forward(&self, t: f64, x: &Vector) -> Result<Vector> {
        Ok(self.state(t, x)?.point)
    }

    /// `φ_t^{-1}(y)`: integrate the point equation backwards through the
    /// driver (inverted increments in reverse order). Derivative data is not
    /// propagated — only the point is needed.
    pub fn inverse(&self, t: f64, y: &Vector) -> Result<Vector> {
        if y.len() != self.fields.n {
            return Err(Error::DimensionMismatch(format!(
                "inverse query of length {} on R^{}",
                y.len(),
                self.fields.n
            )));
        }
        let (k, lam) = self.locate_time(t)?;
        let mut w = y.clone();
        match &self.driving {
            Driving::Smooth { times, points } => {
                let seg = |a: usize, frac: f64, w: &mut Vector| -> Result<()> {
                    let len = frac * (times[a + 1] - times[a]);
                    if len == 0.0 {
                        return Ok(());
                    }
                    let zdot = -(&points[a + 1] - &points[a]) / (times[a + 1] - times[a]);
                    let mut state = FlowState {
                        point: w.clone(),
                        jac_inv: Matrix::zeros(0, 0),
                        hess_inv: Vec::new(),
                    };
                    // Point-only integration: reuse the segment integrator
                    // with empty derivative blocks.
                    smooth_point_segment(&self.fields, &mut state.point, &zdot, len, &self.params)?;
                    *w = state.point;
                    Ok(())
                };
                if lam > 0.0 {
                    seg(k, lam, &mut w)?;
                }
                for a in (0..k).rev() {
                    seg(a, 1.0, &mut w)?;
                }
            }
            Driving::Rough(d) => {
                let apply = |inc: &SignatureElement, w: &mut Vector| -> Result<()> {
                    rough_point_step(&self.fields, w, inc)?;
                    if !w.iter().all(|v| v.is_finite()) || w.amax() > self.params.guard {
                        return Err(Error::FlowDiverged {
                            t,
                            norm: w.amax(),
                            guard: self.params.guard,
                        });
                    }
                    Ok(())
                };
                if lam > 0.0 {
                    let inc = d.increment_between(k, k + 1).geodesic_scale(lam).inverse();
                    apply(&inc, &mut w)?;
                }
                for a in (0..k).rev() {
                    let inc = d.increment_between(a, a + 1).inverse();
                    apply(&inc, &mut w)?;
                }
            }
        }
        Ok(w)
    }

    fn measure_quality(&self) -> Result<f64> {
        let probes: Vec<Vector> = if !self.params.probes.is_empty() {
            self.params.probes.clone()
        } else if !self.lattice.is_empty() {
            // Up to nine spread-out lattice points.
            let n = self.lattice.len();
            let step = (n / 9).max(1);
            self.lattice.iter().step_by(step).take(9).cloned().collect()
        } else {
            vec![Vector::zeros(self.fields.n)]
        };
        let t = self.horizon();
        let mut worst = 0.0_f64;
        for x in &probes {
            let fwd = self.forward(t, x)?;
            let back = self.inverse(t, &fwd)?;
            worst = worst.max((back - x).amax());
        }
        Ok(worst)
    }
}

/// Point-only rough step (first and second level, no derivative transport).
fn rough_point_step(
    fields: &VectorFieldSet,
    y: &mut Vector,
    inc: &SignatureElement,
) -> Result<()> {
    let d = fields.d;
    let mut v = Vec::with_capacity(d);
    for i in 0..d {
        v.push(fields.eval(i, y)?);
    }
    let mut dy = Vector::zeros(y.len());
    for i in 0..d {
        if inc.level1[i] != 0.0 {
            dy += inc.level1[i] * &v[i];
        }
    }
    for i in 0..d {
        for j in 0..d {
            let w = inc.level2[(i, j)];
            if w != 0.0 {
                let aj = fields.jac(j, y)?;
                dy += w * (aj * &v[i]);
            }
        }
    }
    *y += dy;
    Ok(())
}

/// Point-only adaptive RK4 over one linear segment.
fn smooth_point_segment(
    fields: &VectorFieldSet,
    y: &mut Vector,
    zdot: &Vector,
    len: f64,
    params: &FlowParams,
) -> Result<()> {
    let rhs = |y: &Vector| -> Result<Vector> {
        let mut dy = Vector::zeros(y.len());
        for i in 0..fields.d {
            if zdot[i] != 0.0 {
                dy += zdot[i] * fields.eval(i, y)?;
            }
        }
        Ok(dy)
    };
    let rk = |y: &Vector, h: f64| -> Result<Vector> {
        let k1 = rhs(y)?;
        let k2 = rhs(&(y + 0.5 * h * &k1))?;
        let k3 = rhs(&(y + 0.5 * h * &k2))?;
        let k4 = rhs(&(y + h * &k3))?;
        Ok(y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
    };
    let mut done = 0.0;
    let mut h = len;
    while done < len - 1e-15 * len.max(1.0) {
        h = h.min(len - done);
        let full = rk(y, h)?;
        let half = rk(y, 0.5 * h)?;
        let half2 = rk(&half, 0.5 * h)?;
        let err = (&full - &half2).amax() / 15.0;
        if err > params.rk_tol && h > params.min_dt {
            h *= 0.5;
            continue;
        }
        *y = half2;
        if !y.iter().all(|v| v.is_finite()) || y.amax() > params.guard {
            return Err(Error::FlowDiverged {
                t: done,
                norm: y.amax(),
                guard: params.guard,
            });
        }
        done += h;
        if err < params.rk_tol / 32.0 {
            h *= 2.0;
        }
    }
    Ok(())
}

/// Convenience accessor used by the operator transform: the triple
/// `(φ_t(x), Dφ_t^{-1}(φ_t(x)), D²φ_t^{-1}(φ_t(x)))`.
pub fn inverse_transform_data(
    flow: &FlowSolution,
    t: f64,
    x: &Vector,
) -> Result<(Vector, Matrix, Vec<Matrix>)> {
    let s = flow.state(t, x)?;
    Ok((s.point, s.jac_inv, s.hess_inv))
}

// ---------------------------------------------------------------------------
