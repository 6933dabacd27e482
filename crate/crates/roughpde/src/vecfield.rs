//! Sets of driving vector fields `V_1, ..., V_d` on `R^n`, with analytic or
//! finite-difference derivatives up to third order, Lie brackets, and a few
//! named libraries used by the command-line presets and the test suites.

use crate::error::{Error, Result};
use crate::{Matrix, Vector};
use std::sync::Arc;

type EvalFn = Arc<dyn Fn(&Vector) -> Vector + Send + Sync>;
type JacFn = Arc<dyn Fn(&Vector) -> Matrix + Send + Sync>;
/// `hess(x)[m][(a, b)] = ∂_a ∂_b V^m(x)`.
type HessFn = Arc<dyn Fn(&Vector) -> Vec<Matrix> + Send + Sync>;
/// `third(x)[m][c][(a, b)] = ∂_a ∂_b ∂_c V^m(x)`.
type ThirdFn = Arc<dyn Fn(&Vector) -> Vec<Vec<Matrix>> + Send + Sync>;

#[derive(Clone)]
struct FieldDef {
    eval: EvalFn,
    jac: Option<JacFn>,
    hess: Option<HessFn>,
    third: Option<ThirdFn>,
}

/// Declared supremum bounds for the fields and their first two derivatives;
/// informational (used for reporting and step-size heuristics).
#[derive(Debug, Clone, Copy)]
pub struct FieldBounds {
    pub value: f64,
    pub jac: f64,
    pub hess: f64,
}

impl Default for FieldBounds {
    fn default() -> Self {
        FieldBounds {
            value: f64::INFINITY,
            jac: f64::INFINITY,
            hess: f64::INFINITY,
        }
    }
}

/// The collection `V = (V_1, ..., V_d)` of fields on `R^n`. Derivative
/// closures are optional: missing ones fall back to central finite
/// differences of the next-lower order.
#[derive(Clone)]
pub struct VectorFieldSet {
    pub n: usize,
    pub d: usize,
    defs: Vec<FieldDef>,
    pub bounds: FieldBounds,
}

impl std::fmt::Debug for VectorFieldSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("VectorFieldSet")
            .field("n", &self.n)
            .field("d", &self.d)
            .finish()
    }
}

fn fd_step(x: &Vector) -> f64 {
    // Cube-root-of-epsilon rule for first central differences.
    let scale = x.amax().max(1.0);
    f64::EPSILON.cbrt() * scale
}

impl VectorFieldSet {
    /// Build from explicit closures. `jacs`/`hessians`/`thirds` may be empty
    /// (finite differences are used) but when present must match `evals`.
    pub fn from_closures(
        n: usize,
        evals: Vec<EvalFn>,
        jacs: Vec<Option<JacFn>>,
        hessians: Vec<Option<HessFn>>,
        thirds: Vec<Option<ThirdFn>>,
        bounds: FieldBounds,
    ) -> Result<VectorFieldSet> {
        let d = evals.len();
        if d == 0 {
            return Err(Error::invalid(
                crate::Stage::Flow,
                "a field set needs at least one field",
            ));
        }
        let mut jacs = jacs;
        let mut hessians = hessians;
        let mut thirds = thirds;
        jacs.resize_with(d, || None);
        hessians.resize_with(d, || None);
        thirds.resize_with(d, || None);
        let defs = evals
            .into_iter()
            .zip(jacs)
            .zip(hessians)
            .zip(thirds)
            .map(|(((eval, jac), hess), third)| FieldDef {
                eval,
                jac,
                hess,
                third,
            })
            .collect();
        Ok(VectorFieldSet {
            n,
            d,
            defs,
            bounds,
        })
    }

    fn def(&self, i: usize) -> Result<&FieldDef> {
        self.defs.get(i).ok_or(Error::FieldIndex(i, self.d))
    }

    fn check_point(&self, x: &Vector) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch(format!(
                "field argument of length {} on R^{}",
                x.len(),
                self.n
            )));
        }
        Ok(())
    }

    /// `V_i(x)`.
    pub fn eval(&self, i: usize, x: &Vector) -> Result<Vector> {
        self.check_point(x)?;
        Ok((self.def(i)?.eval)(x))
    }

    /// Jacobian `(DV_i)(x)`, entry `(m, a) = ∂_a V_i^m(x)`.
    pub fn jac(&self, i: usize, x: &Vector) -> Result<Matrix> {
        self.check_point(x)?;
        let def = self.def(i)?;
        if let Some(j) = &def.jac {
            return Ok(j(x));
        }
        let h = fd_step(x);
        let mut out = Matrix::zeros(self.n, self.n);
        let mut xp = x.clone();
        for a in 0..self.n {
            xp[a] = x[a] + h;
            let fp = (def.eval)(&xp);
            xp[a] = x[a] - h;
            let fm = (def.eval)(&xp);
            xp[a] = x[a];
            out.set_column(a, &((fp - fm) / (2.0 * h)));
        }
        Ok(out)
    }

    /// Hessians `[∂_a ∂_b V_i^m(x)]_m`, one symmetric matrix per component.
    pub fn hess(&self, i: usize, x: &Vector) -> Result<Vec<Matrix>> {
        self.check_point(x)?;
        let def = self.def(i)?;
        if let Some(hh) = &def.hess {
            return Ok(hh(x));
        }
        // Central difference of the (possibly analytic) Jacobian; use a
        // slightly larger step since this is a second difference of eval
        // when no analytic Jacobian exists.
        let h = if def.jac.is_some() {
            fd_step(x)
        } else {
            f64::EPSILON.powf(0.25) * x.amax().max(1.0)
        };
        let mut per_component = vec![Matrix::zeros(self.n, self.n); self.n];
        let mut xp = x.clone();
        for b in 0..self.n {
            xp[b] = x[b] + h;
            let jp = self.jac_at(def, &xp);
            xp[b] = x[b] - h;
            let jm = self.jac_at(def, &xp);
            xp[b] = x[b];
            let diff = (jp - jm) / (2.0 * h);
            for (m, mat) in per_component.iter_mut().enumerate() {
                for a in 0..self.n {
                    mat[(a, b)] = diff[(m, a)];
                }
            }
        }
        // Symmetrize: mixed partials commute for the smooth fields we model.
        for mat in &mut per_component {
            let t = mat.transpose();
            *mat += t;
            *mat *= 0.5;
        }
        Ok(per_component)
    }

    fn jac_at(&self, def: &FieldDef, x: &Vector) -> Matrix {
        if let Some(j) = &def.jac {
            return j(x);
        }
        let h = fd_step(x);
        let mut out = Matrix::zeros(self.n, self.n);
        let mut xp = x.clone();
        for a in 0..self.n {
            xp[a] = x[a] + h;
            let fp = (def.eval)(&xp);
            xp[a] = x[a] - h;
            let fm = (def.eval)(&xp);
            xp[a] = x[a];
            out.set_column(a, &((fp - fm) / (2.0 * h)));
        }
        out
    }

    /// Directional third derivative `[Σ_c ∂_a ∂_b ∂_c V_i^m(x) v^c]_m`,
    /// one matrix per component. Contracts the analytic third-order tensor
    /// when available, otherwise differentiates the Hessian along `v`.
    pub fn third_directional(&self, i: usize, x: &Vector, v: &Vector) -> Result<Vec<Matrix>> {
        self.check_point(x)?;
        let def = self.def(i)?;
        if let Some(t) = &def.third {
            let tensor = t(x);
            let mut out = vec![Matrix::zeros(self.n, self.n); self.n];
            for m in 0..self.n {
                for c in 0..self.n {
                    out[m] += v[c] * &tensor[m][c];
                }
            }
            return Ok(out);
        }
        let vn = v.norm();
        if vn == 0.0 {
            return Ok(vec![Matrix::zeros(self.n, self.n); self.n]);
        }
        let h = fd_step(x) / vn.max(1e-300);
        let xp = x + h * v;
        let xm = x - h * v;
        let hp = self.hess(i, &xp)?;
        let hm = self.hess(i, &xm)?;
        Ok(hp
            .into_iter()
            .zip(hm)
            .map(|(p, m)| (p - m) / (2.0 * h))
            .collect())
    }

    // -- named libraries ----------------------------------------------------

    /// Constant fields `V_i(x) = c_i`; all derivatives vanish.
    pub fn constant(columns: Vec<Vector>) -> Result<VectorFieldSet> {
        if columns.is_empty() {
            return Err(Error::invalid(crate::Stage::Flow, "no constant fields given"));
        }
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::DimensionMismatch(
                "constant fields of differing lengths".into(),
            ));
        }
        let sup = columns.iter().map(|c| c.amax()).fold(0.0, f64::max);
        let zero_h: HessFn = Arc::new(move |_x| Vec::new());
        let _ = zero_h; // hessians built per-field below
        let mut evals: Vec<EvalFn> = Vec::new();
        let mut jacs: Vec<Option<JacFn>> = Vec::new();
        let mut hessians: Vec<Option<HessFn>> = Vec::new();
        let mut thirds: Vec<Option<ThirdFn>> = Vec::new();
        for c in columns {
            let cc = c.clone();
            evals.push(Arc::new(move |_x| cc.clone()));
            jacs.push(Some(Arc::new(move |x: &Vector| {
                Matrix::zeros(x.len(), x.len())
            })));
            hessians.push(Some(Arc::new(move |x: &Vector| {
                vec![Matrix::zeros(x.len(), x.len()); x.len()]
            })));
            thirds.push(Some(Arc::new(move |x: &Vector| {
                vec![vec![Matrix::zeros(x.len(), x.len()); x.len()]; x.len()]
            })));
        }
        VectorFieldSet::from_closures(
            n,
            evals,
            jacs,
            hessians,
            thirds,
            FieldBounds {
                value: sup,
                jac: 0.0,
                hess: 0.0,
            },
        )
    }

    /// Linear fields `V_i(x) = A_i x`.
    pub fn linear(mats: Vec<Matrix>) -> Result<VectorFieldSet> {
        if mats.is_empty() {
            return Err(Error::invalid(crate::Stage::Flow, "no linear fields given"));
        }
        let n = mats[0].nrows();
        if mats.iter().any(|m| m.nrows() != n || m.ncols() != n) {
            return Err(Error::DimensionMismatch(
                "linear fields must share a square shape".into(),
            ));
        }
        let jac_sup = mats.iter().map(|m| m.amax()).fold(0.0, f64::max);
        let mut evals: Vec<EvalFn> = Vec::new();
        let mut jacs: Vec<Option<JacFn>> = Vec::new();
        let mut hessians: Vec<Option<HessFn>> = Vec::new();
        let mut thirds: Vec<Option<ThirdFn>> = Vec::new();
        for a in mats {
            let a1 = a.clone();
            evals.push(Arc::new(move |x: &Vector| &a1 * x));
            jacs.push(Some(Arc::new(move |_x: &Vector| a.clone())));
            hessians.push(Some(Arc::new(move |x: &Vector| {
                vec![Matrix::zeros(x.len(), x.len()); x.len()]
            })));
            thirds.push(Some(Arc::new(move |x: &Vector| {
                vec![vec![Matrix::zeros(x.len(), x.len()); x.len()]; x.len()]
            })));
        }
        VectorFieldSet::from_closures(
            n,
            evals,
            jacs,
            hessians,
            thirds,
            FieldBounds {
                value: f64::INFINITY,
                jac: jac_sup,
                hess: 0.0,
            },
        )
    }

    /// The pair `V_1(x) = sin x`, `V_2(x) = cos x` on the line (`n = 1`,
    /// `d = 2`), with analytic derivatives. Its bracket `[V_1, V_2]` is the
    /// constant field `-1`.
    pub fn sin_cos() -> VectorFieldSet {
        let evals: Vec<EvalFn> = vec![
            Arc::new(|x: &Vector| Vector::from_element(1, x[0].sin())),
            Arc::new(|x: &Vector| Vector::from_element(1, x[0].cos())),
        ];
        let jacs: Vec<Option<JacFn>> = vec![
            Some(Arc::new(|x: &Vector| Matrix::from_element(1, 1, x[0].cos()))),
            Some(Arc::new(|x: &Vector| {
                Matrix::from_element(1, 1, -x[0].sin())
            })),
        ];
        let hessians: Vec<Option<HessFn>> = vec![
            Some(Arc::new(|x: &Vector| {
                vec![Matrix::from_element(1, 1, -x[0].sin())]
            })),
            Some(Arc::new(|x: &Vector| {
                vec![Matrix::from_element(1, 1, -x[0].cos())]
            })),
        ];
        let thirds: Vec<Option<ThirdFn>> = vec![
            Some(Arc::new(|x: &Vector| {
                vec![vec![Matrix::from_element(1, 1, -x[0].cos())]]
            })),
            Some(Arc::new(|x: &Vector| {
                vec![vec![Matrix::from_element(1, 1, x[0].sin())]]
            })),
        ];
        VectorFieldSet::from_closures(
            1,
            evals,
            jacs,
            hessians,
            thirds,
            FieldBounds {
                value: 1.0,
                jac: 1.0,
                hess: 1.0,
            },
        )
        .expect("static definition")
    }

    /// Coordinate fields cut off outside the ball of the given radius:
    /// `V_i(x) = amplitude · ψ(|x|²/R²) e_i` with `ψ(s) = exp(1 - 1/(1 - s))`
    /// for `s < 1` and `0` beyond. Smooth and compactly supported.
    pub fn compact_bump(n: usize, radius: f64, amplitude: f64) -> Result<VectorFieldSet> {
        if radius <= 0.0 {
            return Err(Error::invalid(
                crate::Stage::Flow,
                "bump radius must be positive",
            ));
        }
        let psi = move |x: &Vector| -> f64 {
            let s = x.norm_squared() / (radius * radius);
            if s >= 1.0 {
                0.0
            } else {
                (1.0 - 1.0 / (1.0 - s)).exp()
            }
        };
        let mut evals: Vec<EvalFn> = Vec::new();
        for i in 0..n {
            evals.push(Arc::new(move |x: &Vector| {
                let mut v = Vector::zeros(x.len());
                v[i] = amplitude * psi(x);
                v
            }));
        }
        VectorFieldSet::from_closures(
            n,
            evals,
            Vec::new(),
            Vec::new(),
            Vec::new(),
            FieldBounds {
                value: amplitude.abs(),
                jac: f64::INFINITY,
                hess: f64::INFINITY,
            },
        )
    }

    /// Extend the set with the iterated bracket field `V_w` of the given
    /// word appended as field index `d`. Used to build the drift-corrected
    /// reference equation for area-twisted approximations.
    pub fn with_bracket_appended(&self, word: &[usize]) -> Result<VectorFieldSet> {
        // Validate eagerly so errors surface at construction.
        let probe = Vector::zeros(self.n);
        iterated_bracket(self, word, &probe)?;
        let base = self.clone();
        let word_owned: Vec<usize> = word.to_vec();
        let eval_base = base.clone();
        let eval: EvalFn = Arc::new(move |x: &Vector| {
            iterated_bracket(&eval_base, &word_owned, x).expect("validated bracket word")
        });
        let mut out = self.clone();
        let jac = if word.len() == 2 {
            // Analytic Jacobian for a single bracket [V_i, V_j]:
            // D[V_i,V_j] = (h_j·V_i) + A_j A_i - (h_i·V_j) - A_i A_j.
            let jb = base.clone();
            let (wi, wj) = (word[0], word[1]);
            let f: JacFn = Arc::new(move |x: &Vector| {
                let vi = jb.eval(wi, x).unwrap();
                let vj = jb.eval(wj, x).unwrap();
                let ai = jb.jac(wi, x).unwrap();
                let aj = jb.jac(wj, x).unwrap();
                let hi = jb.hess(wi, x).unwrap();
                let hj = jb.hess(wj, x).unwrap();
                hess_dot_vec(&hj, &vi) + &aj * &ai - hess_dot_vec(&hi, &vj) - &ai * &aj
            });
            Some(f)
        } else {
            None
        };
        out.defs.push(FieldDef {
            eval,
            jac,
            hess: None,
            third: None,
        });
        out.d += 1;
        Ok(out)
    }
}

/// `(h · v)(m, a) = Σ_c h[m](a, c) v^c` for a per-component Hessian stack.
pub(crate) fn hess_dot_vec(h: &[Matrix], v: &Vector) -> Matrix {
    let n = v.len();
    let mut out = Matrix::zeros(n, n);
    for (m, hm) in h.iter().enumerate() {
        let row = hm * v;
        for a in 0..n {
            out[(m, a)] = row[a];
        }
    }
    out
}

/// Lie bracket `[V_i, V_j](x) = DV_j(x) V_i(x) - DV_i(x) V_j(x)`.
pub fn lie_bracket(fields: &VectorFieldSet, i: usize, j: usize, x: &Vector) -> Result<Vector> {
    let vi = fields.eval(i, x)?;
    let vj = fields.eval(j, x)?;
    let ai = fields.jac(i, x)?;
    let aj = fields.jac(j, x)?;
    Ok(aj * vi - ai * vj)
}

/// Right-nested iterated bracket of a word `(w_1, ..., w_k)`:
/// `[V_{w_1}, [V_{w_2}, [..., V_{w_k}]]]`. Words must have length at least 2.
/// Inner values are differentiated by central finite differences when the
/// nesting exceeds the analytically available depth.
pub fn iterated_bracket(fields: &VectorFieldSet, word: &[usize], x: &Vector) -> Result<Vector> {
    if word.len() < 2 {
        return Err(Error::WordTooShort);
    }
    for &w in word {
        if w >= fields.d {
            return Err(Error::FieldIndex(w, fields.d));
        }
    }
    fields.check_point(x)?;
    Ok(bracket_rec(fields, word, x))
}

fn bracket_rec(fields: &VectorFieldSet, word: &[usize], x: &Vector) -> Vector {
    if word.len() == 2 {
        return lie_bracket(fields, word[0], word[1], x).expect("indices pre-checked");
    }
    // [V_h, W] with W the bracket of the tail; DW by central differences.
    let head = word[0];
    let tail = &word[1..];
    let vh = fields.eval(head, x).expect("indices pre-checked");
    let ah = fields.jac(head, x).expect("indices pre-checked");
    let w = bracket_rec(fields, tail, x);
    let h = fd_step(x);
    let n = x.len();
    let mut dw = Matrix::zeros(n, n);
    let mut xp = x.clone();
    for a in 0..n {
        xp[a] = x[a] + h;
        let wp = bracket_rec(fields, tail, &xp);
        xp[a] = x[a] - h;
        let wm = bracket_rec(fields, tail, &xp);
        xp[a] = x[a];
        dw.set_column(a, &((wp - wm) / (2.0 * h)));
    }
    dw * vh - ah * w
}

// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_difference_jacobian_matches_analytic() {
        // Quadratic field with hand-computed Jacobian.
        let eval: EvalFn = Arc::new(|x: &Vector| {
            Vector::from_column_slice(&[x[0] * x[0] + x[1], x[0] * x[1]])
        });
        let f = VectorFieldSet::from_closures(
            2,
            vec![eval],
            Vec::new(),
            Vec::new(),
            Vec::new(),
            FieldBounds::default(),
        )
        .unwrap();
        let x = Vector::from_column_slice(&[0.7, -1.3]);
        let j = f.jac(0, &x).unwrap();
        let expect = Matrix::from_row_slice(2, 2, &[2.0 * 0.7, 1.0, -1.3, 0.7]);
        assert!((j - expect).amax() < 1e-8);
    }

    #[test]
    fn finite_difference_hessian_matches_analytic() {
        let eval: EvalFn = Arc::new(|x: &Vector| {
            Vector::from_column_slice(&[x[0] * x[0] * x[1], x[1] * x[1]])
        });
        let f = VectorFieldSet::from_closures(
            2,
            vec![eval],
            Vec::new(),
            Vec::new(),
            Vec::new(),
            FieldBounds::default(),
        )
        .unwrap();
        let x = Vector::from_column_slice(&[0.4, 0.9]);
        let h = f.hess(0, &x).unwrap();
        // Component 0: x0²x1 → [[2x1, 2x0], [2x0, 0]].
        let h0 = Matrix::from_row_slice(2, 2, &[1.8, 0.8, 0.8, 0.0]);
        // Component 1: x1² → [[0,0],[0,2]].
        let h1 = Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 2.0]);
        assert!((h[0].clone() - h0).amax() < 1e-5);
        assert!((h[1].clone() - h1).amax() < 1e-5);
    }

    #[test]
    fn sin_cos_bracket_is_minus_one() {
        let f = VectorFieldSet::sin_cos();
        for &x0 in &[0.0, 0.3, -2.0, 10.0] {
            let x = Vector::from_element(1, x0);
            let b = lie_bracket(&f, 0, 1, &x).unwrap();
            // cos·cos − (−sin)·... : DV2·V1 − DV1·V2 = (−sin)(sin) − (cos)(cos) = −1.
            assert!((b[0] + 1.0).abs() < 1e-12, "bracket at {x0}: {}", b[0]);
        }
    }

    #[test]
    fn linear_fields_bracket_is_negated_commutator() {
        // [V_i, V_j](x) = (A_j A_i − A_i A_j) x.
        let a1 = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let a2 = Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let f = VectorFieldSet::linear(vec![a1.clone(), a2.clone()]).unwrap();
        let x = Vector::from_column_slice(&[1.5, -0.5]);
        let b = lie_bracket(&f, 0, 1, &x).unwrap();
        let expect = (&a2 * &a1 - &a1 * &a2) * &x;
        assert!((b - expect).amax() < 1e-12);
    }

    #[test]
    fn right_nested_triple_bracket_on_sin_cos() {
        // [V_1, [V_1, V_2]] with V_1 = sin, V_2 = cos: the inner bracket is
        // the constant −1, so the outer bracket is −D(−1)·sin + ... =
        // cos(x)·0 − ... : [sin, −1](x) = D(−1)·sin − D(sin)·(−1) = cos x.
        let f = VectorFieldSet::sin_cos();
        for &x0 in &[0.0, 1.1, -0.7] {
            let x = Vector::from_element(1, x0);
            let b = iterated_bracket(&f, &[0, 0, 1], &x).unwrap();
            assert!(
                (b[0] - x0.cos()).abs() < 1e-6,
                "triple bracket at {x0}: {} vs {}",
                b[0],
                x0.cos()
            );
        }
    }

    #[test]
    fn word_validation() {
        let f = VectorFieldSet::sin_cos();
        let x = Vector::zeros(1);
        assert!(matches!(
            iterated_bracket(&f, &[0], &x),
            Err(Error::WordTooShort)
        ));
        assert!(matches!(
            iterated_bracket(&f, &[0, 5], &x),
            Err(Error::FieldIndex(5, 2))
        ));
    }

    #[test]
    fn appended_bracket_field_evaluates_and_differentiates() {
        let f = VectorFieldSet::sin_cos();
        let g = f.with_bracket_appended(&[0, 1]).unwrap();
        assert_eq!(g.d, 3);
        let x = Vector::from_element(1, 0.4);
        let v = g.eval(2, &x).unwrap();
        assert!((v[0] + 1.0).abs() < 1e-12);
        // The bracket is constant, so its Jacobian vanishes.
        let j = g.jac(2, &x).unwrap();
        assert!(j.amax() < 1e-9, "jacobian of constant bracket: {}", j.amax());
        let h = g.hess(2, &x).unwrap();
        assert!(h[0].amax() < 1e-4);
    }

    #[test]
    fn compact_bump_vanishes_outside_support() {
        let f = VectorFieldSet::compact_bump(2, 1.5, 2.0).unwrap();
        let inside = Vector::from_column_slice(&[0.2, 0.1]);
        let outside = Vector::from_column_slice(&[1.2, 1.2]);
        assert!(f.eval(0, &inside).unwrap()[0] > 0.0);
        assert_eq!(f.eval(0, &outside).unwrap().amax(), 0.0);
        assert_eq!(f.jac(1, &outside).unwrap().amax(), 0.0);
        // Smooth at the origin: derivative of ψ(|x|²) vanishes there.
        let j = f.jac(0, &Vector::zeros(2)).unwrap();
        assert!(j.amax() < 1e-8);
    }

    #[test]
    fn constant_fields_have_zero_derivatives() {
        let f = VectorFieldSet::constant(vec![Vector::from_column_slice(&[1.0, -2.0])]).unwrap();
        let x = Vector::from_column_slice(&[3.0, 4.0]);
        assert_eq!(f.eval(0, &x).unwrap(), Vector::from_column_slice(&[1.0, -2.0]));
        assert_eq!(f.jac(0, &x).unwrap().amax(), 0.0);
        assert_eq!(f.hess(0, &x).unwrap()[0].amax(), 0.0);
    }

    #[test]
    fn third_directional_matches_analytic_sin_cos() {
        let f = VectorFieldSet::sin_cos();
        let x = Vector::from_element(1, 0.8);
        let v = Vector::from_element(1, 2.0);
        // Third derivative of sin is -cos; directional along v scales by v.
        let t = f.third_directional(0, &x, &v).unwrap();
        assert!((t[0][(0, 0)] - (-x[0].cos() * 2.0)).abs() < 1e-10);
    }

    #[test]
    fn third_directional_fd_fallback() {
        // Cubic field: V(x) = x³ has third derivative 6 everywhere.
        let eval: EvalFn = Arc::new(|x: &Vector| Vector::from_element(1, x[0].powi(3)));
        let jac: JacFn = Arc::new(|x: &Vector| Matrix::from_element(1, 1, 3.0 * x[0] * x[0]));
        let hess: HessFn = Arc::new(|x: &Vector| vec![Matrix::from_element(1, 1, 6.0 * x[0])]);
        let f = VectorFieldSet::from_closures(
            1,
            vec![eval],
            vec![Some(jac)],
            vec![Some(hess)],
            Vec::new(),
            FieldBounds::default(),
        )
        .unwrap();
        let x = Vector::from_element(1, 0.5);
        let v = Vector::from_element(1, 1.0);
        let t = f.third_directional(0, &x, &v).unwrap();
        assert!((t[0][(0, 0)] - 6.0).abs() < 1e-6);
    }
}
