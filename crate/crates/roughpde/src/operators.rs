//! Second-order operators `F(t, x, p, X)`, their conjugation through the
//! characteristic flow, and the structural checks the well-posedness theory
//! rests on: degenerate ellipticity and the comparison-modulus condition on
//! matrix pairs constrained by the doubling inequality.
//!
//! The transformed operator is
//!
//! `F^φ(t, x, p, X) = F(t, φ_t(x), J^T p, J^T X J + Σ_k p_k H^k)`
//!
//! with `J = Dφ_t^{-1}` and `H = D²φ_t^{-1}` evaluated along the forward
//! flow. For operators built from diffusion/drift coefficients this is again
//! an operator of the same class with `σ ↦ J σ` and an extra drift from the
//! trace against `H`, which is what the finite-difference scheme consumes.

use crate::error::{Error, Result};
use crate::flow::FlowSolution;
use crate::{Matrix, Vector};
use nalgebra::SymmetricEigen;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use std::sync::Arc;

/// `σ(t, x, p, γ, β)`: diffusion coefficient, an `n × width` matrix. The
/// gradient argument is only used by quasilinear operators, the control
/// indices only by the control families.
pub type SigmaFn = Arc<dyn Fn(f64, &Vector, &Vector, usize, usize) -> Matrix + Send + Sync>;
/// `b(t, x, p, γ, β)`: drift vector.
pub type DriftFn = Arc<dyn Fn(f64, &Vector, &Vector, usize, usize) -> Vector + Send + Sync>;
/// Scalar zero-order/right-hand term `f(t, x, p)` (quasilinear operators).
pub type ScalarFn = Arc<dyn Fn(f64, &Vector, &Vector) -> f64 + Send + Sync>;
/// Free-form operator `F(t, x, p, X)`.
pub type CustomFn = Arc<dyn Fn(f64, &Vector, &Vector, &Matrix) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    /// `tr(σσ^T X) + b · p` with `σ, b` depending on `(t, x)` only.
    Linear,
    /// `tr(σ(t, x, p) σ^T X) + f(t, x, p)` with a gradient-damped `σ`.
    Quasilinear,
    /// `inf_γ [ tr(σ_γ σ_γ^T X) + b_γ · p ]` over a finite control set.
    HjbMin,
    /// `sup_β inf_γ [...]` over finite control sets.
    Isaacs,
    /// Arbitrary closure; can be evaluated and transformed pointwise but has
    /// no finite-difference realization.
    Custom,
}

impl OperatorKind {
    pub fn name(self) -> &'static str {
        match self {
            OperatorKind::Linear => "linear",
            OperatorKind::Quasilinear => "quasilinear",
            OperatorKind::HjbMin => "hjb",
            OperatorKind::Isaacs => "isaacs",
            OperatorKind::Custom => "custom",
        }
    }
}

/// A proper second-order operator on `R^n`.
#[derive(Clone)]
pub struct Operator {
    pub kind: OperatorKind,
    pub n: usize,
    /// Number of columns of σ.
    pub width: usize,
    /// Size of the inner (infimum) control set; 1 for non-control kinds.
    pub gamma_count: usize,
    /// Size of the outer (supremum) control set; 1 unless Isaacs.
    pub beta_count: usize,
    sigma: Option<SigmaFn>,
    drift: Option<DriftFn>,
    scalar: Option<ScalarFn>,
    custom: Option<CustomFn>,
    /// Lipschitz damping constant of `p ↦ σ(t, x, p)`:
    /// `|σ(p) - σ(q)| ≤ c1 |p - q| / (1 + |p| + |q|)`.
    pub gradient_damping: Option<f64>,
}

impl std::fmt::Debug for Operator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Operator")
            .field("kind", &self.kind.name())
            .field("n", &self.n)
            .field("controls", &(self.beta_count, self.gamma_count))
            .finish()
    }
}

fn trace_quadratic(sigma: &Matrix, x_mat: &Matrix) -> f64 {
    // tr(σ σ^T X) = Σ_{k,l} (σσ^T)_{kl} X_{kl}; computed as Σ_c (σ_c)^T X σ_c
    // over columns to avoid forming σσ^T.
    let mut acc = 0.0;
    for c in 0..sigma.ncols() {
        let col = sigma.column(c);
        acc += (x_mat * col).dot(&col);
    }
    acc
}

impl Operator {
    /// Linear operator `tr(σ(t,x) σ(t,x)^T X) + b(t,x) · p`.
    pub fn linear(
        n: usize,
        width: usize,
        sigma: Arc<dyn Fn(f64, &Vector) -> Matrix + Send + Sync>,
        drift: Arc<dyn Fn(f64, &Vector) -> Vector + Send + Sync>,
    ) -> Operator {
        let s: SigmaFn = Arc::new(move |t, x, _p, _g, _b| sigma(t, x));
        let b: DriftFn = Arc::new(move |t, x, _p, _g, _b| drift(t, x));
        Operator {
            kind: OperatorKind::Linear,
            n,
            width,
            gamma_count: 1,
            beta_count: 1,
            sigma: Some(s),
            drift: Some(b),
            scalar: None,
            custom: None,
            gradient_damping: None,
        }
    }

    /// Linear operator with constant coefficients.
    pub fn linear_const(sigma: Matrix, drift: Vector) -> Result<Operator> {
        let n = sigma.nrows();
        if drift.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "drift of length {} for sigma with {} rows",
                drift.len(),
                n
            )));
        }
        let width = sigma.ncols();
        Ok(Operator::linear(
            n,
            width,
            Arc::new(move |_t, _x| sigma.clone()),
            Arc::new(move |_t, _x| drift.clone()),
        ))
    }

    /// Quasilinear operator `tr(σ(t,x,p) σ^T X) + f(t,x,p)` with declared
    /// gradient damping constant `c1`.
    pub fn quasilinear(
        n: usize,
        width: usize,
        sigma: Arc<dyn Fn(f64, &Vector, &Vector) -> Matrix + Send + Sync>,
        scalar: ScalarFn,
        damping: f64,
    ) -> Operator {
        let s: SigmaFn = Arc::new(move |t, x, p, _g, _b| sigma(t, x, p));
        Operator {
            kind: OperatorKind::Quasilinear,
            n,
            width,
            gamma_count: 1,
            beta_count: 1,
            sigma: Some(s),
            drift: None,
            scalar: Some(scalar),
            custom: None,
            gradient_damping: Some(damping),
        }
    }

    /// The built-in damped family `σ(p) = σ0 + σ1 · |p|/(1 + |p|)` acting on
    /// a fixed matrix shape; satisfies the damping bound with `c1 = |σ1|`.
    pub fn quasilinear_damped(
        base: Matrix,
        modulation: Matrix,
        scalar: ScalarFn,
    ) -> Result<Operator> {
        let n = base.nrows();
        if modulation.shape() != base.shape() {
            return Err(Error::DimensionMismatch(
                "modulation matrix shape differs from base".into(),
            ));
        }
        let width = base.ncols();
        let c1 = modulation.norm();
        let sigma = Arc::new(move |_t: f64, _x: &Vector, p: &Vector| {
            let r = p.norm();
            &base + (r / (1.0 + r)) * &modulation
        });
        Ok(Operator::quasilinear(n, width, sigma, scalar, c1))
    }

    /// Infimum over a finite control family of linear operators.
    pub fn hjb(n: usize, width: usize, gamma_count: usize, sigma: SigmaFn, drift: DriftFn) -> Result<Operator> {
        if gamma_count == 0 {
            return Err(Error::EmptyControlSet);
        }
        Ok(Operator {
            kind: OperatorKind::HjbMin,
            n,
            width,
            gamma_count,
            beta_count: 1,
            sigma: Some(sigma),
            drift: Some(drift),
            scalar: None,
            custom: None,
            gradient_damping: None,
        })
    }

    /// Sup-inf over two finite control families.
    pub fn isaacs(
        n: usize,
        width: usize,
        beta_count: usize,
        gamma_count: usize,
        sigma: SigmaFn,
        drift: DriftFn,
    ) -> Result<Operator> {
        if gamma_count == 0 || beta_count == 0 {
            return Err(Error::EmptyControlSet);
        }
        Ok(Operator {
            kind: OperatorKind::Isaacs,
            n,
            width,
            gamma_count,
            beta_count,
            sigma: Some(sigma),
            drift: Some(drift),
            scalar: None,
            custom: None,
            gradient_damping: None,
        })
    }

    /// Free-form operator from a closure.
    pub fn custom(n: usize, f: CustomFn) -> Operator {
        Operator {
            kind: OperatorKind::Custom,
            n,
            width: 0,
            gamma_count: 1,
            beta_count: 1,
            sigma: None,
            drift: None,
            scalar: None,
            custom: Some(f),
            gradient_damping: None,
        }
    }

    /// The zero operator (pure transport once coupled to a driver).
    pub fn zero(n: usize) -> Operator {
        Operator::linear_const(Matrix::zeros(n, 1), Vector::zeros(n)).expect("shapes match")
    }

    fn check_args(&self, x: &Vector, p: &Vector, x_mat: &Matrix) -> Result<()> {
        if x.len() != self.n || p.len() != self.n || x_mat.nrows() != self.n || x_mat.ncols() != self.n
        {
            return Err(Error::DimensionMismatch(format!(
                "operator on R^{} got x:{}, p:{}, X:{}x{}",
                self.n,
                x.len(),
                p.len(),
                x_mat.nrows(),
                x_mat.ncols()
            )));
        }
        Ok(())
    }

    /// Value of one control pair (valid for coefficient-based kinds).
    fn control_value(
        &self,
        t: f64,
        x: &Vector,
        p: &Vector,
        x_mat: &Matrix,
        gamma: usize,
        beta: usize,
    ) -> f64 {
        let mut val = 0.0;
        if let Some(s) = &self.sigma {
            let sig = s(t, x, p, gamma, beta);
            val += trace_quadratic(&sig, x_mat);
        }
        if let Some(b) = &self.drift {
            val += b(t, x, p, gamma, beta).dot(p);
        }
        if let Some(f) = &self.scalar {
            val += f(t, x, p);
        }
        val
    }
}

/// Evaluate `F(t, x, p, X)`; `X` is used as given (callers pass symmetric
/// matrices).
pub fn eval_operator(op: &Operator, t: f64, x: &Vector, p: &Vector, x_mat: &Matrix) -> Result<f64> {
    op.check_args(x, p, x_mat)?;
    match op.kind {
        OperatorKind::Custom => {
            let f = op.custom.as_ref().expect("custom operator has a closure");
            Ok(f(t, x, p, x_mat))
        }
        OperatorKind::Linear | OperatorKind::Quasilinear => {
            Ok(op.control_value(t, x, p, x_mat, 0, 0))
        }
        OperatorKind::HjbMin => {
            if op.gamma_count == 0 {
                return Err(Error::EmptyControlSet);
            }
            let mut best = f64::INFINITY;
            for g in 0..op.gamma_count {
                best = best.min(op.control_value(t, x, p, x_mat, g, 0));
            }
            Ok(best)
        }
        OperatorKind::Isaacs => {
            if op.gamma_count == 0 || op.beta_count == 0 {
                return Err(Error::EmptyControlSet);
            }
            let mut outer = f64::NEG_INFINITY;
            for b in 0..op.beta_count {
                let mut inner = f64::INFINITY;
                for g in 0..op.gamma_count {
                    inner = inner.min(op.control_value(t, x, p, x_mat, g, b));
                }
                outer = outer.max(inner);
            }
            Ok(outer)
        }
    }
}

// ---------------------------------------------------------------------------
// Flow conjugation
// ---------------------------------------------------------------------------

/// `F` conjugated through a solved flow.
#[derive(Clone)]
pub struct TransformedOperator {
    pub base: Operator,
    pub flow: Arc<FlowSolution>,
}

/// Finite-difference-ready coefficients of one control pair at one `(t, x)`:
/// `value = tr(diffusion · X) + drift · p + constant` in the transformed
/// variables.
#[derive(Debug, Clone)]
pub struct ControlCoefficients {
    /// Effective diffusion `(Jσ)(Jσ)^T` — positive semidefinite `n × n`.
    pub diffusion: Matrix,
    /// Effective drift `J b + c`, `c_k = tr(σσ^T H^k)`.
    pub drift: Vector,
    /// Zero-order term (quasilinear scalar part).
    pub constant: f64,
}

/// Coefficients for every control pair, outer index β, inner index γ.
#[derive(Debug, Clone)]
pub struct SchemeCoefficients {
    pub per_control: Vec<Vec<ControlCoefficients>>,
}

pub fn transform_operator(op: &Operator, flow: Arc<FlowSolution>) -> Result<TransformedOperator> {
    if flow.dim() != op.n {
        return Err(Error::DimensionMismatch(format!(
            "flow on R^{} for an operator on R^{}",
            flow.dim(),
            op.n
        )));
    }
    Ok(TransformedOperator { base: op.clone(), flow })
}

impl TransformedOperator {
    pub fn n(&self) -> usize {
        self.base.n
    }

    pub fn horizon(&self) -> f64 {
        self.flow.horizon()
    }

    /// Pointwise evaluation of the conjugated operator.
    pub fn eval(&self, t: f64, x: &Vector, p: &Vector, x_mat: &Matrix) -> Result<f64> {
        self.base.check_args(x, p, x_mat)?;
        let state = self.flow.state(t, x)?;
        let j = &state.jac_inv;
        let p_new = j.transpose() * p;
        let mut x_new = j.transpose() * x_mat * j;
        for (k, hk) in state.hess_inv.iter().enumerate() {
            if p[k] != 0.0 {
                x_new += p[k] * hk;
            }
        }
        eval_operator(&self.base, t, &state.point, &p_new, &x_new)
    }

    /// Scheme coefficients at `(t, x)`. For quasilinear operators the frozen
    /// gradient `p_hint` (in the original variables) fixes the σ argument;
    /// other kinds ignore it.
    pub fn scheme_coefficients(
        &self,
        t: f64,
        x: &Vector,
        p_hint: Option<&Vector>,
    ) -> Result<SchemeCoefficients> {
        match self.base.kind {
            OperatorKind::Custom => Err(Error::SchemeUnsupported(self.base.kind.name())),
            _ => {
                let state = self.flow.state(t, x)?;
                let j = &state.jac_inv;
                let zero = Vector::zeros(self.base.n);
                let p_orig = p_hint.unwrap_or(&zero);
                let p_transformed = j.transpose() * p_orig;
                let sigma = self
                    .base
                    .sigma
                    .as_ref()
                    .expect("coefficient operators carry sigma");
                let mut per_control = Vec::with_capacity(self.base.beta_count);
                for beta in 0..self.base.beta_count {
                    let mut row = Vec::with_capacity(self.base.gamma_count);
                    for gamma in 0..self.base.gamma_count {
                        let sig = sigma(t, &state.point, &p_transformed, gamma, beta);
                        let jsig = j * &sig;
                        let diffusion = &jsig * jsig.transpose();
                        let mut drift = Vector::zeros(self.base.n);
                        for (k, hk) in state.hess_inv.iter().enumerate() {
                            drift[k] = trace_quadratic(&sig, hk);
                        }
                        if let Some(b) = &self.base.drift {
                            drift += j * b(t, &state.point, &p_transformed, gamma, beta);
                        }
                        let constant = match &self.base.scalar {
                            Some(f) => f(t, &state.point, &p_transformed),
                            None => 0.0,
                        };
                        row.push(ControlCoefficients {
                            diffusion,
                            drift,
                            constant,
                        });
                    }
                    per_control.push(row);
                }
                Ok(SchemeCoefficients { per_control })
            }
        }
    }

    /// For linear operators: closed-form coefficients of the transformed
    /// operator, `σ^φ(t, x) = J σ(t, φ_t(x))` and
    /// `b^φ(t, x) = J b + tr(σσ^T H^·)`. The transformed operator is again
    /// linear in `(p, X)` with these coefficients.
    pub fn linear_closed_form(&self, t: f64, x: &Vector) -> Result<(Matrix, Vector)> {
        if self.base.kind != OperatorKind::Linear {
            return Err(Error::invalid(
                crate::Stage::Operators,
                format!(
                    "closed-form coefficients exist for linear operators, not {}",
                    self.base.kind.name()
                ),
            ));
        }
        let coeffs = self.scheme_coefficients(t, x, None)?;
        let state = self.flow.state(t, x)?;
        let sigma = self.base.sigma.as_ref().unwrap();
        let sig = sigma(t, &state.point, &Vector::zeros(self.base.n), 0, 0);
        let jsig = &state.jac_inv * sig;
        Ok((jsig, coeffs.per_control[0][0].drift.clone()))
    }
}

// ---------------------------------------------------------------------------
// Structural checks
// ---------------------------------------------------------------------------

/// Anything that can be evaluated as `F(t, x, p, X)`.
pub trait PointwiseOperator {
    fn dim(&self) -> usize;
    fn value(&self, t: f64, x: &Vector, p: &Vector, x_mat: &Matrix) -> Result<f64>;
}

impl PointwiseOperator for Operator {
    fn dim(&self) -> usize {
        self.n
    }
    fn value(&self, t: f64, x: &Vector, p: &Vector, x_mat: &Matrix) -> Result<f64> {
        eval_operator(self, t, x, p, x_mat)
    }
}

impl PointwiseOperator for TransformedOperator {
    fn dim(&self) -> usize {
        self.base.n
    }
    fn value(&self, t: f64, x: &Vector, p: &Vector, x_mat: &Matrix) -> Result<f64> {
        self.eval(t, x, p, x_mat)
    }
}

/// Sampling ranges for the structural checks.
#[derive(Debug, Clone)]
pub struct SamplerConfig {
    pub samples: usize,
    pub seed: u64,
    pub time_range: (f64, f64),
    pub x_scale: f64,
    pub p_scale: f64,
    pub mat_scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            samples: 1000,
            seed: 0,
            time_range: (0.0, 1.0),
            x_scale: 1.0,
            p_scale: 1.0,
            mat_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EllipticityReport {
    pub samples: usize,
    pub violations: usize,
    /// Most negative observed value of `F(X + B) - F(X)` over PSD bumps `B`
    /// (should be ≥ 0 up to round-off for degenerate elliptic operators).
    pub worst_gap: f64,
    /// A witness tuple for the worst violation, flattened for reporting.
    pub worst_case: Option<ViolationWitness>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ViolationWitness {
    pub t: f64,
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub gap: f64,
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vector {
    Vector::from_fn(n, |_, _| {
        let g: f64 = StandardNormal.sample(rng);
        scale * g
    })
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        scale * v
    });
    0.5 * (&g + g.transpose())
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| {
        let v: f64 = StandardNormal.sample(rng);
        v
    });
    (scale / n as f64) * (&g * g.transpose())
}

/// Monotonicity of `F` in its matrix argument along random PSD directions:
/// degenerate ellipticity demands `F(X + B) ≥ F(X)` for `B ⪰ 0`.
pub fn check_ellipticity(op: &dyn PointwiseOperator, cfg: &SamplerConfig) -> Result<EllipticityReport> {
    let n = op.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut violations = 0usize;
    let mut worst_gap = f64::INFINITY;
    let mut worst_case = None;
    let tol = 1e-9;
    for _ in 0..cfg.samples {
        let t = cfg.time_range.0 + rng.random::<f64>() * (cfg.time_range.1 - cfg.time_range.0);
        let x = random_vector(&mut rng, n, cfg.x_scale);
        let p = random_vector(&mut rng, n, cfg.p_scale);
        let base = random_symmetric(&mut rng, n, cfg.mat_scale);
        let bump = random_psd(&mut rng, n, cfg.mat_scale);
        let lo = op.value(t, &x, &p, &base)?;
        let hi = op.value(t, &x, &p, &(&base + &bump))?;
        let gap = hi - lo;
        if gap < worst_gap {
            worst_gap = gap;
            worst_case = Some(ViolationWitness {
                t,
                x: x.iter().copied().collect(),
                p: p.iter().copied().collect(),
                gap,
            });
        }
        if gap < -tol {
            violations += 1;
        }
    }
    Ok(EllipticityReport {
        samples: cfg.samples,
        violations,
        worst_gap,
        worst_case: if worst_gap < -tol { worst_case } else { None },
    })
}

/// Eigenvalue certificate for the doubled-variable matrix inequality at
/// parameter `alpha`:
///
/// `-3α I ⪯ blockdiag(X, -Y) ⪯ 3α [[I, -I], [-I, I]]`.
pub fn matrix_pair_feasible(x: &Matrix, y: &Matrix, alpha: f64) -> bool {
    let n = x.nrows();
    let mut lower = Matrix::zeros(2 * n, 2 * n);
    let mut upper = Matrix::zeros(2 * n, 2 * n);
    for r in 0..n {
        for c in 0..n {
            lower[(r, c)] = x[(r, c)];
            lower[(n + r, n + c)] = -y[(r, c)];
            upper[(r, c)] = 3.0 * alpha * (if r == c { 1.0 } else { 0.0 }) - x[(r, c)];
            upper[(n + r, n + c)] = 3.0 * alpha * (if r == c { 1.0 } else { 0.0 }) + y[(r, c)];
            upper[(r, n + c)] = -3.0 * alpha * (if r == c { 1.0 } else { 0.0 });
            upper[(n + r, c)] = -3.0 * alpha * (if r == c { 1.0 } else { 0.0 });
        }
    }
    for r in 0..2 * n {
        lower[(r, r)] += 3.0 * alpha;
    }
    let tol = -1e-9 * alpha.abs().max(1.0);
    let min_eig = |m: &Matrix| -> f64 {
        SymmetricEigen::new(m.clone())
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    };
    min_eig(&lower) >= tol && min_eig(&upper) >= tol
}

/// Closed-form feasibility for scalar pairs `(x, y)` (n = 1): the constraint
/// reduces to `x ≥ -3α`, `y ≤ 3α`, `(3α - x)(3α + y) ≥ 9α²`.
pub fn scalar_pair_feasible(x: f64, y: f64, alpha: f64) -> bool {
    let a3 = 3.0 * alpha;
    x >= -a3 && y <= a3 && (a3 - x) * (a3 + y) >= 9.0 * alpha * alpha
}

#[derive(Debug, Clone, Serialize)]
pub struct ModulusBin {
    pub r_upper: f64,
    pub max_excess: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModulusAlphaReport {
    pub alpha: f64,
    pub accepted: usize,
    pub rejection_rate_warning: bool,
    /// Envelope of `F(t, x, α(x - x̃), X) - F(t, x̃, α(x - x̃), Y)` binned by
    /// `r = α|x - x̃|² + |x - x̃|`.
    pub bins: Vec<ModulusBin>,
    /// Whether the small-r envelope is small compared to the large-r one
    /// (the qualitative signature of a comparison modulus θ(r) → 0).
    pub vanishes_at_zero: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModulusReport {
    pub per_alpha: Vec<ModulusAlphaReport>,
}

/// Empirical probe of the comparison modulus: sample doubled-variable tuples
/// `(t, x, x̃, X, Y)` with `(X, Y)` certified against the matrix inequality,
/// and record the excess `F(t, x, α(x-x̃), X) - F(t, x̃, α(x-x̃), Y)` as a
/// function of `r = α|x-x̃|² + |x-x̃|`. Every recorded pair is verified by
/// the eigenvalue certificate, including the constructively feasible ones.
pub fn check_modulus(
    op: &dyn PointwiseOperator,
    alphas: &[f64],
    cfg: &SamplerConfig,
) -> Result<ModulusReport> {
    let n = op.dim();
    let mut per_alpha = Vec::with_capacity(alphas.len());
    for (ai, &alpha) in alphas.iter().enumerate() {
        if alpha <= 0.0 {
            return Err(Error::invalid(
                crate::Stage::Operators,
                format!("modulus check needs positive alpha, got {alpha}"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(ai as u64));
        let mut records: Vec<(f64, f64)> = Vec::with_capacity(cfg.samples);
        let mut rejected = 0usize;
        let mut accepted_random = 0usize;

        // Scalar-pair region sampler (always feasible, conjugated by a
        // shared rotation for n > 1): x in [-3α, 1.5α], y ≥ y_min(x).
        let scalar_pair = |rng: &mut ChaCha8Rng| -> (f64, f64) {
            let a3 = 3.0 * alpha;
            let x = -a3 + rng.random::<f64>() * (1.5 * alpha + a3);
            let y_min = 9.0 * alpha * alpha / (a3 - x) - a3;
            let y = y_min + rng.random::<f64>() * (a3 - y_min);
            (x, y)
        };

        while records.len() < cfg.samples {
            let idx = records.len();
            let (x_mat, y_mat) = match idx % 4 {
                0 => {
                    // Identity multiples.
                    let (xs, ys) = scalar_pair(&mut rng);
                    (
                        Matrix::identity(n, n) * xs,
                        Matrix::identity(n, n) * ys,
                    )
                }
                1 => {
                    // Trivial pair.
                    (Matrix::zeros(n, n), Matrix::zeros(n, n))
                }
                2 => {
                    // Rotated diagonal pairs from the scalar region.
                    let g = Matrix::from_fn(n, n, |_, _| {
                        let v: f64 = StandardNormal.sample(&mut rng);
                        v
                    });
                    let q = g.qr().q();
                    let mut dx = Matrix::zeros(n, n);
                    let mut dy = Matrix::zeros(n, n);
                    for k in 0..n {
                        let (xs, ys) = scalar_pair(&mut rng);
                        dx[(k, k)] = xs;
                        dy[(k, k)] = ys;
                    }
                    (&q * dx * q.transpose(), &q * dy * q.transpose())
                }
                _ => {
                    // Rejection sampling of unstructured symmetric pairs.
                    let mut found = None;
                    for _ in 0..200 {
                        let xc = random_symmetric(&mut rng, n, alpha);
                        let yc = random_symmetric(&mut rng, n, alpha);
                        if matrix_pair_feasible(&xc, &yc, alpha) {
                            found = Some((xc, yc));
                            accepted_random += 1;
                            break;
                        }
                        rejected += 1;
                    }
                    match found {
                        Some(pair) => pair,
                        None => {
                            let (xs, ys) = scalar_pair(&mut rng);
                            (Matrix::identity(n, n) * xs, Matrix::identity(n, n) * ys)
                        }
                    }
                }
            };
            // Certify every recorded pair, constructive ones included.
            if !matrix_pair_feasible(&x_mat, &y_mat, alpha) {
                rejected += 1;
                continue;
            }
            let t = cfg.time_range.0 + rng.random::<f64>() * (cfg.time_range.1 - cfg.time_range.0);
            let x = random_vector(&mut rng, n, cfg.x_scale);
            let shrink: f64 = rng.random();
            let dx = random_vector(&mut rng, n, cfg.x_scale * shrink);
            let x_tilde = &x - &dx;
            let p = alpha * &dx;
            let excess = op.value(t, &x, &p, &x_mat)? - op.value(t, &x_tilde, &p, &y_mat)?;
            let r = alpha * dx.norm_squared() + dx.norm();
            records.push((r, excess));
        }

        let attempts = accepted_random + rejected;
        let rejection_rate_warning =
            attempts > 0 && (accepted_random as f64) < 1e-4 * attempts as f64;

        // Decile envelope in r.
        records.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        let bins_count = 10usize.min(records.len().max(1));
        let mut bins = Vec::with_capacity(bins_count);
        let chunk = records.len().div_ceil(bins_count);
        for c in records.chunks(chunk) {
            let r_upper = c.last().unwrap().0;
            let max_excess = c.iter().map(|&(_, e)| e).fold(f64::NEG_INFINITY, f64::max);
            bins.push(ModulusBin {
                r_upper,
                max_excess,
                samples: c.len(),
            });
        }
        let first = bins.first().map(|b| b.max_excess).unwrap_or(0.0);
        let last = bins.iter().map(|b| b.max_excess).fold(f64::NEG_INFINITY, f64::max);
        let vanishes_at_zero = first <= 0.15 * last.max(0.0) + 1e-9;
        per_alpha.push(ModulusAlphaReport {
            alpha,
            accepted: records.len(),
            rejection_rate_warning,
            bins,
            vanishes_at_zero,
        });
    }
    Ok(ModulusReport { per_alpha })
}

// ---------------------------------------------------------------------------
