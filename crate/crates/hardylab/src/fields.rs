//! Vector-field systems sigma and the induced horizontal calculus.
//!
//! A system is an l x N matrix field sigma(x); the horizontal gradient is
//! sigma * grad, the horizontal divergence of an l-vector F is
//! sum_ij sigma_ij d_j F_i + sum_i (sum_j d_j sigma_ij) F_i, and
//! L = div_L grad_L. Built-ins: Euclidean, Grushin with split (m, k) and
//! exponent gamma >= 0, and the Greiner family with gamma >= 1 on R^(2n+1).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("singular point for {what} at {point:?}")]
    SingularPoint { what: String, point: Vec<f64> },
}

/// Region outside which a scalar field is exactly zero. `All` marks fields
/// with unbounded support (weights, powers of |x|).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Support {
    All,
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Annulus { center: Vec<f64>, r_in: f64, r_out: f64 },
}

impl Support {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Support::All => true,
            Support::Box { lo, hi } => {
                x.iter().zip(lo).all(|(v, l)| v >= l) && x.iter().zip(hi).all(|(v, h)| v <= h)
            }
            Support::Annulus { center, r_in, r_out } => {
                let r2: f64 = x.iter().zip(center).map(|(v, c)| (v - c) * (v - c)).sum();
                r2 >= r_in * r_in && r2 <= r_out * r_out
            }
        }
    }
}

fn point_scale(x: &[f64]) -> f64 {
    x.iter().map(|a| a * a).sum::<f64>().sqrt().max(1.0)
}

const GRAD_STEP_REL: f64 = 1e-5;
const HESS_STEP_REL: f64 = 1e-4;

type EvalFn = Arc<dyn Fn(&[f64]) -> Complex64 + Send + Sync>;
type VecFn = Arc<dyn Fn(&[f64], &mut [Complex64]) + Send + Sync>;

/// Complex-valued scalar field with optional analytic Euclidean gradient and
/// Hessian (row-major). Missing derivatives fall back to central differences
/// of `eval`. Evaluation is exactly zero outside `support`.
#[derive(Clone)]
pub struct ScalarField {
    pub dim: usize,
    pub real_valued: bool,
    pub support: Support,
    pub smoothness_note: String,
    eval: EvalFn,
    grad: Option<VecFn>,
    hess: Option<VecFn>,
}

impl ScalarField {
    pub fn new<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> Complex64 + Send + Sync + 'static,
    {
        ScalarField {
            dim,
            real_valued: false,
            support: Support::All,
            smoothness_note: String::new(),
            eval: Arc::new(f),
            grad: None,
            hess: None,
        }
    }

    pub fn from_real<F>(dim: usize, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let mut s = ScalarField::new(dim, move |x| Complex64::new(f(x), 0.0));
        s.real_valued = true;
        s
    }

    pub fn constant(dim: usize, value: Complex64) -> Self {
        let mut s = ScalarField::new(dim, move |_| value);
        s.real_valued = value.im == 0.0;
        s.grad = Some(Arc::new(|_: &[f64], out: &mut [Complex64]| out.fill(Complex64::ZERO)));
        s.hess = Some(Arc::new(|_: &[f64], out: &mut [Complex64]| out.fill(Complex64::ZERO)));
        s.smoothness_note = "constant".into();
        s
    }

    pub fn with_gradient<F>(mut self, g: F) -> Self
    where
        F: Fn(&[f64], &mut [Complex64]) + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(g));
        self
    }

    pub fn with_hessian<F>(mut self, h: F) -> Self
    where
        F: Fn(&[f64], &mut [Complex64]) + Send + Sync + 'static,
    {
        self.hess = Some(Arc::new(h));
        self
    }

    pub fn with_support(mut self, support: Support) -> Self {
        self.support = support;
        self
    }

    pub fn with_note(mut self, note: &str) -> Self {
        self.smoothness_note = note.into();
        self
    }

    pub fn mark_real(mut self) -> Self {
        self.real_valued = true;
        self
    }

    /// The field multiplied by a complex constant, keeping analytic
    /// derivatives and support.
    pub fn scaled(&self, factor: Complex64) -> ScalarField {
        let mut out = self.clone();
        let f = self.eval.clone();
        out.eval = Arc::new(move |x: &[f64]| factor * f(x));
        out.grad = self.grad.as_ref().map(|g| {
            let g = g.clone();
            let h: VecFn = Arc::new(move |x: &[f64], out: &mut [Complex64]| {
                g(x, out);
                for o in out.iter_mut() {
                    *o *= factor;
                }
            });
            h
        });
        out.hess = self.hess.as_ref().map(|g| {
            let g = g.clone();
            let h: VecFn = Arc::new(move |x: &[f64], out: &mut [Complex64]| {
                g(x, out);
                for o in out.iter_mut() {
                    *o *= factor;
                }
            });
            h
        });
        out.real_valued = self.real_valued && factor.im == 0.0;
        out
    }

    pub fn has_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn has_hessian(&self) -> bool {
        self.hess.is_some()
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        debug_assert_eq!(x.len(), self.dim);
        if !self.support.contains(x) {
            return Complex64::ZERO;
        }
        (self.eval)(x)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [Complex64]) {
        assert_eq!(out.len(), self.dim);
        if !self.support.contains(x) {
            out.fill(Complex64::ZERO);
            return;
        }
        match &self.grad {
            Some(g) => g(x, out),
            None => self.gradient_fd_into(x, GRAD_STEP_REL * point_scale(x), out),
        }
    }

    pub fn gradient_fd_into(&self, x: &[f64], h: f64, out: &mut [Complex64]) {
        assert!(h > 0.0);
        let mut y = x.to_vec();
        for j in 0..self.dim {
            y[j] = x[j] + h;
            let fp = self.eval(&y);
            y[j] = x[j] - h;
            let fm = self.eval(&y);
            y[j] = x[j];
            out[j] = (fp - fm) / (2.0 * h);
        }
    }

    pub fn hessian_into(&self, x: &[f64], out: &mut [Complex64]) {
        assert_eq!(out.len(), self.dim * self.dim);
        if !self.support.contains(x) {
            out.fill(Complex64::ZERO);
            return;
        }
        match &self.hess {
            Some(hf) => hf(x, out),
            None => self.hessian_fd_into(x, HESS_STEP_REL * point_scale(x), out),
        }
    }

    pub fn hessian_fd_into(&self, x: &[f64], h: f64, out: &mut [Complex64]) {
        assert!(h > 0.0);
        let n = self.dim;
        let f0 = self.eval(x);
        let mut y = x.to_vec();
        for a in 0..n {
            y[a] = x[a] + h;
            let fp = self.eval(&y);
            y[a] = x[a] - h;
            let fm = self.eval(&y);
            y[a] = x[a];
            out[a * n + a] = (fp - 2.0 * f0 + fm) / (h * h);
            for b in a + 1..n {
                y[a] = x[a] + h;
                y[b] = x[b] + h;
                let fpp = self.eval(&y);
                y[b] = x[b] - h;
                let fpm = self.eval(&y);
                y[a] = x[a] - h;
                let fmm = self.eval(&y);
                y[b] = x[b] + h;
                let fmp = self.eval(&y);
                y[a] = x[a];
                y[b] = x[b];
                let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
                out[a * n + b] = v;
                out[b * n + a] = v;
            }
        }
    }
}

/// |x|^e with analytic gradient e r^(e-2) x and Hessian
/// e r^(e-2) delta_ab + e(e-2) r^(e-4) x_a x_b. Singular at the origin for
/// e < 2; callers keep their domains away from it.
pub fn radial_power_field(dim: usize, exponent: f64) -> ScalarField {
    let e = exponent;
    ScalarField::from_real(dim, move |x: &[f64]| {
        x.iter().map(|a| a * a).sum::<f64>().sqrt().powf(e)
    })
    .with_gradient(move |x: &[f64], out: &mut [Complex64]| {
        let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let c = e * r.powf(e - 2.0);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = Complex64::new(c * xi, 0.0);
        }
    })
    .with_hessian(move |x: &[f64], out: &mut [Complex64]| {
        let n = x.len();
        let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let c1 = e * r.powf(e - 2.0);
        let c2 = e * (e - 2.0) * r.powf(e - 4.0);
        for a in 0..n {
            for b in 0..n {
                let v = c2 * x[a] * x[b] + if a == b { c1 } else { 0.0 };
                out[a * n + b] = Complex64::new(v, 0.0);
            }
        }
    })
    .with_note("smooth away from the origin")
}

/// Complex l-vector field with optional analytic Jacobian
/// (row-major, entry i*dim_n + j holds d_j F_i). Without one, the Jacobian is
/// obtained by central differences with step `fd_step` (or a scale-relative
/// default).
#[derive(Clone)]
pub struct LVectorField {
    pub dim_n: usize,
    pub dim_l: usize,
    eval: VecFn,
    jacobian: Option<VecFn>,
    pub fd_step: Option<f64>,
}

impl LVectorField {
    pub fn new<F>(dim_n: usize, dim_l: usize, eval: F) -> Self
    where
        F: Fn(&[f64], &mut [Complex64]) + Send + Sync + 'static,
    {
        LVectorField { dim_n, dim_l, eval: Arc::new(eval), jacobian: None, fd_step: None }
    }

    pub fn with_jacobian<F>(mut self, jac: F) -> Self
    where
        F: Fn(&[f64], &mut [Complex64]) + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jac));
        self
    }

    pub fn with_fd_step(mut self, h: f64) -> Self {
        self.fd_step = Some(h);
        self
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [Complex64]) {
        assert_eq!(out.len(), self.dim_l);
        (self.eval)(x, out)
    }

    pub fn jacobian_into(&self, x: &[f64], out: &mut [Complex64]) {
        assert_eq!(out.len(), self.dim_l * self.dim_n);
        if let Some(j) = &self.jacobian {
            j(x, out);
            return;
        }
        let h = self.fd_step.unwrap_or(GRAD_STEP_REL * point_scale(x));
        let mut y = x.to_vec();
        let mut fp = vec![Complex64::ZERO; self.dim_l];
        let mut fm = vec![Complex64::ZERO; self.dim_l];
        for j in 0..self.dim_n {
            y[j] = x[j] + h;
            (self.eval)(&y, &mut fp);
            y[j] = x[j] - h;
            (self.eval)(&y, &mut fm);
            y[j] = x[j];
            for i in 0..self.dim_l {
                out[i * self.dim_n + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
    }
}

/// Real l-vector field (a choice of direction Z in the directional
/// inequalities).
#[derive(Clone)]
pub struct DirectionField {
    pub dim_n: usize,
    pub dim_l: usize,
    eval: Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>,
}

impl DirectionField {
    pub fn new<F>(dim_n: usize, dim_l: usize, eval: F) -> Self
    where
        F: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        DirectionField { dim_n, dim_l, eval: Arc::new(eval) }
    }

    /// Z = x/|x| for systems with l = N (the radial direction).
    pub fn radial(dim: usize) -> Self {
        DirectionField::new(dim, dim, |x, out| {
            let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            for (o, xi) in out.iter_mut().zip(x) {
                *o = xi / r;
            }
        })
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(out.len(), self.dim_l);
        (self.eval)(x, out);
    }
}

/// Which family a system belongs to, with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemKind {
    Euclidean { dim: usize },
    /// sigma = diag(I_m, |x'|^gamma I_k) with x' the first m coordinates.
    Grushin { m: usize, k: usize, gamma: f64 },
    /// On R^(2n+1) with coordinates (x, y, t):
    /// X_i = d_{x_i} + 2 gamma y_i |z|^(2gamma-2) d_t,
    /// Y_i = d_{y_i} - 2 gamma x_i |z|^(2gamma-2) d_t, z = (x, y).
    Greiner { n: usize, gamma: f64 },
    Custom { name: String },
}

type MatFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Clone)]
pub struct VectorFieldSystem {
    pub kind: SystemKind,
    pub dim_n: usize,
    pub dim_l: usize,
    sigma: MatFn,
    sigma_div: MatFn,
}

/// Builds one of the built-in systems. Custom systems are registered through
/// `VectorFieldSystem::custom` instead.
pub fn make_system(kind: SystemKind) -> Result<VectorFieldSystem, FieldError> {
    match kind {
        SystemKind::Euclidean { dim } => {
            if dim == 0 {
                return Err(FieldError::InvalidParameter("euclidean needs dim >= 1".into()));
            }
            let n = dim;
            Ok(VectorFieldSystem {
                kind: SystemKind::Euclidean { dim },
                dim_n: n,
                dim_l: n,
                sigma: Arc::new(move |_x, out| {
                    out.fill(0.0);
                    for i in 0..n {
                        out[i * n + i] = 1.0;
                    }
                }),
                sigma_div: Arc::new(|_x, out| out.fill(0.0)),
            })
        }
        SystemKind::Grushin { m, k, gamma } => {
            if m == 0 || k == 0 || !(gamma >= 0.0) {
                return Err(FieldError::InvalidParameter(format!(
                    "grushin needs m >= 1, k >= 1, gamma >= 0; got ({m}, {k}, {gamma})"
                )));
            }
            let n = m + k;
            Ok(VectorFieldSystem {
                kind: SystemKind::Grushin { m, k, gamma },
                dim_n: n,
                dim_l: n,
                sigma: Arc::new(move |x, out| {
                    out.fill(0.0);
                    let w = x[..m].iter().map(|a| a * a).sum::<f64>().sqrt().powf(gamma);
                    for i in 0..m {
                        out[i * n + i] = 1.0;
                    }
                    for i in m..n {
                        out[i * n + i] = w;
                    }
                }),
                // d_{y_a} |x'|^gamma = 0: the weight depends only on x'.
                sigma_div: Arc::new(|_x, out| out.fill(0.0)),
            })
        }
        SystemKind::Greiner { n: half, gamma } => {
            if half == 0 || !(gamma >= 1.0) {
                return Err(FieldError::InvalidParameter(format!(
                    "greiner needs n >= 1, gamma >= 1; got ({half}, {gamma})"
                )));
            }
            let n = 2 * half + 1;
            let l = 2 * half;
            Ok(VectorFieldSystem {
                kind: SystemKind::Greiner { n: half, gamma },
                dim_n: n,
                dim_l: l,
                sigma: Arc::new(move |x, out| {
                    out.fill(0.0);
                    let z2: f64 = x[..l].iter().map(|a| a * a).sum();
                    let w = 2.0 * gamma * z2.sqrt().powf(2.0 * gamma - 2.0);
                    for i in 0..half {
                        out[i * n + i] = 1.0;
                        out[i * n + (n - 1)] = w * x[half + i];
                    }
                    for i in 0..half {
                        let row = half + i;
                        out[row * n + half + i] = 1.0;
                        out[row * n + (n - 1)] = -w * x[i];
                    }
                }),
                // The only varying entries sit in the d_t column and do not
                // depend on t, so the row divergences vanish.
                sigma_div: Arc::new(|_x, out| out.fill(0.0)),
            })
        }
        SystemKind::Custom { name } => Err(FieldError::InvalidParameter(format!(
            "custom system '{name}' must be registered via VectorFieldSystem::custom"
        ))),
    }
}

impl VectorFieldSystem {
    pub fn custom<S, D>(name: &str, dim_n: usize, dim_l: usize, sigma: S, sigma_div: D) -> Self
    where
        S: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
        D: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        VectorFieldSystem {
            kind: SystemKind::Custom { name: name.into() },
            dim_n,
            dim_l,
            sigma: Arc::new(sigma),
            sigma_div: Arc::new(sigma_div),
        }
    }

    /// Writes sigma(x), row-major l x N.
    pub fn sigma_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.dim_n);
        assert_eq!(out.len(), self.dim_l * self.dim_n);
        (self.sigma)(x, out);
    }

    /// Writes the l-vector of row divergences sum_j d_j sigma_ij.
    pub fn sigma_div_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(out.len(), self.dim_l);
        (self.sigma_div)(x, out);
    }

    /// Writes A = sigma^T sigma (N x N), the matrix of the pure second-order
    /// part of L.
    pub fn a_matrix_into(&self, x: &[f64], out: &mut [f64]) {
        let (n, l) = (self.dim_n, self.dim_l);
        assert_eq!(out.len(), n * n);
        let mut s = vec![0.0; l * n];
        self.sigma_into(x, &mut s);
        for j in 0..n {
            for k in j..n {
                let mut acc = 0.0;
                for i in 0..l {
                    acc += s[i * n + j] * s[i * n + k];
                }
                out[j * n + k] = acc;
                out[k * n + j] = acc;
            }
        }
    }

    /// grad_L u = sigma(x) grad u(x), an l-vector.
    pub fn horizontal_gradient(&self, field: &ScalarField, x: &[f64], out: &mut [Complex64]) {
        assert_eq!(field.dim, self.dim_n);
        assert_eq!(out.len(), self.dim_l);
        let n = self.dim_n;
        let mut g = vec![Complex64::ZERO; n];
        field.gradient_into(x, &mut g);
        let mut s = vec![0.0; self.dim_l * n];
        self.sigma_into(x, &mut s);
        for i in 0..self.dim_l {
            let mut acc = Complex64::ZERO;
            for j in 0..n {
                acc += s[i * n + j] * g[j];
            }
            out[i] = acc;
        }
    }

    /// grad_L |u| = Re(conj(u) grad_L u) / |u|, defined where u does not vanish.
    pub fn gradient_of_modulus(
        &self,
        field: &ScalarField,
        x: &[f64],
        out: &mut [f64],
    ) -> Result<(), FieldError> {
        assert_eq!(out.len(), self.dim_l);
        let u = field.eval(x);
        let nu = u.norm();
        if nu == 0.0 {
            return Err(FieldError::SingularPoint {
                what: "gradient of |u| where u = 0".into(),
                point: x.to_vec(),
            });
        }
        let mut g = vec![Complex64::ZERO; self.dim_l];
        self.horizontal_gradient(field, x, &mut g);
        for (o, gi) in out.iter_mut().zip(&g) {
            *o = (u.conj() * gi).re / nu;
        }
        Ok(())
    }

    /// div_L F = sum_ij sigma_ij d_j F_i + sum_i (sigma_div)_i F_i.
    pub fn horizontal_divergence(&self, f: &LVectorField, x: &[f64]) -> Complex64 {
        assert_eq!(f.dim_n, self.dim_n);
        assert_eq!(f.dim_l, self.dim_l);
        let (n, l) = (self.dim_n, self.dim_l);
        let mut s = vec![0.0; l * n];
        self.sigma_into(x, &mut s);
        let mut jac = vec![Complex64::ZERO; l * n];
        f.jacobian_into(x, &mut jac);
        let mut acc = Complex64::ZERO;
        for i in 0..l {
            for j in 0..n {
                acc += s[i * n + j] * jac[i * n + j];
            }
        }
        let mut sd = vec![0.0; l];
        self.sigma_div_into(x, &mut sd);
        if sd.iter().any(|v| *v != 0.0) {
            let mut fv = vec![Complex64::ZERO; l];
            f.eval_into(x, &mut fv);
            for i in 0..l {
                acc += sd[i] * fv[i];
            }
        }
        acc
    }

    /// L u = div_L grad_L u. For the built-in kinds the first-order terms
    /// sum_ijk sigma_ij (d_j sigma_ik) d_k u cancel identically and the row
    /// divergences vanish, so L is the contraction of A = sigma^T sigma with
    /// the Hessian. Custom systems go through div_L of grad_L with finite
    /// differences.
    pub fn l_apply(&self, field: &ScalarField, x: &[f64]) -> Complex64 {
        match &self.kind {
            SystemKind::Custom { .. } => {
                let sys = self.clone();
                let fld = field.clone();
                let grad_field = LVectorField::new(self.dim_n, self.dim_l, move |y, out| {
                    sys.horizontal_gradient(&fld, y, out)
                })
                .with_fd_step(
                    if field.has_gradient() { GRAD_STEP_REL } else { 1e-3 } * point_scale(x),
                );
                self.horizontal_divergence(&grad_field, x)
            }
            _ => {
                let n = self.dim_n;
                let mut a = vec![0.0; n * n];
                self.a_matrix_into(x, &mut a);
                let mut h = vec![Complex64::ZERO; n * n];
                field.hessian_into(x, &mut h);
                let mut acc = Complex64::ZERO;
                for j in 0..n * n {
                    acc += a[j] * h[j];
                }
                acc
            }
        }
    }

    /// L_p u = -div_L(|grad_L u|^(p-2) grad_L u) for real-valued u.
    /// The flux Jacobian uses central differences with step `h`.
    pub fn lp_apply_with_step(
        &self,
        field: &ScalarField,
        p: f64,
        x: &[f64],
        h: f64,
    ) -> Result<f64, FieldError> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(FieldError::InvalidParameter(format!("p = {p} outside (1, inf)")));
        }
        if !field.real_valued {
            return Err(FieldError::InvalidParameter(
                "lp_apply is defined for real-valued fields".into(),
            ));
        }
        if p == 2.0 {
            return Ok(-self.l_apply(field, x).re);
        }
        let l = self.dim_l;
        let mut g = vec![Complex64::ZERO; l];
        self.horizontal_gradient(field, x, &mut g);
        let gn = g.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if p < 2.0 && gn == 0.0 {
            return Err(FieldError::SingularPoint {
                what: format!("|grad_L u|^(p-2) with p = {p} at a critical point"),
                point: x.to_vec(),
            });
        }
        let sys = self.clone();
        let fld = field.clone();
        let flux = LVectorField::new(self.dim_n, l, move |y, out| {
            sys.horizontal_gradient(&fld, y, out);
            let gn = out.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            // |g|^(p-2) g -> 0 as g -> 0 since p > 1.
            let w = if gn > 0.0 { gn.powf(p - 2.0) } else { 0.0 };
            for o in out.iter_mut() {
                *o *= w;
            }
        })
        .with_fd_step(h);
        Ok(-self.horizontal_divergence(&flux, x).re)
    }

    pub fn lp_apply(&self, field: &ScalarField, p: f64, x: &[f64]) -> Result<f64, FieldError> {
        self.lp_apply_with_step(field, p, x, HESS_STEP_REL * point_scale(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, IntegrationDomain, QuadratureSpec};
    use crate::testfn::{annular_test_field, BumpSpec};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn euclidean_sigma_is_identity() {
        let sys = make_system(SystemKind::Euclidean { dim: 3 }).unwrap();
        let mut s = vec![0.0; 9];
        sys.sigma_into(&[0.4, -1.0, 2.0], &mut s);
        assert_eq!(s, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn grushin_sigma_block_form() {
        let sys = make_system(SystemKind::Grushin { m: 1, k: 1, gamma: 1.0 }).unwrap();
        let mut s = vec![0.0; 4];
        sys.sigma_into(&[2.0, 5.0], &mut s);
        assert_eq!(s, vec![1.0, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn greiner_first_row_coefficients() {
        let sys = make_system(SystemKind::Greiner { n: 1, gamma: 1.0 }).unwrap();
        let mut s = vec![0.0; 6];
        sys.sigma_into(&[1.0, 1.0, 0.0], &mut s);
        assert_eq!(&s[0..3], &[1.0, 0.0, 2.0]);
        assert_eq!(&s[3..6], &[0.0, 1.0, -2.0]);
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(make_system(SystemKind::Greiner { n: 1, gamma: 0.5 }).is_err());
        assert!(make_system(SystemKind::Grushin { m: 0, k: 1, gamma: 1.0 }).is_err());
        assert!(make_system(SystemKind::Grushin { m: 1, k: 1, gamma: -0.5 }).is_err());
        assert!(make_system(SystemKind::Custom { name: "x".into() }).is_err());
    }

    #[test]
    fn horizontal_gradient_examples() {
        let e3 = make_system(SystemKind::Euclidean { dim: 3 }).unwrap();
        let u = ScalarField::from_real(3, |x: &[f64]| x[0]);
        let mut g = vec![Complex64::ZERO; 3];
        e3.horizontal_gradient(&u, &[0.3, 0.9, -2.0], &mut g);
        assert_relative_eq!(g[0].re, 1.0, max_relative = 1e-9);
        assert!(g[1].norm() < 1e-9 && g[2].norm() < 1e-9);

        let gr = make_system(SystemKind::Grushin { m: 1, k: 1, gamma: 1.0 }).unwrap();
        let u = ScalarField::from_real(2, |x: &[f64]| x[1]);
        let mut g = vec![Complex64::ZERO; 2];
        gr.horizontal_gradient(&u, &[3.0, 7.0], &mut g);
        assert!(g[0].norm() < 1e-9);
        assert_relative_eq!(g[1].re, 3.0, max_relative = 1e-9);

        let e2 = make_system(SystemKind::Euclidean { dim: 2 }).unwrap();
        let u = ScalarField::new(2, |x: &[f64]| c(0.0, x[0]).exp());
        let mut g = vec![Complex64::ZERO; 2];
        e2.horizontal_gradient(&u, &[0.0, 0.0], &mut g);
        assert_relative_eq!(g[0].im, 1.0, max_relative = 1e-9);
        assert!(g[0].re.abs() < 1e-9 && g[1].norm() < 1e-9);
    }

    #[test]
    fn horizontal_divergence_examples() {
        let e2 = make_system(SystemKind::Euclidean { dim: 2 }).unwrap();
        let f = LVectorField::new(2, 2, |x, out| {
            out[0] = c(x[0], 0.0);
            out[1] = c(x[1], 0.0);
        });
        let d = e2.horizontal_divergence(&f, &[0.7, -0.4]);
        assert_relative_eq!(d.re, 2.0, max_relative = 1e-9);

        let gr = make_system(SystemKind::Grushin { m: 1, k: 1, gamma: 1.0 }).unwrap();
        let f = LVectorField::new(2, 2, |_x, out| {
            out[0] = Complex64::ZERO;
            out[1] = c(3.25, 0.0);
        });
        let d = gr.horizontal_divergence(&f, &[1.4, 0.3]);
        assert!(d.norm() < 1e-9, "{d}");

        let e3 = make_system(SystemKind::Euclidean { dim: 3 }).unwrap();
        let f = LVectorField::new(3, 3, |x, out| {
            for i in 0..3 {
                out[i] = c(2.0 * x[i], 0.0);
            }
        })
        .with_jacobian(|_x, out| {
            out.fill(Complex64::ZERO);
            for i in 0..3 {
                out[i * 3 + i] = c(2.0, 0.0);
            }
        });
        let d = e3.horizontal_divergence(&f, &[0.5, 0.1, 0.9]);
        assert_relative_eq!(d.re, 6.0, max_relative = 1e-12);
    }

    #[test]
    fn l_apply_euclidean_examples() {
        let e3 = make_system(SystemKind::Euclidean { dim: 3 }).unwrap();
        let u = radial_power_field(3, 2.0);
        let v = e3.l_apply(&u, &[0.2, -0.7, 1.1]);
        assert_relative_eq!(v.re, 6.0, max_relative = 1e-11);

        // |x|^-alpha has Laplacian alpha (alpha - N + 2) |x|^(-alpha - 2).
        let n = 4usize;
        let alpha = 1.3;
        let u = radial_power_field(n, -alpha);
        let x = [0.7, -0.3, 0.4, 0.2];
        let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
        let e4 = make_system(SystemKind::Euclidean { dim: n }).unwrap();
        let v = e4.l_apply(&u, &x);
        let want = alpha * (alpha - n as f64 + 2.0) * r.powf(-alpha - 2.0);
        assert_relative_eq!(v.re, want, max_relative = 1e-11);
        assert!(v.im.abs() < 1e-12);
    }

    #[test]
    fn l_apply_grushin_oracle() {
        let gr = make_system(SystemKind::Grushin { m: 1, k: 1, gamma: 1.0 }).unwrap();
        let u = ScalarField::from_real(2, |x: &[f64]| x[0] * x[0] + x[1] * x[1])
            .with_gradient(|x, out| {
                out[0] = c(2.0 * x[0], 0.0);
                out[1] = c(2.0 * x[1], 0.0);
            })
            .with_hessian(|_x, out| {
                out.fill(Complex64::ZERO);
                out[0] = c(2.0, 0.0);
                out[3] = c(2.0, 0.0);
            });
        for x in [[0.5, 2.0], [1.5, -0.25], [2.0, 0.0]] {
            let v = gr.l_apply(&u, &x);
            assert_relative_eq!(v.re, 2.0 + 2.0 * x[0] * x[0], max_relative = 1e-12);
        }
    }

    #[test]
    fn greiner_l_matches_closed_form_and_custom_clone() {
        let gamma = 1.5;
        let sys = make_system(SystemKind::Greiner { n: 1, gamma }).unwrap();
        // Smooth non-radial test function of (x, y, t).
        let u = ScalarField::from_real(3, |v: &[f64]| {
            (v[0] * 1.3).sin() * (v[1] * 0.7).cos() + v[2] * v[2] * v[0] + 0.5 * v[2] * v[1]
        });
        let x = [0.8, -0.6, 0.4];
        let got = sys.l_apply(&u, &x).re;

        // Lu = Delta_{x,y} u + 2 c u_xt + 2 d u_yt + 4 g^2 |z|^(4g-2) u_tt
        // with c = 2 g y |z|^(2g-2), d = -2 g x |z|^(2g-2).
        let z2 = x[0] * x[0] + x[1] * x[1];
        let w = 2.0 * gamma * z2.sqrt().powf(2.0 * gamma - 2.0);
        let (cx, dx) = (w * x[1], -w * x[0]);
        let uxx = -(1.3f64).powi(2) * (x[0] * 1.3).sin() * (x[1] * 0.7).cos();
        let uyy = -(0.7f64).powi(2) * (x[0] * 1.3).sin() * (x[1] * 0.7).cos();
        let uxt = 2.0 * x[2];
        let uyt = 0.5;
        let utt = 2.0 * x[0];
        let want = uxx + uyy
            + 2.0 * cx * uxt
            + 2.0 * dx * uyt
            + 4.0 * gamma * gamma * z2.sqrt().powf(4.0 * gamma - 2.0) * utt;
        assert_relative_eq!(got, want, max_relative = 1e-6);

        // The same sigma registered as a custom system runs through nested
        // differencing and must agree.
        let l = 2;
        let n = 3;
        let custom = VectorFieldSystem::custom(
            "greiner-clone",
            n,
            l,
            move |v, out| {
                out.fill(0.0);
                let z2: f64 = v[0] * v[0] + v[1] * v[1];
                let w = 2.0 * gamma * z2.sqrt().powf(2.0 * gamma - 2.0);
                out[0] = 1.0;
                out[2] = w * v[1];
                out[4] = 1.0;
                out[5] = -w * v[0];
            },
            |_v, out| out.fill(0.0),
        );
        let got_custom = custom.l_apply(&u, &x).re;
        assert_relative_eq!(got_custom, want, max_relative = 1e-4);
    }

    #[test]
    fn grushin_gamma_zero_is_euclidean() {
        let gr = make_system(SystemKind::Grushin { m: 2, k: 1, gamma: 0.0 }).unwrap();
        let eu = make_system(SystemKind::Euclidean { dim: 3 }).unwrap();
        let u = ScalarField::from_real(3, |x: &[f64]| {
            (x[0] * 0.9).sin() * x[1] + x[2] * x[2] * x[0]
        });
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut ga = vec![Complex64::ZERO; 3];
            let mut gb = vec![Complex64::ZERO; 3];
            gr.horizontal_gradient(&u, &x, &mut ga);
            eu.horizontal_gradient(&u, &x, &mut gb);
            assert_eq!(ga, gb);
            assert_eq!(gr.l_apply(&u, &x), eu.l_apply(&u, &x));
        }
    }

    #[test]
    fn builtin_row_divergences_vanish() {
        let systems = [
            make_system(SystemKind::Euclidean { dim: 4 }).unwrap(),
            make_system(SystemKind::Grushin { m: 2, k: 2, gamma: 1.5 }).unwrap(),
            make_system(SystemKind::Greiner { n: 2, gamma: 2.0 }).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for sys in &systems {
            let mut sd = vec![f64::NAN; sys.dim_l];
            let x: Vec<f64> = (0..sys.dim_n).map(|_| rng.gen_range(0.5..2.0)).collect();
            sys.sigma_div_into(&x, &mut sd);
            assert!(sd.iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn lp_apply_reduces_to_l_at_p_two() {
        let sys = make_system(SystemKind::Grushin { m: 1, k: 2, gamma: 2.0 }).unwrap();
        let u = ScalarField::from_real(3, |x: &[f64]| x[0] * x[0] * x[1] + (x[2] * 0.4).cos());
        let x = [1.2, 0.3, -0.8];
        let lp = sys.lp_apply(&u, 2.0, &x).unwrap();
        assert_eq!(lp, -sys.l_apply(&u, &x).re);
    }

    #[test]
    fn lp_apply_radial_oracle() {
        // phi = |x|^(-alpha), alpha = (N - p)/p:
        // L_p phi = alpha^p |x|^(-p) phi^(p-1).
        for (n, p) in [(3usize, 2.5f64), (4, 1.5), (5, 3.0)] {
            let alpha = (n as f64 - p) / p;
            let phi = radial_power_field(n, -alpha);
            let sys = make_system(SystemKind::Euclidean { dim: n }).unwrap();
            let x: Vec<f64> = (0..n).map(|i| 0.4 + 0.2 * i as f64).collect();
            let r = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            let got = sys.lp_apply(&phi, p, &x).unwrap();
            let want = alpha.powf(p) * r.powf(-p) * r.powf(-alpha * (p - 1.0));
            assert_relative_eq!(got, want, max_relative = 2e-6);
        }
    }

    #[test]
    fn lp_apply_linear_field_gives_zero() {
        let sys = make_system(SystemKind::Euclidean { dim: 2 }).unwrap();
        let phi = ScalarField::from_real(2, |x: &[f64]| x[0]);
        let got = sys.lp_apply(&phi, 3.0, &[0.4, -0.9]).unwrap();
        assert!(got.abs() < 1e-8, "{got}");
    }

    #[test]
    fn lp_apply_singular_point_error() {
        // The critical point must be exact for the guard to see it, which
        // the analytic gradient guarantees (finite differences of the same
        // field leave ~1e-16 noise and sail past an == 0 test).
        let sys = make_system(SystemKind::Euclidean { dim: 2 }).unwrap();
        let u = ScalarField::from_real(2, |x: &[f64]| {
            (x[0] - 1.0) * (x[0] - 1.0) + x[1] * x[1]
        })
        .with_gradient(|x: &[f64], out: &mut [Complex64]| {
            out[0] = Complex64::new(2.0 * (x[0] - 1.0), 0.0);
            out[1] = Complex64::new(2.0 * x[1], 0.0);
        });
        let res = sys.lp_apply(&u, 1.5, &[1.0, 0.0]);
        assert!(matches!(res, Err(FieldError::SingularPoint { .. })));
        assert!(sys.lp_apply(&u, 1.5, &[1.3, 0.2]).is_ok());
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        // Second-order convergence of the central difference toward the
        // analytic gradient of the annular bump.
        let spec = BumpSpec {
            dim: 3,
            center: vec![0.2, -0.1, 0.4],
            r_in: 0.3,
            r_out: 1.4,
            ..BumpSpec::example(3)
        };
        let u = annular_test_field(&spec);
        let x = [0.2 + 0.75, -0.1 + 0.2, 0.4 - 0.1];
        let mut ga = vec![Complex64::ZERO; 3];
        u.gradient_into(&x, &mut ga);
        let mut e1 = 0.0f64;
        let mut e2 = 0.0f64;
        for (h, err) in [(1e-3, &mut e1), (5e-4, &mut e2)] {
            let mut gf = vec![Complex64::ZERO; 3];
            u.gradient_fd_into(&x, h, &mut gf);
            *err = ga.iter().zip(&gf).map(|(a, b)| (a - b).norm()).sum();
        }
        let order = (e1 / e2).log2() / (1e-3f64 / 5e-4).log2();
        assert!((1.7..2.3).contains(&order), "order {order}, errors {e1} {e2}");
    }

    #[test]
    fn adjoint_consistency_on_grushin() {
        // int (grad_L u) . F = -int u div_L F for compactly supported u.
        let sys = make_system(SystemKind::Grushin { m: 1, k: 1, gamma: 1.0 }).unwrap();
        let spec = BumpSpec {
            dim: 2,
            center: vec![1.5, 0.0],
            r_in: 0.25,
            r_out: 0.95,
            wave: vec![0.0, 0.0],
            ..BumpSpec::example(2)
        };
        let u = annular_test_field(&spec);
        let f = LVectorField::new(2, 2, |x, out| {
            out[0] = c((x[1] * 1.1).sin() + x[0] * x[0], 0.0);
            out[1] = c((x[0] * 0.8).cos(), 0.0);
        })
        .with_jacobian(|x, out| {
            out[0] = c(2.0 * x[0], 0.0);
            out[1] = c(1.1 * (x[1] * 1.1).cos(), 0.0);
            out[2] = c(-0.8 * (x[0] * 0.8).sin(), 0.0);
            out[3] = Complex64::ZERO;
        });
        let domain = IntegrationDomain::Annulus {
            center: vec![1.5, 0.0],
            r_in: 0.25,
            r_out: 0.95,
        };
        let qspec = QuadratureSpec {
            points_per_axis: 48,
            radial_points: Some(48),
            ..QuadratureSpec::default()
        };
        let sys2 = sys.clone();
        let u2 = u.clone();
        let f2 = f.clone();
        let (lhs, _) = integrate(
            move |x: &[f64]| {
                let mut g = vec![Complex64::ZERO; 2];
                sys2.horizontal_gradient(&u2, x, &mut g);
                let mut fv = vec![Complex64::ZERO; 2];
                f2.eval_into(x, &mut fv);
                g.iter().zip(&fv).map(|(a, b)| (a * b).re).sum()
            },
            &domain,
            &qspec,
        )
        .unwrap();
        let (rhs, _) = integrate(
            move |x: &[f64]| -(u.eval(x) * sys.horizontal_divergence(&f, x)).re,
            &domain,
            &qspec,
        )
        .unwrap();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-7);
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 96, failure_persistence: None, ..ProptestConfig::default() })]

        /// grad_L(f g) = (grad_L f) g + f (grad_L g) at finite-difference accuracy.
        #[test]
        fn product_rule(seed in 0u64..1000, sys_pick in 0usize..3) {
            let sys = match sys_pick {
                0 => make_system(SystemKind::Euclidean { dim: 3 }).unwrap(),
                1 => make_system(SystemKind::Grushin { m: 1, k: 2, gamma: 1.0 }).unwrap(),
                _ => make_system(SystemKind::Greiner { n: 1, gamma: 1.5 }).unwrap(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a1, a2, b1, b2): (f64, f64, f64, f64) = (
                rng.gen_range(0.3..1.2), rng.gen_range(-1.0..1.0),
                rng.gen_range(0.3..1.2), rng.gen_range(-1.0..1.0),
            );
            let f = ScalarField::from_real(3, move |x: &[f64]| (a1 * x[0] + a2 * x[1]).sin() + 0.3 * x[2]);
            let g = ScalarField::from_real(3, move |x: &[f64]| (b1 * x[2]).cos() + b2 * x[0] * x[1]);
            let fc = f.clone();
            let gc = g.clone();
            let fg = ScalarField::from_real(3, move |x: &[f64]| fc.eval(x).re * gc.eval(x).re);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.5..1.5)).collect();
            let l = sys.dim_l;
            let (mut gf, mut gg, mut gfg) = (
                vec![Complex64::ZERO; l], vec![Complex64::ZERO; l], vec![Complex64::ZERO; l],
            );
            sys.horizontal_gradient(&f, &x, &mut gf);
            sys.horizontal_gradient(&g, &x, &mut gg);
            sys.horizontal_gradient(&fg, &x, &mut gfg);
            let fv = f.eval(&x).re;
            let gv = g.eval(&x).re;
            for i in 0..l {
                let want = gf[i].re * gv + fv * gg[i].re;
                prop_assert!((gfg[i].re - want).abs() < 1e-6 * (1.0 + want.abs()),
                    "component {i}: {} vs {want}", gfg[i].re);
            }
        }

        /// |grad_L u| >= |grad_L |u|| wherever u does not vanish.
        #[test]
        fn modulus_gradient_inequality(seed in 0u64..1000) {
            let sys = make_system(SystemKind::Grushin { m: 1, k: 1, gamma: 1.0 }).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (w1, w2): (f64, f64) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let u = ScalarField::new(2, move |x: &[f64]| {
                c((w1 * x[0]).sin() + 1.2, (w2 * x[1]).cos() - 0.4)
            });
            let x: Vec<f64> = (0..2).map(|_| rng.gen_range(0.4..1.6)).collect();
            let mut g = vec![Complex64::ZERO; 2];
            sys.horizontal_gradient(&u, &x, &mut g);
            let full: f64 = g.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            let mut gm = vec![0.0; 2];
            sys.gradient_of_modulus(&u, &x, &mut gm).unwrap();
            let modulus: f64 = gm.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(full >= modulus - 1e-7 * (1.0 + full));
        }
    }
}
