//! Finite-difference differentiation and pointwise strong-form residuals.
//!
//! These checks validate case data before any integral is trusted: the
//! quotient identity behind the second-order theorem, and the weighted
//! p-Laplace / fourth-order equations the weight pairs (V, W, lambda, phi)
//! must satisfy. All stencils are central, O(h^2).

use crate::fields::{DirectionField, LVectorField, ScalarField, SystemKind, VectorFieldSystem};
use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CalcError {
    #[error("phi vanishes at {0:?}")]
    PhiVanishes(Vec<f64>),
    #[error("u vanishes at {0:?} (modulus powers undefined for p < 2)")]
    UVanishes(Vec<f64>),
    #[error("invalid step h = {0}")]
    InvalidStep(f64),
    #[error("derivative order {0} not in {{1, 2}}")]
    InvalidOrder(u8),
    #[error("direction has norm {0}, expected a unit vector")]
    NotUnitDirection(f64),
    #[error("p = {0} outside (1, inf)")]
    InvalidP(f64),
}

/// |t|^(q-1) t written as |t|^q sign(t); q = p - 1 gives |t|^(p-2) t.
pub(crate) fn signed_power(t: f64, q: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t.abs().powf(q) * t.signum()
    }
}

/// Step proportional to the distance from the weight singularity at the
/// origin: the radial weights vary on the scale of |x| itself.
pub fn default_fd_step(x: &[f64]) -> f64 {
    1e-4 * x.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-2)
}

/// Central difference of the given order along a unit direction.
pub fn fd_derivative(
    field: &ScalarField,
    x: &[f64],
    direction: &[f64],
    order: u8,
    h: f64,
) -> Result<Complex64, CalcError> {
    if !(h > 0.0) {
        return Err(CalcError::InvalidStep(h));
    }
    let norm = direction.iter().map(|a| a * a).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(CalcError::NotUnitDirection(norm));
    }
    let shift = |sign: f64| -> Vec<f64> {
        x.iter().zip(direction).map(|(a, d)| a + sign * h * d).collect()
    };
    match order {
        1 => Ok((field.eval(&shift(1.0)) - field.eval(&shift(-1.0))) / (2.0 * h)),
        2 => Ok((field.eval(&shift(1.0)) - 2.0 * field.eval(x) + field.eval(&shift(-1.0)))
            / (h * h)),
        o => Err(CalcError::InvalidOrder(o)),
    }
}

/// L applied with an explicit finite-difference step for the Hessian of
/// `field` (built-in systems contract A = sigma^T sigma against it; custom
/// systems nest div_L over grad_L).
pub fn l_apply_with_step(
    system: &VectorFieldSystem,
    field: &ScalarField,
    x: &[f64],
    h: f64,
) -> Complex64 {
    match &system.kind {
        SystemKind::Custom { .. } => {
            let sys = system.clone();
            let fld = field.clone();
            let grad_field = LVectorField::new(system.dim_n, system.dim_l, move |y, out| {
                sys.horizontal_gradient(&fld, y, out)
            })
            .with_fd_step(h);
            system.horizontal_divergence(&grad_field, x)
        }
        _ => {
            let n = system.dim_n;
            let mut a = vec![0.0; n * n];
            system.a_matrix_into(x, &mut a);
            let mut hess = vec![Complex64::ZERO; n * n];
            field.hessian_fd_into(x, h, &mut hess);
            let mut acc = Complex64::ZERO;
            for j in 0..n * n {
                acc += a[j] * hess[j];
            }
            acc
        }
    }
}

/// sigma(x) times the central-difference gradient at step h.
pub fn horizontal_gradient_with_step(
    system: &VectorFieldSystem,
    field: &ScalarField,
    x: &[f64],
    h: f64,
    out: &mut [Complex64],
) {
    let n = system.dim_n;
    let mut g = vec![Complex64::ZERO; n];
    field.gradient_fd_into(x, h, &mut g);
    let mut s = vec![0.0; system.dim_l * n];
    system.sigma_into(x, &mut s);
    for i in 0..system.dim_l {
        let mut acc = Complex64::ZERO;
        for j in 0..n {
            acc += s[i * n + j] * g[j];
        }
        out[i] = acc;
    }
}

/// Residual of the expansion of L(|u|^p / (|phi|^(p-2) phi)) into the four
/// bracketed terms
///   L(|u|^p) - (p-1)(Lphi/phi)|u|^p - 2(p-1) grad_L(|u|^p).grad_L(phi)/phi
///   + p(p-1)(|grad_L phi|^2/phi^2)|u|^p,
/// all over |phi|^(p-2) phi. Composites of u are differenced at step h;
/// phi uses its analytic derivatives when present.
pub fn quotient_identity_residual(
    system: &VectorFieldSystem,
    u: &ScalarField,
    phi: &ScalarField,
    p: f64,
    x: &[f64],
    h: f64,
) -> Result<f64, CalcError> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(CalcError::InvalidP(p));
    }
    if !(h > 0.0) {
        return Err(CalcError::InvalidStep(h));
    }
    let phi_x = phi.eval(x).re;
    if phi_x == 0.0 {
        return Err(CalcError::PhiVanishes(x.to_vec()));
    }
    let u_x = u.eval(x);
    if p < 2.0 && u_x.norm() == 0.0 {
        return Err(CalcError::UVanishes(x.to_vec()));
    }

    let l = system.dim_l;
    let uc = u.clone();
    let up_field =
        ScalarField::from_real(u.dim, move |y: &[f64]| uc.eval(y).norm().powf(p));
    let uc = u.clone();
    let pc = phi.clone();
    let composite = ScalarField::from_real(u.dim, move |y: &[f64]| {
        uc.eval(y).norm().powf(p) / signed_power(pc.eval(y).re, p - 1.0)
    });

    let lhs = l_apply_with_step(system, &composite, x, h).re;

    let up = u_x.norm().powf(p);
    let l_up = l_apply_with_step(system, &up_field, x, h).re;
    let mut g_up = vec![Complex64::ZERO; l];
    horizontal_gradient_with_step(system, &up_field, x, h, &mut g_up);
    let mut g_phi = vec![Complex64::ZERO; l];
    system.horizontal_gradient(phi, x, &mut g_phi);
    let l_phi = system.l_apply(phi, x).re;
    let g_phi_sq: f64 = g_phi.iter().map(|c| c.norm_sqr()).sum();
    let cross: f64 = g_up.iter().zip(&g_phi).map(|(a, b)| (a * b).re).sum();

    let bracket = l_up - (p - 1.0) * (l_phi / phi_x) * up - 2.0 * (p - 1.0) * cross / phi_x
        + p * (p - 1.0) * (g_phi_sq / (phi_x * phi_x)) * up;
    let rhs = bracket / signed_power(phi_x, p - 1.0);

    Ok((lhs - rhs).abs())
}

/// Pointwise strong-form residual with its magnitude scale, for relative
/// comparisons.
#[derive(Debug, Clone, Copy)]
pub struct PdeResidual {
    pub residual: f64,
    pub scale: f64,
}

impl PdeResidual {
    pub fn relative(&self) -> f64 {
        if self.residual == 0.0 {
            0.0
        } else {
            self.residual / self.scale.max(1e-300)
        }
    }
}

/// Residual of -div_L(V |grad_L phi . Z|^(p-2) (grad_L phi . Z) Z)
/// = lambda W |phi|^(p-2) phi (or the Z-free form with the full gradient).
/// The flux Jacobian is differenced at step h; the gradient of phi inside it
/// is analytic when phi carries one.
#[allow(clippy::too_many_arguments)]
pub fn hardy_pde_residual_with_step(
    system: &VectorFieldSystem,
    v_weight: &ScalarField,
    phi: &ScalarField,
    p: f64,
    lambda: f64,
    w_weight: &ScalarField,
    x: &[f64],
    z: Option<&DirectionField>,
    h: f64,
) -> Result<PdeResidual, CalcError> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(CalcError::InvalidP(p));
    }
    if !(h > 0.0) {
        return Err(CalcError::InvalidStep(h));
    }
    let l = system.dim_l;
    let sys = system.clone();
    let vw = v_weight.clone();
    let ph = phi.clone();
    let zf = z.cloned();
    let flux = LVectorField::new(system.dim_n, l, move |y, out| {
        sys.horizontal_gradient(&ph, y, out);
        let vv = vw.eval(y).re;
        match &zf {
            Some(zdir) => {
                let mut zv = vec![0.0; out.len()];
                zdir.eval_into(y, &mut zv);
                let s: f64 = out.iter().zip(&zv).map(|(g, z)| g.re * z).sum();
                let w = vv * signed_power(s, p - 1.0);
                for (o, z) in out.iter_mut().zip(&zv) {
                    *o = Complex64::new(w * z, 0.0);
                }
            }
            None => {
                let gn = out.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                // |g|^(p-2) g -> 0 with g since p > 1.
                let w = if gn > 0.0 { vv * gn.powf(p - 2.0) } else { 0.0 };
                for o in out.iter_mut() {
                    *o *= w;
                }
            }
        }
    })
    .with_fd_step(h);
    let lhs = -system.horizontal_divergence(&flux, x).re;
    let rhs = lambda * w_weight.eval(x).re * signed_power(phi.eval(x).re, p - 1.0);
    Ok(PdeResidual { residual: (lhs - rhs).abs(), scale: lhs.abs().max(rhs.abs()) })
}

#[allow(clippy::too_many_arguments)]
pub fn hardy_pde_residual(
    system: &VectorFieldSystem,
    v_weight: &ScalarField,
    phi: &ScalarField,
    p: f64,
    lambda: f64,
    w_weight: &ScalarField,
    x: &[f64],
    z: Option<&DirectionField>,
) -> Result<PdeResidual, CalcError> {
    hardy_pde_residual_with_step(
        system,
        v_weight,
        phi,
        p,
        lambda,
        w_weight,
        x,
        z,
        default_fd_step(x),
    )
}

/// As `PdeResidual`, plus the sign quantity -Lphi/phi whose nonnegativity the
/// second-order theorem assumes.
#[derive(Debug, Clone, Copy)]
pub struct RellichResidual {
    pub residual: f64,
    pub scale: f64,
    pub minus_lphi_over_phi: f64,
}

impl RellichResidual {
    pub fn relative(&self) -> f64 {
        PdeResidual { residual: self.residual, scale: self.scale }.relative()
    }
}

/// Residual of L(V |Lphi|^(p-2) Lphi) = lambda W |phi|^(p-2) phi. The outer L
/// is differenced at step h; Lphi inside the composite uses phi's analytic
/// Hessian when present.
pub fn rellich_pde_residual_with_step(
    system: &VectorFieldSystem,
    v_weight: &ScalarField,
    phi: &ScalarField,
    p: f64,
    lambda: f64,
    w_weight: &ScalarField,
    x: &[f64],
    h: f64,
) -> Result<RellichResidual, CalcError> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(CalcError::InvalidP(p));
    }
    if !(h > 0.0) {
        return Err(CalcError::InvalidStep(h));
    }
    let phi_x = phi.eval(x).re;
    if phi_x == 0.0 {
        return Err(CalcError::PhiVanishes(x.to_vec()));
    }
    let sys = system.clone();
    let vw = v_weight.clone();
    let ph = phi.clone();
    let composite = ScalarField::from_real(phi.dim, move |y: &[f64]| {
        vw.eval(y).re * signed_power(sys.l_apply(&ph, y).re, p - 1.0)
    });
    let lhs = l_apply_with_step(system, &composite, x, h).re;
    let rhs = lambda * w_weight.eval(x).re * signed_power(phi_x, p - 1.0);
    Ok(RellichResidual {
        residual: (lhs - rhs).abs(),
        scale: lhs.abs().max(rhs.abs()),
        minus_lphi_over_phi: -system.l_apply(phi, x).re / phi_x,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn rellich_pde_residual(
    system: &VectorFieldSystem,
    v_weight: &ScalarField,
    phi: &ScalarField,
    p: f64,
    lambda: f64,
    w_weight: &ScalarField,
    x: &[f64],
) -> Result<RellichResidual, CalcError> {
    rellich_pde_residual_with_step(
        system,
        v_weight,
        phi,
        p,
        lambda,
        w_weight,
        x,
        default_fd_step(x),
    )
}
