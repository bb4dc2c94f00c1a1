//! Integral identity verification.
//!
//! Each registered case fixes a system, an exponent p, a gauge phi and a
//! weight pair (V, W, lambda), and declares which equality is being checked:
//! the first-order split of the weighted gradient energy into a sharp main
//! term plus a nonnegative C_p remainder (full-gradient or projected on a
//! direction field), its one-dimensional p = 2 specialisation on an interval,
//! or the second-order split of the weighted |Lu|^p energy with its two
//! extra sign-definite terms. Verification integrates both sides with one
//! quadrature sweep and compares the residual against the error budget.

use std::sync::atomic::{AtomicUsize, Ordering};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calculus::{
    hardy_pde_residual, rellich_pde_residual, signed_power, CalcError,
};
use crate::cp::{cp_eval_scalar, cp_parts};
use crate::fields::{
    make_system, radial_power_field, DirectionField, FieldError, ScalarField, SystemKind,
    VectorFieldSystem,
};
use crate::quadrature::{integrate_many, IntegrationDomain, QuadError, QuadratureSpec};
use crate::testfn::{
    annular_test_field, interval_parabola, interval_sine, midband_points, BumpSpec,
};

/// Which equality a case asserts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremKind {
    Hardy,
    HardyDirectional,
    Rellich,
    PoincareInterval,
}

/// How test functions for a case are produced.
#[derive(Clone)]
pub enum TestFieldPlan {
    /// Random smooth bumps supported on the case annulus; when `complex`,
    /// all but the last carry an oscillatory phase and the last is real.
    AnnularBumps { count: usize, complex: bool },
    /// An explicit labelled list.
    Fixed(Vec<(String, ScalarField)>),
}

#[derive(Clone)]
pub struct IdentityCase {
    pub id: String,
    pub theorem: TheoremKind,
    pub system: VectorFieldSystem,
    pub p: f64,
    pub dim: usize,
    pub phi: ScalarField,
    pub v_weight: ScalarField,
    pub w_weight: ScalarField,
    pub lambda: f64,
    pub z_field: Option<DirectionField>,
    pub support: IntegrationDomain,
    pub default_quad: QuadratureSpec,
    pub plan: TestFieldPlan,
    pub pass_rel_tol: f64,
    pub pass_abs_tol: f64,
    pub description: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub err: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RhsTerm {
    pub name: String,
    pub value: f64,
    pub err: f64,
}

/// Outcome of verifying one identity for one test function.
/// `pass` holds iff residual <= max(abs_tol, rel_tol |lhs|) + quad_err_total
/// and no sign-definite quantity was observed negative beyond roundoff.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityReport {
    pub case_id: String,
    pub theorem: TheoremKind,
    pub p: f64,
    pub dim: usize,
    pub field_label: String,
    pub lhs: Measured,
    pub rhs_terms: Vec<RhsTerm>,
    pub residual: f64,
    pub rel_residual: f64,
    pub quad_err_total: f64,
    pub sign_violations: usize,
    pub pass: bool,
    pub notes: String,
}

#[derive(Debug, Error)]
pub enum IdentityError {
    #[error("case '{case}' verifies {expected:?}, not {got:?}")]
    TheoremMismatch {
        case: String,
        expected: TheoremKind,
        got: TheoremKind,
    },
    #[error("test field has dimension {got}, case needs {want}")]
    DimensionMismatch { got: usize, want: usize },
    #[error("case '{0}' has no direction field")]
    MissingDirection(String),
    #[error(transparent)]
    Quadrature(#[from] QuadError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Calc(#[from] CalcError),
}

const MAX_L: usize = 8;

/// C_p for vector arguments, via the cancellation-stable split evaluation.
fn cp_vec(p: f64, xi: &[Complex64], eta: &[Complex64]) -> f64 {
    let mut nx = 0.0;
    let mut nd = 0.0;
    let mut re = 0.0;
    for (a, b) in xi.iter().zip(eta) {
        let d = a - b;
        nx += a.norm_sqr();
        nd += d.norm_sqr();
        re += d.re * b.re + d.im * b.im;
    }
    cp_parts(p, nx.sqrt(), nd.sqrt(), re)
}

/// Roundoff allowance for sign checks: the cancellation scale of the three
/// C_p terms at this node.
fn cp_sign_floor(p: f64, xi_norm_p: f64, d_norm: f64, eta_norm: f64) -> f64 {
    1e-12 * (xi_norm_p + d_norm.powf(p) + p * d_norm.powf(p - 1.0) * eta_norm + 1e-30)
}

fn report_pass(case: &IdentityCase, lhs: f64, residual: f64, err_total: f64, viols: usize) -> bool {
    viols == 0
        && residual <= case.pass_abs_tol.max(case.pass_rel_tol * lhs.abs()) + err_total
}

fn first_order_report(
    case: &IdentityCase,
    u: &ScalarField,
    field_label: &str,
    quad: &QuadratureSpec,
) -> Result<IdentityReport, IdentityError> {
    if u.dim != case.dim {
        return Err(IdentityError::DimensionMismatch { got: u.dim, want: case.dim });
    }
    let directional = matches!(case.theorem, TheoremKind::HardyDirectional);
    if directional && case.z_field.is_none() {
        return Err(IdentityError::MissingDirection(case.id.clone()));
    }
    let sys = &case.system;
    let l = sys.dim_l;
    let p = case.p;
    let inv_p = 1.0 / p;
    let violations = AtomicUsize::new(0);

    let integrand = |y: &[f64], out: &mut [f64]| {
        let uy = u.eval(y);
        let phi = case.phi.eval(y).re;
        let v = case.v_weight.eval(y).re;
        let w = case.w_weight.eval(y).re;
        let vp = v.powf(inv_p);
        let mut gu = [Complex64::ZERO; MAX_L];
        let mut gphi = [Complex64::ZERO; MAX_L];
        sys.horizontal_gradient(u, y, &mut gu[..l]);
        sys.horizontal_gradient(&case.phi, y, &mut gphi[..l]);
        let ratio = uy / phi;

        let cp;
        let energy;
        let xi_norm_p;
        let d_norm;
        let eta_norm;
        if directional {
            let mut zv = [0.0; MAX_L];
            case.z_field.as_ref().unwrap().eval_into(y, &mut zv[..l]);
            let mut su = Complex64::ZERO;
            let mut sphi = Complex64::ZERO;
            for i in 0..l {
                su += gu[i] * zv[i];
                sphi += gphi[i] * zv[i];
            }
            let xi = vp * su;
            let eta = vp * (su - ratio * sphi);
            energy = v * su.norm().powf(p);
            cp = cp_eval_scalar(p, xi, eta);
            xi_norm_p = xi.norm().powf(p);
            d_norm = (xi - eta).norm();
            eta_norm = eta.norm();
        } else {
            let mut xi = [Complex64::ZERO; MAX_L];
            let mut eta = [Complex64::ZERO; MAX_L];
            let mut gn2 = 0.0;
            for i in 0..l {
                gn2 += gu[i].norm_sqr();
                xi[i] = vp * gu[i];
                eta[i] = vp * (gu[i] - ratio * gphi[i]);
            }
            energy = v * gn2.sqrt().powf(p);
            cp = cp_vec(p, &xi[..l], &eta[..l]);
            xi_norm_p = xi[..l].iter().map(|c| c.norm_sqr()).sum::<f64>().powf(p / 2.0);
            d_norm = xi[..l]
                .iter()
                .zip(&eta[..l])
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            eta_norm = eta[..l].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        }
        if cp < -cp_sign_floor(p, xi_norm_p, d_norm, eta_norm) {
            violations.fetch_add(1, Ordering::Relaxed);
        }
        out[0] = energy;
        out[1] = case.lambda * w * uy.norm().powf(p);
        out[2] = cp;
    };

    let (vals, errs) = integrate_many(integrand, 3, &case.support, quad)?;
    let residual = (vals[0] - vals[1] - vals[2]).abs();
    let err_total: f64 = errs.iter().sum();
    let viols = violations.load(Ordering::Relaxed);
    Ok(IdentityReport {
        case_id: case.id.clone(),
        theorem: case.theorem,
        p,
        dim: case.dim,
        field_label: field_label.to_string(),
        lhs: Measured { value: vals[0], err: errs[0] },
        rhs_terms: vec![
            RhsTerm { name: "main_term".into(), value: vals[1], err: errs[1] },
            RhsTerm { name: "cp_remainder".into(), value: vals[2], err: errs[2] },
        ],
        residual,
        rel_residual: residual / vals[0].abs().max(1e-300),
        quad_err_total: err_total,
        sign_violations: viols,
        pass: report_pass(case, vals[0], residual, err_total, viols),
        notes: String::new(),
    })
}

fn rellich_report(
    case: &IdentityCase,
    u: &ScalarField,
    field_label: &str,
    quad: &QuadratureSpec,
) -> Result<IdentityReport, IdentityError> {
    if u.dim != case.dim {
        return Err(IdentityError::DimensionMismatch { got: u.dim, want: case.dim });
    }
    let sys = &case.system;
    let l = sys.dim_l;
    let p = case.p;
    let inv_p = 1.0 / p;
    let violations = AtomicUsize::new(0);

    let integrand = |y: &[f64], out: &mut [f64]| {
        let uy = u.eval(y);
        let nu = uy.norm();
        let phi = case.phi.eval(y).re;
        let v = case.v_weight.eval(y).re;
        let w = case.w_weight.eval(y).re;
        let vp = v.powf(inv_p);
        let lu = sys.l_apply(u, y);
        let lphi = sys.l_apply(&case.phi, y).re;
        // g = V |Lphi|^(p-2) Lphi / (|phi|^(p-2) phi); must be <= 0.
        let g = v * signed_power(lphi, p - 1.0) / signed_power(phi, p - 1.0);
        if g > 1e-12 * (1.0 + g.abs()) {
            violations.fetch_add(1, Ordering::Relaxed);
        }

        out[0] = v * lu.norm().powf(p);
        out[1] = case.lambda * w * nu.powf(p);

        let xi = vp * lu;
        let eta = vp * (lu - (lphi / phi) * uy);
        let cp = cp_eval_scalar(p, xi, eta);
        if cp < -cp_sign_floor(p, xi.norm().powf(p), (xi - eta).norm(), eta.norm()) {
            violations.fetch_add(1, Ordering::Relaxed);
        }
        out[2] = cp;

        if nu == 0.0 {
            // |u|^(p-2) factors kill both extra terms where u vanishes.
            out[3] = 0.0;
            out[4] = 0.0;
            return;
        }
        let mut gu = [Complex64::ZERO; MAX_L];
        let mut gphi = [Complex64::ZERO; MAX_L];
        sys.horizontal_gradient(u, y, &mut gu[..l]);
        sys.horizontal_gradient(&case.phi, y, &mut gphi[..l]);
        let mut gu2 = 0.0;
        let mut gmod2 = 0.0;
        let mut diff2 = 0.0;
        let mut pointwise_real = uy.im == 0.0;
        for i in 0..l {
            let gm = (uy.re * gu[i].re + uy.im * gu[i].im) / nu;
            let d = gm - (nu / phi) * gphi[i].re;
            gu2 += gu[i].norm_sqr();
            gmod2 += gm * gm;
            diff2 += d * d;
            pointwise_real &= gu[i].im == 0.0;
        }
        // For real u the gap |grad u|^2 - |grad |u||^2 is identically zero;
        // report the exact zero instead of the roundoff of the two products.
        let gap = if pointwise_real { 0.0 } else { gu2 - gmod2 };
        if gap < -1e-12 * gu2 {
            violations.fetch_add(1, Ordering::Relaxed);
        }
        let up2 = nu.powf(p - 2.0);
        out[3] = -p * (p - 1.0) * g * up2 * diff2;
        out[4] = -p * g * up2 * gap;
    };

    let (vals, errs) = integrate_many(integrand, 5, &case.support, quad)?;
    let rhs_sum = vals[1] + vals[2] + vals[3] + vals[4];
    let residual = (vals[0] - rhs_sum).abs();
    let err_total: f64 = errs.iter().sum();
    let viols = violations.load(Ordering::Relaxed);
    Ok(IdentityReport {
        case_id: case.id.clone(),
        theorem: case.theorem,
        p,
        dim: case.dim,
        field_label: field_label.to_string(),
        lhs: Measured { value: vals[0], err: errs[0] },
        rhs_terms: vec![
            RhsTerm { name: "main_term".into(), value: vals[1], err: errs[1] },
            RhsTerm { name: "cp_remainder".into(), value: vals[2], err: errs[2] },
            RhsTerm { name: "rellich_gradient_term".into(), value: vals[3], err: errs[3] },
            RhsTerm { name: "rellich_modulus_gap_term".into(), value: vals[4], err: errs[4] },
        ],
        residual,
        rel_residual: residual / vals[0].abs().max(1e-300),
        quad_err_total: err_total,
        sign_violations: viols,
        pass: report_pass(case, vals[0], residual, err_total, viols),
        notes: String::new(),
    })
}

pub fn verify_hardy(
    case: &IdentityCase,
    u: &ScalarField,
    field_label: &str,
    quad: &QuadratureSpec,
) -> Result<IdentityReport, IdentityError> {
    expect_theorem(case, TheoremKind::Hardy)?;
    first_order_report(case, u, field_label, quad)
}

pub fn verify_hardy_directional(
    case: &IdentityCase,
    u: &ScalarField,
    field_label: &str,
    quad: &QuadratureSpec,
) -> Result<IdentityReport, IdentityError> {
    expect_theorem(case, TheoremKind::HardyDirectional)?;
    first_order_report(case, u, field_label, quad)
}

pub fn verify_rellich(
    case: &IdentityCase,
    u: &ScalarField,
    field_label: &str,
    quad: &QuadratureSpec,
) -> Result<IdentityReport, IdentityError> {
    expect_theorem(case, TheoremKind::Rellich)?;
    rellich_report(case, u, field_label, quad)
}

/// One-dimensional p = 2 interval form against the first eigenfunction.
pub fn verify_poincare_interval(
    u: &ScalarField,
    field_label: &str,
    quad: &QuadratureSpec,
) -> Result<IdentityReport, IdentityError> {
    let case = case_library("poincare-1d").expect("registered");
    first_order_report(&case, u, field_label, quad)
}

fn expect_theorem(case: &IdentityCase, got: TheoremKind) -> Result<(), IdentityError> {
    if case.theorem != got {
        return Err(IdentityError::TheoremMismatch {
            case: case.id.clone(),
            expected: case.theorem,
            got,
        });
    }
    Ok(())
}

/// Dispatch on the case's declared theorem.
pub fn verify_case(
    case: &IdentityCase,
    u: &ScalarField,
    field_label: &str,
    quad: &QuadratureSpec,
) -> Result<IdentityReport, IdentityError> {
    match case.theorem {
        TheoremKind::Rellich => rellich_report(case, u, field_label, quad),
        _ => first_order_report(case, u, field_label, quad),
    }
}

/// |grad_L u|^2 - |grad_L |u||^2 at a point; nonnegative wherever u != 0.
pub fn gradient_modulus_gap(
    system: &VectorFieldSystem,
    u: &ScalarField,
    x: &[f64],
) -> Result<f64, FieldError> {
    let l = system.dim_l;
    let mut gu = vec![Complex64::ZERO; l];
    system.horizontal_gradient(u, x, &mut gu);
    let mut gm = vec![0.0; l];
    system.gradient_of_modulus(u, x, &mut gm)?;
    let gu2: f64 = gu.iter().map(|c| c.norm_sqr()).sum();
    let gm2: f64 = gm.iter().map(|a| a * a).sum();
    Ok(gu2 - gm2)
}

/// Median relative strong-form residual of the case's weight data over
/// deterministically sampled interior points. Large values mean (V, W,
/// lambda, phi) do not solve the declared equation and any verification
/// failure is the case's fault, not the quadrature's.
pub fn validate_case(case: &IdentityCase, samples: usize, seed: u64) -> Result<f64, IdentityError> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = match &case.support {
        IntegrationDomain::Annulus { center, r_in, r_out } => {
            midband_points(center, *r_in, *r_out, samples, &mut rng)
        }
        IntegrationDomain::Box { lo, hi } => (0..samples)
            .map(|i| {
                let t = (i as f64 + 0.5) / samples as f64;
                lo.iter().zip(hi).map(|(a, b)| a + (b - a) * t).collect()
            })
            .collect(),
    };
    let mut rels = Vec::with_capacity(points.len());
    for x in &points {
        let rel = match case.theorem {
            TheoremKind::Rellich => rellich_pde_residual(
                &case.system,
                &case.v_weight,
                &case.phi,
                case.p,
                case.lambda,
                &case.w_weight,
                x,
            )?
            .relative(),
            _ => hardy_pde_residual(
                &case.system,
                &case.v_weight,
                &case.phi,
                case.p,
                case.lambda,
                &case.w_weight,
                x,
                case.z_field.as_ref(),
            )?
            .relative(),
        };
        rels.push(rel);
    }
    rels.sort_by(f64::total_cmp);
    Ok(rels[rels.len() / 2])
}

/// FNV-1a over the case id, mixed with a base seed and the function index.
/// Stable across platforms and runs.
pub fn derive_seed(case_id: &str, base_seed: u64, index: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in case_id.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^= base_seed;
    h = h.wrapping_mul(0x100000001b3);
    h ^= index;
    h.wrapping_mul(0x100000001b3)
}

pub const DEFAULT_BASE_SEED: u64 = 0x68617264796c6162;

/// Materialise the case's test functions. Random plans derive one rng per
/// function from (case id, base seed, index), so results are reproducible
/// and independent of evaluation order.
pub fn test_fields_for_case(
    case: &IdentityCase,
    base_seed: u64,
    count_override: Option<usize>,
    complex_override: Option<bool>,
) -> Vec<(String, ScalarField)> {
    use rand::SeedableRng;
    match &case.plan {
        TestFieldPlan::Fixed(list) => list.clone(),
        TestFieldPlan::AnnularBumps { count, complex } => {
            let count = count_override.unwrap_or(*count);
            let complex = complex_override.unwrap_or(*complex);
            let (center, r_in, r_out) = match &case.support {
                IntegrationDomain::Annulus { center, r_in, r_out } => {
                    (center.clone(), *r_in, *r_out)
                }
                IntegrationDomain::Box { .. } => {
                    panic!("random bump plan needs an annular support")
                }
            };
            (0..count)
                .map(|i| {
                    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
                        &case.id, base_seed, i as u64,
                    ));
                    // Keep one real-valued function in every batch: the
                    // modulus-gap term must vanish identically for it.
                    let cplx = complex && i + 1 != count;
                    let spec =
                        BumpSpec::random(case.dim, &center, r_in, r_out, cplx, &mut rng);
                    let label = format!("bump-{i:02}{}", if cplx { "c" } else { "r" });
                    (label, annular_test_field(&spec))
                })
                .collect()
        }
    }
}

fn offset_center(n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n];
    c[0] = 1.5;
    c
}

fn quad(points: usize, radial: usize) -> QuadratureSpec {
    QuadratureSpec {
        points_per_axis: points,
        radial_points: Some(radial),
        ..QuadratureSpec::default()
    }
}

fn fmt_p(p: f64) -> String {
    format!("{p}")
}

fn radial_hardy_case(n: usize, p: f64, directional: bool) -> IdentityCase {
    let nf = n as f64;
    let alpha = (nf - p) / p;
    let (pts, rad) = match n {
        3 => (24, 40),
        4 => (20, 40),
        _ => (14, 36),
    };
    let degenerate = alpha == 0.0;
    let description = if directional {
        format!(
            "First-order identity on R^{n} with the gradient projected on the radial \
             direction: V = 1, W = |x|^-p, gauge |x|^-a with a = (N-p)/p, \
             lambda = a^p = {lam}.{deg}",
            lam = alpha.powf(p),
            deg = if degenerate { " Degenerate flat gauge: a = 0, lambda = 0." } else { "" },
        )
    } else {
        format!(
            "First-order identity on R^{n} with the full horizontal gradient: V = 1, \
             W = |x|^-p, gauge |x|^-a with a = (N-p)/p, lambda = a^p = {lam}.{deg}",
            lam = alpha.powf(p),
            deg = if degenerate { " Degenerate flat gauge: a = 0, lambda = 0." } else { "" },
        )
    };
    IdentityCase {
        id: format!(
            "hardy{}-n{n}-p{}",
            if directional { "-dir" } else { "" },
            fmt_p(p)
        ),
        theorem: if directional { TheoremKind::HardyDirectional } else { TheoremKind::Hardy },
        system: make_system(SystemKind::Euclidean { dim: n }).unwrap(),
        p,
        dim: n,
        phi: radial_power_field(n, -alpha),
        v_weight: ScalarField::constant(n, Complex64::new(1.0, 0.0)),
        w_weight: radial_power_field(n, -p),
        lambda: alpha.powf(p),
        z_field: directional.then(|| DirectionField::radial(n)),
        support: IntegrationDomain::Annulus {
            center: offset_center(n),
            r_in: 0.4,
            r_out: 1.3,
        },
        default_quad: quad(pts, rad),
        plan: TestFieldPlan::AnnularBumps { count: 5, complex: true },
        pass_rel_tol: 1e-5,
        pass_abs_tol: 1e-12,
        description,
    }
}

fn radial_rellich_case(n: usize, p: f64) -> IdentityCase {
    let nf = n as f64;
    assert!(nf > 2.0 * p, "second-order radial case needs N > 2p");
    let alpha = (nf - 2.0 * p) / p;
    let a_const = nf * (p - 1.0) * (nf - 2.0 * p) / (p * p);
    let (pts, rad, count) = match n {
        5 => (14, 32, 5),
        6 => (12, 28, 3),
        _ => (10, 28, 2),
    };
    IdentityCase {
        id: format!("rellich-n{n}-p{}", fmt_p(p)),
        theorem: TheoremKind::Rellich,
        system: make_system(SystemKind::Euclidean { dim: n }).unwrap(),
        p,
        dim: n,
        phi: radial_power_field(n, -alpha),
        v_weight: ScalarField::constant(n, Complex64::new(1.0, 0.0)),
        w_weight: radial_power_field(n, -2.0 * p),
        lambda: a_const.powf(p),
        z_field: None,
        support: IntegrationDomain::Annulus {
            center: offset_center(n),
            r_in: 0.4,
            r_out: 1.3,
        },
        default_quad: quad(pts, rad),
        plan: TestFieldPlan::AnnularBumps { count, complex: true },
        pass_rel_tol: 1e-4,
        pass_abs_tol: 1e-12,
        description: format!(
            "Second-order identity on R^{n}: V = 1, W = |x|^-2p, gauge |x|^-a with \
             a = (N-2p)/p, lambda = (N(p-1)(N-2p)/p^2)^p = {lam}. Includes the two \
             sign-definite gradient and modulus-gap terms.",
            lam = a_const.powf(p)
        ),
    }
}

fn grushin_rho(x: f64, y: f64) -> f64 {
    (x.powi(4) + 4.0 * y * y).powf(0.25)
}

fn grushin_hardy_case(p: f64) -> IdentityCase {
    // Plane Grushin system with one degenerate axis and weight exponent 1:
    // homogeneous dimension Q = 3, gauge rho = (x^4 + 4 y^2)^(1/4).
    let q_hom = 3.0;
    let beta = (q_hom - p) / p;
    let phi = ScalarField::from_real(2, move |q: &[f64]| grushin_rho(q[0], q[1]).powf(-beta))
        .with_gradient(move |q: &[f64], out: &mut [Complex64]| {
            let rho = grushin_rho(q[0], q[1]);
            let c = -beta * rho.powf(-beta - 4.0);
            out[0] = Complex64::new(c * q[0].powi(3), 0.0);
            out[1] = Complex64::new(c * 2.0 * q[1], 0.0);
        })
        .with_note("homogeneous gauge power, smooth away from the origin");
    let w_weight = ScalarField::from_real(2, move |q: &[f64]| {
        q[0].abs().powf(p) / grushin_rho(q[0], q[1]).powf(2.0 * p)
    });
    IdentityCase {
        id: format!("grushin-hardy-p{}", fmt_p(p)),
        theorem: TheoremKind::Hardy,
        system: make_system(SystemKind::Grushin { m: 1, k: 1, gamma: 1.0 }).unwrap(),
        p,
        dim: 2,
        phi,
        v_weight: ScalarField::constant(2, Complex64::new(1.0, 0.0)),
        w_weight,
        lambda: beta.powf(p),
        z_field: None,
        support: IntegrationDomain::Annulus {
            center: vec![2.0, 0.0],
            r_in: 0.4,
            r_out: 1.4,
        },
        default_quad: quad(64, 96),
        plan: TestFieldPlan::AnnularBumps { count: 5, complex: true },
        pass_rel_tol: 1e-5,
        pass_abs_tol: 1e-12,
        description: format!(
            "First-order identity for the plane system (d_x, |x| d_y): gauge \
             rho = (x^4 + 4y^2)^(1/4) of homogeneous dimension Q = 3, V = 1, \
             W = |x|^p / rho^2p, lambda = ((Q-p)/p)^p = {lam}. Support stays away \
             from the degenerate line x = 0.",
            lam = beta.powf(p)
        ),
    }
}

fn poincare_case() -> IdentityCase {
    let pi = std::f64::consts::PI;
    IdentityCase {
        id: "poincare-1d".into(),
        theorem: TheoremKind::PoincareInterval,
        system: make_system(SystemKind::Euclidean { dim: 1 }).unwrap(),
        p: 2.0,
        dim: 1,
        phi: interval_sine(1),
        v_weight: ScalarField::constant(1, Complex64::new(1.0, 0.0)),
        w_weight: ScalarField::constant(1, Complex64::new(1.0, 0.0)),
        lambda: pi * pi,
        z_field: None,
        support: IntegrationDomain::Box { lo: vec![0.0], hi: vec![1.0] },
        default_quad: QuadratureSpec { points_per_axis: 48, ..QuadratureSpec::default() },
        plan: TestFieldPlan::Fixed(vec![
            ("first-mode".into(), interval_sine(1)),
            ("second-mode".into(), interval_sine(2)),
            ("third-mode".into(), interval_sine(3)),
            ("parabola".into(), interval_parabola()),
        ]),
        pass_rel_tol: 1e-8,
        pass_abs_tol: 1e-12,
        description: "Interval p = 2 identity on (0, 1): the Dirichlet energy equals \
             pi^2 times the mass plus the nonnegative remainder |u' - (u/phi) phi'|^2 \
             with phi the first Dirichlet eigenfunction sin(pi x)."
            .into(),
    }
}

/// Every registered case, in a fixed order.
pub fn all_cases() -> Vec<IdentityCase> {
    let mut cases = Vec::new();
    for n in [3, 4] {
        for p in [1.5, 2.0, 3.0] {
            cases.push(radial_hardy_case(n, p, false));
        }
    }
    cases.push(radial_hardy_case(5, 2.5, false));
    for n in [3, 4] {
        for p in [1.5, 2.0, 3.0] {
            cases.push(radial_hardy_case(n, p, true));
        }
    }
    cases.push(radial_rellich_case(5, 2.0));
    cases.push(radial_rellich_case(6, 2.0));
    cases.push(radial_rellich_case(7, 2.5));
    cases.push(grushin_hardy_case(1.5));
    cases.push(grushin_hardy_case(2.0));
    cases.push(poincare_case());
    cases
}

pub fn case_library(id: &str) -> Option<IdentityCase> {
    all_cases().into_iter().find(|c| c.id == id)
}

pub fn registered_case_ids() -> Vec<String> {
    all_cases().iter().map(|c| c.id.clone()).collect()
}
