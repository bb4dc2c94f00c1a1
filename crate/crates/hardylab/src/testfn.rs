//! Smooth compactly supported test functions with analytic derivatives.
//!
//! The family is u(x) = B(|x - c|) Q(x) e^(i k.x): B is the profile
//! exp(-1/(1 - s^2)) rescaled to vanish outside [r_in, r_out], Q is an affine
//! factor kept away from zero on the support (the second-order cases with
//! p != 2 need |u| > 0 inside), and k is a linear phase. Gradient and Hessian
//! are coded in closed form so quadrature and residual checks are not limited
//! by differentiation error.

use crate::fields::{ScalarField, Support};
use num_complex::Complex64;
use rand::Rng;

/// Parameters of one annular test function.
#[derive(Debug, Clone)]
pub struct BumpSpec {
    pub dim: usize,
    pub center: Vec<f64>,
    pub r_in: f64,
    pub r_out: f64,
    /// Q(x) = q0 + qlin . (x - center).
    pub q0: f64,
    pub qlin: Vec<f64>,
    /// Phase wave vector; all zeros gives a real-valued function.
    pub wave: Vec<f64>,
}

impl BumpSpec {
    /// Fixed deterministic spec for doc-style tests.
    pub fn example(dim: usize) -> Self {
        BumpSpec {
            dim,
            center: vec![0.0; dim],
            r_in: 0.5,
            r_out: 1.5,
            q0: 2.0,
            qlin: (0..dim)
                .map(|j| if j % 2 == 0 { 0.1 } else { -0.08 } / dim as f64)
                .collect(),
            wave: (0..dim).map(|j| if j % 2 == 0 { 0.6 } else { -0.4 }).collect(),
        }
    }

    /// Random spec on the given annulus. |qlin . (x - c)| <= 0.8 on the
    /// support and q0 >= 1.5, so |Q| >= 0.7 everywhere.
    pub fn random<R: Rng>(
        dim: usize,
        center: &[f64],
        r_in: f64,
        r_out: f64,
        complex: bool,
        rng: &mut R,
    ) -> Self {
        let bound = 0.8 / (dim as f64 * r_out);
        BumpSpec {
            dim,
            center: center.to_vec(),
            r_in,
            r_out,
            q0: rng.gen_range(1.5..2.5),
            qlin: (0..dim).map(|_| rng.gen_range(-bound..bound)).collect(),
            wave: if complex {
                (0..dim).map(|_| rng.gen_range(-2.0..2.0)).collect()
            } else {
                vec![0.0; dim]
            },
        }
    }

    pub fn is_complex(&self) -> bool {
        self.wave.iter().any(|w| *w != 0.0)
    }
}

/// Profile value and first two radial derivatives at radius rho.
/// Zero (with zero derivatives) outside the open annulus.
fn bump_profile(r_in: f64, r_out: f64, rho: f64) -> (f64, f64, f64) {
    let mid = 0.5 * (r_in + r_out);
    let m = 2.0 / (r_out - r_in);
    let s = (rho - mid) * m;
    let q = 1.0 - s * s;
    // The factors 1/q^4 below can overflow before exp(-1/q) underflows;
    // cut off while exp(-1/q) is still zero to double precision.
    if q <= 1e-3 {
        return (0.0, 0.0, 0.0);
    }
    let g = (-1.0 / q).exp();
    let gp = -2.0 * s / (q * q) * g;
    let gpp = (-2.0 / (q * q) - 8.0 * s * s / (q * q * q) + 4.0 * s * s / (q * q * q * q)) * g;
    (g, m * gp, m * m * gpp)
}

/// Builds the scalar field for a spec, with analytic gradient and Hessian.
pub fn annular_test_field(spec: &BumpSpec) -> ScalarField {
    assert_eq!(spec.center.len(), spec.dim);
    assert_eq!(spec.qlin.len(), spec.dim);
    assert_eq!(spec.wave.len(), spec.dim);
    assert!(0.0 < spec.r_in && spec.r_in < spec.r_out);
    let n = spec.dim;
    let real = !spec.is_complex();

    let sp = spec.clone();
    let eval = move |x: &[f64]| -> Complex64 {
        let rho = dist(x, &sp.center);
        let (b, _, _) = bump_profile(sp.r_in, sp.r_out, rho);
        if b == 0.0 {
            return Complex64::ZERO;
        }
        let q = affine(&sp, x);
        b * q * phase(&sp, x)
    };

    let sp = spec.clone();
    let grad = move |x: &[f64], out: &mut [Complex64]| {
        let rho = dist(x, &sp.center);
        let (b, bp, _) = bump_profile(sp.r_in, sp.r_out, rho);
        if b == 0.0 && bp == 0.0 {
            out.fill(Complex64::ZERO);
            return;
        }
        let q = affine(&sp, x);
        let e = phase(&sp, x);
        for a in 0..sp.dim {
            let na = (x[a] - sp.center[a]) / rho;
            out[a] = e
                * (Complex64::new(bp * na * q + b * sp.qlin[a], 0.0)
                    + Complex64::new(0.0, b * q * sp.wave[a]));
        }
    };

    let sp = spec.clone();
    let hess = move |x: &[f64], out: &mut [Complex64]| {
        let dim = sp.dim;
        let rho = dist(x, &sp.center);
        let (b, bp, bpp) = bump_profile(sp.r_in, sp.r_out, rho);
        if b == 0.0 && bp == 0.0 && bpp == 0.0 {
            out.fill(Complex64::ZERO);
            return;
        }
        let q = affine(&sp, x);
        let e = phase(&sp, x);
        let i = Complex64::new(0.0, 1.0);
        for a in 0..dim {
            let na = (x[a] - sp.center[a]) / rho;
            for c in a..dim {
                let nc = (x[c] - sp.center[c]) / rho;
                let delta = if a == c { 1.0 } else { 0.0 };
                let mut v = Complex64::new(
                    bpp * na * nc * q
                        + bp * q * (delta - na * nc) / rho
                        + bp * (na * sp.qlin[c] + nc * sp.qlin[a])
                        - b * q * sp.wave[a] * sp.wave[c],
                    0.0,
                );
                v += i * (bp * q * (na * sp.wave[c] + nc * sp.wave[a])
                    + b * (sp.qlin[a] * sp.wave[c] + sp.qlin[c] * sp.wave[a]));
                out[a * dim + c] = e * v;
                out[c * dim + a] = e * v;
            }
        }
    };

    let mut f = ScalarField::new(n, eval)
        .with_gradient(grad)
        .with_hessian(hess)
        .with_support(Support::Annulus {
            center: spec.center.clone(),
            r_in: spec.r_in,
            r_out: spec.r_out,
        })
        .with_note("smooth everywhere, compactly supported in the annulus");
    f.real_valued = real;
    f
}

fn dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn affine(sp: &BumpSpec, x: &[f64]) -> f64 {
    sp.q0 + sp.qlin.iter().zip(x.iter().zip(&sp.center)).map(|(q, (v, c))| q * (v - c)).sum::<f64>()
}

fn phase(sp: &BumpSpec, x: &[f64]) -> Complex64 {
    let th: f64 = sp.wave.iter().zip(x).map(|(k, v)| k * v).sum();
    Complex64::new(0.0, th).exp()
}

/// sin(freq pi x) on (0, 1) with analytic derivatives; vanishes at both
/// endpoints for integer freq, so it is an admissible interval test function.
pub fn interval_sine(freq: u32) -> ScalarField {
    let w = freq as f64 * std::f64::consts::PI;
    ScalarField::from_real(1, move |x: &[f64]| (w * x[0]).sin())
        .with_gradient(move |x: &[f64], out: &mut [Complex64]| {
            out[0] = Complex64::new(w * (w * x[0]).cos(), 0.0);
        })
        .with_hessian(move |x: &[f64], out: &mut [Complex64]| {
            out[0] = Complex64::new(-w * w * (w * x[0]).sin(), 0.0);
        })
        .with_note("interval eigenmode")
}

/// x(1 - x) on (0, 1) with analytic derivatives.
pub fn interval_parabola() -> ScalarField {
    ScalarField::from_real(1, |x: &[f64]| x[0] * (1.0 - x[0]))
        .with_gradient(|x: &[f64], out: &mut [Complex64]| {
            out[0] = Complex64::new(1.0 - 2.0 * x[0], 0.0);
        })
        .with_hessian(|_: &[f64], out: &mut [Complex64]| {
            out[0] = Complex64::new(-2.0, 0.0);
        })
        .with_note("polynomial, vanishes at the endpoints")
}

/// Random points in the middle band of an annulus (radii between 35% and 65%
/// of the way from r_in to r_out), where bump test functions are comfortably
/// nonzero. Directions are isotropic.
pub fn midband_points<R: Rng>(
    center: &[f64],
    r_in: f64,
    r_out: f64,
    count: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    let w = r_out - r_in;
    (0..count)
        .map(|_| {
            let r = r_in + rng.gen_range(0.35..0.65) * w;
            let d = unit_direction(center.len(), rng);
            center.iter().zip(&d).map(|(c, u)| c + r * u).collect()
        })
        .collect()
}

fn unit_direction<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| {
                let u1: f64 = 1.0 - rng.gen::<f64>();
                let u2: f64 = rng.gen();
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            })
            .collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.iter().map(|a| a / norm).collect();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn support_is_exact() {
        let spec = BumpSpec::example(3);
        let u = annular_test_field(&spec);
        assert_eq!(u.eval(&[0.49, 0.0, 0.0]), Complex64::ZERO);
        assert_eq!(u.eval(&[1.51, 0.0, 0.0]), Complex64::ZERO);
        assert_eq!(u.eval(&[0.1, 0.1, 0.1]), Complex64::ZERO);
        assert!(u.eval(&[1.0, 0.0, 0.0]).norm() > 0.1);
    }

    #[test]
    fn affine_factor_keeps_modulus_positive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let center = [0.4, -0.2, 0.0, 0.7];
        let spec = BumpSpec::random(4, &center, 0.6, 1.8, true, &mut rng);
        for x in midband_points(&center, 0.6, 1.8, 200, &mut rng) {
            let q = affine(&spec, &x);
            assert!(q.abs() >= 0.7, "Q = {q} at {x:?}");
            let u = annular_test_field(&spec).eval(&x);
            assert!(u.norm() > 0.0);
        }
    }

    #[test]
    fn zero_wave_gives_real_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = BumpSpec::random(2, &[1.5, 0.0], 0.3, 1.0, false, &mut rng);
        let u = annular_test_field(&spec);
        assert!(u.real_valued);
        for x in midband_points(&[1.5, 0.0], 0.3, 1.0, 20, &mut rng) {
            assert_eq!(u.eval(&x).im, 0.0);
        }
    }

    #[test]
    fn hessian_trace_matches_laplacian_formula() {
        let spec = BumpSpec::example(3);
        let u = annular_test_field(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for x in midband_points(&spec.center, spec.r_in, spec.r_out, 30, &mut rng) {
            let mut h = vec![Complex64::ZERO; 9];
            u.hessian_into(&x, &mut h);
            let trace = h[0] + h[4] + h[8];

            // Independent assembly of Delta u.
            let rho = dist(&x, &spec.center);
            let (b, bp, bpp) = bump_profile(spec.r_in, spec.r_out, rho);
            let q = affine(&spec, &x);
            let e = phase(&spec, &x);
            let nvec: Vec<f64> =
                x.iter().zip(&spec.center).map(|(v, c)| (v - c) / rho).collect();
            let ndotq: f64 = nvec.iter().zip(&spec.qlin).map(|(a, b)| a * b).sum();
            let ndotk: f64 = nvec.iter().zip(&spec.wave).map(|(a, b)| a * b).sum();
            let qdotk: f64 = spec.qlin.iter().zip(&spec.wave).map(|(a, b)| a * b).sum();
            let k2: f64 = spec.wave.iter().map(|a| a * a).sum();
            let want = e
                * (Complex64::new(
                    bpp * q + bp * q * 2.0 / rho + 2.0 * bp * ndotq - b * q * k2,
                    0.0,
                ) + Complex64::new(0.0, 2.0 * bp * q * ndotk + 2.0 * b * qdotk));
            assert_relative_eq!(trace.re, want.re, max_relative = 1e-11, epsilon = 1e-12);
            assert_relative_eq!(trace.im, want.im, max_relative = 1e-11, epsilon = 1e-12);
        }
    }

    #[test]
    fn interval_functions_vanish_at_endpoints() {
        for f in [interval_sine(1), interval_sine(2), interval_parabola()] {
            assert!(f.eval(&[0.0]).norm() < 1e-15);
            assert!(f.eval(&[1.0]).norm() < 2e-15);
            assert!(f.real_valued);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let mk = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            BumpSpec::random(5, &[0.0; 5], 0.5, 1.5, true, &mut rng)
        };
        let (a, b) = (mk(), mk());
        assert_eq!(a.q0, b.q0);
        assert_eq!(a.qlin, b.qlin);
        assert_eq!(a.wave, b.wave);
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

        /// Analytic gradient and Hessian agree with second-order central
        /// differences, with the error dropping by ~4 when h halves.
        #[test]
        fn derivatives_match_finite_differences(seed in 0u64..5000, complex in proptest::bool::ANY) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = rng.gen_range(2usize..5);
            let center: Vec<f64> = (0..dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let spec = BumpSpec::random(dim, &center, 0.4, 1.3, complex, &mut rng);
            let u = annular_test_field(&spec);
            let x = &midband_points(&center, 0.4, 1.3, 1, &mut rng)[0];

            let mut ga = vec![Complex64::ZERO; dim];
            u.gradient_into(x, &mut ga);
            let mut ha = vec![Complex64::ZERO; dim * dim];
            u.hessian_into(x, &mut ha);

            let mut errs = [0.0f64; 2];
            for (idx, h) in [2e-3, 1e-3].into_iter().enumerate() {
                let mut gf = vec![Complex64::ZERO; dim];
                u.gradient_fd_into(x, h, &mut gf);
                let mut hf = vec![Complex64::ZERO; dim * dim];
                u.hessian_fd_into(x, h, &mut hf);
                let eg: f64 = ga.iter().zip(&gf).map(|(a, b)| (a - b).norm()).sum();
                let eh: f64 = ha.iter().zip(&hf).map(|(a, b)| (a - b).norm()).sum();
                errs[idx] = eg + eh;
            }
            // Fourth-order terms vary wildly over the bump; accept [2.8, 5.6]
            // around the theoretical factor 4.
            let ratio = errs[0] / errs[1].max(1e-14);
            prop_assert!(ratio > 2.8 && ratio < 5.6, "ratio {ratio}, errs {errs:?}");
        }
    }
}
