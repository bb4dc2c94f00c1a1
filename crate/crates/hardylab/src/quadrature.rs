//! Deterministic tensor Gauss-Legendre quadrature over boxes and annuli.
//!
//! Annuli are mapped to a box of hyperspherical coordinates
//! (r, theta_1..theta_{N-2}, psi) with Jacobian r^(N-1) prod_i sin^(N-1-i)(theta_i),
//! which keeps the integrand smooth in every dimension (2 <= N <= 8); a 1-d
//! annulus is the union of two intervals. Error estimates come from comparing
//! two rule orders on the same domain. Node evaluation is parallel over
//! fixed-size chunks with a sequential final sum, so results are bitwise
//! independent of the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid quadrature spec: {0}")]
    InvalidSpec(String),
    #[error("non-finite integrand value (component {component}) at {point:?}")]
    NonFinite { point: Vec<f64>, component: usize },
}

/// Region of integration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum IntegrationDomain {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Annulus { center: Vec<f64>, r_in: f64, r_out: f64 },
}

impl IntegrationDomain {
    pub fn dim(&self) -> usize {
        match self {
            IntegrationDomain::Box { lo, .. } => lo.len(),
            IntegrationDomain::Annulus { center, .. } => center.len(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            IntegrationDomain::Box { lo, hi } => {
                x.len() == lo.len()
                    && x.iter().zip(lo).all(|(v, l)| v >= l)
                    && x.iter().zip(hi).all(|(v, h)| v <= h)
            }
            IntegrationDomain::Annulus { center, r_in, r_out } => {
                if x.len() != center.len() {
                    return false;
                }
                let r2: f64 = x.iter().zip(center).map(|(v, c)| (v - c) * (v - c)).sum();
                r2 >= r_in * r_in && r2 <= r_out * r_out
            }
        }
    }

    fn validate(&self) -> Result<(), QuadError> {
        match self {
            IntegrationDomain::Box { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(QuadError::InvalidDomain(format!(
                        "box bounds have lengths {} and {}",
                        lo.len(),
                        hi.len()
                    )));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l < h)) {
                    return Err(QuadError::InvalidDomain("box needs lo < hi per axis".into()));
                }
            }
            IntegrationDomain::Annulus { center, r_in, r_out } => {
                if center.is_empty() {
                    return Err(QuadError::InvalidDomain("annulus center is empty".into()));
                }
                if center.len() > 8 {
                    return Err(QuadError::InvalidDomain(format!(
                        "annulus dimension {} exceeds the tensor-rule cap of 8",
                        center.len()
                    )));
                }
                if !(0.0 <= *r_in && r_in < r_out && r_out.is_finite()) {
                    return Err(QuadError::InvalidDomain(format!(
                        "annulus needs 0 <= r_in < r_out, got [{r_in}, {r_out}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Base 1-d rule family; tensorized per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseRule {
    GaussLegendre,
}

/// Tensor rule parameters. `points_per_axis` applies to every mapped axis;
/// for annuli `radial_points` (default: same) overrides the radial axis,
/// which carries the boundary-layer behavior of compactly supported test
/// functions and wants more points than the angular axes. `rel_tol`,
/// `abs_tol` and `max_refine_depth` drive `refine_until`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub base_rule: BaseRule,
    pub points_per_axis: usize,
    pub radial_points: Option<usize>,
    pub max_refine_depth: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            base_rule: BaseRule::GaussLegendre,
            points_per_axis: 16,
            radial_points: None,
            max_refine_depth: 8,
            rel_tol: 1e-9,
            abs_tol: 1e-12,
        }
    }
}

impl QuadratureSpec {
    fn validate(&self) -> Result<(), QuadError> {
        if self.points_per_axis < 2 || self.points_per_axis > MAX_RULE_ORDER {
            return Err(QuadError::InvalidSpec(format!(
                "points_per_axis = {} outside [2, {MAX_RULE_ORDER}]",
                self.points_per_axis
            )));
        }
        if let Some(r) = self.radial_points {
            if r < 2 || r > MAX_RULE_ORDER {
                return Err(QuadError::InvalidSpec(format!(
                    "radial_points = {r} outside [2, {MAX_RULE_ORDER}]"
                )));
            }
        }
        if !(self.rel_tol > 0.0) || !(self.abs_tol >= 0.0) {
            return Err(QuadError::InvalidSpec(
                "tolerances must be positive (rel) and nonnegative (abs)".into(),
            ));
        }
        Ok(())
    }

    fn radial(&self) -> usize {
        self.radial_points.unwrap_or(self.points_per_axis)
    }
}

pub const MAX_RULE_ORDER: usize = 200;

/// Gauss-Legendre nodes and weights on [-1, 1], cached per order.
/// Roots of P_k by Newton iteration on the three-term recurrence.
pub fn gauss_legendre(k: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(k >= 1 && k <= MAX_RULE_ORDER, "rule order {k} out of range");
    static CACHE: OnceLock<Mutex<HashMap<usize, (Vec<f64>, Vec<f64>)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(&k) {
        return hit.clone();
    }

    let mut nodes = vec![0.0; k];
    let mut weights = vec![0.0; k];
    for i in 0..(k + 1) / 2 {
        // Chebyshev-flavored initial guess, then Newton.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (k as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_with_derivative(k, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(k, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[k - 1 - i] = x;
        weights[i] = w;
        weights[k - 1 - i] = w;
    }
    if k % 2 == 1 {
        nodes[k / 2] = 0.0;
    }
    let out = (nodes, weights);
    cache.lock().unwrap().insert(k, out.clone());
    out
}

fn legendre_with_derivative(k: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for j in 1..k {
        let jf = j as f64;
        let p2 = ((2.0 * jf + 1.0) * x * p1 - jf * p0) / (jf + 1.0);
        p0 = p1;
        p1 = p2;
    }
    let dp = if k == 1 {
        1.0
    } else {
        k as f64 * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, dp)
}

/// How a mapped box of parameters turns into points of the original domain.
#[derive(Debug, Clone)]
enum Map {
    Identity,
    /// N = 2: x = c + r (cos a, sin a), Jacobian r.
    Polar { center: Vec<f64> },
    /// N >= 3: coordinates (r, theta_1..theta_{N-2}, psi),
    /// Jacobian r^(N-1) prod_i sin^(N-1-i)(theta_i).
    HyperSpherical { center: Vec<f64> },
}

#[derive(Debug, Clone)]
struct MappedBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
    map: Map,
    /// Axis 0 is radial (uses `radial_points`) for the non-identity maps.
    has_radial_axis: bool,
}

impl MappedBox {
    /// Maps parameter vector `y` to a domain point in `x`; returns the Jacobian.
    fn apply(&self, y: &[f64], x: &mut [f64]) -> f64 {
        match &self.map {
            Map::Identity => {
                x.copy_from_slice(y);
                1.0
            }
            Map::Polar { center } => {
                let (r, a) = (y[0], y[1]);
                x[0] = center[0] + r * a.cos();
                x[1] = center[1] + r * a.sin();
                r
            }
            Map::HyperSpherical { center } => {
                let n = center.len();
                let r = y[0];
                let mut jac = r.powi(n as i32 - 1);
                let mut sinprod = 1.0;
                for i in 0..n - 1 {
                    let ang = y[1 + i];
                    x[i] = center[i] + r * sinprod * ang.cos();
                    if i < n - 2 {
                        jac *= ang.sin().powi((n - 2 - i) as i32);
                    }
                    sinprod *= ang.sin();
                }
                x[n - 1] = center[n - 1] + r * sinprod;
                jac
            }
        }
    }
}

fn mapped_pieces(domain: &IntegrationDomain) -> Result<Vec<MappedBox>, QuadError> {
    domain.validate()?;
    Ok(match domain {
        IntegrationDomain::Box { lo, hi } => vec![MappedBox {
            lo: lo.clone(),
            hi: hi.clone(),
            map: Map::Identity,
            has_radial_axis: false,
        }],
        IntegrationDomain::Annulus { center, r_in, r_out } => {
            let n = center.len();
            match n {
                1 => vec![
                    MappedBox {
                        lo: vec![center[0] - r_out],
                        hi: vec![center[0] - r_in],
                        map: Map::Identity,
                        has_radial_axis: false,
                    },
                    MappedBox {
                        lo: vec![center[0] + r_in],
                        hi: vec![center[0] + r_out],
                        map: Map::Identity,
                        has_radial_axis: false,
                    },
                ],
                2 => vec![MappedBox {
                    lo: vec![*r_in, 0.0],
                    hi: vec![*r_out, std::f64::consts::TAU],
                    map: Map::Polar { center: center.clone() },
                    has_radial_axis: true,
                }],
                _ => {
                    let mut lo = vec![*r_in];
                    let mut hi = vec![*r_out];
                    for _ in 0..n - 2 {
                        lo.push(0.0);
                        hi.push(std::f64::consts::PI);
                    }
                    lo.push(0.0);
                    hi.push(std::f64::consts::TAU);
                    vec![MappedBox {
                        lo,
                        hi,
                        map: Map::HyperSpherical { center: center.clone() },
                        has_radial_axis: true,
                    }]
                }
            }
        }
    })
}

/// Fixed chunk size for the parallel node sweep. Partial sums are formed per
/// chunk and reduced in chunk order, so the result does not depend on the
/// rayon thread count.
const CHUNK_NODES: usize = 8192;

struct AxisRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

fn scaled_axis_rule(k: usize, lo: f64, hi: f64) -> AxisRule {
    let (xs, ws) = gauss_legendre(k);
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    AxisRule {
        nodes: xs.iter().map(|x| mid + half * x).collect(),
        weights: ws.iter().map(|w| w * half).collect(),
    }
}

fn eval_rule_on_piece<F>(
    f: &F,
    ncomp: usize,
    piece: &MappedBox,
    k_axis: usize,
    k_radial: usize,
    acc: &mut [f64],
) -> Result<(), QuadError>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let dim = piece.lo.len();
    let axes: Vec<AxisRule> = (0..dim)
        .map(|a| {
            let k = if piece.has_radial_axis && a == 0 { k_radial } else { k_axis };
            scaled_axis_rule(k, piece.lo[a], piece.hi[a])
        })
        .collect();
    let counts: Vec<usize> = axes.iter().map(|r| r.nodes.len()).collect();
    let total: usize = counts.iter().product();
    let nchunks = total.div_ceil(CHUNK_NODES);

    let partials: Vec<Result<Vec<f64>, QuadError>> = (0..nchunks)
        .into_par_iter()
        .map(|ci| {
            let start = ci * CHUNK_NODES;
            let end = (start + CHUNK_NODES).min(total);
            let mut acc = vec![0.0; ncomp];
            let mut y = vec![0.0; dim];
            let mut x = vec![0.0; dim];
            let mut out = vec![0.0; ncomp];
            for flat in start..end {
                let mut rem = flat;
                let mut wt = 1.0;
                for a in (0..dim).rev() {
                    let idx = rem % counts[a];
                    rem /= counts[a];
                    y[a] = axes[a].nodes[idx];
                    wt *= axes[a].weights[idx];
                }
                let jac = piece.apply(&y, &mut x);
                f(&x, &mut out);
                for c in 0..ncomp {
                    if !out[c].is_finite() {
                        return Err(QuadError::NonFinite { point: x.clone(), component: c });
                    }
                    acc[c] += wt * jac * out[c];
                }
            }
            Ok(acc)
        })
        .collect();

    for part in partials {
        let part = part?;
        for c in 0..ncomp {
            acc[c] += part[c];
        }
    }
    Ok(())
}

fn eval_rule<F>(
    f: &F,
    ncomp: usize,
    pieces: &[MappedBox],
    k_axis: usize,
    k_radial: usize,
) -> Result<Vec<f64>, QuadError>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let mut acc = vec![0.0; ncomp];
    for piece in pieces {
        eval_rule_on_piece(f, ncomp, piece, k_axis, k_radial, &mut acc)?;
    }
    Ok(acc)
}

fn lower_orders(spec: &QuadratureSpec) -> (usize, usize) {
    let k = spec.points_per_axis;
    let kr = spec.radial();
    ((k - 2).max(1), (kr.saturating_sub(4)).max(1))
}

/// Integrates `ncomp` components in a single sweep. Returns per-component
/// values and error estimates (difference against a lower-order rule on the
/// same domain). All identity verifications use this so every term shares one
/// set of nodes.
pub fn integrate_many<F>(
    f: F,
    ncomp: usize,
    domain: &IntegrationDomain,
    spec: &QuadratureSpec,
) -> Result<(Vec<f64>, Vec<f64>), QuadError>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    spec.validate()?;
    if ncomp == 0 {
        return Err(QuadError::InvalidSpec("ncomp must be positive".into()));
    }
    let pieces = mapped_pieces(domain)?;
    let hi = eval_rule(&f, ncomp, &pieces, spec.points_per_axis, spec.radial())?;
    let (klo, krlo) = lower_orders(spec);
    let lo = eval_rule(&f, ncomp, &pieces, klo, krlo)?;
    let err = hi.iter().zip(lo.iter()).map(|(a, b)| (a - b).abs()).collect();
    Ok((hi, err))
}

/// Scalar integral with a two-order error estimate.
pub fn integrate<F>(
    f: F,
    domain: &IntegrationDomain,
    spec: &QuadratureSpec,
) -> Result<(f64, f64), QuadError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let (v, e) = integrate_many(|x, out| out[0] = f(x), 1, domain, spec)?;
    Ok((v[0], e[0]))
}

/// Outcome of adaptive refinement. When `converged` is false the depth budget
/// ran out and `err_est` exceeds the requested tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct QuadOutcome {
    pub value: f64,
    pub err_est: f64,
    pub converged: bool,
    pub cells: usize,
}

/// Adaptive bisection in the mapped coordinates: cells whose two-order
/// estimates agree within tolerance are accepted, others split along their
/// widest axis up to `max_refine_depth`. Deterministic: depth-first with a
/// fixed child order and sequential accumulation.
pub fn refine_until<F>(
    f: F,
    domain: &IntegrationDomain,
    spec: &QuadratureSpec,
) -> Result<QuadOutcome, QuadError>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    spec.validate()?;
    let pieces = mapped_pieces(domain)?;
    let g = |x: &[f64], out: &mut [f64]| out[0] = f(x);

    // Whole-domain magnitude anchor for the absolute floor of the per-cell test.
    let mut rough = vec![0.0; 1];
    for piece in &pieces {
        eval_rule_on_piece(&g, 1, piece, spec.points_per_axis, spec.radial(), &mut rough)?;
    }
    let anchor = rough[0].abs();

    let total_volume: f64 = pieces
        .iter()
        .map(|p| p.lo.iter().zip(&p.hi).map(|(l, h)| h - l).product::<f64>())
        .sum();

    let mut value = 0.0;
    let mut err_total = 0.0;
    let mut local_ok = true;
    let mut cells = 0usize;

    for piece in &pieces {
        let mut stack = vec![(piece.lo.clone(), piece.hi.clone(), 0usize)];
        while let Some((lo, hi, depth)) = stack.pop() {
            let cell = MappedBox {
                lo: lo.clone(),
                hi: hi.clone(),
                map: piece.map.clone(),
                has_radial_axis: piece.has_radial_axis,
            };
            let mut vhi = vec![0.0; 1];
            eval_rule_on_piece(&g, 1, &cell, spec.points_per_axis, spec.radial(), &mut vhi)?;
            let (klo, krlo) = lower_orders(spec);
            let mut vlo = vec![0.0; 1];
            eval_rule_on_piece(&g, 1, &cell, klo, krlo, &mut vlo)?;
            let err = (vhi[0] - vlo[0]).abs();
            let vol_frac = lo
                .iter()
                .zip(&hi)
                .map(|(l, h)| h - l)
                .product::<f64>()
                / total_volume;
            // Split the global budget max(abs_tol, rel_tol * |whole integral|)
            // across cells by volume fraction, so accepted-cell errors sum to
            // at most the global target. A cell may also pass on its own
            // relative agreement.
            let tol_cell = (spec.rel_tol * vhi[0].abs())
                .max(spec.abs_tol.max(spec.rel_tol * anchor) * vol_frac);
            if err <= tol_cell || depth >= spec.max_refine_depth {
                if err > tol_cell {
                    local_ok = false;
                }
                value += vhi[0];
                err_total += err;
                cells += 1;
            } else {
                let (axis, _) = lo
                    .iter()
                    .zip(&hi)
                    .map(|(l, h)| h - l)
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, w)| {
                        if w > best.1 { (i, w) } else { best }
                    });
                let mid = 0.5 * (lo[axis] + hi[axis]);
                let mut hi_left = hi.clone();
                hi_left[axis] = mid;
                let mut lo_right = lo.clone();
                lo_right[axis] = mid;
                // Push right first so the left child is processed first.
                stack.push((lo_right, hi.clone(), depth + 1));
                stack.push((lo.clone(), hi_left, depth + 1));
            }
        }
    }

    // Depth exhaustion in a few cells is harmless if the summed estimate
    // still meets the requested tolerance.
    let converged =
        local_ok || err_total <= spec.abs_tol.max(spec.rel_tol * value.abs());
    Ok(QuadOutcome { value, err_est: err_total, converged, cells })
}
