//! Batch entry points behind the CLI: suite configs, report files, constant
//! estimation runs, and the case listing/description text.
//!
//! Reports are deterministic functions of the config: test functions derive
//! their seeds from (case id, base seed, index), quadrature sums are
//! accumulated in a fixed chunk order, and floats are printed with a fixed
//! format, so re-running a suite reproduces the summary CSV byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cp::{compute_constant, ConstantEstimate, ConstantOpts, CpError, Which};
use crate::fields::{make_system, radial_power_field, DirectionField, ScalarField, SystemKind};
use crate::identities::{
    case_library, registered_case_ids, test_fields_for_case, validate_case, verify_case,
    IdentityCase, IdentityError, IdentityReport, TestFieldPlan, TheoremKind, DEFAULT_BASE_SEED,
};
use crate::quadrature::{IntegrationDomain, QuadratureSpec};

pub const CONFIG_SCHEMA: &str = "1";

#[derive(Debug, Error)]
pub enum SuiteError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config schema: {0}")]
    Schema(String),
    #[error("unknown case id '{0}'")]
    UnknownCase(String),
    #[error("invalid case '{id}': {reason}")]
    InvalidCase { id: String, reason: String },
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("constant computation failed: {0}")]
    Constant(#[from] CpError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteConfig {
    pub schema: String,
    pub suite_name: String,
    #[serde(default)]
    pub cases: Vec<CaseRef>,
    /// Global quadrature override; inline per-case specs win over it.
    #[serde(default)]
    pub quadrature: Option<QuadratureSpec>,
    #[serde(default)]
    pub tolerance: Option<ToleranceOverride>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub test_functions: Option<TestFunctionOverride>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CaseRef {
    Id(String),
    Inline(Box<InlineCase>),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ToleranceOverride {
    #[serde(default)]
    pub rel_tol: Option<f64>,
    #[serde(default)]
    pub abs_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TestFunctionOverride {
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub complex: Option<bool>,
}

/// User-supplied case: weights given as closed forms, validated on load by
/// the strong-form residual check.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InlineCase {
    pub id: String,
    pub theorem: TheoremKind,
    pub system: SystemKind,
    pub p: f64,
    #[serde(rename = "N")]
    pub dim: usize,
    pub lambda: f64,
    pub phi: FieldForm,
    pub v_weight: FieldForm,
    pub w_weight: FieldForm,
    /// Only "radial" is recognised.
    #[serde(default)]
    pub z: Option<String>,
    pub support: SupportSpec,
    #[serde(default)]
    pub quadrature: Option<QuadratureSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SupportSpec {
    pub center: Vec<f64>,
    pub r_in: f64,
    pub r_out: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum FieldForm {
    Constant {
        value: f64,
    },
    RadialPower {
        exponent: f64,
        #[serde(default = "default_coefficient")]
        coefficient: f64,
    },
}

fn default_coefficient() -> f64 {
    1.0
}

impl FieldForm {
    fn build(&self, dim: usize) -> ScalarField {
        match *self {
            FieldForm::Constant { value } => {
                ScalarField::constant(dim, num_complex::Complex64::new(value, 0.0))
            }
            FieldForm::RadialPower { exponent, coefficient } => radial_power_field(dim, exponent)
                .scaled(num_complex::Complex64::new(coefficient, 0.0)),
        }
    }
}

pub fn load_config(path: &Path) -> Result<SuiteConfig, SuiteError> {
    let text = fs::read_to_string(path).map_err(|source| SuiteError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cfg: SuiteConfig =
        serde_json::from_str(&text).map_err(|e| SuiteError::Schema(e.to_string()))?;
    if cfg.schema != CONFIG_SCHEMA {
        return Err(SuiteError::Schema(format!(
            "unsupported schema version '{}', expected '{}'",
            cfg.schema, CONFIG_SCHEMA
        )));
    }
    Ok(cfg)
}

fn default_tols(theorem: TheoremKind) -> (f64, f64) {
    match theorem {
        TheoremKind::Rellich => (1e-4, 1e-12),
        TheoremKind::PoincareInterval => (1e-8, 1e-12),
        _ => (1e-5, 1e-12),
    }
}

/// Median strong-form residual above which an inline case is rejected as not
/// solving its declared equation at all (as opposed to merely failing the
/// integral identity check, which stays a verification failure).
const INLINE_REJECT_REL: f64 = 0.5;

const INLINE_VALIDATE_SEED: u64 = 0x10ad;

fn build_inline(inline: &InlineCase) -> Result<(IdentityCase, String), SuiteError> {
    let invalid = |reason: String| SuiteError::InvalidCase {
        id: inline.id.clone(),
        reason,
    };
    if matches!(inline.theorem, TheoremKind::PoincareInterval) {
        return Err(invalid("inline interval cases are not supported; use 'poincare-1d'".into()));
    }
    let system = make_system(inline.system.clone())
        .map_err(|e| invalid(format!("system: {e}")))?;
    if system.dim_n != inline.dim {
        return Err(invalid(format!(
            "system dimension {} does not match N = {}",
            system.dim_n, inline.dim
        )));
    }
    if inline.support.center.len() != inline.dim {
        return Err(invalid("support center dimension mismatch".into()));
    }
    if !(inline.support.r_in > 0.0 && inline.support.r_in < inline.support.r_out) {
        return Err(invalid("support radii must satisfy 0 < r_in < r_out".into()));
    }
    if !(inline.p > 1.0 && inline.p.is_finite()) {
        return Err(invalid(format!("p = {} outside (1, inf)", inline.p)));
    }
    if let FieldForm::Constant { value } = inline.v_weight {
        if value < 0.0 {
            return Err(invalid("V must be nonnegative".into()));
        }
    }
    let z_field = match (&inline.theorem, inline.z.as_deref()) {
        (TheoremKind::HardyDirectional, Some("radial")) => {
            if system.dim_l != system.dim_n {
                return Err(invalid(
                    "radial direction field needs l = N (euclidean systems)".into(),
                ));
            }
            Some(DirectionField::radial(inline.dim))
        }
        (TheoremKind::HardyDirectional, other) => {
            return Err(invalid(format!(
                "directional case needs z = \"radial\", got {other:?}"
            )));
        }
        (_, Some(z)) => return Err(invalid(format!("z = '{z}' only applies to directional cases"))),
        (_, None) => None,
    };
    let (rel, abs) = default_tols(inline.theorem);
    let case = IdentityCase {
        id: inline.id.clone(),
        theorem: inline.theorem,
        system,
        p: inline.p,
        dim: inline.dim,
        phi: inline.phi.build(inline.dim),
        v_weight: inline.v_weight.build(inline.dim),
        w_weight: inline.w_weight.build(inline.dim),
        lambda: inline.lambda,
        z_field,
        support: IntegrationDomain::Annulus {
            center: inline.support.center.clone(),
            r_in: inline.support.r_in,
            r_out: inline.support.r_out,
        },
        default_quad: inline.quadrature.clone().unwrap_or_default(),
        plan: TestFieldPlan::AnnularBumps { count: 5, complex: true },
        pass_rel_tol: rel,
        pass_abs_tol: abs,
        description: format!("inline case from config ('{}')", inline.id),
    };
    // Load-time validation: the data must at least approximately solve its
    // equation. Mild mismatches (e.g. a perturbed lambda) are left to the
    // identity check so the failure shows up in the reports.
    let median = validate_case(&case, 20, INLINE_VALIDATE_SEED)?;
    if !median.is_finite() || median > INLINE_REJECT_REL {
        return Err(invalid(format!(
            "strong-form residual median {median:.3e}; weights do not solve the declared equation"
        )));
    }
    let note = if median > 1e-6 {
        format!("inline validation: median strong-form residual {median:.3e}")
    } else {
        String::new()
    };
    Ok((case, note))
}

struct ResolvedCase {
    case: IdentityCase,
    quad: QuadratureSpec,
    note: String,
}

fn resolve(
    cfg: &SuiteConfig,
) -> Result<Vec<ResolvedCase>, SuiteError> {
    cfg.cases
        .iter()
        .map(|r| {
            let (mut case, note, inline_quad) = match r {
                CaseRef::Id(id) => {
                    let case = case_library(id).ok_or_else(|| SuiteError::UnknownCase(id.clone()))?;
                    (case, String::new(), None)
                }
                CaseRef::Inline(inline) => {
                    let (case, note) = build_inline(inline)?;
                    (case, note, inline.quadrature.clone())
                }
            };
            if let Some(t) = &cfg.tolerance {
                if let Some(rel) = t.rel_tol {
                    case.pass_rel_tol = rel;
                }
                if let Some(abs) = t.abs_tol {
                    case.pass_abs_tol = abs;
                }
            }
            let quad = inline_quad
                .or_else(|| cfg.quadrature.clone())
                .unwrap_or_else(|| case.default_quad.clone());
            Ok(ResolvedCase { case, quad, note })
        })
        .collect()
}

#[derive(Debug)]
pub struct SuiteOutcome {
    pub suite_name: String,
    pub all_pass: bool,
    pub reports: Vec<IdentityReport>,
    pub summary_csv: PathBuf,
    pub case_reports: Vec<PathBuf>,
}

#[derive(Serialize)]
struct CaseRecord<'a> {
    schema: &'a str,
    suite: &'a str,
    case_id: &'a str,
    runs: &'a [IdentityReport],
}

fn write_text(path: &Path, text: &str) -> Result<(), SuiteError> {
    fs::write(path, text).map_err(|source| SuiteError::Write {
        path: path.display().to_string(),
        source,
    })
}

/// Fixed-format float for the summary CSV; full round-trip precision so the
/// byte-identity requirement is meaningful.
fn csv_float(v: f64) -> String {
    format!("{v:.12e}")
}

pub fn run_suite(config_path: &Path, out_dir: &Path) -> Result<SuiteOutcome, SuiteError> {
    let cfg = load_config(config_path)?;
    run_suite_config(&cfg, out_dir)
}

pub fn run_suite_config(cfg: &SuiteConfig, out_dir: &Path) -> Result<SuiteOutcome, SuiteError> {
    let resolved = resolve(cfg)?;
    fs::create_dir_all(out_dir).map_err(|source| SuiteError::Write {
        path: out_dir.display().to_string(),
        source,
    })?;
    let base_seed = cfg.seed.unwrap_or(DEFAULT_BASE_SEED);
    let (count_override, complex_override) = cfg
        .test_functions
        .map(|t| (t.count, t.complex))
        .unwrap_or((None, None));

    // One worker per case; integrand evaluation inside a case is already
    // parallel per quadrature chunk.
    let per_case: Vec<Result<Vec<IdentityReport>, SuiteError>> = resolved
        .par_iter()
        .map(|rc| {
            let fields =
                test_fields_for_case(&rc.case, base_seed, count_override, complex_override);
            fields
                .iter()
                .map(|(label, u)| {
                    let mut rep = verify_case(&rc.case, u, label, &rc.quad)?;
                    if !rc.note.is_empty() {
                        rep.notes = rc.note.clone();
                    }
                    Ok(rep)
                })
                .collect()
        })
        .collect();

    let mut reports = Vec::new();
    let mut case_reports = Vec::new();
    for (rc, runs) in resolved.iter().zip(per_case) {
        let runs = runs?;
        let record = CaseRecord {
            schema: CONFIG_SCHEMA,
            suite: &cfg.suite_name,
            case_id: &rc.case.id,
            runs: &runs,
        };
        let path = out_dir.join(format!("{}.json", rc.case.id));
        let mut json = serde_json::to_string_pretty(&record).expect("report serializes");
        json.push('\n');
        write_text(&path, &json)?;
        case_reports.push(path);
        reports.extend(runs);
    }

    let mut csv = String::from("case_id,p,N,lhs,residual,rel_residual,pass\n");
    for r in &reports {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.case_id,
            r.p,
            r.dim,
            csv_float(r.lhs.value),
            csv_float(r.residual),
            csv_float(r.rel_residual),
            r.pass
        );
    }
    let summary_csv = out_dir.join("summary.csv");
    write_text(&summary_csv, &csv)?;

    Ok(SuiteOutcome {
        suite_name: cfg.suite_name.clone(),
        all_pass: reports.iter().all(|r| r.pass),
        reports,
        summary_csv,
        case_reports,
    })
}

#[derive(Serialize)]
struct ConstantsRecord {
    schema: &'static str,
    estimates: Vec<ConstantEstimate>,
}

/// Estimate the requested sharp constants for each p and write one JSON
/// record. Range errors (e.g. the p >= 2 branch asked for p < 2) abort.
pub fn compute_constants_cmd(
    p_list: &[f64],
    which_list: &[Which],
    out_dir: &Path,
) -> Result<(PathBuf, Vec<ConstantEstimate>), SuiteError> {
    let opts = ConstantOpts::default();
    let mut estimates = Vec::new();
    for &which in which_list {
        for &p in p_list {
            estimates.push(compute_constant(which, p, &opts)?);
        }
    }
    fs::create_dir_all(out_dir).map_err(|source| SuiteError::Write {
        path: out_dir.display().to_string(),
        source,
    })?;
    let path = out_dir.join("constants.json");
    let record = ConstantsRecord { schema: CONFIG_SCHEMA, estimates };
    let mut json = serde_json::to_string_pretty(&record).expect("estimates serialize");
    json.push('\n');
    write_text(&path, &json)?;
    Ok((path, record.estimates))
}

pub fn list_cases_text() -> String {
    let mut out = String::new();
    for id in registered_case_ids() {
        out.push_str(&id);
        out.push('\n');
    }
    out
}

fn system_summary(kind: &SystemKind) -> String {
    match kind {
        SystemKind::Euclidean { dim } => format!("euclidean, dimension {dim}"),
        SystemKind::Grushin { m, k, gamma } => {
            format!("grushin block (m = {m}, k = {k}, gamma = {gamma})")
        }
        SystemKind::Greiner { n, gamma } => format!("greiner (n = {n}, gamma = {gamma})"),
        SystemKind::Custom { name } => format!("custom '{name}'"),
    }
}

pub fn describe_case_text(id: &str) -> Result<String, SuiteError> {
    let case = case_library(id).ok_or_else(|| SuiteError::UnknownCase(id.to_string()))?;
    let theorem = match case.theorem {
        TheoremKind::Hardy => "first-order identity (full horizontal gradient)",
        TheoremKind::HardyDirectional => "first-order identity (projected on a direction field)",
        TheoremKind::Rellich => "second-order identity",
        TheoremKind::PoincareInterval => "interval p = 2 identity",
    };
    let support = match &case.support {
        IntegrationDomain::Annulus { center, r_in, r_out } => {
            format!("annulus center {center:?}, radii [{r_in}, {r_out}]")
        }
        IntegrationDomain::Box { lo, hi } => format!("box {lo:?} .. {hi:?}"),
    };
    let plan = match &case.plan {
        TestFieldPlan::AnnularBumps { count, complex } => format!(
            "{count} random annular bumps{}",
            if *complex { " (complex phases, last one real)" } else { " (real)" }
        ),
        TestFieldPlan::Fixed(list) => format!(
            "fixed list: {}",
            list.iter().map(|(l, _)| l.as_str()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut out = String::new();
    let _ = writeln!(out, "case:        {}", case.id);
    let _ = writeln!(out, "theorem:     {theorem}");
    let _ = writeln!(out, "system:      {}", system_summary(&case.system.kind));
    let _ = writeln!(out, "p:           {}", case.p);
    let _ = writeln!(out, "N:           {}", case.dim);
    let _ = writeln!(out, "lambda:      {:.12e}", case.lambda);
    let _ = writeln!(out, "support:     {support}");
    let _ = writeln!(
        out,
        "quadrature:  {} points per angular axis, {} radial",
        case.default_quad.points_per_axis,
        case.default_quad
            .radial_points
            .unwrap_or(case.default_quad.points_per_axis)
    );
    let _ = writeln!(out, "test plan:   {plan}");
    let _ = writeln!(
        out,
        "pass rule:   residual <= max({:.0e}, {:.0e} |lhs|) + quadrature error",
        case.pass_abs_tol, case.pass_rel_tol
    );
    let _ = writeln!(out, "description: {}", case.description);
    Ok(out)
}
