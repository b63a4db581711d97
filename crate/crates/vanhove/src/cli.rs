//! Command-line front end: config ingestion, the verification subcommands,
//! and CSV emission.
//!
//! One TOML file carries the model (a named preset or explicit matrices),
//! the quadrature orders, the sweep grids, and the output routing; every
//! subcommand reads the sections it needs.  Data goes to standard output
//! as CSV with a header row, comma separators, `.` decimals, LF endings,
//! and metadata in leading `#` comment lines; residual tables and
//! diagrams are plain text.  The exit contract is stable across commands:
//! 0 when every check passes, 1 when a checked property fails, 2 on usage
//! or parse errors.  Identical invocations produce byte-identical output;
//! `VANHOVE_THREADS` caps the sweep parallelism.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::bounds::{self, ClusteringData};
use crate::davies;
use crate::diagram::{self, IndexSubsetA, NoncrossingPartition};
use crate::dyson::{self, SimplexGrid};
use crate::model::{
    bohr_decomposition, preset, validate, ExponentialPhi, PresetKind, RawModel, SystemBathModel,
};
use crate::nz::{build_projections, verify_projection_algebra, ProjectionPair};
use crate::opcore::{max_abs, Operator, C64};
use crate::{Error, Result};

const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Parsed run configuration.  Only the model section is mandatory; the
/// others fall back to the defaults below.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    #[serde(default)]
    pub quadrature: QuadratureSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub output: OutputSection,
}

/// Model input: a preset name or explicit matrices, not both.  Matrices
/// are nested arrays of `[re, im]` pairs, row by row; `omega_r` is one
/// such row.  `analytic_phi` and `clustering` override the preset's
/// companion data or supply it for explicit models.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub preset: Option<String>,
    pub h_s: Option<Vec<Vec<Vec<f64>>>>,
    pub h_r: Option<Vec<Vec<Vec<f64>>>>,
    pub w: Option<Vec<Vec<Vec<f64>>>>,
    pub v: Option<Vec<Vec<Vec<f64>>>>,
    pub omega_r: Option<Vec<Vec<f64>>>,
    pub lambda: Option<f64>,
    pub analytic_phi: Option<PhiSection>,
    pub clustering: Option<ClusteringSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiSection {
    pub gamma: f64,
    pub tau_c: f64,
    #[serde(default)]
    pub nu: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusteringSection {
    pub c: f64,
    pub f_amp: f64,
    pub f_rate: f64,
    pub epsilon: f64,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureSection {
    /// Gauss nodes per simplex axis for the kernel coefficients.
    pub simplex_order: usize,
    /// Gauss order per panel for the generator integral.
    pub davies_order: usize,
    /// Nodes per axis for the nested reference quadratures in `bounds`.
    pub bounds_nodes: usize,
    pub seed: u64,
}

impl Default for QuadratureSection {
    fn default() -> Self {
        QuadratureSection {
            simplex_order: dyson::DEFAULT_AXIS_ORDER,
            davies_order: davies::DEFAULT_QUAD_ORDER,
            bounds_nodes: 24,
            seed: 0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub lambda_grid: Vec<f64>,
    pub tau_grid: Vec<f64>,
    /// Weight exponent for the epsilon-route estimates.
    pub epsilon: f64,
    /// Generator integration horizon; presets carry a default.
    pub cutoff: Option<f64>,
    /// Pre-recurrence window; presets carry a default.
    pub window: Option<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            lambda_grid: vec![0.4, 0.2, 0.1],
            tau_grid: vec![1.0],
            epsilon: 0.5,
            cutoff: None,
            window: None,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: Option<PathBuf>,
    /// Accepted entries: "csv".  Absent means csv.
    pub formats: Option<Vec<String>>,
}

impl RunConfig {
    /// Parse from TOML text.  Parser errors keep their line and column
    /// information.
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    fn check(&self) -> Result<()> {
        if self.sweep.lambda_grid.is_empty() {
            return Err(Error::Config("sweep.lambda_grid must be nonempty".into()));
        }
        if self.sweep.tau_grid.is_empty() {
            return Err(Error::Config("sweep.tau_grid must be nonempty".into()));
        }
        if let Some(formats) = &self.output.formats {
            for f in formats {
                if f != "csv" {
                    return Err(Error::Config(format!(
                        "unsupported output format '{f}' (csv is the only data format)"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// A model resolved from a config, still unvalidated, together with the
/// companion data the commands consume.  Preset configs inherit the
/// preset's correlation function, clustering certificate, window, and
/// cutoff; explicit configs supply their own or go without.
#[derive(Debug)]
pub struct LoadedModel {
    pub name: String,
    pub raw: RawModel,
    pub analytic_phi: Option<ExponentialPhi>,
    pub clustering: Option<ClusteringData>,
    pub window: Option<f64>,
    pub cutoff: Option<f64>,
}

impl LoadedModel {
    /// Validate and build the model with its projection pair.
    pub fn build(&self) -> Result<(SystemBathModel, ProjectionPair)> {
        let model = SystemBathModel::from_raw(self.raw.clone())?;
        let pair = build_projections(&model);
        Ok((model, pair))
    }
}

fn missing(field: &'static str) -> impl FnOnce() -> Error {
    move || Error::Config(format!("model.{field} is required when no preset is named"))
}

fn matrix_from_rows(name: &str, rows: &[Vec<Vec<f64>>]) -> Result<DMatrix<C64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::Config(format!("model.{name} must have at least one entry")));
    }
    let cols = rows[0].len();
    for (j, row) in rows.iter().enumerate() {
        if row.len() != cols {
            return Err(Error::Config(format!(
                "model.{name} row {j} has {} entries, expected {cols}",
                row.len()
            )));
        }
        for (k, entry) in row.iter().enumerate() {
            if entry.len() != 2 {
                return Err(Error::Config(format!(
                    "model.{name} row {j} entry {k} has {} components, expected [re, im]",
                    entry.len()
                )));
            }
        }
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |r, c| C64::new(rows[r][c][0], rows[r][c][1])))
}

fn vector_from_row(name: &str, row: &[Vec<f64>]) -> Result<DVector<C64>> {
    if row.is_empty() {
        return Err(Error::Config(format!("model.{name} must have at least one entry")));
    }
    for (k, entry) in row.iter().enumerate() {
        if entry.len() != 2 {
            return Err(Error::Config(format!(
                "model.{name} entry {k} has {} components, expected [re, im]",
                entry.len()
            )));
        }
    }
    Ok(DVector::from_fn(row.len(), |r, _| C64::new(row[r][0], row[r][1])))
}

/// Resolve the model section without validating the result, so that
/// `validate` can report on bad explicit input instead of refusing it.
pub fn resolve_model(config: &RunConfig) -> Result<LoadedModel> {
    let m = &config.model;
    let explicit = m.h_s.is_some()
        || m.h_r.is_some()
        || m.w.is_some()
        || m.v.is_some()
        || m.omega_r.is_some();
    let (name, mut raw, mut phi, mut clustering, mut window, mut cutoff) = match &m.preset {
        Some(preset_name) => {
            if explicit {
                return Err(Error::Config(
                    "model names a preset and also explicit matrices; pick one".into(),
                ));
            }
            let kind = PresetKind::from_name(preset_name)?;
            let bundle = preset(kind, config.quadrature.seed);
            let raw = RawModel {
                h_s: bundle.model.h_s().clone(),
                h_r: bundle.model.h_r().clone(),
                w: bundle.model.w().clone(),
                v: bundle.model.v().clone(),
                omega_r: bundle.model.omega_r().clone(),
                lambda: bundle.model.lambda(),
            };
            (
                kind.name().to_string(),
                raw,
                Some(bundle.analytic_phi),
                Some(bundle.clustering),
                Some(bundle.recurrence_window),
                Some(bundle.davies_cutoff),
            )
        }
        None => {
            let raw = RawModel {
                h_s: matrix_from_rows("h_s", m.h_s.as_deref().ok_or_else(missing("h_s"))?)?,
                h_r: matrix_from_rows("h_r", m.h_r.as_deref().ok_or_else(missing("h_r"))?)?,
                w: matrix_from_rows("w", m.w.as_deref().ok_or_else(missing("w"))?)?,
                v: matrix_from_rows("v", m.v.as_deref().ok_or_else(missing("v"))?)?,
                omega_r: vector_from_row(
                    "omega_r",
                    m.omega_r.as_deref().ok_or_else(missing("omega_r"))?,
                )?,
                lambda: 1.0,
            };
            ("custom".to_string(), raw, None, None, None, None)
        }
    };
    if let Some(l) = m.lambda {
        raw.lambda = l;
    }
    if let Some(p) = &m.analytic_phi {
        phi = Some(ExponentialPhi { gamma: p.gamma, tau_c: p.tau_c, nu: p.nu });
    }
    if let Some(c) = &m.clustering {
        clustering =
            Some(ClusteringData { c: c.c, f_amp: c.f_amp, f_rate: c.f_rate, epsilon: c.epsilon });
    }
    if let Some(w) = config.sweep.window {
        window = Some(w);
    }
    if let Some(t) = config.sweep.cutoff {
        cutoff = Some(t);
    }
    Ok(LoadedModel { name, raw, analytic_phi: phi, clustering, window, cutoff })
}

/// Label tying a validation check to the structural requirement it
/// enforces: A1 a self-adjoint bath generator, A2 an invariant unit bath
/// vector, A3 a finite-dimensional self-adjoint system, A4 a self-adjoint
/// centered coupling on the product space.
fn assumption_label(check: &str) -> &'static str {
    match check {
        "h_r_hermitian" => "A1",
        "omega_normalized" | "bath_ground_state" => "A2",
        "h_s_hermitian" | "dimension_cap" => "A3",
        "w_hermitian" | "v_hermitian" | "shapes_consistent" | "coupling_centered" => "A4",
        _ => "model input",
    }
}

// ---------------------------------------------------------------- commands

/// Write to standard output and return `code`.  A closed pipe downstream
/// is a normal end of output, not a failure: the exit code computed from
/// the checks survives truncation by the consumer.
fn emit(out: &str, code: i32) -> Result<i32> {
    use std::io::Write;
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    match lock.write_all(out.as_bytes()).and_then(|()| lock.flush()) {
        Ok(()) => Ok(code),
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(code),
        Err(e) => Err(Error::Io(e)),
    }
}

/// Residual tables for the structural checks and the projection algebra.
/// Exit 0 only when every check passes.
pub fn cmd_validate(config_path: &Path) -> Result<i32> {
    let config = RunConfig::load(config_path)?;
    let loaded = resolve_model(&config)?;
    let report = validate(&loaded.raw);
    let mut out = report.to_string();
    if !report.pass() {
        for check in report.checks.iter().filter(|c| !c.pass) {
            out.push_str(&format!(
                "assumption {} violated by {} (residual {:.4e})\n",
                assumption_label(check.name),
                check.name,
                check.residual
            ));
        }
        return emit(&out, 1);
    }
    let (model, pair) = loaded.build()?;
    let algebra = verify_projection_algebra(&model, &pair);
    out.push_str(&algebra.to_string());
    emit(&out, if algebra.pass() { 0 } else { 1 })
}

/// Order-n kernel coefficient by the requested route(s), emitted entry by
/// entry.  In `both` mode the two routes are compared and a residual
/// above `1e-8` fails the run.
pub fn cmd_kn(config_path: &Path, n: usize, t: f64, mode: &str) -> Result<i32> {
    let config = RunConfig::load(config_path)?;
    let loaded = resolve_model(&config)?;
    let (model, pair) = loaded.build()?;
    // Order gates come before grid construction; the grid alone costs
    // order^(n+1) nodes.
    if n == 0 || n > diagram::MAX_DIAGRAM_ORDER {
        return Err(Error::Unsupported(format!(
            "kernel orders run from 1 to {}; got n = {n}",
            diagram::MAX_DIAGRAM_ORDER
        )));
    }
    if matches!(mode, "brute" | "both") && n > 3 {
        return Err(Error::Unsupported(format!(
            "mode '{mode}' needs the brute-force route, which is capped at n = 3; got n = {n} \
             (the diagram route reaches this order)"
        )));
    }
    let grid = SimplexGrid::new(n, t, config.quadrature.simplex_order)?;
    let brute = match mode {
        "brute" | "both" => Some(dyson::k_n_bruteforce(&model, &pair, n, t, &grid)?),
        _ => None,
    };
    let comb = match mode {
        "diagram" | "both" => Some(diagram::k_n_combinatorial(&model, &pair, n, t, &grid)?),
        _ => None,
    };
    let residual = match (&brute, &comb) {
        (Some(b), Some(c)) => Some(max_abs(&(b.mat() - c.mat()))),
        _ => None,
    };
    let shown = comb.as_ref().or(brute.as_ref()).expect("one route always runs");

    let mut out = String::new();
    out.push_str(&format!(
        "# preset={} n={n} t={t} mode={mode} version={VERSION}\n",
        loaded.name
    ));
    if let Some(r) = residual {
        out.push_str(&format!("# max_residual={r:.16e}\n"));
    }
    out.push_str("row,col,re,im\n");
    let mat = shown.mat();
    for r in 0..mat.nrows() {
        for c in 0..mat.ncols() {
            let z = mat[(r, c)];
            out.push_str(&format!("{r},{c},{:.16e},{:.16e}\n", z.re, z.im));
        }
    }
    let code = match residual {
        Some(r) if r > 1e-8 => 1,
        _ => 0,
    };
    emit(&out, code)
}

fn convergence_csv(name: &str, seed: u64, report: &davies::ConvergenceReport) -> String {
    let mut out = format!("# preset={name} seed={seed} version={VERSION}\n");
    out.push_str("lambda,tau,error,flagged\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{:.16e},{:.16e},{:.16e},{}\n",
            row.lambda, row.tau, row.error, row.flagged
        ));
    }
    out
}

/// Sweep the coupling and rescaled-time grids, comparing the true reduced
/// propagator against the limiting semigroup built from the model's own
/// correlation function.  The reference generator is the cutoff-averaged
/// finite-bath one: the sharp cutoff never settles for a quasi-periodic
/// correlator, the average does.  Rows outside the recurrence window are
/// flagged and warned about, not failed: the reference there is not
/// converged.
pub fn cmd_converge(config_path: &Path) -> Result<i32> {
    let config = RunConfig::load(config_path)?;
    let loaded = resolve_model(&config)?;
    let (model, pair) = loaded.build()?;
    let cutoff = loaded.cutoff.ok_or_else(|| {
        Error::Config("sweep.cutoff is required for models without a preset".into())
    })?;
    let window = loaded.window.ok_or_else(|| {
        Error::Config("sweep.window is required for models without a preset".into())
    })?;
    let spectrum = bohr_decomposition(&Operator::hermitian(model.h_s().clone())?, model.d_r())?;
    let gen =
        davies::davies_k_finite_cesaro(&model, &pair, cutoff, config.quadrature.davies_order)?
            .averaged(&spectrum, &pair)?;
    let report = davies::vanhove_convergence(
        &model,
        &pair,
        &gen,
        &config.sweep.tau_grid,
        &config.sweep.lambda_grid,
        window,
        config.quadrature.seed,
    )?;
    let csv = convergence_csv(&loaded.name, config.quadrature.seed, &report);
    if let Some(dir) = &config.output.directory {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("convergence.csv"), csv.as_bytes())?;
    }
    if report.any_flagged() {
        let flagged = report.rows.iter().filter(|r| r.flagged).count();
        eprintln!(
            "warning: {flagged} of {} rows have tau/lambda^2 beyond the recurrence window {window}; \
             the finite bath is not mixing there and those errors are not meaningful",
            report.rows.len()
        );
    }
    emit(&csv, 0)
}

fn fact(k: usize) -> f64 {
    (1..=k).map(|j| j as f64).product()
}

/// Golden-section maximization on `[lo, hi]`, 200 contractions.
fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let ratio = (5.0_f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - ratio * (hi - lo);
        let b = lo + ratio * (hi - lo);
        if f(a) < f(b) {
            lo = a;
        } else {
            hi = b;
        }
    }
    f(0.5 * (lo + hi))
}

fn bounds_lemma_a(config: &RunConfig) -> Result<i32> {
    let nodes = config.quadrature.bounds_nodes;
    let t = 1.0;
    let g = |s: f64| (-s).exp();
    let mut out = format!("# which=lemmaA t={t} version={VERSION}\n");
    out.push_str("m,k,i,lhs,rhs,pass\n");
    let mut all_pass = true;
    for m in 0..=3 {
        for k in 1..=m + 1 {
            for i in 0..k {
                let lhs = bounds::simplex_moment(g, m, k, i, t)?;
                let rhs = bounds::simplex_moment_bruteforce(g, m, k, i, t, nodes)?;
                let pass = (lhs - rhs).abs() <= 1e-6 * rhs.abs().max(1e-12);
                all_pass &= pass;
                out.push_str(&format!("{m},{k},{i},{lhs:.16e},{rhs:.16e},{pass}\n"));
            }
        }
    }
    emit(&out, if all_pass { 0 } else { 1 })
}

fn bounds_xi(config: &RunConfig) -> Result<i32> {
    let eps = config.sweep.epsilon;
    let mut out = format!("# which=xi epsilon={eps} version={VERSION}\n");
    out.push_str("m,k,i,lhs,rhs,pass\n");
    let mut all_pass = true;
    for m in 1..=4 {
        for (k, i, lhs) in bounds::xi_candidates(m, eps)? {
            // Numeric route: maximize s^a (1-s)^b directly instead of
            // evaluating at the closed-form critical point.
            let a = (k - i - 1) as f64 - eps;
            let b = (m + i + 1 - k) as f64;
            let peak = golden_max(|s| s.powf(a) * (1.0 - s).powf(b), 0.0, 1.0);
            let rhs = peak / (fact(k - i - 1) * fact(m + i + 1 - k));
            let pass = (lhs - rhs).abs() <= 1e-8 * rhs.abs().max(1e-300);
            all_pass &= pass;
            out.push_str(&format!("{m},{k},{i},{lhs:.16e},{rhs:.16e},{pass}\n"));
        }
    }
    emit(&out, if all_pass { 0 } else { 1 })
}

fn bounds_kn(config: &RunConfig) -> Result<i32> {
    let loaded = resolve_model(config)?;
    let Some(cert) = loaded.clustering.as_ref() else {
        eprintln!(
            "no clustering certificate: presets carry one, explicit models must supply \
             [model.clustering]"
        );
        return Ok(1);
    };
    let (model, _) = loaded.build()?;
    let mut out = format!("# which=kn preset={} version={VERSION}\n", loaded.name);
    out.push_str("n,t,lhs,rhs,rhs_eps,pass\n");
    let mut all_pass = true;
    for n in [1usize, 2] {
        for row in bounds::verify_kn_bound(&model, Some(cert), n, &config.sweep.tau_grid)? {
            all_pass &= row.pass;
            let eps_col = row.eps_bound.map_or(String::new(), |e| format!("{e:.16e}"));
            out.push_str(&format!(
                "{n},{:.16e},{:.16e},{:.16e},{eps_col},{}\n",
                row.t, row.norm_probe, row.poly_bound, row.pass
            ));
        }
    }
    emit(&out, if all_pass { 0 } else { 1 })
}

fn bounds_constants(config: &RunConfig) -> Result<i32> {
    let loaded = resolve_model(config)?;
    let Some(cert) = loaded.clustering.as_ref() else {
        eprintln!(
            "no clustering certificate: presets carry one, explicit models must supply \
             [model.clustering]"
        );
        return Ok(1);
    };
    let (model, _) = loaded.build()?;
    let w_norm = model.w_norm();
    let t = 1.0;
    // Consecutive same-parity term ratio; the factorial in c_n makes it
    // collapse as 1/(floor(n/2)+1), which is what summability rests on.
    let scale = (2.0 * cert.c * w_norm).powi(2) * cert.f_l1() * t;
    let mut out = format!("# which=constants preset={} t={t} version={VERSION}\n", loaded.name);
    out.push_str("n,lhs,rhs,pass\n");
    let mut all_pass = true;
    for n in 1..=12 {
        let term = |k: usize| bounds::constant_cn(cert, w_norm, k) * t.powi((k / 2) as i32);
        let lhs = term(n + 2) / term(n);
        let rhs = scale / (n / 2 + 1) as f64;
        let pass = (lhs - rhs).abs() <= 1e-10 * rhs.abs().max(1e-300);
        all_pass &= pass;
        out.push_str(&format!("{n},{lhs:.16e},{rhs:.16e},{pass}\n"));
    }
    emit(&out, if all_pass { 0 } else { 1 })
}

/// One estimate family per invocation, one CSV row per checked tuple.
pub fn cmd_bounds(config_path: &Path, which: &str) -> Result<i32> {
    let config = RunConfig::load(config_path)?;
    match which {
        "lemmaA" => bounds_lemma_a(&config),
        "xi" => bounds_xi(&config),
        "kn" => bounds_kn(&config),
        "constants" => bounds_constants(&config),
        other => Err(Error::Config(format!(
            "unknown bound family '{other}' (expected lemmaA, xi, kn, constants)"
        ))),
    }
}

/// `"2,4"` is the subset {2, 4}; the empty string is the empty set.
fn parse_subset_spec(spec: &str) -> Result<Vec<usize>> {
    if spec.trim().is_empty() {
        return Ok(Vec::new());
    }
    spec.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| Error::Invalid(format!("subset entry '{}' is not an index", tok.trim())))
        })
        .collect()
}

/// `"0-1/2-5"` is the block list (0,1),(2,3,4,5), given as `lo-hi`
/// inclusive ranges separated by `/` that tile the index range in order.
/// Returns the block lengths.
fn parse_partition_spec(spec: &str) -> Result<Vec<usize>> {
    let mut lengths = Vec::new();
    let mut next = 0usize;
    for block in spec.split('/') {
        let block = block.trim();
        let (lo_s, hi_s) = block
            .split_once('-')
            .ok_or_else(|| Error::Invalid(format!("block '{block}' is not a lo-hi range")))?;
        let lo = lo_s
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Invalid(format!("block start '{}' is not an index", lo_s.trim())))?;
        let hi = hi_s
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Invalid(format!("block end '{}' is not an index", hi_s.trim())))?;
        if hi < lo {
            return Err(Error::Invalid(format!("block '{block}' runs backwards")));
        }
        if lo != next {
            return Err(Error::Invalid(format!(
                "block '{block}' starts at {lo}, expected {next}: blocks must tile the index \
                 range in order"
            )));
        }
        lengths.push(hi - lo + 1);
        next = hi + 1;
    }
    Ok(lengths)
}

/// Render one term of the order-n expansion as text.
pub fn cmd_diagram(n: usize, a_spec: &str, d_spec: &str) -> Result<i32> {
    let a = IndexSubsetA::new(n, &parse_subset_spec(a_spec)?)?;
    let d = NoncrossingPartition::new(n + 1, parse_partition_spec(d_spec)?)?;
    emit(&diagram::render_diagram(n, &a, &d)?, 0)
}

// ------------------------------------------------------------- dispatch

#[derive(Parser)]
#[command(
    name = "vanhove",
    version,
    about = "Weak-coupling limit toolkit: model validation, kernel cross-checks, series bounds, \
             and the convergence study"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a model config and the projection algebra built on it
    Validate { config: PathBuf },
    /// Evaluate the order-n kernel coefficient and emit its entries
    Kn {
        config: PathBuf,
        n: usize,
        t: f64,
        #[arg(long, value_parser = ["brute", "diagram", "both"])]
        mode: String,
    },
    /// Sweep coupling and rescaled time against the limiting semigroup
    Converge { config: PathBuf },
    /// Check one family of series estimates, one CSV row per tuple
    Bounds {
        config: PathBuf,
        #[arg(long, value_parser = ["lemmaA", "xi", "kn", "constants"])]
        which: String,
    },
    /// Render the text diagram for one (A, d) term of the order-n kernel
    Diagram { n: usize, a_spec: String, d_spec: String },
}

/// Cap the sweep parallelism when `VANHOVE_THREADS` is a positive
/// integer.  The global pool installs once; later calls keep the first
/// configuration.
fn configure_threads() {
    let Some(n) = std::env::var("VANHOVE_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    else {
        return;
    };
    if n > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Parse arguments and dispatch; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    configure_threads();
    let outcome = match &cli.command {
        Command::Validate { config } => cmd_validate(config),
        Command::Kn { config, n, t, mode } => cmd_kn(config, *n, *t, mode),
        Command::Converge { config } => cmd_converge(config),
        Command::Bounds { config, which } => cmd_bounds(config, which),
        Command::Diagram { n, a_spec, d_spec } => cmd_diagram(*n, a_spec, d_spec),
    };
    match outcome {
        Ok(code) => code,
        Err(Error::Validation(msgs)) => {
            for m in &msgs {
                eprintln!("validation: {m}");
            }
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::davies::{ConvergenceReport, ConvergenceRow};

    fn preset_toml(name: &str) -> String {
        format!("[model]\npreset = \"{name}\"\n")
    }

    const EXPLICIT_QUBIT: &str = r#"
[model]
h_s = [[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]
h_r = [[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [1.3, 0.0]]]
w = [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [-1.0, 0.0]]]
v = [[[0.0, 0.0], [0.7, 0.0]], [[0.7, 0.0], [0.0, 0.0]]]
omega_r = [[1.0, 0.0], [0.0, 0.0]]
lambda = 0.5
"#;

    #[test]
    fn config_defaults_fill_in_for_absent_sections() {
        let config = RunConfig::from_toml(&preset_toml("dephasing")).unwrap();
        assert_eq!(config.quadrature.simplex_order, dyson::DEFAULT_AXIS_ORDER);
        assert_eq!(config.quadrature.davies_order, davies::DEFAULT_QUAD_ORDER);
        assert_eq!(config.quadrature.seed, 0);
        assert_eq!(config.sweep.tau_grid, vec![1.0]);
        assert_eq!(config.sweep.lambda_grid, vec![0.4, 0.2, 0.1]);
        assert_eq!(config.sweep.epsilon, 0.5);
        assert!(config.sweep.window.is_none());
        assert!(config.output.directory.is_none());
    }

    #[test]
    fn config_rejects_empty_grids_unknown_keys_and_foreign_formats() {
        let empty = "[model]\npreset = \"dephasing\"\n[sweep]\nlambda_grid = []\n";
        assert!(RunConfig::from_toml(empty).is_err());
        let unknown = "[model]\npreset = \"dephasing\"\nbogus = 1\n";
        assert!(RunConfig::from_toml(unknown).is_err());
        let json = "[model]\npreset = \"dephasing\"\n[output]\nformats = [\"json\"]\n";
        let err = RunConfig::from_toml(json).unwrap_err();
        assert!(err.to_string().contains("csv"));
    }

    #[test]
    fn preset_config_resolves_with_companion_data() {
        let config = RunConfig::from_toml(&preset_toml("star-bath")).unwrap();
        let loaded = resolve_model(&config).unwrap();
        assert_eq!(loaded.name, "star-bath");
        assert!(loaded.clustering.is_some());
        assert!(loaded.analytic_phi.is_some());
        assert!(loaded.window.unwrap() > 0.0);
        assert!(loaded.cutoff.unwrap() > 0.0);
        let (model, _) = loaded.build().unwrap();
        assert_eq!(model.d_s(), 2);
        assert_eq!(model.d_r(), 6);
    }

    #[test]
    fn sweep_overrides_shadow_the_preset_companions() {
        let text = format!("{}[sweep]\nwindow = 7.5\ncutoff = 3.25\n", preset_toml("dephasing"));
        let config = RunConfig::from_toml(&text).unwrap();
        let loaded = resolve_model(&config).unwrap();
        assert_eq!(loaded.window, Some(7.5));
        assert_eq!(loaded.cutoff, Some(3.25));
    }

    #[test]
    fn explicit_matrices_round_trip_through_the_loader() {
        let config = RunConfig::from_toml(EXPLICIT_QUBIT).unwrap();
        let loaded = resolve_model(&config).unwrap();
        assert_eq!(loaded.name, "custom");
        assert!(loaded.clustering.is_none());
        assert!(loaded.window.is_none());
        let report = validate(&loaded.raw);
        assert!(report.pass(), "{report}");
        let (model, _) = loaded.build().unwrap();
        assert_eq!(model.d_s(), 2);
        assert_eq!(model.d_r(), 2);
        assert_eq!(model.lambda(), 0.5);
    }

    #[test]
    fn jagged_matrix_rows_are_rejected_with_their_index() {
        let text = r#"
[model]
h_s = [[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0]]]
h_r = [[[0.0, 0.0]]]
w = [[[1.0, 0.0]]]
v = [[[0.0, 0.0]]]
omega_r = [[1.0, 0.0]]
"#;
        let config = RunConfig::from_toml(text).unwrap();
        let err = resolve_model(&config).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("h_s") && msg.contains("row 1"), "{msg}");
    }

    #[test]
    fn matrix_entries_must_be_re_im_pairs() {
        let text = r#"
[model]
h_s = [[[0.0, 0.0, 5.0]]]
h_r = [[[0.0, 0.0]]]
w = [[[1.0, 0.0]]]
v = [[[0.0, 0.0]]]
omega_r = [[1.0, 0.0]]
"#;
        let config = RunConfig::from_toml(text).unwrap();
        let msg = resolve_model(&config).unwrap_err().to_string();
        assert!(msg.contains("h_s row 0 entry 0") && msg.contains("[re, im]"), "{msg}");
    }

    #[test]
    fn preset_and_explicit_matrices_conflict() {
        let text = "[model]\npreset = \"dephasing\"\nomega_r = [[1.0, 0.0]]\n";
        let config = RunConfig::from_toml(text).unwrap();
        assert!(resolve_model(&config).is_err());
    }

    #[test]
    fn assumption_labels_name_the_centering_requirement() {
        assert_eq!(assumption_label("coupling_centered"), "A4");
        assert_eq!(assumption_label("bath_ground_state"), "A2");
        assert_eq!(assumption_label("omega_normalized"), "A2");
        assert_eq!(assumption_label("h_r_hermitian"), "A1");
        assert_eq!(assumption_label("h_s_hermitian"), "A3");
        // The uncentered-coupling config must surface as an A4 failure.
        let config = RunConfig::from_toml(EXPLICIT_QUBIT).unwrap();
        let mut raw = resolve_model(&config).unwrap().raw;
        raw.v = DMatrix::identity(2, 2);
        let report = validate(&raw);
        assert!(!report.pass());
        let failed: Vec<&str> =
            report.checks.iter().filter(|c| !c.pass).map(|c| c.name).collect();
        assert_eq!(failed, vec!["coupling_centered"]);
        assert_eq!(assumption_label("coupling_centered"), "A4");
    }

    #[test]
    fn subset_spec_parses_lists_and_the_empty_set() {
        assert_eq!(parse_subset_spec("2,4").unwrap(), vec![2, 4]);
        assert_eq!(parse_subset_spec(" 1 , 3 ").unwrap(), vec![1, 3]);
        assert_eq!(parse_subset_spec("").unwrap(), Vec::<usize>::new());
        assert_eq!(parse_subset_spec("  ").unwrap(), Vec::<usize>::new());
        assert!(parse_subset_spec("x").is_err());
        assert!(parse_subset_spec("1,,2").is_err());
    }

    #[test]
    fn partition_spec_enforces_tiling_in_order() {
        assert_eq!(parse_partition_spec("0-1/2-5").unwrap(), vec![2, 4]);
        assert_eq!(parse_partition_spec("0-2").unwrap(), vec![3]);
        assert_eq!(parse_partition_spec("0-0/1-2").unwrap(), vec![1, 2]);
        assert!(parse_partition_spec("0-1/3-5").unwrap_err().to_string().contains("expected 2"));
        assert!(parse_partition_spec("1-2").is_err());
        assert!(parse_partition_spec("2-1").unwrap_err().to_string().contains("backwards"));
        assert!(parse_partition_spec("0").is_err());
        assert!(parse_partition_spec("").is_err());
    }

    #[test]
    fn singleton_blocks_die_at_the_partition_constructor() {
        let lengths = parse_partition_spec("0-0/1-5").unwrap();
        let err = NoncrossingPartition::new(5, lengths).unwrap_err();
        assert!(err.to_string().contains("at least 2"), "{err}");
    }

    #[test]
    fn convergence_csv_layout_is_stable() {
        let report = ConvergenceReport {
            rows: vec![
                ConvergenceRow { lambda: 0.5, tau: 1.0, error: 0.25, flagged: false },
                ConvergenceRow { lambda: 0.25, tau: 1.0, error: 0.0625, flagged: true },
            ],
        };
        let csv = convergence_csv("dephasing", 7, &report);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], format!("# preset=dephasing seed=7 version={VERSION}"));
        assert_eq!(lines[1], "lambda,tau,error,flagged");
        assert!(lines[2].starts_with("5.0000000000000000e-1,1.0000000000000000e0,"));
        assert!(lines[2].ends_with(",false"));
        assert!(lines[3].ends_with(",true"));
        assert_eq!(lines.len(), 4);
        assert_eq!(csv, convergence_csv("dephasing", 7, &report));
    }

    #[test]
    fn xi_numeric_route_agrees_with_the_closed_form() {
        for m in 1..=4 {
            for (k, i, closed) in bounds::xi_candidates(m, 0.5).unwrap() {
                let a = (k - i - 1) as f64 - 0.5;
                let b = (m + i + 1 - k) as f64;
                let peak = golden_max(|s| s.powf(a) * (1.0 - s).powf(b), 0.0, 1.0);
                let numeric = peak / (fact(k - i - 1) * fact(m + i + 1 - k));
                assert!(
                    (closed - numeric).abs() <= 1e-8 * numeric,
                    "m={m} k={k} i={i}: closed {closed} vs numeric {numeric}"
                );
            }
        }
        let xi1: f64 = bounds::xi_candidates(1, 0.5)
            .unwrap()
            .iter()
            .map(|&(_, _, v)| v)
            .fold(0.0, f64::max);
        assert!((xi1 - 1.0).abs() < 1e-12);
    }
}
