use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use paprlab_core::allocate::{self, AllocationError, AllocationResult, SweepMonteCarlo};
use paprlab_core::analytic::{self, BaselineParams, LambdaFactor};
use paprlab_core::config::{derive_layout, ConfigError, SystemLayout, SystemSpec};
use paprlab_core::papr::{self, CcdfKind, PaprSample};

use crate::output::{check_spec, fmt_gamma, fmt_prob, write_outputs, Manifest, Params, Table};
use crate::CliError;

/// Probability levels at which `compare` reports horizontal gaps.
pub const GAP_LEVELS: [f64; 3] = [1e-1, 1e-2, 1e-3];

#[derive(Debug, Clone, Copy, Args, Serialize, Deserialize)]
pub struct GridArgs {
    #[arg(long, default_value_t = papr::DEFAULT_GAMMA_MIN_DB, allow_negative_numbers = true)]
    pub gamma_min_db: f64,
    #[arg(long, default_value_t = papr::DEFAULT_GAMMA_MAX_DB, allow_negative_numbers = true)]
    pub gamma_max_db: f64,
    #[arg(long, default_value_t = papr::DEFAULT_GAMMA_STEP_DB)]
    pub step_db: f64,
}

/// What a command wrote, plus text for stdout and stderr.
#[derive(Debug, Default)]
pub struct Report {
    pub csv: PathBuf,
    pub manifest: PathBuf,
    pub summary: Vec<String>,
    pub warnings: Vec<String>,
}

impl Report {
    pub fn emit(&self, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
        let io = |e: std::io::Error| CliError::Runtime(e.to_string());
        for w in &self.warnings {
            writeln!(err, "warning: msg={w:?}").map_err(io)?;
        }
        for line in &self.summary {
            writeln!(out, "{line}").map_err(io)?;
        }
        Ok(())
    }
}

fn layout_of(spec: &SystemSpec) -> Result<SystemLayout, CliError> {
    check_spec(spec)?;
    derive_layout(spec).map_err(|e| match e {
        ConfigError::Invalid(v) => CliError::Config(v.into_iter().map(|v| (v.key, v.message)).collect()),
        other => CliError::config("base_spacing_hz", other.to_string()),
    })
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Validates a dB grid. Analytical curves are not reported below
/// `γ = 1/2`, so `analytical` enforces that floor.
fn db_grid(min: f64, max: f64, step: f64, analytical: bool) -> Result<Vec<f64>, CliError> {
    if !(min.is_finite() && max.is_finite() && step.is_finite()) {
        return Err(CliError::Usage("gamma range must be finite".into()));
    }
    if !(step > 0.0) {
        return Err(CliError::Usage(format!("step-db must be positive, got {step}")));
    }
    if max < min {
        return Err(CliError::Usage(format!("gamma-max-db {max} is below gamma-min-db {min}")));
    }
    let floor = 10.0 * analytic::PROPOSED_VALIDITY_FLOOR.log10();
    if analytical && min < floor {
        return Err(CliError::Usage(format!(
            "gamma-min-db {min} is below the analytical validity floor {floor:.4} dB"
        )));
    }
    Ok(papr::gamma_grid(min, max, step))
}

fn campaign_samples(
    layout: &SystemLayout,
    trials: u64,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<PaprSample>, CliError> {
    let mut c = papr::Campaign::new(layout, trials, seed);
    c.threads = threads;
    c.run().map_err(runtime)
}

fn finish(out: &Path, table: Table, spec: &SystemSpec, params: &Params) -> Result<Report, CliError> {
    let manifest = write_outputs(out, &table.into_string(), &Manifest::new(spec, params))?;
    Ok(Report {
        csv: out.to_path_buf(),
        manifest,
        ..Report::default()
    })
}

pub fn cmd_simulate(
    spec: &SystemSpec,
    params: &Params,
    threads: Option<usize>,
    out: &Path,
) -> Result<Report, CliError> {
    let &Params::Simulate {
        trials,
        seed,
        gamma_min_db,
        gamma_max_db,
        step_db,
    } = params
    else {
        return Err(CliError::Usage("simulate needs simulate parameters".into()));
    };
    if trials == 0 {
        return Err(CliError::Usage("trials must be at least 1".into()));
    }
    let grid = db_grid(gamma_min_db, gamma_max_db, step_db, false)?;
    let layout = layout_of(spec)?;
    let samples = campaign_samples(&layout, trials, seed, threads)?;
    let curve = papr::empirical_ccdf(&samples, &grid).map_err(runtime)?;

    let mut table = Table::new(&["gamma_db", "ccdf_empirical"]);
    for (g, p) in curve.gamma_db_grid.iter().zip(&curve.prob) {
        table.row(&[fmt_gamma(*g), fmt_prob(*p)]);
    }
    let mut report = finish(out, table, spec, params)?;
    report.summary.push(format!("trials={trials} seed={seed}"));
    Ok(report)
}

fn analytical_curves(layout: &SystemLayout, grid: &[f64]) -> Result<Vec<papr::CcdfCurve>, CliError> {
    let lam = analytic::lambda_factor(layout).map_err(runtime)?;
    let params = BaselineParams::for_layout(layout);
    CcdfKind::ANALYTICAL
        .iter()
        .map(|&k| papr::analytical_ccdf(k, &lam, &params, grid).map_err(runtime))
        .collect()
}

pub fn cmd_analyze(spec: &SystemSpec, params: &Params, out: &Path) -> Result<Report, CliError> {
    let &Params::Analyze {
        gamma_min_db,
        gamma_max_db,
        step_db,
    } = params
    else {
        return Err(CliError::Usage("analyze needs analyze parameters".into()));
    };
    let grid = db_grid(gamma_min_db, gamma_max_db, step_db, true)?;
    let layout = layout_of(spec)?;
    let curves = analytical_curves(&layout, &grid)?;

    let mut columns = vec!["gamma_db"];
    columns.extend(CcdfKind::ANALYTICAL.iter().map(|k| k.name()));
    let mut table = Table::new(&columns);
    for (j, g) in grid.iter().enumerate() {
        let mut row = vec![fmt_gamma(*g)];
        row.extend(curves.iter().map(|c| fmt_prob(c.prob[j])));
        table.row(&row);
    }
    let lam = analytic::lambda_factor(&layout).map_err(runtime)?;
    let mut report = finish(out, table, spec, params)?;
    report.summary.push(format!(
        "lambda={:.6e} n_total={} mu={}",
        lam.value(),
        layout.total_subcarriers(),
        layout.mu
    ));
    Ok(report)
}

/// `γ` (dB) at which analytical curve `kind` equals `prob`.
fn analytical_gamma_db(kind: CcdfKind, lam: &LambdaFactor, params: &BaselineParams, prob: f64) -> Option<f64> {
    let ccdf = |g: f64| match kind.baseline() {
        Some(b) => analytic::ccdf_baseline(b, g, params).unwrap_or(f64::NAN),
        None => analytic::ccdf_proposed(g, lam),
    };
    analytic::invert_ccdf(ccdf, prob, analytic::PROPOSED_VALIDITY_FLOOR, 200.0).map(|g| 10.0 * g.log10())
}

pub fn cmd_compare(
    spec: &SystemSpec,
    params: &Params,
    threads: Option<usize>,
    out: &Path,
) -> Result<Report, CliError> {
    let &Params::Compare {
        trials,
        seed,
        gamma_min_db,
        gamma_max_db,
        step_db,
    } = params
    else {
        return Err(CliError::Usage("compare needs compare parameters".into()));
    };
    let grid = db_grid(gamma_min_db, gamma_max_db, step_db, true)?;
    let layout = layout_of(spec)?;
    let curves = analytical_curves(&layout, &grid)?;
    let samples = if trials > 0 {
        Some(campaign_samples(&layout, trials, seed, threads)?)
    } else {
        None
    };
    let empirical = samples
        .as_ref()
        .map(|s| papr::empirical_ccdf(s, &grid).map_err(runtime))
        .transpose()?;

    let mut columns = vec!["gamma_db"];
    if empirical.is_some() {
        columns.push("ccdf_empirical");
    }
    columns.extend(CcdfKind::ANALYTICAL.iter().map(|k| k.name()));
    let mut table = Table::new(&columns);
    for (j, g) in grid.iter().enumerate() {
        let mut row = vec![fmt_gamma(*g)];
        if let Some(e) = &empirical {
            row.push(fmt_prob(e.prob[j]));
        }
        row.extend(curves.iter().map(|c| fmt_prob(c.prob[j])));
        table.row(&row);
    }
    let mut report = finish(out, table, spec, params)?;

    let Some(samples) = samples else {
        report
            .warnings
            .push("no trials requested; wrote analytical curves only".to_string());
        return Ok(report);
    };
    let lam = analytic::lambda_factor(&layout).map_err(runtime)?;
    let bparams = BaselineParams::for_layout(&layout);
    for prob in GAP_LEVELS {
        // Below one exceedance per campaign the empirical level is not resolved.
        if prob * (trials as f64) < 1.0 {
            report.summary.push(format!("gap_db prob={prob:.0e} empirical=n/a"));
            continue;
        }
        let emp = papr::empirical_quantile_db(&samples, prob).map_err(runtime)?;
        let mut line = format!("gap_db prob={prob:.0e} empirical={emp:.3}");
        for kind in CcdfKind::ANALYTICAL {
            match analytical_gamma_db(kind, &lam, &bparams, prob) {
                Some(g) => line += &format!(" {}={:.3}", kind.name(), (g - emp).abs()),
                None => line += &format!(" {}=n/a", kind.name()),
            }
        }
        report.summary.push(line);
    }
    Ok(report)
}

fn fmt_eta(eta: &[f64]) -> String {
    let parts: Vec<String> = eta.iter().map(|e| format!("{e:.6}")).collect();
    format!("[{}]", parts.join(","))
}

fn describe(label: &str, r: &AllocationResult) -> String {
    let mut s = format!(
        "{label} eta={} lambda={:.6e} boundary={}",
        fmt_eta(&r.eta_star),
        r.lambda_at_opt,
        r.diagnostics.boundary
    );
    if let Some(res) = r.diagnostics.residual {
        s += &format!(" residual={res:.3e}");
    }
    s
}

fn max_delta(a: &AllocationResult, b: &AllocationResult) -> f64 {
    a.eta_star
        .iter()
        .zip(&b.eta_star)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn cmd_allocate(
    spec: &SystemSpec,
    params: &Params,
    threads: Option<usize>,
    out: &Path,
) -> Result<Report, CliError> {
    let &Params::Allocate {
        step,
        with_mc,
        trials,
        seed,
    } = params
    else {
        return Err(CliError::Usage("allocate needs allocate parameters".into()));
    };
    if !(step > 0.0 && step <= 0.1) {
        return Err(CliError::Usage(format!("step must lie in (0, 0.1], got {step}")));
    }
    if with_mc && trials == 0 {
        return Err(CliError::Usage("trials must be at least 1 with --with-mc".into()));
    }
    let layout = layout_of(spec)?;
    let m = layout.num_subbands();
    if m < 2 {
        return Err(CliError::Usage(format!("allocation needs at least 2 subbands, got {m}")));
    }

    let mut summary = Vec::new();
    let mut notes = Vec::new();
    let closed = if m == 2 {
        match allocate::solve_closed_form_two(&layout) {
            Ok(r) => Some(r),
            Err(e @ AllocationError::Degenerate(_)) => {
                notes.push(format!("closed form unavailable: {e}"));
                None
            }
            Err(e) => return Err(runtime(e)),
        }
    } else {
        None
    };
    let kkt = match allocate::solve_kkt(&allocate::build_qp(&layout).map_err(runtime)?) {
        Ok(r) => Some(r),
        Err(AllocationError::SingularKkt { .. }) => {
            notes.push("KKT singular, grid used".to_string());
            None
        }
        Err(e) => return Err(runtime(e)),
    };
    let grid = allocate::grid_search_oracle(&layout, step).map_err(|e| match e {
        AllocationError::GridTooLarge { .. } => CliError::Usage(e.to_string()),
        e => runtime(e),
    })?;

    if let Some(c) = &closed {
        summary.push(describe("closed_form", c));
    }
    if let Some(k) = &kkt {
        summary.push(describe("kkt", k));
    }
    summary.push(describe("grid", &grid) + &format!(" step={step}"));
    let mut deltas = Vec::new();
    if let (Some(c), Some(k)) = (&closed, &kkt) {
        deltas.push(format!("closed_kkt={:.3e}", max_delta(c, k)));
    }
    if let Some(c) = &closed {
        deltas.push(format!("closed_grid={:.3e}", max_delta(c, &grid)));
    }
    if !deltas.is_empty() {
        summary.push(format!("delta {}", deltas.join(" ")));
    }
    for n in notes {
        summary.push(format!("note {n}"));
    }

    let mut table = Table::new(&["eta1", "lambda", "mean_envelope", "mc_mean_papr_db"]);
    if m == 2 {
        let mc = with_mc.then_some(SweepMonteCarlo { trials, seed, threads });
        let rows = allocate::sweep_mean_envelope(&layout, &allocate::interior_grid(step), mc).map_err(runtime)?;
        for r in &rows {
            table.row(&[
                format!("{:.6}", r.eta1),
                format!("{:.6e}", r.lambda),
                format!("{:.6}", r.mean_envelope),
                r.mc_mean_papr_db.map(|v| format!("{v:.4}")).unwrap_or_default(),
            ]);
        }
        if let Some(i) = allocate::sweep_argmax(&rows, |r| r.mean_envelope) {
            summary.push(format!("sweep argmax_eta1={:.6}", rows[i].eta1));
        }
    } else {
        summary.push("note sweep needs exactly 2 subbands; CSV has no rows".to_string());
    }
    let mut report = finish(out, table, spec, params)?;
    report.summary = summary;
    Ok(report)
}

/// Re-runs the command recorded in `manifest_path` and writes to `out`.
pub fn cmd_replay(manifest_path: &Path, threads: Option<usize>, out: &Path) -> Result<Report, CliError> {
    let m = Manifest::load(manifest_path)?;
    match m.params {
        Params::Simulate { .. } => cmd_simulate(&m.spec, &m.params, threads, out),
        Params::Analyze { .. } => cmd_analyze(&m.spec, &m.params, out),
        Params::Allocate { .. } => cmd_allocate(&m.spec, &m.params, threads, out),
        Params::Compare { .. } => cmd_compare(&m.spec, &m.params, threads, out),
    }
}
