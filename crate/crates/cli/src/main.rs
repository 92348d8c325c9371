mod args;
mod input;
mod output;

use std::f64::consts::PI;
use std::fs::File;
use std::process::ExitCode;

use clap::Parser;
use serde_json::{Map, Value};

use mrd_core::bandwidth::BandwidthMode;
use mrd_core::dgp::{self, Rect, NOISE_STD};
use mrd_core::distance_baseline::{self, Variance};
use mrd_core::geometry::boundary_points;
use mrd_core::simulation::{run_mc, EstimatorKind, MCConfig, MCResult};
use mrd_core::{
    estimate_rd, make_design, sweep_boundary, to_signed_distance, BoundaryFrame, Dataset, EstimateOptions,
    MrdError, RDEstimate, RegionSpec, SelectorOptions, Side,
};

use args::{Cli, Command, DesignsArgs, DiagnoseArgs, DiagnoseMode, EstimateArgs, Format, ModeArg, Pair, SimulateArgs, SweepArgs};
use output::{write_output, Document, Row};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Io(String),
    #[error(transparent)]
    Numerical(#[from] MrdError),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Numerical(_) => 2,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Input(_) => "input",
            CliError::Io(_) => "io",
            CliError::Numerical(e) => match e {
                MrdError::InsufficientLocalData { .. } => "insufficient-local-data",
                MrdError::EmptySide(_) => "empty-side",
                MrdError::DegenerateSelection(_) => "degenerate-selection",
                MrdError::KernelUnsuitable(_) => "kernel-unsuitable",
                _ => "estimation",
            },
        }
    }

    fn record(&self) -> Row {
        let mut row = Row::new()
            .text("kind", self.kind())
            .text("message", self.to_string())
            .int("exit_code", self.exit_code().into());
        match self {
            CliError::Numerical(MrdError::InsufficientLocalData {
                side,
                effective_n,
                condition,
            }) => {
                row = row
                    .text("side", side.to_string())
                    .int("effective_n", *effective_n as u64)
                    .num("condition", *condition);
            }
            CliError::Numerical(MrdError::EmptySide(side)) => {
                row = row.text("side", side.to_string()).int("effective_n", 0);
            }
            _ => {}
        }
        row
    }
}

struct Emit {
    format: Format,
    output: Option<std::path::PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (name, emit, result) = run(cli.command);
    match result {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            let mut m = Map::new();
            m.insert("schema".into(), output::SCHEMA.into());
            m.insert("command".into(), name.into());
            let rendered = match emit.format {
                Format::Json => {
                    m.insert("error".into(), err.record().to_json());
                    let mut v = serde_json::to_vec_pretty(&Value::Object(m)).unwrap_or_default();
                    v.push(b'\n');
                    Ok(v)
                }
                Format::Csv => {
                    let mut doc = Document::new(name);
                    doc.rows.push(err.record());
                    doc.to_csv()
                }
            };
            if let Ok(bytes) = rendered {
                let _ = write_output(&bytes, emit.output.as_deref());
            }
            ExitCode::from(err.exit_code())
        }
    }
}

/// Returns the command name, the output destination used for error records,
/// and the exit code on success.
fn run(command: Command) -> (&'static str, Emit, Result<u8, CliError>) {
    macro_rules! dispatch {
        ($name:literal, $args:expr, $f:ident) => {{
            match $args.resolve() {
                Ok(a) => {
                    let emit = Emit {
                        format: a.format.unwrap_or_default(),
                        output: a.output.clone(),
                    };
                    let r = $f(a, &emit);
                    ($name, emit, r)
                }
                Err(e) => (
                    $name,
                    Emit {
                        format: Format::Json,
                        output: None,
                    },
                    Err(e),
                ),
            }
        }};
    }
    match command {
        Command::Estimate(a) => dispatch!("estimate", a, cmd_estimate),
        Command::Sweep(a) => dispatch!("sweep", a, cmd_sweep),
        Command::Simulate(a) => dispatch!("simulate", a, cmd_simulate),
        Command::Diagnose(a) => dispatch!("diagnose", a, cmd_diagnose),
        Command::Designs(a) => dispatch!("designs", a, cmd_designs),
    }
}

fn emit(doc: &Document, emit: &Emit) -> Result<(), CliError> {
    write_output(&doc.render(emit.format)?, emit.output.as_deref())
}

fn check_alpha(alpha: Option<f64>) -> Result<f64, CliError> {
    let a = alpha.unwrap_or(0.05);
    if a > 0.0 && a < 0.5 {
        Ok(a)
    } else {
        Err(CliError::Usage(format!("--alpha must lie in (0, 0.5), got {a}")))
    }
}

fn estimate_options(
    mode: Option<ModeArg>,
    bandwidth: Option<Pair>,
    scaling: Option<args::ScalingArg>,
    alpha: Option<f64>,
) -> Result<EstimateOptions, CliError> {
    let mode = match (mode.unwrap_or_default(), bandwidth) {
        (ModeArg::Fixed, Some(Pair(h))) => {
            if !(h[0] > 0.0 && h[1] > 0.0) {
                return Err(CliError::Usage("--bandwidth values must be positive".into()));
            }
            BandwidthMode::Fixed(h)
        }
        (ModeArg::Fixed, None) => return Err(CliError::Usage("--mode fixed requires --bandwidth h1,h2".into())),
        (_, Some(_)) => return Err(CliError::Usage("--bandwidth is only used with --mode fixed".into())),
        (ModeArg::Heterogeneous, None) => BandwidthMode::Heterogeneous,
        (ModeArg::Common, None) => BandwidthMode::Common,
    };
    Ok(EstimateOptions {
        selector: SelectorOptions {
            mode,
            scaling: scaling.unwrap_or_default().into(),
            ..Default::default()
        },
        alpha: check_alpha(alpha)?,
    })
}

fn load(input: Option<&std::path::Path>, region: Option<&RegionSpec>) -> Result<Dataset, CliError> {
    let path = input.ok_or_else(|| CliError::Usage("--input is required".into()))?;
    let file = File::open(path).map_err(|e| CliError::Input(format!("cannot open {}: {e}", path.display())))?;
    input::read_dataset(file, region)
}

fn region_spec(region: Option<args::RegionArg>, thresholds: Option<Pair>) -> Option<RegionSpec> {
    region.map(|k| RegionSpec::new(k.into(), thresholds.map_or([0.0, 0.0], |p| p.0)))
}

fn estimate_row(row: Row, e: &RDEstimate) -> Row {
    let s = &e.selection;
    row.num("theta", e.theta)
        .num("theta_bc", e.theta_bc)
        .num("se", e.se)
        .num("se_conventional", e.se_conventional)
        .num("ci_low", e.ci_low)
        .num("ci_high", e.ci_high)
        .num("alpha", e.alpha)
        .num("h1", e.h1)
        .num("h2", e.h2)
        .num("pilot_plus_1", e.b_plus[0])
        .num("pilot_plus_2", e.b_plus[1])
        .num("pilot_minus_1", e.b_minus[0])
        .num("pilot_minus_2", e.b_minus[1])
        .int("eff_n_plus", e.eff_n_plus as u64)
        .int("eff_n_minus", e.eff_n_minus as u64)
        .num("sigma2_plus", s.sigma2_plus)
        .num("sigma2_minus", s.sigma2_minus)
        .num("fhat", s.fhat)
        .num("b1_hat", s.bias.b1_hat)
        .num("b2_hat", s.bias.b2_hat)
        .num("var_b1", s.bias.var_b1)
        .num("var_b2", s.bias.var_b2)
}

fn frame_row(row: Row, frame: &BoundaryFrame) -> Row {
    row.num("center_1", frame.center[0])
        .num("center_2", frame.center[1])
        .num("normal_1", frame.normal[0])
        .num("normal_2", frame.normal[1])
}

fn cmd_estimate(a: EstimateArgs, out: &Emit) -> Result<u8, CliError> {
    let options = estimate_options(a.mode, a.bandwidth, a.scaling, a.alpha)?;
    let region = region_spec(a.region, a.thresholds);
    let data = load(a.input.as_deref(), region.as_ref())?;
    let frame = BoundaryFrame::new(
        a.center.map_or([0.0, 0.0], |p| p.0),
        a.normal.map_or([0.0, 1.0], |p| p.0),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    let e = estimate_rd(&data, &frame, a.kernel.unwrap_or_default().into(), &options)?;
    let mut doc = Document::new("estimate").meta("n", data.len());
    doc.rows.push(estimate_row(frame_row(Row::new(), &frame), &e));
    emit(&doc, out)?;
    Ok(0)
}

fn coordinate_span(data: &Dataset) -> f64 {
    (0..2)
        .map(|k| {
            let (lo, hi) = data
                .records()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.r[k]), hi.max(r.r[k])));
            hi - lo
        })
        .fold(f64::INFINITY, f64::min)
}

fn cmd_sweep(a: SweepArgs, out: &Emit) -> Result<u8, CliError> {
    let options = estimate_options(a.mode, a.bandwidth, a.scaling, a.alpha)?;
    let region = region_spec(a.region, a.thresholds).ok_or_else(|| CliError::Usage("--region is required".into()))?;
    let data = load(a.input.as_deref(), Some(&region))?;
    let extent = a.extent.unwrap_or_else(|| 0.5 * coordinate_span(&data));
    let frames = boundary_points(&region, a.count.unwrap_or(5), extent).map_err(|e| CliError::Usage(e.to_string()))?;
    let results = sweep_boundary(&data, &frames, a.kernel.unwrap_or_default().into(), &options);
    let mut doc = Document::new("sweep").meta("n", data.len()).meta("extent", extent);
    let mut ok = 0;
    for (i, (frame, res)) in frames.iter().zip(&results).enumerate() {
        let row = frame_row(Row::new().int("point", i as u64 + 1), frame);
        doc.rows.push(match res {
            Ok(e) => {
                ok += 1;
                estimate_row(row.text("status", "ok"), e)
            }
            Err(err) => {
                let reason = format!("estimation failed: {err}");
                ["theta", "theta_bc", "se", "ci_low", "ci_high", "h1", "h2"]
                    .into_iter()
                    .fold(row.text("status", "failed"), |r, k| r.null(k, &reason))
            }
        });
    }
    emit(&doc, out)?;
    Ok(if ok == 0 && !frames.is_empty() { 2 } else { 0 })
}

fn parse_estimators(list: Option<args::List<String>>) -> Result<Vec<EstimatorKind>, CliError> {
    match list {
        None => Ok(EstimatorKind::ALL.to_vec()),
        Some(l) => {
            let mut out = Vec::new();
            for s in l.0 {
                let k = s.parse::<EstimatorKind>().map_err(|e| CliError::Usage(e.to_string()))?;
                if !out.contains(&k) {
                    out.push(k);
                }
            }
            if out.is_empty() {
                return Err(CliError::Usage("--estimators is empty".into()));
            }
            Ok(out)
        }
    }
}

fn summary_doc(res: &MCResult, meta: Map<String, Value>) -> Document {
    let mut doc = Document::new("simulate");
    doc.meta = meta;
    for s in &res.summaries {
        doc.rows.push(
            Row::new()
                .text("estimator", s.estimator.name())
                .num("length", s.ci_length)
                .num("bias", s.bias)
                .num("coverage", s.coverage)
                .num("rmse", s.rmse)
                .num("bias_bc", s.bias_bc)
                .num("rmse_bc", s.rmse_bc)
                .num("variance", s.variance)
                .int("reps_ok", s.reps_ok as u64)
                .int("reps_failed", s.reps_failed as u64)
                .num("pilot", s.median_pilot)
                .num("h1", s.median_h1)
                .num("h2", s.median_h2)
                .num("eff_sample", s.mean_eff_n),
        );
    }
    doc
}

fn per_rep_doc(res: &MCResult, meta: Map<String, Value>) -> Document {
    let mut doc = Document::new("simulate-replications");
    doc.meta = meta;
    for (kind, recs) in res.estimators.iter().zip(&res.per_rep) {
        for r in recs {
            let mut row = Row::new()
                .text("estimator", kind.name())
                .int("rep", r.rep)
                .boolean("failed", r.failed);
            if r.failed {
                let reason = r.error.clone().unwrap_or_else(|| "failed".into());
                row = row.text("error", reason.clone());
                for k in ["theta", "theta_bc", "se", "ci_low", "ci_high", "h1", "h2", "pilot"] {
                    row = row.null(k, &reason);
                }
            } else {
                row = row
                    .num("theta", r.theta)
                    .num("theta_bc", r.theta_bc)
                    .num("se", r.se)
                    .num("ci_low", r.ci_low)
                    .num("ci_high", r.ci_high)
                    .num("h1", r.h1)
                    .num("h2", r.h2)
                    .num("pilot", r.pilot);
            }
            doc.rows.push(row.int("eff_n", r.eff_n as u64));
        }
    }
    doc
}

fn cmd_simulate(a: SimulateArgs, out: &Emit) -> Result<u8, CliError> {
    let seed = a.seed.ok_or_else(|| CliError::Usage("--seed is required".into()))?;
    let id = a.design.ok_or_else(|| CliError::Usage("--design is required".into()))?;
    let mut design = make_design(id).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(s) = &a.support {
        let [x0, x1, y0, y1] = <[f64; 4]>::try_from(s.0.as_slice())
            .map_err(|_| CliError::Usage("--support needs x_lo,x_hi,y_lo,y_hi".into()))?;
        if !(x0 < 0.0 && 0.0 < x1 && y0 < 0.0 && 0.0 < y1) {
            return Err(CliError::Usage("--support must contain the origin in its interior".into()));
        }
        design = design.with_support(Rect { x: (x0, x1), y: (y0, y1) });
    }
    if let Some(s) = a.noise {
        if !(s > 0.0 && s.is_finite()) {
            return Err(CliError::Usage("--noise must be positive".into()));
        }
        design = design.with_noise(s);
    }
    let n = a.n.unwrap_or(5000);
    let reps = a.reps.unwrap_or(200);
    if n == 0 || reps == 0 {
        return Err(CliError::Usage("--n and --reps must be positive".into()));
    }
    if a.jobs == Some(0) {
        return Err(CliError::Usage("--jobs must be positive".into()));
    }
    let alpha = check_alpha(a.alpha)?;
    let kernel: mrd_core::KernelFamily = a.kernel.unwrap_or_default().into();
    let scaling = a.scaling.unwrap_or_default();
    let config = MCConfig {
        estimators: parse_estimators(a.estimators)?,
        family: kernel,
        alpha,
        scaling: scaling.into(),
        jobs: a.jobs,
        ..MCConfig::new(design.clone(), n, reps, seed)
    };
    let res = run_mc(&config)?;
    let mut meta = Map::new();
    meta.insert("design".into(), id.into());
    meta.insert("n".into(), n.into());
    meta.insert("reps".into(), reps.into());
    meta.insert("seed".into(), seed.into());
    meta.insert("true_theta".into(), res.true_theta.into());
    meta.insert("noise_std".into(), design.noise_std.into());
    meta.insert(
        "support".into(),
        Value::from(vec![design.support.x.0, design.support.x.1, design.support.y.0, design.support.y.1]),
    );
    meta.insert("alpha".into(), alpha.into());
    meta.insert("kernel".into(), serde_json::to_value(kernel).unwrap_or(Value::Null));
    meta.insert(
        "scaling".into(),
        match scaling {
            args::ScalingArg::DensityAdjusted => "density-adjusted",
            args::ScalingArg::Unadjusted => "unadjusted",
        }
        .into(),
    );
    if let Some(path) = &a.per_rep_output {
        let bytes = per_rep_doc(&res, meta.clone()).render(out.format)?;
        write_output(&bytes, Some(path))?;
    }
    emit(&summary_doc(&res, meta), out)?;
    Ok(0)
}

fn cmd_diagnose(a: DiagnoseArgs, out: &Emit) -> Result<u8, CliError> {
    let mode = a.mode.ok_or_else(|| CliError::Usage("--mode is required (density or gamma)".into()))?;
    let seed = a.seed.ok_or_else(|| CliError::Usage("--seed is required".into()))?;
    let sigma = a.noise.unwrap_or(NOISE_STD);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(CliError::Usage("--noise must be positive".into()));
    }
    let doc = match mode {
        DiagnoseMode::Density => {
            let n = a.n.unwrap_or(100_000);
            let grid = a.h_grid.map_or_else(|| vec![0.4, 0.2, 0.1, 0.05, 0.025], |l| l.0);
            if n == 0 || grid.is_empty() || grid.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                return Err(CliError::Usage("density mode needs n > 0 and positive bandwidths".into()));
            }
            let data = dgp::uniform_half_rectangle(n, sigma, 0.0, &mut dgp::replication_rng(seed, 0));
            let sample = to_signed_distance(&data, &BoundaryFrame::origin());
            let limit = PI / 6.0;
            let mut doc = Document::new("diagnose")
                .meta("mode", "density")
                .meta("n", n)
                .meta("seed", seed)
                .meta("limit_over_h", limit);
            for h in grid {
                let f = distance_baseline::density_at_zero(&sample, Side::Plus, h)?;
                doc.rows.push(Row::new().num("h", h).num("fcheck", f).num("fcheck_over_h", f / h));
            }
            doc
        }
        DiagnoseMode::Gamma => {
            let grid = a.n_grid.map_or_else(|| vec![10_000, 40_000, 160_000], |l| l.0);
            let scale = a.h_scale.unwrap_or(1.0);
            if grid.is_empty() || grid.contains(&0) || !(scale > 0.0 && scale.is_finite()) {
                return Err(CliError::Usage("gamma mode needs positive sample sizes and --h-scale".into()));
            }
            let (c_gamma, _, v_limit) = distance_baseline::gamma_psi_limits(PI / 2.0, sigma * sigma);
            let mut doc = Document::new("diagnose")
                .meta("mode", "gamma")
                .meta("seed", seed)
                .meta("h_scale", scale)
                .meta("v_limit", v_limit);
            for (i, &n) in grid.iter().enumerate() {
                let h = scale * (n as f64).powf(-0.2);
                let data = dgp::uniform_half_rectangle(n, sigma, 0.0, &mut dgp::replication_rng(seed, i as u64));
                let sample = to_signed_distance(&data, &BoundaryFrame::origin());
                let gp = distance_baseline::gamma_psi(&sample, h, Variance::Scalar(sigma * sigma))?;
                let scaled = gp.gamma_plus.map(|r| r.map(|v| v / h));
                let nh2v = gp.v_plus.map(|v| n as f64 * h * h * v);
                doc.rows.push(
                    Row::new()
                        .int("n", n as u64)
                        .num("h", h)
                        .num("gamma_deviation", distance_baseline::relative_frobenius(&scaled, &c_gamma))
                        .opt_num("n_h2_v", nh2v, "singular gram matrix")
                        .opt_num("v_ratio", nh2v.map(|v| v / v_limit), "singular gram matrix"),
                );
            }
            doc
        }
    };
    emit(&doc, out)?;
    Ok(0)
}

fn cmd_designs(_a: DesignsArgs, out: &Emit) -> Result<u8, CliError> {
    let mut doc = Document::new("designs");
    let mut theta = Map::new();
    for id in 1..=4u8 {
        theta.insert(id.to_string(), make_design(id)?.true_theta().into());
    }
    doc = doc.meta("true_theta", Value::Object(theta));
    for (id, side, term, value) in dgp::coefficient_table() {
        doc.rows.push(
            Row::new()
                .int("design", id.into())
                .text("side", side)
                .text("term", term)
                .num("coefficient", value),
        );
    }
    emit(&doc, out)?;
    Ok(0)
}
