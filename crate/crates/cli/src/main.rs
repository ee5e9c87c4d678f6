//! `blochgap` command-line driver.
//!
//! Every command reads one manifest, writes its artifacts into the output
//! directory and appends a record to `runs.jsonl` there. Exit status: 0
//! success, 2 validation, 3 certification failure, 4 numerical failure.

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use blochgap::floquet::{self, GridSpec, SweepSpec, WindowConfig};
use blochgap::manifest::ExperimentManifest;
use blochgap::resonance::{self, build_partition};
use blochgap::{gauge, xisearch, Error, ErrorClass};
use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "blochgap", version, about = "Band structure, resonance and band-coverage experiments for periodic operators")]
struct Cli {
    /// Experiment manifest (TOML).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output directory; overrides `output_dir` of the manifest.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for parallel maps (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Replace every seed of the manifest.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Band values on a quasimomentum grid.
    Bands {
        /// Grid as `n1xn2[xn3]`.
        #[arg(long)]
        grid: Option<String>,
        #[arg(long)]
        half_width: Option<f64>,
    },
    /// Gaps of the spectrum in `[tau − half_width, tau + half_width]`.
    Gaps {
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        half_width: Option<f64>,
        #[arg(long)]
        grid: Option<String>,
    },
    /// Resonance strata and classes at one quasimomentum, plus measure estimates.
    ResonanceMap,
    /// Gauge conjugation and block decomposition at one quasimomentum.
    GaugeCheck,
    /// Constructive search for an isolated band value and its certification.
    FindXi {
        /// Multiplier on the certified radius (negative controls).
        #[arg(long)]
        upsilon_scale: Option<f64>,
    },
    /// Shell counts `#{γ : |A0(h(γ+ξ)) − τ| ≤ w}` over a list of `h`.
    Count,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Bands { .. } => "bands",
            Command::Gaps { .. } => "gaps",
            Command::ResonanceMap => "resonance-map",
            Command::GaugeCheck => "gauge-check",
            Command::FindXi { .. } => "find-xi",
            Command::Count => "count",
        }
    }
}

/// Failure of a command, mapped to an exit status.
#[derive(Debug)]
enum Failure {
    Lib(Error),
    /// The computation ran but its claim did not hold.
    Assertion(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(Error::Io(e))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Lib(Error::Json(e))
    }
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Assertion(_) => 3,
            Failure::Lib(e) => match e.class() {
                ErrorClass::Validation => 2,
                ErrorClass::Certification => 3,
                ErrorClass::Numerical => 4,
            },
        }
    }

    fn to_json(&self) -> serde_json::Value {
        match self {
            Failure::Assertion(m) => json!({"error": {"class": "certification", "message": m}}),
            Failure::Lib(e) => {
                let class = match e.class() {
                    ErrorClass::Validation => "validation",
                    ErrorClass::Certification => "certification",
                    ErrorClass::Numerical => "numerical",
                };
                let mut v = json!({"error": {"class": class, "kind": kind(e), "message": e.to_string()}});
                if let Error::Manifest { field, .. } = e {
                    v["error"]["field"] = json!(field);
                }
                v
            }
        }
    }
}

fn kind(e: &Error) -> String {
    let dbg = format!("{e:?}");
    dbg.split(|c: char| !c.is_alphanumeric()).next().unwrap_or("Error").to_string()
}

struct Context {
    manifest: ExperimentManifest,
    out: PathBuf,
    workers: Option<usize>,
    outputs: Vec<String>,
}

impl Context {
    fn header(&self) -> String {
        format!(
            "manifest_hash: {}\nseeds: {}\ntool: blochgap {VERSION}",
            self.manifest.hash,
            self.manifest.seed_list()
        )
    }

    fn header_json(&self) -> serde_json::Value {
        json!({
            "manifest_hash": self.manifest.hash,
            "seeds": {"xisearch": self.manifest.seeds.xisearch, "measure": self.manifest.seeds.measure},
            "tool_version": VERSION,
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, Failure> {
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    fn write_json(&mut self, name: &str, body: impl Serialize) -> Result<(), Failure> {
        let mut v = json!({"header": self.header_json()});
        v["result"] = serde_json::to_value(body)?;
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &v)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

fn parse_grid(s: &str, d: usize) -> Result<Vec<usize>, Failure> {
    let parts: Result<Vec<usize>, _> = s.split('x').map(|p| p.trim().parse::<usize>()).collect();
    match parts {
        Ok(v) if v.len() == d && v.iter().all(|n| *n > 0) => Ok(v),
        _ => Err(Error::InvalidArgument { name: "grid", reason: format!("expected {d} positive sizes like 64x64, got `{s}`") }.into()),
    }
}

fn grid_for(ctx: &Context, flag: &Option<String>) -> Result<Vec<usize>, Failure> {
    let d = ctx.manifest.params.d;
    match (flag, &ctx.manifest.grid.points) {
        (Some(s), _) => parse_grid(s, d),
        (None, Some(p)) if p.len() == d => Ok(p.clone()),
        (None, Some(_)) => Err(Error::Manifest { field: "grid.points".into(), reason: format!("expected {d} entries") }.into()),
        (None, None) => Ok(vec![16; d]),
    }
}

fn run_sweep(ctx: &Context, grid: Vec<usize>, tau: f64, half_width: f64) -> Result<floquet::BandTable, Failure> {
    let op = ctx.manifest.operator()?;
    let full_below = ctx.manifest.grid.full_below.unwrap_or(ctx.manifest.params.d == 1);
    let cfg = WindowConfig { full_below, ..Default::default() };
    let window = op.basis_window(tau - half_width, tau + half_width, &cfg);
    let spec = SweepSpec {
        grid: GridSpec::Regular(grid),
        lo: tau - half_width,
        hi: tau + half_width,
        window,
        tau,
        workers: ctx.workers,
    };
    Ok(floquet::sweep(&op, &spec)?)
}

fn cmd_bands(ctx: &mut Context, grid: &Option<String>, half_width: Option<f64>) -> Result<(), Failure> {
    let m = &ctx.manifest;
    let tau = m.params.tau;
    let hw = half_width.or(m.grid.half_width).unwrap_or(0.5 * m.params.h);
    let grid = grid_for(ctx, grid)?;
    let table = run_sweep(ctx, grid.clone(), tau, hw)?;
    let header = ctx.header();
    let mut w = ctx.create("bands.csv")?;
    floquet::write_bands_csv(&table, &header, &mut w)?;
    w.flush()?;
    let rows: usize = table.values.iter().map(Vec::len).sum();
    ctx.write_json(
        "bands.json",
        json!({
            "grid": grid,
            "tau": tau,
            "lo": table.lo,
            "hi": table.hi,
            "rows": rows,
            "resolution": table.resolution(),
            "lipschitz": table.lipschitz,
            "covering_radius": table.covering_radius,
            "spectrum_floor": table.spectrum_floor,
            "symmetry_order": table.symmetry_order,
            "solved_points": table.solved_points,
            "basis_sizes": [table.basis_sizes.iter().min(), table.basis_sizes.iter().max()],
            "failures": table.failures,
        }),
    )?;
    if !table.failures.is_empty() {
        return Err(Error::Eigensolver(format!("{} grid points failed", table.failures.len())).into());
    }
    Ok(())
}

fn cmd_gaps(ctx: &mut Context, tau: Option<f64>, half_width: Option<f64>, grid: &Option<String>) -> Result<(), Failure> {
    let m = &ctx.manifest;
    let tau = tau.unwrap_or(m.params.tau);
    let hw = half_width.or(m.grid.half_width).unwrap_or(0.5 * m.params.h);
    if hw.is_nan() || hw < 0.0 {
        return Err(Error::InvalidArgument { name: "half_width", reason: "must be non-negative".into() }.into());
    }
    let (gaps, resolution) = if hw == 0.0 {
        (Vec::new(), None)
    } else {
        let grid = grid_for(ctx, grid)?;
        let table = run_sweep(ctx, grid, tau, hw)?;
        (floquet::gap_report(&table, tau, hw), Some(table.resolution()))
    };
    ctx.write_json("gaps.json", json!({"tau": tau, "half_width": hw, "resolution": resolution, "gaps": gaps}))?;
    Ok(())
}

fn cmd_resonance_map(ctx: &mut Context) -> Result<(), Failure> {
    let m = &ctx.manifest;
    let op = m.operator()?;
    let cfg = m.resonance_config()?;
    let xi = m.quasimomentum()?;
    let part = build_partition(&op.symbol, &op.lattice, &cfg, op.h, op.eps, &xi, m.params.tau)?;
    part.verify_equivalence()?;
    let stats = resonance::class_stats(&part);
    let mut measures = Vec::new();
    if let Some(theta) = &m.resonance.measure_theta {
        if theta.len() != m.params.d {
            return Err(Error::Manifest { field: "resonance.measure_theta".into(), reason: "wrong length".into() }.into());
        }
        let mut c = [0i64; 3];
        c[..theta.len()].copy_from_slice(theta);
        let t = op.lattice.point(&c);
        let samples = m.resonance.measure_samples.unwrap_or(100_000);
        for rho in m.resonance.measure_rho.clone().unwrap_or_else(|| vec![0.1]) {
            measures.push(resonance::measure_estimate(&op.symbol, m.params.tau, &t, rho, samples, m.seeds.measure)?);
        }
    }
    let header = ctx.header();
    let mut w = ctx.create("partition.csv")?;
    resonance::write_partition_csv(&part, &header, &mut w)?;
    w.flush()?;
    ctx.write_json(
        "resonance.json",
        json!({
            "window": part.window,
            "thresholds": part.thresholds,
            "points": part.points.len(),
            "stats": stats,
            "max_class_diameter": part.max_class_diameter(&op.lattice),
            "notices": part.notices,
            "regime_notes": cfg.regime_notes(op.h, op.eps),
            "measure": measures,
        }),
    )?;
    Ok(())
}

fn cmd_gauge_check(ctx: &mut Context) -> Result<(), Failure> {
    let m = &ctx.manifest;
    let op = m.operator()?;
    let cfg = m.resonance_config()?;
    let xi = m.quasimomentum()?;
    let tau = m.params.tau;
    let part = build_partition(&op.symbol, &op.lattice, &cfg, op.h, op.eps, &xi, tau)?;
    let w = part.window;
    let basis = op.basis(&xi, op.basis_window(tau - w, tau + w, &WindowConfig::default()))?;
    let matrix = op.assemble(&basis);
    let outcome = gauge::run(&op, &matrix, &part, &m.gauge_config(), 0.5 * op.h)?;
    ctx.write_json("gauge.json", &outcome.report)?;
    Ok(())
}

fn cmd_find_xi(ctx: &mut Context, upsilon_scale: Option<f64>) -> Result<(), Failure> {
    let m = &ctx.manifest;
    let op = m.operator()?;
    let mut cfg = m.xisearch_config()?;
    if let Some(s) = upsilon_scale {
        cfg.upsilon_scale = s;
    }
    let result = xisearch::run_steps(&op, &cfg)?;
    let header = ctx.header();
    let mut w = ctx.create("intervals.csv")?;
    xisearch::write_intervals_csv(&result, &header, &mut w)?;
    w.flush()?;
    ctx.write_json("xisearch.json", &result)?;
    if !result.certified() {
        return Err(Failure::Assertion(result.failure.clone().unwrap_or_else(|| "not certified".into())));
    }
    Ok(())
}

fn cmd_count(ctx: &mut Context) -> Result<(), Failure> {
    let m = &ctx.manifest;
    let op = m.operator()?;
    let tau = m.params.tau;
    let hs = m.count.h.clone().unwrap_or_else(|| (0..=4).map(|k| 0.2 * 10f64.powf(-(k as f64) / 4.0)).collect());
    let factor = m.count.w_factor.unwrap_or(1.0);
    let xi = match &m.count.xi_frac {
        Some(f) => m.reduced_to_cartesian(f, "count.xi_frac")?,
        None => m.quasimomentum().unwrap_or_else(|_| vec![0.0; m.params.d]),
    };
    let mut rows = Vec::with_capacity(hs.len());
    for h in hs {
        let w = factor * h;
        rows.push((h, w, op.lattice.shell_count(&op.symbol, tau, w, h, &xi)?));
    }
    let header = ctx.header();
    let mut out = ctx.create("count.csv")?;
    for line in header.lines() {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "h,w,count")?;
    for (h, w, c) in rows {
        writeln!(out, "{h:.12e},{w:.12e},{c}")?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RunRecord<'a> {
    manifest_hash: &'a str,
    command: &'a str,
    wall_time_s: f64,
    outputs: &'a [String],
    tool_version: &'a str,
    exit_code: u8,
}

fn append_record(dir: &Path, rec: &RunRecord) -> std::io::Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(dir.join("runs.jsonl"))?;
    writeln!(f, "{}", serde_json::to_string(rec).map_err(std::io::Error::other)?)
}

fn report_error(out: Option<&Path>, f: &Failure) {
    let v = f.to_json();
    eprintln!("{v}");
    if let Some(dir) = out {
        // best effort; stderr already carries the same JSON
        let _ = fs::write(dir.join("error.json"), format!("{v:#}\n"));
    }
}

fn run(cli: Cli) -> (Option<Context>, Result<(), Failure>, Option<PathBuf>) {
    let Some(path) = cli.manifest.clone() else {
        let e = Error::InvalidArgument { name: "manifest", reason: "--manifest is required".into() };
        return (None, Err(e.into()), cli.out.clone());
    };
    let mut manifest = match ExperimentManifest::load(&path) {
        Ok(m) => m,
        Err(e) => return (None, Err(e.into()), cli.out.clone()),
    };
    if let Some(s) = cli.seed_override {
        manifest.override_seeds(s);
    }
    let out = cli.out.clone().or_else(|| manifest.output_dir.as_ref().map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("."));
    if let Err(e) = fs::create_dir_all(&out) {
        return (None, Err(e.into()), None);
    }
    if let Some(n) = cli.workers {
        if n == 0 {
            let e = Error::InvalidArgument { name: "workers", reason: "must be positive".into() };
            return (None, Err(e.into()), Some(out));
        }
        // only fails when a pool already exists, in which case it is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut ctx = Context { manifest, out: out.clone(), workers: cli.workers, outputs: Vec::new() };
    let res = match &cli.command {
        Command::Bands { grid, half_width } => cmd_bands(&mut ctx, grid, *half_width),
        Command::Gaps { tau, half_width, grid } => cmd_gaps(&mut ctx, *tau, *half_width, grid),
        Command::ResonanceMap => cmd_resonance_map(&mut ctx),
        Command::GaugeCheck => cmd_gauge_check(&mut ctx),
        Command::FindXi { upsilon_scale } => cmd_find_xi(&mut ctx, *upsilon_scale),
        Command::Count => cmd_count(&mut ctx),
    };
    (Some(ctx), res, Some(out))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let msg = e.to_string();
                eprintln!("{msg}");
                eprintln!("{}", json!({"error": {"class": "validation", "kind": "Usage", "message": msg.lines().next().unwrap_or("")}}));
                return ExitCode::from(2);
            }
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    let command = cli.command.name();
    let start = Instant::now();
    let (ctx, res, out) = run(cli);
    let code = match &res {
        Ok(()) => 0,
        Err(f) => {
            report_error(out.as_deref(), f);
            f.code()
        }
    };
    if let Some(ctx) = ctx {
        let rec = RunRecord {
            manifest_hash: &ctx.manifest.hash,
            command,
            wall_time_s: start.elapsed().as_secs_f64(),
            outputs: &ctx.outputs,
            tool_version: VERSION,
            exit_code: code,
        };
        if let Err(e) = append_record(&ctx.out, &rec) {
            log::warn!("could not append run record: {e}");
        }
    }
    ExitCode::from(code)
}
