//! `ovwave` command-line front end.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 domain
//! error (for example an unreachable sensitivity).

pub mod config;
mod output;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ovwave::asymwave::{sample_initial_state, WaveSpec};
use ovwave::diagnostics::{stability_report, Snapshot, StabilityThresholds};
use ovwave::ovsim::{integrate_with_stats, StepStats};
use ovwave::paramspace::{
    greek_constants, quantised_fixed_point, residual_itilde, solve_kappa1, sweep,
    FixedPointParams, ModelConfig, WaveDomain,
};

use config::{RunConfig, Settings, WaveSelector};
use output::{fmt_f64, sha256_hex, Csv};

pub const OUT_DIR_ENV: &str = "OVWAVE_OUT_DIR";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(ovwave::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Domain(_) => 3,
        }
    }
}

impl From<ovwave::Error> for CliError {
    fn from(e: ovwave::Error) -> Self {
        match e {
            ovwave::Error::InvalidConfig(msg) => CliError::Config(msg),
            other => CliError::Domain(other),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "ovwave", version, about = "Travelling headway waves of the optimal-velocity model on a ring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate the fixed-point parameter space (roots, modulus, speed, sensitivity for n = 1..4).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        k_min: Option<f64>,
        #[arg(long)]
        k_max: Option<f64>,
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Find the fixed point for a sensitivity and branch (or a given kappa1/gamma).
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Sample the asymptotic headway field on the ring.
    Wave {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        time: Timing,
    },
    /// Integrate the ring from the asymptotic initial condition.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        time: Timing,
    },
    /// Compare a simulated run with the asymptotic wave.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        time: Timing,
        /// Directory holding manifest.json and trajectory.csv from `simulate`.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        early_start: Option<f64>,
        #[arg(long)]
        early_end: Option<f64>,
        #[arg(long)]
        late_start: Option<f64>,
        #[arg(long)]
        late_end: Option<f64>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Flat key = value configuration file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: $OVWAVE_OUT_DIR, then the current directory).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    v_max: Option<f64>,
    #[arg(long)]
    h_c: Option<f64>,
    /// Number of cars.
    #[arg(long = "N")]
    cars: Option<u64>,
    /// Number of wavelengths around the ring.
    #[arg(long = "n")]
    oscillations: Option<u64>,
    #[arg(long)]
    a_hat: Option<f64>,
    /// first (downward wave) or second (upward wave).
    #[arg(long)]
    branch: Option<String>,
    /// kappa1/gamma, instead of a_hat and branch.
    #[arg(long)]
    kappa1: Option<f64>,
}

#[derive(Args, Debug)]
struct Timing {
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    sample_dt: Option<f64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long)]
    max_step: Option<f64>,
}

impl Common {
    fn settings(&self) -> Result<Settings, CliError> {
        let mut s = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        let reals = [
            ("v_max", self.v_max),
            ("h_c", self.h_c),
            ("a_hat", self.a_hat),
            ("kappa1", self.kappa1),
        ];
        for (key, value) in reals {
            if let Some(v) = value {
                s.set(key, fmt_f64(v));
            }
        }
        if let Some(v) = self.cars {
            s.set("cars", v);
        }
        if let Some(v) = self.oscillations {
            s.set("oscillations", v);
        }
        if let Some(b) = &self.branch {
            s.set("branch", b);
        }
        Ok(s)
    }

    fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."))
    }
}

impl Timing {
    fn apply(&self, s: &mut Settings) {
        let pairs = [
            ("t_end", self.t_end),
            ("sample_dt", self.sample_dt),
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step", self.max_step),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                s.set(key, fmt_f64(v));
            }
        }
    }
}

fn set_opt(s: &mut Settings, key: &str, value: Option<f64>) {
    if let Some(v) = value {
        s.set(key, fmt_f64(v));
    }
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("ovwave: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Sweep {
            common,
            k_min,
            k_max,
            steps,
        } => {
            let mut s = common.settings()?;
            set_opt(&mut s, "k_min", k_min);
            set_opt(&mut s, "k_max", k_max);
            if let Some(n) = steps {
                s.set("steps", n);
            }
            cmd_sweep(&RunConfig::resolve(&s)?, &common.out_dir())
        }
        Command::Solve { common } => {
            let cfg = RunConfig::resolve(&common.settings()?)?;
            cmd_solve(&cfg, &common.out_dir())
        }
        Command::Wave { common, time } => {
            let mut s = common.settings()?;
            time.apply(&mut s);
            cmd_wave(&RunConfig::resolve(&s)?, &common.out_dir())
        }
        Command::Simulate { common, time } => {
            let mut s = common.settings()?;
            time.apply(&mut s);
            cmd_simulate(&RunConfig::resolve(&s)?, &common.out_dir())
        }
        Command::Compare {
            common,
            time,
            run,
            early_start,
            early_end,
            late_start,
            late_end,
        } => {
            let mut s = common.settings()?;
            time.apply(&mut s);
            set_opt(&mut s, "early_start", early_start);
            set_opt(&mut s, "early_end", early_end);
            set_opt(&mut s, "late_start", late_start);
            set_opt(&mut s, "late_end", late_end);
            cmd_compare(&RunConfig::resolve(&s)?, &run, &common.out_dir())
        }
    }
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn json(value: &impl Serialize) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn build_wave(cfg: &RunConfig) -> Result<WaveSpec, CliError> {
    let k = match cfg.selector()? {
        WaveSelector::Kappa1(k) => k,
        WaveSelector::Sensitivity { a_hat, branch } => {
            let greek = greek_constants(cfg.v_max, cfg.h_c);
            solve_kappa1(a_hat, cfg.oscillations, cfg.cars, branch, &greek)?
        }
    };
    let (fp, model) = quantised_fixed_point(k, cfg.v_max, cfg.h_c, cfg.cars, cfg.oscillations)?;
    Ok(WaveSpec::new(fp, model)?)
}

fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let domain = WaveDomain::get();
    let range = cfg.k_range.unwrap_or((domain.lower, domain.upper));
    let greek = greek_constants(cfg.v_max, cfg.h_c);
    let rows = sweep(range, cfg.steps, &greek, cfg.cars, &[1, 2, 3, 4]);
    let mut csv = Csv::new(&[
        "kappa1_over_gamma",
        "a",
        "b",
        "c",
        "d",
        "m",
        "omega",
        "a_hat_n1",
        "a_hat_n2",
        "a_hat_n3",
        "a_hat_n4",
    ]);
    let mut skipped = 0;
    for row in &rows {
        match &row.outcome {
            Ok((v, a_hat)) => {
                let mut fields = vec![
                    row.kappa1_over_gamma,
                    v.roots.a,
                    v.roots.b,
                    v.roots.c,
                    v.roots.d,
                    v.m,
                    v.omega,
                ];
                fields.extend_from_slice(a_hat);
                csv.reals(&fields);
            }
            Err(_) => skipped += 1,
        }
    }
    let path = write_file(out, "sweep.csv", csv.as_bytes())?;
    eprintln!(
        "wrote {} ({} rows, {skipped} outside the four-real-root domain skipped)",
        path.display(),
        rows.len() - skipped
    );
    Ok(())
}

#[derive(Serialize)]
struct SolveOutput<'a> {
    fixed_point: &'a FixedPointParams,
    model: &'a ModelConfig,
    residual: f64,
    wave_amplitude: f64,
    pattern_velocity: f64,
}

fn cmd_solve(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let spec = build_wave(cfg)?;
    let body = json(&SolveOutput {
        fixed_point: &spec.fp,
        model: &spec.cfg,
        residual: residual_itilde(&spec.fp, spec.greek()),
        wave_amplitude: spec.amplitude(),
        pattern_velocity: spec.pattern_velocity(),
    });
    write_file(out, "fixed_point.json", &body)?;
    print!("{}", String::from_utf8_lossy(&body));
    Ok(())
}

fn sample_times(t_end: f64, dt: f64) -> impl Iterator<Item = f64> {
    let count = ((t_end / dt) * (1.0 + 1e-12)).floor() as u64;
    (0..=count).map(move |i| i as f64 * dt)
}

fn cmd_wave(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let spec = build_wave(cfg)?;
    let mut csv = Csv::new(&["t", "j", "headway"]);
    for t in sample_times(cfg.t_end, cfg.integrator.dense_sample_dt) {
        for j in 0..cfg.cars {
            csv.field_row(t, j, ovwave::asymwave::headway_at(&spec, j as f64, t));
        }
    }
    let path = write_file(out, "wave.csv", csv.as_bytes())?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize, serde::Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    config_hash: String,
    trajectory_sha256: String,
    snapshots: usize,
    stats: StatsRecord,
}

#[derive(Serialize, serde::Deserialize)]
struct StatsRecord {
    accepted: usize,
    rejected: usize,
    evaluations: usize,
}

impl From<StepStats> for StatsRecord {
    fn from(s: StepStats) -> Self {
        Self {
            accepted: s.accepted,
            rejected: s.rejected,
            evaluations: s.evaluations,
        }
    }
}

#[derive(Serialize)]
struct ManifestOut<'a> {
    #[serde(flatten)]
    manifest: &'a Manifest,
    config: config::PhysicsKey,
    fixed_point: &'a FixedPointParams,
    model: &'a ModelConfig,
}

fn config_hash(cfg: &RunConfig) -> String {
    sha256_hex(serde_json::to_string(&cfg.physics()).expect("serializable").as_bytes())
}

fn cmd_simulate(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let spec = build_wave(cfg)?;
    let mut csv = Csv::new(&["t", "j", "headway"]);
    let mut snapshots = 0;
    let (_, stats) = integrate_with_stats(
        &sample_initial_state(&spec),
        cfg.t_end,
        &cfg.integrator,
        &spec.cfg,
        |s| {
            snapshots += 1;
            for (j, &h) in s.headway.iter().enumerate() {
                csv.field_row(s.t, j, h);
            }
        },
    )?;
    write_file(out, "trajectory.csv", csv.as_bytes())?;
    let manifest = Manifest {
        tool: "ovwave".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_hash: config_hash(cfg),
        trajectory_sha256: sha256_hex(csv.as_bytes()),
        snapshots,
        stats: stats.into(),
    };
    let body = json(&ManifestOut {
        manifest: &manifest,
        config: cfg.physics(),
        fixed_point: &spec.fp,
        model: &spec.cfg,
    });
    let path = write_file(out, "manifest.json", &body)?;
    eprintln!(
        "wrote {} and trajectory.csv ({snapshots} snapshots, {} steps)",
        path.display(),
        stats.accepted
    );
    Ok(())
}

fn read_trajectory(text: &str, cars: usize) -> Result<Vec<Snapshot>, CliError> {
    let bad = |line: usize, why: &str| CliError::Config(format!("trajectory.csv:{line}: {why}"));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "t,j,headway")) => {}
        _ => return Err(bad(1, "expected header t,j,headway")),
    }
    let mut snaps: Vec<Snapshot> = Vec::new();
    for (i, line) in lines {
        let mut parts = line.split(',');
        let (Some(t), Some(j), Some(h), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad(i + 1, "expected three columns"));
        };
        let t: f64 = t.parse().map_err(|_| bad(i + 1, "bad t"))?;
        let j: usize = j.parse().map_err(|_| bad(i + 1, "bad j"))?;
        let h: f64 = h.parse().map_err(|_| bad(i + 1, "bad headway"))?;
        if j == 0 {
            snaps.push(Snapshot {
                t,
                headway: Vec::with_capacity(cars),
            });
        }
        match snaps.last_mut() {
            Some(s) if s.headway.len() == j && s.t == t => s.headway.push(h),
            _ => return Err(bad(i + 1, "rows out of order")),
        }
    }
    if snaps.iter().any(|s| s.headway.len() != cars) {
        return Err(CliError::Config(format!(
            "trajectory.csv does not hold {cars} cars per snapshot"
        )));
    }
    Ok(snaps)
}

fn cmd_compare(cfg: &RunConfig, run: &Path, out: &Path) -> Result<(), CliError> {
    let read = |name: &str| {
        std::fs::read(run.join(name))
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", run.join(name).display())))
    };
    let manifest: Manifest = serde_json::from_slice(&read("manifest.json")?)
        .map_err(|e| CliError::Config(format!("manifest.json: {e}")))?;
    let expected = config_hash(cfg);
    if manifest.config_hash != expected {
        return Err(CliError::Config(format!(
            "manifest config hash {} does not match this configuration ({expected})",
            manifest.config_hash
        )));
    }
    let raw = read("trajectory.csv")?;
    if sha256_hex(&raw) != manifest.trajectory_sha256 {
        return Err(CliError::Config(
            "trajectory.csv checksum does not match manifest.json".into(),
        ));
    }
    let text = String::from_utf8(raw).map_err(|_| CliError::Config("trajectory.csv is not UTF-8".into()))?;
    let traj = read_trajectory(&text, cfg.cars)?;
    let spec = build_wave(cfg)?;
    let t_last = traj.last().map(|s| s.t).unwrap_or(0.0);
    let windows = cfg.windows(t_last);
    let report = stability_report(&traj, &spec, &windows, &StabilityThresholds::default())?;

    let mut overlay = Csv::new(&["t", "j", "numeric", "asymptotic"]);
    for snap in traj
        .iter()
        .filter(|s| report.samples.iter().any(|w| w.t == s.t))
    {
        for (j, &h) in snap.headway.iter().enumerate() {
            let asym = ovwave::asymwave::headway_at(&spec, j as f64, snap.t);
            overlay.line(&format!("{},{j},{},{}", fmt_f64(snap.t), fmt_f64(h), fmt_f64(asym)));
        }
    }
    let mut windows_csv = Csv::new(&["t", "linf", "amplitude", "phase"]);
    for w in &report.samples {
        windows_csv.reals(&[w.t, w.linf, w.amplitude, w.phase]);
    }
    write_file(out, "overlay.csv", overlay.as_bytes())?;
    write_file(out, "windows.csv", windows_csv.as_bytes())?;

    #[derive(Serialize)]
    struct Out<'a> {
        config_hash: &'a str,
        windows: ovwave::diagnostics::StabilityWindows,
        #[serde(flatten)]
        report: &'a ovwave::diagnostics::StabilityReport,
    }
    let body = json(&Out {
        config_hash: &expected,
        windows,
        report: &report,
    });
    write_file(out, "report.json", &body)?;
    print!("{}", String::from_utf8_lossy(&body));
    Ok(())
}
