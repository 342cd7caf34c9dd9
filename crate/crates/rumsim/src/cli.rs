//! The `rumsim` command line.
//!
//! Exit status is 0 on success, 1 when the run cannot start or fails, and 2
//! when some items of an experiment failed while the rest completed.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use rumsim_core::simulator::DrawMode;

use crate::config::{Overrides, RunConfig};
use crate::dataio::{write_dataset, IngestionReport};
use crate::error::{Error, Result};
use crate::experiments::{self, Failure, NamedFit, Results};
use crate::manifest::{Manifest, Status};
use crate::report::{emit_report, fit_table, recovery_table};

#[derive(Debug, Parser)]
#[command(name = "rumsim", version, about = "Simulation-based random utility choice models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset as CSV.
    Generate,
    /// Fit every estimator on the full dataset.
    Fit,
    /// Evaluate the models saved by `fit` on the configured dataset.
    Eval,
    /// k-fold cross-validation on identical folds.
    Cv,
    /// Monte Carlo parameter recovery over independently generated datasets.
    Montecarlo,
    /// Estimate distributions and wall time across the number of replications Q.
    Qsweep,
    /// Parameter recovery across training smoothing values.
    Lambdasweep,
    /// Compare analytic and finite-difference gradients.
    Gradcheck,
    /// Re-emit reports from saved results.
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Fit => "fit",
            Command::Eval => "eval",
            Command::Cv => "cv",
            Command::Montecarlo => "montecarlo",
            Command::Qsweep => "qsweep",
            Command::Lambdasweep => "lambdasweep",
            Command::Gradcheck => "gradcheck",
            Command::Report => "report",
        }
    }
}

fn parse_draw_mode(s: &str) -> std::result::Result<DrawMode, String> {
    DrawMode::parse(s).ok_or_else(|| format!("unknown draw mode `{s}` (expected fixed or resample)"))
}

#[derive(Debug, Clone, Default, clap::Args)]
pub struct Flags {
    /// Experiment config (TOML) or a run manifest (JSON); the built-in Experiment I otherwise.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replications per choice situation.
    #[arg(long, global = true)]
    pub q: Option<usize>,
    /// Training smoothing scale.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// `fixed` (common random numbers) or `resample`.
    #[arg(long, global = true, value_parser = parse_draw_mode)]
    pub draw_mode: Option<DrawMode>,
    /// Keep only the estimator with this label or model name.
    #[arg(long, global = true)]
    pub model: Option<String>,
    #[arg(long, global = true)]
    pub reps: Option<usize>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    /// Worker threads; machine parallelism otherwise.
    #[arg(long, global = true, env = "RUMSIM_THREADS")]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            q: self.q,
            lambda: self.lambda,
            draw_mode: self.draw_mode,
            model: self.model.clone(),
            reps: self.reps,
            folds: self.folds,
            out: self.out.clone(),
        }
    }
}

/// Configuration for a run: the file given, the manifest's echo, or the built-in default.
pub fn resolve_config(flags: &Flags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) if p.extension().is_some_and(|e| e == "json") => Manifest::load(p)?.config,
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::builtin(),
    };
    cfg.apply(&flags.overrides())?;
    cfg.validate()?;
    Ok(cfg)
}

fn configure_threads(threads: Option<usize>) -> Result<usize> {
    if threads == Some(0) {
        return Err(Error::config("--threads must be positive"));
    }
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = threads {
            // A pool built earlier in this process stays in place.
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Ok(rayon::current_num_threads())
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok(threads.unwrap_or(1).min(1))
    }
}

/// What a subcommand produced.
pub struct Outcome {
    pub outputs: Vec<PathBuf>,
    pub failures: Vec<Failure>,
    pub ingestion: Option<IngestionReport>,
    /// A check that ran to completion but did not pass.
    pub check_failed: bool,
}

fn stem(cfg: &RunConfig, cmd: Command) -> String {
    format!("{}_{}", cfg.experiment, cmd.name())
}

fn results_path(cfg: &RunConfig, cmd: Command) -> PathBuf {
    cfg.output.dir.join(format!("{}_results.json", stem(cfg, cmd)))
}

fn write_results(cfg: &RunConfig, cmd: Command, results: &Results) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output.dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut outputs = Vec::new();
    for r in results.reports() {
        outputs.extend(emit_report(&r, dir, &stem(cfg, cmd))?);
    }
    let path = results_path(cfg, cmd);
    let text = serde_json::to_string_pretty(results)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    outputs.push(path);
    Ok(outputs)
}

fn progress(msg: &str) {
    eprintln!("  {msg}");
}

/// Run one subcommand on a resolved configuration.
pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<Outcome> {
    let mut p = progress;
    let done = |outputs, failures| Outcome {
        outputs,
        failures,
        ingestion: None,
        check_failed: false,
    };
    match cmd {
        Command::Generate => {
            let src = experiments::load_source(cfg)?;
            let dir = &cfg.output.dir;
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let csv = dir.join(format!("{}_data.csv", cfg.experiment));
            let schema = write_dataset(&src.data, &csv)?;
            let schema_path = dir.join(format!("{}_data_schema.toml", cfg.experiment));
            let text = toml::to_string(&schema).map_err(|e| Error::config(e.to_string()))?;
            std::fs::write(&schema_path, text).map_err(|e| Error::io(&schema_path, e))?;
            println!("wrote {} situations to {}", src.data.len(), csv.display());
            Ok(done(vec![csv, schema_path], Vec::new()))
        }
        Command::Fit => {
            let (out, failures) = experiments::run_fit(cfg, &mut p)?;
            println!("{}", fit_table(&out.rows).to_markdown());
            println!("{}", recovery_table(&out.params).to_markdown());
            let ingestion = out.ingestion.clone();
            let outputs = write_results(cfg, cmd, &Results::Fit(out))?;
            Ok(Outcome {
                ingestion,
                ..done(outputs, failures)
            })
        }
        Command::Eval => {
            let path = results_path(cfg, Command::Fit);
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let fits: Vec<NamedFit> = match serde_json::from_str(&text)? {
                Results::Fit(f) => f.fits,
                _ => return Err(Error::config(format!("{} does not hold fit results", path.display()))),
            };
            let (rows, failures) = experiments::run_eval(cfg, &fits)?;
            println!("{}", fit_table(&rows).to_markdown());
            Ok(done(write_results(cfg, cmd, &Results::Eval { rows })?, failures))
        }
        Command::Cv => {
            let (out, failures) = experiments::run_cv(cfg, &mut p)?;
            if let Some(r) = &out.ingestion {
                println!("{r}\n");
            }
            println!("{}", fit_table(&out.rows).to_markdown());
            let ingestion = out.ingestion.clone();
            let outputs = write_results(cfg, cmd, &Results::Cv(out))?;
            Ok(Outcome {
                ingestion,
                ..done(outputs, failures)
            })
        }
        Command::Montecarlo => {
            let (out, failures) = experiments::run_montecarlo(cfg, &mut p)?;
            println!("{}", recovery_table(&out.params).to_markdown());
            if let Some(e) = &out.equivalence {
                println!("{}", crate::report::equivalence_table(e).to_markdown());
            }
            Ok(done(write_results(cfg, cmd, &Results::MonteCarlo(out))?, failures))
        }
        Command::Qsweep => {
            let (out, failures) = experiments::run_qsweep(cfg, &mut p)?;
            println!("{}", crate::report::q_sweep_table(&out.sweep).to_markdown());
            println!("{}", crate::report::timing_table(&out.timing).to_markdown());
            Ok(done(write_results(cfg, cmd, &Results::QSweep(out))?, failures))
        }
        Command::Lambdasweep => {
            let (out, failures) = experiments::run_lambdasweep(cfg, &mut p)?;
            println!("{}", recovery_table(&out.params).to_markdown());
            Ok(done(write_results(cfg, cmd, &Results::LambdaSweep(out))?, failures))
        }
        Command::Gradcheck => {
            let out = experiments::run_gradcheck(cfg, &mut p)?;
            for r in &out.rows {
                println!(
                    "{}: {} parameters, max relative error {:.3e}{} [{}]",
                    r.label,
                    r.parameters,
                    r.max_relative_error,
                    r.worst_parameter.as_ref().map_or(String::new(), |w| format!(" at `{w}`")),
                    if r.passed { "ok" } else { "FAIL" }
                );
            }
            println!(
                "max relative error: {:.3e} (tolerance {:.0e}, N = {}, Q = {}, lambda = {})",
                out.max_relative_error(),
                out.tolerance,
                out.n,
                out.q,
                out.lambda
            );
            let check_failed = !out.passed();
            let outputs = write_results(cfg, cmd, &Results::Gradcheck(out))?;
            Ok(Outcome {
                check_failed,
                ..done(outputs, Vec::new())
            })
        }
        Command::Report => {
            let mut outputs = Vec::new();
            for c in [
                Command::Fit,
                Command::Eval,
                Command::Cv,
                Command::Montecarlo,
                Command::Qsweep,
                Command::Lambdasweep,
            ] {
                let path = results_path(cfg, c);
                if !path.is_file() {
                    continue;
                }
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                let results: Results = serde_json::from_str(&text)?;
                for r in results.reports() {
                    outputs.extend(emit_report(&r, &cfg.output.dir, &stem(cfg, c))?);
                }
            }
            if outputs.is_empty() {
                return Err(Error::EmptyReport(format!(
                    "{} (no saved results in {})",
                    cfg.experiment,
                    cfg.output.dir.display()
                )));
            }
            for o in &outputs {
                println!("wrote {}", o.display());
            }
            Ok(done(outputs, Vec::new()))
        }
    }
}

fn manifest_path(cfg: &RunConfig, cmd: Command) -> PathBuf {
    cfg.output.dir.join(format!("{}_manifest.json", stem(cfg, cmd)))
}

/// Parse `argv`, run the subcommand and write its manifest; returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let cfg = match resolve_config(&cli.flags) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let threads = match configure_threads(cli.flags.threads) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    let started = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let clock = Instant::now();
    let result = execute(cli.command, &cfg);
    let (status, outcome) = match result {
        Ok(o) if o.check_failed => (Status::Failed, o),
        Ok(o) if o.failures.is_empty() => (Status::Ok, o),
        Ok(o) => (Status::Partial, o),
        Err(e) => {
            eprintln!("error: {e}");
            (
                Status::Failed,
                Outcome {
                    outputs: Vec::new(),
                    failures: vec![Failure {
                        item: cli.command.name().into(),
                        error: e.to_string(),
                    }],
                    ingestion: None,
                    check_failed: false,
                },
            )
        }
    };
    for f in &outcome.failures {
        eprintln!("failed: {}: {}", f.item, f.error);
    }
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: cli.command.name().into(),
        argv: argv.iter().map(|a| a.to_string_lossy().into_owned()).collect(),
        config: cfg.clone(),
        seed: cfg.seed,
        threads,
        started_unix_secs: started,
        wall_time_secs: clock.elapsed().as_secs_f64(),
        outputs: outcome.outputs,
        failures: outcome.failures,
        status,
        ingestion: outcome.ingestion,
    };
    let path = manifest_path(&cfg, cli.command);
    if let Err(e) = ensure_dir(&cfg.output.dir).and_then(|()| manifest.write(&path)) {
        eprintln!("error: cannot write manifest: {e}");
        return 1;
    }
    match status {
        Status::Ok => 0,
        Status::Partial => 2,
        Status::Failed => 1,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
