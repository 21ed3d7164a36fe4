//! Command-line front end. Each subcommand resolves its settings (defaults, then
//! `--config`, then flags), runs, and writes plot-ready CSV plus a manifest that
//! reproduces the run when passed back through `--config`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fusion::{fuse, UncertainScalar};
use crate::io::config::ConfigFile;
use crate::io::settings::{
    resolve_path, FuseSettings, RunoffSettings, Scenario, TwinSettings, ValueVar, MANIFEST_FILE,
};
use crate::io::tables::{
    days_csv, errors_csv, events_csv, load_days_csv, load_measurements_csv, load_parcels_csv,
    measurements_csv, trajectory_csv, write_atomic, DayRow,
};
use crate::runoff::{
    assimilate_runoff, demo_parcels, simulate_runoff, synthetic_days, weighted_cn, RunoffDay,
};
use crate::twin::{run_twin_experiment_with, TwinOutcome};

#[derive(Debug, Parser)]
#[command(name = "assim", version, about = "Variance-weighted data assimilation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fuse one model estimate with one observation.
    Fuse(FuseArgs),
    /// Lorenz-63 twin experiment: truth, noisy-IC free run and assimilated run.
    LorenzTwin(TwinArgs),
    /// Twin experiment over consecutive seeds, reporting divergence times.
    Sweep(SweepArgs),
    /// SCS-CN runoff with per-day fusion against observed runoff.
    Runoff(RunoffArgs),
}

#[derive(Debug, Args)]
struct Common {
    /// Config file or a manifest from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FuseArgs {
    #[command(flatten)]
    common: Common,
    /// Model estimate as `value,variance`.
    #[arg(long, allow_hyphen_values = true)]
    model: Option<ValueVar>,
    /// Observation as `value,variance`.
    #[arg(long, allow_hyphen_values = true)]
    obs: Option<ValueVar>,
}

#[derive(Debug, Args)]
struct TwinArgs {
    #[command(flatten)]
    common: Common,
    /// Divergence threshold as a fraction of the truth's max |x|.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    twin: TwinArgs,
    /// Number of consecutive seeds, starting at the configured seed.
    #[arg(long)]
    count: Option<usize>,
}

#[derive(Debug, Args)]
struct RunoffArgs {
    #[command(flatten)]
    common: Common,
    /// Land-use parcels CSV (`label,area,cn`).
    #[arg(long)]
    parcels: Option<PathBuf>,
    /// Daily CSV (`day,p_mm,model_q,model_var,obs_q,obs_var`).
    #[arg(long, conflicts_with = "synthetic")]
    days: Option<PathBuf>,
    /// Generate this many synthetic days instead of reading `--days`.
    #[arg(long)]
    synthetic: Option<usize>,
}

/// Runs the tool with process stdout/stderr and returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_cli_with(args, &mut stdout.lock(), &mut stderr.lock())
}

/// As [`run_cli`] with explicit output streams. Exit codes: 0 success,
/// 1 runtime or input error, 2 usage error.
pub fn run_cli_with<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(text) => {
            let _ = write!(stdout, "{text}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

fn dispatch(command: Command) -> Result<String> {
    match command {
        Command::Fuse(a) => cmd_fuse(a),
        Command::LorenzTwin(a) => cmd_twin(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Runoff(a) => cmd_runoff(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p),
        None => Ok(ConfigFile::empty("<defaults>")),
    }
}

fn out_dir(common: &Common, scenario: Scenario) -> Result<&Path> {
    let dir = common
        .out
        .as_deref()
        .ok_or_else(|| Error::invalid(format!("{scenario} requires --out <dir>")))?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir)
}

fn fmt_time(t: Option<f64>) -> String {
    t.map(|t| t.to_string()).unwrap_or_default()
}

fn cmd_fuse(a: FuseArgs) -> Result<String> {
    let mut cfg = load_config(a.common.config.as_deref())?;
    let (model, obs, seed) = FuseSettings::from_config(&mut cfg)?;
    cfg.finish()?;
    let missing = |flag: &str| Error::invalid(format!("fuse needs --{flag} value,variance"));
    let settings = FuseSettings {
        model: a.model.or(model).ok_or_else(|| missing("model"))?.0,
        obs: a.obs.or(obs).ok_or_else(|| missing("obs"))?.0,
        seed: a.common.seed.unwrap_or(seed),
    };
    let r = fuse(settings.model, settings.obs)?;

    if a.common.out.is_some() {
        let dir = out_dir(&a.common, Scenario::Fuse)?;
        let csv = format!(
            "value,variance,weight_model,weight_obs,gain\n{},{},{},{},{}\n",
            r.fused.value, r.fused.variance, r.weight_model, r.weight_obs, r.gain
        );
        write_atomic(&dir.join("fused.csv"), &csv)?;
        write_atomic(&dir.join(MANIFEST_FILE), &settings.manifest())?;
    }
    Ok(format!("{},{}\n", r.fused.value, r.fused.variance))
}

fn twin_settings(args: &TwinArgs, scenario: Scenario) -> Result<TwinSettings> {
    let mut cfg = load_config(args.common.config.as_deref())?;
    let mut s = TwinSettings::from_config(&mut cfg, scenario)?;
    cfg.finish()?;
    if let Some(seed) = args.common.seed {
        s.experiment.twin.seed = seed;
    }
    if let Some(th) = args.threshold {
        s.experiment.threshold_fraction = th;
    }
    s.validate()?;
    Ok(s)
}

fn run_twin(s: &TwinSettings) -> Result<TwinOutcome> {
    let measurements = s
        .measurements
        .as_deref()
        .map(load_measurements_csv)
        .transpose()?;
    run_twin_experiment_with(&*s.system(), &s.experiment, measurements)
}

fn cmd_twin(a: TwinArgs) -> Result<String> {
    let s = twin_settings(&a, Scenario::LorenzTwin)?;
    let dir = out_dir(&a.common, Scenario::LorenzTwin)?;
    let o = run_twin(&s)?;

    write_atomic(&dir.join("truth.csv"), &trajectory_csv(&o.truth))?;
    write_atomic(&dir.join("noisy_run.csv"), &trajectory_csv(&o.noisy_run))?;
    write_atomic(&dir.join("da_run.csv"), &trajectory_csv(&o.da.trajectory))?;
    write_atomic(&dir.join("measurements.csv"), &measurements_csv(&o.measurements))?;
    write_atomic(&dir.join("errors.csv"), &errors_csv(&o.err_noisy, &o.err_da)?)?;
    write_atomic(&dir.join("events.csv"), &events_csv(&o.da.events))?;
    write_atomic(&dir.join(MANIFEST_FILE), &s.manifest(Scenario::LorenzTwin))?;

    Ok(format!(
        "threshold,{}\ndivergence_time_noisy,{}\ndivergence_time_da,{}\n",
        o.threshold,
        fmt_time(o.divergence_noisy),
        fmt_time(o.divergence_da)
    ))
}

fn cmd_sweep(a: SweepArgs) -> Result<String> {
    let mut s = twin_settings(&a.twin, Scenario::Sweep)?;
    if let Some(n) = a.count {
        s.sweep_count = n;
    }
    if s.sweep_count == 0 {
        return Err(Error::invalid("sweep count must be at least 1"));
    }
    let dir = out_dir(&a.twin.common, Scenario::Sweep)?;

    let base = s.experiment.twin.seed;
    let seeds: Vec<u64> = (0..s.sweep_count as u64).map(|i| base + i).collect();
    let results = seeds
        .par_iter()
        .map(|&seed| {
            let mut run = s.clone();
            run.experiment.twin.seed = seed;
            run_twin(&run).map(|o| (seed, o.divergence_noisy, o.divergence_da))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut csv = String::from("seed,divergence_time_noisy,divergence_time_da\n");
    for (seed, n, d) in &results {
        writeln!(csv, "{seed},{},{}", fmt_time(*n), fmt_time(*d)).unwrap();
    }
    write_atomic(&dir.join("summary.csv"), &csv)?;
    write_atomic(&dir.join(MANIFEST_FILE), &s.manifest(Scenario::Sweep))?;

    let total = results.len();
    let noisy = results.iter().filter(|r| r.1.is_some()).count();
    let da = results.iter().filter(|r| r.2.is_some()).count();
    Ok(format!(
        "seeds,{total}\nnoisy_diverged,{noisy}\nda_diverged,{da}\n"
    ))
}

fn cmd_runoff(a: RunoffArgs) -> Result<String> {
    let mut cfg = load_config(a.common.config.as_deref())?;
    let mut s = RunoffSettings::from_config(&mut cfg)?;
    cfg.finish()?;
    let cwd = Path::new(".");
    if let Some(p) = &a.parcels {
        s.parcels = Some(resolve_path(cwd, p));
    }
    if let Some(p) = &a.days {
        s.days = Some(resolve_path(cwd, p));
        s.synthetic_days = None;
    }
    if let Some(n) = a.synthetic {
        s.synthetic_days = Some(n);
        s.days = None;
    }
    if let Some(seed) = a.common.seed {
        s.seed = seed;
    }
    if s.days.is_some() && s.synthetic_days.is_some() {
        return Err(Error::invalid("give either days or synthetic_days, not both"));
    }
    let dir = out_dir(&a.common, Scenario::Runoff)?;

    let mut parcels = s.parcels.as_deref().map(load_parcels_csv).transpose()?;
    let rows = match (&s.days, s.synthetic_days) {
        (Some(path), _) => load_days_csv(path)?,
        (None, Some(n)) => {
            let used = parcels.get_or_insert_with(demo_parcels);
            let days = synthetic_days(s.seed, n, used, &s.config)?;
            let rows: Vec<DayRow> = days.iter().map(day_row).collect();
            write_atomic(&dir.join("days.csv"), &days_csv(&rows))?;
            rows
        }
        (None, None) => {
            return Err(Error::invalid("runoff needs --days <csv> or --synthetic <n>"))
        }
    };

    let cn2 = match (s.cn, &parcels) {
        (Some(cn), _) => Some(cn),
        (None, Some(p)) => Some(weighted_cn(p)?),
        (None, None) => None,
    };
    let modelled = match cn2 {
        Some(cn) => {
            let rain: Vec<f64> = rows.iter().map(|r| r.p_mm).collect();
            Some(simulate_runoff(&rain, cn, &s.config)?)
        }
        None => None,
    };

    let mut days = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let model_q = match (r.model_q, &modelled) {
            (Some(q), _) => q,
            (None, Some(m)) => m[i].1,
            (None, None) => {
                return Err(Error::invalid(format!(
                    "day {} has no model_q; give parcels or cn so the SCS model can fill it",
                    r.day
                )))
            }
        };
        days.push(RunoffDay {
            day: r.day.clone(),
            rainfall_p: r.p_mm,
            model_q: UncertainScalar::new(model_q, r.model_var)?,
            observed_q: UncertainScalar::new(r.obs_q, r.obs_var)?,
            fused_q: None,
        });
    }
    let fused = assimilate_runoff(&days)?;

    let mut csv = String::from(
        "day,p_mm,cn,model_q,model_var,obs_q,obs_var,fused_q,fused_var,gain\n",
    );
    for (i, d) in fused.iter().enumerate() {
        let cn = modelled.as_ref().map(|m| m[i].0.to_string()).unwrap_or_default();
        let f = d.fused_q.expect("filled by assimilate_runoff");
        let gain = fuse(d.model_q, d.observed_q)?.gain;
        writeln!(
            csv,
            "{},{},{cn},{},{},{},{},{},{},{gain}",
            d.day,
            d.rainfall_p,
            d.model_q.value,
            d.model_q.variance,
            d.observed_q.value,
            d.observed_q.variance,
            f.value,
            f.variance
        )
        .unwrap();
    }
    write_atomic(&dir.join("fused.csv"), &csv)?;
    write_atomic(&dir.join(MANIFEST_FILE), &s.manifest())?;

    Ok(format!("days,{}\n", fused.len()))
}

fn day_row(d: &RunoffDay) -> DayRow {
    DayRow {
        day: d.day.clone(),
        p_mm: d.rainfall_p,
        model_q: Some(d.model_q.value),
        model_var: d.model_q.variance,
        obs_q: d.observed_q.value,
        obs_var: d.observed_q.variance,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn clap_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run_cli_with(
            std::iter::once("assim").chain(args.iter().copied()),
            &mut out,
            &mut err,
        );
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn fuse_midpoint() {
        assert_eq!(run(&["fuse", "--model", "10,1", "--obs", "20,1"]), (0, "15,0.5\n".into(), String::new()));
    }

    #[test]
    fn negative_values_are_accepted() {
        let (code, out, _) = run(&["fuse", "--model", "-4,1", "--obs", "-2,1"]);
        assert_eq!(code, 0);
        assert_eq!(out, "-3,0.5\n");
    }

    #[test]
    fn usage_errors_exit_2() {
        let (code, out, err) = run(&["fuse", "--bogus"]);
        assert_eq!(code, 2);
        assert!(out.is_empty());
        assert!(!err.is_empty());
    }

    #[test]
    fn runtime_errors_exit_1() {
        let (code, _, err) = run(&["fuse", "--model", "10,0", "--obs", "20,0"]);
        assert_eq!(code, 1);
        assert!(err.starts_with("error: degenerate fusion"), "{err}");
    }

    #[test]
    fn help_goes_to_stdout() {
        let (code, out, err) = run(&["--help"]);
        assert_eq!(code, 0);
        assert!(out.contains("lorenz-twin"));
        assert!(err.is_empty());
    }
}
