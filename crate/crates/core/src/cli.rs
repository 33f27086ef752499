//! Command-line front end: `propagate`, `mc`, `compare`, `filter` and `map`.
//!
//! Every command writes its outputs atomically and leaves a flat `key=value`
//! manifest in the output directory, also when it fails.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::{Scenario, ScenarioFile, ScheduleSource};
use crate::error::{Error, Result};
use crate::filter::{
    map_estimate, run_filter, synthesize_measurements, write_schedule_csv, FilterConfig, FilterRun,
    MapConfig,
};
use crate::mcref::{
    ensemble_moments, normalized_rollout_error, path_rng, sample_initial, simulate_path, SamplePath,
};
use crate::propagate::{checkpoint_line, parse_checkpoint_line, propagate, read_moment_csv};

/// RNG stream of the filter truth path; ensemble members use `0..N`.
pub const TRUTH_STREAM: u64 = u64::MAX;
/// RNG stream of the synthesized measurement noise.
pub const NOISE_STREAM: u64 = u64::MAX - 1;

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Parser)]
#[command(
    name = "shs-moments",
    version,
    about = "Moment propagation and maximum-entropy filtering for stochastic hybrid systems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory (overrides `output.directory`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed (overrides `output.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress progress and summary lines on stdout.
    #[arg(long, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the moment equations and write the trajectory, MED checkpoints and flux log.
    Propagate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Monte Carlo ensemble moments with standard errors and excess-mass log.
    Mc {
        #[arg(long)]
        config: PathBuf,
        /// Override `mc.trajectories`.
        #[arg(long)]
        trajectories: Option<usize>,
    },
    /// Normalized rollout-error heat map of a propagated CSV against an ensemble CSV.
    Compare {
        #[arg(long)]
        propagated: PathBuf,
        #[arg(long)]
        mc: PathBuf,
    },
    /// Full predict/update loop with MAP estimates.
    Filter {
        #[arg(long)]
        config: PathBuf,
    },
    /// MAP point estimate for every record of a MED checkpoint file.
    Map {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 200)]
        grid: usize,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Propagate { .. } => "propagate",
            Command::Mc { .. } => "mc",
            Command::Compare { .. } => "compare",
            Command::Filter { .. } => "filter",
            Command::Map { .. } => "map",
        }
    }

    fn config(&self) -> Option<&Path> {
        match self {
            Command::Propagate { config }
            | Command::Mc { config, .. }
            | Command::Filter { config } => Some(config),
            _ => None,
        }
    }
}

/// Flat run manifest.
#[derive(Debug, Default)]
pub struct Manifest {
    entries: BTreeMap<String, String>,
}

impl Manifest {
    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) {
        self.entries.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k}={}\n", v.replace('\n', "\\n")))
            .collect()
    }

    pub fn parse(text: &str) -> Manifest {
        let mut m = Manifest::default();
        for line in text.lines() {
            if let Some((k, v)) = line.split_once('=') {
                m.set(k, v);
            }
        }
        m
    }

    /// Adds `config.<section>.<key>` entries for a scenario.
    fn echo_config(&mut self, file: &ScenarioFile) {
        let value = toml::Value::try_from(file).expect("scenario serializes");
        self.flatten("config", &value);
    }

    fn flatten(&mut self, prefix: &str, v: &toml::Value) {
        match v {
            toml::Value::Table(t) => {
                for (k, v) in t {
                    self.flatten(&format!("{prefix}.{k}"), v);
                }
            }
            toml::Value::String(s) => self.set(prefix, s),
            other => self.set(prefix, other.to_string()),
        }
    }
}

/// Writes `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    let mut w = BufWriter::new(file);
    let result = body(&mut w).and_then(|_| w.flush().map_err(|e| Error::io(&tmp, e)));
    drop(w);
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(e);
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Ctx {
    out: PathBuf,
    quiet: bool,
    manifest: Manifest,
    outputs: Vec<String>,
}

impl Ctx {
    fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
        write_atomic(&self.out.join(name), body)?;
        self.outputs.push(name.to_string());
        Ok(())
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    run(&cli)
}

pub fn run(cli: &Cli) -> i32 {
    let started = Instant::now();
    let mut loaded = cli
        .command
        .config()
        .map(|p| load_scenario(p, cli.common.seed));
    let out = match (&cli.common.out, &loaded) {
        (Some(o), _) => o.clone(),
        (None, Some(Ok(s))) => s.output_dir.clone(),
        _ => PathBuf::from("out"),
    };
    let mut ctx = Ctx {
        out,
        quiet: cli.common.quiet,
        manifest: Manifest::default(),
        outputs: Vec::new(),
    };
    ctx.manifest.set("command", cli.command.name());
    ctx.manifest.set("crate_version", env!("CARGO_PKG_VERSION"));
    ctx.manifest.set("rng", "chacha8");
    if let Some(p) = cli.command.config() {
        ctx.manifest.set("config_path", p.display());
    }

    let result = (|| -> Result<()> {
        std::fs::create_dir_all(&ctx.out).map_err(|e| Error::io(&ctx.out, e))?;
        let scenario = loaded.take().transpose()?;
        if let Some(s) = &scenario {
            ctx.manifest.set("seed", s.seed);
            ctx.manifest.echo_config(&s.file);
        }
        let scenario = scenario.as_ref();
        match &cli.command {
            Command::Propagate { .. } => cmd_propagate(&mut ctx, scenario.expect("scenario")),
            Command::Mc { trajectories, .. } => {
                cmd_mc(&mut ctx, scenario.expect("scenario"), *trajectories)
            }
            Command::Compare { propagated, mc } => cmd_compare(&mut ctx, propagated, mc),
            Command::Filter { .. } => cmd_filter(&mut ctx, scenario.expect("scenario")),
            Command::Map {
                checkpoint,
                grid,
                iterations,
            } => cmd_map(
                &mut ctx,
                checkpoint,
                &MapConfig {
                    grid: *grid,
                    iterations: *iterations,
                },
            ),
        }
    })();

    let code = match &result {
        Ok(()) => 0,
        Err(e) => e.exit_code(),
    };
    ctx.manifest
        .set("status", if code == 0 { "ok" } else { "error" });
    ctx.manifest.set("exit_code", code);
    if let Err(e) = &result {
        ctx.manifest.set("error", e);
        eprintln!("error: {e}");
    }
    ctx.manifest.set("outputs", ctx.outputs.join(","));
    ctx.manifest.set(
        "wall_time_s",
        format!("{:.3}", started.elapsed().as_secs_f64()),
    );
    let text = ctx.manifest.render();
    let _ = std::fs::create_dir_all(&ctx.out);
    if let Err(e) = write_atomic(&ctx.out.join(MANIFEST), |w| {
        w.write_all(text.as_bytes())
            .map_err(|e| Error::io(MANIFEST, e))
    }) {
        eprintln!("error: could not write manifest: {e}");
        return if code == 0 { 4 } else { code };
    }
    code
}

/// Loads and validates a scenario file, applying a seed override.
pub fn load_scenario(path: &Path, seed: Option<u64>) -> Result<Scenario> {
    let file = ScenarioFile::load(path)?;
    let s = file.validate(path.parent())?;
    Ok(match seed {
        Some(seed) => s.with_seed(seed),
        None => s,
    })
}

fn cmd_propagate(ctx: &mut Ctx, s: &Scenario) -> Result<()> {
    let m0 = s.initial.moments(s.propagation.order);
    let traj = propagate(&s.model, &m0, &s.propagation)?;
    ctx.write("moments.csv", |w| traj.write_csv(w))?;
    ctx.write("med_checkpoints.jsonl", |w| traj.write_checkpoints(w))?;
    ctx.write("flux.csv", |w| traj.write_flux_csv(w))?;
    let failed = traj.flux_log.iter().filter(|f| f.fit_failed).count();
    ctx.manifest.set("records", traj.len());
    ctx.manifest
        .set("max_mass_defect", format!("{:e}", traj.max_mass_defect()));
    ctx.manifest.set("flagged_fits", failed);
    ctx.say(format!(
        "propagated {} records to t = {}, mass defect {:e}, flagged fits {failed}",
        traj.len(),
        s.propagation.t_end,
        traj.max_mass_defect()
    ));
    Ok(())
}

fn cmd_mc(ctx: &mut Ctx, s: &Scenario, trajectories: Option<usize>) -> Result<()> {
    let mut cfg = s.mc.clone();
    if let Some(n) = trajectories {
        cfg.trajectories = n;
    }
    cfg.validate(s.model.dim())
        .map_err(|e| Error::config("mc.trajectories", e.to_string()))?;
    let ens = ensemble_moments(&s.model, &cfg, s.mc_order)?;
    ctx.write("mc_moments.csv", |w| ens.write_csv(w))?;
    ctx.write("excess_mass.csv", |w| ens.write_excess_csv(w))?;
    ctx.manifest.set("trajectories", cfg.trajectories);
    ctx.manifest.set(
        "max_excess_mass_fraction",
        format!("{:e}", ens.max_excess_mass()),
    );
    ctx.say(format!(
        "{} trajectories, {} records, max excess mass {:e}",
        cfg.trajectories,
        ens.times.len(),
        ens.max_excess_mass()
    ));
    Ok(())
}

fn cmd_compare(ctx: &mut Ctx, propagated: &Path, mc: &Path) -> Result<()> {
    let open = |p: &Path| File::open(p).map_err(|e| Error::io(p, e));
    let (pt, pm, _) = read_moment_csv(open(propagated)?)?;
    let (rt, rm, _) = read_moment_csv(open(mc)?)?;
    let errs = normalized_rollout_error(&pt, &pm, &rt, &rm)?;
    ctx.write("heatmap.csv", |w| errs.write_heatmap_csv(w))?;
    let flagged = errs.entries.iter().filter(|(_, v)| v.is_none()).count();
    let summary = format!(
        "max={:e}\nmean={:e}\nflagged={flagged}\n",
        errs.max(),
        errs.mean()
    );
    ctx.write("compare_summary.txt", |w| {
        w.write_all(summary.as_bytes())
            .map_err(|e| Error::io("compare_summary.txt", e))
    })?;
    ctx.manifest.set("max_error", format!("{:e}", errs.max()));
    ctx.manifest.set("mean_error", format!("{:e}", errs.mean()));
    ctx.say(format!(
        "max {:e} mean {:e} flagged {flagged}",
        errs.max(),
        errs.mean()
    ));
    Ok(())
}

/// Runs the scenario's filter, synthesizing truth and measurements when the
/// schedule is not loaded from a file.
pub fn filter_scenario(s: &Scenario) -> Result<(FilterRun, Option<SamplePath>)> {
    let f = &s.filter;
    let p = &s.propagation;
    let (schedule, truth) = match &f.schedule {
        ScheduleSource::Loaded(recs) => (recs.clone(), None),
        ScheduleSource::Synthesize { times, observation } => {
            let mut rng = path_rng(s.seed, TRUTH_STREAM);
            let x0 = sample_initial(&s.initial, &mut rng);
            let truth = simulate_path(&s.model, &x0, (p.t_start, p.t_end), s.mc.dt, 1, &mut rng)?;
            let mut noise_rng = path_rng(s.seed, NOISE_STREAM);
            let recs =
                synthesize_measurements(&truth, times, observation, &f.noise, &mut noise_rng)?;
            (recs, Some(truth))
        }
    };
    let cfg = FilterConfig {
        propagation: p.clone(),
        measurement: f.measurement.clone(),
        map: f.map.clone(),
    };
    let m0 = s.initial.moments(p.order);
    let run = run_filter(&s.model, &m0, &schedule, &cfg, truth.as_ref())?;
    Ok((run, truth))
}

fn cmd_filter(ctx: &mut Ctx, s: &Scenario) -> Result<()> {
    let (run, truth) = filter_scenario(s)?;
    ctx.write("filter.csv", |w| run.write_csv(w))?;
    ctx.write("measurements.csv", |w| write_schedule_csv(w, &run.schedule))?;
    if let Some(tr) = &truth {
        let stride = s.mc.output_stride;
        let thin = SamplePath {
            times: tr.times.iter().step_by(stride).copied().collect(),
            states: tr.states.iter().step_by(stride).cloned().collect(),
            impacts: tr.impacts.clone(),
        };
        ctx.write("truth.csv", |w| thin.write_csv(w))?;
    }
    let snaps = &s.filter.snapshot_times;
    ctx.write("filter_checkpoints.jsonl", |w| {
        for (t, med) in run.times.iter().zip(&run.med) {
            if snaps.iter().any(|s| (s - t).abs() < 1e-9 * (1.0 + t.abs())) {
                writeln!(w, "{}", checkpoint_line(*t, med))
                    .map_err(|e| Error::io("filter_checkpoints.jsonl", e))?;
            }
        }
        Ok(())
    })?;
    let mut summary = format!(
        "measurements={}\nupdates={}\ndt={:e}\nmax_mass_defect={:e}\n",
        run.schedule.len(),
        run.updates.len(),
        run.dt,
        run.max_mass_defect()
    );
    if let Some(r) = run.rmse() {
        let labels = ["position_rmse", "velocity_rmse"];
        for (i, v) in r.iter().enumerate() {
            let key = labels
                .get(i)
                .map(|s| s.to_string())
                .unwrap_or(format!("x{}_rmse", i + 1));
            summary.push_str(&format!("{key}={v:e}\n"));
            ctx.manifest.set(key, format!("{v:e}"));
        }
    }
    ctx.write("filter_summary.txt", |w| {
        w.write_all(summary.as_bytes())
            .map_err(|e| Error::io("filter_summary.txt", e))
    })?;
    ctx.say(summary.trim_end().replace('\n', " "));
    Ok(())
}

fn cmd_map(ctx: &mut Ctx, checkpoint: &Path, cfg: &MapConfig) -> Result<()> {
    let file = File::open(checkpoint).map_err(|e| Error::io(checkpoint, e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(checkpoint, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (t, med) = parse_checkpoint_line(&line)?;
        let est = map_estimate(&med, &med.domain, cfg).map_err(|e| e.at_time(t))?;
        rows.push((t, est));
    }
    if rows.is_empty() {
        return Err(Error::Schema("checkpoint file has no records".into()));
    }
    let dim = rows[0].1.x.len();
    ctx.write("map.csv", |w| {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=dim).map(|i| format!("x{i}")));
        header.extend(["exponent".to_string(), "degenerate_flat".to_string()]);
        out.write_record(&header)
            .map_err(crate::propagate::csv_err)?;
        for (t, e) in &rows {
            let mut row = vec![format!("{t:e}")];
            row.extend(e.x.iter().map(|v| format!("{v:e}")));
            row.push(format!("{:e}", e.value));
            row.push(e.degenerate_flat.to_string());
            out.write_record(&row).map_err(crate::propagate::csv_err)?;
        }
        out.flush().map_err(|e| Error::io("map.csv", e))
    })?;
    ctx.manifest.set("records", rows.len());
    for (t, e) in &rows {
        ctx.say(format!(
            "t={t} x*={:?}{}",
            e.x,
            if e.degenerate_flat {
                " degenerate_flat"
            } else {
                ""
            }
        ));
    }
    Ok(())
}
