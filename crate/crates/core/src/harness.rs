//! Experiment commands: JSON configuration in, CSV/JSON artifacts out.
//!
//! Every command writes into one output directory. All files except
//! `run.json` (which carries wall-clock time) are byte-identical across
//! repeated runs with the same configuration and seed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::adaptation::{adapt_run, build_prior, AdaptConfig, AdaptTrace};
use crate::bayes_opt::{bo_run, random_search, BoConfig, BoTrace};
use crate::episode::{episode_loop, EpisodeLoopConfig};
use crate::error::{Error, Result};
use crate::gp::ScalarFn;
use crate::map_elites::{map_elites_run_observed, EliteArchive, GridSpec, MapElitesConfig};
use crate::rng::child_rng;
use crate::testbeds::{gait_proxy_eval, DamageCondition, DamageId, Synthetic, GAIT_DIM};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "MICRODATA_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "out";

/// Output directory: command-line flag, then [`OUT_DIR_ENV`], then the
/// config file, then [`DEFAULT_OUT_DIR`].
pub fn resolve_out_dir(flag: Option<&Path>, config: Option<&Path>) -> PathBuf {
    let env = std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from);
    flag.map(Path::to_path_buf)
        .or(env)
        .or_else(|| config.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

pub fn parse_config<T: DeserializeOwned>(text: &str, label: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Parse {
        path: label.to_string(),
        message: e.to_string(),
    })
}

pub fn config_to_json<T: Serialize>(config: &T) -> String {
    serde_json::to_string_pretty(config).expect("configs serialize to JSON")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapBuildConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub grid: GridSpec,
    pub budget: usize,
    pub map_elites: MapElitesConfig,
    /// Evaluations between rows of `progress.csv`.
    pub checkpoint_every: usize,
}

impl Default for MapBuildConfig {
    fn default() -> Self {
        MapBuildConfig {
            seed: 0,
            out_dir: None,
            grid: GridSpec::default(),
            budget: 200_000,
            map_elites: MapElitesConfig::default(),
            checkpoint_every: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptRunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub archive: PathBuf,
    pub grid: GridSpec,
    pub damage: DamageId,
    pub adapt: AdaptConfig,
}

impl Default for AdaptRunConfig {
    fn default() -> Self {
        AdaptRunConfig {
            seed: 0,
            out_dir: None,
            archive: PathBuf::from("out/archive.csv"),
            grid: GridSpec::default(),
            damage: DamageId::D1,
            adapt: AdaptConfig::default(),
        }
    }
}

/// Objective for `bo`: a synthetic benchmark or the gait proxy under a
/// damage condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Objective {
    Synthetic(Synthetic),
    Gait(DamageId),
}

impl Objective {
    pub fn dim(&self) -> usize {
        match self {
            Objective::Synthetic(s) => s.dim(),
            Objective::Gait(_) => GAIT_DIM,
        }
    }

    pub fn evaluator(&self) -> Box<ScalarFn> {
        match *self {
            Objective::Synthetic(s) => Box::new(move |x| s.eval(x)),
            Objective::Gait(id) => {
                let dmg = DamageCondition::from_id(id);
                Box::new(move |x| gait_proxy_eval(x, &dmg).map_or(f64::NAN, |(f, _)| f))
            }
        }
    }
}

impl FromStr for Objective {
    type Err = Error;

    /// `sphere15`, `sphere2`, `rastrigin2`, or `gait-<damage>` such as
    /// `gait-d3`.
    fn from_str(s: &str) -> Result<Self> {
        match s.strip_prefix("gait-") {
            Some(d) => Ok(Objective::Gait(d.parse()?)),
            None => Ok(Objective::Synthetic(s.parse()?)),
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Objective::Synthetic(s) => write!(f, "{s}"),
            Objective::Gait(d) => write!(f, "gait-{d}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoRunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    /// See [`Objective`] for accepted names.
    pub objective: String,
    pub budget: usize,
    /// Also run uniform random search with the same budget and seed.
    pub baseline: bool,
    pub bo: BoConfig,
}

impl Default for BoRunConfig {
    fn default() -> Self {
        BoRunConfig {
            seed: 0,
            out_dir: None,
            objective: "sphere15".into(),
            budget: 60,
            baseline: true,
            bo: BoConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpisodeRunConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub episode: EpisodeLoopConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub archive: PathBuf,
    pub grid: GridSpec,
    pub damage: DamageId,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            seed: 0,
            out_dir: None,
            archive: PathBuf::from("out/archive.csv"),
            grid: GridSpec::default(),
            damage: DamageId::D1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
}

/// Snapshot written to `run.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub run_id: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub metrics: Vec<Metric>,
    pub wall_clock_seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub metrics: Vec<Metric>,
}

impl RunSummary {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }
}

fn metric(name: &str, value: f64) -> Metric {
    Metric {
        name: name.to_string(),
        value,
    }
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Runs `write` against a fresh file at `path`, relabelling its I/O errors.
fn write_file(path: &Path, write: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut f = create_file(path)?;
    write(&mut f).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    f.flush().map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create_file(path)?))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, e.into())
}

fn fmt_f64(buf: &mut ryu::Buffer, v: f64) -> String {
    buf.format(v).to_owned()
}

fn write_metrics(path: &Path, metrics: &[Metric]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut buf = ryu::Buffer::new();
    w.write_record(["metric", "value"]).map_err(csv_err(path))?;
    for m in metrics {
        w.write_record([m.name.clone(), fmt_f64(&mut buf, m.value)])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value).map_err(|e| Error::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))
    })
}

fn prepare_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn finish<C: Serialize>(
    command: &str,
    seed: u64,
    config: &C,
    out: &Path,
    metrics: Vec<Metric>,
    started: Instant,
) -> Result<RunSummary> {
    write_metrics(&out.join("summary.csv"), &metrics)?;
    let record = RunRecord {
        command: command.to_string(),
        run_id: format!("{command}-{seed:016x}"),
        seed,
        config: serde_json::to_value(config).expect("configs serialize to JSON"),
        metrics: metrics.clone(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&out.join("run.json"), &record)?;
    Ok(RunSummary {
        out_dir: out.to_path_buf(),
        metrics,
    })
}

/// Builds an intact-gait archive. Writes `archive.csv`, `progress.csv`
/// (`evaluations,metric,value`), `summary.csv` and `run.json`.
pub fn cmd_map_build(config: &MapBuildConfig, out: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    if config.checkpoint_every == 0 {
        return Err(Error::InvalidConfig("checkpoint_every must be positive".into()));
    }
    prepare_dir(out)?;
    let intact = DamageCondition::intact();
    let task = |p: &[f64]| match gait_proxy_eval(p, &intact) {
        Ok((f, d)) => (f, d.to_vec()),
        Err(_) => (f64::NAN, vec![f64::NAN; crate::testbeds::LEGS]),
    };
    let mut progress: Vec<(usize, [f64; 3])> = Vec::new();
    let mut next_checkpoint = config.checkpoint_every;
    let mut observe = |a: &EliteArchive| {
        if a.eval_count >= next_checkpoint || a.eval_count == config.budget {
            progress.push((
                a.eval_count,
                [a.coverage(), a.qd_score(), a.max_fitness().unwrap_or(f64::NAN)],
            ));
            while next_checkpoint <= a.eval_count {
                next_checkpoint += config.checkpoint_every;
            }
        }
    };
    let mut rng = child_rng(config.seed, 0);
    let archive = map_elites_run_observed(
        &task,
        GAIT_DIM,
        config.grid,
        config.budget,
        &config.map_elites,
        &mut rng,
        &mut observe,
    )?;
    archive.save(&out.join("archive.csv"))?;

    let path = out.join("progress.csv");
    let mut w = csv_writer(&path)?;
    let mut buf = ryu::Buffer::new();
    w.write_record(["evaluations", "metric", "value"])
        .map_err(csv_err(&path))?;
    for (evals, values) in &progress {
        for (name, v) in ["coverage", "qd_score", "max_fitness"].iter().zip(values) {
            w.write_record([evals.to_string(), name.to_string(), fmt_f64(&mut buf, *v)])
                .map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let metrics = vec![
        metric("coverage", archive.coverage()),
        metric("qd_score", archive.qd_score()),
        metric("max_fitness", archive.max_fitness().unwrap_or(f64::NAN)),
        metric("occupied_cells", archive.len() as f64),
        metric("evaluations", archive.eval_count as f64),
    ];
    finish("map-build", config.seed, config, out, metrics, started)
}

/// Sidecar of an adaptation trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptSidecar {
    pub seed: u64,
    pub archive: PathBuf,
    pub damage: DamageId,
    pub config: AdaptConfig,
    pub status: crate::adaptation::AdaptStatus,
    pub trials: usize,
    pub best_observed: Option<f64>,
    pub best_params: Option<Vec<f64>>,
}

fn write_adapt_outputs(config: &AdaptRunConfig, out: &Path, trace: &AdaptTrace) -> Result<()> {
    write_file(&out.join("trace.csv"), |w| trace.write_csv(w))?;
    let sidecar = AdaptSidecar {
        seed: config.seed,
        archive: config.archive.clone(),
        damage: config.damage,
        config: trace.config.clone(),
        status: trace.status.clone(),
        trials: trace.trials(),
        best_observed: trace.best_observed(),
        best_params: trace.best_params.clone(),
    };
    write_json(&out.join("trace.json"), &sidecar)
}

/// Adapts to `config.damage` using the archive as prior. Writes
/// `trace.csv`, `trace.json`, `summary.csv` and `run.json`. An aborted run
/// still writes its partial trace before the error is returned.
pub fn cmd_adapt(config: &AdaptRunConfig, out: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    let archive = EliteArchive::load(&config.archive, config.grid)?;
    let prior = build_prior(&archive)?;
    prepare_dir(out)?;
    let objective = Objective::Gait(config.damage).evaluator();
    let trace = match adapt_run(&prior, &mut |x| objective(x), &config.adapt) {
        Ok(t) => t,
        Err(aborted) => {
            write_adapt_outputs(config, out, &aborted.partial)?;
            return Err(aborted.error);
        }
    };
    write_adapt_outputs(config, out, &trace)?;
    let metrics = vec![
        metric("trials", trace.trials() as f64),
        metric("best_observed", trace.best_observed().unwrap_or(f64::NAN)),
        metric(
            "stop_rule_met",
            f64::from(u8::from(
                trace.status == crate::adaptation::AdaptStatus::Stopped(crate::adaptation::StopReason::StopRuleMet),
            )),
        ),
    ];
    finish("adapt", config.seed, config, out, metrics, started)
}

fn write_bo_trace(path: &Path, trace: &BoTrace) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut buf = ryu::Buffer::new();
    let mut header = vec![
        "iteration".to_string(),
        "value".into(),
        "best_so_far".into(),
        "acquisition".into(),
    ];
    header.extend((0..trace.dim).map(|i| format!("p_{i}")));
    w.write_record(&header).map_err(csv_err(path))?;
    for r in &trace.records {
        let mut row = vec![
            r.iteration.to_string(),
            fmt_f64(&mut buf, r.value),
            fmt_f64(&mut buf, r.best_so_far),
            r.acquisition.map(|a| fmt_f64(&mut buf, a)).unwrap_or_default(),
        ];
        row.extend(r.params.iter().map(|p| fmt_f64(&mut buf, *p)));
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Bayesian optimization of a named objective. Writes `trace.csv`
/// (`iteration,value,best_so_far,acquisition,p_0..`), optionally
/// `random_trace.csv`, plus `summary.csv` and `run.json`.
pub fn cmd_bo(config: &BoRunConfig, out: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    let objective: Objective = config.objective.parse()?;
    if config.budget == 0 {
        return Err(Error::InvalidConfig("budget must be at least 1".into()));
    }
    config.bo.acquisition.validate()?;
    prepare_dir(out)?;
    let f = objective.evaluator();
    let dim = objective.dim();
    let maximize = config.bo.acquisition.maximize;
    let trace = match bo_run(&mut |x| f(x), dim, config.budget, &config.bo, config.seed) {
        Ok(t) => t,
        Err(aborted) => {
            write_bo_trace(&out.join("trace.csv"), &aborted.partial)?;
            return Err(aborted.error);
        }
    };
    write_bo_trace(&out.join("trace.csv"), &trace)?;
    let mut metrics = vec![
        metric("evaluations", trace.records.len() as f64),
        metric("best", trace.best().unwrap_or(f64::NAN)),
    ];
    if config.baseline {
        let random = random_search(&mut |x| f(x), dim, config.budget, maximize, config.seed).map_err(|a| a.error)?;
        write_bo_trace(&out.join("random_trace.csv"), &random)?;
        metrics.push(metric("random_best", random.best().unwrap_or(f64::NAN)));
    }
    finish("bo", config.seed, config, out, metrics, started)
}

/// Cart-pole learning loop. Writes `episodes.csv`
/// (`episode,steps,failed,total_reward,transitions`), one
/// `episode_NNN.csv` tick log per episode, `summary.csv` and `run.json`.
pub fn cmd_episode(config: &EpisodeRunConfig, out: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    prepare_dir(out)?;
    let result = episode_loop(&config.episode, config.seed)?;
    let path = out.join("episodes.csv");
    let mut w = csv_writer(&path)?;
    let mut buf = ryu::Buffer::new();
    w.write_record(["episode", "steps", "failed", "total_reward", "transitions"])
        .map_err(csv_err(&path))?;
    let mut cumulative = 0;
    for (i, log) in result.logs.iter().enumerate() {
        cumulative += log.len();
        w.write_record([
            (i + 1).to_string(),
            log.len().to_string(),
            log.failed().to_string(),
            fmt_f64(&mut buf, log.total_reward()),
            cumulative.to_string(),
        ])
        .map_err(csv_err(&path))?;
        write_file(&out.join(format!("episode_{:03}.csv", i + 1)), |f| log.write_csv(f))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let metrics = vec![
        metric("episodes_used", result.episodes_used as f64),
        metric("success", f64::from(u8::from(result.success))),
        metric("transitions", result.transition_count() as f64),
    ];
    finish("episode", config.seed, config, out, metrics, started)
}

/// Exhaustive evaluation of every archive elite under a damage condition;
/// the maximum is the oracle for adaptation. Writes `eval.csv`
/// (`cell,prior_fitness,fitness`), `summary.csv` and `run.json`.
pub fn cmd_eval(config: &EvalConfig, out: &Path) -> Result<RunSummary> {
    let started = Instant::now();
    let archive = EliteArchive::load(&config.archive, config.grid)?;
    if archive.is_empty() {
        return Err(Error::EmptyArchive);
    }
    prepare_dir(out)?;
    let (best_cell, best) = oracle_best(&archive, config.damage)?;
    let path = out.join("eval.csv");
    let mut w = csv_writer(&path)?;
    let mut buf = ryu::Buffer::new();
    let dmg = DamageCondition::from_id(config.damage);
    w.write_record(["cell", "prior_fitness", "fitness"])
        .map_err(csv_err(&path))?;
    for (cell, e) in archive.iter() {
        let (f, _) = gait_proxy_eval(&e.params, &dmg)?;
        w.write_record([
            config.grid.flat_index(cell).to_string(),
            fmt_f64(&mut buf, e.fitness),
            fmt_f64(&mut buf, f),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let metrics = vec![
        metric("oracle_best", best),
        metric("oracle_cell", best_cell as f64),
        metric("elites", archive.len() as f64),
    ];
    finish("eval", config.seed, config, out, metrics, started)
}

/// Best damaged fitness over all archive elites, with its flat cell index.
/// The lowest cell wins ties.
pub fn oracle_best(archive: &EliteArchive, damage: DamageId) -> Result<(u64, f64)> {
    let dmg = DamageCondition::from_id(damage);
    let mut best: Option<(u64, f64)> = None;
    for (cell, e) in archive.iter() {
        let (f, _) = gait_proxy_eval(&e.params, &dmg)?;
        if best.is_none_or(|(_, b)| f > b) {
            best = Some((archive.grid().flat_index(cell), f));
        }
    }
    best.ok_or(Error::EmptyArchive)
}
