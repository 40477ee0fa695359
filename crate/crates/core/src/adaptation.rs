//! Map-guided adaptation: Bayesian optimization over the cells of an elite
//! archive, with the archive's fitness as the GP prior mean.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, RunAborted};
use crate::gp::{GpModel, KernelSpec, KernelVariant, Prediction, PriorMean};
use crate::map_elites::{descriptor_to_cell, CellIndex, EliteArchive, GridSpec};
use crate::ParamVector;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorEntry {
    pub cell: CellIndex,
    pub descriptor: Vec<f64>,
    pub params: ParamVector,
    pub prior_fitness: f64,
}

/// Candidate behaviors for adaptation, in lexicographic cell order.
#[derive(Clone, Debug, PartialEq)]
pub struct PriorMap {
    grid: GridSpec,
    entries: Vec<PriorEntry>,
}

impl PriorMap {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn entries(&self) -> &[PriorEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Same cells with `prior_fitness` replaced by `f(entry)`.
    pub fn map_fitness(&self, f: impl Fn(&PriorEntry) -> f64) -> PriorMap {
        PriorMap {
            grid: self.grid,
            entries: self
                .entries
                .iter()
                .map(|e| PriorEntry {
                    prior_fitness: f(e),
                    ..e.clone()
                })
                .collect(),
        }
    }

    /// Prior mean over descriptor space: the prior fitness of the cell
    /// containing the query. Cells outside the map score the map minimum.
    pub fn prior_mean(&self) -> PriorMean {
        let table: BTreeMap<CellIndex, f64> = self.entries.iter().map(|e| (e.cell.clone(), e.prior_fitness)).collect();
        let floor = self
            .entries
            .iter()
            .map(|e| e.prior_fitness)
            .fold(f64::INFINITY, f64::min);
        let grid = self.grid;
        let table = Arc::new(table);
        PriorMean::from_fn(move |x| match descriptor_to_cell(x, &grid) {
            Ok(cell) => table.get(&cell).copied().unwrap_or(floor),
            Err(_) => floor,
        })
    }
}

pub fn build_prior(archive: &EliteArchive) -> Result<PriorMap> {
    if archive.is_empty() {
        return Err(Error::EmptyArchive);
    }
    Ok(PriorMap {
        grid: *archive.grid(),
        entries: archive
            .iter()
            .map(|(cell, e)| PriorEntry {
                cell: cell.clone(),
                descriptor: e.descriptor.clone(),
                params: e.params.clone(),
                prior_fitness: e.fitness,
            })
            .collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    /// Maximum number of real trials.
    pub budget: usize,
    /// Stop once the best observation reaches `alpha` times the largest
    /// posterior mean over the map (see [`stop_threshold`]).
    pub alpha: f64,
    pub kappa: f64,
    pub kernel: KernelVariant,
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            budget: 12,
            alpha: 0.9,
            kappa: 2.0,
            kernel: KernelVariant::Matern52,
            length_scale: 0.4,
            signal_variance: 0.04,
            noise_variance: 1e-6,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.budget >= 1
            && self.alpha.is_finite()
            && self.kappa.is_finite()
            && self.kappa >= 0.0
            && self.length_scale.is_finite()
            && self.length_scale > 0.0
            && self.signal_variance.is_finite()
            && self.signal_variance > 0.0
            && self.noise_variance.is_finite()
            && self.noise_variance >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad adaptation config {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    BudgetExhausted,
    StopRuleMet,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StopReason::BudgetExhausted => "budget_exhausted",
            StopReason::StopRuleMet => "stop_rule_met",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptStatus {
    Running,
    Stopped(StopReason),
    Aborted(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptRecord {
    /// 1-based trial number.
    pub trial: usize,
    pub cell: CellIndex,
    /// Row-major rank of `cell` in the grid.
    pub cell_flat: u64,
    pub observed: f64,
    pub best: f64,
    /// Largest posterior mean over the map after this trial.
    pub stop_metric: f64,
}

#[derive(Clone, Debug)]
pub struct AdaptState {
    prior: PriorMap,
    config: AdaptConfig,
    gp: GpModel,
    records: Vec<AdaptRecord>,
    /// Index into the prior entries of the best trial.
    best: Option<(usize, f64)>,
    status: AdaptStatus,
}

impl AdaptState {
    pub fn new(prior: PriorMap, config: AdaptConfig) -> Result<Self> {
        config.validate()?;
        if prior.is_empty() {
            return Err(Error::EmptyArchive);
        }
        let kernel = KernelSpec::isotropic(
            config.kernel,
            prior.grid.descriptor_dim,
            config.length_scale,
            config.signal_variance,
        )?;
        let gp = GpModel::fit(
            kernel,
            config.noise_variance,
            prior.prior_mean(),
            Vec::new(),
            Vec::new(),
        )?;
        Ok(AdaptState {
            prior,
            config,
            gp,
            records: Vec::new(),
            best: None,
            status: AdaptStatus::Running,
        })
    }

    pub fn prior(&self) -> &PriorMap {
        &self.prior
    }

    pub fn config(&self) -> &AdaptConfig {
        &self.config
    }

    pub fn gp(&self) -> &GpModel {
        &self.gp
    }

    pub fn records(&self) -> &[AdaptRecord] {
        &self.records
    }

    pub fn status(&self) -> &AdaptStatus {
        &self.status
    }

    /// Best trial so far as `(entry, observed)`.
    pub fn best_observed(&self) -> Option<(&PriorEntry, f64)> {
        self.best.map(|(i, v)| (&self.prior.entries[i], v))
    }

    /// Posterior at every map cell, in entry order.
    pub fn posterior(&self) -> Vec<Prediction> {
        self.prior
            .entries
            .iter()
            .map(|e| self.gp.predict_unchecked(&e.descriptor))
            .collect()
    }

    fn ensure_running(&self) -> Result<()> {
        match &self.status {
            AdaptStatus::Running => Ok(()),
            AdaptStatus::Stopped(r) => Err(Error::AlreadyStopped(r.to_string())),
            AdaptStatus::Aborted(why) => Err(Error::AlreadyStopped(format!("aborted: {why}"))),
        }
    }

    /// Entry index maximizing `μ + κσ`; the lowest index wins ties.
    pub fn select_next_index(&self, kappa: f64) -> Result<usize> {
        self.ensure_running()?;
        let mut best = (0, f64::NEG_INFINITY);
        for (i, p) in self.posterior().iter().enumerate() {
            let score = p.mean + kappa * p.std_dev();
            if score > best.1 {
                best = (i, score);
            }
        }
        Ok(best.0)
    }

    /// Runs one trial at the selected cell, conditions the GP on it, and
    /// applies the stop rule (before the budget check).
    pub fn step(&mut self, evaluator: &mut dyn FnMut(&[f64]) -> f64) -> Result<&AdaptRecord> {
        let idx = self.select_next_index(self.config.kappa)?;
        let entry = &self.prior.entries[idx];
        let observed = evaluator(&entry.params);
        let trial = self.records.len() + 1;
        if !observed.is_finite() {
            let err = Error::ObjectiveReturnedNaN { evaluation: trial };
            self.status = AdaptStatus::Aborted(err.to_string());
            return Err(err);
        }
        let gp = match self.gp.with_observation(entry.descriptor.clone(), observed) {
            Ok(gp) => gp,
            Err(e) => {
                self.status = AdaptStatus::Aborted(e.to_string());
                return Err(e);
            }
        };
        self.gp = gp;
        if self.best.is_none_or(|(_, b)| observed > b) {
            self.best = Some((idx, observed));
        }
        let best = self.best.map(|(_, b)| b).unwrap_or(observed);
        let stop_metric = self
            .posterior()
            .iter()
            .map(|p| p.mean)
            .fold(f64::NEG_INFINITY, f64::max);
        let entry = &self.prior.entries[idx];
        self.records.push(AdaptRecord {
            trial,
            cell: entry.cell.clone(),
            cell_flat: self.prior.grid.flat_index(&entry.cell),
            observed,
            best,
            stop_metric,
        });
        if best >= stop_threshold(self.config.alpha, stop_metric) {
            self.status = AdaptStatus::Stopped(StopReason::StopRuleMet);
        } else if self.records.len() >= self.config.budget {
            self.status = AdaptStatus::Stopped(StopReason::BudgetExhausted);
        }
        Ok(self.records.last().expect("record just pushed"))
    }
}

/// `α·m` for `m ≥ 0`, mirrored to `m − (1 − α)|m|` so the threshold stays
/// below the predicted maximum when fitness is negative.
pub fn stop_threshold(alpha: f64, max_mean: f64) -> f64 {
    max_mean - (1.0 - alpha) * max_mean.abs()
}

/// Cell maximizing `μ + κσ` under the state's posterior.
pub fn adapt_select_next(state: &AdaptState, kappa: f64) -> Result<CellIndex> {
    let i = state.select_next_index(kappa)?;
    Ok(state.prior.entries[i].cell.clone())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptTrace {
    pub config: AdaptConfig,
    pub records: Vec<AdaptRecord>,
    pub status: AdaptStatus,
    /// Parameters of the best trial.
    pub best_params: Option<ParamVector>,
}

impl AdaptTrace {
    pub fn best_observed(&self) -> Option<f64> {
        self.records.last().map(|r| r.best)
    }

    pub fn trials(&self) -> usize {
        self.records.len()
    }

    /// CSV with header `trial,cell,observed,best,stop_metric`; `cell` is the
    /// row-major flat cell index.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io {
            path: "<adapt trace>".into(),
            source: e.into(),
        };
        w.write_record(["trial", "cell", "observed", "best", "stop_metric"])
            .map_err(io)?;
        let mut buf = ryu::Buffer::new();
        for r in &self.records {
            w.write_record([
                r.trial.to_string(),
                r.cell_flat.to_string(),
                buf.format(r.observed).to_owned(),
                buf.format(r.best).to_owned(),
                buf.format(r.stop_metric).to_owned(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io("<adapt trace>", e))?;
        Ok(())
    }
}

impl From<AdaptState> for AdaptTrace {
    fn from(state: AdaptState) -> Self {
        let best_params = state.best_observed().map(|(e, _)| e.params.clone());
        AdaptTrace {
            config: state.config,
            records: state.records,
            status: state.status,
            best_params,
        }
    }
}

/// Trials until the stop rule fires or the budget runs out. Selection is
/// deterministic, so no random stream is needed.
#[allow(clippy::result_large_err)] // the partial trace is the point of the error
pub fn adapt_run(
    prior: &PriorMap,
    evaluator: &mut dyn FnMut(&[f64]) -> f64,
    config: &AdaptConfig,
) -> Result<AdaptTrace, RunAborted<AdaptTrace>> {
    let mut state = match AdaptState::new(prior.clone(), config.clone()) {
        Ok(s) => s,
        Err(error) => {
            return Err(RunAborted {
                partial: AdaptTrace {
                    config: config.clone(),
                    records: Vec::new(),
                    status: AdaptStatus::Aborted(error.to_string()),
                    best_params: None,
                },
                error,
            })
        }
    };
    while state.status == AdaptStatus::Running {
        if let Err(error) = state.step(evaluator) {
            return Err(RunAborted {
                error,
                partial: state.into(),
            });
        }
    }
    Ok(state.into())
}
