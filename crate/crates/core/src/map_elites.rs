//! MAP-Elites illumination: a grid over behavior descriptors that keeps the
//! best solution found for every cell.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::ParamVector;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub descriptor_dim: usize,
    pub bins_per_dim: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            descriptor_dim: 6,
            bins_per_dim: 5,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.descriptor_dim == 0 || self.bins_per_dim == 0 {
            return Err(Error::InvalidConfig(format!(
                "grid needs at least one dimension and one bin: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn cell_count(&self) -> f64 {
        (self.bins_per_dim as f64).powi(self.descriptor_dim as i32)
    }

    /// Row-major rank of a cell (first coordinate most significant), which
    /// orders cells exactly as their lexicographic index does.
    pub fn flat_index(&self, cell: &CellIndex) -> u64 {
        cell.0
            .iter()
            .fold(0u64, |acc, &b| acc * self.bins_per_dim as u64 + b as u64)
    }
}

/// Per-dimension bin coordinates of a grid cell. Ordered lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellIndex(pub Vec<usize>);

/// Bin of each descriptor component: `floor(clamp(v, 0, 1) · bins)`, with
/// `v = 1` folded into the last bin.
pub fn descriptor_to_cell(desc: &[f64], grid: &GridSpec) -> Result<CellIndex> {
    ensure_dim(grid.descriptor_dim, desc.len())?;
    ensure_finite(desc, "behavior descriptor")?;
    let bins = grid.bins_per_dim;
    Ok(CellIndex(
        desc.iter()
            .map(|v| ((v.clamp(0.0, 1.0) * bins as f64).floor() as usize).min(bins - 1))
            .collect(),
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub params: ParamVector,
    pub fitness: f64,
    pub descriptor: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    Replaced,
    Rejected,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EliteArchive {
    grid: GridSpec,
    cells: BTreeMap<CellIndex, Elite>,
    /// Occupied cells in order of first occupation; drives parent selection.
    occupied: Vec<CellIndex>,
    pub eval_count: usize,
}

impl EliteArchive {
    pub fn new(grid: GridSpec) -> Result<Self> {
        grid.validate()?;
        Ok(EliteArchive {
            grid,
            cells: BTreeMap::new(),
            occupied: Vec::new(),
            eval_count: 0,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// Keeps `candidate` if its cell is empty or it strictly beats the
    /// occupant; ties keep the occupant.
    pub fn insert(&mut self, candidate: Elite) -> Result<InsertOutcome> {
        if !candidate.fitness.is_finite() {
            return Err(Error::non_finite("elite fitness"));
        }
        ensure_finite(&candidate.params, "elite parameters")?;
        let cell = descriptor_to_cell(&candidate.descriptor, &self.grid)?;
        match self.cells.get_mut(&cell) {
            None => {
                self.occupied.push(cell.clone());
                self.cells.insert(cell, candidate);
                Ok(InsertOutcome::Inserted)
            }
            Some(occupant) if candidate.fitness > occupant.fitness => {
                *occupant = candidate;
                Ok(InsertOutcome::Replaced)
            }
            Some(_) => Ok(InsertOutcome::Rejected),
        }
    }

    pub fn get(&self, cell: &CellIndex) -> Option<&Elite> {
        self.cells.get(cell)
    }

    /// Elites in lexicographic cell order.
    pub fn iter(&self) -> impl Iterator<Item = (&CellIndex, &Elite)> {
        self.cells.iter()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn coverage(&self) -> f64 {
        self.len() as f64 / self.grid.cell_count()
    }

    pub fn qd_score(&self) -> f64 {
        self.cells.values().map(|e| e.fitness).sum()
    }

    /// Fittest elite; the lowest cell index wins ties.
    pub fn best(&self) -> Option<(&CellIndex, &Elite)> {
        self.cells
            .iter()
            .fold(None, |acc: Option<(&CellIndex, &Elite)>, (c, e)| match acc {
                Some((_, b)) if b.fitness >= e.fitness => acc,
                _ => Some((c, e)),
            })
    }

    pub fn max_fitness(&self) -> Option<f64> {
        self.best().map(|(_, e)| e.fitness)
    }

    fn uniform_elite<R: Rng + ?Sized>(&self, rng: &mut R) -> &Elite {
        let cell = &self.occupied[rng.random_range(0..self.occupied.len())];
        &self.cells[cell]
    }

    fn select_parent<R: Rng + ?Sized>(&self, selection: &Selection, rng: &mut R) -> &Elite {
        let draws = match *selection {
            Selection::Uniform => 1,
            Selection::Mixed { tournament, fraction } => {
                if rng.random::<f64>() < fraction {
                    tournament
                } else {
                    1
                }
            }
        };
        let mut best = self.uniform_elite(rng);
        for _ in 1..draws {
            let e = self.uniform_elite(rng);
            if e.fitness > best.fitness {
                best = e;
            }
        }
        best
    }

    /// Writes the archive as CSV with header
    /// `cell_0..cell_{k-1},desc_0..desc_{k-1},fitness,p_0..p_{d-1}`, one row
    /// per elite in lexicographic cell order. Floats use the shortest
    /// representation that parses back to the same bits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let k = self.grid.descriptor_dim;
        let d = self.cells.values().next().map_or(0, |e| e.params.len());
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..k).map(|i| format!("cell_{i}")).collect();
        header.extend((0..k).map(|i| format!("desc_{i}")));
        header.push("fitness".into());
        header.extend((0..d).map(|i| format!("p_{i}")));
        let io = |e: csv::Error| Error::Io {
            path: "<archive csv>".into(),
            source: e.into(),
        };
        w.write_record(&header).map_err(io)?;
        let mut buf = ryu::Buffer::new();
        for (cell, elite) in &self.cells {
            let mut row: Vec<String> = cell.0.iter().map(|b| b.to_string()).collect();
            row.extend(elite.descriptor.iter().map(|v| buf.format(*v).to_owned()));
            row.push(buf.format(elite.fitness).to_owned());
            row.extend(elite.params.iter().map(|v| buf.format(*v).to_owned()));
            w.write_record(&row).map_err(io)?;
        }
        w.flush().map_err(|e| Error::io("<archive csv>", e))?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|e| relabel(e, path))
    }

    /// Parses an archive written by [`write_csv`](Self::write_csv). Cells
    /// must lie in `grid` and agree with their descriptors.
    pub fn read_csv<R: Read>(input: R, grid: GridSpec, label: &str) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            path: label.to_string(),
            message,
        };
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers().map_err(|e| parse_err(e.to_string()))?.clone();
        let k = header.iter().take_while(|h| h.starts_with("cell_")).count();
        let d = header.len().saturating_sub(2 * k + 1);
        let expected: Vec<String> = (0..k)
            .map(|i| format!("cell_{i}"))
            .chain((0..k).map(|i| format!("desc_{i}")))
            .chain(std::iter::once("fitness".to_string()))
            .chain((0..d).map(|i| format!("p_{i}")))
            .collect();
        if header.iter().ne(expected.iter().map(String::as_str)) {
            return Err(parse_err(format!(
                "unexpected header {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        if k != grid.descriptor_dim {
            return Err(parse_err(format!(
                "file has {k} descriptor dims, grid expects {}",
                grid.descriptor_dim
            )));
        }
        let mut archive = EliteArchive::new(grid)?;
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| parse_err(e.to_string()))?;
            let row = line + 2;
            let cell = rec
                .iter()
                .take(k)
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("row {row}: bad cell index: {e}")))?;
            let floats = rec
                .iter()
                .skip(k)
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(format!("row {row}: bad number: {e}")))?;
            let elite = Elite {
                descriptor: floats[..k].to_vec(),
                fitness: floats[k],
                params: floats[k + 1..].to_vec(),
            };
            let cell = CellIndex(cell);
            let actual =
                descriptor_to_cell(&elite.descriptor, &grid).map_err(|e| parse_err(format!("row {row}: {e}")))?;
            if actual != cell {
                return Err(parse_err(format!(
                    "row {row}: descriptor lies in {actual:?}, not {cell:?}"
                )));
            }
            match archive
                .insert(elite)
                .map_err(|e| parse_err(format!("row {row}: {e}")))?
            {
                InsertOutcome::Inserted => {}
                _ => return Err(parse_err(format!("row {row}: duplicate cell {cell:?}"))),
            }
        }
        Ok(archive)
    }

    pub fn load(path: &Path, grid: GridSpec) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(f), grid, &path.display().to_string())
    }
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// `clamp(parent + N(0, σ²))` per dimension, inside `[0, 1]`.
pub fn variation<R: Rng + ?Sized>(parent: &[f64], sigma: f64, rng: &mut R) -> ParamVector {
    if sigma <= 0.0 {
        return parent.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("sigma is positive and finite");
    parent
        .iter()
        .map(|p| (p + normal.sample(rng)).clamp(0.0, 1.0))
        .collect()
}

/// Parent selection over occupied cells.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Selection {
    /// Every occupied cell equally likely.
    Uniform,
    /// With probability `fraction`, the fittest of `tournament` uniform
    /// draws (earliest draw wins ties); otherwise one uniform draw.
    Mixed { tournament: usize, fraction: f64 },
}

impl Default for Selection {
    fn default() -> Self {
        Selection::Mixed {
            tournament: 16,
            fraction: 0.5,
        }
    }
}

impl Selection {
    fn validate(&self) -> Result<()> {
        match *self {
            Selection::Uniform => Ok(()),
            Selection::Mixed { tournament, fraction } if tournament >= 1 && (0.0..=1.0).contains(&fraction) => Ok(()),
            _ => Err(Error::InvalidConfig(format!("bad selection {self:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapElitesConfig {
    /// Uniform random candidates evaluated before variation starts.
    pub init_random: usize,
    /// Gaussian mutation scale in normalized parameter space.
    pub sigma: f64,
    pub selection: Selection,
    /// Candidates generated, evaluated and merged per step.
    pub batch_size: usize,
    /// Evaluate each batch on the rayon pool. Results are merged in
    /// generation order, so archives match the sequential run.
    pub parallel: bool,
}

impl Default for MapElitesConfig {
    fn default() -> Self {
        MapElitesConfig {
            init_random: 1000,
            sigma: 0.05,
            selection: Selection::default(),
            batch_size: 100,
            parallel: false,
        }
    }
}

/// Evaluation of a candidate: `(fitness, descriptor)`.
pub type Task<'a> = dyn Fn(&[f64]) -> (f64, Vec<f64>) + Sync + 'a;

pub fn map_elites_run<R: Rng + ?Sized>(
    task: &Task<'_>,
    param_dim: usize,
    grid: GridSpec,
    budget: usize,
    config: &MapElitesConfig,
    rng: &mut R,
) -> Result<EliteArchive> {
    map_elites_run_observed(task, param_dim, grid, budget, config, rng, &mut |_| {})
}

/// [`map_elites_run`] calling `observer` after every merged batch.
///
/// Candidates are produced sequentially from `rng` (uniform during the first
/// `init_random` evaluations, then a selected elite plus Gaussian variation), evaluated as a batch, and merged in order.
/// Candidates with non-finite fitness or descriptor use up budget but never
/// enter the archive.
pub fn map_elites_run_observed<R: Rng + ?Sized>(
    task: &Task<'_>,
    param_dim: usize,
    grid: GridSpec,
    budget: usize,
    config: &MapElitesConfig,
    rng: &mut R,
    observer: &mut dyn FnMut(&EliteArchive),
) -> Result<EliteArchive> {
    if budget < config.init_random {
        return Err(Error::InvalidConfig(format!(
            "budget {budget} is smaller than init_random {}",
            config.init_random
        )));
    }
    if config.batch_size == 0 || !(config.sigma.is_finite() && config.sigma >= 0.0) || param_dim == 0 {
        return Err(Error::InvalidConfig(format!("bad MAP-Elites config {config:?}")));
    }
    config.selection.validate()?;
    let mut archive = EliteArchive::new(grid)?;
    let mut batch: Vec<ParamVector> = Vec::with_capacity(config.batch_size);
    while archive.eval_count < budget {
        let done = archive.eval_count;
        let n = config.batch_size.min(budget - done);
        batch.clear();
        for i in 0..n {
            let child = if done + i < config.init_random || archive.is_empty() {
                (0..param_dim).map(|_| rng.random::<f64>()).collect()
            } else {
                let parent = archive.select_parent(&config.selection, rng);
                variation(&parent.params, config.sigma, rng)
            };
            batch.push(child);
        }
        let results: Vec<(f64, Vec<f64>)> = if config.parallel {
            batch.par_iter().map(|p| task(p)).collect()
        } else {
            batch.iter().map(|p| task(p)).collect()
        };
        for (params, (fitness, descriptor)) in batch.drain(..).zip(results) {
            archive.eval_count += 1;
            if !fitness.is_finite()
                || descriptor.len() != grid.descriptor_dim
                || descriptor.iter().any(|v| !v.is_finite())
            {
                continue;
            }
            archive.insert(Elite {
                params,
                fitness,
                descriptor,
            })?;
        }
        observer(&archive);
    }
    Ok(archive)
}
