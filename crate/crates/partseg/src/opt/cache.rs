//! Fitness caching, budget accounting, and run history.
//!
//! One true evaluation per cache key; cache hits are free and never count
//! against the budget. The cache also tracks the best-ever genotype and a
//! non-decreasing best-so-far history.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::opt::genotype::PartitionGenotype;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitnessRecord {
    pub canonical_genes: Vec<u32>,
    pub fitness: f64,
    pub eval_seed: u64,
    pub wall_time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryEntry {
    pub eval_index: usize,
    pub genes: Vec<u32>,
    pub fitness: f64,
    pub best_so_far: f64,
    pub wall_time_s: f64,
}

/// An objective the optimizer can query.
pub trait Objective {
    /// Maps a raw genotype to the cache-key genotype (e.g. repair +
    /// canonicalize for label-symmetric objectives, identity otherwise).
    fn normalize(&self, g: &PartitionGenotype) -> Result<PartitionGenotype>;
    /// True evaluation of a normalized genotype.
    fn compute(&mut self, g: &PartitionGenotype) -> Result<(f64, FitnessRecord)>;
}

/// Objective from a plain closure with identity normalization.
pub struct ClosureObjective<F: FnMut(&PartitionGenotype) -> f64>(pub F);

impl<F: FnMut(&PartitionGenotype) -> f64> Objective for ClosureObjective<F> {
    fn normalize(&self, g: &PartitionGenotype) -> Result<PartitionGenotype> {
        g.check_range()?;
        Ok(g.clone())
    }

    fn compute(&mut self, g: &PartitionGenotype) -> Result<(f64, FitnessRecord)> {
        let fitness = (self.0)(g);
        Ok((
            fitness,
            FitnessRecord {
                canonical_genes: g.genes.clone(),
                fitness,
                eval_seed: 0,
                wall_time_s: 0.0,
                report_path: None,
            },
        ))
    }
}

pub struct FitnessCache<O: Objective> {
    objective: O,
    budget: usize,
    cache: HashMap<Vec<u32>, f64>,
    archive: Vec<FitnessRecord>,
    history: Vec<HistoryEntry>,
    best: Option<(PartitionGenotype, f64)>,
    start: Instant,
}

impl<O: Objective> FitnessCache<O> {
    pub fn new(objective: O, budget: usize) -> Result<Self> {
        if budget == 0 {
            return Err(Error::config("eval_budget must be >= 1"));
        }
        Ok(FitnessCache {
            objective,
            budget,
            cache: HashMap::new(),
            archive: Vec::new(),
            history: Vec::new(),
            best: None,
            start: Instant::now(),
        })
    }

    /// Fitness of `g`; a true evaluation only on a cache miss.
    /// Err(BudgetExhausted) once the budget is spent.
    pub fn evaluate(&mut self, g: &PartitionGenotype) -> Result<f64> {
        let key = self.objective.normalize(g)?;
        if let Some(&f) = self.cache.get(&key.genes) {
            return Ok(f);
        }
        if self.archive.len() >= self.budget {
            return Err(Error::BudgetExhausted);
        }
        let (fitness, record) = self.objective.compute(&key)?;
        self.cache.insert(key.genes.clone(), fitness);
        self.archive.push(record);
        let best_so_far = self
            .best
            .as_ref()
            .map(|(_, f)| f.max(fitness))
            .unwrap_or(fitness);
        self.history.push(HistoryEntry {
            eval_index: self.archive.len(),
            genes: key.genes.clone(),
            fitness,
            best_so_far,
            wall_time_s: self.start.elapsed().as_secs_f64(),
        });
        match &self.best {
            Some((_, f)) if *f >= fitness => {}
            _ => self.best = Some((key, fitness)),
        }
        Ok(fitness)
    }

    pub fn true_evals(&self) -> usize {
        self.archive.len()
    }

    pub fn budget_left(&self) -> usize {
        self.budget - self.archive.len()
    }

    pub fn best(&self) -> Option<(PartitionGenotype, f64)> {
        self.best.clone()
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    pub fn archive(&self) -> &[FitnessRecord] {
        &self.archive
    }

    pub fn objective_mut(&mut self) -> &mut O {
        &mut self.objective
    }
}

/// History CSV: eval_index, canonical_genotype, fitness, best_so_far, wall_time_s.
pub fn write_history_csv(history: &[HistoryEntry], path: &Path) -> Result<()> {
    let mut out = String::from("eval_index,canonical_genotype,fitness,best_so_far,wall_time_s\n");
    for h in history {
        let genes = h
            .genes
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ");
        out.push_str(&format!(
            "{},{},{:.9},{:.9},{:.3}\n",
            h.eval_index, genes, h.fitness, h.best_so_far, h.wall_time_s
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Archive persisted as JSON-lines of FitnessRecord.
pub fn write_archive_jsonl(archive: &[FitnessRecord], path: &Path) -> Result<()> {
    let mut out = String::new();
    for r in archive {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::parse(e.to_string()))?);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_archive_jsonl(path: &Path) -> Result<Vec<FitnessRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::parse(format!("{}: {}", path.display(), e))))
        .collect()
}
