//! The expensive objective: one evaluation trains a fresh multi-path net
//! on the decoded partition and scores best-of-alpha on the validation set.

use std::time::Instant;

use crate::dataset::{Dataset, SplitTag};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::metrics::MetricConfig;
use crate::nn::{train, MultiPathNet, TrainConfig};
use crate::opt::cache::{FitnessRecord, Objective};
use crate::opt::genotype::{canonicalize, repair, PartitionGenotype};
use crate::util::fnv1a64;

fn genes_hash(genes: &[u32]) -> u64 {
    let bytes: Vec<u8> = genes.iter().flat_map(|v| v.to_le_bytes()).collect();
    fnv1a64(&bytes)
}

pub struct TrainingObjective<'a> {
    pub train_set: &'a Dataset,
    pub val_set: &'a Dataset,
    pub train_cfg: TrainConfig,
    pub metric_cfg: MetricConfig,
    pub min_subset_size: usize,
    pub run_seed: u64,
    /// Trainings actually executed; used for budget-accounting checks.
    pub trainings: usize,
}

impl<'a> TrainingObjective<'a> {
    pub fn new(
        train_set: &'a Dataset,
        val_set: &'a Dataset,
        train_cfg: TrainConfig,
        metric_cfg: MetricConfig,
        min_subset_size: usize,
        run_seed: u64,
    ) -> Result<Self> {
        // Test-set hygiene: the optimizer only ever sees validation scores.
        if val_set.split_tag != SplitTag::Validation {
            return Err(Error::config(format!(
                "fitness eval_set must be the validation split, got {}",
                val_set.split_tag
            )));
        }
        if train_set.is_empty() || val_set.is_empty() {
            return Err(Error::config("fitness: empty train or validation set"));
        }
        Ok(TrainingObjective {
            train_set,
            val_set,
            train_cfg,
            metric_cfg,
            min_subset_size,
            run_seed,
            trainings: 0,
        })
    }

    /// One fixed training seed per run: every genotype trains from the same
    /// initialization and shuffle stream, so fitness differences between
    /// genotypes reflect the partition alone rather than seed noise, and the
    /// final like-for-like retrain reproduces the winning evaluation exactly.
    pub fn eval_seed(&self, _canonical_genes: &[u32]) -> u64 {
        self.run_seed
    }
}

impl Objective for TrainingObjective<'_> {
    fn normalize(&self, g: &PartitionGenotype) -> Result<PartitionGenotype> {
        if g.len() != self.train_set.len() {
            return Err(Error::config(format!(
                "genotype length {} does not match training set size {}",
                g.len(),
                self.train_set.len()
            )));
        }
        let repaired = repair(g, self.min_subset_size, genes_hash(&g.genes) ^ self.run_seed)?;
        canonicalize(&repaired)
    }

    fn compute(&mut self, g: &PartitionGenotype) -> Result<(f64, FitnessRecord)> {
        if !g.is_feasible(self.min_subset_size) {
            return Err(Error::config("fitness: genotype infeasible after repair"));
        }
        let start = Instant::now();
        let eval_seed = self.eval_seed(&g.genes);
        let mut net = MultiPathNet::new(g.alpha as usize, eval_seed)?;
        let cfg = TrainConfig {
            seed: eval_seed,
            ..self.train_cfg.clone()
        };
        train(&mut net, self.train_set, &g.subsets(), &cfg)?;
        self.trainings += 1;
        let report = evaluate(&net, self.val_set, &self.metric_cfg)?;
        let fitness = report.aggregate.mean_combined;
        Ok((
            fitness,
            FitnessRecord {
                canonical_genes: g.genes.clone(),
                fitness,
                eval_seed,
                wall_time_s: start.elapsed().as_secs_f64(),
                report_path: None,
            },
        ))
    }
}
