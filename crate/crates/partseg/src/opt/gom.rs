//! Gene-pool optimal mixing with a P3-style layered population pyramid,
//! plus hill-climber and random-search baselines.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opt::cache::{FitnessCache, HistoryEntry, Objective};
use crate::opt::genotype::{repair, PartitionGenotype};
use crate::opt::linkage::{learn_linkage, LinkageTree};
use crate::opt::surrogate::surrogate_screen;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    GomEa,
    HillClimber,
    RandomSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateMode {
    Off,
    Knn,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub mode: SurrogateMode,
    pub k: usize,
    pub screen_fraction: f64,
    /// Random candidates drawn per pyramid iteration when screening.
    pub batch: usize,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        SurrogateConfig {
            mode: SurrogateMode::Off,
            k: 5,
            screen_fraction: 0.25,
            batch: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    pub eval_budget: usize,
    pub n_genes: usize,
    pub alpha: u32,
    pub min_subset_size: usize,
    pub surrogate: SurrogateConfig,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            algorithm: Algorithm::GomEa,
            eval_budget: 300,
            n_genes: 0,
            alpha: 2,
            min_subset_size: 1,
            surrogate: SurrogateConfig::default(),
            seed: 0,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eval_budget == 0 {
            return Err(Error::config("eval_budget must be >= 1"));
        }
        if self.alpha == 0 {
            return Err(Error::config("alpha must be >= 1"));
        }
        if self.min_subset_size == 0 {
            return Err(Error::config("min_subset_size must be >= 1"));
        }
        if self.min_subset_size * self.alpha as usize > self.n_genes {
            return Err(Error::config(format!(
                "min_subset_size {} * alpha {} exceeds N = {}",
                self.min_subset_size, self.alpha, self.n_genes
            )));
        }
        if !(self.surrogate.screen_fraction > 0.0 && self.surrogate.screen_fraction <= 1.0) {
            return Err(Error::config("screen_fraction must be in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub best_genotype: PartitionGenotype,
    pub best_fitness: f64,
    pub history: Vec<HistoryEntry>,
    pub archive: Vec<crate::opt::cache::FitnessRecord>,
    pub true_evals: usize,
}

/// One gene-pool optimal mixing pass: for each linkage set, copy a random
/// donor's genes over the set and keep the change iff fitness does not
/// decrease (kept on equal). Identical candidates cost no evaluation.
pub fn gom_step<O: Objective>(
    parent: &PartitionGenotype,
    parent_fitness: f64,
    donors: &[Vec<u32>],
    tree: &LinkageTree,
    cache: &mut FitnessCache<O>,
    rng: &mut ChaCha8Rng,
) -> Result<(PartitionGenotype, f64)> {
    let mut current = parent.clone();
    let mut fitness = parent_fitness;
    for set in &tree.sets {
        let donor = &donors[rng.gen_range(0..donors.len())];
        let mut candidate = current.clone();
        for &locus in set {
            candidate.genes[locus] = donor[locus];
        }
        if candidate.genes == current.genes {
            continue;
        }
        let f = cache.evaluate(&candidate)?;
        if f >= fitness {
            current = candidate;
            fitness = f;
        }
    }
    Ok((current, fitness))
}

fn random_feasible(
    cfg: &OptimizerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PartitionGenotype> {
    let g = PartitionGenotype::random(cfg.n_genes, cfg.alpha, rng);
    repair(&g, cfg.min_subset_size, rng.gen())
}

/// New pyramid seed solution; surrogate-screened from a random batch when
/// the surrogate is enabled and the archive is populated.
fn new_solution<O: Objective>(
    cfg: &OptimizerConfig,
    cache: &mut FitnessCache<O>,
    rng: &mut ChaCha8Rng,
) -> Result<PartitionGenotype> {
    if cfg.surrogate.mode == SurrogateMode::Knn
        && cache.archive().len() >= cfg.surrogate.k
        && cfg.surrogate.batch > 1
    {
        let batch: Vec<PartitionGenotype> = (0..cfg.surrogate.batch)
            .map(|_| random_feasible(cfg, rng))
            .collect::<Result<_>>()?;
        let shortlist = surrogate_screen(
            &batch,
            cache.archive(),
            cfg.surrogate.k,
            cfg.surrogate.screen_fraction,
        )?;
        Ok(shortlist[0].clone())
    } else {
        random_feasible(cfg, rng)
    }
}

fn run_gom_ea<O: Objective>(
    cfg: &OptimizerConfig,
    cache: &mut FitnessCache<O>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut layers: Vec<Vec<(Vec<u32>, f64)>> = vec![Vec::new()];
    loop {
        let g = new_solution(cfg, cache, rng)?;
        let f = cache.evaluate(&g)?;
        layers[0].push((g.genes.clone(), f));
        let mut current = (g, f);
        for l in 0..layers.len() {
            if layers[l].len() < 2 {
                continue;
            }
            let population: Vec<Vec<u32>> =
                layers[l].iter().map(|(genes, _)| genes.clone()).collect();
            let tree = learn_linkage(&population)?;
            let before = current.1;
            let (g2, f2) = gom_step(&current.0, current.1, &population, &tree, cache, rng)?;
            current = (g2, f2);
            if current.1 > before {
                if l + 1 == layers.len() {
                    layers.push(Vec::new());
                }
                layers[l + 1].push((current.0.genes.clone(), current.1));
            }
        }
    }
}

fn run_hill_climber<O: Objective>(
    cfg: &OptimizerConfig,
    cache: &mut FitnessCache<O>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    loop {
        let mut current = random_feasible(cfg, rng)?;
        let mut fitness = cache.evaluate(&current)?;
        let mut stall = 0usize;
        let patience = cfg.n_genes * cfg.alpha as usize * 2;
        while stall < patience {
            let mut candidate = current.clone();
            let locus = rng.gen_range(0..cfg.n_genes);
            let value = rng.gen_range(1..=cfg.alpha);
            if candidate.genes[locus] == value {
                stall += 1;
                continue;
            }
            candidate.genes[locus] = value;
            if !candidate.is_feasible(cfg.min_subset_size) {
                stall += 1;
                continue;
            }
            let f = cache.evaluate(&candidate)?;
            if f >= fitness {
                if f > fitness {
                    stall = 0;
                }
                current = candidate;
                fitness = f;
            } else {
                stall += 1;
            }
        }
    }
}

fn run_random_search<O: Objective>(
    cfg: &OptimizerConfig,
    cache: &mut FitnessCache<O>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    loop {
        let g = random_feasible(cfg, rng)?;
        cache.evaluate(&g)?;
    }
}

/// Runs the configured search until the evaluation budget is exhausted and
/// returns the best-ever genotype with the run history.
pub fn optimize<O: Objective>(cfg: &OptimizerConfig, objective: O) -> Result<OptimizeResult> {
    cfg.validate()?;
    let mut cache = FitnessCache::new(objective, cfg.eval_budget)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let outcome = match cfg.algorithm {
        Algorithm::GomEa => run_gom_ea(cfg, &mut cache, &mut rng),
        Algorithm::HillClimber => run_hill_climber(cfg, &mut cache, &mut rng),
        Algorithm::RandomSearch => run_random_search(cfg, &mut cache, &mut rng),
    };
    match outcome {
        Err(Error::BudgetExhausted) | Ok(()) => {}
        Err(e) => return Err(e),
    }
    let (best_genotype, best_fitness) = cache
        .best()
        .ok_or_else(|| Error::config("optimizer made no evaluations"))?;
    Ok(OptimizeResult {
        best_genotype,
        best_fitness,
        history: cache.history().to_vec(),
        archive: cache.archive().to_vec(),
        true_evals: cache.true_evals(),
    })
}
