//! End-to-end harness: baseline vs optimized-partitioning runs across
//! alpha values and repeat seeds, with CSV/markdown reporting.

use itertools::Itertools;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::dataset::{generate_synthetic, split_dataset, Dataset, GeneratorConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate, write_report, RegionAggregate, ScoreReport};
use crate::metrics::{MetricConfig, REGIONS};
use crate::nn::checkpoint::save_checkpoint;
use crate::nn::{train, MultiPathNet, TrainConfig};
use crate::opt::cache::{write_archive_jsonl, write_history_csv};
use crate::opt::{optimize, OptimizeResult, OptimizerConfig, TrainingObjective};
use crate::util::round_even;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub generator: GeneratorConfig,
    pub split_fractions: (f64, f64, f64),
    pub split_seed: u64,
    pub alphas: Vec<usize>,
    pub n_repeats: usize,
    pub train: TrainConfig,
    pub optimizer: OptimizerConfig,
    pub metrics: MetricConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            generator: GeneratorConfig::default(),
            split_fractions: (0.6, 0.2, 0.2),
            split_seed: 1,
            alphas: vec![1, 2, 3, 4],
            n_repeats: 3,
            train: TrainConfig::default(),
            optimizer: OptimizerConfig::default(),
            metrics: MetricConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// The desk-scale default: 40 scans (24 train), two planted styles,
    /// alpha in {1, 2}, budget 300, 30 epochs.
    pub fn acceptance_default() -> Self {
        ExperimentConfig {
            alphas: vec![1, 2],
            ..ExperimentConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.alphas.is_empty() || self.alphas.contains(&0) {
            return Err(Error::config("alphas must be nonempty, each >= 1"));
        }
        if self.n_repeats == 0 {
            return Err(Error::config("n_repeats must be >= 1"));
        }
        self.train.validate()?;
        self.metrics.validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: ExperimentConfig = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    NoPartitioning,
    Optimized,
}

impl std::fmt::Display for Condition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Condition::NoPartitioning => write!(f, "no_partitioning"),
            Condition::Optimized => write!(f, "optimized"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub dice_pct: f64,
    pub sdsc_pct: Vec<f64>,
    pub combined_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    /// Architecture identifier (toy net hash, hex).
    pub network: String,
    pub n_train: usize,
    pub alpha: usize,
    pub condition: Condition,
    pub repeat: usize,
    pub tolerances_mm: Vec<f64>,
    pub dice: f64,
    pub sdsc: Vec<f64>,
    pub combined: f64,
    pub regions: Vec<RegionAggregate>,
    /// vs the matched baseline (same alpha, repeat); optimized rows only.
    pub improvement: Option<Improvement>,
    /// Best-permutation agreement with hidden styles; optimized rows only.
    pub recovery: Option<f64>,
}

pub fn repeat_seed(base: u64, repeat: usize) -> u64 {
    base.wrapping_add((repeat as u64).wrapping_mul(0x9E3779B97F4A7C15))
}

fn row_from_report(
    cfg: &ExperimentConfig,
    report: &ScoreReport,
    net: &MultiPathNet,
    n_train: usize,
    alpha: usize,
    condition: Condition,
    repeat: usize,
) -> ResultRow {
    ResultRow {
        network: format!("{:016x}", net.architecture_hash()),
        n_train,
        alpha,
        condition,
        repeat,
        tolerances_mm: cfg.metrics.tolerances_mm.clone(),
        dice: report.aggregate.mean_dice,
        sdsc: report.aggregate.mean_sdsc.clone(),
        combined: report.aggregate.mean_combined,
        regions: report.aggregate.regions.clone(),
        improvement: None,
        recovery: None,
    }
}

/// No-partitioning baseline: every decoder's subset is the full training
/// set; best-of-alpha evaluated on the test set.
pub fn run_baseline(
    cfg: &ExperimentConfig,
    splits: &(Dataset, Dataset, Dataset),
    alpha: usize,
    repeat: usize,
) -> Result<(ResultRow, MultiPathNet)> {
    let (train_set, _, test_set) = splits;
    let seed = repeat_seed(cfg.optimizer.seed, repeat);
    let mut net = MultiPathNet::new(alpha, seed)?;
    let full: Vec<usize> = (0..train_set.len()).collect();
    let partition: Vec<Vec<usize>> = vec![full; alpha];
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    train(&mut net, train_set, &partition, &train_cfg)?;
    let report = evaluate(&net, test_set, &cfg.metrics)?;
    let row = row_from_report(
        cfg,
        &report,
        &net,
        train_set.len(),
        alpha,
        Condition::NoPartitioning,
        repeat,
    );
    Ok((row, net))
}

/// Best-permutation agreement between a genotype and hidden styles:
/// max over injective label mappings of the fraction of matching scans.
pub fn recovery_score(genes: &[u32], styles: &[u32], alpha: usize) -> f64 {
    assert_eq!(genes.len(), styles.len());
    let mut targets: Vec<u32> = styles.iter().copied().unique().collect();
    targets.sort_unstable();
    // Pad with dummy labels so every gene label can map somewhere.
    let mut pool = targets.clone();
    let mut dummy = targets.iter().max().copied().unwrap_or(0);
    while pool.len() < alpha {
        dummy += 1;
        pool.push(dummy);
    }
    let mut best = 0usize;
    for perm in pool.iter().permutations(alpha) {
        let matches = genes
            .iter()
            .zip(styles)
            .filter(|(&g, &s)| *perm[(g - 1) as usize] == s)
            .count();
        best = best.max(matches);
    }
    best as f64 / genes.len() as f64
}

pub struct OptimizedRun {
    pub row: ResultRow,
    pub optimize_result: OptimizeResult,
    pub net: MultiPathNet,
}

/// Partition optimization on train+validation, then a retrain of the best
/// genotype with the same seeds as the matched baseline; test scores only.
pub fn run_optimized(
    cfg: &ExperimentConfig,
    splits: &(Dataset, Dataset, Dataset),
    alpha: usize,
    repeat: usize,
) -> Result<OptimizedRun> {
    if alpha < 2 {
        return Err(Error::config(
            "optimization is vacuous at alpha = 1; use run_baseline",
        ));
    }
    let (train_set, val_set, test_set) = splits;
    let seed = repeat_seed(cfg.optimizer.seed, repeat);
    let opt_cfg = OptimizerConfig {
        n_genes: train_set.len(),
        alpha: alpha as u32,
        seed,
        ..cfg.optimizer.clone()
    };
    let objective = TrainingObjective::new(
        train_set,
        val_set,
        cfg.train.clone(),
        cfg.metrics.clone(),
        opt_cfg.min_subset_size,
        seed,
    )?;
    let optimize_result = optimize(&opt_cfg, objective)?;

    // Like-for-like retrain: same init and training seed as the baseline.
    let best = &optimize_result.best_genotype;
    let mut net = MultiPathNet::new(alpha, seed)?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    train(&mut net, train_set, &best.subsets(), &train_cfg)?;
    let report = evaluate(&net, test_set, &cfg.metrics)?;
    let mut row = row_from_report(
        cfg,
        &report,
        &net,
        train_set.len(),
        alpha,
        Condition::Optimized,
        repeat,
    );
    let styles: Option<Vec<u32>> = train_set.scans.iter().map(|s| s.hidden_style).collect();
    row.recovery = styles.map(|s| recovery_score(&best.genes, &s, alpha));
    Ok(OptimizedRun {
        row,
        optimize_result,
        net,
    })
}

fn pct(ours: f64, baseline: f64) -> f64 {
    100.0 * (ours - baseline) / baseline
}

pub fn fill_improvement(optimized: &mut ResultRow, baseline: &ResultRow) {
    optimized.improvement = Some(Improvement {
        dice_pct: pct(optimized.dice, baseline.dice),
        sdsc_pct: optimized
            .sdsc
            .iter()
            .zip(&baseline.sdsc)
            .map(|(o, b)| pct(*o, *b))
            .collect(),
        combined_pct: pct(optimized.combined, baseline.combined),
    });
}

/// Runs every (alpha, repeat) cell: baseline always, optimized for
/// alpha >= 2. Cells run in parallel; artifacts land in per-cell
/// subdirectories of output_dir.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    cfg.validate()?;
    let dataset = generate_synthetic(&cfg.generator)?;
    let splits = split_dataset(&dataset, cfg.split_fractions, cfg.split_seed)?;
    fs::create_dir_all(&cfg.output_dir)?;

    let cells: Vec<(usize, usize)> = cfg
        .alphas
        .iter()
        .flat_map(|&a| (0..cfg.n_repeats).map(move |r| (a, r)))
        .collect();
    let results: Vec<Result<Vec<ResultRow>>> = cells
        .par_iter()
        .map(|&(alpha, repeat)| {
            let cell_dir = cfg.output_dir.join(format!("cell_a{}_r{}", alpha, repeat));
            fs::create_dir_all(&cell_dir)?;
            let (baseline_row, baseline_net) = run_baseline(cfg, &splits, alpha, repeat)?;
            save_checkpoint(&baseline_net, &cell_dir.join("baseline.pnet"))?;
            let mut rows = vec![baseline_row.clone()];
            if alpha >= 2 {
                let mut run = run_optimized(cfg, &splits, alpha, repeat)?;
                fill_improvement(&mut run.row, &baseline_row);
                run.optimize_result
                    .best_genotype
                    .save(&cell_dir.join("best_genotype.txt"))?;
                write_history_csv(&run.optimize_result.history, &cell_dir.join("history.csv"))?;
                write_archive_jsonl(
                    &run.optimize_result.archive,
                    &cell_dir.join("archive.jsonl"),
                )?;
                save_checkpoint(&run.net, &cell_dir.join("optimized.pnet"))?;
                let report = evaluate(&run.net, &splits.2, &cfg.metrics)?;
                write_report(&report, &cell_dir.join("test_report"))?;
                rows.push(run.row);
            }
            Ok(rows)
        })
        .collect();
    let mut rows = Vec::new();
    for r in results {
        rows.extend(r?);
    }
    report(&rows, &cfg.output_dir)?;
    Ok(rows)
}

fn fmt3(x: f64) -> String {
    format!("{:.3}", round_even(x, 3))
}

fn fmt2(x: f64) -> String {
    format!("{:.2}", round_even(x, 2))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn tolerance_label(t: f64) -> String {
    if t.fract() == 0.0 {
        format!("{}mm", t as i64)
    } else {
        format!("{}mm", t)
    }
}

/// Emits results.csv (all rows), table.md (per-alpha means, baseline vs
/// optimized vs improvement %), and regions.csv (per-region improvement,
/// averaged over optimized cells). Values are rounded half-to-even to
/// three decimals, improvements to two.
pub fn report(rows: &[ResultRow], output_dir: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::config("report: no result rows"));
    }
    fs::create_dir_all(output_dir)?;
    let tols = &rows[0].tolerances_mm;
    let labels: Vec<String> = tols.iter().map(|&t| tolerance_label(t)).collect();

    // results.csv
    let mut header = vec![
        "network".to_string(),
        "n".into(),
        "alpha".into(),
        "condition".into(),
        "repeat".into(),
        "dice".into(),
    ];
    for l in &labels {
        header.push(format!("sdsc_{}", l));
    }
    header.push("combined".into());
    for region in REGIONS {
        header.push(format!("{}_dice", region));
        for l in &labels {
            header.push(format!("{}_sdsc_{}", region, l));
        }
    }
    header.push("improvement_dice_pct".into());
    for l in &labels {
        header.push(format!("improvement_sdsc_{}_pct", l));
    }
    header.push("improvement_combined_pct".into());
    header.push("recovery".into());

    let mut csv = header.join(",") + "\n";
    for row in rows {
        let mut cols = vec![
            row.network.clone(),
            row.n_train.to_string(),
            row.alpha.to_string(),
            row.condition.to_string(),
            row.repeat.to_string(),
            format!("{:.6}", row.dice),
        ];
        for v in &row.sdsc {
            cols.push(format!("{:.6}", v));
        }
        cols.push(format!("{:.6}", row.combined));
        for region in REGIONS {
            let r = row.regions.iter().find(|r| r.region == region);
            match r {
                Some(r) => {
                    cols.push(format!("{:.6}", r.mean_dice));
                    for v in &r.mean_sdsc {
                        cols.push(format!("{:.6}", v));
                    }
                }
                None => {
                    cols.push("-".into());
                    for _ in tols {
                        cols.push("-".into());
                    }
                }
            }
        }
        match &row.improvement {
            Some(imp) => {
                cols.push(format!("{:.4}", imp.dice_pct));
                for v in &imp.sdsc_pct {
                    cols.push(format!("{:.4}", v));
                }
                cols.push(format!("{:.4}", imp.combined_pct));
            }
            None => {
                cols.push("-".into());
                for _ in tols {
                    cols.push("-".into());
                }
                cols.push("-".into());
            }
        }
        cols.push(
            row.recovery
                .map(|r| format!("{:.4}", r))
                .unwrap_or_else(|| "-".into()),
        );
        csv.push_str(&(cols.join(",") + "\n"));
    }
    fs::write(output_dir.join("results.csv"), csv)?;

    // table.md: per-alpha means over repeats.
    let network = &rows[0].network;
    let n_train = rows[0].n_train;
    let mut alphas: Vec<usize> = rows.iter().map(|r| r.alpha).unique().collect();
    alphas.sort_unstable();
    let mut md = String::new();
    md.push_str(&format!(
        "| Network | N | α | No-partitioning DSC | No-partitioning SDSC {} | No-partitioning SDSC {} | Ours DSC | Ours SDSC {} | Ours SDSC {} | Improvement DSC (%) | Improvement SDSC {} (%) | Improvement SDSC {} (%) |\n",
        labels[0], labels[1], labels[0], labels[1], labels[0], labels[1]
    ));
    md.push_str("|---|---|---|---|---|---|---|---|---|---|---|---|\n");
    for &alpha in &alphas {
        let base: Vec<&ResultRow> = rows
            .iter()
            .filter(|r| r.alpha == alpha && r.condition == Condition::NoPartitioning)
            .collect();
        let ours: Vec<&ResultRow> = rows
            .iter()
            .filter(|r| r.alpha == alpha && r.condition == Condition::Optimized)
            .collect();
        if base.is_empty() {
            continue;
        }
        let base_cols = [
            fmt3(mean(&base.iter().map(|r| r.dice).collect::<Vec<_>>())),
            fmt3(mean(&base.iter().map(|r| r.sdsc[0]).collect::<Vec<_>>())),
            fmt3(mean(&base.iter().map(|r| r.sdsc[1]).collect::<Vec<_>>())),
        ];
        let (ours_cols, imp_cols) = if ours.is_empty() {
            (["-".to_string(), "-".into(), "-".into()], ["-".to_string(), "-".into(), "-".into()])
        } else {
            (
                [
                    fmt3(mean(&ours.iter().map(|r| r.dice).collect::<Vec<_>>())),
                    fmt3(mean(&ours.iter().map(|r| r.sdsc[0]).collect::<Vec<_>>())),
                    fmt3(mean(&ours.iter().map(|r| r.sdsc[1]).collect::<Vec<_>>())),
                ],
                [
                    fmt2(mean(
                        &ours
                            .iter()
                            .filter_map(|r| r.improvement.as_ref().map(|i| i.dice_pct))
                            .collect::<Vec<_>>(),
                    )),
                    fmt2(mean(
                        &ours
                            .iter()
                            .filter_map(|r| r.improvement.as_ref().map(|i| i.sdsc_pct[0]))
                            .collect::<Vec<_>>(),
                    )),
                    fmt2(mean(
                        &ours
                            .iter()
                            .filter_map(|r| r.improvement.as_ref().map(|i| i.sdsc_pct[1]))
                            .collect::<Vec<_>>(),
                    )),
                ],
            )
        };
        md.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            network,
            n_train,
            alpha,
            base_cols[0],
            base_cols[1],
            base_cols[2],
            ours_cols[0],
            ours_cols[1],
            ours_cols[2],
            imp_cols[0],
            imp_cols[1],
            imp_cols[2]
        ));
    }
    fs::write(output_dir.join("table.md"), md)?;

    // regions.csv: mean per-region improvement over all optimized cells.
    let mut regions_csv = String::from("region,metric,improvement_pct\n");
    let mut metrics: Vec<String> = vec!["dice".into()];
    for l in &labels {
        metrics.push(format!("sdsc_{}", l));
    }
    for region in REGIONS {
        for (mi, metric) in metrics.iter().enumerate() {
            let mut imps = Vec::new();
            for ours in rows.iter().filter(|r| r.condition == Condition::Optimized) {
                let Some(base) = rows.iter().find(|r| {
                    r.condition == Condition::NoPartitioning
                        && r.alpha == ours.alpha
                        && r.repeat == ours.repeat
                }) else {
                    continue;
                };
                let get = |row: &ResultRow| -> Option<f64> {
                    let r = row.regions.iter().find(|r| r.region == region)?;
                    Some(if mi == 0 { r.mean_dice } else { r.mean_sdsc[mi - 1] })
                };
                if let (Some(o), Some(b)) = (get(ours), get(base)) {
                    if b > 0.0 {
                        imps.push(pct(o, b));
                    }
                }
            }
            let value = if imps.is_empty() {
                "-".to_string()
            } else {
                format!("{:.3}", round_even(mean(&imps), 3))
            };
            regions_csv.push_str(&format!("{},{},{}\n", region, metric, value));
        }
    }
    fs::write(output_dir.join("regions.csv"), regions_csv)?;
    Ok(())
}
