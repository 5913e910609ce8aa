//! Command-line front end: data generation, training, partition
//! optimization, evaluation, the full experiment harness, batch mask
//! scoring, and a gradient self-check.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use partseg::dataset::io::{load_dataset, read_mask, save_dataset};
use partseg::dataset::{generate_synthetic, split_dataset};
use partseg::error::{Error, Result};
use partseg::eval::{evaluate, write_report};
use partseg::experiment::{report as emit_report, run_experiment, ExperimentConfig, ResultRow};
use partseg::metrics::{combined_score, dice, region_scores, surface_dice};
use partseg::nn::checkpoint::{load_checkpoint, save_checkpoint};
use partseg::nn::gradcheck::{gradient_check, gradient_check_net, Scalarizer};
use partseg::nn::net::{build_decoder, build_encoder};
use partseg::nn::{train, MultiPathNet, OperatorGraph, Tensor};
use partseg::opt::cache::{write_archive_jsonl, write_history_csv};
use partseg::opt::{optimize, OptimizerConfig, PartitionGenotype, TrainingObjective};

#[derive(Parser)]
#[command(name = "partseg", version, about = "Multi-path segmentation with evolutionary dataset partitioning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed field in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with planted observer styles.
    GenData {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Train a multi-path network on a dataset directory.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        /// Dataset directory (manifest.json plus rasters).
        #[arg(long)]
        data: PathBuf,
        /// Number of decoder paths.
        #[arg(long, default_value_t = 1)]
        alpha: usize,
        /// Optional genotype line file; absent means every decoder trains
        /// on the full set (no partitioning).
        #[arg(long)]
        genotype: Option<PathBuf>,
    },
    /// Search for a data partition maximizing validation score.
    Optimize {
        #[command(flatten)]
        common: CommonOpts,
        /// Training-split dataset directory.
        #[arg(long)]
        train_data: PathBuf,
        /// Validation-split dataset directory.
        #[arg(long)]
        val_data: PathBuf,
        /// Number of decoder paths.
        #[arg(long, default_value_t = 2)]
        alpha: usize,
    },
    /// Score a trained checkpoint on a dataset.
    Evaluate {
        #[command(flatten)]
        common: CommonOpts,
        /// Checkpoint produced by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Dataset directory to score.
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the full baseline-vs-optimized experiment grid.
    Experiment {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Re-emit report files from a saved rows.json.
    Report {
        #[command(flatten)]
        common: CommonOpts,
        /// rows.json written by `experiment`.
        #[arg(long)]
        rows: PathBuf,
    },
    /// Batch-score prediction/reference mask pairs into a CSV.
    ScoreMasks {
        #[command(flatten)]
        common: CommonOpts,
        /// CSV of `id,prediction_path,reference_path` lines (no header).
        #[arg(long)]
        pairs: PathBuf,
        /// Pixel spacing in millimetres, `h,w`.
        #[arg(long, default_value = "1,1")]
        spacing: String,
    },
    /// Finite-difference gradient self-check of every operator and the net.
    GradCheck {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn load_config(common: &CommonOpts) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.generator.seed = seed;
        cfg.split_seed = seed;
        cfg.train.seed = seed;
        cfg.optimizer.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_gen_data(common: &CommonOpts) -> Result<()> {
    let cfg = load_config(common)?;
    let dataset = generate_synthetic(&cfg.generator)?;
    let (tr, va, te) = split_dataset(&dataset, cfg.split_fractions, cfg.split_seed)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    save_dataset(&dataset, &cfg.output_dir.join("all"))?;
    save_dataset(&tr, &cfg.output_dir.join("train"))?;
    save_dataset(&va, &cfg.output_dir.join("validation"))?;
    save_dataset(&te, &cfg.output_dir.join("test"))?;
    println!(
        "generated {} scans ({} train / {} validation / {} test) in {}",
        dataset.len(),
        tr.len(),
        va.len(),
        te.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn cmd_train(
    common: &CommonOpts,
    data: &Path,
    alpha: usize,
    genotype: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(common)?;
    let train_set = load_dataset(data)?;
    let partition: Vec<Vec<usize>> = match genotype {
        Some(path) => {
            let g = PartitionGenotype::load(path, alpha as u32)?;
            if g.len() != train_set.len() {
                return Err(Error::config(format!(
                    "genotype length {} does not match dataset size {}",
                    g.len(),
                    train_set.len()
                )));
            }
            g.subsets()
        }
        None => vec![(0..train_set.len()).collect(); alpha],
    };
    let mut net = MultiPathNet::new(alpha, cfg.train.seed)?;
    let losses = train(&mut net, &train_set, &partition, &cfg.train)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    let model_path = cfg.output_dir.join("model.pnet");
    save_checkpoint(&net, &model_path)?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{:.6}\n", i + 1, l));
    }
    std::fs::write(cfg.output_dir.join("losses.csv"), csv)?;
    println!(
        "trained alpha={} for {} epochs; final loss {:.6}; saved {}",
        alpha,
        losses.len(),
        losses.last().unwrap_or(&f64::NAN),
        model_path.display()
    );
    Ok(())
}

fn cmd_optimize(common: &CommonOpts, train_data: &Path, val_data: &Path, alpha: usize) -> Result<()> {
    let cfg = load_config(common)?;
    let train_set = load_dataset(train_data)?;
    let val_set = load_dataset(val_data)?;
    let opt_cfg = OptimizerConfig {
        n_genes: train_set.len(),
        alpha: alpha as u32,
        ..cfg.optimizer.clone()
    };
    let objective = TrainingObjective::new(
        &train_set,
        &val_set,
        cfg.train.clone(),
        cfg.metrics.clone(),
        opt_cfg.min_subset_size,
        opt_cfg.seed,
    )?;
    let result = optimize(&opt_cfg, objective)?;
    std::fs::create_dir_all(&cfg.output_dir)?;
    result
        .best_genotype
        .save(&cfg.output_dir.join("best_genotype.txt"))?;
    write_history_csv(&result.history, &cfg.output_dir.join("history.csv"))?;
    write_archive_jsonl(&result.archive, &cfg.output_dir.join("archive.jsonl"))?;
    println!(
        "best fitness {:.6} after {} true evaluations; artifacts in {}",
        result.best_fitness,
        result.true_evals,
        cfg.output_dir.display()
    );
    Ok(())
}

fn cmd_evaluate(common: &CommonOpts, model: &Path, data: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let net = load_checkpoint(model)?;
    let eval_set = load_dataset(data)?;
    let report = evaluate(&net, &eval_set, &cfg.metrics)?;
    write_report(&report, &cfg.output_dir)?;
    println!(
        "mean dice {:.6}, mean combined {:.6} over {} scans; report in {}",
        report.aggregate.mean_dice,
        report.aggregate.mean_combined,
        report.per_scan.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn cmd_experiment(common: &CommonOpts) -> Result<()> {
    let cfg = load_config(common)?;
    let rows = run_experiment(&cfg)?;
    let json = serde_json::to_string_pretty(&rows).map_err(|e| Error::parse(e.to_string()))?;
    std::fs::write(cfg.output_dir.join("rows.json"), json)?;
    println!(
        "{} result rows; reports in {}",
        rows.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn cmd_report(common: &CommonOpts, rows_path: &Path) -> Result<()> {
    let cfg = load_config(common)?;
    let text = std::fs::read_to_string(rows_path)?;
    let rows: Vec<ResultRow> =
        serde_json::from_str(&text).map_err(|e| Error::parse(format!("{}: {}", rows_path.display(), e)))?;
    emit_report(&rows, &cfg.output_dir)?;
    println!("report files written to {}", cfg.output_dir.display());
    Ok(())
}

fn parse_spacing(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(Error::config(format!("spacing must be `h,w`, got `{}`", s)));
    }
    let h: f64 = parts[0]
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("bad spacing component `{}`", parts[0])))?;
    let w: f64 = parts[1]
        .trim()
        .parse()
        .map_err(|_| Error::config(format!("bad spacing component `{}`", parts[1])))?;
    if h <= 0.0 || w <= 0.0 {
        return Err(Error::config("spacing components must be positive"));
    }
    Ok((h, w))
}

fn cmd_score_masks(common: &CommonOpts, pairs: &Path, spacing_arg: &str) -> Result<()> {
    let cfg = load_config(common)?;
    let spacing = parse_spacing(spacing_arg)?;
    let text = std::fs::read_to_string(pairs)?;
    let mut out = String::from(
        "id,dice,sdsc_2mm,sdsc_4mm,combined,base_dice,mid_dice,apex_dice,base_sdsc_2mm,mid_sdsc_2mm,apex_sdsc_2mm\n",
    );
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::parse(format!(
                "{}:{}: expected `id,prediction,reference`",
                pairs.display(),
                lineno + 1
            )));
        }
        let (id, pred_path, ref_path) = (fields[0], fields[1], fields[2]);
        let pred = read_mask(Path::new(pred_path))?;
        let reference = read_mask(Path::new(ref_path))?;
        let d = dice(&pred, &reference)?;
        let s2 = surface_dice(&pred, &reference, spacing, cfg.metrics.tolerances_mm[0])?;
        let s4 = surface_dice(&pred, &reference, spacing, cfg.metrics.tolerances_mm[1])?;
        let comb = combined_score(&pred, &reference, spacing, &cfg.metrics)?;
        let regions = region_scores(&pred, &reference, spacing, &cfg.metrics)?;
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            id,
            d,
            s2,
            s4,
            comb,
            regions[0].dice,
            regions[1].dice,
            regions[2].dice,
            regions[0].sdsc[0],
            regions[1].sdsc[0],
            regions[2].sdsc[0],
        ));
    }
    match &common.out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, out)?;
            println!("scores written to {}", path.display());
        }
        None => print!("{}", out),
    }
    Ok(())
}

fn cmd_grad_check(common: &CommonOpts) -> Result<()> {
    let seed = common.seed.unwrap_or(0);
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    let check_graph = |graph: &mut OperatorGraph, inputs: &[&Tensor], name: &str, seed: u64| {
        let err = gradient_check(graph, inputs, &Scalarizer::WeightedSum(seed), seed)?;
        println!("{:<10} max relative error {:.3e}", name, err);
        if err >= 1e-4 {
            return Err(Error::config(format!("{} gradient check failed: {}", name, err)));
        }
        Ok(())
    };

    let mut x = Tensor::zeros(1, 1, 16, 16);
    x.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));

    let mut enc = build_encoder();
    enc.init_params(&mut rng);
    check_graph(&mut enc, &[&x], "encoder", seed ^ 1)?;

    let mut dec = build_decoder("dec");
    dec.init_params(&mut rng);
    let mut feat = Tensor::zeros(1, 16, 4, 4);
    feat.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let mut skip = Tensor::zeros(1, 8, 16, 16);
    skip.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    check_graph(&mut dec, &[&feat, &skip], "decoder", seed ^ 2)?;

    let mut net = MultiPathNet::new(2, seed)?;
    let mut reference = partseg::grid::Mask::new(16, 16);
    for r in 4..12 {
        for c in 4..12 {
            reference.set(r, c, 1);
        }
    }
    let refs = vec![&reference];
    let err = gradient_check_net(&mut net, &x, &refs, seed ^ 3)?;
    println!("{:<10} max relative error {:.3e}", "full net", err);
    if err >= 1e-3 {
        return Err(Error::config(format!("full-net gradient check failed: {}", err)));
    }
    println!("all gradient checks passed");
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::GenData { common } => cmd_gen_data(common),
        Command::Train {
            common,
            data,
            alpha,
            genotype,
        } => cmd_train(common, data, *alpha, genotype.as_deref()),
        Command::Optimize {
            common,
            train_data,
            val_data,
            alpha,
        } => cmd_optimize(common, train_data, val_data, *alpha),
        Command::Evaluate { common, model, data } => cmd_evaluate(common, model, data),
        Command::Experiment { common } => cmd_experiment(common),
        Command::Report { common, rows } => cmd_report(common, rows),
        Command::ScoreMasks {
            common,
            pairs,
            spacing,
        } => cmd_score_masks(common, pairs, spacing),
        Command::GradCheck { common } => cmd_grad_check(common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            match e {
                Error::Config(_) | Error::Parse(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
