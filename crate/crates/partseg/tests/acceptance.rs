//! Acceptance gate: one test per release criterion, each printing a
//! single PASS/FAIL line. Criteria 5-7 share one experiment run.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use partseg::dataset::{generate_synthetic, GeneratorConfig};
use partseg::error::{Error, Result};
use partseg::eval::{best_of_monotonicity_check, evaluate, write_report};
use partseg::experiment::{run_experiment, Condition, ExperimentConfig, ResultRow};
use partseg::grid::Mask;
use partseg::metrics::{surface_dice, MetricConfig, Region};
use partseg::nn::gradcheck::{gradient_check, gradient_check_net, Scalarizer};
use partseg::nn::net::build_decoder;
use partseg::nn::train::{params_hash, Trainer};
use partseg::nn::{MultiPathNet, OperatorGraph, Tensor, TrainConfig};
use partseg::opt::cache::{FitnessCache, FitnessRecord, Objective};
use partseg::opt::{
    canonicalize, optimize, Algorithm, ClosureObjective, OptimizerConfig, PartitionGenotype,
};

fn verdict(criterion: usize, name: &str, ok: bool) {
    println!(
        "[acceptance {}] {}: {}",
        criterion,
        name,
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "acceptance criterion {} ({}) failed", criterion, name);
}

// ---------------------------------------------------------------------------
// 1. Metric oracle equivalence
// ---------------------------------------------------------------------------

/// Independent O(n^2) pairwise-distance surface-Dice oracle.
fn surface_dice_oracle(pred: &Mask, reference: &Mask, spacing: (f64, f64), tau: f64) -> f64 {
    let boundary = |m: &Mask| -> Vec<(f64, f64)> {
        let mut pts = Vec::new();
        for r in 0..m.h() {
            for c in 0..m.w() {
                if m.get(r, c) != 1 {
                    continue;
                }
                let outside = r == 0
                    || m.get(r - 1, c) == 0
                    || r + 1 == m.h()
                    || m.get(r + 1, c) == 0
                    || c == 0
                    || m.get(r, c - 1) == 0
                    || c + 1 == m.w()
                    || m.get(r, c + 1) == 0;
                if outside {
                    pts.push((r as f64 * spacing.0, c as f64 * spacing.1));
                }
            }
        }
        pts
    };
    let sp = boundary(pred);
    let sr = boundary(reference);
    if sp.is_empty() && sr.is_empty() {
        return 1.0;
    }
    if sp.is_empty() || sr.is_empty() {
        return 0.0;
    }
    let within = |from: &[(f64, f64)], to: &[(f64, f64)]| -> usize {
        from.iter()
            .filter(|a| {
                to.iter()
                    .map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt())
                    .fold(f64::INFINITY, f64::min)
                    <= tau
            })
            .count()
    };
    (within(&sp, &sr) + within(&sr, &sp)) as f64 / (sp.len() + sr.len()) as f64
}

#[test]
fn criterion_1_metric_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACC1);
    let mut ok = true;
    for _ in 0..1000 {
        let h = rng.gen_range(1..=16);
        let w = rng.gen_range(1..=16);
        let density = rng.gen_range(0.1..0.9);
        let mut make = |density: f64| {
            let mut m = Mask::new(h, w);
            for r in 0..h {
                for c in 0..w {
                    if rng.gen_bool(density) {
                        m.set(r, c, 1);
                    }
                }
            }
            m
        };
        let pred = make(density);
        let reference = make(density);
        let spacing = (rng.gen_range(0.5..=2.0), rng.gen_range(0.5..=2.0));
        for tau in [0.5, 1.0, 2.0, 4.0] {
            let fast = surface_dice(&pred, &reference, spacing, tau).unwrap();
            let slow = surface_dice_oracle(&pred, &reference, spacing, tau);
            if (fast - slow).abs() > 1e-9 {
                eprintln!(
                    "mismatch: {}x{} spacing {:?} tau {}: {} vs {}",
                    h, w, spacing, tau, fast, slow
                );
                ok = false;
            }
        }
    }
    verdict(1, "surface dice matches brute-force oracle within 1e-9", ok);
}

// ---------------------------------------------------------------------------
// 2. Gradient correctness
// ---------------------------------------------------------------------------

fn random_tensor(n: usize, c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(n, c, h, w);
    t.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    t
}

fn random_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Mask {
    let mut m = Mask::new(h, w);
    for r in 0..h {
        for c in 0..w {
            if rng.gen_bool(0.4) {
                m.set(r, c, 1);
            }
        }
    }
    m
}

#[test]
fn criterion_2_gradient_correctness() {
    let mut ok = true;
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(101).wrapping_add(7));
        let input = random_tensor(1, 2, 6, 6, &mut rng);

        // Each operator type, individually and in small compositions.
        let mut single_op_graphs: Vec<(OperatorGraph, &str)> = Vec::new();
        let mut g = OperatorGraph::new();
        let x = g.add_input("x");
        let c = g.add_conv("conv", x, 2, 3, 3, 1, 1);
        g.set_output(c);
        single_op_graphs.push((g, "conv"));

        let mut g = OperatorGraph::new();
        let x = g.add_input("x");
        let r = g.add_relu("relu", x);
        g.set_output(r);
        single_op_graphs.push((g, "relu"));

        let mut g = OperatorGraph::new();
        let x = g.add_input("x");
        let s = g.add_sigmoid("sigmoid", x);
        g.set_output(s);
        single_op_graphs.push((g, "sigmoid"));

        let mut g = OperatorGraph::new();
        let x = g.add_input("x");
        let u = g.add_upsample2x("up", x);
        g.set_output(u);
        single_op_graphs.push((g, "upsample2x"));

        let mut g = OperatorGraph::new();
        let x = g.add_input("x");
        let c1 = g.add_conv("c1", x, 2, 2, 1, 1, 0);
        let cat = g.add_concat("cat", c1, x);
        g.set_output(cat);
        single_op_graphs.push((g, "concat"));

        let mut g = OperatorGraph::new();
        let x = g.add_input("x");
        let c1 = g.add_conv("c1", x, 2, 2, 3, 1, 1);
        let sum = g.add_add("add", c1, x);
        g.set_output(sum);
        single_op_graphs.push((g, "add"));

        for (mut graph, name) in single_op_graphs {
            graph.init_params(&mut rng);
            let err = gradient_check(
                &mut graph,
                &[&input],
                &Scalarizer::WeightedSum(seed ^ 0x55),
                seed,
            )
            .unwrap();
            if err >= 1e-4 {
                eprintln!("seed {} op {}: err {}", seed, name, err);
                ok = false;
            }
        }

        // Decoder composition with the real soft-Dice loss.
        let mut dec = build_decoder("dec");
        dec.init_params(&mut rng);
        let feat = random_tensor(1, 16, 4, 4, &mut rng);
        let skip = random_tensor(1, 8, 16, 16, &mut rng);
        let refs = [random_mask(16, 16, &mut rng)];
        let refs: Vec<&Mask> = refs.iter().collect();
        let err = gradient_check(&mut dec, &[&feat, &skip], &Scalarizer::SoftDice(refs), seed)
            .unwrap();
        if err >= 1e-4 {
            eprintln!("seed {}: decoder err {}", seed, err);
            ok = false;
        }

        // Full two-path network.
        let mut net = MultiPathNet::new(2, seed).unwrap();
        let x = random_tensor(1, 1, 16, 16, &mut rng);
        let refs = [random_mask(16, 16, &mut rng)];
        let refs: Vec<&Mask> = refs.iter().collect();
        let err = gradient_check_net(&mut net, &x, &refs, seed).unwrap();
        if err >= 1e-3 {
            eprintln!("seed {}: full net err {}", seed, err);
            ok = false;
        }
    }
    verdict(
        2,
        "gradients < 1e-4 per operator and < 1e-3 full net over 5 seeds",
        ok,
    );
}

// ---------------------------------------------------------------------------
// 3. Update-scope over randomized training steps
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_update_scope() {
    let alpha = 3;
    let cfg = GeneratorConfig {
        n_scans: 8,
        seed: 31,
        ..GeneratorConfig::default()
    };
    let dataset = generate_synthetic(&cfg).unwrap();
    let mut net = MultiPathNet::new(alpha, 99).unwrap();
    let mut trainer = Trainer::new(&net, TrainConfig::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut ok = true;
    for step in 0..100 {
        let i = rng.gen_range(0..alpha);
        let n = rng.gen_range(1..=4usize);
        let idxs: Vec<usize> = (0..n).map(|_| rng.gen_range(0..dataset.len())).collect();
        let images: Vec<_> = idxs.iter().map(|&j| &dataset.scans[j].image).collect();
        let refs: Vec<_> = idxs
            .iter()
            .map(|&j| &dataset.scans[j].reference_mask)
            .collect();

        let before: Vec<Vec<Vec<f64>>> = net
            .decoders
            .iter()
            .map(|d| d.params.iter().map(|p| p.data.clone()).collect())
            .collect();
        let enc_before = params_hash(&net.encoder);

        trainer.step(&mut net, i, &images, &refs).unwrap();

        for (j, d) in net.decoders.iter().enumerate() {
            let unchanged = d
                .params
                .iter()
                .zip(&before[j])
                .all(|(p, b)| p.data == *b);
            if j == i && unchanged {
                eprintln!("step {}: selected decoder {} did not change", step, i);
                ok = false;
            }
            if j != i && !unchanged {
                eprintln!("step {}: decoder {} changed while {} selected", step, j, i);
                ok = false;
            }
        }
        let grad_nonzero = net
            .encoder
            .params
            .iter()
            .any(|p| p.grad.iter().any(|&g| g != 0.0));
        if grad_nonzero && params_hash(&net.encoder) == enc_before {
            eprintln!("step {}: encoder unchanged despite nonzero gradient", step);
            ok = false;
        }
    }
    verdict(
        3,
        "100 steps: untouched decoders bit-identical, encoder updates",
        ok,
    );
}

// ---------------------------------------------------------------------------
// 4. Optimizer sanity on the hidden-vector objective
// ---------------------------------------------------------------------------

fn hidden_vector(n: usize, alpha: u32, seed: u64) -> Vec<u32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(1..=alpha)).collect()
}

fn hidden_cfg(algorithm: Algorithm, budget: usize, seed: u64) -> OptimizerConfig {
    OptimizerConfig {
        algorithm,
        eval_budget: budget,
        n_genes: 20,
        alpha: 3,
        min_subset_size: 1,
        seed,
        ..OptimizerConfig::default()
    }
}

fn best_at(history: &[partseg::opt::HistoryEntry], evals: usize) -> f64 {
    history
        .iter()
        .filter(|h| h.eval_index <= evals)
        .map(|h| h.best_so_far)
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn criterion_4_optimizer_sanity() {
    let mut solved = 0;
    let mut gom_at_500 = Vec::new();
    let mut rand_at_500 = Vec::new();
    for seed in 0..10u64 {
        let target = hidden_vector(20, 3, 1000 + seed);
        let objective = {
            let target = target.clone();
            ClosureObjective(move |g: &PartitionGenotype| {
                g.genes
                    .iter()
                    .zip(&target)
                    .filter(|(a, b)| a == b)
                    .count() as f64
                    / target.len() as f64
            })
        };
        let result = optimize(&hidden_cfg(Algorithm::GomEa, 2000, seed), objective).unwrap();
        if result.best_fitness == 1.0 {
            solved += 1;
        }
        gom_at_500.push(best_at(&result.history, 500));

        let objective = {
            let target = target.clone();
            ClosureObjective(move |g: &PartitionGenotype| {
                g.genes
                    .iter()
                    .zip(&target)
                    .filter(|(a, b)| a == b)
                    .count() as f64
                    / target.len() as f64
            })
        };
        let result =
            optimize(&hidden_cfg(Algorithm::RandomSearch, 500, seed), objective).unwrap();
        rand_at_500.push(result.best_fitness);
    }
    let gom_mean = gom_at_500.iter().sum::<f64>() / 10.0;
    let rand_mean = rand_at_500.iter().sum::<f64>() / 10.0;
    let ok = solved >= 9 && gom_mean > rand_mean;
    if !ok {
        eprintln!(
            "solved {}/10, gom@500 {:.4}, random@500 {:.4}",
            solved, gom_mean, rand_mean
        );
    }
    verdict(
        4,
        "hidden vector solved >= 9/10 at 2000 evals; beats random at 500",
        ok,
    );
}

// ---------------------------------------------------------------------------
// 5-7. Shared planted-partition experiment run
// ---------------------------------------------------------------------------

struct SharedRun {
    rows: Vec<ResultRow>,
    _dir: tempfile::TempDir,
}

fn shared_run() -> &'static SharedRun {
    static RUN: OnceLock<SharedRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            alphas: vec![2],
            n_repeats: 3,
            output_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::acceptance_default()
        };
        let rows = run_experiment(&cfg).unwrap();
        SharedRun { rows, _dir: dir }
    })
}

fn repeat_pairs(rows: &[ResultRow]) -> Vec<(&ResultRow, &ResultRow)> {
    rows.iter()
        .filter(|r| r.condition == Condition::Optimized)
        .map(|opt| {
            let base = rows
                .iter()
                .find(|b| {
                    b.condition == Condition::NoPartitioning
                        && b.alpha == opt.alpha
                        && b.repeat == opt.repeat
                })
                .expect("matched baseline row");
            (base, opt)
        })
        .collect()
}

#[test]
fn criterion_5_planted_partition_recovery() {
    let run = shared_run();
    let recoveries: Vec<f64> = run
        .rows
        .iter()
        .filter(|r| r.condition == Condition::Optimized)
        .map(|r| r.recovery.expect("synthetic data has hidden styles"))
        .collect();
    let hits = recoveries.iter().filter(|&&r| r >= 0.9).count();
    let ok = recoveries.len() == 3 && hits >= 2;
    if !ok {
        eprintln!("recoveries: {:?}", recoveries);
    }
    verdict(5, "partition recovery >= 0.9 in >= 2/3 repeats", ok);
}

#[test]
fn criterion_6_directional_improvement() {
    let run = shared_run();
    let deltas: Vec<f64> = repeat_pairs(&run.rows)
        .iter()
        .map(|(base, opt)| opt.combined - base.combined)
        .collect();
    let hits = deltas.iter().filter(|&&d| d >= 0.02).count();
    let ok = deltas.len() == 3 && hits >= 2;
    if !ok {
        eprintln!("combined-score deltas: {:?}", deltas);
    }
    verdict(
        6,
        "optimized beats baseline combined score by >= 0.02 in >= 2/3 repeats",
        ok,
    );
}

#[test]
fn criterion_7_localized_improvement() {
    let run = shared_run();
    let region_sdsc2 = |row: &ResultRow, region: Region| -> f64 {
        row.regions
            .iter()
            .find(|r| r.region == region)
            .expect("region aggregate")
            .mean_sdsc[0]
    };
    let mut hits = 0;
    let pairs = repeat_pairs(&run.rows);
    for (base, opt) in &pairs {
        let imp = |region| {
            let b = region_sdsc2(base, region);
            let o = region_sdsc2(opt, region);
            100.0 * (o - b) / b
        };
        let base_imp = imp(Region::Base);
        let mid_imp = imp(Region::Mid);
        if base_imp > mid_imp {
            hits += 1;
        } else {
            eprintln!(
                "repeat {}: base improvement {:.3}% <= mid {:.3}%",
                opt.repeat, base_imp, mid_imp
            );
        }
    }
    let ok = pairs.len() == 3 && hits >= 2;
    verdict(
        7,
        "base-region SDSC-2mm gain exceeds mid-region in >= 2/3 repeats",
        ok,
    );
}

// ---------------------------------------------------------------------------
// 8. Exact invariants
// ---------------------------------------------------------------------------

/// Objective with canonicalizing normalization and an evaluation counter.
struct CountingObjective {
    calls: usize,
}

impl Objective for CountingObjective {
    fn normalize(&self, g: &PartitionGenotype) -> Result<PartitionGenotype> {
        canonicalize(g)
    }
    fn compute(&mut self, g: &PartitionGenotype) -> Result<(f64, FitnessRecord)> {
        self.calls += 1;
        let fitness = g.genes.iter().map(|&v| v as f64).sum::<f64>();
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

#[test]
fn criterion_8_exact_invariants() {
    let mut ok = true;

    // Canonicalization symmetry: label-permuted genotypes hit one entry.
    let mut cache = FitnessCache::new(CountingObjective { calls: 0 }, 100).unwrap();
    let a = PartitionGenotype::new(vec![1, 1, 2, 2, 3], 3).unwrap();
    let b = PartitionGenotype::new(vec![3, 3, 1, 1, 2], 3).unwrap();
    let fa = cache.evaluate(&a).unwrap();
    let fb = cache.evaluate(&b).unwrap();
    if fa != fb || cache.true_evals() != 1 || cache.objective_mut().calls != 1 {
        eprintln!("cache symmetry violated: {} vs {}", fa, fb);
        ok = false;
    }

    // Budget accounting: exactly `budget` true evaluations, then an error;
    // cached lookups stay free.
    let mut cache = FitnessCache::new(CountingObjective { calls: 0 }, 5).unwrap();
    // k leading 2s: canonically distinct for every k.
    let prefix_genotype = |k: usize| {
        let genes: Vec<u32> = (0..6).map(|i| if i < k { 2 } else { 1 }).collect();
        PartitionGenotype::new(genes, 2).unwrap()
    };
    for k in 0..5 {
        cache.evaluate(&prefix_genotype(k)).unwrap();
    }
    if cache.evaluate(&prefix_genotype(0)).is_err() {
        eprintln!("cached lookup consumed budget");
        ok = false;
    }
    let fresh = prefix_genotype(5);
    match cache.evaluate(&fresh) {
        Err(Error::BudgetExhausted) => {}
        other => {
            eprintln!("expected budget exhaustion, got {:?}", other.map(|_| ()));
            ok = false;
        }
    }
    if cache.true_evals() != 5 {
        eprintln!("true_evals {} != 5", cache.true_evals());
        ok = false;
    }

    // Best-of superset monotonicity on genuinely nested variant sets.
    let data = generate_synthetic(&GeneratorConfig {
        n_scans: 6,
        seed: 88,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let superset_net = MultiPathNet::new(2, 7).unwrap();
    let mut subset_net = MultiPathNet::new(1, 8).unwrap();
    for (pi, p) in superset_net.encoder.params.iter().enumerate() {
        subset_net.encoder.params[pi].data = p.data.clone();
    }
    for (pi, p) in superset_net.decoders[0].params.iter().enumerate() {
        subset_net.decoders[0].params[pi].data = p.data.clone();
    }
    let mcfg = MetricConfig::default();
    let sub = evaluate(&subset_net, &data, &mcfg).unwrap();
    let sup = evaluate(&superset_net, &data, &mcfg).unwrap();
    match best_of_monotonicity_check(&sub, &sup) {
        Ok(true) => {}
        other => {
            eprintln!("monotonicity check: {:?}", other);
            ok = false;
        }
    }

    // Report determinism: byte-identical files for identical inputs.
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    write_report(&sup, d1.path()).unwrap();
    write_report(&sup, d2.path()).unwrap();
    for f in ["report.jsonl", "aggregate.csv"] {
        if std::fs::read(d1.path().join(f)).unwrap() != std::fs::read(d2.path().join(f)).unwrap()
        {
            eprintln!("report file {} not deterministic", f);
            ok = false;
        }
    }

    verdict(
        8,
        "cache symmetry, budget accounting, monotonicity, report determinism",
        ok,
    );
}
