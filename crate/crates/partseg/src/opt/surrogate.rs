//! k-NN fitness surrogate over the evaluation archive.

use crate::error::{Error, Result};
use crate::opt::cache::FitnessRecord;
use crate::opt::genotype::PartitionGenotype;

fn hamming(a: &[u32], b: &[u32]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Distance-weighted mean of the k nearest archive fitnesses under Hamming
/// distance on canonical genes. Zero distance returns the archived value
/// exactly.
pub fn predict_fitness(
    candidate: &PartitionGenotype,
    archive: &[FitnessRecord],
    k: usize,
) -> Result<f64> {
    if archive.is_empty() {
        return Err(Error::config("surrogate: empty archive"));
    }
    if k == 0 {
        return Err(Error::config("surrogate: k must be >= 1"));
    }
    let mut dists: Vec<(usize, f64)> = archive
        .iter()
        .map(|r| (hamming(&candidate.genes, &r.canonical_genes), r.fitness))
        .collect();
    dists.sort_by_key(|a| a.0);
    dists.truncate(k);
    if dists[0].0 == 0 {
        return Ok(dists[0].1);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (d, f) in dists {
        let w = 1.0 / d as f64;
        num += w * f;
        den += w;
    }
    Ok(num / den)
}

/// Keeps the top `screen_fraction` of candidates by predicted fitness for
/// true evaluation. A fraction of 1 returns the input unchanged.
pub fn surrogate_screen(
    candidates: &[PartitionGenotype],
    archive: &[FitnessRecord],
    k: usize,
    screen_fraction: f64,
) -> Result<Vec<PartitionGenotype>> {
    if candidates.is_empty() {
        return Err(Error::config("surrogate: empty candidate list"));
    }
    if !(screen_fraction > 0.0 && screen_fraction <= 1.0) {
        return Err(Error::config("surrogate: screen_fraction must be in (0, 1]"));
    }
    if screen_fraction == 1.0 {
        return Ok(candidates.to_vec());
    }
    let mut scored: Vec<(usize, f64)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| Ok((i, predict_fitness(c, archive, k)?)))
        .collect::<Result<_>>()?;
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let keep = ((candidates.len() as f64 * screen_fraction).ceil() as usize).max(1);
    scored.truncate(keep);
    Ok(scored.into_iter().map(|(i, _)| candidates[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn record(genes: Vec<u32>, fitness: f64) -> FitnessRecord {
        FitnessRecord {
            canonical_genes: genes,
            fitness,
            eval_seed: 0,
            wall_time_s: 0.0,
            report_path: None,
        }
    }

    fn geno(genes: Vec<u32>, alpha: u32) -> PartitionGenotype {
        PartitionGenotype::new(genes, alpha).unwrap()
    }

    #[test]
    fn zero_distance_is_exact() {
        let archive = vec![record(vec![1, 2, 1], 0.7), record(vec![2, 1, 2], 0.3)];
        let p = predict_fitness(&geno(vec![1, 2, 1], 2), &archive, 2).unwrap();
        assert_eq!(p, 0.7);
    }

    #[test]
    fn full_fraction_is_identity() {
        let archive = vec![record(vec![1, 2], 0.5)];
        let cands = vec![geno(vec![1, 1], 2), geno(vec![2, 2], 2)];
        let out = surrogate_screen(&cands, &archive, 1, 1.0).unwrap();
        assert_eq!(out, cands);
    }

    #[test]
    fn empty_candidates_error() {
        let archive = vec![record(vec![1], 0.5)];
        assert!(surrogate_screen(&[], &archive, 1, 0.5).is_err());
    }

    #[test]
    fn rank_correlation_on_hidden_vector_objective() {
        let n = 15;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hidden: Vec<u32> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
        let fitness = |g: &[u32]| {
            g.iter().zip(&hidden).filter(|(a, b)| a == b).count() as f64 / n as f64
        };
        let archive: Vec<FitnessRecord> = (0..200)
            .map(|_| {
                let genes: Vec<u32> = (0..n).map(|_| rng.gen_range(1..=3)).collect();
                let f = fitness(&genes);
                record(genes, f)
            })
            .collect();
        let candidates: Vec<Vec<u32>> = (0..100)
            .map(|_| (0..n).map(|_| rng.gen_range(1..=3)).collect())
            .collect();
        let predicted: Vec<f64> = candidates
            .iter()
            .map(|c| predict_fitness(&geno(c.clone(), 3), &archive, 5).unwrap())
            .collect();
        let truth: Vec<f64> = candidates.iter().map(|c| fitness(c)).collect();

        // Spearman rank correlation.
        let ranks = |v: &[f64]| -> Vec<f64> {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).unwrap());
            let mut r = vec![0.0; v.len()];
            for (rank, &i) in idx.iter().enumerate() {
                r[i] = rank as f64;
            }
            r
        };
        let rp = ranks(&predicted);
        let rt = ranks(&truth);
        let mean = (rp.len() - 1) as f64 / 2.0;
        let mut num = 0.0;
        let mut dp = 0.0;
        let mut dt = 0.0;
        for i in 0..rp.len() {
            num += (rp[i] - mean) * (rt[i] - mean);
            dp += (rp[i] - mean).powi(2);
            dt += (rt[i] - mean).powi(2);
        }
        let spearman = num / (dp.sqrt() * dt.sqrt());
        assert!(spearman > 0.5, "spearman {}", spearman);
    }
}
