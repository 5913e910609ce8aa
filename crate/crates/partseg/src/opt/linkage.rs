//! Linkage-tree learning: UPGMA clustering of loci by pairwise mutual
//! information of gene values in a population.

use std::collections::HashMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LinkageTree {
    /// Non-root cluster sets, smallest first, used for mixing.
    pub sets: Vec<Vec<usize>>,
    /// Internal merges in the order they happened.
    pub merges: Vec<Vec<usize>>,
}

fn mutual_information(population: &[Vec<u32>], i: usize, j: usize) -> f64 {
    let n = population.len() as f64;
    let mut pi: HashMap<u32, f64> = HashMap::new();
    let mut pj: HashMap<u32, f64> = HashMap::new();
    let mut pij: HashMap<(u32, u32), f64> = HashMap::new();
    for g in population {
        *pi.entry(g[i]).or_default() += 1.0;
        *pj.entry(g[j]).or_default() += 1.0;
        *pij.entry((g[i], g[j])).or_default() += 1.0;
    }
    let mut mi = 0.0;
    for (&(a, b), &c) in &pij {
        let p = c / n;
        mi += p * (p / (pi[&a] / n * pj[&b] / n)).ln();
    }
    mi.max(0.0)
}

/// Learns a linkage tree over loci. Ties merge the lowest-index pair.
#[allow(clippy::needless_range_loop)]
pub fn learn_linkage(population: &[Vec<u32>]) -> Result<LinkageTree> {
    if population.len() < 2 {
        return Err(Error::config("learn_linkage: population size must be >= 2"));
    }
    let n = population[0].len();
    if population.iter().any(|g| g.len() != n) {
        return Err(Error::config("learn_linkage: ragged population"));
    }
    let mut mi = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = mutual_information(population, i, j);
            mi[i][j] = v;
            mi[j][i] = v;
        }
    }

    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut sets: Vec<Vec<usize>> = clusters.clone();
    let mut merges = Vec::new();
    while clusters.len() > 1 {
        // UPGMA similarity: mean pairwise MI between cluster members.
        let mut best = (0usize, 1usize);
        let mut best_sim = f64::NEG_INFINITY;
        for a in 0..clusters.len() {
            for b in (a + 1)..clusters.len() {
                let mut sum = 0.0;
                for &i in &clusters[a] {
                    for &j in &clusters[b] {
                        sum += mi[i][j];
                    }
                }
                let sim = sum / (clusters[a].len() * clusters[b].len()) as f64;
                if sim > best_sim {
                    best_sim = sim;
                    best = (a, b);
                }
            }
        }
        let (a, b) = best;
        let mut merged = clusters[a].clone();
        merged.extend(&clusters[b]);
        merged.sort_unstable();
        clusters.remove(b);
        clusters.remove(a);
        merges.push(merged.clone());
        if clusters.is_empty() {
            // merged == all loci: the root, not used for mixing.
        } else {
            sets.push(merged.clone());
        }
        clusters.push(merged);
    }
    sets.sort_by(|x, y| x.len().cmp(&y.len()).then(x.cmp(y)));
    Ok(LinkageTree { sets, merges })
}
