//! Partition genotypes: length-N categorical vectors over {1..alpha},
//! label canonicalization, and feasibility repair.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PartitionGenotype {
    pub genes: Vec<u32>,
    pub alpha: u32,
}

impl PartitionGenotype {
    pub fn new(genes: Vec<u32>, alpha: u32) -> Result<Self> {
        if alpha == 0 {
            return Err(Error::config("alpha must be >= 1"));
        }
        let g = PartitionGenotype { genes, alpha };
        g.check_range()?;
        Ok(g)
    }

    pub fn check_range(&self) -> Result<()> {
        for (i, &v) in self.genes.iter().enumerate() {
            if v < 1 || v > self.alpha {
                return Err(Error::config(format!(
                    "gene {} at position {} out of range 1..={}",
                    v, i, self.alpha
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    /// Uniform random genotype.
    pub fn random(n: usize, alpha: u32, rng: &mut ChaCha8Rng) -> Self {
        PartitionGenotype {
            genes: (0..n).map(|_| rng.gen_range(1..=alpha)).collect(),
            alpha,
        }
    }

    /// Scan indices per subset; `subsets()[i]` belongs to decoder i+1.
    pub fn subsets(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.alpha as usize];
        for (i, &v) in self.genes.iter().enumerate() {
            out[(v - 1) as usize].push(i);
        }
        out
    }

    pub fn is_feasible(&self, min_subset_size: usize) -> bool {
        self.subsets().iter().all(|s| s.len() >= min_subset_size)
    }

    pub fn to_line(&self) -> String {
        self.genes
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn from_line(line: &str, alpha: u32) -> Result<Self> {
        let genes = line
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>()
                    .map_err(|_| Error::parse(format!("bad gene token: {}", t)))
            })
            .collect::<Result<Vec<_>>>()?;
        PartitionGenotype::new(genes, alpha)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, format!("{}\n", self.to_line()))?;
        Ok(())
    }

    pub fn load(path: &Path, alpha: u32) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_line(text.trim(), alpha)
    }
}

/// Relabels subsets by order of first occurrence. Two genotypes encode the
/// same set partition iff their canonical forms are equal.
pub fn canonicalize(g: &PartitionGenotype) -> Result<PartitionGenotype> {
    g.check_range()?;
    let mut mapping = vec![0u32; g.alpha as usize + 1];
    let mut next = 0u32;
    let genes = g
        .genes
        .iter()
        .map(|&v| {
            if mapping[v as usize] == 0 {
                next += 1;
                mapping[v as usize] = next;
            }
            mapping[v as usize]
        })
        .collect();
    Ok(PartitionGenotype {
        genes,
        alpha: g.alpha,
    })
}

/// Reassigns seeded-random genes from the currently largest subset until
/// every label appears at least `min_subset_size` times. Feasible inputs
/// are returned unchanged.
pub fn repair(
    g: &PartitionGenotype,
    min_subset_size: usize,
    seed: u64,
) -> Result<PartitionGenotype> {
    g.check_range()?;
    let alpha = g.alpha as usize;
    if alpha * min_subset_size > g.len() {
        return Err(Error::config(format!(
            "cannot fit {} subsets of size >= {} into {} genes",
            alpha,
            min_subset_size,
            g.len()
        )));
    }
    let mut out = g.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut counts = vec![0usize; alpha];
        for &v in &out.genes {
            counts[(v - 1) as usize] += 1;
        }
        let Some(under) = (0..alpha).find(|&l| counts[l] < min_subset_size) else {
            break;
        };
        let largest = (0..alpha).max_by_key(|&l| (counts[l], usize::MAX - l)).unwrap();
        let candidates: Vec<usize> = out
            .genes
            .iter()
            .enumerate()
            .filter(|(_, &v)| v as usize == largest + 1)
            .map(|(i, _)| i)
            .collect();
        let pick = candidates[rng.gen_range(0..candidates.len())];
        out.genes[pick] = under as u32 + 1;
    }
    Ok(out)
}
