//! Scans, datasets, the synthetic observer-variation generator, and splits.
//!
//! Synthetic scans carry a hidden style label. Styles perturb the reference
//! mask (not the image), so the label cannot be read off the image alone;
//! it exists only as an oracle for partition-recovery checks.

pub mod io;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::grid::{Image, Mask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Validation,
    Test,
}

impl std::fmt::Display for SplitTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SplitTag::Train => write!(f, "train"),
            SplitTag::Validation => write!(f, "validation"),
            SplitTag::Test => write!(f, "test"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub id: String,
    pub image: Image,
    pub reference_mask: Mask,
    /// (row_mm, col_mm), strictly positive.
    pub spacing: (f64, f64),
    /// Synthetic ground truth; never visible to the optimizer.
    pub hidden_style: Option<u32>,
}

impl Scan {
    pub fn validate(&self) -> Result<()> {
        if !self.image.same_shape(&self.reference_mask) {
            return Err(Error::shape(format!(
                "scan {}: image {}x{} vs mask {}x{}",
                self.id,
                self.image.h(),
                self.image.w(),
                self.reference_mask.h(),
                self.reference_mask.w()
            )));
        }
        self.reference_mask
            .validate_binary()
            .map_err(|e| Error::parse(format!("scan {}: {}", self.id, e)))?;
        if self.spacing.0 <= 0.0 || self.spacing.1 <= 0.0 {
            return Err(Error::config(format!(
                "scan {}: spacing must be positive",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scans: Vec<Scan>,
    pub split_tag: SplitTag,
}

impl Dataset {
    pub fn new(scans: Vec<Scan>, split_tag: SplitTag) -> Result<Self> {
        let mut seen = HashSet::new();
        for scan in &scans {
            scan.validate()?;
            if !seen.insert(scan.id.clone()) {
                return Err(Error::parse(format!("duplicate scan id: {}", scan.id)));
            }
        }
        Ok(Dataset { scans, split_tag })
    }

    pub fn len(&self) -> usize {
        self.scans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scans.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StyleRegion {
    TopThird,
    BottomThird,
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n_scans: usize,
    pub image_size: (usize, usize),
    pub n_styles: u32,
    pub style_region: StyleRegion,
    pub style_magnitude_px: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_scans: 40,
            image_size: (32, 32),
            n_styles: 2,
            style_region: StyleRegion::TopThird,
            style_magnitude_px: 3,
            noise_sigma: 0.05,
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scans == 0 {
            return Err(Error::config("n_scans must be positive"));
        }
        if self.n_styles == 0 {
            return Err(Error::config("n_styles must be >= 1"));
        }
        if self.n_styles as usize > self.n_scans {
            return Err(Error::config(format!(
                "n_styles {} exceeds n_scans {}",
                self.n_styles, self.n_scans
            )));
        }
        let (h, w) = self.image_size;
        if h == 0 || w == 0 {
            return Err(Error::config("image_size components must be positive"));
        }
        if self.style_magnitude_px >= h.min(w) / 4 {
            return Err(Error::config(format!(
                "style_magnitude_px {} must be < min(H, W)/4 = {}",
                self.style_magnitude_px,
                h.min(w) / 4
            )));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::config("noise_sigma must be non-negative"));
        }
        Ok(())
    }
}

/// One iteration of 4-neighbor binary dilation.
fn dilate_once(m: &Mask) -> Mask {
    let mut out = m.clone();
    for r in 0..m.h() {
        for c in 0..m.w() {
            if m.get(r, c) == 1 {
                continue;
            }
            let hit = (r > 0 && m.get(r - 1, c) == 1)
                || (r + 1 < m.h() && m.get(r + 1, c) == 1)
                || (c > 0 && m.get(r, c - 1) == 1)
                || (c + 1 < m.w() && m.get(r, c + 1) == 1);
            if hit {
                out.set(r, c, 1);
            }
        }
    }
    out
}

/// One iteration of 4-neighbor binary erosion (grid edge counts as outside).
fn erode_once(m: &Mask) -> Mask {
    let mut out = m.clone();
    for r in 0..m.h() {
        for c in 0..m.w() {
            if m.get(r, c) == 0 {
                continue;
            }
            let keep = r > 0
                && m.get(r - 1, c) == 1
                && r + 1 < m.h()
                && m.get(r + 1, c) == 1
                && c > 0
                && m.get(r, c - 1) == 1
                && c + 1 < m.w()
                && m.get(r, c + 1) == 1;
            if !keep {
                out.set(r, c, 0);
            }
        }
    }
    out
}

fn morph(m: &Mask, dilate: bool, iterations: usize) -> Mask {
    let mut out = m.clone();
    for _ in 0..iterations {
        out = if dilate {
            dilate_once(&out)
        } else {
            erode_once(&out)
        };
    }
    out
}

/// Rows of the true mask's bounding box the style rule applies to.
fn style_rows(true_mask: &Mask, region: StyleRegion) -> std::ops::Range<usize> {
    let Some((rmin, rmax)) = true_mask.row_extent() else {
        return 0..0;
    };
    let extent = rmax - rmin + 1;
    let third = extent.div_ceil(3);
    match region {
        StyleRegion::TopThird => rmin..(rmin + third),
        StyleRegion::BottomThird => (rmax + 1 - third)..(rmax + 1),
        StyleRegion::Full => rmin..(rmax + 1),
    }
}

/// Applies style `k` to the true object mask: dilate for odd k, erode for
/// even k, by the configured magnitude, restricted to the region rows.
pub fn apply_style(true_mask: &Mask, style: u32, cfg: &GeneratorConfig) -> Mask {
    if cfg.style_magnitude_px == 0 {
        return true_mask.clone();
    }
    let shifted = morph(true_mask, style % 2 == 1, cfg.style_magnitude_px);
    let rows = style_rows(true_mask, cfg.style_region);
    let mut out = true_mask.clone();
    for r in rows {
        for c in 0..true_mask.w() {
            out.set(r, c, shifted.get(r, c));
        }
    }
    out
}

/// Random ellipse blob with low-frequency radial boundary jitter.
fn random_blob(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Mask {
    let hf = h as f64;
    let cy = hf / 2.0 + rng.gen_range(-hf / 8.0..=hf / 8.0);
    let cx = w as f64 / 2.0 + rng.gen_range(-hf / 8.0..=hf / 8.0);
    let ry = rng.gen_range(hf / 6.0..=hf / 3.0);
    let rx = rng.gen_range(hf / 6.0..=hf / 3.0);
    let amps: Vec<f64> = (0..3).map(|_| rng.gen_range(-0.08..=0.08)).collect();
    let phases: Vec<f64> = (0..3)
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let mut mask = Mask::new(h, w);
    for r in 0..h {
        for c in 0..w {
            let dy = (r as f64 - cy) / ry;
            let dx = (c as f64 - cx) / rx;
            let rho = (dx * dx + dy * dy).sqrt();
            let theta = dy.atan2(dx);
            let jitter: f64 = amps
                .iter()
                .zip(&phases)
                .enumerate()
                .map(|(k, (a, p))| a * ((k + 1) as f64 * theta + p).cos())
                .sum();
            if rho <= 1.0 + jitter {
                mask.set(r, c, 1);
            }
        }
    }
    mask
}

/// Box-Muller gaussian sample.
fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Generates the dataset together with each scan's unstyled true mask.
pub fn generate_with_truth(cfg: &GeneratorConfig) -> Result<(Dataset, Vec<Mask>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (h, w) = cfg.image_size;

    // Balanced style assignment: round-robin labels, shuffled.
    let mut styles: Vec<u32> = (0..cfg.n_scans)
        .map(|i| (i as u32 % cfg.n_styles) + 1)
        .collect();
    styles.shuffle(&mut rng);

    let mut scans = Vec::with_capacity(cfg.n_scans);
    let mut truths = Vec::with_capacity(cfg.n_scans);
    for (i, &style) in styles.iter().enumerate() {
        let true_mask = random_blob(h, w, &mut rng);
        let mut image = Image::new(h, w);
        for r in 0..h {
            for c in 0..w {
                let base = if true_mask.get(r, c) == 1 { 0.8 } else { 0.2 };
                let v = base + cfg.noise_sigma * gaussian(&mut rng);
                image.set(r, c, v.clamp(0.0, 1.0));
            }
        }
        let reference_mask = apply_style(&true_mask, style, cfg);
        scans.push(Scan {
            id: format!("scan_{:04}", i),
            image,
            reference_mask,
            spacing: (1.0, 1.0),
            hidden_style: Some(style),
        });
        truths.push(true_mask);
    }
    Ok((Dataset::new(scans, SplitTag::Train)?, truths))
}

pub fn generate_synthetic(cfg: &GeneratorConfig) -> Result<Dataset> {
    Ok(generate_with_truth(cfg)?.0)
}

/// Stratified split into (train, validation, test).
///
/// Scans are grouped by hidden style (absent styles form one group), each
/// group is allocated by largest remainder, so per-style counts deviate
/// from proportionality by at most one scan per split.
pub fn split_dataset(
    d: &Dataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let fr = [fractions.0, fractions.1, fractions.2];
    if fr.iter().any(|&f| f <= 0.0) {
        return Err(Error::config("split fractions must be positive"));
    }
    if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::config("split fractions must sum to 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Group indices by style, preserving dataset order within each group.
    let mut groups: Vec<(Option<u32>, Vec<usize>)> = Vec::new();
    for (i, scan) in d.scans.iter().enumerate() {
        match groups.iter_mut().find(|(s, _)| *s == scan.hidden_style) {
            Some((_, idxs)) => idxs.push(i),
            None => groups.push((scan.hidden_style, vec![i])),
        }
    }
    groups.sort_by_key(|(s, _)| *s);

    let mut parts: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (_, mut idxs) in groups {
        idxs.shuffle(&mut rng);
        let n = idxs.len();
        let exact: Vec<f64> = fr.iter().map(|f| f * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            (exact[b] - counts[b] as f64)
                .partial_cmp(&(exact[a] - counts[a] as f64))
                .unwrap()
                .then(a.cmp(&b))
        });
        let mut rem = n - counts.iter().sum::<usize>();
        for &k in &order {
            if rem == 0 {
                break;
            }
            counts[k] += 1;
            rem -= 1;
        }
        let mut offset = 0;
        for k in 0..3 {
            parts[k].extend(&idxs[offset..offset + counts[k]]);
            offset += counts[k];
        }
    }

    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config("a split would be empty"));
    }
    let tags = [SplitTag::Train, SplitTag::Validation, SplitTag::Test];
    let mut out = Vec::with_capacity(3);
    for (idxs, tag) in parts.iter_mut().zip(tags) {
        idxs.sort_unstable();
        let scans = idxs.iter().map(|&i| d.scans[i].clone()).collect();
        out.push(Dataset::new(scans, tag)?);
    }
    let mut it = out.into_iter();
    Ok((it.next().unwrap(), it.next().unwrap(), it.next().unwrap()))
}
