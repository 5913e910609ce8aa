//! Dice and surface Dice with millimetre tolerances, the combined objective,
//! and base/mid/apex row-band breakdowns.
//!
//! Surfaces are boundary pixel centers under 4-connectivity; a pixel is on
//! the boundary when it is set and at least one 4-neighbor is outside the
//! mask (the grid edge counts as outside). Nearest distances use the brute
//! force scan for grids up to 64x64 and an exact feature transform above
//! that; both evaluate the same spacing-scaled Euclidean formula.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Mask;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricConfig {
    pub tolerances_mm: Vec<f64>,
    pub combined_tolerance_mm: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            tolerances_mm: vec![2.0, 4.0],
            combined_tolerance_mm: 2.0,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tolerances_mm.iter().any(|&t| t <= 0.0) {
            return Err(Error::config("tolerances_mm must be positive"));
        }
        if !self.tolerances_mm.contains(&self.combined_tolerance_mm) {
            return Err(Error::config(
                "combined_tolerance_mm must be one of tolerances_mm",
            ));
        }
        Ok(())
    }
}

fn check_dims(pred: &Mask, reference: &Mask) -> Result<()> {
    if !pred.same_shape(reference) {
        return Err(Error::shape(format!(
            "pred {}x{} vs ref {}x{}",
            pred.h(),
            pred.w(),
            reference.h(),
            reference.w()
        )));
    }
    Ok(())
}

/// 2|A∩B| / (|A|+|B|); 1.0 when both masks are empty.
pub fn dice(pred: &Mask, reference: &Mask) -> Result<f64> {
    check_dims(pred, reference)?;
    let mut inter = 0usize;
    let mut total = 0usize;
    for (p, r) in pred.data().iter().zip(reference.data()) {
        inter += (*p == 1 && *r == 1) as usize;
        total += (*p == 1) as usize + (*r == 1) as usize;
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Boundary pixels (row, col) of a mask under 4-connectivity.
pub fn boundary_pixels(mask: &Mask) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for r in 0..mask.h() {
        for c in 0..mask.w() {
            if mask.get(r, c) != 1 {
                continue;
            }
            let outside = r == 0
                || mask.get(r - 1, c) == 0
                || r + 1 == mask.h()
                || mask.get(r + 1, c) == 0
                || c == 0
                || mask.get(r, c - 1) == 0
                || c + 1 == mask.w()
                || mask.get(r, c + 1) == 0;
            if outside {
                out.push((r, c));
            }
        }
    }
    out
}

#[inline]
fn sq_dist(a: (usize, usize), b: (usize, usize), spacing: (f64, f64)) -> f64 {
    let dr = (a.0 as f64 - b.0 as f64) * spacing.0;
    let dc = (a.1 as f64 - b.1 as f64) * spacing.1;
    dr * dr + dc * dc
}

/// For each query pixel, squared distance to the nearest site pixel.
fn nearest_sq_brute(
    queries: &[(usize, usize)],
    sites: &[(usize, usize)],
    spacing: (f64, f64),
) -> Vec<f64> {
    queries
        .iter()
        .map(|&q| {
            sites
                .iter()
                .map(|&s| sq_dist(q, s, spacing))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Exact Euclidean feature transform: nearest site per grid pixel.
///
/// Pass 1 finds, per column, the nearest site row. Pass 2 runs the lower
/// envelope of parabolas per row, tracking the winning column, so the final
/// distance can be recomputed with the same formula as the brute force.
#[allow(clippy::needless_range_loop)]
fn nearest_sq_feature_transform(
    h: usize,
    w: usize,
    queries: &[(usize, usize)],
    sites: &[(usize, usize)],
    spacing: (f64, f64),
) -> Vec<f64> {
    let mut nearest_row = vec![vec![usize::MAX; w]; h];
    let mut site_rows: Vec<Vec<usize>> = vec![Vec::new(); w];
    for &(r, c) in sites {
        site_rows[c].push(r);
    }
    for c in 0..w {
        if site_rows[c].is_empty() {
            continue;
        }
        for r in 0..h {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for &sr in &site_rows[c] {
                let d = (r as f64 - sr as f64).abs();
                if d < best_d {
                    best_d = d;
                    best = sr;
                }
            }
            nearest_row[r][c] = best;
        }
    }
    // Per row: site (nearest_row[r][c], c) for each occupied column c.
    let mut result_site = vec![vec![(usize::MAX, usize::MAX); w]; h];
    let sr2 = spacing.0 * spacing.0;
    for r in 0..h {
        let cols: Vec<usize> = (0..w).filter(|&c| nearest_row[r][c] != usize::MAX).collect();
        if cols.is_empty() {
            continue;
        }
        let f = |c: usize| -> f64 {
            let dr = r as f64 - nearest_row[r][c] as f64;
            dr * dr * sr2
        };
        // Lower envelope of g_c(x) = f(c) + ((x-c)*spacing.1)^2.
        let sc2 = spacing.1 * spacing.1;
        let mut v: Vec<usize> = vec![cols[0]];
        let mut z: Vec<f64> = vec![f64::NEG_INFINITY, f64::INFINITY];
        for &q in &cols[1..] {
            loop {
                let p = *v.last().unwrap();
                let s = (f(q) + (q * q) as f64 * sc2 - f(p) - (p * p) as f64 * sc2)
                    / (2.0 * sc2 * (q as f64 - p as f64));
                if s <= z[v.len() - 1] && v.len() > 1 {
                    v.pop();
                    z.pop();
                } else {
                    *z.last_mut().unwrap() = s;
                    z.push(f64::INFINITY);
                    v.push(q);
                    break;
                }
            }
        }
        let mut k = 0;
        for x in 0..w {
            while z[k + 1] < x as f64 {
                k += 1;
            }
            let c = v[k];
            result_site[r][x] = (nearest_row[r][c], c);
        }
    }
    queries
        .iter()
        .map(|&(r, c)| {
            let site = result_site[r][c];
            if site.0 == usize::MAX {
                f64::INFINITY
            } else {
                sq_dist((r, c), site, spacing)
            }
        })
        .collect()
}

fn nearest_sq(
    h: usize,
    w: usize,
    queries: &[(usize, usize)],
    sites: &[(usize, usize)],
    spacing: (f64, f64),
) -> Vec<f64> {
    if sites.is_empty() {
        return vec![f64::INFINITY; queries.len()];
    }
    if h <= 64 && w <= 64 {
        nearest_sq_brute(queries, sites, spacing)
    } else {
        nearest_sq_feature_transform(h, w, queries, sites, spacing)
    }
}

/// Symmetric surface Dice at tolerance `tau_mm`.
pub fn surface_dice(pred: &Mask, reference: &Mask, spacing: (f64, f64), tau_mm: f64) -> Result<f64> {
    check_dims(pred, reference)?;
    if tau_mm <= 0.0 {
        return Err(Error::config("tau_mm must be positive"));
    }
    let bp = boundary_pixels(pred);
    let br = boundary_pixels(reference);
    match (bp.is_empty(), br.is_empty()) {
        (true, true) => return Ok(1.0),
        (true, false) | (false, true) => return Ok(0.0),
        _ => {}
    }
    let tau_sq = tau_mm * tau_mm;
    let (h, w) = (pred.h(), pred.w());
    let within = |ds: Vec<f64>| ds.into_iter().filter(|&d| d <= tau_sq).count();
    let hits = within(nearest_sq(h, w, &bp, &br, spacing))
        + within(nearest_sq(h, w, &br, &bp, spacing));
    Ok(hits as f64 / (bp.len() + br.len()) as f64)
}

/// (DSC + SDSC at the combined tolerance) / 2.
pub fn combined_score(
    pred: &Mask,
    reference: &Mask,
    spacing: (f64, f64),
    cfg: &MetricConfig,
) -> Result<f64> {
    let d = dice(pred, reference)?;
    let s = surface_dice(pred, reference, spacing, cfg.combined_tolerance_mm)?;
    Ok((d + s) / 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Base,
    Mid,
    Apex,
}

pub const REGIONS: [Region; 3] = [Region::Base, Region::Mid, Region::Apex];

impl std::fmt::Display for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Region::Base => write!(f, "base"),
            Region::Mid => write!(f, "mid"),
            Region::Apex => write!(f, "apex"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionSplit {
    pub region: Region,
    /// Half-open row interval.
    pub row_range: std::ops::Range<usize>,
}

/// Splits the reference mask's row bounding extent into base/mid/apex bands.
/// Surplus rows go to base first, then mid.
pub fn region_split(reference: &Mask) -> Result<[RegionSplit; 3]> {
    let (rmin, rmax) = reference
        .row_extent()
        .ok_or_else(|| Error::config("region_split: empty reference mask"))?;
    let extent = rmax - rmin + 1;
    let rem = extent % 3;
    let base = extent / 3 + usize::from(rem >= 1);
    let mid = extent / 3 + usize::from(rem >= 2);
    let b0 = rmin;
    let b1 = b0 + base;
    let b2 = b1 + mid;
    Ok([
        RegionSplit {
            region: Region::Base,
            row_range: b0..b1,
        },
        RegionSplit {
            region: Region::Mid,
            row_range: b1..b2,
        },
        RegionSplit {
            region: Region::Apex,
            row_range: b2..(rmax + 1),
        },
    ])
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionScores {
    pub region: Region,
    pub dice: f64,
    /// Paired with MetricConfig::tolerances_mm.
    pub sdsc: Vec<f64>,
}

/// Per-region metrics: both masks restricted to each band's rows.
pub fn region_scores(
    pred: &Mask,
    reference: &Mask,
    spacing: (f64, f64),
    cfg: &MetricConfig,
) -> Result<Vec<RegionScores>> {
    let splits = region_split(reference)?;
    splits
        .into_iter()
        .map(|split| {
            let p = pred.crop_rows(split.row_range.clone());
            let r = reference.crop_rows(split.row_range.clone());
            Ok(RegionScores {
                region: split.region,
                dice: dice(&p, &r)?,
                sdsc: cfg
                    .tolerances_mm
                    .iter()
                    .map(|&t| surface_dice(&p, &r, spacing, t))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mask_from(rows: &[&str]) -> Mask {
        let h = rows.len();
        let w = rows[0].len();
        let mut m = Mask::new(h, w);
        for (r, row) in rows.iter().enumerate() {
            for (c, ch) in row.chars().enumerate() {
                if ch == '1' {
                    m.set(r, c, 1);
                }
            }
        }
        m
    }

    fn square(h: usize, w: usize, r0: usize, c0: usize, size: usize) -> Mask {
        let mut m = Mask::new(h, w);
        for r in r0..r0 + size {
            for c in c0..c0 + size {
                m.set(r, c, 1);
            }
        }
        m
    }

    // Independent O(n^2) oracle: pairwise distances over boundary sets
    // extracted by a separate routine.
    pub fn surface_dice_oracle(pred: &Mask, reference: &Mask, spacing: (f64, f64), tau: f64) -> f64 {
        let bound = |m: &Mask| -> Vec<(f64, f64)> {
            let mut pts = Vec::new();
            for r in 0..m.h() {
                for c in 0..m.w() {
                    if m.get(r, c) != 1 {
                        continue;
                    }
                    let nb = [
                        (r as i64 - 1, c as i64),
                        (r as i64 + 1, c as i64),
                        (r as i64, c as i64 - 1),
                        (r as i64, c as i64 + 1),
                    ];
                    let exposed = nb.iter().any(|&(rr, cc)| {
                        rr < 0
                            || cc < 0
                            || rr >= m.h() as i64
                            || cc >= m.w() as i64
                            || m.get(rr as usize, cc as usize) == 0
                    });
                    if exposed {
                        pts.push((r as f64 * spacing.0, c as f64 * spacing.1));
                    }
                }
            }
            pts
        };
        let a = bound(pred);
        let b = bound(reference);
        if a.is_empty() && b.is_empty() {
            return 1.0;
        }
        if a.is_empty() || b.is_empty() {
            return 0.0;
        }
        let close = |from: &[(f64, f64)], to: &[(f64, f64)]| {
            from.iter()
                .filter(|p| {
                    to.iter()
                        .map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt())
                        .fold(f64::INFINITY, f64::min)
                        <= tau
                })
                .count()
        };
        (close(&a, &b) + close(&b, &a)) as f64 / (a.len() + b.len()) as f64
    }

    pub fn random_mask(h: usize, w: usize, rng: &mut ChaCha8Rng) -> Mask {
        let mut m = Mask::new(h, w);
        let density: f64 = rng.gen_range(0.1..0.9);
        for r in 0..h {
            for c in 0..w {
                if rng.gen_bool(density) {
                    m.set(r, c, 1);
                }
            }
        }
        m
    }

    #[test]
    fn dice_basics() {
        let a = square(8, 8, 1, 1, 3);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = square(8, 8, 5, 5, 2);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let p = mask_from(&["1100", "0000"]);
        let r = mask_from(&["0110", "0000"]);
        assert_eq!(dice(&p, &r).unwrap(), 0.5);
        let empty = Mask::new(4, 4);
        assert_eq!(dice(&empty, &empty).unwrap(), 1.0);
    }

    #[test]
    fn dice_dimension_mismatch() {
        let a = Mask::new(4, 4);
        let b = Mask::new(4, 5);
        assert!(dice(&a, &b).is_err());
    }

    #[test]
    fn surface_dice_identity_and_empty() {
        let a = square(8, 8, 2, 2, 3);
        assert_eq!(surface_dice(&a, &a, (1.0, 1.0), 0.1).unwrap(), 1.0);
        let empty = Mask::new(8, 8);
        assert_eq!(surface_dice(&empty, &empty, (1.0, 1.0), 1.0).unwrap(), 1.0);
        assert_eq!(surface_dice(&a, &empty, (1.0, 1.0), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn shifted_square_tolerances() {
        let a = square(8, 8, 2, 2, 3);
        let b = square(8, 8, 2, 3, 3);
        assert_eq!(surface_dice(&a, &b, (1.0, 1.0), 1.0).unwrap(), 1.0);
        // Frozen from the pairwise-distance oracle.
        let frozen = surface_dice_oracle(&a, &b, (1.0, 1.0), 0.5);
        assert_eq!(frozen, 0.5);
        assert_eq!(surface_dice(&a, &b, (1.0, 1.0), 0.5).unwrap(), frozen);
    }

    #[test]
    fn matches_oracle_on_random_masks() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let h = rng.gen_range(1..=16);
            let w = rng.gen_range(1..=16);
            let p = random_mask(h, w, &mut rng);
            let r = random_mask(h, w, &mut rng);
            let spacing = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
            for tau in [0.5, 1.0, 2.0, 4.0] {
                let got = surface_dice(&p, &r, spacing, tau).unwrap();
                let want = surface_dice_oracle(&p, &r, spacing, tau);
                assert!((got - want).abs() < 1e-9, "got {} want {}", got, want);
            }
        }
    }

    #[test]
    fn feature_transform_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let h = rng.gen_range(2..=20);
            let w = rng.gen_range(2..=20);
            let m = random_mask(h, w, &mut rng);
            let sites = boundary_pixels(&m);
            if sites.is_empty() {
                continue;
            }
            let queries: Vec<(usize, usize)> = (0..h)
                .flat_map(|r| (0..w).map(move |c| (r, c)))
                .collect();
            let spacing = (rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0));
            let brute = nearest_sq_brute(&queries, &sites, spacing);
            let ft = nearest_sq_feature_transform(h, w, &queries, &sites, spacing);
            for (a, b) in brute.iter().zip(&ft) {
                assert!((a - b).abs() < 1e-12, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn combined_score_arithmetic() {
        let a = square(8, 8, 2, 2, 3);
        let cfg = MetricConfig::default();
        assert_eq!(combined_score(&a, &a, (1.0, 1.0), &cfg).unwrap(), 1.0);
        let empty = Mask::new(8, 8);
        assert_eq!(combined_score(&empty, &empty, (1.0, 1.0), &cfg).unwrap(), 1.0);
    }

    #[test]
    fn region_split_band_sizes() {
        let nine = square(16, 16, 0, 2, 9);
        let splits = region_split(&nine).unwrap();
        let sizes: Vec<usize> = splits.iter().map(|s| s.row_range.len()).collect();
        assert_eq!(sizes, vec![3, 3, 3]);

        let mut ten = square(16, 16, 0, 2, 9);
        for c in 2..11 {
            ten.set(9, c, 1);
        }
        let splits = region_split(&ten).unwrap();
        let sizes: Vec<usize> = splits.iter().map(|s| s.row_range.len()).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        assert_eq!(splits[0].region, Region::Base);
        assert_eq!(splits[2].region, Region::Apex);

        assert!(region_split(&Mask::new(4, 4)).is_err());
    }

    #[test]
    fn metric_config_validation() {
        assert!(MetricConfig::default().validate().is_ok());
        let bad = MetricConfig {
            tolerances_mm: vec![4.0],
            combined_tolerance_mm: 2.0,
        };
        assert!(bad.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dice_and_sdsc_are_symmetric(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = rng.gen_range(1..=12);
            let w = rng.gen_range(1..=12);
            let a = random_mask(h, w, &mut rng);
            let b = random_mask(h, w, &mut rng);
            prop_assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            let s1 = surface_dice(&a, &b, (1.0, 1.5), 1.0).unwrap();
            let s2 = surface_dice(&b, &a, (1.0, 1.5), 1.0).unwrap();
            prop_assert_eq!(s1, s2);
        }

        #[test]
        fn sdsc_monotone_in_tau(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = rng.gen_range(1..=12);
            let w = rng.gen_range(1..=12);
            let a = random_mask(h, w, &mut rng);
            let b = random_mask(h, w, &mut rng);
            let mut prev = 0.0;
            for tau in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
                let s = surface_dice(&a, &b, (1.0, 1.0), tau).unwrap();
                prop_assert!(s >= prev);
                prev = s;
            }
        }

        #[test]
        fn self_scores_are_one(seed in 0u64..10_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = rng.gen_range(2..=12);
            let w = rng.gen_range(2..=12);
            let mut a = random_mask(h, w, &mut rng);
            a.set(0, 0, 1); // nonempty
            prop_assert_eq!(dice(&a, &a).unwrap(), 1.0);
            prop_assert_eq!(surface_dice(&a, &a, (0.7, 1.3), 0.01).unwrap(), 1.0);
        }
    }

    #[test]
    fn grid_from_vec_shape_check() {
        assert!(Grid::<u8>::from_vec(2, 2, vec![0, 1, 1]).is_err());
    }
}
