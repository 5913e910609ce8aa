//! Best-of-alpha scoring: every decoder's prediction is scored per scan,
//! the best variant by combined score is selected, and selected scores are
//! averaged over the evaluation set.

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::grid::Mask;
use crate::metrics::{
    combined_score, dice, region_scores, surface_dice, MetricConfig, Region, REGIONS,
};
use crate::nn::{batch_images, threshold_predictions, MultiPathNet};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantScores {
    pub dice: f64,
    /// Paired with MetricConfig::tolerances_mm.
    pub sdsc: Vec<f64>,
    pub combined: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionValues {
    pub region: Region,
    pub dice: f64,
    pub sdsc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanScore {
    pub scan_id: String,
    pub variants: Vec<VariantScores>,
    /// 1-based; maximizes combined score, ties to the lowest index.
    pub selected_variant: usize,
    /// 1-based argmax by DSC / by SDSC at the combined tolerance.
    pub best_by_dice: usize,
    pub best_by_sdsc: usize,
    pub selected: VariantScores,
    /// Regions of the selected variant; empty when the reference is empty.
    pub regions: Vec<RegionValues>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionAggregate {
    pub region: Region,
    pub mean_dice: f64,
    pub mean_sdsc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean_dice: f64,
    pub mean_sdsc: Vec<f64>,
    pub mean_combined: f64,
    pub regions: Vec<RegionAggregate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub schema_version: u32,
    pub tolerances_mm: Vec<f64>,
    pub per_scan: Vec<ScanScore>,
    pub aggregate: Aggregate,
}

fn score_variant(
    pred: &Mask,
    reference: &Mask,
    spacing: (f64, f64),
    cfg: &MetricConfig,
) -> Result<VariantScores> {
    Ok(VariantScores {
        dice: dice(pred, reference)?,
        sdsc: cfg
            .tolerances_mm
            .iter()
            .map(|&t| surface_dice(pred, reference, spacing, t))
            .collect::<Result<_>>()?,
        combined: combined_score(pred, reference, spacing, cfg)?,
    })
}

fn aggregate(per_scan: &[ScanScore], cfg: &MetricConfig) -> Aggregate {
    let n = per_scan.len() as f64;
    let n_tol = cfg.tolerances_mm.len();
    let mean_dice = per_scan.iter().map(|s| s.selected.dice).sum::<f64>() / n;
    let mean_sdsc: Vec<f64> = (0..n_tol)
        .map(|k| per_scan.iter().map(|s| s.selected.sdsc[k]).sum::<f64>() / n)
        .collect();
    let mean_combined = per_scan.iter().map(|s| s.selected.combined).sum::<f64>() / n;
    let regions = REGIONS
        .iter()
        .map(|&region| {
            let vals: Vec<&RegionValues> = per_scan
                .iter()
                .flat_map(|s| s.regions.iter().filter(|r| r.region == region))
                .collect();
            let m = vals.len().max(1) as f64;
            RegionAggregate {
                region,
                mean_dice: vals.iter().map(|r| r.dice).sum::<f64>() / m,
                mean_sdsc: (0..n_tol)
                    .map(|k| vals.iter().map(|r| r.sdsc[k]).sum::<f64>() / m)
                    .collect(),
            }
        })
        .collect();
    Aggregate {
        mean_dice,
        mean_sdsc,
        mean_combined,
        regions,
    }
}

/// Evaluates a trained net on a dataset: predictions thresholded at 0.5,
/// combined score per variant, best variant selected per scan.
pub fn evaluate(net: &MultiPathNet, eval_set: &Dataset, cfg: &MetricConfig) -> Result<ScoreReport> {
    if eval_set.is_empty() {
        return Err(Error::config("evaluate: empty eval_set"));
    }
    cfg.validate()?;
    let images: Vec<_> = eval_set.scans.iter().map(|s| &s.image).collect();
    let x = batch_images(&images)?;
    let preds = net.forward(&x)?;
    let variant_masks: Vec<Vec<Mask>> = preds.iter().map(threshold_predictions).collect();

    let combined_tol_idx = cfg
        .tolerances_mm
        .iter()
        .position(|&t| t == cfg.combined_tolerance_mm)
        .expect("validated");

    let mut per_scan = Vec::with_capacity(eval_set.len());
    for (si, scan) in eval_set.scans.iter().enumerate() {
        let variants: Vec<VariantScores> = variant_masks
            .iter()
            .map(|vm| score_variant(&vm[si], &scan.reference_mask, scan.spacing, cfg))
            .collect::<Result<_>>()?;
        let argmax = |key: &dyn Fn(&VariantScores) -> f64| -> usize {
            let mut best = 0;
            for (i, v) in variants.iter().enumerate() {
                if key(v) > key(&variants[best]) {
                    best = i;
                }
            }
            best
        };
        let sel = argmax(&|v: &VariantScores| v.combined);
        let regions = if scan.reference_mask.count_ones() > 0 {
            region_scores(&variant_masks[sel][si], &scan.reference_mask, scan.spacing, cfg)?
                .into_iter()
                .map(|r| RegionValues {
                    region: r.region,
                    dice: r.dice,
                    sdsc: r.sdsc,
                })
                .collect()
        } else {
            Vec::new()
        };
        per_scan.push(ScanScore {
            scan_id: scan.id.clone(),
            selected: variants[sel].clone(),
            selected_variant: sel + 1,
            best_by_dice: argmax(&|v: &VariantScores| v.dice) + 1,
            best_by_sdsc: argmax(&|v: &VariantScores| v.sdsc[combined_tol_idx]) + 1,
            variants,
            regions,
        });
    }
    let aggregate = aggregate(&per_scan, cfg);
    Ok(ScoreReport {
        schema_version: REPORT_SCHEMA_VERSION,
        tolerances_mm: cfg.tolerances_mm.clone(),
        per_scan,
        aggregate,
    })
}

/// True iff every scan's selected score in the superset report is at least
/// the subset report's. The superset report must hold the same variants per
/// scan plus extras (checked via prefix equality of combined scores).
pub fn best_of_monotonicity_check(subset: &ScoreReport, superset: &ScoreReport) -> Result<bool> {
    if subset.per_scan.len() != superset.per_scan.len() {
        return Err(Error::config("monotonicity check: mismatched scan ids"));
    }
    for (a, b) in subset.per_scan.iter().zip(&superset.per_scan) {
        if a.scan_id != b.scan_id {
            return Err(Error::config(format!(
                "monotonicity check: scan id mismatch {} vs {}",
                a.scan_id, b.scan_id
            )));
        }
        if b.variants.len() < a.variants.len() {
            return Err(Error::config(
                "monotonicity check: superset has fewer variants",
            ));
        }
        for (va, vb) in a.variants.iter().zip(&b.variants) {
            if va.combined != vb.combined {
                return Err(Error::config(
                    "monotonicity check: variant sets are not nested",
                ));
            }
        }
    }
    Ok(subset
        .per_scan
        .iter()
        .zip(&superset.per_scan)
        .all(|(a, b)| b.selected.combined >= a.selected.combined))
}

/// JSON-lines per scan, plus a one-row aggregate CSV.
pub fn write_report(report: &ScoreReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut jsonl = String::new();
    for scan in &report.per_scan {
        jsonl.push_str(&serde_json::to_string(scan).map_err(|e| Error::parse(e.to_string()))?);
        jsonl.push('\n');
    }
    fs::write(dir.join("report.jsonl"), jsonl)?;

    let agg = &report.aggregate;
    let mut header = vec!["schema_version".to_string(), "mean_dice".into()];
    let mut row = vec![report.schema_version.to_string(), format!("{:.6}", agg.mean_dice)];
    for (tol, v) in report.tolerances_mm.iter().zip(&agg.mean_sdsc) {
        header.push(format!("mean_sdsc_{}mm", tol));
        row.push(format!("{:.6}", v));
    }
    header.push("mean_combined".into());
    row.push(format!("{:.6}", agg.mean_combined));
    for r in &agg.regions {
        header.push(format!("{}_dice", r.region));
        row.push(format!("{:.6}", r.mean_dice));
        for (tol, v) in report.tolerances_mm.iter().zip(&r.mean_sdsc) {
            header.push(format!("{}_sdsc_{}mm", r.region, tol));
            row.push(format!("{:.6}", v));
        }
    }
    fs::write(
        dir.join("aggregate.csv"),
        format!("{}\n{}\n", header.join(","), row.join(",")),
    )?;
    Ok(())
}
