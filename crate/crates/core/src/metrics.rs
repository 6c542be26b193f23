//! Dice and IoU computation and per-dataset aggregation.

use std::fmt::Write as _;
use std::path::Path;

use crate::dt::BinaryMask;
use crate::error::{Error, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Threshold a probability map into a mask; pixel = 1 iff prob >= threshold.
pub fn binarize(probs: &[f32], width: usize, height: usize, threshold: f64) -> Result<BinaryMask> {
    if probs.len() != width * height {
        return Err(Error::Dim(format!(
            "binarize: {}x{} needs {} values, got {}",
            width,
            height,
            width * height,
            probs.len()
        )));
    }
    if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(&(**p as f64))) {
        return Err(Error::Contract(format!(
            "binarize: probability {bad} outside [0,1]"
        )));
    }
    let pixels = probs
        .iter()
        .map(|&p| (p as f64 >= threshold) as u8)
        .collect();
    BinaryMask::new(width, height, pixels)
}

fn overlap_counts(pred: &BinaryMask, gt: &BinaryMask) -> Result<(usize, usize, usize)> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::Dim(format!(
            "metric masks differ: {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut inter = 0;
    let mut p = 0;
    let mut g = 0;
    for (&a, &b) in pred.pixels().iter().zip(gt.pixels()) {
        p += a as usize;
        g += b as usize;
        inter += (a & b) as usize;
    }
    Ok((inter, p, g))
}

/// Dice = 2|P∩G| / (|P|+|G|); 1.0 when both masks are empty.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, p, g) = overlap_counts(pred, gt)?;
    if p + g == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (p + g) as f64)
}

/// IoU = |P∩G| / |P∪G|; 1.0 when both masks are empty.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (inter, p, g) = overlap_counts(pred, gt)?;
    let union = p + g - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Per-image and aggregate Dice/IoU scores.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub per_image: Vec<(String, f64, f64)>,
    pub mean_dice: f64,
    pub mean_iou: f64,
    pub threshold: f64,
}

impl MetricsReport {
    pub fn from_per_image(per_image: Vec<(String, f64, f64)>, threshold: f64) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::Data("metrics report over an empty split".into()));
        }
        let n = per_image.len() as f64;
        let mean_dice = per_image.iter().map(|r| r.1).sum::<f64>() / n;
        let mean_iou = per_image.iter().map(|r| r.2).sum::<f64>() / n;
        Ok(MetricsReport {
            per_image,
            mean_dice,
            mean_iou,
            threshold,
        })
    }

    /// CSV body: per-image rows then a summary row. Headers match the
    /// report's field names.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,dice,iou\n");
        for (id, d, i) in &self.per_image {
            let _ = writeln!(out, "{id},{d},{i}");
        }
        let _ = writeln!(out, "mean,{},{}", self.mean_dice, self.mean_iou);
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// Console rendering shaped like a two-row comparison grid.
    pub fn console_table(&self, label: &str) -> String {
        format!(
            "        {label:>12}\nDice    {:>12.4}\nIoU     {:>12.4}\n({} images, threshold {})\n",
            self.mean_dice,
            self.mean_iou,
            self.per_image.len(),
            self.threshold
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(w: usize, h: usize, on: &[usize]) -> BinaryMask {
        let mut px = vec![0u8; w * h];
        for &i in on {
            px[i] = 1;
        }
        BinaryMask::new(w, h, px).unwrap()
    }

    #[test]
    fn binarize_boundary_is_inclusive() {
        let m = binarize(&[0.5, 0.5, 0.5, 0.5], 2, 2, 0.5).unwrap();
        assert!(m.pixels().iter().all(|&p| p == 1));
    }

    #[test]
    fn binarize_degenerate_thresholds() {
        let probs = [0.1f32, 0.9, 0.4, 0.0];
        assert!(binarize(&probs, 2, 2, 0.0)
            .unwrap()
            .pixels()
            .iter()
            .all(|&p| p == 1));
        let probs = [0.1f32, 0.9, 0.4, 0.2];
        assert!(binarize(&probs, 2, 2, 1.0)
            .unwrap()
            .pixels()
            .iter()
            .all(|&p| p == 0));
    }

    #[test]
    fn binarize_rejects_out_of_range() {
        assert!(matches!(
            binarize(&[1.5, 0.0], 2, 1, 0.5),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn identical_masks_score_one() {
        let a = mask(3, 3, &[0, 4, 8]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_masks_score_zero() {
        let a = mask(3, 3, &[0, 1]);
        let b = mask(3, 3, &[7, 8]);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn partial_overlap_counts() {
        // pred {0,1}, gt {1,2}: overlap 1 of 2+2 pixels.
        let a = mask(3, 1, &[0, 1]);
        let b = mask(3, 1, &[1, 2]);
        assert_eq!(dice(&a, &b).unwrap(), 0.5);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn both_empty_convention_is_one() {
        let a = mask(2, 2, &[]);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = mask(2, 2, &[]);
        let b = mask(3, 2, &[]);
        assert!(dice(&a, &b).is_err());
        assert!(iou(&a, &b).is_err());
    }

    #[test]
    fn report_means_and_identity() {
        let report = MetricsReport::from_per_image(
            vec![
                ("a".into(), 1.0, 1.0),
                ("b".into(), 0.5, 1.0 / 3.0),
            ],
            0.5,
        )
        .unwrap();
        assert!((report.mean_dice - 0.75).abs() < 1e-12);
        for (_, d, i) in &report.per_image {
            assert!((i - d / (2.0 - d)).abs() < 1e-9);
        }
        let csv = report.to_csv();
        assert!(csv.starts_with("id,dice,iou\n"));
        assert!(csv.contains("mean,"));
    }

    #[test]
    fn empty_report_is_an_error() {
        assert!(MetricsReport::from_per_image(vec![], 0.5).is_err());
    }
}
