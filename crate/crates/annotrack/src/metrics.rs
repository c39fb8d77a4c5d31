//! IoU, the IoU-to-quality mapping, and annotation-set evaluation.
//!
//! The quality map turns an IoU into a signed reliability score that is zero
//! exactly at IoU 0.5, which is also the failure threshold used at
//! inference: scores above zero mean "mostly reliable".

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::store::{AnnotationRecord, BBox, Source};

/// Parameters of the IoU-to-quality map; defaults 50 and 2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QualityMapParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for QualityMapParams {
    fn default() -> Self {
        QualityMapParams { alpha: 50.0, beta: 2.0 }
    }
}

impl QualityMapParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::invalid("quality map alpha must be > 0"));
        }
        if !(self.beta >= 1.0) {
            return Err(Error::invalid("quality map beta must be >= 1"));
        }
        Ok(())
    }
}

/// Intersection over union of two boxes; 0 when disjoint, 1 iff identical.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let iy = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Map an IoU in [0, 1] to a signed quality target:
///
/// ```text
/// g = a^(1/b) * (iou - 0.5) / (1 + a * (iou - 0.5)^b)^(1/b)
/// ```
///
/// Strictly increasing, zero exactly at 0.5, and for even `b` odd about 0.5.
pub fn quality_from_iou(iou: f64, p: &QualityMapParams) -> f64 {
    let u = iou - 0.5;
    if u == 0.0 {
        return 0.0;
    }
    let num = p.alpha.powf(1.0 / p.beta) * u;
    let den = (1.0 + p.alpha * u.abs().powf(p.beta)).powf(1.0 / p.beta);
    num / den
}

/// Aggregate accuracy of a finished annotation set against ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Mean IoU over accepted automatic frames (forward/backward sources).
    pub miou: f64,
    /// threshold -> fraction of accepted automatic frames with IoU above it.
    pub acc_at: BTreeMap<String, f64>,
    /// Fraction of accepted automatic frames with IoU < 0.5.
    pub err_rate: f64,
    /// (manual + failure frames) / frame_count.
    pub manual_fraction: f64,
    /// 1 - manual_fraction.
    pub labor_reduction: f64,
    pub automatic_frames: usize,
    pub frame_count: usize,
}

pub const DEFAULT_ACC_THRESHOLDS: [f64; 2] = [0.5, 0.7];

pub fn threshold_key(t: f64) -> String {
    format!("acc@{t}")
}

/// Evaluate a finished annotation set.
///
/// Manual and failure frames are excluded from the accuracy numbers and
/// counted as human labor instead.
pub fn evaluate(
    annotations: &[AnnotationRecord],
    ground_truth: &BTreeMap<usize, BBox>,
    acc_thresholds: &[f64],
) -> Result<EvalReport> {
    let frame_count = annotations.len();
    let mut ious = Vec::new();
    let mut human = 0usize;
    for rec in annotations {
        match rec.source {
            Source::Manual | Source::Failure => human += 1,
            Source::Forward | Source::Backward => {
                let gt = ground_truth
                    .get(&rec.frame_idx)
                    .ok_or_else(|| Error::invalid(format!("missing ground truth for frame {}", rec.frame_idx)))?;
                let b = rec
                    .box_
                    .as_ref()
                    .ok_or_else(|| Error::invalid(format!("frame {}: automatic record without box", rec.frame_idx)))?;
                ious.push(iou(b, gt));
            }
        }
    }
    let manual_fraction = if frame_count == 0 { 0.0 } else { human as f64 / frame_count as f64 };
    Ok(report_from_ious(&ious, manual_fraction, frame_count, acc_thresholds))
}

/// Assemble a report from raw per-frame IoUs of the accepted automatic
/// frames. Shared by [`evaluate`] and the ablation table builder.
pub fn report_from_ious(
    ious: &[f64],
    manual_fraction: f64,
    frame_count: usize,
    acc_thresholds: &[f64],
) -> EvalReport {
    let n = ious.len();
    let miou = if n == 0 { 0.0 } else { ious.iter().sum::<f64>() / n as f64 };
    let mut acc_at = BTreeMap::new();
    for &t in acc_thresholds {
        let frac = if n == 0 {
            0.0
        } else {
            ious.iter().filter(|&&v| v > t).count() as f64 / n as f64
        };
        acc_at.insert(threshold_key(t), frac);
    }
    let err_rate = if n == 0 {
        0.0
    } else {
        ious.iter().filter(|&&v| v < 0.5).count() as f64 / n as f64
    };
    EvalReport {
        miou,
        acc_at,
        err_rate,
        manual_fraction,
        labor_reduction: 1.0 - manual_fraction,
        automatic_frames: n,
        frame_count,
    }
}

impl EvalReport {
    /// Flat `key value` text form, one entry per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("miou {:.6}\n", self.miou));
        for (k, v) in &self.acc_at {
            s.push_str(&format!("{k} {v:.6}\n"));
        }
        s.push_str(&format!("err_rate {:.6}\n", self.err_rate));
        s.push_str(&format!("manual_fraction {:.6}\n", self.manual_fraction));
        s.push_str(&format!("labor_reduction {:.6}\n", self.labor_reduction));
        s.push_str(&format!("automatic_frames {}\n", self.automatic_frames));
        s.push_str(&format!("frame_count {}\n", self.frame_count));
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::AnnotationRecord;

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn iou_identity_disjoint_partial() {
        let a = bb(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bb(5.0, 5.0, 6.0, 6.0)), 0.0);
        let b = bb(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(iou(&a, &b), iou(&b, &a));
    }

    #[test]
    fn quality_map_anchor_values() {
        let p = QualityMapParams::default();
        assert_eq!(quality_from_iou(0.5, &p), 0.0);
        // sqrt(50)*0.5 / sqrt(1 + 50*0.25)
        assert!((quality_from_iou(1.0, &p) - 0.96225).abs() < 1e-5);
        // sqrt(50)*0.2 / sqrt(1 + 50*0.04)
        assert!((quality_from_iou(0.7, &p) - 0.81650).abs() < 1e-5);
    }

    #[test]
    fn quality_map_monotone_and_odd() {
        let p = QualityMapParams::default();
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            let g = quality_from_iou(x, &p);
            assert!(g > prev);
            prev = g;
            let mirrored = quality_from_iou(1.0 - x, &p);
            assert!((g + mirrored).abs() < 1e-9, "not odd at {x}");
        }
    }

    #[test]
    fn perfect_annotations_score_one() {
        let gt: BTreeMap<usize, BBox> = (0..4).map(|i| (i, bb(0.0, 0.0, 10.0, 10.0))).collect();
        let records: Vec<AnnotationRecord> = (0..4)
            .map(|i| AnnotationRecord {
                frame_idx: i,
                source: if i == 0 { Source::Manual } else { Source::Forward },
                box_: Some(bb(0.0, 0.0, 10.0, 10.0)),
                quality: if i == 0 { None } else { Some(0.9) },
            })
            .collect();
        let r = evaluate(&records, &gt, &DEFAULT_ACC_THRESHOLDS).unwrap();
        assert_eq!(r.miou, 1.0);
        assert_eq!(r.acc_at["acc@0.5"], 1.0);
        assert_eq!(r.acc_at["acc@0.7"], 1.0);
        assert_eq!(r.err_rate, 0.0);
    }

    #[test]
    fn published_labor_accounting() {
        // manual 3.3% + failures 2.7% -> 94.0% labor reduction
        let r = report_from_ious(&[], 0.033 + 0.027, 1000, &DEFAULT_ACC_THRESHOLDS);
        assert!((r.labor_reduction - 0.94).abs() <= 0.0005);
    }

    #[test]
    fn missing_ground_truth_errors() {
        let gt = BTreeMap::new();
        let records = vec![AnnotationRecord {
            frame_idx: 0,
            source: Source::Forward,
            box_: Some(bb(0.0, 0.0, 1.0, 1.0)),
            quality: Some(0.5),
        }];
        assert!(evaluate(&records, &gt, &DEFAULT_ACC_THRESHOLDS).is_err());
    }
}
