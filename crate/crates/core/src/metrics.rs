//! Per-frame accuracy for the three query types and per-video averages.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QueryType {
    Classification,
    Counting,
    Detection,
}

impl QueryType {
    pub const ALL: [QueryType; 3] = [QueryType::Classification, QueryType::Counting, QueryType::Detection];
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryType::Classification => "binary_classification",
            QueryType::Counting => "counting",
            QueryType::Detection => "detection",
        })
    }
}

impl FromStr for QueryType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "binary_classification" | "classification" | "binary" => Ok(QueryType::Classification),
            "counting" | "count" => Ok(QueryType::Counting),
            "detection" | "detect" => Ok(QueryType::Detection),
            other => Err(format!("unknown query type '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    pub query_type: QueryType,
    pub per_frame: Vec<f64>,
    pub average: f64,
    /// Share of frames the detector ran on, when known.
    pub invoked_fraction: Option<f64>,
}

impl AccuracyReport {
    fn new(query_type: QueryType, per_frame: Vec<f64>) -> Self {
        let average = if per_frame.is_empty() {
            1.0
        } else {
            per_frame.iter().sum::<f64>() / per_frame.len() as f64
        };
        AccuracyReport {
            query_type,
            per_frame,
            average,
            invoked_fraction: None,
        }
    }
}

fn same_range(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::RangeMismatch(a, b));
    }
    Ok(())
}

pub fn binary_accuracy(pred: &[bool], truth: &[bool]) -> Result<AccuracyReport> {
    same_range(pred.len(), truth.len())?;
    let per_frame = pred.iter().zip(truth).map(|(p, t)| (p == t) as u8 as f64).collect();
    Ok(AccuracyReport::new(QueryType::Classification, per_frame))
}

/// `1 - |returned - correct| / max(correct, 1)`, floored at 0.
pub fn count_frame_accuracy(returned: u32, correct: u32) -> f64 {
    let diff = (returned as f64 - correct as f64).abs();
    (1.0 - diff / (correct.max(1) as f64)).max(0.0)
}

pub fn count_accuracy(pred: &[u32], truth: &[u32]) -> Result<AccuracyReport> {
    same_range(pred.len(), truth.len())?;
    let per_frame = pred.iter().zip(truth).map(|(&p, &t)| count_frame_accuracy(p, t)).collect();
    Ok(AccuracyReport::new(QueryType::Counting, per_frame))
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    a.iou(b)
}

/// Single-class average precision of scored boxes against truth boxes.
///
/// Predictions are matched greedily in descending score order to the
/// unmatched truth box of highest IOU at or above the threshold. AP is the
/// area under the precision envelope over all recall points. Empty truth
/// scores 1 with no predictions and 0 otherwise.
pub fn average_precision(pred: &[(BBox, f64)], truth: &[BBox], iou_threshold: f64) -> f64 {
    if truth.is_empty() {
        return if pred.is_empty() { 1.0 } else { 0.0 };
    }
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].1.total_cmp(&pred[a].1));
    let mut taken = vec![false; truth.len()];
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(pred.len());
    for (rank, &i) in order.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (t, tb) in truth.iter().enumerate() {
            if taken[t] {
                continue;
            }
            let v = pred[i].0.iou(tb);
            if v >= iou_threshold && best.map_or(true, |(bv, _)| v > bv) {
                best = Some((v, t));
            }
        }
        if let Some((_, t)) = best {
            taken[t] = true;
            tp += 1;
        }
        points.push((tp as f64 / truth.len() as f64, tp as f64 / (rank + 1) as f64));
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for k in 0..points.len() {
        let (recall, _) = points[k];
        if recall > prev_recall {
            let envelope = points[k..].iter().map(|p| p.1).fold(0.0, f64::max);
            ap += (recall - prev_recall) * envelope;
            prev_recall = recall;
        }
    }
    ap
}

pub fn detection_accuracy(
    pred: &[Vec<(BBox, f64)>],
    truth: &[Vec<BBox>],
    iou_threshold: f64,
) -> Result<AccuracyReport> {
    same_range(pred.len(), truth.len())?;
    let per_frame = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| average_precision(p, t, iou_threshold))
        .collect();
    Ok(AccuracyReport::new(QueryType::Detection, per_frame))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binary_examples() {
        let t = [true, false, true, true, false, false, true, false, true, true];
        assert_eq!(binary_accuracy(&t, &t).unwrap().average, 1.0);
        let c: Vec<bool> = t.iter().map(|v| !v).collect();
        assert_eq!(binary_accuracy(&c, &t).unwrap().average, 0.0);
        let mut nine = t;
        nine[3] = !nine[3];
        assert!((binary_accuracy(&nine, &t).unwrap().average - 0.9).abs() < 1e-12);
        assert!(matches!(binary_accuracy(&t[..3], &t), Err(Error::RangeMismatch(3, 10))));
    }

    #[test]
    fn count_examples() {
        assert!((count_frame_accuracy(9, 10) - 0.9).abs() < 1e-12);
        assert_eq!(count_frame_accuracy(0, 0), 1.0);
        assert_eq!(count_frame_accuracy(3, 0), 0.0);
        assert_eq!(count_frame_accuracy(25, 10), 0.0);
        assert!(count_accuracy(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn iou_examples() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &BBox::new(20.0, 20.0, 30.0, 30.0)), 0.0);
        assert!((iou(&a, &BBox::new(5.0, 0.0, 15.0, 10.0)) - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn ap_examples() {
        let t1 = BBox::new(0.0, 0.0, 10.0, 10.0);
        let t2 = BBox::new(50.0, 50.0, 60.0, 60.0);
        assert_eq!(average_precision(&[(t1, 0.9), (t2, 0.8)], &[t1, t2], 0.5), 1.0);
        assert_eq!(average_precision(&[], &[t1], 0.5), 0.0);
        // Recall reaches 1/2 at precision 1, then stays: AP = 0.5.
        assert!((average_precision(&[(t1, 0.9)], &[t1, t2], 0.5) - 0.5).abs() < 1e-12);
        assert_eq!(average_precision(&[], &[], 0.5), 1.0);
        assert_eq!(average_precision(&[(t1, 0.9)], &[], 0.5), 0.0);
        // A false positive ranked first halves the precision of the hit.
        let fp = BBox::new(100.0, 100.0, 110.0, 110.0);
        assert!((average_precision(&[(fp, 0.95), (t1, 0.9)], &[t1], 0.5) - 0.5).abs() < 1e-12);
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (0.0f64..100.0, 0.0f64..100.0, 1.0f64..50.0, 1.0f64..50.0).prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h))
    }

    proptest! {
        #[test]
        fn metrics_bounded_and_identity(
            boxes in proptest::collection::vec(proptest::collection::vec(arb_box(), 0..4), 1..6),
            counts in proptest::collection::vec((0u32..10, 0u32..10), 1..20),
        ) {
            let scored: Vec<Vec<(BBox, f64)>> = boxes.iter().map(|f| f.iter().map(|b| (*b, 1.0)).collect()).collect();
            prop_assert_eq!(detection_accuracy(&scored, &boxes, 0.5).unwrap().average, 1.0);
            let shifted: Vec<Vec<(BBox, f64)>> = boxes.iter().map(|f| f.iter().map(|b| (b.translate(7.0, 3.0), 0.5)).collect()).collect();
            let r = detection_accuracy(&shifted, &boxes, 0.5).unwrap();
            prop_assert!(r.per_frame.iter().all(|v| (0.0..=1.0).contains(v)));
            let (p, t): (Vec<u32>, Vec<u32>) = counts.into_iter().unzip();
            prop_assert_eq!(count_accuracy(&t, &t).unwrap().average, 1.0);
            let r = count_accuracy(&p, &t).unwrap();
            prop_assert!(r.per_frame.iter().all(|v| (0.0..=1.0).contains(v)));
            let bp: Vec<bool> = p.iter().map(|&v| v > 0).collect();
            prop_assert_eq!(binary_accuracy(&bp, &bp).unwrap().average, 1.0);
        }
    }
}
