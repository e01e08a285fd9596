//! Box placement from anchor ratios.
//!
//! A keypoint at `(x, y)` inside box `(x1, y1, x2, y2)` has anchor ratios
//! `((x2 - x) / (x2 - x1), (y2 - y) / (y2 - y1))`. A box is placed on a later
//! frame by minimizing the squared change of every matched keypoint's ratios.

use crate::geometry::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlacementMethod {
    Optimized,
    /// Shifted by the mean keypoint displacement, box size kept.
    Translation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Placement {
    pub bbox: BBox,
    pub objective: f64,
    pub method: PlacementMethod,
}

/// Anchor ratios of `points` relative to `bbox`. `None` for a degenerate box
/// or an empty point set.
pub fn anchor_ratios(bbox: &BBox, points: &[(f64, f64)]) -> Option<Vec<(f64, f64)>> {
    let (w, h) = (bbox.width(), bbox.height());
    if points.is_empty() || !(w > 0.0 && h > 0.0) {
        return None;
    }
    Some(points.iter().map(|&(x, y)| ((bbox.x2 - x) / w, (bbox.y2 - y) / h)).collect())
}

pub fn anchor_objective(bbox: &BBox, anchors: &[(f64, f64)], points: &[(f64, f64)]) -> f64 {
    let (w, h) = (bbox.width(), bbox.height());
    anchors
        .iter()
        .zip(points)
        .map(|(&(ax, ay), &(x, y))| ((bbox.x2 - x) / w - ax).powi(2) + ((bbox.y2 - y) / h - ay).powi(2))
        .sum()
}

/// One axis of the objective in center / log-size form:
/// `r_k = 1/2 + (c - x_k) / e^s - a_k`.
fn axis_cost(c: f64, s: f64, anchors: &[f64], coords: &[f64]) -> f64 {
    let inv = (-s).exp();
    anchors.iter().zip(coords).map(|(a, x)| (0.5 + (c - x) * inv - a).powi(2)).sum()
}

/// Levenberg-Marquardt on one axis. The two axes of the objective are
/// independent, so each is fitted on its own.
fn fit_axis(c0: f64, s0: f64, anchors: &[f64], coords: &[f64], iterations: usize, tolerance: f64) -> (f64, f64) {
    let (mut c, mut s) = (c0, s0);
    let mut cost = axis_cost(c, s, anchors, coords);
    let mut lambda = 1e-3;
    for _ in 0..iterations {
        if cost <= 1e-30 {
            break;
        }
        let inv = (-s).exp();
        let (mut h00, mut h01, mut h11, mut g0, mut g1) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (a, x) in anchors.iter().zip(coords) {
            let r = 0.5 + (c - x) * inv - a;
            let jc = inv;
            let js = -(c - x) * inv;
            h00 += jc * jc;
            h01 += jc * js;
            h11 += js * js;
            g0 += jc * r;
            g1 += js * r;
        }
        let mut accepted = None;
        while lambda < 1e12 {
            let a00 = h00 + lambda * (h00 + 1e-12);
            let a11 = h11 + lambda * (h11 + 1e-12);
            let det = a00 * a11 - h01 * h01;
            if det.abs() > 0.0 && det.is_finite() {
                let dc = -(a11 * g0 - h01 * g1) / det;
                let ds = -(a00 * g1 - h01 * g0) / det;
                let next = axis_cost(c + dc, s + ds, anchors, coords);
                if next.is_finite() && next < cost {
                    accepted = Some((dc, ds, next));
                    lambda = (lambda * 0.1).max(1e-15);
                    break;
                }
            }
            lambda *= 10.0;
        }
        let Some((dc, ds, next)) = accepted else { break };
        c += dc;
        s += ds;
        cost = next;
        if dc.abs() <= tolerance * (1.0 + c.abs()) && ds.abs() <= tolerance * (1.0 + s.abs()) {
            break;
        }
    }
    (c, s)
}

/// Place `source` on a new frame given the anchors of keypoints on the
/// source frame and the positions of their matches.
///
/// With fewer than `min_keypoints` matches, or when the fit does not yield a
/// finite box, the source box is translated by the mean displacement.
pub fn place_box(
    source: &BBox,
    anchors: &[(f64, f64)],
    from: &[(f64, f64)],
    to: &[(f64, f64)],
    min_keypoints: usize,
    iterations: usize,
    tolerance: f64,
) -> Placement {
    let translated = || {
        let n = from.len().max(1) as f64;
        let dx = from.iter().zip(to).map(|(a, b)| b.0 - a.0).sum::<f64>() / n;
        let dy = from.iter().zip(to).map(|(a, b)| b.1 - a.1).sum::<f64>() / n;
        let bbox = source.translate(dx, dy);
        Placement {
            bbox,
            objective: anchor_objective(&bbox, anchors, to),
            method: PlacementMethod::Translation,
        }
    };
    if to.len() < min_keypoints.max(2) || source.width() <= 0.0 || source.height() <= 0.0 {
        return translated();
    }
    let (cx0, cy0) = source.center();
    let ax: Vec<f64> = anchors.iter().map(|a| a.0).collect();
    let ay: Vec<f64> = anchors.iter().map(|a| a.1).collect();
    let xs: Vec<f64> = to.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = to.iter().map(|p| p.1).collect();
    let (cx, sx) = fit_axis(cx0, source.width().ln(), &ax, &xs, iterations, tolerance);
    let (cy, sy) = fit_axis(cy0, source.height().ln(), &ay, &ys, iterations, tolerance);
    let (w, h) = (sx.exp(), sy.exp());
    let bbox = BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0);
    if !bbox.is_valid() || !(w > 0.0 && h > 0.0) || w > 1e7 || h > 1e7 {
        return translated();
    }
    Placement {
        bbox,
        objective: anchor_objective(&bbox, anchors, to),
        method: PlacementMethod::Optimized,
    }
}
