use super::{Anchors, BBox};

/// Anchor shape ratio gate.
pub const ANCHOR_RATIO_LIMIT: f64 = 4.0;

/// One (anchor, cell) responsible for a ground-truth box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Positive {
    pub anchor: usize,
    pub cell_x: usize,
    pub cell_y: usize,
    pub class_id: usize,
    /// Ground truth in grid units: centre relative to the cell's corner,
    /// size as a multiple of the grid spacing.
    pub target: [f64; 4],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleTargets {
    pub grid: usize,
    pub positives: Vec<Positive>,
    /// `[A, grid, grid]` row-major, 1 where some anchor is responsible.
    pub objectness: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Targets {
    pub scales: Vec<ScaleTargets>,
    /// Ground truths skipped as degenerate or matched by no anchor.
    pub warnings: usize,
}

impl Targets {
    pub fn num_positives(&self) -> usize {
        self.scales.iter().map(|s| s.positives.len()).sum()
    }
}

/// Matches every box to the anchors whose shape ratio is below the limit,
/// at the box's own cell and the nearest horizontal and vertical neighbour.
pub fn assign_targets(gt: &[(usize, BBox)], anchors: &Anchors, grids: &[usize]) -> Targets {
    let mut warnings = 0;
    let mut scales: Vec<ScaleTargets> = grids
        .iter()
        .map(|&n| ScaleTargets { grid: n, positives: Vec::new(), objectness: vec![0.0; anchors.per_scale() * n * n] })
        .collect();
    for &(class_id, b) in gt {
        if !(b.is_valid() && b.w.is_finite() && b.h.is_finite() && b.cy.is_finite()) {
            warnings += 1;
            continue;
        }
        let mut matched = false;
        for (st, scale_anchors) in scales.iter_mut().zip(&anchors.scales) {
            let n = st.grid;
            let nf = n as f64;
            let (gx, gy) = (b.cx * nf, b.cy * nf);
            let ci = (gx.floor() as isize).clamp(0, n as isize - 1);
            let cj = (gy.floor() as isize).clamp(0, n as isize - 1);
            let (fx, fy) = (gx - ci as f64, gy - cj as f64);
            let nx = if fx < 0.5 { ci - 1 } else { ci + 1 };
            let ny = if fy < 0.5 { cj - 1 } else { cj + 1 };
            let mut cells = vec![(ci, cj)];
            if (0..n as isize).contains(&nx) {
                cells.push((nx, cj));
            }
            if (0..n as isize).contains(&ny) {
                cells.push((ci, ny));
            }
            for (a, &(aw, ah)) in scale_anchors.iter().enumerate() {
                let r = (b.w / aw).max(aw / b.w).max((b.h / ah).max(ah / b.h));
                if r >= ANCHOR_RATIO_LIMIT {
                    continue;
                }
                matched = true;
                for &(x, y) in &cells {
                    let (x, y) = (x as usize, y as usize);
                    st.objectness[(a * n + y) * n + x] = 1.0;
                    st.positives.push(Positive {
                        anchor: a,
                        cell_x: x,
                        cell_y: y,
                        class_id,
                        target: [gx - x as f64, gy - y as f64, b.w * nf, b.h * nf],
                    });
                }
            }
        }
        if !matched {
            warnings += 1;
        }
    }
    Targets { scales, warnings }
}
