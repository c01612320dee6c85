/// Axis-aligned box in normalised image coordinates: `x` runs along the
/// spectrogram columns (frequency), `y` along the rows (time).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self { cx: 0.5 * (x1 + x2), cy: 0.5 * (y1 + y2), w: x2 - x1, h: y2 - y1 }
    }

    /// `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (self.cx - 0.5 * self.w, self.cy - 0.5 * self.h, self.cx + 0.5 * self.w, self.cy + 0.5 * self.h)
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// Positive size and some overlap with the unit square.
    pub fn is_valid(&self) -> bool {
        let (x1, y1, x2, y2) = self.corners();
        self.w > 0.0 && self.h > 0.0 && x2 > 0.0 && y2 > 0.0 && x1 < 1.0 && y1 < 1.0 && self.cx.is_finite()
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let (ax1, ay1, ax2, ay2) = self.corners();
        let (bx1, by1, bx2, by2) = other.corners();
        let iw = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
        let ih = (ay2.min(by2) - ay1.max(by1)).max(0.0);
        iw * ih
    }

    /// Intersection over union, in `[0, 1]`.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            (inter / union).clamp(0.0, 1.0)
        }
    }

    /// Intersection relative to the smaller of the two areas.
    pub fn overlap_of_smaller(&self, other: &BBox) -> f64 {
        let denom = self.area().min(other.area());
        if denom <= 0.0 {
            0.0
        } else {
            (self.intersection(other) / denom).min(1.0)
        }
    }

    /// Clips to the unit square.
    pub fn clipped(&self) -> BBox {
        let (x1, y1, x2, y2) = self.corners();
        BBox::from_corners(x1.clamp(0.0, 1.0), y1.clamp(0.0, 1.0), x2.clamp(0.0, 1.0), y2.clamp(0.0, 1.0))
    }

    /// Inclusive pixel ranges `(row0, row1, col0, col1)` covered on an
    /// `n_rows × n_cols` grid (pixel `i` spans `[i, i+1)/n`).
    pub fn pixel_span(&self, n_rows: usize, n_cols: usize) -> (usize, usize, usize, usize) {
        let (x1, y1, x2, y2) = self.clipped().corners();
        let lo = |v: f64, n: usize| ((v * n as f64).floor() as usize).min(n - 1);
        let hi = |v: f64, n: usize| (((v * n as f64).ceil() as usize).max(1) - 1).min(n - 1);
        (lo(y1, n_rows), hi(y2, n_rows), lo(x1, n_cols), hi(x2, n_cols))
    }
}
