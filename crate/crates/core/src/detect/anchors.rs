use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Anchor shapes `(w, h)` in normalised units, per output scale
/// (finest scale first, smallest anchors first within a scale).
#[derive(Clone, Debug, PartialEq)]
pub struct Anchors {
    pub scales: Vec<Vec<(f64, f64)>>,
}

impl Default for Anchors {
    /// The usual COCO anchors, relative to a 640-pixel image.
    fn default() -> Self {
        let px = [
            [(10.0, 13.0), (16.0, 30.0), (33.0, 23.0)],
            [(30.0, 61.0), (62.0, 45.0), (59.0, 119.0)],
            [(116.0, 90.0), (156.0, 198.0), (373.0, 326.0)],
        ];
        Anchors { scales: px.iter().map(|s| s.iter().map(|(w, h)| (w / 640.0, h / 640.0)).collect()).collect() }
    }
}

impl Anchors {
    pub fn per_scale(&self) -> usize {
        self.scales.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, num_scales: usize, per_scale: usize) -> Result<()> {
        if self.scales.len() != num_scales || self.scales.iter().any(|s| s.len() != per_scale) {
            return Err(Error::Config(format!("expected {num_scales} scales of {per_scale} anchors, got {self}")));
        }
        if self.scales.iter().flatten().any(|&(w, h)| !(w > 0.0 && h > 0.0 && w.is_finite() && h.is_finite())) {
            return Err(Error::Config(format!("anchor sizes must be positive: {self}")));
        }
        Ok(())
    }

    /// k-means over box shapes with `1 − IoU` (boxes sharing a centre) as
    /// the distance; clusters are sorted by area and dealt out to scales.
    pub fn fit(shapes: &[(f64, f64)], num_scales: usize, per_scale: usize, seed: u64) -> Result<Self> {
        let k = num_scales * per_scale;
        let shapes: Vec<(f64, f64)> = shapes.iter().copied().filter(|&(w, h)| w > 0.0 && h > 0.0).collect();
        if shapes.is_empty() || k == 0 {
            return Err(Error::InvalidInput("anchor fitting needs at least one box and one anchor".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = |a: (f64, f64), b: (f64, f64)| 1.0 - shape_iou(a, b);

        // k-means++ seeding
        let mut centres = vec![shapes[rng.random_range(0..shapes.len())]];
        while centres.len() < k {
            let d: Vec<f64> = shapes
                .iter()
                .map(|&s| centres.iter().map(|&c| dist(s, c)).fold(f64::INFINITY, f64::min).powi(2))
                .collect();
            let total: f64 = d.iter().sum();
            if total <= 0.0 {
                centres.push(shapes[rng.random_range(0..shapes.len())]);
                continue;
            }
            let mut pick = rng.random_range(0.0..total);
            let mut chosen = shapes.len() - 1;
            for (i, di) in d.iter().enumerate() {
                if pick < *di {
                    chosen = i;
                    break;
                }
                pick -= di;
            }
            centres.push(shapes[chosen]);
        }

        let mut assign = vec![usize::MAX; shapes.len()];
        for _ in 0..300 {
            let mut changed = false;
            for (i, &s) in shapes.iter().enumerate() {
                let best = (0..k)
                    .min_by(|&a, &b| dist(s, centres[a]).total_cmp(&dist(s, centres[b])))
                    .expect("k > 0");
                if assign[i] != best {
                    assign[i] = best;
                    changed = true;
                }
            }
            for (c, centre) in centres.iter_mut().enumerate() {
                let members: Vec<(f64, f64)> =
                    shapes.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(s, _)| *s).collect();
                if !members.is_empty() {
                    let n = members.len() as f64;
                    *centre = (members.iter().map(|m| m.0).sum::<f64>() / n, members.iter().map(|m| m.1).sum::<f64>() / n);
                }
            }
            if !changed {
                break;
            }
        }
        centres.sort_by(|a, b| (a.0 * a.1).total_cmp(&(b.0 * b.1)));
        Ok(Anchors { scales: centres.chunks(per_scale).map(<[_]>::to_vec).collect() })
    }
}

/// IoU of two boxes with a common centre.
pub fn shape_iou(a: (f64, f64), b: (f64, f64)) -> f64 {
    let inter = a.0.min(b.0) * a.1.min(b.1);
    inter / (a.0 * a.1 + b.0 * b.1 - inter)
}

impl fmt::Display for Anchors {
    /// `w,h w,h w,h; w,h ...` with scales separated by `;`. Values are
    /// printed in shortest round-trip form, so parsing restores them exactly.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self
            .scales
            .iter()
            .map(|sc| sc.iter().map(|(w, h)| format!("{w},{h}")).collect::<Vec<_>>().join(" "))
            .collect();
        f.write_str(&s.join("; "))
    }
}

impl FromStr for Anchors {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("cannot parse anchors '{s}'"));
        let scales = s
            .split(';')
            .map(|sc| {
                sc.split_whitespace()
                    .map(|pair| {
                        let (w, h) = pair.split_once(',').ok_or_else(bad)?;
                        Ok((w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Anchors { scales })
    }
}
