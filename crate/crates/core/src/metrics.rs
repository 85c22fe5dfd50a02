//! Overlap and surface-distance metrics on binary masks.
//!
//! Surface voxels are foreground voxels with at least one six-connected
//! neighbour that is background or outside the volume. Distances are
//! Euclidean in millimetres using the per-axis voxel spacing.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::volume_io::{Dims, LabelVolume};

/// Volumes with fewer voxels than this use all-pairs nearest neighbours;
/// larger ones use an exact Euclidean distance transform.
pub const BRUTE_FORCE_LIMIT: usize = 16 * 16 * 16;

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    dims: Dims,
    bits: Vec<bool>,
    spacing: [f64; 3],
}

impl BinaryMask {
    pub fn new(dims: Dims, bits: Vec<bool>, spacing: [f64; 3]) -> Result<Self> {
        if bits.len() != dims.voxel_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} bits for dims {dims:?}",
                bits.len()
            )));
        }
        if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::OutOfRange(format!("spacing {spacing:?} must be positive")));
        }
        Ok(Self { dims, bits, spacing })
    }

    /// Mask of voxels equal to `class`.
    pub fn from_labels(labels: &LabelVolume, class: u16) -> Self {
        let s = labels.spacing();
        Self {
            dims: labels.dims(),
            bits: labels.labels().iter().map(|&l| l == class).collect(),
            spacing: [s[0] as f64, s[1] as f64, s[2] as f64],
        }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Linear indices of surface voxels.
    pub fn surface(&self) -> Vec<usize> {
        let d = self.dims;
        (0..d.voxel_count())
            .filter(|&v| self.bits[v] && self.touches_background(v))
            .collect()
    }

    fn touches_background(&self, v: usize) -> bool {
        let d = self.dims;
        let (i, j, k) = d.coords(v);
        let fg = |i: usize, j: usize, k: usize| self.bits[d.index(i, j, k)];
        i == 0
            || j == 0
            || k == 0
            || i + 1 == d.h
            || j + 1 == d.w
            || k + 1 == d.l
            || !fg(i - 1, j, k)
            || !fg(i + 1, j, k)
            || !fg(i, j - 1, k)
            || !fg(i, j + 1, k)
            || !fg(i, j, k - 1)
            || !fg(i, j, k + 1)
    }
}

fn check_pair(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    if pred.dims != gt.dims {
        return Err(Error::ShapeMismatch(format!(
            "mask dims {:?} vs {:?}",
            pred.dims, gt.dims
        )));
    }
    Ok(())
}

fn overlap(pred: &BinaryMask, gt: &BinaryMask) -> (usize, usize, usize) {
    let inter = pred.bits.iter().zip(&gt.bits).filter(|(&a, &b)| a && b).count();
    (inter, pred.count(), gt.count())
}

/// `2|P∩G| / (|P| + |G|)`, 1 when both masks are empty.
pub fn dice(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_pair(pred, gt)?;
    let (i, p, g) = overlap(pred, gt);
    Ok(if p + g == 0 { 1.0 } else { 2.0 * i as f64 / (p + g) as f64 })
}

/// `|P∩G| / |P∪G|`, 1 when both masks are empty.
pub fn jaccard(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    check_pair(pred, gt)?;
    let (i, p, g) = overlap(pred, gt);
    let union = p + g - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

fn physical(dims: Dims, spacing: [f64; 3], v: usize) -> [f64; 3] {
    let (i, j, k) = dims.coords(v);
    [i as f64 * spacing[0], j as f64 * spacing[1], k as f64 * spacing[2]]
}

fn nearest_brute(from: &[usize], to: &[usize], dims: Dims, spacing: [f64; 3]) -> Vec<f64> {
    let targets: Vec<[f64; 3]> = to.iter().map(|&v| physical(dims, spacing, v)).collect();
    from.par_iter()
        .map(|&v| {
            let p = physical(dims, spacing, v);
            targets
                .iter()
                .map(|t| (p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2) + (p[2] - t[2]).powi(2))
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// One pass of the lower-envelope squared distance transform along a line
/// with sample spacing `step`.
fn edt_line(f: &[f64], step: f64, out: &mut [f64]) {
    let n = f.len();
    let finite: Vec<usize> = (0..n).filter(|&i| f[i].is_finite()).collect();
    if finite.is_empty() {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    }
    let pos = |i: usize| i as f64 * step;
    let intersect = |p: usize, q: usize| {
        ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)))
    };
    let mut hull: Vec<usize> = Vec::with_capacity(finite.len());
    let mut bounds: Vec<f64> = Vec::with_capacity(finite.len() + 1);
    for &q in &finite {
        loop {
            match hull.last() {
                Some(&p) if intersect(p, q) <= *bounds.last().unwrap() => {
                    hull.pop();
                    bounds.pop();
                }
                _ => break,
            }
        }
        let start = match hull.last() {
            Some(&p) => intersect(p, q),
            None => f64::NEG_INFINITY,
        };
        hull.push(q);
        bounds.push(start);
    }
    let mut h = 0;
    for (i, o) in out.iter_mut().enumerate() {
        let x = pos(i);
        while h + 1 < hull.len() && bounds[h + 1] < x {
            h += 1;
        }
        let q = hull[h];
        *o = (x - pos(q)).powi(2) + f[q];
    }
}

/// Exact squared Euclidean distance from every voxel to the nearest seed.
fn squared_edt(seeds: &[usize], dims: Dims, spacing: [f64; 3]) -> Vec<f64> {
    let mut g = vec![f64::INFINITY; dims.voxel_count()];
    for &s in seeds {
        g[s] = 0.0;
    }
    let [h, w, l] = dims.as_array();
    let mut line = Vec::new();
    let mut out = Vec::new();
    // axis 2 (L, contiguous), then axis 1 (W), then axis 0 (H)
    for (axis, len) in [(2usize, l), (1, w), (0, h)] {
        line.resize(len, 0.0);
        out.resize(len, 0.0);
        let (outer_a, outer_b) = match axis {
            2 => (h, w),
            1 => (h, l),
            _ => (w, l),
        };
        for a in 0..outer_a {
            for b in 0..outer_b {
                let idx = |t: usize| match axis {
                    2 => dims.index(a, b, t),
                    1 => dims.index(a, t, b),
                    _ => dims.index(t, a, b),
                };
                for t in 0..len {
                    line[t] = g[idx(t)];
                }
                edt_line(&line, spacing[axis], &mut out);
                for t in 0..len {
                    g[idx(t)] = out[t];
                }
            }
        }
    }
    g
}

fn nearest_edt(from: &[usize], to: &[usize], dims: Dims, spacing: [f64; 3]) -> Vec<f64> {
    let d2 = squared_edt(to, dims, spacing);
    from.iter().map(|&v| d2[v].sqrt()).collect()
}

/// Directed nearest-surface distances `pred → gt` and `gt → pred`, in the
/// order of each mask's surface voxels.
pub fn surface_distances(pred: &BinaryMask, gt: &BinaryMask) -> Result<(Vec<f64>, Vec<f64>)> {
    check_pair(pred, gt)?;
    if pred.count() == 0 {
        return Err(Error::EmptyMask("prediction"));
    }
    if gt.count() == 0 {
        return Err(Error::EmptyMask("ground-truth"));
    }
    let (sp, sg) = (pred.surface(), gt.surface());
    let nearest = if pred.dims.voxel_count() < BRUTE_FORCE_LIMIT {
        nearest_brute
    } else {
        nearest_edt
    };
    Ok((
        nearest(&sp, &sg, pred.dims, pred.spacing),
        nearest(&sg, &sp, pred.dims, pred.spacing),
    ))
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], pct: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = pct / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (rank - lo as f64)
}

/// Larger of the two directed 95th-percentile surface distances.
pub fn hd95(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (a, b) = surface_distances(pred, gt)?;
    Ok(percentile(&a, 95.0).max(percentile(&b, 95.0)))
}

/// Mean over the union of both directed surface-distance sets.
pub fn asd(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    let (a, b) = surface_distances(pred, gt)?;
    let total: f64 = a.iter().chain(&b).sum();
    Ok(total / (a.len() + b.len()) as f64)
}

/// Mean Dice over foreground classes `1..classes` of two label arrays.
/// A class absent from both arrays scores 1.
pub fn foreground_dice(pred: &[u16], gt: &[u16], classes: usize) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} labels", pred.len(), gt.len())));
    }
    if classes < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    let per_class = (1..classes).map(|c| {
        let c = c as u16;
        let (mut i, mut p, mut g) = (0usize, 0usize, 0usize);
        for (&a, &b) in pred.iter().zip(gt) {
            p += (a == c) as usize;
            g += (b == c) as usize;
            i += (a == c && b == c) as usize;
        }
        if p + g == 0 {
            1.0
        } else {
            2.0 * i as f64 / (p + g) as f64
        }
    });
    Ok(per_class.sum::<f64>() / (classes - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    pub dice: f64,
    pub jaccard: f64,
    /// `None` when either mask is empty.
    pub hd95: Option<f64>,
    pub asd: Option<f64>,
}

impl MetricReport {
    pub fn compute(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        let dice = dice(pred, gt)?;
        let jaccard = jaccard(pred, gt)?;
        let (hd95, asd) = match surface_distances(pred, gt) {
            Ok((a, b)) => {
                let total: f64 = a.iter().chain(&b).sum();
                (
                    Some(percentile(&a, 95.0).max(percentile(&b, 95.0))),
                    Some(total / (a.len() + b.len()) as f64),
                )
            }
            Err(Error::EmptyMask(_)) => (None, None),
            Err(e) => return Err(e),
        };
        Ok(Self {
            dice,
            jaccard,
            hd95,
            asd,
        })
    }
}
