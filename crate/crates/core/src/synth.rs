//! Synthetic label volumes with two deliberately different evidence sources.
//!
//! Randomness comes from a ChaCha8 stream seeded with `ChaCha8Rng::seed_from_u64`,
//! and Gaussian noise is drawn by inverting the normal CDF on uniforms
//! restricted to `[Φ(−4), Φ(4)]`, so draws are truncated at ±4σ.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::volume_io::{Dims, EvidenceMap, LabelVolume};

/// Smallest allowed extent along any axis.
pub const MIN_EXTENT: usize = 8;
/// Truncation point of the noise, in standard deviations.
pub const NOISE_TRUNCATION: f64 = 4.0;

/// Systematic error injected into one evidence source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BiasMode {
    #[default]
    None,
    /// Near class boundaries the source sees a 3×3×3 box-blurred version
    /// of the label field.
    BoundaryBlur,
    /// Inside one random box the source confidently reports the next class.
    ClassSwapPatch,
    /// Everywhere, the source also gives [`CONFUSION_RATIO`]·gain evidence to
    /// a distractor class. The distractor depends on the source index, so two
    /// sources confuse each class with different neighbours when K ≥ 3.
    ClassConfusion,
}

/// Distractor evidence relative to the true-class gain under
/// [`BiasMode::ClassConfusion`].
pub const CONFUSION_RATIO: f64 = 0.9;

impl std::str::FromStr for BiasMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(Self::None),
            "boundary_blur" | "blur" => Ok(Self::BoundaryBlur),
            "class_swap_patch" | "swap" => Ok(Self::ClassSwapPatch),
            "class_confusion" | "confusion" => Ok(Self::ClassConfusion),
            other => Err(Error::InvalidArgument(format!("unknown bias mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub classes: usize,
    pub blobs: usize,
    /// Evidence for the true class before noise.
    pub gain: f64,
    /// Noise standard deviation for sources a and b.
    pub noise: [f64; 2],
    pub bias: [BiasMode; 2],
    /// Standard deviation of the intensity image noise.
    pub intensity_noise: f64,
    pub spacing: [f32; 3],
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            dims: Dims::new(24, 24, 24),
            classes: 2,
            blobs: 3,
            gain: 2.0,
            noise: [0.5, 0.5],
            bias: [BiasMode::BoundaryBlur, BiasMode::ClassSwapPatch],
            intensity_noise: 0.6,
            spacing: [1.0, 1.0, 1.0],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub gt: LabelVolume,
    pub evidence_a: EvidenceMap,
    pub evidence_b: EvidenceMap,
    /// Noisy image whose mean is the class index, row-major.
    pub intensity: Vec<f64>,
}

/// Truncated standard normal sampler over a uniform stream.
pub struct GaussianSource {
    rng: ChaCha8Rng,
    lo: f64,
    hi: f64,
    normal: Normal,
}

impl GaussianSource {
    pub fn new(seed: u64) -> Self {
        Self::from_rng(ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, 1.0).expect("standard normal");
        Self {
            rng,
            lo: normal.cdf(-NOISE_TRUNCATION),
            hi: normal.cdf(NOISE_TRUNCATION),
            normal,
        }
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        let u = self.lo + (self.hi - self.lo) * self.uniform();
        self.normal.inverse_cdf(u)
    }
}

struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
    class: u16,
}

impl Ellipsoid {
    fn contains(&self, p: [f64; 3]) -> bool {
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }
}

fn validate(spec: &PhantomSpec) -> Result<()> {
    if spec.dims.as_array().iter().any(|&d| d < MIN_EXTENT) {
        return Err(Error::InvalidArgument(format!(
            "phantom dims {:?} must be at least {MIN_EXTENT} per axis",
            spec.dims
        )));
    }
    if spec.classes < 2 || spec.classes >= u16::MAX as usize {
        return Err(Error::InvalidArgument(format!("bad class count {}", spec.classes)));
    }
    if spec.blobs == 0 {
        return Err(Error::InvalidArgument("need at least one blob".into()));
    }
    let ok = |x: f64| x.is_finite() && x >= 0.0;
    if !ok(spec.gain) || !ok(spec.noise[0]) || !ok(spec.noise[1]) || !ok(spec.intensity_noise) {
        return Err(Error::InvalidArgument("gain and noise levels must be finite and >= 0".into()));
    }
    Ok(())
}

fn neighbourhood_fractions(gt: &[u16], dims: Dims, classes: usize, v: usize) -> Vec<f64> {
    let (i, j, k) = dims.coords(v);
    let mut counts = vec![0usize; classes];
    let mut total = 0usize;
    let range = |x: usize, n: usize| x.saturating_sub(1)..(x + 2).min(n);
    for a in range(i, dims.h) {
        for b in range(j, dims.w) {
            for c in range(k, dims.l) {
                counts[gt[dims.index(a, b, c)] as usize] += 1;
                total += 1;
            }
        }
    }
    counts.into_iter().map(|n| n as f64 / total as f64).collect()
}

fn evidence_for(
    spec: &PhantomSpec,
    gt: &[u16],
    source: usize,
    noise: &mut GaussianSource,
) -> Result<EvidenceMap> {
    let dims = spec.dims;
    let k = spec.classes;
    let n = dims.voxel_count();
    let sigma = spec.noise[source];

    // Bias region parameters are drawn before any per-voxel noise.
    let patch = match spec.bias[source] {
        BiasMode::ClassSwapPatch => {
            let ext = dims.as_array().map(|d| (d / 3).max(2));
            let lo: Vec<usize> = (0..3)
                .map(|a| ((dims.as_array()[a] - ext[a]) as f64 * noise.uniform()) as usize)
                .collect();
            Some((lo, ext))
        }
        _ => None,
    };
    let in_patch = |v: usize| {
        patch.as_ref().is_some_and(|(lo, ext)| {
            let c = dims.coords(v);
            [c.0, c.1, c.2]
                .iter()
                .enumerate()
                .all(|(a, &x)| x >= lo[a] && x < lo[a] + ext[a])
        })
    };

    let mut values = vec![0.0f64; n * k];
    for v in 0..n {
        let truth = gt[v] as usize;
        let mut base = vec![0.0; k];
        match spec.bias[source] {
            BiasMode::BoundaryBlur => {
                let frac = neighbourhood_fractions(gt, dims, k, v);
                if frac[truth] < 1.0 {
                    for c in 0..k {
                        base[c] = spec.gain * frac[c];
                    }
                } else {
                    base[truth] = spec.gain;
                }
            }
            BiasMode::ClassSwapPatch if in_patch(v) => base[(truth + 1) % k] = 0.6 * spec.gain,
            BiasMode::ClassConfusion => {
                base[truth] = spec.gain;
                base[(truth + 1 + source % (k - 1)) % k] = CONFUSION_RATIO * spec.gain;
            }
            _ => base[truth] = spec.gain,
        }
        for c in 0..k {
            let z = if sigma > 0.0 { sigma * noise.standard_normal() } else { 0.0 };
            values[v * k + c] = (base[c] + z).max(0.0);
        }
    }
    Ok(EvidenceMap::from_voxel_major(dims, k, spec.spacing, &values)?)
}

/// Draws a label volume of overlapping ellipsoids and two evidence maps for it.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    validate(spec)?;
    let dims = spec.dims;
    let mut noise = GaussianSource::new(spec.seed);

    let extents = dims.as_array().map(|d| d as f64);
    let blobs: Vec<Ellipsoid> = (0..spec.blobs)
        .map(|b| {
            let mut center = [0.0; 3];
            let mut radii = [0.0; 3];
            for a in 0..3 {
                center[a] = extents[a] * (0.25 + 0.5 * noise.uniform());
                radii[a] = extents[a] * (0.12 + 0.18 * noise.uniform());
            }
            Ellipsoid {
                center,
                radii,
                class: (1 + b % (spec.classes - 1)) as u16,
            }
        })
        .collect();

    let labels: Vec<u16> = (0..dims.voxel_count())
        .map(|v| {
            let (i, j, k) = dims.coords(v);
            let p = [i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5];
            blobs
                .iter()
                .rev()
                .find(|e| e.contains(p))
                .map_or(0, |e| e.class)
        })
        .collect();

    let evidence_a = evidence_for(spec, &labels, 0, &mut noise)?;
    let evidence_b = evidence_for(spec, &labels, 1, &mut noise)?;
    let intensity = labels
        .iter()
        .map(|&l| l as f64 + spec.intensity_noise * noise.standard_normal())
        .collect();
    let gt = LabelVolume::new(dims, spec.classes, spec.spacing, labels)?;
    Ok(Phantom {
        gt,
        evidence_a,
        evidence_b,
        intensity,
    })
}
