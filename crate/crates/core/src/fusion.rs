//! Two-source evidential fusion and reliability masking.
//!
//! Both rules combine two GPMAs `a`, `b` over the same `K` classes with
//!
//! ```text
//! m_n  = a_n b_n + c (a_n b_Ω + b_n a_Ω)
//! m_Ω  = a_Ω b_Ω
//! ```
//!
//! followed by normalization of all `K + 1` masses. The class-aware rule uses
//! `c = 1 / (1 + K)`; the conventional rule uses `c = 1`.

use rayon::prelude::*;

use crate::edl::{belief_to_gpma, evidence_to_belief, EvidenceVector, Gpma};
use crate::error::{Error, Result};
use crate::numeric::Scalar;
use crate::volume_io::{Dims, EvidenceMap, LabelVolume, ScalarField, CONTENTIOUS_LABEL};

/// Which combination rule to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionRule {
    /// Class-aware evidential fusion: interaction discounted by `1/(1+K)`.
    #[default]
    ClassAware,
    /// Conventional evidential fusion: undiscounted interaction.
    Conventional,
}

impl std::str::FromStr for FusionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "caef" => Ok(Self::ClassAware),
            "ef" => Ok(Self::Conventional),
            other => Err(Error::InvalidArgument(format!("unknown fusion rule `{other}`"))),
        }
    }
}

/// Fusion rule plus the weights used to blend own and fused uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig<T> {
    rule: FusionRule,
    own_weight: T,
    fused_weight: T,
}

impl<T: Scalar> FusionConfig<T> {
    /// `own_weight + fused_weight` must equal 1 and both must lie in `[0, 1]`.
    pub fn new(rule: FusionRule, own_weight: T, fused_weight: T) -> Result<Self> {
        let in_unit = |v: T| v >= T::zero() && v <= T::one();
        if !in_unit(own_weight) || !in_unit(fused_weight) {
            return Err(Error::OutOfRange("blend weights must lie in [0, 1]".into()));
        }
        if (own_weight + fused_weight - T::one()).abs() > T::lit(1e-12) {
            return Err(Error::InvalidArgument(format!(
                "blend weights {own_weight:?} + {fused_weight:?} must sum to 1"
            )));
        }
        Ok(Self {
            rule,
            own_weight,
            fused_weight,
        })
    }

    pub fn rule(&self) -> FusionRule {
        self.rule
    }

    pub fn own_weight(&self) -> T {
        self.own_weight
    }

    pub fn fused_weight(&self) -> T {
        self.fused_weight
    }
}

impl<T: Scalar> Default for FusionConfig<T> {
    fn default() -> Self {
        Self {
            rule: FusionRule::ClassAware,
            own_weight: T::lit(0.5),
            fused_weight: T::lit(0.5),
        }
    }
}

/// Hard pseudo-label for one voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HardLabel {
    Class(usize),
    /// Reliability fell below the threshold; no pseudo-label is issued.
    Contentious,
}

impl HardLabel {
    pub fn class(self) -> Option<usize> {
        match self {
            HardLabel::Class(c) => Some(c),
            HardLabel::Contentious => None,
        }
    }

    pub fn to_u16(self) -> u16 {
        match self {
            HardLabel::Class(c) => c as u16,
            HardLabel::Contentious => CONTENTIOUS_LABEL,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedVoxel<T> {
    pub masses: Gpma<T>,
    pub reliability: T,
    pub hard_label: HardLabel,
}

/// Fused masses, reliability and pseudo-label for every voxel of a volume.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedLabelMap<T> {
    dims: Dims,
    spacing: [f32; 3],
    num_classes: usize,
    voxels: Vec<FusedVoxel<T>>,
}

impl<T: Scalar> FusedLabelMap<T> {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn voxels(&self) -> &[FusedVoxel<T>] {
        &self.voxels
    }

    pub fn labels(&self) -> Vec<HardLabel> {
        self.voxels.iter().map(|v| v.hard_label).collect()
    }

    pub fn reliability(&self) -> Vec<T> {
        self.voxels.iter().map(|v| v.reliability).collect()
    }

    /// Fused uncertainty (multi-set mass) per voxel.
    pub fn uncertainty(&self) -> Vec<T> {
        self.voxels.iter().map(|v| v.masses.multiset()).collect()
    }

    /// Per-voxel loss weight: reliability for labeled voxels, zero for
    /// contentious ones.
    pub fn pseudo_label_weights(&self) -> Vec<T> {
        self.voxels
            .iter()
            .map(|v| match v.hard_label {
                HardLabel::Class(_) => v.reliability,
                HardLabel::Contentious => T::zero(),
            })
            .collect()
    }

    pub fn label_volume(&self) -> LabelVolume {
        LabelVolume::new(
            self.dims,
            self.num_classes,
            self.spacing,
            self.voxels.iter().map(|v| v.hard_label.to_u16()).collect(),
        )
        .expect("fused map dimensions are consistent")
    }

    pub fn reliability_field(&self) -> ScalarField {
        ScalarField::new(
            self.dims,
            self.spacing,
            self.voxels.iter().map(|v| v.reliability.to_f64_() as f32).collect(),
        )
        .expect("fused map dimensions are consistent")
    }
}

fn combine<T: Scalar>(a: &Gpma<T>, b: &Gpma<T>, coeff: T) -> Result<Gpma<T>> {
    if a.num_classes() != b.num_classes() {
        return Err(Error::ClassMismatch(a.num_classes(), b.num_classes()));
    }
    let (a_u, b_u) = (a.multiset(), b.multiset());
    let mut raw: Vec<T> = a
        .singletons()
        .iter()
        .zip(b.singletons())
        .map(|(&x, &y)| x * y + coeff * (x * b_u + y * a_u))
        .collect();
    let mut raw_multi = a_u * b_u;
    let total = raw.iter().fold(raw_multi, |acc, &m| acc + m);
    if !(total > T::zero()) {
        // Only reachable when the two sources are in total conflict.
        return Err(Error::InvalidMass("sources are in total conflict".into()));
    }
    for m in raw.iter_mut() {
        *m = *m / total;
    }
    raw_multi = raw_multi / total;
    Ok(Gpma::from_normalized(raw, raw_multi))
}

/// Class-aware evidential fusion of two GPMAs.
pub fn caef_fuse_voxel<T: Scalar>(a: &Gpma<T>, b: &Gpma<T>) -> Result<Gpma<T>> {
    let k = T::from_usize_(a.set_cardinality());
    combine(a, b, T::one() / (T::one() + k))
}

/// Conventional evidential fusion: same rule with the interaction coefficient 1.
pub fn ef_fuse_voxel<T: Scalar>(a: &Gpma<T>, b: &Gpma<T>) -> Result<Gpma<T>> {
    combine(a, b, T::one())
}

pub fn fuse_voxel<T: Scalar>(a: &Gpma<T>, b: &Gpma<T>, rule: FusionRule) -> Result<Gpma<T>> {
    match rule {
        FusionRule::ClassAware => caef_fuse_voxel(a, b),
        FusionRule::Conventional => ef_fuse_voxel(a, b),
    }
}

/// `R = exp(m_Ω · Σ_n m_n log2 m_n)`, with `0 log 0 = 0`. The singleton masses
/// are used as they are, without renormalizing them to sum to one.
pub fn reliability<T: Scalar>(fused: &Gpma<T>) -> T {
    reliability_from_masses(fused.singletons(), fused.multiset())
}

fn reliability_from_masses<T: Scalar>(singletons: &[T], multiset: T) -> T {
    let entropy_term = singletons
        .iter()
        .filter(|&&z| z > T::zero())
        .fold(T::zero(), |acc, &z| acc + z * z.log2());
    (multiset * entropy_term).exp()
}

/// Blends a network's own uncertainty with the fused uncertainty.
pub fn blend_uncertainty<T: Scalar>(own_u: T, fused_u: T, cfg: &FusionConfig<T>) -> T {
    cfg.own_weight * own_u + cfg.fused_weight * fused_u
}

fn voxel_gpma(map: &EvidenceMap, voxel: usize) -> Result<Gpma<f64>> {
    let e = EvidenceVector::new(map.voxel_evidence(voxel))?;
    belief_to_gpma(&evidence_to_belief(&e), map.num_classes())
}

/// Fuses two evidence volumes voxel by voxel and issues hard pseudo-labels for
/// voxels whose reliability reaches `reliability_threshold`.
///
/// Each voxel depends only on its own inputs, so the result is identical for
/// any rayon pool size.
pub fn fuse_volumes(
    a: &EvidenceMap,
    b: &EvidenceMap,
    cfg: &FusionConfig<f64>,
    reliability_threshold: f64,
) -> Result<FusedLabelMap<f64>> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch(format!(
            "evidence dims {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    if a.num_classes() != b.num_classes() {
        return Err(Error::ClassMismatch(a.num_classes(), b.num_classes()));
    }
    if !(0.0..=1.0).contains(&reliability_threshold) {
        return Err(Error::OutOfRange(format!(
            "reliability threshold {reliability_threshold} not in [0, 1]"
        )));
    }
    let voxels = (0..a.dims().voxel_count())
        .into_par_iter()
        .map(|v| {
            let fused = fuse_voxel(&voxel_gpma(a, v)?, &voxel_gpma(b, v)?, cfg.rule)?;
            let r = reliability(&fused);
            let hard_label = if r >= reliability_threshold {
                HardLabel::Class(fused.argmax())
            } else {
                HardLabel::Contentious
            };
            Ok(FusedVoxel {
                masses: fused,
                reliability: r,
                hard_label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FusedLabelMap {
        dims: a.dims(),
        spacing: a.spacing(),
        num_classes: a.num_classes(),
        voxels,
    })
}
