//! Uncertainty-ranked, epoch-dependent voxel weights.
//!
//! `ω(q, h) = Ξ · tanh(ψ(h) ζ(q)) + 1` with `ψ(h) = 2h/V − 1` over ranks
//! `h ∈ 1..=V` and `ζ(q) = 2q/Q − 1` over epochs `q ∈ 1..=Q`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numeric::Scalar;

/// Which end of the uncertainty ordering gets rank 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankOrder {
    /// Rank 1 is the least uncertain voxel: confident voxels are up-weighted
    /// early, uncertain ones late.
    #[default]
    AscendingUncertainty,
    /// Rank 1 is the most uncertain voxel.
    DescendingUncertainty,
}

impl std::str::FromStr for RankOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "asc" | "ascending" => Ok(Self::AscendingUncertainty),
            "desc" | "descending" => Ok(Self::DescendingUncertainty),
            other => Err(Error::InvalidArgument(format!("unknown rank order `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumConfig<T> {
    xi: T,
    total_epochs: usize,
    order: RankOrder,
}

impl<T: Scalar> CurriculumConfig<T> {
    pub fn new(xi: T, total_epochs: usize, order: RankOrder) -> Result<Self> {
        if !(xi > T::zero()) || !xi.is_finite() {
            return Err(Error::OutOfRange(format!("amplitude {xi:?} must be finite and > 0")));
        }
        if total_epochs == 0 {
            return Err(Error::OutOfRange("total epochs must be >= 1".into()));
        }
        Ok(Self {
            xi,
            total_epochs,
            order,
        })
    }

    /// Unit amplitude, ascending-uncertainty ranking.
    pub fn with_epochs(total_epochs: usize) -> Result<Self> {
        Self::new(T::one(), total_epochs, RankOrder::AscendingUncertainty)
    }

    pub fn xi(&self) -> T {
        self.xi
    }

    pub fn total_epochs(&self) -> usize {
        self.total_epochs
    }

    pub fn order(&self) -> RankOrder {
        self.order
    }
}

/// Ranks `1..=V` by uncertainty; equal values keep their index order.
pub fn rank_voxels<T: Scalar>(uncertainty: &[T], order: RankOrder) -> Result<Vec<usize>> {
    if let Some(i) = uncertainty.iter().position(|u| u.is_nan()) {
        return Err(Error::NonFinite(format!("uncertainty at voxel {i} is NaN")));
    }
    let mut idx: Vec<usize> = (0..uncertainty.len()).collect();
    // par_sort_by is a stable merge sort, so ties resolve by index for any pool size.
    match order {
        RankOrder::AscendingUncertainty => {
            idx.par_sort_by(|&a, &b| uncertainty[a].partial_cmp(&uncertainty[b]).unwrap())
        }
        RankOrder::DescendingUncertainty => {
            idx.par_sort_by(|&a, &b| uncertainty[b].partial_cmp(&uncertainty[a]).unwrap())
        }
    }
    let mut ranks = vec![0usize; uncertainty.len()];
    for (r, &v) in idx.iter().enumerate() {
        ranks[v] = r + 1;
    }
    Ok(ranks)
}

/// Curriculum weight for rank `rank` of `voxels` at epoch `epoch`.
pub fn omega<T: Scalar>(epoch: usize, rank: usize, voxels: usize, cfg: &CurriculumConfig<T>) -> Result<T> {
    if epoch == 0 || epoch > cfg.total_epochs {
        return Err(Error::OutOfRange(format!(
            "epoch {epoch} outside 1..={}",
            cfg.total_epochs
        )));
    }
    if rank == 0 || rank > voxels {
        return Err(Error::OutOfRange(format!("rank {rank} outside 1..={voxels}")));
    }
    Ok(omega_unchecked(epoch, rank, voxels, cfg))
}

#[inline]
fn omega_unchecked<T: Scalar>(epoch: usize, rank: usize, voxels: usize, cfg: &CurriculumConfig<T>) -> T {
    let two = T::lit(2.0);
    let psi = two * T::from_usize_(rank) / T::from_usize_(voxels) - T::one();
    let zeta = two * T::from_usize_(epoch) / T::from_usize_(cfg.total_epochs) - T::one();
    cfg.xi * (psi * zeta).tanh() + T::one()
}

/// Per-voxel weights for one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumWeights<T> {
    pub weights: Vec<T>,
    pub epoch: usize,
}

impl<T: Scalar> CurriculumWeights<T> {
    /// Ranks `uncertainty` under `cfg.order` and evaluates ω for every voxel.
    pub fn compute(uncertainty: &[T], epoch: usize, cfg: &CurriculumConfig<T>) -> Result<Self> {
        let v = uncertainty.len();
        if v == 0 {
            return Ok(Self {
                weights: Vec::new(),
                epoch,
            });
        }
        omega(epoch, 1, v, cfg)?;
        let ranks = rank_voxels(uncertainty, cfg.order)?;
        let weights = ranks
            .par_iter()
            .map(|&h| omega_unchecked(epoch, h, v, cfg))
            .collect();
        Ok(Self { weights, epoch })
    }

    /// `[1 − Ξ tanh 1, 1 + Ξ tanh 1]`, the range every weight falls in.
    pub fn bounds(cfg: &CurriculumConfig<T>) -> (T, T) {
        let t = cfg.xi * T::one().tanh();
        (T::one() - t, T::one() + t)
    }
}
