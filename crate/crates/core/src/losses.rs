//! Fisher-information evidential loss, reference segmentation losses, and the
//! aggregation that forms the training objective.

use serde::Serialize;

use crate::edl::DirichletParams;
use crate::error::{Error, Result};
use crate::numeric::{pairwise_sum, Scalar};
use crate::special::{tetragamma, trigamma};

/// Dice smoothing constant.
pub const DICE_SMOOTH: f64 = 1e-5;
/// Probabilities are clamped to this floor before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Coefficient of the log-determinant regularizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IedlConfig<T> {
    lambda_fisher: T,
}

impl<T: Scalar> IedlConfig<T> {
    pub fn new(lambda_fisher: T) -> Result<Self> {
        if !lambda_fisher.is_finite() || lambda_fisher < T::zero() {
            return Err(Error::OutOfRange(format!(
                "lambda_fisher {lambda_fisher:?} must be finite and >= 0"
            )));
        }
        Ok(Self { lambda_fisher })
    }

    pub fn lambda_fisher(&self) -> T {
        self.lambda_fisher
    }
}

impl<T: Scalar> Default for IedlConfig<T> {
    fn default() -> Self {
        Self {
            lambda_fisher: T::lit(0.1),
        }
    }
}

/// Determinant of the Dirichlet Fisher information
/// `I(α) = diag(ψ₁(α_n)) − ψ₁(S) 11ᵀ`, via the rank-one update identity.
pub fn fisher_determinant<T: Scalar>(alpha: &DirichletParams<T>) -> T {
    let (prod, inv_sum) = alpha
        .alpha()
        .iter()
        .map(|&a| trigamma(a))
        .fold((T::one(), T::zero()), |(p, s), t| (p * t, s + T::one() / t));
    prod * (T::one() - trigamma(alpha.strength()) * inv_sum)
}

/// `log det I(α)`, computed term by term so it stays finite when the
/// determinant itself would underflow.
pub fn fisher_log_determinant<T: Scalar>(alpha: &DirichletParams<T>) -> T {
    let (log_prod, inv_sum) = alpha
        .alpha()
        .iter()
        .map(|&a| trigamma(a))
        .fold((T::zero(), T::zero()), |(lp, s), t| (lp + t.ln(), s + T::one() / t));
    log_prod + (T::one() - trigamma(alpha.strength()) * inv_sum).ln()
}

fn check_one_hot<T: Scalar>(y: &[T], classes: usize) -> Result<()> {
    if y.len() != classes {
        return Err(Error::ShapeMismatch(format!(
            "target has {} entries, alpha has {classes}",
            y.len()
        )));
    }
    let ones = y.iter().filter(|&&v| v == T::one()).count();
    let zeros = y.iter().filter(|&&v| v == T::zero()).count();
    if ones != 1 || ones + zeros != classes {
        return Err(Error::InvalidArgument(format!("target {y:?} is not one-hot")));
    }
    Ok(())
}

fn check_weight<T: Scalar>(w: T) -> Result<()> {
    if !w.is_finite() || w < T::zero() {
        return Err(Error::OutOfRange(format!("voxel weight {w:?} must be finite and >= 0")));
    }
    Ok(())
}

/// Per-class squared-error plus Dirichlet variance term.
#[inline]
fn mse_terms<T: Scalar>(alpha: &DirichletParams<T>, y: &[T]) -> Vec<T> {
    let s = alpha.strength();
    alpha
        .alpha()
        .iter()
        .zip(y)
        .map(|(&a, &yn)| {
            let p = a / s;
            (yn - p).powi(2) + p * (T::one() - p) / (s + T::one())
        })
        .collect()
}

/// Fisher-weighted evidential loss for one voxel:
///
/// `ω · ( Σ_n [(y_n − p_n)² + α_n(S − α_n) / (S²(S + 1))] ψ₁(α_n) − λ log det I(α) )`
///
/// with `p = α / S`. The weight multiplies the regularizer as well.
pub fn iedl_voxel_loss<T: Scalar>(
    alpha: &DirichletParams<T>,
    y_onehot: &[T],
    weight: T,
    cfg: &IedlConfig<T>,
) -> Result<T> {
    check_one_hot(y_onehot, alpha.num_classes())?;
    check_weight(weight)?;
    let weighted_mse: T = mse_terms(alpha, y_onehot)
        .into_iter()
        .zip(alpha.alpha())
        .map(|(m, &a)| m * trigamma(a))
        .sum();
    let reg = if cfg.lambda_fisher > T::zero() {
        cfg.lambda_fisher * fisher_log_determinant(alpha)
    } else {
        T::zero()
    };
    Ok(weight * (weighted_mse - reg))
}

/// Analytic gradient of [`iedl_voxel_loss`] with respect to `alpha`.
pub fn iedl_voxel_grad<T: Scalar>(
    alpha: &DirichletParams<T>,
    y_onehot: &[T],
    weight: T,
    cfg: &IedlConfig<T>,
) -> Result<Vec<T>> {
    check_one_hot(y_onehot, alpha.num_classes())?;
    check_weight(weight)?;
    let one = T::one();
    let two = T::lit(2.0);
    let s = alpha.strength();
    let s1 = s + one;
    let a = alpha.alpha();
    let tri: Vec<T> = a.iter().map(|&x| trigamma(x)).collect();
    let tet: Vec<T> = a.iter().map(|&x| tetragamma(x)).collect();
    let p: Vec<T> = a.iter().map(|&x| x / s).collect();
    let mse = mse_terms(alpha, y_onehot);

    // d/dα_j Σ_n mse_n ψ₁(α_n): mse_n depends on α only through p and S.
    let g: Vec<T> = (0..a.len())
        .map(|n| tri[n] * (two * (p[n] - y_onehot[n]) + (one - two * p[n]) / s1))
        .collect();
    let g_dot_p: T = g.iter().zip(&p).map(|(&gn, &pn)| gn * pn).sum();
    let var_sum: T = tri
        .iter()
        .zip(&p)
        .map(|(&t, &pn)| t * pn * (one - pn))
        .sum::<T>()
        / (s1 * s1);

    let fisher = if cfg.lambda_fisher > T::zero() {
        let tri_s = trigamma(s);
        let tet_s = tetragamma(s);
        let inv_sum: T = tri.iter().map(|&t| one / t).sum();
        let denom = one - tri_s * inv_sum;
        Some((tri_s, tet_s, inv_sum, denom))
    } else {
        None
    };

    Ok((0..a.len())
        .map(|j| {
            let mut d = (g[j] - g_dot_p) / s - var_sum + mse[j] * tet[j];
            if let Some((tri_s, tet_s, inv_sum, denom)) = fisher {
                let dlogdet = tet[j] / tri[j]
                    + (tri_s * tet[j] / (tri[j] * tri[j]) - tet_s * inv_sum) / denom;
                d = d - cfg.lambda_fisher * dlogdet;
            }
            weight * d
        })
        .collect())
}

fn check_probs<T: Scalar>(prob: &[T], labels: &[usize], classes: usize, weights: Option<&[T]>) -> Result<()> {
    if classes < 2 {
        return Err(Error::InvalidArgument("need at least 2 classes".into()));
    }
    if prob.len() != labels.len() * classes {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities for {} voxels x {classes} classes",
            prob.len(),
            labels.len()
        )));
    }
    if let Some(w) = weights {
        if w.len() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} weights for {} voxels",
                w.len(),
                labels.len()
            )));
        }
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::OutOfRange(format!("label {l} >= {classes} classes")));
    }
    Ok(())
}

struct DiceStats<T> {
    inter: Vec<T>,
    pred: Vec<T>,
    truth: Vec<T>,
}

fn dice_stats<T: Scalar>(prob: &[T], labels: &[usize], classes: usize, weights: Option<&[T]>) -> DiceStats<T> {
    let w = |v: usize| weights.map_or(T::one(), |w| w[v]);
    let mut stats = DiceStats {
        inter: Vec::with_capacity(classes),
        pred: Vec::with_capacity(classes),
        truth: Vec::with_capacity(classes),
    };
    for c in 0..classes {
        let pc: Vec<T> = (0..labels.len()).map(|v| w(v) * prob[v * classes + c]).collect();
        let ic: Vec<T> = (0..labels.len())
            .map(|v| if labels[v] == c { w(v) * prob[v * classes + c] } else { T::zero() })
            .collect();
        let gc: Vec<T> = (0..labels.len())
            .map(|v| if labels[v] == c { w(v) } else { T::zero() })
            .collect();
        stats.inter.push(pairwise_sum(&ic));
        stats.pred.push(pairwise_sum(&pc));
        stats.truth.push(pairwise_sum(&gc));
    }
    stats
}

/// Soft Dice loss `1 − mean_c (2Σ p y + s) / (Σ p + Σ y + s)` with optional
/// per-voxel weights. `prob` is voxel-major (`prob[v * K + c]`).
pub fn weighted_dice_loss<T: Scalar>(
    prob: &[T],
    labels: &[usize],
    classes: usize,
    weights: Option<&[T]>,
) -> Result<T> {
    check_probs(prob, labels, classes, weights)?;
    let st = dice_stats(prob, labels, classes, weights);
    let s = T::lit(DICE_SMOOTH);
    let two = T::lit(2.0);
    let mean: T = (0..classes)
        .map(|c| (two * st.inter[c] + s) / (st.pred[c] + st.truth[c] + s))
        .sum::<T>()
        / T::from_usize_(classes);
    Ok(T::one() - mean)
}

pub fn dice_loss<T: Scalar>(prob: &[T], labels: &[usize], classes: usize) -> Result<T> {
    weighted_dice_loss(prob, labels, classes, None)
}

/// Gradient of [`weighted_dice_loss`] with respect to `prob`.
pub fn weighted_dice_grad<T: Scalar>(
    prob: &[T],
    labels: &[usize],
    classes: usize,
    weights: Option<&[T]>,
) -> Result<Vec<T>> {
    check_probs(prob, labels, classes, weights)?;
    let st = dice_stats(prob, labels, classes, weights);
    let s = T::lit(DICE_SMOOTH);
    let two = T::lit(2.0);
    let k = T::from_usize_(classes);
    let mut grad = vec![T::zero(); prob.len()];
    for c in 0..classes {
        let den = st.pred[c] + st.truth[c] + s;
        let num = two * st.inter[c] + s;
        for v in 0..labels.len() {
            let w = weights.map_or(T::one(), |w| w[v]);
            let y = if labels[v] == c { T::one() } else { T::zero() };
            grad[v * classes + c] = -w * (two * y * den - num) / (den * den) / k;
        }
    }
    Ok(grad)
}

/// Mean over voxels of `−w_v log p_{v, y_v}`, probabilities clamped to
/// `[1e-12, 1]`. Unweighted voxels count with weight 1.
pub fn weighted_cross_entropy_loss<T: Scalar>(
    prob: &[T],
    labels: &[usize],
    classes: usize,
    weights: Option<&[T]>,
) -> Result<T> {
    check_probs(prob, labels, classes, weights)?;
    if labels.is_empty() {
        return Ok(T::zero());
    }
    let floor = T::lit(PROB_FLOOR);
    let terms: Vec<T> = labels
        .iter()
        .enumerate()
        .map(|(v, &l)| {
            let p = prob[v * classes + l].max(floor).min(T::one());
            -weights.map_or(T::one(), |w| w[v]) * p.ln()
        })
        .collect();
    Ok(pairwise_sum(&terms) / T::from_usize_(labels.len()))
}

pub fn cross_entropy_loss<T: Scalar>(prob: &[T], labels: &[usize], classes: usize) -> Result<T> {
    weighted_cross_entropy_loss(prob, labels, classes, None)
}

/// Gradient of [`weighted_cross_entropy_loss`] with respect to `prob`.
pub fn weighted_cross_entropy_grad<T: Scalar>(
    prob: &[T],
    labels: &[usize],
    classes: usize,
    weights: Option<&[T]>,
) -> Result<Vec<T>> {
    check_probs(prob, labels, classes, weights)?;
    let mut grad = vec![T::zero(); prob.len()];
    if labels.is_empty() {
        return Ok(grad);
    }
    let n = T::from_usize_(labels.len());
    let floor = T::lit(PROB_FLOOR);
    for (v, &l) in labels.iter().enumerate() {
        let p = prob[v * classes + l];
        if p > floor {
            grad[v * classes + l] = -weights.map_or(T::one(), |w| w[v]) / (p * n);
        }
    }
    Ok(grad)
}

fn per_sample_means<T: Scalar>(values: &[T], voxels_per_sample: usize) -> Result<T> {
    if voxels_per_sample == 0 {
        return Err(Error::InvalidArgument("voxels per sample must be > 0".into()));
    }
    if values.len() % voxels_per_sample != 0 {
        return Err(Error::ShapeMismatch(format!(
            "{} values do not split into samples of {voxels_per_sample}",
            values.len()
        )));
    }
    let v = T::from_usize_(voxels_per_sample);
    Ok(values
        .chunks(voxels_per_sample)
        .map(|sample| pairwise_sum(sample) / v)
        .fold(T::zero(), |acc, m| acc + m))
}

/// `Σ_i Σ_v ω_v L_{i,v} / V` over consecutive samples of `voxels_per_sample`.
pub fn aggregate_weighted_labeled<T: Scalar>(
    per_voxel_losses: &[T],
    weights: &[T],
    voxels_per_sample: usize,
) -> Result<T> {
    if per_voxel_losses.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} losses vs {} weights",
            per_voxel_losses.len(),
            weights.len()
        )));
    }
    let weighted: Vec<T> = per_voxel_losses.iter().zip(weights).map(|(&l, &w)| l * w).collect();
    per_sample_means(&weighted, voxels_per_sample)
}

/// `Σ_j Σ_v L_{j,v} / V'` over consecutive samples of `voxels_per_sample`.
pub fn aggregate_unlabeled_iedl<T: Scalar>(per_voxel_losses: &[T], voxels_per_sample: usize) -> Result<T> {
    per_sample_means(per_voxel_losses, voxels_per_sample)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarmupConfig<T> {
    lambda_max: T,
    ramp_len: usize,
}

impl<T: Scalar> WarmupConfig<T> {
    pub fn new(lambda_max: T, ramp_len: usize) -> Result<Self> {
        if !lambda_max.is_finite() || lambda_max < T::zero() {
            return Err(Error::OutOfRange(format!("lambda_max {lambda_max:?} must be >= 0")));
        }
        if ramp_len == 0 {
            return Err(Error::OutOfRange("ramp length must be > 0".into()));
        }
        Ok(Self { lambda_max, ramp_len })
    }

    /// Ramp over `total / 2.5` steps, at least one.
    pub fn for_total(lambda_max: T, total: usize) -> Result<Self> {
        Self::new(lambda_max, ((total as f64 / 2.5).round() as usize).max(1))
    }

    pub fn lambda_max(&self) -> T {
        self.lambda_max
    }

    pub fn ramp_len(&self) -> usize {
        self.ramp_len
    }
}

/// `λ_max · exp(−5 (1 − min(q, R) / R)²)`.
pub fn gaussian_warmup<T: Scalar>(q: usize, cfg: &WarmupConfig<T>) -> T {
    let t = T::from_usize_(q.min(cfg.ramp_len)) / T::from_usize_(cfg.ramp_len);
    let phase = T::one() - t;
    cfg.lambda_max * (T::lit(-5.0) * phase * phase).exp()
}

/// The loss terms feeding the training objective. Labeled and unlabeled
/// segmentation terms are kept per network; the curriculum-weighted labeled
/// term and the unlabeled Fisher term are already summed over both networks.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossParts {
    pub l_labeled_n1: f64,
    pub l_labeled_n2: f64,
    pub l_unlabeled_n1: f64,
    pub l_unlabeled_n2: f64,
    pub l_weighted_labeled: f64,
    pub l_iedl_unlabeled: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub l_labeled_n1: f64,
    pub l_labeled_n2: f64,
    pub l_unlabeled_n1: f64,
    pub l_unlabeled_n2: f64,
    pub l_weighted_labeled: f64,
    pub l_iedl_unlabeled: f64,
    pub lambda_gwu: f64,
    pub total: f64,
}

/// `L_l + L_u + L_{w,l} + λ_GWU(q) · L_u^I`.
pub fn total_objective(parts: &LossParts, q: usize, warmup: &WarmupConfig<f64>) -> Result<LossBreakdown> {
    let named = [
        ("l_labeled_n1", parts.l_labeled_n1),
        ("l_labeled_n2", parts.l_labeled_n2),
        ("l_unlabeled_n1", parts.l_unlabeled_n1),
        ("l_unlabeled_n2", parts.l_unlabeled_n2),
        ("l_weighted_labeled", parts.l_weighted_labeled),
        ("l_iedl_unlabeled", parts.l_iedl_unlabeled),
    ];
    if let Some((name, v)) = named.iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{name} = {v}")));
    }
    let lambda_gwu = gaussian_warmup(q, warmup);
    let total = parts.l_labeled_n1
        + parts.l_labeled_n2
        + parts.l_unlabeled_n1
        + parts.l_unlabeled_n2
        + parts.l_weighted_labeled
        + lambda_gwu * parts.l_iedl_unlabeled;
    Ok(LossBreakdown {
        l_labeled_n1: parts.l_labeled_n1,
        l_labeled_n2: parts.l_labeled_n2,
        l_unlabeled_n1: parts.l_unlabeled_n1,
        l_unlabeled_n2: parts.l_unlabeled_n2,
        l_weighted_labeled: parts.l_weighted_labeled,
        l_iedl_unlabeled: parts.l_iedl_unlabeled,
        lambda_gwu,
        total,
    })
}
