//! A small end-to-end training run on synthetic phantoms.
//!
//! Two per-voxel linear evidential classifiers see different features of the
//! same image: network A uses the voxel intensity and its 3×3×3 mean, network
//! B uses the intensity, its face-neighbour mean and radial-basis position
//! features. Both output evidence
//! `softplus(W f)` and are trained by plain gradient descent.
//!
//! The baseline pipeline trains on labeled volumes only (Dice + CE plus the
//! curriculum-weighted CE term). The full pipeline additionally fuses the two
//! networks on unlabeled volumes, uses the reliable fused labels as pseudo
//! labels for Dice + CE, and adds the warmed-up Fisher-weighted evidential loss.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::curriculum::{CurriculumConfig, CurriculumWeights, RankOrder};
use crate::error::{Error, Result};
use crate::fusion::{blend_uncertainty, fuse_volumes, FusionConfig, FusionRule};
use crate::losses::{
    aggregate_unlabeled_iedl, iedl_voxel_grad, iedl_voxel_loss, total_objective, weighted_cross_entropy_grad,
    weighted_cross_entropy_loss, weighted_dice_grad, weighted_dice_loss, IedlConfig, LossBreakdown, LossParts,
    WarmupConfig,
};
use crate::edl::DirichletParams;
use crate::metrics::{foreground_dice, BinaryMask, MetricReport};
use crate::synth::{generate_phantom, GaussianSource, PhantomSpec};
use crate::volume_io::{Dims, EvidenceMap, LabelVolume};

#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Fraction of the training volumes that come with labels; at least one
    /// volume is always labeled.
    pub labeled_frac: f64,
    /// Peak weight of the unlabeled evidential loss.
    pub lambda_max: f64,
    pub lambda_fisher: f64,
    pub xi: f64,
    pub train_volumes: usize,
    pub dims: Dims,
    pub classes: usize,
    pub learning_rate: f64,
    /// Fused voxels below this reliability are not used as pseudo labels.
    pub reliability_threshold: f64,
    pub intensity_noise: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 50,
            labeled_frac: 0.1,
            lambda_max: 1.0,
            lambda_fisher: 0.1,
            xi: 0.5,
            train_volumes: 10,
            dims: Dims::new(12, 12, 12),
            classes: 2,
            learning_rate: 20.0,
            reliability_threshold: 0.8,
            intensity_noise: 0.6,
        }
    }
}

impl DemoConfig {
    fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::OutOfRange("epochs must be >= 1".into()));
        }
        if !(self.labeled_frac > 0.0 && self.labeled_frac <= 1.0) {
            return Err(Error::OutOfRange(format!(
                "labeled fraction {} not in (0, 1]",
                self.labeled_frac
            )));
        }
        if self.train_volumes == 0 {
            return Err(Error::OutOfRange("need at least one training volume".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::OutOfRange("learning rate must be > 0".into()));
        }
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            // Larger amplitudes can make curriculum weights negative.
            return Err(Error::OutOfRange(format!("xi {} not in (0, 1]", self.xi)));
        }
        Ok(())
    }

    pub fn labeled_count(&self) -> usize {
        ((self.labeled_frac * self.train_volumes as f64).round() as usize).clamp(1, self.train_volumes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineReport {
    /// Mean loss terms over the iterations of each epoch.
    pub epochs: Vec<LossBreakdown>,
    /// Mean foreground Dice of the fused prediction on the held-out phantom.
    pub dice: f64,
    /// Per foreground class, in class order starting at 1.
    pub metrics: Vec<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DemoReport {
    pub seed: u64,
    pub labeled: usize,
    pub unlabeled: usize,
    pub baseline: PipelineReport,
    pub medl: PipelineReport,
}

/// Feature matrix (voxel-major) and labels for one phantom.
struct Sample {
    feats: [Vec<f64>; 2],
    labels: Vec<usize>,
    gt: LabelVolume,
}

/// Radial basis centres per axis for network B's position features.
const GRID: usize = 3;
const RBF_WIDTH: f64 = 0.5;
const FEATURES: [usize; 2] = [3, 3 + GRID * GRID * GRID];

fn local_mean(values: &[f64], dims: Dims, v: usize) -> f64 {
    let (i, j, k) = dims.coords(v);
    let range = |x: usize, n: usize| x.saturating_sub(1)..(x + 2).min(n);
    let (mut sum, mut n) = (0.0, 0usize);
    for a in range(i, dims.h) {
        for b in range(j, dims.w) {
            for c in range(k, dims.l) {
                sum += values[dims.index(a, b, c)];
                n += 1;
            }
        }
    }
    sum / n as f64
}

/// Mean over the voxel and its face neighbours inside the volume.
fn face_mean(values: &[f64], dims: Dims, v: usize) -> f64 {
    let (i, j, k) = dims.coords(v);
    let (mut sum, mut n) = (values[v], 1usize);
    let mut visit = |a: usize, b: usize, c: usize| {
        sum += values[dims.index(a, b, c)];
        n += 1;
    };
    if i > 0 {
        visit(i - 1, j, k);
    }
    if i + 1 < dims.h {
        visit(i + 1, j, k);
    }
    if j > 0 {
        visit(i, j - 1, k);
    }
    if j + 1 < dims.w {
        visit(i, j + 1, k);
    }
    if k > 0 {
        visit(i, j, k - 1);
    }
    if k + 1 < dims.l {
        visit(i, j, k + 1);
    }
    sum / n as f64
}

fn make_sample(cfg: &DemoConfig, seed: u64) -> Result<Sample> {
    let spec = PhantomSpec {
        dims: cfg.dims,
        classes: cfg.classes,
        intensity_noise: cfg.intensity_noise,
        seed,
        ..Default::default()
    };
    let p = generate_phantom(&spec)?;
    let dims = cfg.dims;
    let n = dims.voxel_count();
    let norm = |x: usize, ext: usize| 2.0 * (x as f64 + 0.5) / ext as f64 - 1.0;
    let mut fa = Vec::with_capacity(n * FEATURES[0]);
    let mut fb = Vec::with_capacity(n * FEATURES[1]);
    for v in 0..n {
        let x = p.intensity[v];
        fa.extend([1.0, x, local_mean(&p.intensity, dims, v)]);
        let (i, j, k) = dims.coords(v);
        let c = [norm(i, dims.h), norm(j, dims.w), norm(k, dims.l)];
        fb.extend([1.0, x, face_mean(&p.intensity, dims, v)]);
        let centre = |g: usize| 2.0 * g as f64 / (GRID - 1) as f64 - 1.0;
        for a in 0..GRID {
            for b in 0..GRID {
                for d in 0..GRID {
                    let r2 = (c[0] - centre(a)).powi(2) + (c[1] - centre(b)).powi(2) + (c[2] - centre(d)).powi(2);
                    fb.push((-r2 / (2.0 * RBF_WIDTH * RBF_WIDTH)).exp());
                }
            }
        }
    }
    Ok(Sample {
        feats: [fa, fb],
        labels: p.gt.labels().iter().map(|&l| l as usize).collect(),
        gt: p.gt,
    })
}

fn softplus(z: f64) -> f64 {
    if z > 30.0 {
        z
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Linear evidential classifier: `e = softplus(W f)`, `W` is `K × F`.
#[derive(Debug, Clone)]
struct Net {
    classes: usize,
    features: usize,
    weights: Vec<f64>,
}

/// Per-voxel outputs of one forward pass, voxel-major.
struct Forward {
    logits: Vec<f64>,
    alpha: Vec<f64>,
    prob: Vec<f64>,
    strength: Vec<f64>,
}

impl Net {
    fn new(classes: usize, features: usize, rng: &mut GaussianSource) -> Self {
        let weights = (0..classes * features).map(|_| 0.01 * rng.standard_normal()).collect();
        Self {
            classes,
            features,
            weights,
        }
    }

    fn forward(&self, feats: &[f64]) -> Forward {
        let (k, f) = (self.classes, self.features);
        let n = feats.len() / f;
        let mut out = Forward {
            logits: Vec::with_capacity(n * k),
            alpha: Vec::with_capacity(n * k),
            prob: Vec::with_capacity(n * k),
            strength: Vec::with_capacity(n),
        };
        for x in feats.chunks(f) {
            let start = out.alpha.len();
            for c in 0..k {
                let z: f64 = self.weights[c * f..(c + 1) * f].iter().zip(x).map(|(w, x)| w * x).sum();
                out.logits.push(z);
                out.alpha.push(softplus(z) + 1.0);
            }
            let s: f64 = out.alpha[start..].iter().sum();
            out.strength.push(s);
            out.prob.extend(out.alpha[start..].iter().map(|a| a / s));
        }
        out
    }

    fn evidence_map(&self, fwd: &Forward, dims: Dims) -> Result<EvidenceMap> {
        let e: Vec<f64> = fwd.alpha.iter().map(|a| a - 1.0).collect();
        Ok(EvidenceMap::from_voxel_major(dims, self.classes, [1.0; 3], &e)?)
    }

    /// Chains `dL/dp` and `dL/dα` back to the weights and takes one step.
    fn step(&mut self, fwd: &Forward, feats: &[f64], grad_p: &[f64], grad_alpha: &[f64], lr: f64) {
        let (k, f) = (self.classes, self.features);
        let mut gw = vec![0.0; k * f];
        for (v, x) in feats.chunks(f).enumerate() {
            let row = v * k..(v + 1) * k;
            let p = &fwd.prob[row.clone()];
            let gp = &grad_p[row.clone()];
            let dot: f64 = gp.iter().zip(p).map(|(g, p)| g * p).sum();
            for c in 0..k {
                let i = v * k + c;
                let ga = (gp[c] - dot) / fwd.strength[v] + grad_alpha[i];
                let gz = ga * sigmoid(fwd.logits[i]);
                for (w, xf) in gw[c * f..(c + 1) * f].iter_mut().zip(x) {
                    *w += gz * xf;
                }
            }
        }
        for (w, g) in self.weights.iter_mut().zip(gw) {
            *w -= lr * g;
        }
    }
}

fn add(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Uncertainty `K/S` of one network, blended with the fused uncertainty.
fn blended_uncertainty(fwd: &Forward, classes: usize, fused_u: &[f64], fcfg: &FusionConfig<f64>) -> Vec<f64> {
    fwd.strength
        .iter()
        .zip(fused_u)
        .map(|(s, &fu)| blend_uncertainty(classes as f64 / s, fu, fcfg))
        .collect()
}

struct Context<'a> {
    cfg: &'a DemoConfig,
    curriculum: CurriculumConfig<f64>,
    warmup: WarmupConfig<f64>,
    iedl: IedlConfig<f64>,
    fusion: FusionConfig<f64>,
}

impl Context<'_> {
    /// One gradient step on both networks; returns the loss terms before the step.
    fn iterate(
        &self,
        nets: &mut [Net; 2],
        labeled: &Sample,
        unlabeled: Option<&Sample>,
        epoch: usize,
    ) -> Result<LossParts> {
        let cfg = self.cfg;
        let k = cfg.classes;
        let dims = cfg.dims;
        let n = dims.voxel_count();
        let lambda = crate::losses::gaussian_warmup(epoch, &self.warmup);
        let mut parts = LossParts::default();

        let fl = [nets[0].forward(&labeled.feats[0]), nets[1].forward(&labeled.feats[1])];
        let fused_l = fuse_volumes(
            &nets[0].evidence_map(&fl[0], dims)?,
            &nets[1].evidence_map(&fl[1], dims)?,
            &self.fusion,
            0.0,
        )?;
        let fused_u_l = fused_l.uncertainty();

        let mut grad_p = [vec![0.0; n * k], vec![0.0; n * k]];
        // Labeled terms act only through p.
        let grad_a = vec![0.0; n * k];
        for j in 0..2 {
            let p = &fl[j].prob;
            let y = &labeled.labels;
            let sup = weighted_dice_loss(p, y, k, None)? + weighted_cross_entropy_loss(p, y, k, None)?;
            if j == 0 {
                parts.l_labeled_n1 = sup;
            } else {
                parts.l_labeled_n2 = sup;
            }
            add(&mut grad_p[j], &weighted_dice_grad(p, y, k, None)?);
            add(&mut grad_p[j], &weighted_cross_entropy_grad(p, y, k, None)?);

            let u = blended_uncertainty(&fl[j], k, &fused_u_l, &self.fusion);
            let omega = CurriculumWeights::compute(&u, epoch, &self.curriculum)?.weights;
            parts.l_weighted_labeled += weighted_cross_entropy_loss(p, y, k, Some(&omega))?;
            add(&mut grad_p[j], &weighted_cross_entropy_grad(p, y, k, Some(&omega))?);
        }

        let fu = match unlabeled {
            Some(s) => {
                let fu = [nets[0].forward(&s.feats[0]), nets[1].forward(&s.feats[1])];
                let fused = fuse_volumes(
                    &nets[0].evidence_map(&fu[0], dims)?,
                    &nets[1].evidence_map(&fu[1], dims)?,
                    &self.fusion,
                    cfg.reliability_threshold,
                )?;
                let rel = fused.pseudo_label_weights();
                let fused_unc = fused.uncertainty();
                let pseudo: Vec<usize> = fused
                    .voxels()
                    .iter()
                    .map(|v| v.hard_label.class().unwrap_or_else(|| v.masses.argmax()))
                    .collect();
                let mut gpu = [vec![0.0; n * k], vec![0.0; n * k]];
                let mut gau = [vec![0.0; n * k], vec![0.0; n * k]];
                for j in 0..2 {
                    let p = &fu[j].prob;
                    let unsup = weighted_dice_loss(p, &pseudo, k, Some(&rel))?
                        + weighted_cross_entropy_loss(p, &pseudo, k, Some(&rel))?;
                    if j == 0 {
                        parts.l_unlabeled_n1 = unsup;
                    } else {
                        parts.l_unlabeled_n2 = unsup;
                    }
                    add(&mut gpu[j], &weighted_dice_grad(p, &pseudo, k, Some(&rel))?);
                    add(&mut gpu[j], &weighted_cross_entropy_grad(p, &pseudo, k, Some(&rel))?);

                    let u = blended_uncertainty(&fu[j], k, &fused_unc, &self.fusion);
                    let omega = CurriculumWeights::compute(&u, epoch, &self.curriculum)?.weights;
                    let mut losses = Vec::with_capacity(n);
                    for v in 0..n {
                        let alpha = DirichletParams::new(fu[j].alpha[v * k..(v + 1) * k].to_vec())?;
                        let mut y = vec![0.0; k];
                        y[pseudo[v]] = 1.0;
                        let w = omega[v] * rel[v];
                        losses.push(iedl_voxel_loss(&alpha, &y, w, &self.iedl)?);
                        if lambda > 0.0 && w > 0.0 {
                            let g = iedl_voxel_grad(&alpha, &y, w, &self.iedl)?;
                            for c in 0..k {
                                gau[j][v * k + c] = lambda * g[c] / n as f64;
                            }
                        }
                    }
                    parts.l_iedl_unlabeled += aggregate_unlabeled_iedl(&losses, n)?;
                }
                Some((fu, gpu, gau))
            }
            None => None,
        };

        for j in 0..2 {
            nets[j].step(&fl[j], &labeled.feats[j], &grad_p[j], &grad_a, cfg.learning_rate);
        }
        if let (Some((fwd, gp, ga)), Some(s)) = (fu, unlabeled) {
            for j in 0..2 {
                nets[j].step(&fwd[j], &s.feats[j], &gp[j], &ga[j], cfg.learning_rate);
            }
        }
        Ok(parts)
    }
}

fn mean_parts(parts: &[LossParts]) -> LossParts {
    let n = parts.len() as f64;
    let mut m = LossParts::default();
    for p in parts {
        m.l_labeled_n1 += p.l_labeled_n1 / n;
        m.l_labeled_n2 += p.l_labeled_n2 / n;
        m.l_unlabeled_n1 += p.l_unlabeled_n1 / n;
        m.l_unlabeled_n2 += p.l_unlabeled_n2 / n;
        m.l_weighted_labeled += p.l_weighted_labeled / n;
        m.l_iedl_unlabeled += p.l_iedl_unlabeled / n;
    }
    m
}

fn evaluate(nets: &[Net; 2], test: &Sample, cfg: &DemoConfig, fusion: &FusionConfig<f64>) -> Result<(f64, Vec<MetricReport>)> {
    let f = [nets[0].forward(&test.feats[0]), nets[1].forward(&test.feats[1])];
    let fused = fuse_volumes(
        &nets[0].evidence_map(&f[0], cfg.dims)?,
        &nets[1].evidence_map(&f[1], cfg.dims)?,
        fusion,
        0.0,
    )?;
    let pred = fused.label_volume();
    let dice = foreground_dice(pred.labels(), test.gt.labels(), cfg.classes)?;
    let metrics = (1..cfg.classes as u16)
        .map(|c| MetricReport::compute(&BinaryMask::from_labels(&pred, c), &BinaryMask::from_labels(&test.gt, c)))
        .collect::<Result<Vec<_>>>()?;
    Ok((dice, metrics))
}

fn train(
    cfg: &DemoConfig,
    labeled: &[Sample],
    unlabeled: &[Sample],
    test: &Sample,
    semi_supervised: bool,
) -> Result<PipelineReport> {
    let ctx = Context {
        cfg,
        curriculum: CurriculumConfig::new(cfg.xi, cfg.epochs, RankOrder::AscendingUncertainty)?,
        warmup: WarmupConfig::for_total(cfg.lambda_max, cfg.epochs)?,
        iedl: IedlConfig::new(cfg.lambda_fisher)?,
        fusion: FusionConfig::new(FusionRule::ClassAware, 0.5, 0.5)?,
    };
    let mut init = GaussianSource::from_rng(ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed));
    let mut nets = [
        Net::new(cfg.classes, FEATURES[0], &mut init),
        Net::new(cfg.classes, FEATURES[1], &mut init),
    ];
    // Both pipelines take the same number of labeled steps per epoch.
    let use_unlabeled = semi_supervised && !unlabeled.is_empty();
    let iters = labeled.len().max(unlabeled.len());
    let mut epochs = Vec::with_capacity(cfg.epochs);
    for q in 1..=cfg.epochs {
        let mut parts = Vec::with_capacity(iters);
        for it in 0..iters {
            let u = use_unlabeled.then(|| &unlabeled[it % unlabeled.len()]);
            parts.push(ctx.iterate(&mut nets, &labeled[it % labeled.len()], u, q)?);
        }
        epochs.push(total_objective(&mean_parts(&parts), q, &ctx.warmup)?);
    }
    let (dice, metrics) = evaluate(&nets, test, cfg, &ctx.fusion)?;
    Ok(PipelineReport { epochs, dice, metrics })
}

/// Trains the baseline and the full pipeline from the same initialization and
/// data, and scores both on a held-out phantom.
pub fn run_demo(cfg: &DemoConfig) -> Result<DemoReport> {
    cfg.validate()?;
    let base = cfg.seed.wrapping_mul(1_000_003);
    let samples = (0..=cfg.train_volumes)
        .map(|i| make_sample(cfg, base.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let (train_set, test) = samples.split_at(cfg.train_volumes);
    let (labeled, unlabeled) = train_set.split_at(cfg.labeled_count());
    let baseline = train(cfg, labeled, unlabeled, &test[0], false)?;
    let medl = train(cfg, labeled, unlabeled, &test[0], true)?;
    Ok(DemoReport {
        seed: cfg.seed,
        labeled: labeled.len(),
        unlabeled: unlabeled.len(),
        baseline,
        medl,
    })
}
