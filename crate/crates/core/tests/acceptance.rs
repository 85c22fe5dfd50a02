//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use medl::curriculum::{omega, CurriculumConfig, CurriculumWeights, RankOrder};
use medl::demo::{run_demo, DemoConfig};
use medl::edl::{evidence_to_belief, DirichletParams, EvidenceVector, Gpma};
use medl::fusion::{caef_fuse_voxel, ef_fuse_voxel, fuse_volumes, reliability, FusionConfig, FusionRule};
use medl::losses::{fisher_determinant, fisher_log_determinant, iedl_voxel_grad, iedl_voxel_loss, IedlConfig};
use medl::metrics::{asd, dice, foreground_dice, hd95, jaccard, BinaryMask};
use medl::numeric::argmax;
use medl::special::trigamma;
use medl::synth::{generate_phantom, BiasMode, PhantomSpec};
use medl::volume_io::{
    read_volume, write_volume, Dims, EvidenceMap, LabelVolume, ScalarField, Volume, VolumeError, HEADER_LEN,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, t: Instant) -> (bool, String) {
    let e = t.elapsed();
    (e < limit, format!("{:.2}s of {}s", e.as_secs_f64(), limit.as_secs()))
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Evidence spanning many magnitudes, with exact zeros mixed in.
fn random_evidence(r: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k)
        .map(|_| {
            if r.gen_bool(0.15) {
                0.0
            } else {
                10f64.powf(r.gen_range(-6.0..6.0))
            }
        })
        .collect()
}

/// Random point on the (K+1)-simplex, some masses zero.
fn random_gpma(r: &mut ChaCha8Rng, k: usize) -> Gpma<f64> {
    let mut w: Vec<f64> = (0..=k)
        .map(|_| if r.gen_bool(0.1) { 0.0 } else { r.gen::<f64>().powi(2) })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[k] = 1.0;
    }
    let s: f64 = w.iter().sum();
    let u = w.pop().unwrap() / s;
    Gpma::new(w.into_iter().map(|x| x / s).collect(), u).unwrap()
}

/// Masses that are multiples of 2^-20 summing to exactly one.
fn dyadic_gpma(r: &mut ChaCha8Rng, k: usize) -> Gpma<f64> {
    let total = 1u64 << 20;
    let mut cuts: Vec<u64> = (0..k).map(|_| r.gen_range(0..=total)).collect();
    cuts.sort_unstable();
    let mut prev = 0;
    let mut parts = Vec::with_capacity(k + 1);
    for c in cuts {
        parts.push((c - prev) as f64 / total as f64);
        prev = c;
    }
    let u = (total - prev) as f64 / total as f64;
    Gpma::new(parts, u).unwrap()
}

// ---------------------------------------------------------------------------

fn simplex_conservation() -> Outcome {
    let t = Instant::now();
    let mut failures = 0;
    let mut worst: f64 = 0.0;
    for (i, k) in [2usize, 3, 4, 8].into_iter().enumerate() {
        let mut r = rng(100 + i as u64);
        for _ in 0..100_000 {
            let b = evidence_to_belief(&EvidenceVector::new(random_evidence(&mut r, k)).unwrap());
            let dev = (b.belief().iter().sum::<f64>() + b.uncertainty() - 1.0).abs();
            worst = worst.max(dev);
            if dev > 1e-12 {
                failures += 1;
            }
        }
    }
    let (fast, time) = within(Duration::from_secs(5), t);
    outcome(
        failures == 0 && fast,
        format!("4 x 10^5 vectors, {failures} failures, max |sum - 1| = {worst:.1e}, {time}"),
    )
}

/// Dempster-style combination over explicit focal sets: every pair of focal
/// elements contributes to its intersection, with pairs that reach a singleton
/// through the full set scaled by `interaction`; empty intersections are dropped.
fn brute_force_fuse(a: &Gpma<f64>, b: &Gpma<f64>, interaction: f64) -> Vec<f64> {
    let k = a.num_classes();
    let full: u32 = (1 << k) - 1;
    let focal = |g: &Gpma<f64>| -> Vec<(u32, f64)> {
        let mut v: Vec<(u32, f64)> = g.singletons().iter().enumerate().map(|(n, &m)| (1 << n, m)).collect();
        v.push((full, g.multiset()));
        v
    };
    let mut mass = vec![0.0; k + 1];
    for (x, mx) in focal(a) {
        for (y, my) in focal(b) {
            let inter = x & y;
            if inter == 0 {
                continue;
            }
            let through_full = (x == full) != (y == full);
            let w = mx * my * if through_full { interaction } else { 1.0 };
            let slot = if inter == full { k } else { inter.trailing_zeros() as usize };
            mass[slot] += w;
        }
    }
    let total: f64 = mass.iter().sum();
    mass.iter().map(|m| m / total).collect()
}

fn caef_oracle() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut asymmetric = 0;
    for k in [2usize, 3, 4] {
        let mut r = rng(200 + k as u64);
        for _ in 0..1000 {
            let (a, b) = (random_gpma(&mut r, k), random_gpma(&mut r, k));
            let Ok(ab) = caef_fuse_voxel(&a, &b) else { continue };
            let expected = brute_force_fuse(&a, &b, 1.0 / (1.0 + k as f64));
            for (got, want) in ab.singletons().iter().chain([&ab.multiset()]).zip(&expected) {
                worst = worst.max((got - want).abs());
            }
            if caef_fuse_voxel(&b, &a).unwrap() != ab {
                asymmetric += 1;
            }
        }
    }
    let (fast, time) = within(Duration::from_secs(5), t);
    outcome(
        worst <= 1e-10 && asymmetric == 0 && fast,
        format!("3000 pairs, max |diff| = {worst:.1e}, {asymmetric} non-commuting, {time}"),
    )
}

fn vacuous_behaviour() -> Outcome {
    let mut inexact = 0;
    let mut moved_argmax = 0;
    let mut worst_general: f64 = 0.0;
    let mut r = rng(300);
    for i in 0..1000 {
        let k = 2 + i % 7;
        let v = Gpma::<f64>::vacuous(k);
        let a = dyadic_gpma(&mut r, k);
        if ef_fuse_voxel(&a, &v).unwrap() != a || ef_fuse_voxel(&v, &a).unwrap() != a {
            inexact += 1;
        }
        let g = random_gpma(&mut r, k);
        let f = ef_fuse_voxel(&g, &v).unwrap();
        for (x, y) in f.singletons().iter().zip(g.singletons()) {
            worst_general = worst_general.max((x - y).abs());
        }
        if caef_fuse_voxel(&g, &v).unwrap().argmax() != g.argmax() {
            moved_argmax += 1;
        }
    }
    outcome(
        inexact == 0 && moved_argmax == 0,
        format!(
            "EF identity: {inexact}/1000 inexact on exactly-normalized inputs (max dev {worst_general:.1e} on \
             rounded inputs); CAEF argmax moved on {moved_argmax}/1000"
        ),
    )
}

fn reliability_criterion() -> Outcome {
    let mut r = rng(400);
    let mut out_of_range = 0;
    for i in 0..20_000 {
        let k = 2 + i % 5;
        let (a, b) = (random_gpma(&mut r, k), random_gpma(&mut r, k));
        for rule in [FusionRule::ClassAware, FusionRule::Conventional] {
            let f = match rule {
                FusionRule::ClassAware => caef_fuse_voxel(&a, &b),
                FusionRule::Conventional => ef_fuse_voxel(&a, &b),
            };
            if let Ok(f) = f {
                let rel = reliability(&f);
                if !(rel > 0.0 && rel <= 1.0) {
                    out_of_range += 1;
                }
            }
        }
    }
    // 40-digit evaluation of exp(0.2 * 0.8 * log2(0.4)).
    let want: f64 = 0.809_362_405_342_601_148_1;
    let got = reliability(&Gpma::new(vec![0.4, 0.4], 0.2).unwrap());
    outcome(
        out_of_range == 0 && (got - want).abs() < 1e-5,
        format!("{out_of_range} values outside (0, 1]; R(0.4, 0.4; 0.2) = {got:.10} vs {want:.10}"),
    )
}

fn curriculum_criterion() -> Outcome {
    let mut midpoint_bad = 0;
    let mut bound_bad = 0;
    let mut points = 0usize;
    for (xi, q_total, v) in [(1.0, 1000usize, 1000usize), (0.3, 500, 600), (0.75, 100, 1000)] {
        let cfg = CurriculumConfig::new(xi, q_total, RankOrder::AscendingUncertainty).unwrap();
        for q in 1..=q_total {
            for h in 1..=v {
                let w = omega(q, h, v, &cfg).unwrap();
                points += 1;
                if !(w > 1.0 - xi && w < 1.0 + xi) {
                    bound_bad += 1;
                }
                if 2 * q == q_total && w != 1.0 {
                    midpoint_bad += 1;
                }
            }
        }
    }
    let mut r = rng(500);
    let mut order_bad = 0;
    for _ in 0..200 {
        let u: Vec<f64> = (0..64).map(|_| r.gen()).collect();
        let cfg = CurriculumConfig::new(1.0, 40, RankOrder::AscendingUncertainty).unwrap();
        let w = CurriculumWeights::compute(&u, 1, &cfg).unwrap().weights;
        let least = u.iter().enumerate().min_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
        if argmax(&w) != Some(least) {
            order_bad += 1;
        }
    }
    outcome(
        midpoint_bad == 0 && bound_bad == 0 && order_bad == 0 && points >= 1_000_000,
        format!(
            "{points} grid points: {bound_bad} outside (1 - xi, 1 + xi), {midpoint_bad} midpoint != 1; \
             least-uncertain voxel not top-weighted at q = 1 in {order_bad}/200"
        ),
    )
}

fn gradient_check() -> Outcome {
    let t = Instant::now();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    let mut checks = 0;
    for (li, lambda) in [0.0, 0.1, 1.0].into_iter().enumerate() {
        let cfg = IedlConfig::new(lambda).unwrap();
        let mut r = rng(600 + li as u64);
        for i in 0..200 {
            let k = 2 + i % 3;
            let alpha: Vec<f64> = (0..k).map(|_| 1.0 + 10f64.powf(r.gen_range(-1.5..1.5))).collect();
            let mut y = vec![0.0; k];
            y[r.gen_range(0..k)] = 1.0;
            let w = r.gen_range(0.2..1.8);
            let loss = |a: &[f64]| iedl_voxel_loss(&DirichletParams::new(a.to_vec()).unwrap(), &y, w, &cfg).unwrap();
            let g = iedl_voxel_grad(&DirichletParams::new(alpha.clone()).unwrap(), &y, w, &cfg).unwrap();
            for j in 0..k {
                let (mut up, mut dn) = (alpha.clone(), alpha.clone());
                up[j] += h;
                dn[j] -= h;
                let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
                let rel = (g[j] - fd).abs() / fd.abs().max(g[j].abs()).max(1e-8);
                worst = worst.max(rel);
                checks += 1;
                if rel >= 1e-4 {
                    failures += 1;
                }
            }
        }
    }
    let (fast, time) = within(Duration::from_secs(10), t);
    outcome(
        failures == 0 && fast,
        format!("{checks} components over 600 draws, {failures} failures, max rel err {worst:.1e}, {time}"),
    )
}

/// Determinant by LU decomposition with partial pivoting.
fn dense_determinant(mut m: Vec<Vec<f64>>) -> f64 {
    let n = m.len();
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].abs().partial_cmp(&m[b][c].abs()).unwrap()).unwrap();
        if m[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            m.swap(p, c);
            det = -det;
        }
        det *= m[c][c];
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for j in c..n {
                m[r][j] -= f * m[c][j];
            }
        }
    }
    det
}

fn fisher_determinant_criterion() -> Outcome {
    let mut r = rng(700);
    let mut worst: f64 = 0.0;
    let mut nonpositive = 0;
    let mut bad_log = 0;
    for i in 0..10_000 {
        let k = 2 + i % 7;
        let alpha: Vec<f64> = (0..k).map(|_| 1.0 + 10f64.powf(r.gen_range(-2.0..1.7))).collect();
        let s: f64 = alpha.iter().sum();
        let ts = trigamma(s);
        let dense: Vec<Vec<f64>> = (0..k)
            .map(|a| (0..k).map(|b| if a == b { trigamma(alpha[a]) - ts } else { -ts }).collect())
            .collect();
        let p = DirichletParams::new(alpha).unwrap();
        let det = fisher_determinant(&p);
        worst = worst.max((det - dense_determinant(dense)).abs());
        if !(det > 0.0) {
            nonpositive += 1;
        }
        if !fisher_log_determinant(&p).is_finite() {
            bad_log += 1;
        }
    }
    outcome(
        worst <= 1e-10 && nonpositive == 0 && bad_log == 0,
        format!("10^4 draws, max |det - dense| = {worst:.1e}, {nonpositive} non-positive, {bad_log} non-finite logs"),
    )
}

/// Foreground voxels with at least one of the six neighbours outside the mask
/// or outside the volume.
fn oracle_surface(bits: &[bool], d: [usize; 3]) -> Vec<[usize; 3]> {
    let at = |i: isize, j: isize, k: isize| -> bool {
        if i < 0 || j < 0 || k < 0 || i >= d[0] as isize || j >= d[1] as isize || k >= d[2] as isize {
            return false;
        }
        bits[(i as usize * d[1] + j as usize) * d[2] + k as usize]
    };
    let mut out = Vec::new();
    for i in 0..d[0] as isize {
        for j in 0..d[1] as isize {
            for k in 0..d[2] as isize {
                if !at(i, j, k) {
                    continue;
                }
                let steps = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
                if steps.iter().any(|&(a, b, c)| !at(i + a, j + b, k + c)) {
                    out.push([i as usize, j as usize, k as usize]);
                }
            }
        }
    }
    out
}

fn oracle_directed(from: &[[usize; 3]], to: &[[usize; 3]], sp: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|p| {
            to.iter()
                .map(|q| {
                    (0..3)
                        .map(|a| ((p[a] as f64 - q[a] as f64) * sp[a]).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn oracle_p95(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = 0.95 * (v.len() - 1) as f64;
    let i = pos as usize;
    if i + 1 < v.len() {
        v[i] * (1.0 - (pos - i as f64)) + v[i + 1] * (pos - i as f64)
    } else {
        v[i]
    }
}

fn metrics_criterion() -> Outcome {
    let mut r = rng(800);
    let mut worst_hd: f64 = 0.0;
    let mut worst_asd: f64 = 0.0;
    let mut worst_identity: f64 = 0.0;
    let mut pairs = 0;
    while pairs < 200 {
        let d = [r.gen_range(2..=12), r.gen_range(2..=12), r.gen_range(2..=12)];
        let sp = [r.gen_range(0.3..2.5), r.gen_range(0.3..2.5), r.gen_range(0.3..2.5)];
        let n = d[0] * d[1] * d[2];
        let (pa, pb) = (r.gen_range(0.05..0.7), r.gen_range(0.05..0.7));
        let a: Vec<bool> = (0..n).map(|_| r.gen_bool(pa)).collect();
        let b: Vec<bool> = (0..n).map(|_| r.gen_bool(pb)).collect();
        if !a.contains(&true) || !b.contains(&true) {
            continue;
        }
        pairs += 1;
        let dims = Dims::new(d[0], d[1], d[2]);
        let ma = BinaryMask::new(dims, a.clone(), sp).unwrap();
        let mb = BinaryMask::new(dims, b.clone(), sp).unwrap();
        let (sa, sb) = (oracle_surface(&a, d), oracle_surface(&b, d));
        let ab = oracle_directed(&sa, &sb, sp);
        let ba = oracle_directed(&sb, &sa, sp);
        let want_hd = oracle_p95(ab.clone()).max(oracle_p95(ba.clone()));
        let want_asd = (ab.iter().sum::<f64>() + ba.iter().sum::<f64>()) / (ab.len() + ba.len()) as f64;
        worst_hd = worst_hd.max((hd95(&ma, &mb).unwrap() - want_hd).abs());
        worst_asd = worst_asd.max((asd(&ma, &mb).unwrap() - want_asd).abs());
        let dc = dice(&ma, &mb).unwrap();
        let jc = jaccard(&ma, &mb).unwrap();
        worst_identity = worst_identity.max((jc - dc / (2.0 - dc)).abs());
    }
    outcome(
        worst_hd <= 1e-9 && worst_asd <= 1e-9 && worst_identity <= 1e-12,
        format!(
            "200 pairs: max hd95 err {worst_hd:.1e}, max asd err {worst_asd:.1e}, \
             max |J - D/(2-D)| {worst_identity:.1e}"
        ),
    )
}

fn fusion_helps() -> Outcome {
    let t = Instant::now();
    let classes = 3;
    let rows: Vec<(f64, f64, f64, f64)> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let spec = PhantomSpec {
                dims: Dims::new(24, 24, 24),
                classes,
                blobs: 4,
                gain: 2.0,
                noise: [0.5, 0.5],
                bias: [BiasMode::BoundaryBlur, BiasMode::ClassConfusion],
                seed,
                ..Default::default()
            };
            let p = generate_phantom(&spec).unwrap();
            let gt = p.gt.labels();
            let single = |m: &EvidenceMap| -> Vec<u16> {
                (0..gt.len()).map(|v| argmax(&m.voxel_evidence(v)).unwrap() as u16).collect()
            };
            let fused = |rule| {
                let cfg = FusionConfig::new(rule, 0.5, 0.5).unwrap();
                let map = fuse_volumes(&p.evidence_a, &p.evidence_b, &cfg, 0.0).unwrap();
                map.labels().iter().map(|l| l.to_u16()).collect::<Vec<_>>()
            };
            (
                foreground_dice(&fused(FusionRule::ClassAware), gt, classes).unwrap(),
                foreground_dice(&fused(FusionRule::Conventional), gt, classes).unwrap(),
                foreground_dice(&single(&p.evidence_a), gt, classes).unwrap(),
                foreground_dice(&single(&p.evidence_b), gt, classes).unwrap(),
            )
        })
        .collect();
    let wins = rows.iter().filter(|(c, _, a, b)| *c >= a.max(*b)).count();
    let mean = |f: fn(&(f64, f64, f64, f64)) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
    let (mc, me) = (mean(|r| r.0), mean(|r| r.1));
    let (fast, time) = within(Duration::from_secs(60), t);
    outcome(
        wins * 5 >= rows.len() * 4 && mc >= me && fast,
        format!(
            "CAEF >= best single source on {wins}/50; mean Dice CAEF {mc:.4}, EF {me:.4}, a {:.4}, b {:.4}; {time}",
            mean(|r| r.2),
            mean(|r| r.3)
        ),
    )
}

fn demo_criterion() -> Outcome {
    let t = Instant::now();
    let reports: Vec<_> = (0..20u64)
        .into_par_iter()
        .map(|seed| run_demo(&DemoConfig { seed, ..Default::default() }).unwrap())
        .collect();
    let wins = reports.iter().filter(|r| r.medl.dice > r.baseline.dice).count();
    let losses_ok = reports.iter().all(|r| {
        [&r.baseline, &r.medl].iter().all(|p| {
            p.epochs.iter().all(|e| e.total.is_finite())
                && p.epochs.last().unwrap().total < p.epochs.first().unwrap().total
        })
    });
    let full = run_demo(&DemoConfig {
        seed: 3,
        labeled_frac: 1.0,
        lambda_max: 0.0,
        ..Default::default()
    })
    .unwrap();
    let identical = full.baseline == full.medl;
    let mean = |f: fn(&medl::demo::DemoReport) -> f64| reports.iter().map(f).sum::<f64>() / 20.0;
    let (fast, time) = within(Duration::from_secs(300), t);
    outcome(
        wins * 10 >= 20 * 7 && losses_ok && identical && fast,
        format!(
            "MEDL > baseline on {wins}/20 (mean Dice {:.4} vs {:.4}); losses finite and decreasing: {losses_ok}; \
             labeled-frac 1 / lambda 0 identical: {identical}; {time}",
            mean(|r| r.medl.dice),
            mean(|r| r.baseline.dice)
        ),
    )
}

fn random_volume(r: &mut ChaCha8Rng) -> Volume {
    let dims = Dims::new(r.gen_range(1..7), r.gen_range(1..7), r.gen_range(1..7));
    let n = dims.voxel_count();
    let spacing = [r.gen_range(0.1f32..3.0), r.gen_range(0.1f32..3.0), r.gen_range(0.1f32..3.0)];
    match r.gen_range(0..3) {
        0 => {
            let k = r.gen_range(2..6);
            let data = (0..n * k).map(|_| r.gen_range(0.0f32..50.0)).collect();
            EvidenceMap::new(dims, k, spacing, data).unwrap().into()
        }
        1 => {
            let k = r.gen_range(1..5);
            let labels = (0..n)
                .map(|_| if r.gen_bool(0.1) { u16::MAX } else { r.gen_range(0..k as u16) })
                .collect();
            LabelVolume::new(dims, k, spacing, labels).unwrap().into()
        }
        _ => {
            let values = (0..n).map(|_| r.gen_range(-5.0f32..5.0)).collect();
            ScalarField::new(dims, spacing, values).unwrap().into()
        }
    }
}

fn io_criterion() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(1100);
    let mut mismatched = 0;
    for i in 0..100 {
        let v = random_volume(&mut r);
        let bytes = v.to_bytes().unwrap();
        let path = dir.path().join(format!("v{i}.mev"));
        write_volume(&v, &path).unwrap();
        let back = read_volume(&path).unwrap();
        let rewritten = dir.path().join(format!("w{i}.mev"));
        write_volume(&back, &rewritten).unwrap();
        if back != v || std::fs::read(&path).unwrap() != bytes || std::fs::read(&rewritten).unwrap() != bytes {
            mismatched += 1;
        }
    }

    let good = Volume::from(EvidenceMap::new(Dims::new(2, 2, 2), 2, [1.0; 3], vec![0.5; 16]).unwrap())
        .to_bytes()
        .unwrap();
    let patched = |at: usize, with: &[u8]| {
        let mut b = good.clone();
        b[at..at + with.len()].copy_from_slice(with);
        b
    };
    let code = |bytes: &[u8]| Volume::from_bytes(bytes).err().map(|e| e.code());
    let cases: Vec<(&str, Option<u8>, Option<u8>)> = vec![
        ("bad magic", code(&patched(0, b"XXXX")), Some(2)),
        ("short header", code(&good[..HEADER_LEN - 1]), Some(2)),
        ("bad version", code(&patched(4, &7u32.to_le_bytes())), Some(2)),
        ("unknown kind", code(&patched(8, &[9])), Some(2)),
        ("zero extent", code(&patched(13, &0u32.to_le_bytes())), Some(2)),
        ("bad spacing", code(&patched(25, &(-1.0f32).to_le_bytes())), Some(2)),
        ("unknown dtype", code(&patched(37, &[7])), Some(2)),
        ("15 of 16 floats", code(&good[..good.len() - 4]), Some(3)),
        ("trailing bytes", code(&[good.as_slice(), &[0, 0]].concat()), Some(3)),
        ("evidence with u16 payload", code(&patched(37, &[1])), Some(4)),
        (
            "labels read as evidence",
            Volume::from(LabelVolume::new(Dims::new(1, 1, 2), 2, [1.0; 3], vec![0, 1]).unwrap())
                .into_evidence()
                .err()
                .map(|e| e.code()),
            Some(4),
        ),
        (
            "missing file",
            read_volume(dir.path().join("absent.mev")).err().map(|e| e.code()),
            Some(1),
        ),
        (
            "NaN to CSV",
            medl::volume_io::export_csv(
                &ScalarField::new(Dims::new(1, 1, 1), [1.0; 3], vec![f32::NAN]).unwrap(),
                dir.path().join("nan.csv"),
            )
            .err()
            .map(|e: VolumeError| e.code()),
            Some(5),
        ),
    ];
    let wrong: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| got != want)
        .map(|(name, got, want)| format!("{name}: got {got:?}, want {want:?}"))
        .collect();
    outcome(
        mismatched == 0 && wrong.is_empty(),
        format!(
            "100 round trips, {mismatched} not byte-identical; {}/{} malformed cases with the expected code{}",
            cases.len() - wrong.len(),
            cases.len(),
            if wrong.is_empty() { String::new() } else { format!(" ({})", wrong.join("; ")) }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("simplex conservation", simplex_conservation),
        ("CAEF matches brute-force combination", caef_oracle),
        ("vacuous partner behaviour", vacuous_behaviour),
        ("reliability range and reference value", reliability_criterion),
        ("curriculum weights", curriculum_criterion),
        ("evidential loss gradient", gradient_check),
        ("Fisher determinant", fisher_determinant_criterion),
        ("surface metrics against all-pairs oracle", metrics_criterion),
        ("fusion helps on synthetic phantoms", fusion_helps),
        ("semi-supervised demo beats labeled-only", demo_criterion),
        ("volume I/O round trip and rejection", io_criterion),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({})",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
