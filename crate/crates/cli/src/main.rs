//! `medl` command-line tool: fuse evidence volumes, compute curriculum weights,
//! score segmentations, generate synthetic phantoms and run the toy training demo.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

use medl::curriculum::{CurriculumConfig, CurriculumWeights, RankOrder};
use medl::demo::{run_demo, DemoConfig, PipelineReport};
use medl::fusion::{fuse_volumes, FusionConfig, FusionRule};
use medl::metrics::{BinaryMask, MetricReport};
use medl::synth::{generate_phantom, BiasMode, PhantomSpec};
use medl::volume_io::{read_volume, write_volume, Dims, ScalarField, Volume};

#[derive(Parser)]
#[command(name = "medl", version, about = "Evidential fusion of two segmentation sources")]
struct Cli {
    /// Worker threads for voxel-parallel work (default: all cores).
    #[arg(long, global = true, env = "MEVL_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Rule {
    Caef,
    Ef,
}

#[derive(Clone, Copy, ValueEnum)]
enum Order {
    Asc,
    Desc,
}

#[derive(Clone, Copy, ValueEnum)]
enum Bias {
    None,
    Blur,
    Swap,
    Confusion,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Fuse two evidence volumes into pseudo-labels and a reliability map.
    Fuse {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, value_enum, default_value = "caef")]
        rule: Rule,
        /// Voxels with reliability below this are labeled contentious (65535).
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        /// Output label volume.
        #[arg(long)]
        out: PathBuf,
        /// Output reliability field.
        #[arg(long)]
        reliability: Option<PathBuf>,
    },
    /// Per-voxel curriculum weights from an uncertainty field.
    Weights {
        #[arg(long)]
        uncertainty: PathBuf,
        #[arg(long)]
        epoch: usize,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        total_epochs: u64,
        #[arg(long, default_value_t = 1.0)]
        xi: f64,
        #[arg(long, value_enum, default_value = "asc")]
        order: Order,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dice, Jaccard, 95% Hausdorff and average surface distance for one class.
    Metrics {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 1)]
        class: u16,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Train the toy two-network pipeline with and without the unlabeled losses.
    Demo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
        epochs: u64,
        #[arg(long, default_value_t = 0.1)]
        labeled_frac: f64,
        /// Peak weight of the unlabeled evidential loss.
        #[arg(long, default_value_t = 1.0)]
        lambda_max: f64,
        /// Also write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Write a synthetic ground truth and two biased evidence volumes.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Extent per axis.
        #[arg(long, default_value_t = 24)]
        size: usize,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 3)]
        blobs: usize,
        #[arg(long, default_value_t = 2.0)]
        gain: f64,
        #[arg(long, default_value_t = 0.5)]
        noise_a: f64,
        #[arg(long, default_value_t = 0.5)]
        noise_b: f64,
        #[arg(long, value_enum, default_value = "blur")]
        bias_a: Bias,
        #[arg(long, value_enum, default_value = "swap")]
        bias_b: Bias,
        /// Directory receiving gt.mev, evidence_a.mev and evidence_b.mev.
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn load(path: &Path) -> Result<Volume> {
    read_volume(path).with_context(|| format!("reading {}", path.display()))
}

fn save(volume: Volume, path: &Path) -> Result<()> {
    write_volume(&volume, path).with_context(|| format!("writing {}", path.display()))
}

fn report_json(r: &MetricReport) -> Value {
    // serde_json's default map is ordered by key.
    serde_json::to_value(r).expect("metric report serializes")
}

fn fuse(a: &Path, b: &Path, rule: Rule, threshold: f64, out: &Path, rel: Option<&Path>) -> Result<()> {
    let a = load(a)?.into_evidence()?;
    let b = load(b)?.into_evidence()?;
    let rule = match rule {
        Rule::Caef => FusionRule::ClassAware,
        Rule::Ef => FusionRule::Conventional,
    };
    let cfg = FusionConfig::new(rule, 0.5, 0.5)?;
    let fused = fuse_volumes(&a, &b, &cfg, threshold)?;
    save(fused.label_volume().into(), out)?;
    if let Some(p) = rel {
        save(fused.reliability_field().into(), p)?;
    }
    Ok(())
}

fn weights(path: &Path, epoch: usize, total: usize, xi: f64, order: Order, out: &Path) -> Result<()> {
    let field = load(path)?.into_scalar()?;
    let order = match order {
        Order::Asc => RankOrder::AscendingUncertainty,
        Order::Desc => RankOrder::DescendingUncertainty,
    };
    let cfg = CurriculumConfig::new(xi, total, order)?;
    let u: Vec<f64> = field.values().iter().map(|&v| v as f64).collect();
    let w = CurriculumWeights::compute(&u, epoch, &cfg)?;
    let values = w.weights.iter().map(|&x| x as f32).collect();
    save(ScalarField::new(field.dims(), field.spacing(), values)?.into(), out)
}

fn metrics(pred: &Path, gt: &Path, class: u16, format: Format) -> Result<()> {
    let pred = load(pred)?.into_labels()?;
    let gt = load(gt)?.into_labels()?;
    if pred.dims() != gt.dims() {
        bail!("prediction dims {:?} differ from ground truth dims {:?}", pred.dims(), gt.dims());
    }
    if class as usize >= gt.num_classes() {
        bail!("class {class} out of range for {} classes", gt.num_classes());
    }
    // Distances are measured with the ground-truth spacing.
    let spacing = gt.spacing().map(f64::from);
    let p = BinaryMask::new(pred.dims(), BinaryMask::from_labels(&pred, class).bits().to_vec(), spacing)?;
    let g = BinaryMask::from_labels(&gt, class);
    let report = MetricReport::compute(&p, &g)?;
    if report.hd95.is_none() {
        eprintln!("warning: class {class} is empty in prediction or ground truth; surface distances are undefined");
    }
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&report_json(&report))?),
        Format::Table => {
            let dist = |d: Option<f64>| d.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            println!("{:<8} {:>8} {:>8} {:>8} {:>8}", "class", "dice", "jaccard", "hd95", "asd");
            println!(
                "{:<8} {:>8.4} {:>8.4} {:>8} {:>8}",
                class,
                report.dice,
                report.jaccard,
                dist(report.hd95),
                dist(report.asd)
            );
        }
    }
    Ok(())
}

fn print_pipeline(name: &str, p: &PipelineReport) {
    println!("== {name}");
    println!(
        "{:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8} {:>10}",
        "epoch", "l_lab_1", "l_lab_2", "l_unl_1", "l_unl_2", "l_wlab", "l_iedl", "lambda", "total"
    );
    for (q, e) in p.epochs.iter().enumerate() {
        println!(
            "{:>5} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>8.4} {:>10.5}",
            q + 1,
            e.l_labeled_n1,
            e.l_labeled_n2,
            e.l_unlabeled_n1,
            e.l_unlabeled_n2,
            e.l_weighted_labeled,
            e.l_iedl_unlabeled,
            e.lambda_gwu,
            e.total
        );
    }
    for (c, m) in p.metrics.iter().enumerate() {
        println!("class {}: {}", c + 1, report_json(m));
    }
    println!("foreground dice: {:.4}", p.dice);
}

fn demo(seed: u64, epochs: usize, labeled_frac: f64, lambda_max: f64, json: Option<&Path>) -> Result<()> {
    let cfg = DemoConfig {
        seed,
        epochs,
        labeled_frac,
        lambda_max,
        ..Default::default()
    };
    let report = run_demo(&cfg)?;
    println!(
        "seed {} | {} labeled, {} unlabeled training volumes",
        report.seed, report.labeled, report.unlabeled
    );
    print_pipeline("labeled-only baseline", &report.baseline);
    print_pipeline("full objective", &report.medl);
    if let Some(path) = json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn bias(b: Bias) -> BiasMode {
    match b {
        Bias::None => BiasMode::None,
        Bias::Blur => BiasMode::BoundaryBlur,
        Bias::Swap => BiasMode::ClassSwapPatch,
        Bias::Confusion => BiasMode::ClassConfusion,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fuse {
            a,
            b,
            rule,
            threshold,
            out,
            reliability,
        } => fuse(&a, &b, rule, threshold, &out, reliability.as_deref()),
        Command::Weights {
            uncertainty,
            epoch,
            total_epochs,
            xi,
            order,
            out,
        } => weights(&uncertainty, epoch, total_epochs as usize, xi, order, &out),
        Command::Metrics {
            pred,
            gt,
            class,
            format,
        } => metrics(&pred, &gt, class, format),
        Command::Demo {
            seed,
            epochs,
            labeled_frac,
            lambda_max,
            json,
        } => demo(seed, epochs as usize, labeled_frac, lambda_max, json.as_deref()),
        Command::Synth {
            seed,
            size,
            classes,
            blobs,
            gain,
            noise_a,
            noise_b,
            bias_a,
            bias_b,
            out_dir,
        } => {
            let spec = PhantomSpec {
                dims: Dims::new(size, size, size),
                classes,
                blobs,
                gain,
                noise: [noise_a, noise_b],
                bias: [bias(bias_a), bias(bias_b)],
                seed,
                ..Default::default()
            };
            let p = generate_phantom(&spec)?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            save(p.gt.into(), &out_dir.join("gt.mev"))?;
            save(p.evidence_a.into(), &out_dir.join("evidence_a.mev"))?;
            save(p.evidence_b.into(), &out_dir.join("evidence_b.mev"))
        }
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors and 0 for --help/--version.
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
