//! The `hnet` command line. Exit codes: 0 success, 1 usage error, 2 runtime
//! error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};

use crate::classical::{self, BaselineConfig};
use crate::datagen::{self, synthetic, GenConfig, PairSet};
use crate::eval::{self, viz, Method};
use crate::geometry::{self, FourPointDelta, PatchFrame, Point2};
use crate::imaging::{pnm, AugmentConfig, GrayImage};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::train::{TrainConfig, Trainer, FINAL_CHECKPOINT};
use crate::nn::{gradcheck, homography_net, quant, Head, Network, Scale};
use crate::rng::{stream_rng, streams, Rng64};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "hnet", version, about = "Deep homography estimation", arg_required_else_help = true)]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel sections.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Log progress to stderr.
    #[arg(long, short, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a training or test pair dataset from an image corpus.
    GenData(GenDataArgs),
    /// Render a synthetic image corpus (PGM files).
    MakeCorpus(MakeCorpusArgs),
    /// Train a HomographyNet.
    Train(TrainArgs),
    /// Score a method on a dataset by Mean Average Corner Error.
    Eval(EvalArgs),
    /// Estimate corner offsets for one image pair with a trained network.
    Estimate(EstimateArgs),
    /// Estimate corner offsets for one image pair with features + RANSAC.
    Baseline(BaselineArgs),
    /// Render estimates for one dataset sample.
    Viz(VizArgs),
    /// Compare backpropagation with finite differences.
    GradCheck(GradCheckArgs),
    /// Run quick end-to-end consistency checks.
    SelfTest,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Train,
    Test,
    Desk,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Directory of source images.
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    count: usize,
    #[arg(long, value_enum, default_value_t = Preset::Train)]
    preset: Preset,
    #[arg(long)]
    patch_size: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    /// Resize corpus images first, e.g. 320x240; "none" keeps native size.
    #[arg(long)]
    resize: Option<String>,
    #[arg(long)]
    margin: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    blur: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    occlusions: usize,
}

#[derive(Debug, Args)]
struct MakeCorpusArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    #[arg(long, default_value_t = 320)]
    width: usize,
    #[arg(long, default_value_t = 240)]
    height: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum HeadArg {
    Reg,
    Cls,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScaleArg {
    Full,
    Desk,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value_t = HeadArg::Reg)]
    head: HeadArg,
    #[arg(long, value_enum, default_value_t = ScaleArg::Full)]
    scale: ScaleArg,
    /// Defaults: 90000 at full scale, 5000 at desk scale.
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Defaults: 0.005 full; 0.001 desk regression, 0.005 desk classification.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    #[arg(long, default_value_t = 0.1)]
    lr_decay: f64,
    /// Defaults: 30000 full, 4000 desk.
    #[arg(long)]
    decay_every: Option<u64>,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    /// Defaults: 0.5 full, 0 desk.
    #[arg(long)]
    dropout: Option<f64>,
    /// Save latest.hnet every N iterations (0 disables).
    #[arg(long, default_value_t = 5_000)]
    checkpoint_every: u64,
    /// Continue from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Net,
    Baseline,
    Identity,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Per-sample CSV report.
    #[arg(long)]
    out: PathBuf,
    /// Baseline output clamp.
    #[arg(long, default_value_t = 64.0)]
    clip: f64,
}

#[derive(Debug, Args)]
struct EstimateArgs {
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pair: Vec<PathBuf>,
    #[arg(long)]
    ckpt: PathBuf,
    /// With a classification network, write 21x21 confidence grids as
    /// `{STEM}_corner{1..4}.pgm`.
    #[arg(long)]
    grids: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[arg(long, num_args = 2, value_names = ["A", "B"])]
    pair: Vec<PathBuf>,
    #[arg(long, default_value_t = 64.0)]
    clip: f64,
}

#[derive(Debug, Args)]
struct VizArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    index: usize,
    /// Methods to overlay, comma separated.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "identity")]
    methods: Vec<MethodArg>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Output image: `.pgm` for grayscale, anything else is written as PPM.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 64.0)]
    clip: f64,
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    /// Sampled entries per tensor in the full-network check.
    #[arg(long, default_value_t = 16)]
    samples: usize,
}

/// Runs the CLI with process stdout.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_output(args, &mut std::io::stdout().lock())
}

/// Runs the CLI, writing results to `out` and diagnostics to stderr.
pub fn run_with_output<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    if cli.verbose {
        let _ = env_logger::Builder::new().filter_level(log::LevelFilter::Info).try_init();
    }
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return 1;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    // Output is buffered because the pool may run dispatch on a worker thread.
    let mut buf = Vec::new();
    let result = pool.install(|| dispatch(&cli, &mut buf));
    if out.write_all(&buf).and_then(|_| out.flush()).is_err() {
        return 2;
    }
    match result {
        Ok(code) => code,
        Err(Error::Other(msg)) if msg.starts_with("usage: ") => {
            eprintln!("error: {}", &msg[7..]);
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Other(format!("usage: {}", msg.into()))
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::GenData(a) => gen_data(a, cli.seed, out),
        Command::MakeCorpus(a) => {
            let paths = synthetic::write_corpus(&a.out, a.count, a.width, a.height, cli.seed)?;
            writeln!(out, "wrote {} images to {}", paths.len(), a.out.display())?;
            Ok(0)
        }
        Command::Train(a) => train(a, cli.seed, out),
        Command::Eval(a) => evaluate(a, cli.seed, out),
        Command::Estimate(a) => estimate(a, out),
        Command::Baseline(a) => {
            let (img_a, img_b) = load_pair(&a.pair)?;
            let mut rng = stream_rng(cli.seed, streams::RANSAC, 0);
            let d = classical::estimate_baseline(&img_a, &img_b, a.clip, &mut rng);
            print_delta(out, &d)?;
            Ok(0)
        }
        Command::Viz(a) => visualize(a, cli.seed, out),
        Command::GradCheck(a) => grad_check(a, cli.seed, out),
        Command::SelfTest => self_test(cli.seed, out),
    }
}

fn print_delta(out: &mut dyn Write, d: &FourPointDelta) -> std::io::Result<()> {
    let s: Vec<String> = d.d.iter().map(|x| format!("{x:.4}")).collect();
    writeln!(out, "{}", s.join(" "))
}

fn load_pair(paths: &[PathBuf]) -> Result<(GrayImage, GrayImage)> {
    let [a, b] = paths else {
        return Err(usage("--pair takes two image paths"));
    };
    Ok((pnm::load_gray(a)?, pnm::load_gray(b)?))
}

fn parse_resize(s: &str) -> Result<Option<(usize, usize)>> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(None);
    }
    let bad = || usage(format!("--resize expects WxH or none, got {s}"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    Ok(Some((w.parse().map_err(|_| bad())?, h.parse().map_err(|_| bad())?)))
}

fn gen_data(a: &GenDataArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = match a.preset {
        Preset::Train => GenConfig::train(seed),
        Preset::Test => GenConfig::test(seed),
        Preset::Desk => GenConfig::desk(seed),
    };
    if let Some(p) = a.patch_size {
        cfg.patch_size = p;
    }
    if let Some(r) = a.rho {
        cfg.rho = r;
        if a.margin.is_none() {
            cfg.border_margin = r.ceil() as usize;
        }
    }
    if let Some(m) = a.margin {
        cfg.border_margin = m;
    }
    if let Some(r) = &a.resize {
        cfg.resize_to = parse_resize(r)?;
    }
    cfg.augment = AugmentConfig {
        blur_sigma: a.blur,
        noise_sigma: a.noise,
        occlusion_count: a.occlusions,
        ..AugmentConfig::default()
    };
    if let Err(e) = cfg.validate() {
        return Err(usage(e.to_string()));
    }
    let m = datagen::generate_dataset(&a.corpus, &cfg, &a.out, a.count)?;
    writeln!(
        out,
        "wrote {} pairs ({} px, rho {}) from {} images to {}",
        m.count,
        m.patch_size,
        m.rho,
        m.sources.len(),
        a.out.display()
    )?;
    Ok(0)
}

fn train(a: &TrainArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let head_hint = match a.head {
        HeadArg::Reg => Head::Regression,
        HeadArg::Cls => Head::Classification { rho: 0.0 },
    };
    let base = match a.scale {
        ScaleArg::Full => TrainConfig::full(seed),
        ScaleArg::Desk => TrainConfig::desk_for(head_hint, seed),
    };
    let cfg = TrainConfig {
        lr0: a.lr.unwrap_or(base.lr0),
        momentum: a.momentum,
        lr_decay: a.lr_decay,
        decay_every: a.decay_every.unwrap_or(base.decay_every),
        total_iters: a.iters.unwrap_or(base.total_iters),
        batch: a.batch,
        dropout_p: a.dropout.unwrap_or(base.dropout_p),
        seed,
        checkpoint_every: a.checkpoint_every,
    };
    if let Err(e) = cfg.validate() {
        return Err(usage(e.to_string()));
    }
    let data = PairSet::load(&a.data)?;
    let mut trainer = match &a.resume {
        Some(p) => Trainer::resume(Checkpoint::load(p)?, cfg)?,
        None => {
            let head = match a.head {
                HeadArg::Reg => Head::Regression,
                HeadArg::Cls => Head::Classification { rho: data.rho },
            };
            let mut scale = match a.scale {
                ScaleArg::Full => Scale::Full,
                ScaleArg::Desk => Scale::Desk,
            }
            .config();
            scale.dropout = cfg.dropout_p;
            let spec = homography_net(head, &Scale::Custom(scale))?;
            Trainer::new(Network::new(spec, seed)?, cfg)?
        }
    };
    let start = Instant::now();
    let curve = trainer.run(&data, Some(&a.out))?;
    let last = curve.last().map_or(f64::NAN, |p| p.loss);
    writeln!(
        out,
        "trained to iteration {} in {:.1}s, final loss {last:.4}; wrote {}",
        trainer.iteration,
        start.elapsed().as_secs_f64(),
        a.out.join(FINAL_CHECKPOINT).display()
    )?;
    Ok(0)
}

fn method_for(m: MethodArg, ckpt: Option<&Path>, clip: f64, seed: u64) -> Result<Method> {
    Ok(match m {
        MethodArg::Identity => Method::Identity,
        MethodArg::Baseline => Method::Baseline {
            config: BaselineConfig {
                clip,
                ..BaselineConfig::default()
            },
            seed,
        },
        MethodArg::Net => {
            let p = ckpt.ok_or_else(|| usage("--method net needs --ckpt"))?;
            Method::Network(Box::new(Checkpoint::load(p)?.net))
        }
    })
}

fn evaluate(a: &EvalArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let method = method_for(a.method, a.ckpt.as_deref(), a.clip, seed)?;
    let rec = eval::evaluate_dir(&method, &a.data)?;
    rec.write_csv(&a.out)?;
    writeln!(
        out,
        "{}: MACE {:.4} px over {} samples; wrote {}",
        rec.method,
        rec.mace,
        rec.corner_errors.len(),
        a.out.display()
    )?;
    Ok(0)
}

fn estimate(a: &EstimateArgs, out: &mut dyn Write) -> Result<i32> {
    let (img_a, img_b) = load_pair(&a.pair)?;
    let net = Checkpoint::load(&a.ckpt)?.net;
    let p = net.predict(&img_a, &img_b)?;
    print_delta(out, &p.delta)?;
    if let Some(stem) = &a.grids {
        let dec = p
            .decoded
            .as_ref()
            .ok_or_else(|| usage("--grids needs a classification checkpoint"))?;
        for path in viz::write_confidence_grids(dec, stem)? {
            writeln!(out, "wrote {}", path.display())?;
        }
    }
    Ok(0)
}

fn visualize(a: &VizArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let manifest = datagen::read_manifest(&a.data)?;
    if a.index >= manifest.count {
        return Err(usage(format!("--index {} outside dataset of {}", a.index, manifest.count)));
    }
    let sample = datagen::load_dataset(&a.data)?
        .nth(a.index)
        .expect("index checked against manifest")?;
    let mut overlays = Vec::new();
    for m in &a.methods {
        let overlay = match m {
            MethodArg::Identity => viz::Overlay {
                delta: FourPointDelta::ZERO,
                matches: Vec::new(),
            },
            MethodArg::Baseline => {
                let cfg = BaselineConfig {
                    clip: a.clip,
                    ..BaselineConfig::default()
                };
                let mut rng = stream_rng(seed, streams::RANSAC, a.index as u64);
                let r = classical::run_baseline(&sample.patch_a, &sample.patch_b, &cfg, &mut rng);
                viz::Overlay {
                    delta: r.delta,
                    matches: r.matches,
                }
            }
            MethodArg::Net => {
                let p = a.ckpt.as_deref().ok_or_else(|| usage("--methods net needs --ckpt"))?;
                let pred = Checkpoint::load(p)?.net.predict(&sample.patch_a, &sample.patch_b)?;
                if let Some(dec) = &pred.decoded {
                    for path in viz::write_confidence_grids(dec, &a.out.with_extension(""))? {
                        writeln!(out, "wrote {}", path.display())?;
                    }
                }
                viz::Overlay {
                    delta: pred.delta,
                    matches: Vec::new(),
                }
            }
        };
        overlays.push(overlay);
    }
    viz::save(&viz::render(&sample, &overlays), &a.out)?;
    writeln!(out, "wrote {}", a.out.display())?;
    Ok(0)
}

fn grad_check(a: &GradCheckArgs, seed: u64, out: &mut dyn Write) -> Result<i32> {
    let mut results = gradcheck::check_all_layers(seed)?;
    results.push(gradcheck::check_desk_network(Head::Regression, a.samples, seed)?);
    results.push(gradcheck::check_desk_network(Head::Classification { rho: 8.0 }, a.samples, seed)?);
    let mut ok = true;
    for r in &results {
        ok &= r.passed();
        writeln!(
            out,
            "{:<28} max relative error {:.3e} (< {:.0e}) {}",
            r.name,
            r.max_rel_error,
            r.threshold,
            if r.passed() { "ok" } else { "FAILED" }
        )?;
    }
    Ok(if ok { 0 } else { 2 })
}

fn self_test(seed: u64, out: &mut dyn Write) -> Result<i32> {
    let mut ok = true;
    let mut report = |name: &str, pass: bool, detail: String| -> std::io::Result<()> {
        ok &= pass;
        writeln!(out, "{} {name}: {detail}", if pass { "PASS" } else { "FAIL" })
    };
    let mut rng = Rng64::seed_from_u64(seed);

    let frame = PatchFrame::local(128)?;
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = FourPointDelta::new(std::array::from_fn(|_| rng.random_range(-32.0..=32.0)));
        let back = geometry::matrix_to_four_point(&geometry::four_point_to_matrix(&d, &frame)?, &frame)?;
        worst = worst.max(d.d.iter().zip(back.d).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    report("four-point round trip", worst < 1e-6, format!("max error {worst:.2e} px"))?;

    let cfg = GenConfig::desk(seed);
    let corpus = datagen::Corpus::from_images(synthetic::scenes(8, 80, 60, seed), &cfg)?;
    let set = corpus.triplets(&cfg, 0..200)?;
    let mut worst: f64 = 0.0;
    for t in &set {
        worst = worst.max(t.corner_consistency_error()?);
    }
    let in_range = set.iter().all(|t| t.label.max_abs() <= cfg.rho);
    report(
        "pair generation",
        worst < 1e-6 && in_range,
        format!("corner oracle {worst:.2e} px, labels in range: {in_range}"),
    )?;

    let mut violations = 0;
    for _ in 0..10_000 {
        let d = FourPointDelta::new(std::array::from_fn(|_| rng.random_range(-32.0..=32.0)));
        let bins = quant::encode_label(&d, 32.0)?;
        for (b, x) in bins.iter().zip(d.d) {
            if (quant::bin_center(*b, 32.0) - x).abs() > quant::bin_width(32.0) / 2.0 + 1e-9 {
                violations += 1;
            }
        }
    }
    report("bin round trip", violations == 0, format!("{violations} violations"))?;

    let layers = gradcheck::check_all_layers(seed)?;
    let worst = layers.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    report(
        "layer gradients",
        layers.iter().all(|r| r.passed()),
        format!("max relative error {worst:.2e}"),
    )?;

    let img = synthetic::render_scene(220, 160, &mut stream_rng(seed, streams::SCENE, 1_000_000));
    let fa = PatchFrame::new(Point2::new(40.0, 16.0), 128)?;
    let fb = PatchFrame::new(Point2::new(45.0, 16.0), 128)?;
    let (a, b) = (crate::imaging::crop(&img, &fa)?, crate::imaging::crop(&img, &fb)?);
    let d = classical::estimate_baseline(&a, &b, 64.0, &mut stream_rng(seed, streams::RANSAC, 0));
    let err = (0..4)
        .map(|c| {
            let (u, v) = d.corner(c);
            (u - 5.0).hypot(v)
        })
        .fold(0.0, f64::max);
    report("baseline translation", err < 1.0, format!("max corner error {err:.3} px"))?;

    Ok(if ok { 0 } else { 2 })
}
