//! `cutpaste`: command line frontend for the synthesis library.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags, unknown
//! subcommands), 2 for runtime failures (missing files, invalid configs,
//! failed generation).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use cutpaste_core::evaluation::{self, ApMode, Detection, GroundTruth};
use cutpaste_core::imaging::{load_image, load_mask, rle_to_mask, save_image, save_mask, Image};
use cutpaste_core::inpaint::{
    generate_freeform_mask, inpaint_patchmatch, inpaint_via_service, FreeformParams,
    StubFill, StubOptions, StubServer,
};
use cutpaste_core::morphology::{gap_mask, GapMode, SeShape, StructElem};
use cutpaste_core::synthesis::{dry_run, generate_dataset, DatasetManifest, SynthConfig};
use cutpaste_core::{PatchMatchParams, ServiceEndpoint};

#[derive(Parser)]
#[command(
    name = "cutpaste",
    version,
    about = "Cut-and-paste dataset synthesis, seam repair, and evaluation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset from a JSON config.
    Synth(SynthArgs),
    /// Estimate a background plate as the per-pixel temporal median.
    Bgmedian(BgmedianArgs),
    /// Compute the blending-gap band for a single object mask.
    Gapmask(GapmaskArgs),
    /// Fill masked pixels of an image with an inpainting backend.
    Inpaint(InpaintArgs),
    /// Draw a random free-form hole mask.
    Freeform(FreeformArgs),
    /// Score predictions against ground truth.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Render one manifest group as a side-by-side comparison strip.
    Preview(PreviewArgs),
    /// Serve the stub inpainting service over HTTP.
    StubServer(StubServerArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Synthesis config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's image count.
    #[arg(long)]
    num_images: Option<u32>,
    /// Override the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Override the config's background directory.
    #[arg(long)]
    background_dir: Option<PathBuf>,
    /// Override the config's cutout directory.
    #[arg(long)]
    cutout_dir: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// Validate config and assets and plan all scenes without rendering.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct BgmedianArgs {
    /// Directory of frames (PNG or JPEG), ordered by file name.
    #[arg(long)]
    frames_dir: PathBuf,
    /// Use at most this many frames from the start of the sequence.
    #[arg(long, default_value_t = 50)]
    window: usize,
    /// Output image path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum)]
enum ShapeArg {
    Square,
    Disc,
}

#[derive(Copy, Clone, ValueEnum)]
enum ModeArg {
    Instance,
    Foreground,
}

#[derive(Args)]
struct GapmaskArgs {
    /// Object mask image (nonzero pixels are the object).
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Instance)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = ShapeArg::Square)]
    shape: ShapeArg,
    /// Outward (dilation) radius.
    #[arg(long, default_value_t = 3)]
    r_out: u32,
    /// Inward (erosion) radius, unused in foreground mode.
    #[arg(long, default_value_t = 3)]
    r_in: u32,
    /// Output mask path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum)]
enum BackendArg {
    Patchmatch,
    Service,
}

#[derive(Args)]
struct InpaintArgs {
    /// Input image.
    #[arg(long)]
    image: PathBuf,
    /// Hole mask (nonzero pixels get filled).
    #[arg(long)]
    mask: PathBuf,
    /// Output image path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = BackendArg::Patchmatch)]
    backend: BackendArg,
    /// PatchMatch: odd patch side length.
    #[arg(long, default_value_t = 7)]
    patch_size: u32,
    /// PatchMatch: sweeps per pyramid level.
    #[arg(long, default_value_t = 5)]
    iters: u32,
    /// PatchMatch: RNG seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Service: base URL.
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    url: String,
    /// Service: per-request timeout in milliseconds.
    #[arg(long, default_value_t = 30_000)]
    timeout_ms: u64,
    /// Service: retries after the first attempt.
    #[arg(long, default_value_t = 2)]
    retries: u32,
}

#[derive(Args)]
struct FreeformArgs {
    #[arg(long, default_value_t = 256)]
    width: u32,
    #[arg(long, default_value_t = 256)]
    height: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Lower bound on hole area as a fraction of the image.
    #[arg(long)]
    min_coverage: Option<f64>,
    /// Upper bound on hole area as a fraction of the image.
    #[arg(long)]
    max_coverage: Option<f64>,
    /// Output mask path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Detection average precision from JSON box files.
    Detect(DetectArgs),
    /// Foreground segmentation F-measure from mask directories.
    Fgseg(FgsegArgs),
}

#[derive(Copy, Clone, ValueEnum)]
enum ApModeArg {
    AllPoints,
    ElevenPoint,
}

#[derive(Args)]
struct DetectArgs {
    /// Ground truth JSON: {"categories": [...], "boxes": [...]}.
    #[arg(long)]
    gt: PathBuf,
    /// Detections JSON: a list of scored boxes.
    #[arg(long)]
    pred: PathBuf,
    /// IoU threshold for a match.
    #[arg(long, default_value_t = 0.5)]
    iou: f64,
    #[arg(long, value_enum, default_value_t = ApModeArg::AllPoints)]
    ap_mode: ApModeArg,
    /// Emit the full report as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct FgsegArgs {
    /// Directory of predicted masks.
    #[arg(long)]
    pred_dir: PathBuf,
    /// Directory of ground-truth masks with matching file names.
    #[arg(long)]
    gt_dir: PathBuf,
    /// Optional directory of ignore masks with matching file names.
    #[arg(long)]
    ignore_dir: Option<PathBuf>,
    /// Emit the scores as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct PreviewArgs {
    /// Dataset manifest path.
    #[arg(long)]
    manifest: PathBuf,
    /// Group id to render, e.g. 000012.
    #[arg(long)]
    group: String,
    /// Output image path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Copy, Clone, ValueEnum)]
enum FillArg {
    Gray,
    Echo,
    Blur,
}

#[derive(Args)]
struct StubServerArgs {
    /// Port to bind on 127.0.0.1 (0 picks a free port).
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, value_enum, default_value_t = FillArg::Gray)]
    fill: FillArg,
    /// Respond 500 to this many requests before serving normally.
    #[arg(long, default_value_t = 0)]
    fail_first: u32,
    /// Delay every response by this many milliseconds.
    #[arg(long, default_value_t = 0)]
    delay_ms: u64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.cmd {
        Command::Synth(args) => cmd_synth(args),
        Command::Bgmedian(args) => cmd_bgmedian(args),
        Command::Gapmask(args) => cmd_gapmask(args),
        Command::Inpaint(args) => cmd_inpaint(args),
        Command::Freeform(args) => cmd_freeform(args),
        Command::Eval(EvalCommand::Detect(args)) => cmd_eval_detect(args),
        Command::Eval(EvalCommand::Fgseg(args)) => cmd_eval_fgseg(args),
        Command::Preview(args) => cmd_preview(args),
        Command::StubServer(args) => cmd_stub_server(args),
    }
}

fn cmd_synth(args: SynthArgs) -> anyhow::Result<()> {
    let mut cfg = SynthConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.num_images {
        cfg.num_images = n;
    }
    if let Some(dir) = args.output_dir {
        cfg.output_dir = dir;
    }
    if let Some(dir) = args.background_dir {
        cfg.background_dir = dir;
    }
    if let Some(dir) = args.cutout_dir {
        cfg.cutout_dir = dir;
    }

    if args.dry_run {
        let report = dry_run(&cfg)?;
        println!(
            "dry run ok: {} scenes planned over {} backgrounds and {} cutouts, {} objects total",
            report.scenes_planned, report.backgrounds, report.cutouts, report.planned_objects
        );
        if !report.failures.is_empty() {
            println!("{} scenes would fail:", report.failures.len());
            for f in report.failures.iter().take(10) {
                println!("  scene {}: {}", f.group_id, f.error);
            }
        }
        return Ok(());
    }

    let manifest = generate_dataset(&cfg, args.workers)?;
    println!(
        "wrote {} images in {} groups to {}",
        manifest.images.len(),
        manifest.groups.len(),
        cfg.output_dir.display()
    );
    if !manifest.failures.is_empty() {
        println!("{} scenes failed (see manifest.json):", manifest.failures.len());
        for f in manifest.failures.iter().take(10) {
            println!("  scene {}: {}", f.group_id, f.error);
        }
    }
    Ok(())
}

fn cmd_bgmedian(args: BgmedianArgs) -> anyhow::Result<()> {
    anyhow::ensure!(args.window >= 1, "--window must be at least 1");
    let mut frames: Vec<PathBuf> = std::fs::read_dir(&args.frames_dir)
        .with_context(|| format!("cannot list {}", args.frames_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
                    Some(ref e) if e == "png" || e == "jpg" || e == "jpeg"
                )
        })
        .collect();
    frames.sort();
    frames.truncate(args.window);
    anyhow::ensure!(
        !frames.is_empty(),
        "no frames found in {}",
        args.frames_dir.display()
    );
    let images = frames
        .iter()
        .map(load_image)
        .collect::<Result<Vec<Image>, _>>()?;
    let plate = cutpaste_core::background::median_background(&images)?;
    save_image(&plate, &args.out)?;
    println!("median of {} frames written to {}", images.len(), args.out.display());
    Ok(())
}

fn cmd_gapmask(args: GapmaskArgs) -> anyhow::Result<()> {
    let mask = load_mask(&args.mask)?;
    let shape = match args.shape {
        ShapeArg::Square => SeShape::Square,
        ShapeArg::Disc => SeShape::Disc,
    };
    let mode = match args.mode {
        ModeArg::Instance => GapMode::Instance,
        ModeArg::Foreground => GapMode::Foreground,
    };
    anyhow::ensure!(args.r_out >= 1 && args.r_in >= 1, "radii must be at least 1");
    let gap = gap_mask(
        &mask,
        mode,
        StructElem::new(shape, args.r_out),
        StructElem::new(shape, args.r_in),
    );
    save_mask(&gap, &args.out)?;
    println!("gap band: {} pixels, written to {}", gap.count(), args.out.display());
    Ok(())
}

fn cmd_inpaint(args: InpaintArgs) -> anyhow::Result<()> {
    let image = load_image(&args.image)?;
    let mask = load_mask(&args.mask)?;
    let filled = match args.backend {
        BackendArg::Patchmatch => {
            let params = PatchMatchParams {
                patch_size: args.patch_size,
                iters_per_level: args.iters,
                seed: args.seed,
                ..PatchMatchParams::default()
            };
            inpaint_patchmatch(&image, &mask, &params)?
        }
        BackendArg::Service => {
            let ep = ServiceEndpoint {
                url: args.url.clone(),
                timeout_ms: args.timeout_ms,
                retries: args.retries,
                ..ServiceEndpoint::default()
            };
            inpaint_via_service(&ep, &image, &mask)?
        }
    };
    save_image(&filled, &args.out)?;
    println!("filled {} pixels, written to {}", mask.count(), args.out.display());
    Ok(())
}

fn cmd_freeform(args: FreeformArgs) -> anyhow::Result<()> {
    use rand::SeedableRng;
    let mut params = FreeformParams {
        width: args.width,
        height: args.height,
        ..FreeformParams::default()
    };
    if let Some(lo) = args.min_coverage {
        params.coverage[0] = lo;
    }
    if let Some(hi) = args.max_coverage {
        params.coverage[1] = hi;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
    let mask = generate_freeform_mask(&params, &mut rng)?;
    save_mask(&mask, &args.out)?;
    let coverage = mask.count() as f64 / (f64::from(args.width) * f64::from(args.height));
    println!("hole covers {:.1}% of {}x{}, written to {}",
        coverage * 100.0, args.width, args.height, args.out.display());
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &PathBuf) -> anyhow::Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn cmd_eval_detect(args: DetectArgs) -> anyhow::Result<()> {
    let gt: GroundTruth = read_json(&args.gt)?;
    let dets: Vec<Detection> = read_json(&args.pred)?;
    let mode = match args.ap_mode {
        ApModeArg::AllPoints => ApMode::AllPoints,
        ApModeArg::ElevenPoint => ApMode::ElevenPoint,
    };
    let report = evaluation::average_precision(&dets, &gt, args.iou, mode)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report)?);
    } else {
        for (cat, ap) in &report.per_category {
            println!("AP[{cat}] = {ap:.4}");
        }
        println!("mAP = {:.4}", report.mean_ap);
        for cat in &report.unknown_categories {
            eprintln!("warning: detections for unknown category {cat:?} were ignored");
        }
    }
    Ok(())
}

fn cmd_eval_fgseg(args: FgsegArgs) -> anyhow::Result<()> {
    let mut preds: Vec<PathBuf> = std::fs::read_dir(&args.pred_dir)
        .with_context(|| format!("cannot list {}", args.pred_dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "png"))
        .collect();
    preds.sort();
    anyhow::ensure!(!preds.is_empty(), "no masks found in {}", args.pred_dir.display());

    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut fn_ = 0u64;
    for pred_path in &preds {
        let name = pred_path.file_name().unwrap();
        let gt_path = args.gt_dir.join(name);
        anyhow::ensure!(
            gt_path.is_file(),
            "no ground truth mask for {}",
            pred_path.display()
        );
        let pred = load_mask(pred_path)?;
        let gt = load_mask(&gt_path)?;
        let ignore = match &args.ignore_dir {
            Some(dir) => {
                let p = dir.join(name);
                if p.is_file() {
                    load_mask(&p)?
                } else {
                    cutpaste_core::BinaryMask::new(gt.width(), gt.height())
                }
            }
            None => cutpaste_core::BinaryMask::new(gt.width(), gt.height()),
        };
        let score = evaluation::f_measure(&pred, &gt, &ignore)?;
        tp += score.true_positives;
        fp += score.false_positives;
        fn_ += score.false_negatives;
    }
    let total = evaluation::PixelScore::from_counts(tp, fp, fn_);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&total)?);
    } else {
        println!(
            "frames: {}  TP: {}  FP: {}  FN: {}",
            preds.len(),
            total.true_positives,
            total.false_positives,
            total.false_negatives
        );
        println!(
            "precision = {:.4}  recall = {:.4}  F = {:.4}",
            total.precision, total.recall, total.f_measure
        );
    }
    Ok(())
}

fn cmd_preview(args: PreviewArgs) -> anyhow::Result<()> {
    let manifest = DatasetManifest::load(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(std::path::Path::new("."));
    let members: Vec<_> = manifest
        .images
        .iter()
        .filter(|i| i.group_id == args.group)
        .collect();
    anyhow::ensure!(!members.is_empty(), "group {} not in manifest", args.group);
    let group = manifest
        .groups
        .iter()
        .find(|g| g.group_id == args.group)
        .with_context(|| format!("group {} has no gap entry", args.group))?;
    let gap = rle_to_mask(&group.gap)?;

    let images = members
        .iter()
        .map(|m| load_image(base.join(&m.file)))
        .collect::<Result<Vec<Image>, _>>()?;
    let w = images[0].width();
    let h = images[0].height();
    anyhow::ensure!(
        images.iter().all(|i| i.width() == w && i.height() == h)
            && gap.width() == w
            && gap.height() == h,
        "group members disagree on dimensions"
    );

    // Members side by side, then the gap band as a white-on-black panel,
    // with 4px separators.
    let sep = 4u32;
    let panels = images.len() as u32 + 1;
    let total_w = panels * w + (panels - 1) * sep;
    let mut strip = Image::new(total_w, h);
    for (i, img) in images.iter().enumerate() {
        let x0 = i as u32 * (w + sep);
        for y in 0..h {
            for x in 0..w {
                strip.set(x0 + x, y, img.get(x, y));
            }
        }
    }
    let x0 = images.len() as u32 * (w + sep);
    for y in 0..h {
        for x in 0..w {
            let v = if gap.get(x, y) { 255 } else { 0 };
            strip.set(x0 + x, y, [v, v, v]);
        }
    }
    save_image(&strip, &args.out)?;
    let labels: Vec<&str> = members.iter().map(|m| m.blend_method.as_str()).collect();
    println!(
        "group {}: {} + gap, written to {}",
        args.group,
        labels.join(", "),
        args.out.display()
    );
    Ok(())
}

fn cmd_stub_server(args: StubServerArgs) -> anyhow::Result<()> {
    let fill = match args.fill {
        FillArg::Gray => StubFill::Gray,
        FillArg::Echo => StubFill::Echo,
        FillArg::Blur => StubFill::Blur,
    };
    let opts = StubOptions {
        fill,
        fail_first: args.fail_first,
        delay_ms: args.delay_ms,
    };
    let server = StubServer::spawn_on(args.port, opts)
        .with_context(|| format!("cannot bind 127.0.0.1:{}", args.port))?;
    println!("stub inpaint service listening on {}", server.url());
    use std::io::Write;
    std::io::stdout().flush().ok();
    loop {
        std::thread::sleep(std::time::Duration::from_secs(3600));
    }
}
