//! Command-line interface: `explain`, `evaluate`, `sanity`, `compare`, and
//! the `toy` utilities (train, dataset). Flags override `GCAME_*`
//! environment variables, which override the `--config` TOML file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use gcame_core::baselines::{drise_explain_batch, gradcam_explain, DRiseConfig};
use gcame_core::gcame::{explain_with_details, LayerReport};
use gcame_core::metrics::Method;
use gcame_core::toy::scene::{generate_scene, SceneConfig};
use gcame_core::toy::RANDOMIZATION_CANDIDATES;
use gcame_core::{Detection, DetectorModel, ExplanationTarget, GcameConfig, ImageInput, SaliencyMap};

use crate::coco::load_coco;
use crate::config::{ConfigLayer, RunConfig};
use crate::dataset::{write_toy_dataset, DatasetSpec};
use crate::error::{CliError, Result};
use crate::evaluate::{evaluate_dataset, EvaluateOptions, MetricSet};
use crate::registry::load_runnable;
use crate::render::{load_image, render_overlay};
use crate::report::{write_records_csv, write_report_json};
use crate::sanity_run::{render_sanity_sheet, run_sanity_protocol, write_sanity_json, SanityOptions};
use crate::trainer::{train_toy, TrainOptions};

#[derive(Parser)]
#[command(
    name = "gcame",
    version,
    about = "Explain object-detector predictions with G-CAME saliency maps",
    disable_help_subcommand = true
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explain detections on one image; writes saliency binaries and overlays
    Explain(ExplainArgs),
    /// Score explanations over a COCO-format dataset
    Evaluate(EvaluateArgs),
    /// Model-randomization sanity checks
    Sanity(SanityArgs),
    /// Run gcame, gradcam, and drise side by side and print a timing table
    Compare(CompareArgs),
    /// Toy-detector utilities
    #[command(subcommand)]
    Toy(ToyCommand),
}

/// Flags shared by every run; each maps to one config-file key.
#[derive(Args, Default)]
struct CommonArgs {
    /// TOML config file, merged under environment variables and flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model name: toy, yolox, fasterrcnn
    #[arg(long)]
    model: Option<String>,
    /// Checkpoint path replacing the bundled toy weights
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Explanation method: gcame, gradcam, drise
    #[arg(long)]
    method: Option<String>,
    /// Target layer ids, comma-separated
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<String>>,
    /// Metrics to compute, comma-separated: pg, ebpg, confidence-drop,
    /// information-drop
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    /// Output directory (saliency/, overlays/, reports/ inside)
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Seed for every stochastic path
    #[arg(long)]
    seed: Option<u64>,
    /// Objectness threshold for detections
    #[arg(long)]
    objectness_threshold: Option<f32>,
    /// Number of D-RISE occlusion masks
    #[arg(long)]
    drise_masks: Option<usize>,
    /// Worker threads for dataset evaluation
    #[arg(long)]
    workers: Option<usize>,
}

impl CommonArgs {
    fn as_layer(&self) -> ConfigLayer {
        let clean = |v: &Option<Vec<String>>| {
            v.as_ref()
                .map(|list| list.iter().filter(|s| !s.is_empty()).cloned().collect())
        };
        ConfigLayer {
            model: self.model.clone(),
            weights: self.weights.clone(),
            method: self.method.clone(),
            layers: clean(&self.layers),
            metrics: clean(&self.metrics),
            output_dir: self.output_dir.clone(),
            seed: self.seed,
            objectness_threshold: self.objectness_threshold,
            drise_masks: self.drise_masks,
            workers: self.workers,
        }
    }

    fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => ConfigLayer::from_toml(path)?,
            None => ConfigLayer::default(),
        };
        let env = ConfigLayer::from_env()?;
        RunConfig::resolve(file.merge(env).merge(self.as_layer()))
    }
}

#[derive(Args)]
struct ExplainArgs {
    /// Input image (PNG or JPEG)
    #[arg(long)]
    image: PathBuf,
    /// Explain only this detection index (default: all detections)
    #[arg(long)]
    box_index: Option<usize>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    /// COCO annotation file; images resolve relative to it
    #[arg(long)]
    annotations: PathBuf,
    /// Methods to score, comma-separated (default: the configured method)
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Score only tiny detections (at most 0.5% of the image area)
    #[arg(long)]
    tiny_only: bool,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct SanityArgs {
    /// Input image; omit to use a generated toy scene
    #[arg(long)]
    image: Option<PathBuf>,
    /// Toy scene seed used when no image is given
    #[arg(long, default_value_t = 0)]
    scene_seed: u64,
    /// Detection to explain
    #[arg(long, default_value_t = 0)]
    box_index: usize,
    /// Randomization seeds to sweep
    #[arg(long, default_value_t = 20)]
    seeds: usize,
    /// Std of the randomized reinitialization
    #[arg(long, default_value_t = 0.1)]
    init_std: f32,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Input image; omit to use a generated toy scene
    #[arg(long, requires = "annotations")]
    image: Option<PathBuf>,
    /// COCO annotations holding the image's ground truth
    #[arg(long, requires = "image_id")]
    annotations: Option<PathBuf>,
    /// Which image id in the annotations to compare on
    #[arg(long)]
    image_id: Option<u64>,
    /// Toy scene seed used when no image is given
    #[arg(long, default_value_t = 0)]
    scene_seed: u64,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Subcommand)]
enum ToyCommand {
    /// Train the toy detector on generated scenes and write a checkpoint
    Train(TrainArgs),
    /// Render a synthetic dataset to PNG files plus COCO annotations
    Dataset(DatasetArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 6000)]
    steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f32,
    /// Weight initialization seed
    #[arg(long, default_value_t = 1)]
    init_seed: u64,
    /// Steps between loss lines (0 silences them)
    #[arg(long, default_value_t = 500)]
    log_every: usize,
    /// Checkpoint destination
    #[arg(long, default_value = "toy_detector.gtd")]
    out: PathBuf,
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset directory to create
    #[arg(long)]
    out: PathBuf,
    /// Number of general scenes
    #[arg(long, default_value_t = 40)]
    scenes: usize,
    /// Number of two-tiny-object scenes
    #[arg(long, default_value_t = 10)]
    tiny_pairs: usize,
    /// First scene seed; ids follow consecutively
    #[arg(long, default_value_t = 0)]
    seed_base: u64,
}

/// Creates `out/{saliency,overlays,reports}` and returns the three paths.
fn ensure_out_tree(out: &Path) -> Result<(PathBuf, PathBuf, PathBuf)> {
    let tree = (
        out.join("saliency"),
        out.join("overlays"),
        out.join("reports"),
    );
    for dir in [&tree.0, &tree.1, &tree.2] {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(tree)
}

fn parse_method(name: &str) -> Result<Method> {
    match name {
        "gcame" => Ok(Method::Gcame),
        "gradcam" => Ok(Method::GradCam),
        "drise" => Ok(Method::DRise),
        other => Err(CliError::Usage(format!("unknown method {other:?}"))),
    }
}

fn detection_label(d: &Detection) -> String {
    format!("c{} {:.2}", d.class_index, d.class_scores[d.class_index])
}

/// Explains the selected detections with one method; returns maps paired
/// with their layer diagnostics (empty for methods without any).
fn explain_selected(
    model: &(impl DetectorModel + Sync),
    image: &ImageInput,
    detections: &[Detection],
    selected: &[usize],
    method: Method,
    cfg: &RunConfig,
) -> Result<Vec<(SaliencyMap, Vec<LayerReport>)>> {
    let mut out = Vec::new();
    match method {
        Method::Gcame => {
            let config = GcameConfig {
                objectness_threshold: cfg.objectness_threshold,
                ..GcameConfig::default()
            };
            for &i in selected {
                let target = ExplanationTarget::for_detection(detections[i].clone());
                let details = explain_with_details(model, image, &target, &config)?;
                out.push((details.saliency, details.layers));
            }
        }
        Method::GradCam => {
            for &i in selected {
                let map = gradcam_explain(
                    model,
                    image,
                    detections[i].class_index,
                    cfg.objectness_threshold,
                )?;
                out.push((map, Vec::new()));
            }
        }
        Method::DRise => {
            let targets: Vec<Detection> =
                selected.iter().map(|&i| detections[i].clone()).collect();
            let config = DRiseConfig {
                num_masks: cfg.drise_masks,
                seed: cfg.seed,
                detection_threshold: cfg.objectness_threshold,
                ..DRiseConfig::default()
            };
            let maps = drise_explain_batch(model, image, &targets, &config)?;
            out.extend(maps.into_iter().map(|m| (m, Vec::new())));
        }
    }
    Ok(out)
}

fn run_explain(args: &ExplainArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let method = parse_method(&cfg.method)?;
    let model = load_runnable(&cfg.model, cfg.weights.as_deref())?;
    let image = load_image(&args.image)?;
    let detections = model.detect(&image, cfg.objectness_threshold)?;
    if detections.is_empty() {
        return Err(CliError::Config(format!(
            "no detections above objectness {} in {}",
            cfg.objectness_threshold,
            args.image.display()
        )));
    }
    let selected: Vec<usize> = match args.box_index {
        Some(i) if i < detections.len() => vec![i],
        Some(i) => {
            return Err(CliError::Usage(format!(
                "box index {i} out of range; the image has {} detections",
                detections.len()
            )));
        }
        None => (0..detections.len()).collect(),
    };
    let (saliency_dir, overlay_dir, _) = ensure_out_tree(&cfg.output_dir)?;
    let img_stem = args
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string());

    let maps = explain_selected(&model, &image, &detections, &selected, method, &cfg)?;
    for (&i, (map, layers)) in selected.iter().zip(&maps) {
        let stem = format!("{img_stem}_{}_box{i}", method.as_str());
        let (bin, json) = crate::saliency_io::write_saliency(&saliency_dir, &stem, map, layers)?;
        let overlay = render_overlay(
            &image,
            &map.values,
            &detections[i],
            &detection_label(&detections[i]),
        )?;
        let png = overlay_dir.join(format!("{stem}.png"));
        std::fs::write(&png, overlay).map_err(|e| CliError::io(&png, e))?;
        println!("{}", bin.display());
        println!("{}", json.display());
        println!("{}", png.display());
    }
    Ok(())
}

fn run_evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let methods: Vec<Method> = match &args.methods {
        Some(names) => {
            let names: Vec<&String> = names.iter().filter(|s| !s.is_empty()).collect();
            if names.is_empty() {
                return Err(CliError::Usage("no methods requested".into()));
            }
            names
                .iter()
                .map(|n| parse_method(n))
                .collect::<Result<_>>()?
        }
        None => vec![parse_method(&cfg.method)?],
    };
    let metrics = MetricSet::from_names(&cfg.metrics)?;
    let model = load_runnable(&cfg.model, cfg.weights.as_deref())?;
    let index = load_coco(&args.annotations)?;
    let opts = EvaluateOptions {
        methods,
        metrics,
        objectness_threshold: cfg.objectness_threshold,
        drise_masks: cfg.drise_masks,
        seed: cfg.seed,
        workers: cfg.workers,
        tiny_only: args.tiny_only,
        match_iou: 0.5,
    };
    let (records, stats) = evaluate_dataset(&model, &index, &opts)?;
    if records.is_empty() {
        return Err(CliError::Config(format!(
            "no ground-truth object was matched by a detection \
             ({} unmatched over {} images)",
            stats.unmatched_objects, stats.images
        )));
    }
    let report = gcame_core::metrics::aggregate_report(&records)?;
    let (_, _, reports_dir) = ensure_out_tree(&cfg.output_dir)?;
    let json = reports_dir.join("report.json");
    let csv = reports_dir.join("records.csv");
    write_report_json(&json, &report, cfg.seed)?;
    write_records_csv(&csv, &records)?;
    println!(
        "{} images, {} objects scored, {} unmatched",
        stats.images, stats.matched_objects, stats.unmatched_objects
    );
    for m in &report.methods {
        println!(
            "{:<8} pg {:.3}  ebpg {:.3}  n {}",
            m.method.as_str(),
            m.overall.pointing_game,
            m.overall.energy_pg,
            m.overall.count
        );
    }
    println!("{}", json.display());
    println!("{}", csv.display());
    Ok(())
}

/// Loads `--image`, or renders the seeded toy scene.
fn sanity_image(path: Option<&Path>, scene_seed: u64) -> Result<ImageInput> {
    match path {
        Some(p) => load_image(p),
        None => Ok(generate_scene(&SceneConfig::default(), scene_seed).image),
    }
}

fn run_sanity(args: &SanityArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let model = load_runnable(&cfg.model, cfg.weights.as_deref())?;
    let image = sanity_image(args.image.as_deref(), args.scene_seed)?;
    let detections = model.detect(&image, cfg.objectness_threshold)?;
    let Some(detection) = detections.get(args.box_index) else {
        return Err(CliError::Usage(format!(
            "box index {} out of range; the image has {} detections",
            args.box_index,
            detections.len()
        )));
    };
    let target = ExplanationTarget::for_detection(detection.clone());
    let opts = SanityOptions {
        seeds: args.seeds,
        seed_base: cfg.seed,
        init_std: args.init_std,
        objectness_threshold: cfg.objectness_threshold,
    };
    let report = run_sanity_protocol(&model, &image, &target, &RANDOMIZATION_CANDIDATES, &opts)?;
    let (_, overlay_dir, reports_dir) = ensure_out_tree(&cfg.output_dir)?;
    let json = reports_dir.join("sanity.json");
    write_sanity_json(&json, &report)?;
    let sheet = overlay_dir.join("sanity_sheet.png");
    render_sanity_sheet(&model, &image, &target, &RANDOMIZATION_CANDIDATES, &opts, &sheet)?;
    println!(
        "full cascade rank correlation below 0.5 in {}/{} seeds; no-op exact: {}",
        report.full_cascade_below_half, report.seeds, report.noop_always_exact
    );
    println!("{}", json.display());
    println!("{}", sheet.display());
    Ok(())
}

fn run_compare(args: &CompareArgs) -> Result<()> {
    let cfg = args.common.resolve()?;
    let model = load_runnable(&cfg.model, cfg.weights.as_deref())?;
    let (image, gts) = match (&args.image, &args.annotations, args.image_id) {
        (Some(image_path), Some(ann_path), Some(image_id)) => {
            let index = load_coco(ann_path)?;
            let gts = index.annotations_for(image_id).to_vec();
            if gts.is_empty() {
                return Err(CliError::Usage(format!(
                    "image id {image_id} has no annotations in {}",
                    ann_path.display()
                )));
            }
            (load_image(image_path)?, gts)
        }
        _ => {
            let scene = generate_scene(&SceneConfig::default(), args.scene_seed);
            let gts = scene.ground_truth();
            (scene.image, gts)
        }
    };
    let opts = EvaluateOptions {
        metrics: MetricSet::from_names(&cfg.metrics)?,
        objectness_threshold: cfg.objectness_threshold,
        drise_masks: cfg.drise_masks,
        seed: cfg.seed,
        ..EvaluateOptions::default()
    };
    let rows = crate::compare::compare_methods(&model, &image, &gts, &opts)?;
    print!("{}", crate::compare::format_table(&rows, cfg.drise_masks));
    Ok(())
}

fn run_toy(cmd: &ToyCommand) -> Result<()> {
    match cmd {
        ToyCommand::Train(args) => {
            let outcome = train_toy(&TrainOptions {
                steps: args.steps,
                lr: args.lr,
                init_seed: args.init_seed,
                log_every: args.log_every,
                out: args.out.clone(),
            })?;
            println!(
                "final loss {:.4}, held-out recall {:.4}",
                outcome.final_loss, outcome.recall
            );
            println!("{}", args.out.display());
            Ok(())
        }
        ToyCommand::Dataset(args) => {
            let ann = write_toy_dataset(
                &args.out,
                &DatasetSpec {
                    scenes: args.scenes,
                    tiny_pairs: args.tiny_pairs,
                    seed_base: args.seed_base,
                    scene: SceneConfig::default(),
                },
            )?;
            println!("{}", ann.display());
            Ok(())
        }
    }
}

impl Cli {
    pub fn run(&self) -> Result<()> {
        match &self.command {
            Command::Explain(args) => run_explain(args),
            Command::Evaluate(args) => run_evaluate(args),
            Command::Sanity(args) => run_sanity(args),
            Command::Compare(args) => run_compare(args),
            Command::Toy(cmd) => run_toy(cmd),
        }
    }
}
