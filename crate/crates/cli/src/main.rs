use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tint_core::dataset::{generate_dataset, generate_triplets, Dataset, GenerateConfig, TripletConfig, TripletSet};
use tint_core::evalproto::{eval_color_accuracy, eval_style_transfer, kmeans_shades, EvalReport};
use tint_core::inference::{recommend_shade, GanModel, MakeupModel, ShadeCatalog};
use tint_core::synthdata::RegionChoice;
use tint_core::training::{prepare_training_set, train, TrainConfig};
use tint_core::{ImageTensor, LabColor};
use tint_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "tint", version, about = "Color-controlled makeup synthesis on lip and eye crops")]
struct Cli {
    /// Repeat for more log output.
    #[arg(short, long, action = ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic crop dataset, or a style-transfer triplet set.
    SynthData(SynthArgs),
    /// Train a model from a dataset manifest.
    Train(TrainArgs),
    /// Color accuracy and skin preservation over k-means shades.
    EvalColor(EvalColorArgs),
    /// Style-transfer L1 and 1-MSSIM over a triplet set.
    EvalTransfer(EvalTransferArgs),
    /// Makeup color of a crop.
    Estimate(EstimateArgs),
    /// Recolor a crop to a target color.
    Synthesize(SynthesizeArgs),
    /// Recolor a crop to the makeup color of a reference crop.
    Transfer(TransferArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct Common {
    /// TOML file with the command's settings; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed. Inference commands are deterministic and only record it.
    #[arg(long)]
    seed: Option<u64>,
}

fn load_toml<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn parse_lab(s: &str) -> std::result::Result<LabColor, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match v[..] {
        [l, a, b] => Ok(LabColor::new(l, a, b)),
        _ => Err(format!("expected L,a,b but got {} values", v.len())),
    }
}

fn show(c: LabColor) -> String {
    let c = c.rounded(4);
    format!("L {:.4}  a {:.4}  b {:.4}", c.l, c.a, c.b)
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Write a style-transfer triplet set instead of a dataset.
    #[arg(long)]
    triplets: bool,
    #[arg(long)]
    n: Option<usize>,
    /// Crop side in pixels.
    #[arg(long)]
    size: Option<usize>,
    /// lips, eyes or joint (datasets only).
    #[arg(long, value_parser = parse_region)]
    region: Option<RegionChoice>,
}

fn parse_region(s: &str) -> std::result::Result<RegionChoice, String> {
    match s {
        "lips" => Ok(RegionChoice::Lips),
        "eyes" => Ok(RegionChoice::Eyes),
        "joint" => Ok(RegionChoice::Joint),
        _ => Err(format!("unknown region {s:?}, expected lips, eyes or joint")),
    }
}

fn synth_data(a: SynthArgs) -> Result<()> {
    if a.triplets {
        let mut cfg: TripletConfig = load_toml(a.common.config.as_deref())?;
        cfg.n = a.n.unwrap_or(cfg.n);
        cfg.seed = a.common.seed.unwrap_or(cfg.seed);
        cfg.sampler.size = a.size.unwrap_or(cfg.sampler.size);
        if a.region.is_some() {
            bail!("--region applies to datasets; triplets are lip crops");
        }
        let manifest = generate_triplets(&cfg, &a.out)?;
        println!("{} triplets -> {}", cfg.n, manifest.display());
    } else {
        let mut cfg: GenerateConfig = load_toml(a.common.config.as_deref())?;
        cfg.n = a.n.unwrap_or(cfg.n);
        cfg.seed = a.common.seed.unwrap_or(cfg.seed);
        cfg.sampler.size = a.size.unwrap_or(cfg.sampler.size);
        cfg.regions = a.region.unwrap_or(cfg.regions);
        let manifest = generate_dataset(&cfg, &a.out)?;
        println!("{} crops -> {}", cfg.n, manifest.display());
    }
    Ok(())
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Dataset manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Run directory for checkpoints and logs.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_parser = parse_region)]
    region: Option<RegionChoice>,
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.common.config {
        Some(p) => TrainConfig::from_toml_file(p)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = a.manifest {
        cfg.manifest = m;
    }
    if let Some(o) = a.out {
        cfg.out_dir = o;
    }
    cfg.epochs = a.epochs.unwrap_or(cfg.epochs);
    cfg.seed = a.common.seed.unwrap_or(cfg.seed);
    cfg.region = a.region.unwrap_or(cfg.region);
    cfg.validate()?;
    let outcome = train(&cfg)?;
    if let Some(last) = outcome.epochs.last() {
        println!("L_D {:.4}  L_G {:.4}  color_G {:.4}  cycle {:.4}", last.loss_d, last.loss_g, last.color_g, last.cycle);
    }
    println!(
        "trained on {} crops ({} skipped) -> {}",
        outcome.samples,
        outcome.skipped,
        outcome.final_checkpoint.display()
    );
    Ok(())
}

#[derive(Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
struct EvalFile {
    checkpoint: Option<PathBuf>,
    manifest: Option<PathBuf>,
    triplets: Option<PathBuf>,
    shades: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalColorArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset manifest; its test split is evaluated and its train split supplies the shade pool.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Number of k-means shades.
    #[arg(long)]
    shades: Option<usize>,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn required<T>(v: Option<T>, name: &str) -> Result<T> {
    v.with_context(|| format!("--{name} is required (flag or config key)"))
}

fn write_report(report: &EvalReport, out: Option<PathBuf>) -> Result<()> {
    print!("{}", report.summary());
    if let Some(p) = out {
        report.save_json(&p)?;
        println!("report -> {}", p.display());
    }
    Ok(())
}

fn eval_color(a: EvalColorArgs) -> Result<()> {
    let f: EvalFile = load_toml(a.common.config.as_deref())?;
    let checkpoint = required(a.checkpoint.or(f.checkpoint), "checkpoint")?;
    let manifest = required(a.manifest.or(f.manifest), "manifest")?;
    let k = a.shades.or(f.shades).unwrap_or(10);
    let seed = a.common.seed.or(f.seed).unwrap_or(0);
    let model = GanModel::load(&checkpoint)?;
    let ds = Dataset::load(&manifest)?;
    let train_cfg = TrainConfig {
        manifest: manifest.clone(),
        crop_size: model.input_size(),
        region: RegionChoice::Joint,
        ..TrainConfig::default()
    };
    let (pool, _) = prepare_training_set(&ds, &train_cfg)?;
    let pool: Vec<LabColor> = pool.iter().map(|p| p.makeup).collect();
    let shades = kmeans_shades(&pool, k, seed)?;
    info!("{} shades from a pool of {}", k, pool.len());
    let report = eval_color_accuracy(&model, &ds, &shades)?;
    write_report(&report, a.out.or(f.out))
}

#[derive(Args)]
struct EvalTransferArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Triplet-set manifest.
    #[arg(long)]
    triplets: Option<PathBuf>,
    /// Report JSON path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn eval_transfer(a: EvalTransferArgs) -> Result<()> {
    let f: EvalFile = load_toml(a.common.config.as_deref())?;
    let model = GanModel::load(&required(a.checkpoint.or(f.checkpoint), "checkpoint")?)?;
    let set = TripletSet::load(&required(a.triplets.or(f.triplets), "triplets")?)?;
    let report = eval_style_transfer(&model, &set)?;
    write_report(&report, a.out.or(f.out))
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct InferFile {
    checkpoint: Option<PathBuf>,
    catalog: Option<PathBuf>,
    top_k: Option<usize>,
    seed: Option<u64>,
}

#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

impl ModelArgs {
    fn load(&self) -> Result<(GanModel, InferFile)> {
        let f: InferFile = load_toml(self.common.config.as_deref())?;
        let path = required(self.checkpoint.clone().or(f.checkpoint.clone()), "checkpoint")?;
        Ok((GanModel::load(&path)?, f))
    }
}

fn read_image(p: &Path) -> Result<ImageTensor> {
    let bytes = std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
    Ok(ImageTensor::decode(&bytes)?)
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    image: PathBuf,
    /// Shade catalog for recommendations.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    top_k: Option<usize>,
    /// JSON output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EstimateOut {
    color: [f64; 3],
    recommendations: Vec<(String, String, f64)>,
}

fn estimate(a: EstimateArgs) -> Result<()> {
    let (model, f) = a.model.load()?;
    let color = model.estimate(&read_image(&a.image)?)?;
    println!("{}", show(color));
    let mut recommendations = Vec::new();
    if let Some(cat) = a.catalog.or(f.catalog) {
        let catalog = ShadeCatalog::load(&cat)?;
        for r in recommend_shade(color, &catalog, a.top_k.or(f.top_k).unwrap_or(3))? {
            println!("  {:<10} {:<24} dE {:.4}", r.shade.id, r.shade.name, r.delta_e);
            recommendations.push((r.shade.id, r.shade.name, r.delta_e));
        }
    }
    if let Some(p) = a.out {
        let body = EstimateOut {
            color: color.rounded(4).to_array(),
            recommendations,
        };
        std::fs::write(&p, serde_json::to_string_pretty(&body)? + "\n").with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

#[derive(Args)]
struct SynthesizeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    image: PathBuf,
    /// Target color as `L,a,b`.
    #[arg(long, value_parser = parse_lab, allow_hyphen_values = true)]
    target: LabColor,
    /// PNG output path.
    #[arg(long)]
    out: PathBuf,
}

fn synthesize(a: SynthesizeArgs) -> Result<()> {
    let (model, _) = a.model.load()?;
    let out = model.synthesize(&read_image(&a.image)?, a.target)?;
    out.save_png(&a.out)?;
    println!("-> {}", a.out.display());
    Ok(())
}

#[derive(Args)]
struct TransferArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    source: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    /// PNG output path.
    #[arg(long)]
    out: PathBuf,
}

fn transfer(a: TransferArgs) -> Result<()> {
    let (model, _) = a.model.load()?;
    let (out, est) = model.transfer(&read_image(&a.source)?, &read_image(&a.reference)?)?;
    out.save_png(&a.out)?;
    println!("estimated {}", show(est));
    println!("-> {}", a.out.display());
    Ok(())
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    bind: Option<String>,
    /// Lips checkpoint.
    #[arg(long)]
    lips: Option<PathBuf>,
    /// Eye-shadow checkpoint.
    #[arg(long)]
    eyes: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    max_body_bytes: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
}

fn serve(a: ServeArgs) -> Result<()> {
    let mut cfg = match &a.common.config {
        Some(p) => ServiceConfig::from_toml_file(p)?,
        None => ServiceConfig::default(),
    };
    cfg.bind = a.bind.unwrap_or(cfg.bind);
    cfg.lips_checkpoint = a.lips.or(cfg.lips_checkpoint);
    cfg.eyes_checkpoint = a.eyes.or(cfg.eyes_checkpoint);
    cfg.catalog = a.catalog.or(cfg.catalog);
    cfg.max_body_bytes = a.max_body_bytes.unwrap_or(cfg.max_body_bytes);
    cfg.workers = a.workers.unwrap_or(cfg.workers);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(tint_service::serve(&cfg))?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match cli.command {
        Command::SynthData(a) => synth_data(a),
        Command::Train(a) => train_cmd(a),
        Command::EvalColor(a) => eval_color(a),
        Command::EvalTransfer(a) => eval_transfer(a),
        Command::Estimate(a) => estimate(a),
        Command::Synthesize(a) => synthesize(a),
        Command::Transfer(a) => transfer(a),
        Command::Serve(a) => serve(a),
    }
}
