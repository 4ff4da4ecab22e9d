//! Subcommands: thin validated wrappers over the library stages.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::LevelFilter;
use octa_core::binarize::{binarize_pipeline, BinaryMask};
use octa_core::eval::{compare_methods, per_slice_scores, run_method, score, summarize, Method};
use octa_core::fusion::lif_volume;
use octa_core::phantom::{generate_phantom, make_phantom_vessel_case, PhantomSpec};
use octa_core::preprocess::{detect_artifacts, remove_motion_artifacts};
use octa_core::{load_volume, save_volume, Volume};
use octa_net::{build_dataset, infer_latent, load_checkpoint, save_checkpoint, train, LifeModel, TrainOptions};
use serde_json::json;

use crate::config::{require_volume, PipelineConfig};
use crate::error::{invalid, CliError, Result};
use crate::pipeline::{run_pipeline, write_text};
use crate::stage::Stage;

#[derive(Debug, Parser)]
#[command(name = "octa", version, about = "Self-supervised OCT-A vessel segmentation")]
pub struct Cli {
    /// Cap on worker threads (1 = single-threaded, fully deterministic scheduling).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Log level for the JSON-line log on stderr (off, error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    pub log_level: LevelFilter,
    /// Recompute outputs even when they are up to date.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic phantom volume and its vessel mask.
    Phantom(PhantomArgs),
    /// Remove motion-artifact rows.
    Preprocess(PreprocessArgs),
    /// Fuse neighboring slices into LIF and CE-LIF targets.
    Lif(LifArgs),
    /// Segment with a classical method (kmeans, otsu, frangi, oof).
    Baseline(BaselineArgs),
    /// Train the LIFE network on one or more volumes.
    Train(TrainArgs),
    /// Compute the normalized latent map with a trained model.
    Infer(InferArgs),
    /// Perona-Malik → Otsu → island removal.
    Binarize(BinarizeArgs),
    /// Score a mask against ground truth, or compare methods on a volume.
    Eval(EvalArgs),
    /// Run every stage from a config file.
    Pipeline(PipelineArgs),
}

/// Parameter blocks come from a pipeline-format config; flags override them.
#[derive(Debug, Args)]
pub struct ConfigArg {
    /// Pipeline config (JSON) supplying parameter blocks.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl ConfigArg {
    fn load(&self) -> Result<PipelineConfig> {
        self.config.as_deref().map_or_else(|| Ok(PipelineConfig::default()), PipelineConfig::load)
    }
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    /// Phantom spec (JSON); defaults for missing keys.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Build the phantom-vessel hazard case for this fusion radius instead.
    #[arg(long, value_name = "R")]
    pub vessel_case: Option<usize>,
    /// Output directory; receives volume.raw and mask.raw.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Row z-score above which a row is an artifact.
    #[arg(long)]
    pub z_thresh: Option<f64>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct LifArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Fusion radius in slices.
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub method: Method,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training volume; repeat for several.
    #[arg(long = "in", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BinarizeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Mask to score; the scores are printed as JSON.
    #[arg(long, conflicts_with_all = ["input", "methods"])]
    pub pred: Option<PathBuf>,
    #[arg(long)]
    pub gt: PathBuf,
    /// Volume to segment with every listed method.
    #[arg(long = "in", requires = "out")]
    pub input: Option<PathBuf>,
    /// Comma-separated: kmeans,otsu,frangi,oof,life,lif,ce-lif.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Checkpoint, needed for `life`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Report directory (report.csv, report.json).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-slice scores.
    #[arg(long)]
    pub per_slice: bool,
    #[command(flatten)]
    pub config: ConfigArg,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub ground_truth: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn load_phantom_spec(path: Option<&Path>) -> Result<PhantomSpec> {
    let Some(path) = path else { return Ok(PhantomSpec::default()) };
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

/// Executes a parsed command line.
pub fn run(cli: &Cli) -> Result<()> {
    let force = cli.force;
    match &cli.command {
        Command::Phantom(a) => {
            let mut spec = load_phantom_spec(a.spec.as_deref())?;
            if let Some(s) = a.seed {
                spec.seed = s;
            }
            invalid(spec.validate())?;
            let (vol_path, mask_path) = (a.out.join("volume.raw"), a.out.join("mask.raw"));
            let mut stage = Stage::new("phantom", json!({ "spec": spec, "vessel_case": a.vessel_case }))?
                .output(vol_path.clone())
                .output(mask_path.clone());
            let case_path = a.out.join("case.json");
            if a.vessel_case.is_some() {
                stage = stage.output(case_path.clone());
            }
            stage.run(force, || {
                let (vol, mask) = match a.vessel_case {
                    Some(r) => {
                        let case = make_phantom_vessel_case::<f32>(&spec, r)?;
                        let foot = |m: &ndarray::Array2<bool>| m.indexed_iter().filter(|(_, &b)| b).map(|(i, _)| [i.0, i.1]).collect::<Vec<_>>();
                        let info = json!({ "target_z": case.target_z, "radius": r, "vessel_a": foot(&case.vessel_a), "vessel_b": foot(&case.vessel_b) });
                        write_text(&case_path, &serde_json::to_string(&info)?)?;
                        (case.volume, case.mask)
                    }
                    None => generate_phantom::<f32>(&spec)?,
                };
                save_volume(&vol, &vol_path)?;
                save_volume(&mask, &mask_path)?;
                Ok(())
            })?;
        }
        Command::Preprocess(a) => {
            let mut cfg = a.config.load()?;
            if let Some(z) = a.z_thresh {
                cfg.preprocess.z_thresh = z;
            }
            require_volume(&a.input, "--in")?;
            let (out, report_path) = (a.out.join("preprocessed.raw"), a.out.join("artifacts.json"));
            Stage::new("preprocess", &cfg.preprocess)?.input("volume", &a.input).output(out.clone()).output(report_path.clone()).run(
                force,
                || {
                    let vol: Volume = load_volume(&a.input)?;
                    let report = detect_artifacts(&vol, cfg.preprocess.z_thresh)?;
                    save_volume(&remove_motion_artifacts(&vol, &report)?, &out)?;
                    write_text(&report_path, &serde_json::to_string_pretty(&report)?)
                },
            )?;
        }
        Command::Lif(a) => {
            let mut cfg = a.config.load()?;
            if let Some(r) = a.r {
                cfg.fusion.radius = r;
            }
            require_volume(&a.input, "--in")?;
            invalid(cfg.fusion.validate())?;
            invalid(cfg.registration.validate())?;
            let (lif_path, ce_path) = (a.out.join("lif.raw"), a.out.join("ce_lif.raw"));
            Stage::new("lif", json!({ "fusion": cfg.fusion, "registration": cfg.registration }))?
                .input("volume", &a.input)
                .output(lif_path.clone())
                .output(ce_path.clone())
                .run(force, || {
                    let (lif, ce) = lif_volume(&load_volume::<f32>(&a.input)?, &cfg.fusion, &cfg.registration)?;
                    save_volume(&lif, &lif_path)?;
                    save_volume(&ce, &ce_path)?;
                    Ok(())
                })?;
        }
        Command::Baseline(a) => {
            let cfg = a.config.load()?;
            if matches!(a.method, Method::Life) {
                return Err(CliError::Validation("baseline runs classical methods; use infer + binarize for life".into()));
            }
            require_volume(&a.input, "--in")?;
            invalid(cfg.vesselness.validate())?;
            let out = a.out.join(format!("{}_mask.raw", method_key(a.method)));
            let cmp = cfg.comparison();
            Stage::new("baseline", json!({ "method": a.method, "comparison": cmp }))?.input("volume", &a.input).output(out.clone()).run(
                force,
                || {
                    let mask = run_method::<f32>(a.method, &load_volume(&a.input)?, &cmp, None)?;
                    save_volume(&mask.to_volume::<f32>(), &out)?;
                    Ok(())
                },
            )?;
        }
        Command::Train(a) => {
            let mut cfg = a.config.load()?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(e) = a.epochs {
                cfg.model.epochs = e;
            }
            if a.max_steps.is_some() {
                cfg.training.max_steps = a.max_steps;
            }
            for p in &a.inputs {
                require_volume(p, "--in")?;
            }
            invalid(cfg.model.validate())?;
            invalid(cfg.fusion.validate())?;
            let (ckpt, log_path) = (a.out.join("model.ckpt"), a.out.join("train.csv"));
            let (model_cfg, aug) = (cfg.seeded_model(), cfg.seeded_augmentation());
            let params = json!({ "model": model_cfg, "augmentation": aug, "training": cfg.training, "fusion": cfg.fusion, "registration": cfg.registration });
            let roles: Vec<String> = (0..a.inputs.len()).map(|i| format!("volume{i}")).collect();
            let mut stage = Stage::new("train", params)?.output(ckpt.clone()).output(log_path.clone());
            for (role, p) in roles.iter().zip(&a.inputs) {
                stage = stage.input(role, p);
            }
            stage.run(force, || {
                let mut triples = Vec::new();
                for p in &a.inputs {
                    let vol: Volume = load_volume(p)?;
                    let (lif, ce) = lif_volume(&vol, &cfg.fusion, &cfg.registration)?;
                    triples.push((vol, lif, ce));
                }
                let refs: Vec<_> = triples.iter().map(|(v, l, c)| (v, l, c)).collect();
                let data = build_dataset(&refs, &aug)?;
                let mut model = LifeModel::<f32>::new(model_cfg.clone())?;
                let opts = TrainOptions { data_parallel: cfg.training.data_parallel, max_steps: cfg.training.max_steps };
                let report = train(&mut model, &data, &opts)?;
                save_checkpoint(&model, &ckpt)?;
                report.write_csv(&log_path)?;
                Ok(())
            })?;
        }
        Command::Infer(a) => {
            require_volume(&a.input, "--in")?;
            if !a.model.is_file() {
                return Err(CliError::Validation(format!("--model: no checkpoint at {}", a.model.display())));
            }
            let out = a.out.join("latent.raw");
            Stage::new("infer", json!({}))?.input("volume", &a.input).input("model", &a.model).output(out.clone()).run(force, || {
                let model: LifeModel<f32> = load_checkpoint(&a.model)?;
                save_volume(&infer_latent(&load_volume(&a.input)?, &model)?, &out)?;
                Ok(())
            })?;
        }
        Command::Binarize(a) => {
            let cfg = a.config.load()?;
            require_volume(&a.input, "--in")?;
            invalid(cfg.binarize.diffusion.validate())?;
            let out = a.out.join("mask.raw");
            Stage::new("binarize", &cfg.binarize)?.input("volume", &a.input).output(out.clone()).run(force, || {
                let mask = binarize_pipeline(&load_volume::<f32>(&a.input)?, &cfg.binarize)?;
                save_volume(&mask.to_volume::<f32>(), &out)?;
                Ok(())
            })?;
        }
        Command::Eval(a) => eval(a, force)?,
        Command::Pipeline(a) => {
            let mut cfg = PipelineConfig::load(&a.config)?;
            if let Some(p) = &a.input {
                cfg.input = Some(p.clone());
            }
            if let Some(p) = &a.ground_truth {
                cfg.ground_truth = Some(p.clone());
            }
            if let Some(p) = &a.out {
                cfg.output_dir = p.clone();
            }
            if let Some(p) = &a.checkpoint {
                cfg.checkpoint = Some(p.clone());
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            let run = run_pipeline(&cfg, force)?;
            for (name, outcome) in &run.stages {
                log::info!("{name}: {outcome:?}");
            }
        }
    }
    Ok(())
}

fn method_key(m: Method) -> String {
    serde_json::to_value(m).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

fn eval(a: &EvalArgs, force: bool) -> Result<()> {
    require_volume(&a.gt, "--gt")?;
    let gt_mask = || -> Result<BinaryMask> { Ok(BinaryMask::from_volume(&load_volume::<f32>(&a.gt)?, "ground_truth")) };
    if let Some(pred) = &a.pred {
        require_volume(pred, "--pred")?;
        let pred = BinaryMask::from_volume(&load_volume::<f32>(pred)?, "pred");
        let gt = gt_mask()?;
        if pred.dims() != gt.dims() {
            return Err(CliError::Validation(format!("--pred {:?} vs --gt {:?}", pred.dims(), gt.dims())));
        }
        let scores = score(&pred, &gt)?;
        let per_slice = per_slice_scores(&pred, &gt)?;
        let dice: Vec<f64> = per_slice.iter().map(|s| s.dice).collect();
        let mut out = json!({ "scores": scores, "per_slice_dice": summarize(&dice) });
        if a.per_slice {
            out["per_slice"] = serde_json::to_value(&per_slice)?;
        }
        println!("{}", serde_json::to_string(&out)?);
        return Ok(());
    }
    let (Some(input), Some(dir)) = (&a.input, &a.out) else {
        return Err(CliError::Validation("eval needs either --pred, or --in with --out".into()));
    };
    require_volume(input, "--in")?;
    let cfg = a.config.load()?;
    let methods = a.methods.clone().unwrap_or_else(|| cfg.methods.clone());
    if methods.is_empty() {
        return Err(CliError::Validation("--methods is empty".into()));
    }
    if methods.contains(&Method::Life) && !a.model.as_ref().is_some_and(|m| m.is_file()) {
        return Err(CliError::Validation("life needs --model pointing at a checkpoint".into()));
    }
    invalid(cfg.vesselness.validate())?;
    let cmp = cfg.comparison();
    let (csv, js, ps) = (dir.join("report.csv"), dir.join("report.json"), dir.join("per_slice.csv"));
    let mut stage = Stage::new("eval", json!({ "methods": methods, "comparison": cmp }))?
        .input("volume", input)
        .input("ground_truth", &a.gt)
        .output(csv.clone())
        .output(js.clone());
    if let Some(m) = &a.model {
        stage = stage.input("model", m);
    }
    if a.per_slice {
        stage = stage.output(ps.clone());
    }
    stage.run(force, || {
        let model = a.model.as_deref().map(load_checkpoint::<f32>).transpose()?;
        let life = model.as_ref().map(|m| m as &dyn octa_core::eval::LatentSource<f32>);
        let report = compare_methods(&load_volume::<f32>(input)?, &gt_mask()?, &methods, &cmp, life)?;
        write_text(&csv, &report.to_csv())?;
        write_text(&js, &report.to_json()?)?;
        if a.per_slice {
            write_text(&ps, &report.per_slice_csv())?;
        }
        Ok(())
    })?;
    print!("{}", std::fs::read_to_string(&csv).map_err(|e| CliError::io(&csv, e))?);
    Ok(())
}
