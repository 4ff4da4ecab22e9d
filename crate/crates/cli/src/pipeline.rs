//! preprocess → LIF/CE-LIF → train (or load) → latent → binarize → eval.

use std::fs;
use std::path::{Path, PathBuf};

use octa_core::binarize::{binarize_pipeline, BinaryMask};
use octa_core::eval::compare_methods;
use octa_core::fusion::lif_volume;
use octa_core::preprocess::{detect_artifacts, remove_motion_artifacts};
use octa_core::{load_volume, save_volume, Volume};
use octa_net::{build_dataset, infer_latent, load_checkpoint, save_checkpoint, train, LifeModel, TrainOptions};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::error::{CliError, Result};
use crate::stage::{Outcome, Stage};

/// Where each stage's artifacts land.
#[derive(Clone, Debug)]
pub struct Artifacts {
    pub preprocessed: PathBuf,
    pub artifact_report: PathBuf,
    pub lif: PathBuf,
    pub ce_lif: PathBuf,
    pub checkpoint: PathBuf,
    pub train_log: PathBuf,
    pub latent: PathBuf,
    pub mask: PathBuf,
    pub report_csv: PathBuf,
    pub report_json: PathBuf,
    pub per_slice_csv: PathBuf,
}

impl Artifacts {
    pub fn new(cfg: &PipelineConfig) -> Self {
        let d = &cfg.output_dir;
        Self {
            preprocessed: d.join("preprocessed.raw"),
            artifact_report: d.join("artifacts.json"),
            lif: d.join("lif.raw"),
            ce_lif: d.join("ce_lif.raw"),
            checkpoint: cfg.checkpoint_path(),
            train_log: d.join("train.csv"),
            latent: d.join("latent.raw"),
            mask: d.join("mask.raw"),
            report_csv: d.join("report.csv"),
            report_json: d.join("report.json"),
            per_slice_csv: d.join("per_slice.csv"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PipelineRun {
    pub artifacts: Artifacts,
    /// `(stage, outcome)` in execution order.
    pub stages: Vec<(&'static str, Outcome)>,
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Validates, then runs every enabled stage; stages whose outputs are up to
/// date are skipped unless `force`.
pub fn run_pipeline(cfg: &PipelineConfig, force: bool) -> Result<PipelineRun> {
    cfg.validate()?;
    let a = Artifacts::new(cfg);
    let input = cfg.input.clone().expect("validated");
    let mut stages = Vec::new();

    let source = if cfg.stages.preprocess {
        let outcome = Stage::new("preprocess", &cfg.preprocess)?
            .input("volume", &input)
            .output(a.preprocessed.clone())
            .output(a.artifact_report.clone())
            .run(force, || {
                let vol: Volume = load_volume(&input)?;
                let report = detect_artifacts(&vol, cfg.preprocess.z_thresh)?;
                log::info!("{} artifact rows flagged", report.flagged.len());
                save_volume(&remove_motion_artifacts(&vol, &report)?, &a.preprocessed)?;
                write_text(&a.artifact_report, &serde_json::to_string_pretty(&report)?)
            })?;
        stages.push(("preprocess", outcome));
        a.preprocessed.clone()
    } else {
        input.clone()
    };

    let outcome = Stage::new("lif", json!({ "fusion": cfg.fusion, "registration": cfg.registration }))?
        .input("volume", &source)
        .output(a.lif.clone())
        .output(a.ce_lif.clone())
        .run(force, || {
            let vol: Volume = load_volume(&source)?;
            let (lif, ce) = lif_volume(&vol, &cfg.fusion, &cfg.registration)?;
            save_volume(&lif, &a.lif)?;
            save_volume(&ce, &a.ce_lif)?;
            Ok(())
        })?;
    stages.push(("lif", outcome));

    // a checkpoint that exists and was not produced by this pipeline is used as given
    let external = a.checkpoint.is_file() && crate::provenance::read(&a.checkpoint).is_none_or(|p| p.stage != "train");
    if cfg.stages.train && !external {
        let model_cfg = cfg.seeded_model();
        let aug = cfg.seeded_augmentation();
        let params = json!({ "model": model_cfg, "augmentation": aug, "training": cfg.training });
        let outcome = Stage::new("train", params)?
            .input("volume", &source)
            .input("lif", &a.lif)
            .input("ce_lif", &a.ce_lif)
            .output(a.checkpoint.clone())
            .output(a.train_log.clone())
            .run(force, || {
                let (vol, lif, ce): (Volume, Volume, Volume) = (load_volume(&source)?, load_volume(&a.lif)?, load_volume(&a.ce_lif)?);
                let data = build_dataset(&[(&vol, &lif, &ce)], &aug)?;
                let mut model = LifeModel::<f32>::new(model_cfg.clone())?;
                let opts = TrainOptions { data_parallel: cfg.training.data_parallel, max_steps: cfg.training.max_steps };
                let report = train(&mut model, &data, &opts)?;
                save_checkpoint(&model, &a.checkpoint)?;
                report.write_csv(&a.train_log)?;
                Ok(())
            })?;
        stages.push(("train", outcome));
    } else {
        log::info!("using checkpoint {}", a.checkpoint.display());
    }

    let outcome = Stage::new("infer", json!({}))?
        .input("volume", &source)
        .input("model", &a.checkpoint)
        .output(a.latent.clone())
        .run(force, || {
            let model: LifeModel<f32> = load_checkpoint(&a.checkpoint)?;
            save_volume(&infer_latent(&load_volume(&source)?, &model)?, &a.latent)?;
            Ok(())
        })?;
    stages.push(("infer", outcome));

    let outcome = Stage::new("binarize", &cfg.binarize)?
        .input("latent", &a.latent)
        .output(a.mask.clone())
        .run(force, || {
            let latent: Volume = load_volume(&a.latent)?;
            save_volume(&binarize_pipeline(&latent, &cfg.binarize)?.to_volume::<f32>(), &a.mask)?;
            Ok(())
        })?;
    stages.push(("binarize", outcome));

    match (&cfg.ground_truth, cfg.stages.eval) {
        (Some(gt), true) => {
            let outcome = Stage::new("eval", json!({ "methods": cfg.methods, "comparison": cfg.comparison() }))?
                .input("volume", &source)
                .input("ground_truth", gt)
                .input("model", &a.checkpoint)
                .output(a.report_csv.clone())
                .output(a.report_json.clone())
                .output(a.per_slice_csv.clone())
                .run(force, || {
                    let vol: Volume = load_volume(&source)?;
                    let gt = BinaryMask::from_volume(&load_volume::<f32>(gt)?, "ground_truth");
                    let model: LifeModel<f32> = load_checkpoint(&a.checkpoint)?;
                    let report = compare_methods(&vol, &gt, &cfg.methods, &cfg.comparison(), Some(&model))?;
                    write_text(&a.report_csv, &report.to_csv())?;
                    write_text(&a.report_json, &report.to_json()?)?;
                    write_text(&a.per_slice_csv, &report.per_slice_csv())
                })?;
            stages.push(("eval", outcome));
        }
        (None, true) => log::warn!("no ground_truth configured; eval skipped"),
        _ => {}
    }
    Ok(PipelineRun { artifacts: a, stages })
}
