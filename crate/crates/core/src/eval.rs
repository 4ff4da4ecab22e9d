//! Confusion-matrix scoring and the method-comparison harness.

use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::binarize::{binarize_pipeline, kmeans_binarize, otsu, BinarizeParams, BinaryMask, Stage};
use crate::error::{Error, Result};
use crate::fusion::{lif_volume, FusionParams};
use crate::registration::RegParams;
use crate::scalar::Scalar;
use crate::vesselness::{frangi, oof, VesselnessParams};
use crate::volume::{normalize, Volume3D};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SegScores {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// 1 when the ground truth is empty (nothing to miss).
    pub tpr: f64,
    /// 0 when the ground truth is full (no negatives).
    pub fpr: f64,
    pub accuracy: f64,
    /// 1 if both masks are empty.
    pub dice: f64,
}

impl SegScores {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let ratio = |a: u64, b: u64, empty: f64| if b == 0 { empty } else { a as f64 / b as f64 };
        let total = tp + fp + tn + fn_;
        Self {
            tp,
            fp,
            tn,
            fn_,
            tpr: ratio(tp, tp + fn_, 1.0),
            fpr: ratio(fp, fp + tn, 0.0),
            accuracy: ratio(tp + tn, total, 1.0),
            dice: if tp + fn_ == 0 {
                if fp == 0 { 1.0 } else { 0.0 }
            } else {
                2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
            },
        }
    }
}

fn check_dims(pred: &BinaryMask, gt: &BinaryMask) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::Dims(format!("prediction {:?} vs ground truth {:?}", pred.dims(), gt.dims())));
    }
    Ok(())
}

fn count<'a>(pred: impl Iterator<Item = &'a u8>, gt: impl Iterator<Item = &'a u8>) -> SegScores {
    let mut c = [0u64; 4];
    for (&p, &g) in pred.zip(gt) {
        c[((p != 0) as usize) << 1 | (g != 0) as usize] += 1;
    }
    // index = pred·2 + gt
    SegScores::from_counts(c[3], c[2], c[0], c[1])
}

pub fn score(pred: &BinaryMask, gt: &BinaryMask) -> Result<SegScores> {
    check_dims(pred, gt)?;
    Ok(count(pred.data.iter(), gt.data.iter()))
}

/// One score per en-face slice.
pub fn per_slice_scores(pred: &BinaryMask, gt: &BinaryMask) -> Result<Vec<SegScores>> {
    check_dims(pred, gt)?;
    Ok(pred
        .data
        .outer_iter()
        .zip(gt.data.outer_iter())
        .map(|(p, g)| count(p.iter(), g.iter()))
        .collect())
}

/// Five-number summary plus mean; quartiles by linear interpolation
/// between order statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

pub fn summarize(values: &[f64]) -> Option<Summary> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let i = pos.floor() as usize;
        let j = (i + 1).min(s.len() - 1);
        s[i] + (pos - i as f64) * (s[j] - s[i])
    };
    Some(Summary {
        min: s[0],
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: s[s.len() - 1],
        mean: s.iter().sum::<f64>() / s.len() as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kmeans,
    Otsu,
    Frangi,
    Oof,
    Life,
    /// Direct binarization of the fused target.
    Lif,
    #[serde(rename = "ce-lif")]
    CeLif,
}

impl Method {
    /// The methods of the standard comparison table.
    pub const TABLE: [Method; 5] = [Method::Kmeans, Method::Otsu, Method::Frangi, Method::Oof, Method::Life];

    pub fn label(self) -> &'static str {
        match self {
            Method::Kmeans => "k-means",
            Method::Otsu => "Otsu",
            Method::Frangi => "Frangi+bin",
            Method::Oof => "OOF+bin",
            Method::Life => "LIFE+bin",
            Method::Lif => "LIF+bin",
            Method::CeLif => "CE-LIF+bin",
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "kmeans" | "k-means" => Method::Kmeans,
            "otsu" => Method::Otsu,
            "frangi" => Method::Frangi,
            "oof" => Method::Oof,
            "life" => Method::Life,
            "lif" => Method::Lif,
            "ce-lif" | "celif" => Method::CeLif,
            other => return Err(Error::Param(format!("unknown method {other:?}"))),
        })
    }
}

/// Produces the latent map read as the LIFE segmentation.
pub trait LatentSource<T: Scalar>: Sync {
    fn latent(&self, vol: &Volume3D<T>) -> Result<Volume3D<T>>;

    /// Parameters recorded in the report.
    fn describe(&self) -> Value {
        Value::Null
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComparisonConfig {
    pub binarize: BinarizeParams,
    pub vesselness: VesselnessParams,
    pub fusion: FusionParams,
    pub registration: RegParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    pub scores: SegScores,
    pub per_slice: Vec<SegScores>,
    pub dice_summary: Option<Summary>,
    pub provenance: Vec<Stage>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub results: Vec<MethodResult>,
}

impl ComparisonReport {
    pub fn get(&self, m: Method) -> Option<&MethodResult> {
        self.results.iter().find(|r| r.method == m)
    }

    /// Method, TPR, FPR, accuracy and Dice, one row per method.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,tpr,fpr,accuracy,dice\n");
        for r in &self.results {
            let s = &r.scores;
            let _ = writeln!(out, "{},{:.6},{:.6},{:.6},{:.6}", r.method.label(), s.tpr, s.fpr, s.accuracy, s.dice);
        }
        out
    }

    pub fn per_slice_csv(&self) -> String {
        let mut out = String::from("method,slice,tp,fp,tn,fn,dice\n");
        for r in &self.results {
            for (z, s) in r.per_slice.iter().enumerate() {
                let _ = writeln!(out, "{},{z},{},{},{},{},{:.6}", r.method.label(), s.tp, s.fp, s.tn, s.fn_, s.dice);
            }
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn enhance_then_binarize<T: Scalar>(enhanced: &Volume3D<T>, p: &BinarizeParams, stage: Stage) -> Result<BinaryMask> {
    let mut mask = binarize_pipeline(&normalize(enhanced), p)?;
    mask.provenance.insert(0, stage);
    Ok(mask)
}

/// Segments `vol` with one method.
pub fn run_method<T: Scalar>(
    method: Method,
    vol: &Volume3D<T>,
    cfg: &ComparisonConfig,
    life: Option<&dyn LatentSource<T>>,
) -> Result<BinaryMask> {
    let vp = &cfg.vesselness;
    match method {
        Method::Kmeans => kmeans_binarize(vol),
        Method::Otsu => Ok(otsu(vol, cfg.binarize.bins)?.1),
        Method::Frangi => enhance_then_binarize(
            &frangi(vol, vp)?,
            &cfg.binarize,
            Stage { name: "frangi".into(), params: json!({ "sigmas": vp.sigmas, "alpha": vp.alpha, "beta": vp.beta, "c": vp.c }) },
        ),
        Method::Oof => enhance_then_binarize(
            &oof(vol, vp)?,
            &cfg.binarize,
            Stage {
                name: "oof".into(),
                params: json!({ "radii": vp.oof_radii, "sigma": vp.oof_sigma, "response": "-(l1+l2)/2 / r" }),
            },
        ),
        Method::Life => {
            let src = life.ok_or_else(|| Error::Param("LIFE requested but no trained model was supplied".into()))?;
            enhance_then_binarize(&src.latent(vol)?, &cfg.binarize, Stage { name: "life".into(), params: src.describe() })
        }
        Method::Lif | Method::CeLif => {
            let (lif, ce) = lif_volume(vol, &cfg.fusion, &cfg.registration)?;
            let target = if method == Method::Lif { lif } else { ce };
            let mut mask = binarize_pipeline(&target, &cfg.binarize)?;
            mask.provenance.insert(0, Stage { name: "fusion".into(), params: serde_json::to_value(&cfg.fusion)? });
            Ok(mask)
        }
    }
}

/// Runs every requested method on `vol` and scores it against `gt`.
pub fn compare_methods<T: Scalar>(
    vol: &Volume3D<T>,
    gt: &BinaryMask,
    methods: &[Method],
    cfg: &ComparisonConfig,
    life: Option<&dyn LatentSource<T>>,
) -> Result<ComparisonReport> {
    if methods.contains(&Method::Life) && life.is_none() {
        return Err(Error::Param("LIFE requested but no trained model was supplied".into()));
    }
    if vol.dims() != gt.dims() {
        return Err(Error::Dims(format!("volume {:?} vs ground truth {:?}", vol.dims(), gt.dims())));
    }
    let results = methods
        .par_iter()
        .map(|&m| {
            let mask = run_method(m, vol, cfg, life)?;
            let per_slice = per_slice_scores(&mask, gt)?;
            let dice: Vec<f64> = per_slice.iter().map(|s| s.dice).collect();
            Ok(MethodResult {
                method: m,
                scores: score(&mask, gt)?,
                dice_summary: summarize(&dice),
                per_slice,
                provenance: mask.provenance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ComparisonReport { results })
}
