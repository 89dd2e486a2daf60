//! Entropy-calibrated adapter mixing: the per-sample interpolation engine.
//!
//! The pipeline per input x: measure prediction entropy under the clean
//! adapter and under each adversarial adapter, normalize each entropy against
//! that adapter's calibration range, average the two normalized coefficients
//! into a mixing weight β, then run the input through the β-weighted convex
//! combination of adapter deltas.
//!
//! Intuition: a confident (low-entropy) prediction under the clean adapter
//! means the input looks like clean training data, pushing β toward 1 (clean
//! mode); a confident prediction under an adversarial adapter means the input
//! looks attacked, pushing β toward 0. A threshold on the clean coefficient
//! doubles as a cheap adversarial detector and an early exit that skips the
//! mixing entirely.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::model::{
    forward, tokenize, AdapterDelta, BackboneParams, ProbDist, TokenSeq, DEFAULT_MAX_LEN,
};

/// Prediction entropy −Σ pₖ ln pₖ, with 0·ln 0 = 0. Natural log, so the
/// binary maximum is ln 2 ≈ 0.6931.
pub fn entropy(p: &ProbDist) -> f64 {
    let mut acc = 0.0;
    for &pk in p.probs() {
        if pk > 0.0 {
            acc += pk * pk.ln();
        }
    }
    let h = -acc;
    if h <= 0.0 {
        0.0
    } else {
        h
    }
}

/// Which adapter mode a calibration describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibMode {
    Clean,
    Adv,
}

/// Entropy extrema of one adapter mode over samples of its own training data.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EntropyCalibration {
    pub min_h: f64,
    pub max_h: f64,
    pub mode: CalibMode,
    pub n_samples: usize,
}

/// Default number of training samples scanned by [`calibrate`].
pub const CALIBRATION_SAMPLES: usize = 100;

/// Scan the first `CALIBRATION_SAMPLES` items (or all, if fewer) of the
/// adapter's own training set and record the entropy extrema.
pub fn calibrate(
    backbone: &BackboneParams,
    adapter: &AdapterDelta,
    samples: &LabeledDataset,
    mode: CalibMode,
) -> Result<EntropyCalibration> {
    calibrate_n(backbone, adapter, samples, mode, CALIBRATION_SAMPLES)
}

pub fn calibrate_n(
    backbone: &BackboneParams,
    adapter: &AdapterDelta,
    samples: &LabeledDataset,
    mode: CalibMode,
    n: usize,
) -> Result<EntropyCalibration> {
    let head = samples.head(n);
    if head.len() < 2 {
        return Err(Error::Calibration(head.len()));
    }
    let mut min_h = f64::INFINITY;
    let mut max_h = f64::NEG_INFINITY;
    for item in head {
        let tokens = tokenize(&item.text, backbone.vocab(), DEFAULT_MAX_LEN);
        let probs = forward(backbone, Some(adapter), &tokens)?;
        let h = entropy(&probs);
        min_h = min_h.min(h);
        max_h = max_h.max(h);
    }
    Ok(EntropyCalibration {
        min_h,
        max_h,
        mode,
        n_samples: head.len(),
    })
}

fn normalized(num: f64, range: f64) -> f64 {
    if range == 0.0 {
        // Degenerate calibration: every sample had identical entropy, so the
        // range carries no information — answer maximal uncertainty.
        return 0.5;
    }
    (num / range).clamp(0.0, 1.0)
}

/// Clean-mode coefficient: maximum normalization `(max_h − h)/(max_h − min_h)`
/// clamped to [0,1]. Low entropy (confident clean prediction) → 1.
pub fn alpha_clean(calib: &EntropyCalibration, h: f64) -> f64 {
    debug_assert_eq!(calib.mode, CalibMode::Clean);
    normalized(calib.max_h - h, calib.max_h - calib.min_h)
}

/// Adversarial-mode coefficient: minimum normalization
/// `(h − min_h)/(max_h − min_h)` clamped to [0,1]. Low entropy under the
/// adversarial adapter (the input looks attacked) → 0, which puts weight
/// 1 − β on the adversarial side.
pub fn alpha_adv(calib: &EntropyCalibration, h: f64) -> f64 {
    debug_assert_eq!(calib.mode, CalibMode::Adv);
    normalized(h - calib.min_h, calib.max_h - calib.min_h)
}

/// β·Δ_clean + (1−β)·Δ_adv over every adapter and head parameter. The β=1
/// and β=0 endpoints return exact clones, so the clean and adversarial modes
/// are reproduced bit-for-bit.
pub fn mix_pair(
    delta_clean: &AdapterDelta,
    delta_adv: &AdapterDelta,
    beta: f64,
) -> Result<AdapterDelta> {
    if !delta_clean.same_shape(delta_adv) {
        return Err(Error::DimMismatch(
            "mix_pair requires adapters of identical dimensions".into(),
        ));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Config(format!("beta must lie in [0,1], got {beta}")));
    }
    if beta == 1.0 {
        return Ok(delta_clean.clone());
    }
    if beta == 0.0 {
        return Ok(delta_adv.clone());
    }
    Ok(AdapterDelta::lincomb(
        delta_clean,
        delta_adv,
        beta,
        1.0 - beta,
        "mixed".into(),
    ))
}

/// m-attack mix: coefficient (Σ β_l)/m on Δ_clean and (1−β_l)/m on each
/// Δ_adv^l — algebraically the elementwise mean of the m pairwise mixes.
pub fn mix_multi(
    delta_clean: &AdapterDelta,
    deltas_adv: &[AdapterDelta],
    betas: &[f64],
) -> Result<AdapterDelta> {
    if deltas_adv.is_empty() {
        return Err(Error::Config("mix_multi needs at least one adversarial adapter".into()));
    }
    if deltas_adv.len() != betas.len() {
        return Err(Error::Config(format!(
            "mix_multi got {} adapters but {} betas",
            deltas_adv.len(),
            betas.len()
        )));
    }
    for beta in betas {
        if !(0.0..=1.0).contains(beta) {
            return Err(Error::Config(format!("beta must lie in [0,1], got {beta}")));
        }
    }
    for d in deltas_adv {
        if !d.same_shape(delta_clean) {
            return Err(Error::DimMismatch(
                "mix_multi requires adapters of identical dimensions".into(),
            ));
        }
    }
    if deltas_adv.len() == 1 {
        return mix_pair(delta_clean, &deltas_adv[0], betas[0]);
    }
    if betas.iter().all(|&b| b == 1.0) {
        return Ok(delta_clean.clone());
    }
    let m = deltas_adv.len() as f64;
    let dims = crate::model::ModelDims {
        vocab: 0,
        hidden: delta_clean.hidden(),
        bottleneck: delta_clean.bottleneck(),
        classes: delta_clean.classes(),
    };
    let mut out = AdapterDelta::zeros(&dims, "mixed");
    let clean_coeff = betas.iter().sum::<f64>() / m;
    out.add_scaled(delta_clean, clean_coeff);
    for (delta, &beta) in deltas_adv.iter().zip(betas) {
        out.add_scaled(delta, (1.0 - beta) / m);
    }
    Ok(out)
}

/// Per-sample record of how a prediction was assembled.
#[derive(Debug, Clone, PartialEq)]
pub struct MixDiagnostics {
    pub alpha_clean: f64,
    /// One per pre-known attack; empty on early exit.
    pub alpha_adv: Vec<f64>,
    /// β_l = (α_clean + α_adv_l)/2; empty on early exit.
    pub beta: Vec<f64>,
    pub early_exit: bool,
    pub flagged_adversarial: bool,
}

impl MixDiagnostics {
    /// CSV header for diagnostics rows with `m` pre-known attacks.
    pub fn csv_header(m: usize) -> String {
        let mut cols = vec!["sample_id".to_string(), "alpha_clean".to_string()];
        for l in 1..=m {
            cols.push(format!("alpha_adv_{l}"));
        }
        for l in 1..=m {
            cols.push(format!("beta_{l}"));
        }
        cols.push("early_exit".into());
        cols.push("flagged".into());
        cols.push("predicted_label".into());
        cols.push("true_label".into());
        cols.join(",")
    }

    /// One CSV row; early-exit rows leave the per-attack columns empty.
    pub fn csv_row(&self, m: usize, sample_id: usize, predicted: usize, truth: usize) -> String {
        let mut cols = vec![sample_id.to_string(), format!("{:.6}", self.alpha_clean)];
        for l in 0..m {
            cols.push(
                self.alpha_adv
                    .get(l)
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_default(),
            );
        }
        for l in 0..m {
            cols.push(
                self.beta
                    .get(l)
                    .map(|v| format!("{v:.6}"))
                    .unwrap_or_default(),
            );
        }
        cols.push((self.early_exit as u8).to_string());
        cols.push((self.flagged_adversarial as u8).to_string());
        cols.push(predicted.to_string());
        cols.push(truth.to_string());
        cols.join(",")
    }
}

/// Flag an input as adversarial iff `alpha_clean < threshold` (strict, so
/// equality is not flagged).
pub fn detect_adversarial(alpha_clean: f64, threshold: f64) -> bool {
    alpha_clean < threshold
}

/// Full per-sample inference.
///
/// With a threshold, inputs whose clean coefficient clears it take the early
/// exit: the clean adapter's prediction is returned untouched and no
/// adversarial adapter is consulted. Below the threshold (or with no
/// threshold at all) every adversarial adapter contributes a β_l and the
/// input is re-run through the mixed adapter.
pub fn predict_adpmixup(
    backbone: &BackboneParams,
    delta_clean: &AdapterDelta,
    deltas_adv: &[AdapterDelta],
    calib_clean: &EntropyCalibration,
    calibs_adv: &[EntropyCalibration],
    x: &TokenSeq,
    threshold: Option<f64>,
) -> Result<(ProbDist, MixDiagnostics)> {
    if deltas_adv.is_empty() {
        return Err(Error::Config(
            "predict_adpmixup needs at least one adversarial adapter".into(),
        ));
    }
    if deltas_adv.len() != calibs_adv.len() {
        return Err(Error::Config(format!(
            "{} adversarial adapters but {} calibrations",
            deltas_adv.len(),
            calibs_adv.len()
        )));
    }
    if calib_clean.mode != CalibMode::Clean
        || calibs_adv.iter().any(|c| c.mode != CalibMode::Adv)
    {
        return Err(Error::Config(
            "calibration modes must be clean for the clean adapter and adv for the rest".into(),
        ));
    }
    if let Some(t) = threshold {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(format!(
                "threshold must lie in [0,1], got {t}"
            )));
        }
    }

    let p_clean = forward(backbone, Some(delta_clean), x)?;
    let h_clean = entropy(&p_clean);
    let a_clean = alpha_clean(calib_clean, h_clean);

    if let Some(t) = threshold {
        if !detect_adversarial(a_clean, t) {
            return Ok((
                p_clean,
                MixDiagnostics {
                    alpha_clean: a_clean,
                    alpha_adv: Vec::new(),
                    beta: Vec::new(),
                    early_exit: true,
                    flagged_adversarial: false,
                },
            ));
        }
    }

    let mut alphas = Vec::with_capacity(deltas_adv.len());
    let mut betas = Vec::with_capacity(deltas_adv.len());
    for (delta, calib) in deltas_adv.iter().zip(calibs_adv) {
        let p_adv = forward(backbone, Some(delta), x)?;
        let a = alpha_adv(calib, entropy(&p_adv));
        alphas.push(a);
        betas.push((a_clean + a) / 2.0);
    }
    let mixed = mix_multi(delta_clean, deltas_adv, &betas)?;
    let probs = forward(backbone, Some(&mixed), x)?;
    Ok((
        probs,
        MixDiagnostics {
            alpha_clean: a_clean,
            alpha_adv: alphas,
            beta: betas,
            early_exit: false,
            flagged_adversarial: threshold.is_some(),
        },
    ))
}
