//! Reference predictors: CleanOnly, AdvOnly, AdvTrain, ModelSoup,
//! AdapterSoup, plus shared evaluation.
//!
//! CleanOnly/AdvOnly/AdvTrain are just adapters produced by the training
//! module and served through [`AdapterPredictor`]; this module adds the two
//! weight-averaging baselines and the accuracy measurement they are all
//! compared under.

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::mixing::{predict_adpmixup, EntropyCalibration, MixDiagnostics};
use crate::model::{
    tokenize, AdapterDelta, BackboneParams, Predictor, ProbDist, TokenSeq, DEFAULT_MAX_LEN,
};

/// A fully fine-tuned model (no frozen parts), as consumed by weight soup.
#[derive(Debug, Clone, PartialEq)]
pub struct FullModelParams {
    pub params: BackboneParams,
    pub tag: String,
}

impl FullModelParams {
    pub fn new(params: BackboneParams, tag: impl Into<String>) -> Self {
        FullModelParams {
            params,
            tag: tag.into(),
        }
    }
}

/// Weight-space interpolation α·θ₁ + (1−α)·θ₂ over every parameter. The
/// endpoints return exact clones of the corresponding model.
pub fn model_soup(
    theta1: &FullModelParams,
    theta2: &FullModelParams,
    alpha: f64,
) -> Result<FullModelParams> {
    if !theta1.params.same_shape(&theta2.params) {
        return Err(Error::DimMismatch(
            "model_soup requires models of identical dimensions".into(),
        ));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "soup coefficient must lie in [0,1], got {alpha}"
        )));
    }
    if alpha == 1.0 {
        return Ok(theta1.clone());
    }
    if alpha == 0.0 {
        return Ok(theta2.clone());
    }
    let mut params = theta1.params.clone();
    params.scale_in_place(alpha);
    params.add_scaled(&theta2.params, 1.0 - alpha);
    Ok(FullModelParams {
        params,
        tag: format!("soup({}, {})", theta1.tag, theta2.tag),
    })
}

/// Uniform elementwise mean of adapters. Two adapters reduce to the β=0.5
/// pairwise mix computed with the very same arithmetic, so the two paths
/// agree bit-for-bit.
pub fn adapter_soup(deltas: &[AdapterDelta]) -> Result<AdapterDelta> {
    match deltas {
        [] => Err(Error::Config("adapter_soup needs at least one adapter".into())),
        [single] => Ok(single.clone()),
        [a, b] => {
            if !a.same_shape(b) {
                return Err(Error::DimMismatch(
                    "adapter_soup requires adapters of identical dimensions".into(),
                ));
            }
            Ok(AdapterDelta::lincomb(a, b, 0.5, 0.5, "soup".into()))
        }
        all => {
            let first = &all[0];
            for d in &all[1..] {
                if !d.same_shape(first) {
                    return Err(Error::DimMismatch(
                        "adapter_soup requires adapters of identical dimensions".into(),
                    ));
                }
            }
            let dims = crate::model::ModelDims {
                vocab: 0,
                hidden: first.hidden(),
                bottleneck: first.bottleneck(),
                classes: first.classes(),
            };
            let mut out = AdapterDelta::zeros(&dims, "soup");
            let inv = 1.0 / all.len() as f64;
            for d in all {
                out.add_scaled(d, inv);
            }
            Ok(out)
        }
    }
}

/// Fraction of argmax-correct predictions; argmax ties go to the lowest class
/// index, so a uniform predictor is "correct" on class 0.
pub fn evaluate(predictor: &dyn Predictor, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Config(format!(
            "cannot evaluate on empty dataset '{}'",
            dataset.name
        )));
    }
    let hits = dataset
        .items
        .iter()
        .filter(|it| predictor.predict(&it.text).argmax() == it.label)
        .count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// The full AdpMixup inference stack as a [`Predictor`], so it can be
/// evaluated and attacked like any baseline.
pub struct AdpMixupPredictor<'a> {
    pub backbone: &'a BackboneParams,
    pub clean: &'a AdapterDelta,
    pub advs: &'a [AdapterDelta],
    pub calib_clean: &'a EntropyCalibration,
    pub calibs_adv: &'a [EntropyCalibration],
    pub threshold: Option<f64>,
    pub max_len: usize,
}

impl<'a> AdpMixupPredictor<'a> {
    pub fn new(
        backbone: &'a BackboneParams,
        clean: &'a AdapterDelta,
        advs: &'a [AdapterDelta],
        calib_clean: &'a EntropyCalibration,
        calibs_adv: &'a [EntropyCalibration],
        threshold: Option<f64>,
    ) -> Self {
        AdpMixupPredictor {
            backbone,
            clean,
            advs,
            calib_clean,
            calibs_adv,
            threshold,
            max_len: DEFAULT_MAX_LEN,
        }
    }

    pub fn predict_tokens(&self, tokens: &TokenSeq) -> Result<(ProbDist, MixDiagnostics)> {
        predict_adpmixup(
            self.backbone,
            self.clean,
            self.advs,
            self.calib_clean,
            self.calibs_adv,
            tokens,
            self.threshold,
        )
    }

    pub fn predict_with_diagnostics(&self, text: &str) -> Result<(ProbDist, MixDiagnostics)> {
        let tokens = tokenize(text, self.backbone.vocab(), self.max_len);
        self.predict_tokens(&tokens)
    }
}

impl Predictor for AdpMixupPredictor<'_> {
    fn predict(&self, text: &str) -> ProbDist {
        self.predict_with_diagnostics(text)
            .expect("aligned adapters and calibrations")
            .0
    }
}
