//! Experiment orchestration: config loading, the six-method pipeline, and the
//! three diagnostic studies (attack-profile heatmap, fixed-β sweep, threshold
//! tradeoff curve).
//!
//! Everything is a deterministic function of the config: rerunning with the
//! same file produces byte-identical checkpoints and CSVs. Per-seed artifacts
//! land under `out/seed_<N>/`; cross-seed summaries at the top level of
//! `out/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{
    generate_adversarial_dataset, generate_adversarial_training_set, AttackKind, AttackSpec,
    SynonymTable,
};
use crate::baselines::{adapter_soup, evaluate, model_soup, AdpMixupPredictor, FullModelParams};
use crate::checkpoint::{save_adapter, save_backbone};
use crate::data::{read_jsonl, write_jsonl, LabeledDataset, LabeledExample};
use crate::error::{Error, Result};
use crate::mixing::{calibrate, mix_pair, CalibMode, EntropyCalibration, MixDiagnostics};
use crate::model::{AdapterDelta, AdapterPredictor, BackboneParams, ModelDims, Predictor};
use crate::synth::{toy_corpus, toy_synonym_table};
use crate::train::{
    finetune_backbone, pretrain_backbone, train_adapter, train_adapter_warm, train_augmented,
    TrainConfig,
};

/// The six methods in fixed reporting order.
pub const METHODS: [&str; 6] = [
    "CleanOnly",
    "AdvOnly",
    "AdvTrain",
    "ModelSoup",
    "AdapterSoup",
    "AdpMixup",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskConfig {
    pub name: String,
    pub train_size: usize,
    pub test_size: usize,
    /// Optional JSON Lines overrides; without them the synthetic corpus is
    /// generated per seed.
    pub train_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    /// Optional TSV synonym table; defaults to the embedded toy lexicon.
    pub synonyms_path: Option<PathBuf>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        TaskConfig {
            name: "toy_sentiment".into(),
            train_size: 400,
            test_size: 120,
            train_path: None,
            test_path: None,
            synonyms_path: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Attacks with adversarial adapters trained ahead of time (1 ≤ m ≤ 5).
    pub pre_known: Vec<AttackKind>,
    /// The attack used to build the adversarial test split.
    pub target: AttackKind,
    pub budget: f64,
    pub max_queries: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            pre_known: vec![AttackKind::CharSwap],
            target: AttackKind::CharSwap,
            budget: 0.3,
            max_queries: 500,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentParams {
    pub seeds: Vec<u64>,
    /// Adversarial fraction of the threshold-tradeoff test pool.
    pub adv_ratio: f64,
    /// Step of the fixed-β grid in the sweep.
    pub beta_step: f64,
    /// Threshold grid for the tradeoff study.
    pub thresholds: Vec<f64>,
    /// Clean/adversarial composition grid for the sweep.
    pub clean_ratios: Vec<f64>,
    /// Optional early-exit threshold used by the main pipeline's AdpMixup.
    pub threshold: Option<f64>,
}

impl Default for ExperimentParams {
    fn default() -> Self {
        ExperimentParams {
            seeds: vec![1, 2, 3, 4, 5],
            adv_ratio: 0.15,
            beta_step: 0.1,
            thresholds: (0..=10).map(|i| i as f64 / 10.0).collect(),
            clean_ratios: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            threshold: None,
        }
    }
}

/// Everything a run needs, loadable from one TOML file.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub model: ModelDims,
    pub train: TrainConfig,
    pub attack: AttackConfig,
    pub experiment: ExperimentParams,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let m = self.attack.pre_known.len();
        if !(1..=5).contains(&m) {
            return Err(Error::Config(format!(
                "pre_known must list between 1 and 5 attacks, got {m}"
            )));
        }
        if !(self.attack.budget > 0.0 && self.attack.budget <= 1.0) {
            return Err(Error::Config(format!(
                "attack budget must lie in (0,1], got {}",
                self.attack.budget
            )));
        }
        if self.attack.max_queries == 0 {
            return Err(Error::Config("max_queries must be positive".into()));
        }
        if self.experiment.seeds.is_empty() {
            return Err(Error::Config("seeds list must be nonempty".into()));
        }
        if !(0.0..=1.0).contains(&self.experiment.adv_ratio) {
            return Err(Error::Config(format!(
                "adv_ratio must lie in [0,1], got {}",
                self.experiment.adv_ratio
            )));
        }
        if !(self.experiment.beta_step > 0.0 && self.experiment.beta_step <= 1.0) {
            return Err(Error::Config(format!(
                "beta_step must lie in (0,1], got {}",
                self.experiment.beta_step
            )));
        }
        for grid in [
            &self.experiment.thresholds,
            &self.experiment.clean_ratios,
        ] {
            if grid.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(
                    "threshold and clean_ratio grids must lie within [0,1]".into(),
                ));
            }
        }
        if let Some(t) = self.experiment.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!(
                    "threshold must lie in [0,1], got {t}"
                )));
            }
        }
        if self.task.train_size < 10 || self.task.test_size < 10 {
            return Err(Error::Config(
                "train_size and test_size must each be at least 10".into(),
            ));
        }
        Ok(())
    }

    pub fn synonym_table(&self) -> Result<SynonymTable> {
        match &self.task.synonyms_path {
            Some(path) => SynonymTable::from_file(path),
            None => Ok(toy_synonym_table()),
        }
    }
}

/// Deterministic sub-seed for one purpose within a run.
fn split_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .rotate_left(23)
        ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

// Salt registry: one constant per derived randomness consumer.
const SALT_TRAIN_SPLIT: u64 = 0;
const SALT_TEST_SPLIT: u64 = 1;
const SALT_ADV_TRAIN_BASE: u64 = 2; // + attack index
const SALT_CLEAN_ADAPTER: u64 = 10;
const SALT_ADV_ADAPTER_BASE: u64 = 11; // + attack index
const SALT_ADV_UNION: u64 = 20;
const SALT_ADV_TRAIN_AUG: u64 = 21;
const SALT_FULL_FINETUNE: u64 = 22;
const SALT_ADV_TEST: u64 = 99;

/// Trained models, calibrations, and datasets for one seed.
pub struct SeedArtifacts {
    pub seed: u64,
    pub train_clean: LabeledDataset,
    pub test_clean: LabeledDataset,
    pub adv_train_sets: Vec<LabeledDataset>,
    pub adv_test: LabeledDataset,
    pub backbone: BackboneParams,
    pub clean_adapter: AdapterDelta,
    pub adv_adapters: Vec<AdapterDelta>,
    pub calib_clean: EntropyCalibration,
    pub calibs_adv: Vec<EntropyCalibration>,
}

fn load_or_generate(
    path: &Option<PathBuf>,
    classes: usize,
    size: usize,
    seed: u64,
    name: &str,
    with_anchors: bool,
) -> Result<LabeledDataset> {
    match path {
        Some(p) => read_jsonl(p, classes),
        None => Ok(toy_corpus(size, seed, name, with_anchors)),
    }
}

fn attack_spec(cfg: &ExperimentConfig, kind: AttackKind, seed: u64) -> Result<AttackSpec> {
    let mut spec = AttackSpec::new(kind, seed);
    spec.budget = cfg.attack.budget;
    spec.max_queries = cfg.attack.max_queries;
    if kind.is_word_level() {
        spec.synonyms = Some(cfg.synonym_table()?);
    }
    Ok(spec)
}

/// Pipeline front half: data, backbone, adapters, calibrations.
pub fn build_seed_artifacts(cfg: &ExperimentConfig, seed: u64) -> Result<SeedArtifacts> {
    let dims = &cfg.model;
    let train_clean = load_or_generate(
        &cfg.task.train_path,
        dims.classes,
        cfg.task.train_size,
        split_seed(seed, SALT_TRAIN_SPLIT),
        "train",
        true,
    )
    .map_err(|e| e.in_stage("load_train_data"))?;
    let test_clean = load_or_generate(
        &cfg.task.test_path,
        dims.classes,
        cfg.task.test_size,
        split_seed(seed, SALT_TEST_SPLIT),
        "test",
        false,
    )
    .map_err(|e| e.in_stage("load_test_data"))?;

    let mut train_cfg = cfg.train;
    train_cfg.seed = seed;
    let backbone = pretrain_backbone(dims, &train_clean, &train_cfg)
        .map_err(|e| e.in_stage("pretrain"))?;

    let mut clean_cfg = cfg.train;
    clean_cfg.seed = split_seed(seed, SALT_CLEAN_ADAPTER);
    let clean_adapter = train_adapter(&backbone, dims, &train_clean, &clean_cfg, "clean")
        .map_err(|e| e.in_stage("train_clean_adapter"))?;

    let victim = AdapterPredictor::new(&backbone, Some(&clean_adapter));

    let mut adv_train_sets = Vec::new();
    let mut adv_adapters = Vec::new();
    for (idx, &kind) in cfg.attack.pre_known.iter().enumerate() {
        let spec = attack_spec(cfg, kind, split_seed(seed, SALT_ADV_TRAIN_BASE + idx as u64))?;
        // Training uses the attacked copy of the whole split (best-effort text
        // for every item), not just the successes: unflippable items anchor
        // the adversarial adapter to clean competence.
        let adv_set = generate_adversarial_training_set(&victim, &train_clean, &spec)
            .map_err(|e| e.in_stage("generate_adv_train"))?;
        if adv_set.len() < 2 {
            return Err(Error::InsufficientSamples {
                pre_known: kind.to_string(),
                target: kind.to_string(),
                got: adv_set.len(),
                need: 2,
            }
            .in_stage("generate_adv_train"));
        }
        let mut adv_cfg = cfg.train;
        adv_cfg.seed = split_seed(seed, SALT_ADV_ADAPTER_BASE + idx as u64);
        // Warm-start from the clean adapter: adversarial fine-tuning continues
        // from the clean solution, so clean competence is the starting point
        // rather than something the adapter must rediscover.
        let adapter = train_adapter_warm(
            &backbone,
            dims,
            &clean_adapter,
            &adv_set,
            &adv_cfg,
            &format!("adv:{kind}"),
        )
        .map_err(|e| e.in_stage("train_adv_adapter"))?;
        adv_train_sets.push(adv_set);
        adv_adapters.push(adapter);
    }

    let calib_clean = calibrate(&backbone, &clean_adapter, &train_clean, CalibMode::Clean)
        .map_err(|e| e.in_stage("calibrate"))?;
    let mut calibs_adv = Vec::new();
    for (adapter, adv_set) in adv_adapters.iter().zip(&adv_train_sets) {
        calibs_adv.push(
            calibrate(&backbone, adapter, adv_set, CalibMode::Adv)
                .map_err(|e| e.in_stage("calibrate"))?,
        );
    }

    let target_spec = attack_spec(cfg, cfg.attack.target, split_seed(seed, SALT_ADV_TEST))?;
    let adv_test = generate_adversarial_dataset(&victim, &test_clean, &target_spec)
        .map_err(|e| e.in_stage("generate_adv_test"))?;
    if adv_test.len() < 2 {
        return Err(Error::InsufficientSamples {
            pre_known: "-".into(),
            target: cfg.attack.target.to_string(),
            got: adv_test.len(),
            need: 2,
        }
        .in_stage("generate_adv_test"));
    }

    Ok(SeedArtifacts {
        seed,
        train_clean,
        test_clean,
        adv_train_sets,
        adv_test,
        backbone,
        clean_adapter,
        adv_adapters,
        calib_clean,
        calibs_adv,
    })
}

fn concat_datasets(name: &str, sets: &[LabeledDataset]) -> LabeledDataset {
    let items: Vec<LabeledExample> = sets
        .iter()
        .flat_map(|s| s.items.iter().cloned())
        .collect();
    LabeledDataset::new(name, items)
}

/// Accuracy of one method on the clean and adversarial test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub method: &'static str,
    pub clean_acc: f64,
    pub adv_acc: f64,
}

impl MethodRow {
    pub fn avg_acc(&self) -> f64 {
        (self.clean_acc + self.adv_acc) / 2.0
    }
}

/// Pipeline back half: baselines and the six-way evaluation.
pub fn evaluate_methods(cfg: &ExperimentConfig, art: &SeedArtifacts) -> Result<Vec<MethodRow>> {
    let dims = &cfg.model;
    let b = &art.backbone;
    let seed = art.seed;

    let adv_union = concat_datasets("adv_union", &art.adv_train_sets);

    // AdvOnly: the single adversarial adapter when m = 1, otherwise a fresh
    // adapter trained on the union of all pre-known adversarial sets.
    let adv_only = if art.adv_adapters.len() == 1 {
        art.adv_adapters[0].clone()
    } else {
        let mut c = cfg.train;
        c.seed = split_seed(seed, SALT_ADV_UNION);
        train_adapter(b, dims, &adv_union, &c, "adv_only")
            .map_err(|e| e.in_stage("train_adv_only"))?
    };

    let mut aug_cfg = cfg.train;
    aug_cfg.seed = split_seed(seed, SALT_ADV_TRAIN_AUG);
    let adv_train = train_augmented(b, dims, &art.train_clean, &adv_union, &aug_cfg, "adv_train")
        .map_err(|e| e.in_stage("train_augmented"))?;

    // ModelSoup: two full models fine-tuned from the same pretrained weights
    // (same seed, same init, different data), then averaged at 0.5.
    let mut full_cfg = cfg.train;
    full_cfg.seed = split_seed(seed, SALT_FULL_FINETUNE);
    let full_clean = finetune_backbone(b, &art.train_clean, &full_cfg)
        .map_err(|e| e.in_stage("finetune_full_clean"))?;
    let full_adv = finetune_backbone(b, &adv_union, &full_cfg)
        .map_err(|e| e.in_stage("finetune_full_adv"))?;
    let soup = model_soup(
        &FullModelParams::new(full_clean, "full_clean"),
        &FullModelParams::new(full_adv, "full_adv"),
        0.5,
    )
    .map_err(|e| e.in_stage("model_soup"))?;

    let mut soup_inputs = vec![art.clean_adapter.clone()];
    soup_inputs.extend(art.adv_adapters.iter().cloned());
    let adapter_avg = adapter_soup(&soup_inputs).map_err(|e| e.in_stage("adapter_soup"))?;

    let eval_pair = |p: &dyn Predictor| -> Result<(f64, f64)> {
        Ok((
            evaluate(p, &art.test_clean).map_err(|e| e.in_stage("evaluate"))?,
            evaluate(p, &art.adv_test).map_err(|e| e.in_stage("evaluate"))?,
        ))
    };

    let mut rows = Vec::with_capacity(6);
    let (c, a) = eval_pair(&AdapterPredictor::new(b, Some(&art.clean_adapter)))?;
    rows.push(MethodRow {
        method: "CleanOnly",
        clean_acc: c,
        adv_acc: a,
    });
    let (c, a) = eval_pair(&AdapterPredictor::new(b, Some(&adv_only)))?;
    rows.push(MethodRow {
        method: "AdvOnly",
        clean_acc: c,
        adv_acc: a,
    });
    let (c, a) = eval_pair(&AdapterPredictor::new(b, Some(&adv_train)))?;
    rows.push(MethodRow {
        method: "AdvTrain",
        clean_acc: c,
        adv_acc: a,
    });
    let (c, a) = eval_pair(&AdapterPredictor::new(&soup.params, None))?;
    rows.push(MethodRow {
        method: "ModelSoup",
        clean_acc: c,
        adv_acc: a,
    });
    let (c, a) = eval_pair(&AdapterPredictor::new(b, Some(&adapter_avg)))?;
    rows.push(MethodRow {
        method: "AdapterSoup",
        clean_acc: c,
        adv_acc: a,
    });
    let mixer = AdpMixupPredictor::new(
        b,
        &art.clean_adapter,
        &art.adv_adapters,
        &art.calib_clean,
        &art.calibs_adv,
        cfg.experiment.threshold,
    );
    let (c, a) = eval_pair(&mixer)?;
    rows.push(MethodRow {
        method: "AdpMixup",
        clean_acc: c,
        adv_acc: a,
    });
    Ok(rows)
}

fn results_csv(task: &str, rows: &[MethodRow]) -> String {
    let mut out = String::from("method,dataset,clean_acc,adv_acc,avg_acc\n");
    for row in rows {
        out.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            row.method,
            task,
            row.clean_acc,
            row.adv_acc,
            row.avg_acc()
        ));
    }
    out
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Per-seed tables plus the cross-seed median table.
pub struct PipelineSummary {
    pub per_seed: Vec<(u64, Vec<MethodRow>)>,
    pub median: Vec<MethodRow>,
}

fn median_rows(per_seed: &[(u64, Vec<MethodRow>)]) -> Vec<MethodRow> {
    METHODS
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let mut clean: Vec<f64> = per_seed.iter().map(|(_, rows)| rows[i].clean_acc).collect();
            let mut adv: Vec<f64> = per_seed.iter().map(|(_, rows)| rows[i].adv_acc).collect();
            MethodRow {
                method: name,
                clean_acc: median(&mut clean),
                adv_acc: median(&mut adv),
            }
        })
        .collect()
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

/// Save the per-seed checkpoints and datasets the pipeline produced.
pub fn persist_artifacts(cfg: &ExperimentConfig, art: &SeedArtifacts, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_backbone(&dir.join("backbone.adpmix"), &art.backbone)?;
    save_adapter(&dir.join("adapter_clean.adpmix"), &art.clean_adapter)?;
    for (kind, adapter) in cfg.attack.pre_known.iter().zip(&art.adv_adapters) {
        save_adapter(&dir.join(format!("adapter_adv_{kind}.adpmix")), adapter)?;
    }
    for (kind, set) in cfg.attack.pre_known.iter().zip(&art.adv_train_sets) {
        write_jsonl(&dir.join(format!("adv_train_{kind}.jsonl")), set)?;
    }
    write_jsonl(&dir.join("adv_test.jsonl"), &art.adv_test)?;
    Ok(())
}

/// AdpMixup per-sample diagnostics over the clean test split followed by the
/// adversarial one.
fn diagnostics_csv(cfg: &ExperimentConfig, art: &SeedArtifacts) -> Result<String> {
    let m = art.adv_adapters.len();
    let mixer = AdpMixupPredictor::new(
        &art.backbone,
        &art.clean_adapter,
        &art.adv_adapters,
        &art.calib_clean,
        &art.calibs_adv,
        cfg.experiment.threshold,
    );
    let mut out = MixDiagnostics::csv_header(m);
    out.push('\n');
    let mut sample_id = 0usize;
    for dataset in [&art.test_clean, &art.adv_test] {
        for item in &dataset.items {
            let (probs, diag) = mixer.predict_with_diagnostics(&item.text)?;
            out.push_str(&diag.csv_row(m, sample_id, probs.argmax(), item.label));
            out.push('\n');
            sample_id += 1;
        }
    }
    Ok(out)
}

/// Full experimental protocol over every configured seed.
pub fn run_pipeline(cfg: &ExperimentConfig, out: &Path) -> Result<PipelineSummary> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut per_seed = Vec::new();
    for &seed in &cfg.experiment.seeds {
        let art = build_seed_artifacts(cfg, seed)?;
        let dir = seed_dir(out, seed);
        persist_artifacts(cfg, &art, &dir).map_err(|e| e.in_stage("persist"))?;
        let rows = evaluate_methods(cfg, &art)?;
        write_text(&dir.join("results.csv"), &results_csv(&cfg.task.name, &rows))
            .map_err(|e| e.in_stage("write_results"))?;
        write_text(
            &dir.join("diagnostics.csv"),
            &diagnostics_csv(cfg, &art).map_err(|e| e.in_stage("diagnostics"))?,
        )
        .map_err(|e| e.in_stage("write_results"))?;
        per_seed.push((seed, rows));
    }
    let median = median_rows(&per_seed);
    write_text(
        &out.join("summary.csv"),
        &results_csv(&cfg.task.name, &median),
    )
    .map_err(|e| e.in_stage("write_results"))?;
    Ok(PipelineSummary { per_seed, median })
}

/// Mean β matrix: one row per pre-known attack (its m=1 adapter), one column
/// for the clean split plus each target attack's adversarial split.
pub struct HeatmapResult {
    pub pre_known: Vec<AttackKind>,
    pub columns: Vec<String>,
    /// `values[row][col]`, aligned with `pre_known` × `columns`.
    pub values: Vec<Vec<f64>>,
}

/// Samples scanned per heatmap cell.
pub const PROFILE_SAMPLES: usize = 100;

/// Attack-profile study: how much clean weight (mean β) each pre-known
/// adapter assigns to samples from each attack's test distribution.
pub fn profile_heatmap(cfg: &ExperimentConfig, out: &Path) -> Result<HeatmapResult> {
    cfg.validate()?;
    if cfg.attack.pre_known.len() < 2 {
        return Err(Error::Config(
            "profile_heatmap needs at least 2 pre-known attacks".into(),
        ));
    }
    fs::create_dir_all(out)?;
    let seed = cfg.experiment.seeds[0];
    let art = build_seed_artifacts(cfg, seed)?;

    // Column datasets: clean test split, then one adversarial split per
    // pre-known kind, all generated against the clean-adapter victim.
    let victim = AdapterPredictor::new(&art.backbone, Some(&art.clean_adapter));
    let mut columns = vec!["clean".to_string()];
    let mut column_sets = vec![art.test_clean.clone()];
    for (idx, &kind) in cfg.attack.pre_known.iter().enumerate() {
        let spec = attack_spec(
            cfg,
            kind,
            split_seed(seed, SALT_ADV_TEST + 1 + idx as u64),
        )?;
        let set = generate_adversarial_dataset(&victim, &art.test_clean, &spec)
            .map_err(|e| e.in_stage("profile_attack"))?;
        columns.push(kind.to_string());
        column_sets.push(set);
    }

    let mut values = Vec::new();
    for (row_idx, &row_kind) in cfg.attack.pre_known.iter().enumerate() {
        let advs = std::slice::from_ref(&art.adv_adapters[row_idx]);
        let calibs = std::slice::from_ref(&art.calibs_adv[row_idx]);
        let mixer = AdpMixupPredictor::new(
            &art.backbone,
            &art.clean_adapter,
            advs,
            &art.calib_clean,
            calibs,
            None,
        );
        let mut row = Vec::new();
        for (col, set) in columns.iter().zip(&column_sets) {
            let head = set.head(PROFILE_SAMPLES);
            if head.len() < 2 {
                return Err(Error::InsufficientSamples {
                    pre_known: row_kind.to_string(),
                    target: col.clone(),
                    got: head.len(),
                    need: 2,
                });
            }
            let mut total = 0.0;
            for item in head {
                let (_, diag) = mixer.predict_with_diagnostics(&item.text)?;
                total += diag.beta[0];
            }
            row.push(total / head.len() as f64);
        }
        values.push(row);
    }

    let mut csv = String::from("pre_known");
    for col in &columns {
        csv.push(',');
        csv.push_str(col);
    }
    csv.push('\n');
    for (kind, row) in cfg.attack.pre_known.iter().zip(&values) {
        csv.push_str(&kind.to_string());
        for v in row {
            csv.push_str(&format!(",{v:.6}"));
        }
        csv.push('\n');
    }
    write_text(&out.join("profile.csv"), &csv).map_err(|e| e.in_stage("write_results"))?;

    Ok(HeatmapResult {
        pre_known: cfg.attack.pre_known.clone(),
        columns,
        values,
    })
}

/// Sweep outcome for one clean_ratio at one seed.
#[derive(Debug, Clone)]
pub struct RatioSummary {
    pub clean_ratio: f64,
    pub best_beta: f64,
    pub best_acc: f64,
    pub worst_beta: f64,
    pub worst_acc: f64,
    pub dynamic_acc: f64,
    pub soup_acc: f64,
}

pub struct SweepResult {
    pub per_seed: Vec<(u64, Vec<RatioSummary>)>,
}

/// First `ratio` of the pool from the clean split, the rest from the
/// adversarial split (capped by availability).
fn mixed_pool(clean: &LabeledDataset, adv: &LabeledDataset, clean_ratio: f64) -> LabeledDataset {
    let n = clean.len();
    let n_clean = (clean_ratio * n as f64).round() as usize;
    let n_adv = (n - n_clean).min(adv.len());
    let mut items: Vec<LabeledExample> = clean.items[..n_clean].to_vec();
    items.extend(adv.items[..n_adv].iter().cloned());
    LabeledDataset::new(format!("pool_{clean_ratio:.2}"), items)
}

fn beta_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    (0..=n)
        .map(|i| (i as f64 * step).min(1.0))
        .collect()
}

/// Accuracy plus mean true-class probability (the tie-break key).
fn accuracy_and_confidence(
    predictor: &dyn Predictor,
    pool: &LabeledDataset,
) -> (f64, f64) {
    let mut hits = 0usize;
    let mut conf = 0.0;
    for item in &pool.items {
        let p = predictor.predict(&item.text);
        if p.argmax() == item.label {
            hits += 1;
        }
        conf += p.prob(item.label);
    }
    (
        hits as f64 / pool.len() as f64,
        conf / pool.len() as f64,
    )
}

/// Fixed-β sweep (m = 1 only): how the best constant mixing weight moves with
/// the clean/adversarial composition of the test pool, against AdpMixup's
/// per-sample dynamic β.
pub fn beta_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepResult> {
    cfg.validate()?;
    if cfg.attack.pre_known.len() != 1 {
        return Err(Error::Config(
            "beta_sweep requires exactly one pre-known attack (m=1)".into(),
        ));
    }
    fs::create_dir_all(out)?;
    let betas = beta_grid(cfg.experiment.beta_step);
    let mut curve = String::from("seed,clean_ratio,beta,accuracy\n");
    let mut summary =
        String::from("seed,clean_ratio,best_beta,best_acc,worst_beta,worst_acc,dynamic_acc,soup_acc\n");
    let mut per_seed = Vec::new();

    for &seed in &cfg.experiment.seeds {
        let art = build_seed_artifacts(cfg, seed)?;
        let mut rows = Vec::new();
        for &ratio in &cfg.experiment.clean_ratios {
            let pool = mixed_pool(&art.test_clean, &art.adv_test, ratio);
            if pool.is_empty() {
                return Err(Error::Config(format!(
                    "sweep pool at clean_ratio {ratio} is empty"
                )));
            }
            // Evaluate every fixed β; ties on accuracy break toward higher
            // mean true-class probability, then toward the lower β.
            let mut best: Option<(f64, f64, f64)> = None; // (beta, acc, conf)
            let mut worst: Option<(f64, f64)> = None; // (beta, acc)
            for &beta in &betas {
                let mixed = mix_pair(&art.clean_adapter, &art.adv_adapters[0], beta)?;
                let predictor = AdapterPredictor::new(&art.backbone, Some(&mixed));
                let (acc, conf) = accuracy_and_confidence(&predictor, &pool);
                curve.push_str(&format!("{seed},{ratio:.2},{beta:.6},{acc:.6}\n"));
                let better = match &best {
                    None => true,
                    Some((_, ba, bc)) => acc > *ba || (acc == *ba && conf > *bc),
                };
                if better {
                    best = Some((beta, acc, conf));
                }
                let worse = match &worst {
                    None => true,
                    Some((_, wa)) => acc < *wa,
                };
                if worse {
                    worst = Some((beta, acc));
                }
            }
            let (best_beta, best_acc, _) = best.unwrap();
            let (worst_beta, worst_acc) = worst.unwrap();

            let mixer = AdpMixupPredictor::new(
                &art.backbone,
                &art.clean_adapter,
                &art.adv_adapters,
                &art.calib_clean,
                &art.calibs_adv,
                None,
            );
            let dynamic_acc = evaluate(&mixer, &pool)?;
            let soup = mix_pair(&art.clean_adapter, &art.adv_adapters[0], 0.5)?;
            let soup_acc = evaluate(&AdapterPredictor::new(&art.backbone, Some(&soup)), &pool)?;

            summary.push_str(&format!(
                "{seed},{ratio:.2},{best_beta:.6},{best_acc:.6},{worst_beta:.6},{worst_acc:.6},{dynamic_acc:.6},{soup_acc:.6}\n"
            ));
            rows.push(RatioSummary {
                clean_ratio: ratio,
                best_beta,
                best_acc,
                worst_beta,
                worst_acc,
                dynamic_acc,
                soup_acc,
            });
        }
        per_seed.push((seed, rows));
    }

    write_text(&out.join("sweep_curve.csv"), &curve).map_err(|e| e.in_stage("write_results"))?;
    write_text(&out.join("sweep_summary.csv"), &summary)
        .map_err(|e| e.in_stage("write_results"))?;
    Ok(SweepResult { per_seed })
}

/// One threshold operating point.
#[derive(Debug, Clone)]
pub struct TradeoffRow {
    pub threshold: f64,
    pub accuracy: f64,
    pub fnr: f64,
    pub fpr: f64,
    pub full_mix_fraction: f64,
}

pub struct TradeoffResult {
    pub per_seed: Vec<(u64, Vec<TradeoffRow>)>,
}

/// Threshold tradeoff study on a pool with `adv_ratio` adversarial samples.
///
/// Per-sample α_clean and both candidate predictions (clean-adapter and
/// full-mix) are computed once; each threshold then just flips which
/// prediction counts, which makes the FNR and full-mix-fraction curves
/// exactly monotone in the threshold.
pub fn threshold_tradeoff(cfg: &ExperimentConfig, out: &Path) -> Result<TradeoffResult> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut csv = String::from("seed,threshold,accuracy,fnr,fpr,full_mix_fraction\n");
    let mut per_seed = Vec::new();

    for &seed in &cfg.experiment.seeds {
        let art = build_seed_artifacts(cfg, seed)?;
        let n = art.test_clean.len();
        let n_adv = ((cfg.experiment.adv_ratio * n as f64).round() as usize).min(art.adv_test.len());
        let n_clean = n - n_adv;

        struct PoolItem {
            is_adv: bool,
            label: usize,
            alpha_clean: f64,
            clean_pred: usize,
            mix_pred: usize,
        }

        let mixer_full = AdpMixupPredictor::new(
            &art.backbone,
            &art.clean_adapter,
            &art.adv_adapters,
            &art.calib_clean,
            &art.calibs_adv,
            None,
        );
        let clean_predictor = AdapterPredictor::new(&art.backbone, Some(&art.clean_adapter));

        let mut pool = Vec::with_capacity(n_clean + n_adv);
        for (is_adv, items) in [
            (false, &art.test_clean.items[..n_clean]),
            (true, &art.adv_test.items[..n_adv]),
        ] {
            for item in items {
                let (probs, diag) = mixer_full.predict_with_diagnostics(&item.text)?;
                pool.push(PoolItem {
                    is_adv,
                    label: item.label,
                    alpha_clean: diag.alpha_clean,
                    clean_pred: clean_predictor.predict(&item.text).argmax(),
                    mix_pred: probs.argmax(),
                });
            }
        }
        let total = pool.len() as f64;
        let adv_total = pool.iter().filter(|p| p.is_adv).count() as f64;
        let clean_total = total - adv_total;

        let mut rows = Vec::new();
        for &t in &cfg.experiment.thresholds {
            let mut hits = 0usize;
            let mut flagged = 0usize;
            let mut missed_adv = 0usize;
            let mut flagged_clean = 0usize;
            for item in &pool {
                let flag = crate::mixing::detect_adversarial(item.alpha_clean, t);
                let pred = if flag { item.mix_pred } else { item.clean_pred };
                if pred == item.label {
                    hits += 1;
                }
                if flag {
                    flagged += 1;
                    if !item.is_adv {
                        flagged_clean += 1;
                    }
                } else if item.is_adv {
                    missed_adv += 1;
                }
            }
            let row = TradeoffRow {
                threshold: t,
                accuracy: hits as f64 / total,
                fnr: if adv_total > 0.0 {
                    missed_adv as f64 / adv_total
                } else {
                    0.0
                },
                fpr: if clean_total > 0.0 {
                    flagged_clean as f64 / clean_total
                } else {
                    0.0
                },
                full_mix_fraction: flagged as f64 / total,
            };
            csv.push_str(&format!(
                "{seed},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
                row.threshold, row.accuracy, row.fnr, row.fpr, row.full_mix_fraction
            ));
            rows.push(row);
        }
        per_seed.push((seed, rows));
    }

    write_text(&out.join("tradeoff.csv"), &csv).map_err(|e| e.in_stage("write_results"))?;
    Ok(TradeoffResult { per_seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Small config so harness tests stay fast; the acceptance suite runs
    /// closer to the defaults.
    pub(crate) fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            task: TaskConfig {
                train_size: 120,
                test_size: 40,
                ..TaskConfig::default()
            },
            model: ModelDims {
                vocab: 1024,
                hidden: 16,
                bottleneck: 4,
                classes: 2,
            },
            train: TrainConfig {
                epochs: 12,
                ..TrainConfig::default()
            },
            attack: AttackConfig::default(),
            experiment: ExperimentParams {
                seeds: vec![1],
                ..ExperimentParams::default()
            },
        }
    }

    #[test]
    fn config_roundtrips_through_toml() {
        let cfg = tiny_config();
        let text = toml::to_string(&cfg).unwrap();
        let back = ExperimentConfig::from_toml_str(&text).unwrap();
        assert_eq!(back.task.train_size, cfg.task.train_size);
        assert_eq!(back.attack.pre_known, cfg.attack.pre_known);
        assert_eq!(back.experiment.seeds, cfg.experiment.seeds);
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.task.train_size, 400);
        assert_eq!(cfg.attack.pre_known, vec![AttackKind::CharSwap]);
        assert_eq!(cfg.experiment.thresholds.len(), 11);
        assert_eq!(cfg.model.vocab, 4096);
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut cfg = tiny_config();
        cfg.attack.pre_known.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.attack.budget = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.experiment.seeds.clear();
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.experiment.thresholds = vec![1.5];
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_toml_str("[task]\nbogus_key = 1\n").is_err());
    }

    #[test]
    fn beta_grid_is_inclusive() {
        let grid = beta_grid(0.1);
        assert_eq!(grid.len(), 11);
        assert_eq!(grid[0], 0.0);
        assert_eq!(*grid.last().unwrap(), 1.0);
        let quarter = beta_grid(0.25);
        assert_eq!(quarter.len(), 5);
    }

    #[test]
    fn mixed_pool_composition() {
        let clean = toy_corpus(20, 1, "c", false);
        let adv = toy_corpus(30, 2, "a", false);
        let all_clean = mixed_pool(&clean, &adv, 1.0);
        assert_eq!(all_clean.len(), 20);
        assert_eq!(all_clean.items, clean.items);
        let all_adv = mixed_pool(&clean, &adv, 0.0);
        assert_eq!(all_adv.len(), 20);
        assert_eq!(all_adv.items[..], adv.items[..20]);
        let half = mixed_pool(&clean, &adv, 0.5);
        assert_eq!(half.len(), 20);
        assert_eq!(half.items[..10], clean.items[..10]);
    }

    #[test]
    fn median_definitions() {
        let mut odd = vec![3.0, 1.0, 2.0];
        assert_eq!(median(&mut odd), 2.0);
        let mut even = vec![4.0, 1.0, 3.0, 2.0];
        assert_eq!(median(&mut even), 2.5);
    }

    #[test]
    fn split_seed_is_stable_and_spread() {
        assert_eq!(split_seed(1, 0), split_seed(1, 0));
        assert_ne!(split_seed(1, 0), split_seed(1, 1));
        assert_ne!(split_seed(1, 0), split_seed(2, 0));
    }
}
