//! Acceptance gate: one test per release criterion, each printing a single
//! `ACCEPTANCE <n> <name>: PASS|FAIL (<detail>)` line before asserting.
//!
//! Run with `cargo test -p adpmixup --test acceptance -- --nocapture` to see
//! the per-criterion lines. The heavyweight criteria (6, 7, 8) drive the real
//! harness entry points at their default configuration; the shared per-seed
//! artifacts are built once and reused across criteria.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use adpmixup::baselines::adapter_soup;
use adpmixup::data::LabeledExample;
use adpmixup::harness::{
    beta_sweep, build_seed_artifacts, run_pipeline, threshold_tradeoff, ExperimentConfig,
    SeedArtifacts,
};
use adpmixup::mixing::{alpha_adv, alpha_clean, mix_multi, mix_pair, CalibMode, EntropyCalibration};
use adpmixup::model::{
    adapter_gradient, bottleneck_margin, fd_max_rel_error, forward, tokenize, AdapterDelta,
    BackboneParams, ModelDims, ProbDist, DEFAULT_MAX_LEN,
};
use adpmixup::synth::toy_corpus;
use adpmixup::train::{init_adapter, init_backbone};

fn report(n: usize, name: &str, ok: bool, detail: &str) {
    let verdict = if ok { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {n} {name}: {verdict} ({detail})");
    assert!(ok, "criterion {n} ({name}): {detail}");
}

/// Per-seed artifacts at the default configuration, built once. Criterion 9
/// proves the build is deterministic, so these match what the harness entry
/// points construct internally for the same seeds.
fn default_artifacts() -> &'static [SeedArtifacts] {
    static ARTIFACTS: OnceLock<Vec<SeedArtifacts>> = OnceLock::new();
    ARTIFACTS.get_or_init(|| {
        let cfg = ExperimentConfig::default();
        cfg.experiment
            .seeds
            .iter()
            .map(|&s| build_seed_artifacts(&cfg, s).expect("default artifacts"))
            .collect()
    })
}

/// Fresh output directory under the cargo-managed tmp dir.
fn out_dir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(format!("acceptance-{name}"));
    let _ = fs::remove_dir_all(&dir);
    dir
}

/// Middle element; every grid in this suite has odd length.
fn median(mut xs: Vec<f64>) -> f64 {
    assert!(xs.len() % 2 == 1);
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

fn bits_equal(a: &ProbDist, b: &ProbDist) -> bool {
    a.probs().len() == b.probs().len()
        && a.probs()
            .iter()
            .zip(b.probs())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

fn hits<'a>(
    backbone: &BackboneParams,
    adapter: &AdapterDelta,
    items: impl Iterator<Item = &'a LabeledExample>,
) -> usize {
    items
        .filter(|it| {
            let t = tokenize(&it.text, backbone.vocab(), DEFAULT_MAX_LEN);
            forward(backbone, Some(adapter), &t).unwrap().argmax() == it.label
        })
        .count()
}

/// 1. `mix_pair` at β = 1 and β = 0 reproduces the clean and adversarial
/// adapters bit-exactly on 1,000 random inputs, in under 5 seconds.
#[test]
fn c1_reduction_identities() {
    let art = &default_artifacts()[0];
    let adv = &art.adv_adapters[0];
    let mix1 = mix_pair(&art.clean_adapter, adv, 1.0).unwrap();
    let mix0 = mix_pair(&art.clean_adapter, adv, 0.0).unwrap();
    let probe = toy_corpus(1000, 777, "probe", false);

    let t0 = Instant::now();
    let mut mismatches = 0usize;
    for item in &probe.items {
        let t = tokenize(&item.text, art.backbone.vocab(), DEFAULT_MAX_LEN);
        let clean_ref = forward(&art.backbone, Some(&art.clean_adapter), &t).unwrap();
        let adv_ref = forward(&art.backbone, Some(adv), &t).unwrap();
        let via_mix1 = forward(&art.backbone, Some(&mix1), &t).unwrap();
        let via_mix0 = forward(&art.backbone, Some(&mix0), &t).unwrap();
        if !bits_equal(&clean_ref, &via_mix1) || !bits_equal(&adv_ref, &via_mix0) {
            mismatches += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    report(
        1,
        "reduction-identities",
        mismatches == 0 && secs < 5.0,
        &format!("{mismatches} of 1000 inputs differ; {secs:.2}s"),
    );
}

/// 2. `mix_multi` equals the elementwise mean of the m pairwise mixes to
/// within 1e-12, over 200 random delta sets with m ∈ {1..5}.
#[test]
fn c2_multi_mix_mean_identity() {
    let dims = ModelDims {
        vocab: 32,
        hidden: 7,
        bottleneck: 3,
        classes: 4,
    };
    let n_params = AdapterDelta::zeros(&dims, "").flatten().len();
    let mut rng = ChaCha20Rng::seed_from_u64(2026);
    let random_delta = |rng: &mut ChaCha20Rng| {
        let flat: Vec<f64> = (0..n_params).map(|_| rng.random_range(-1.0..1.0)).collect();
        AdapterDelta::from_flat(&dims, &flat, "rand").unwrap()
    };

    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let m = rng.random_range(1..=5usize);
        let clean = random_delta(&mut rng);
        let advs: Vec<AdapterDelta> = (0..m).map(|_| random_delta(&mut rng)).collect();
        // Snap a few betas onto the exact endpoints so the clone shortcuts
        // are held to the same identity as the generic path.
        let betas: Vec<f64> = (0..m)
            .map(|_| {
                let b: f64 = rng.random();
                if b < 0.05 {
                    0.0
                } else if b > 0.95 {
                    1.0
                } else {
                    b
                }
            })
            .collect();

        let multi = mix_multi(&clean, &advs, &betas).unwrap().flatten();
        let mut mean = vec![0.0; n_params];
        for (adv, &beta) in advs.iter().zip(&betas) {
            let pair = mix_pair(&clean, adv, beta).unwrap().flatten();
            for (acc, v) in mean.iter_mut().zip(&pair) {
                *acc += v / m as f64;
            }
        }
        for (a, b) in multi.iter().zip(&mean) {
            worst = worst.max((a - b).abs());
        }
    }
    report(
        2,
        "multi-mix-mean-identity",
        worst <= 1e-12,
        &format!("max elementwise |Δ| {worst:.2e} over 200 delta sets"),
    );
}

/// 3. AdapterSoup over {clean, adv} and AdpMixup with β forced to 0.5 score
/// identically on every test split.
#[test]
fn c3_adapter_soup_equivalence() {
    let mut ok = true;
    let mut splits = 0usize;
    for art in default_artifacts() {
        let soup = adapter_soup(&[art.clean_adapter.clone(), art.adv_adapters[0].clone()]).unwrap();
        let forced = mix_pair(&art.clean_adapter, &art.adv_adapters[0], 0.5).unwrap();
        for split in [&art.test_clean, &art.adv_test] {
            let a = hits(&art.backbone, &soup, split.items.iter());
            let b = hits(&art.backbone, &forced, split.items.iter());
            if a != b {
                ok = false;
            }
            splits += 1;
        }
    }
    report(
        3,
        "adapter-soup-equivalence",
        ok,
        &format!("accuracies equal on all {splits} splits across 5 seeds"),
    );
}

/// 4. Analytic adapter gradients match central finite differences within
/// relative 1e-4 on 100 random configurations.
#[test]
fn c4_gradient_correctness() {
    let dims = ModelDims {
        vocab: 64,
        hidden: 6,
        bottleneck: 2,
        classes: 3,
    };
    let texts = toy_corpus(200, 4242, "grad", false);
    let mut checked = 0usize;
    let mut attempt = 0u64;
    let mut worst: f64 = 0.0;
    while checked < 100 {
        attempt += 1;
        let seed = 40_000 + attempt;
        let mut b = init_backbone(&dims, seed);
        b.scale_in_place(3.0); // push activations away from zero
        let mut a = init_adapter(&dims, seed, "fd");
        a.scale_in_place(500.0); // magnify so bottleneck units activate
        let item = &texts.items[attempt as usize % texts.items.len()];
        let t = tokenize(&item.text, dims.vocab, DEFAULT_MAX_LEN);
        if bottleneck_margin(&b, &a, &t).unwrap() < 1e-2 {
            continue; // too close to the ReLU kink for finite differences
        }
        let label = (attempt % dims.classes as u64) as usize;
        let (_, grad) = adapter_gradient(&b, &a, &t, label).unwrap();
        worst = worst.max(fd_max_rel_error(&b, &a, &t, label, &grad));
        checked += 1;
    }
    report(
        4,
        "gradient-correctness",
        worst < 1e-4,
        &format!("max rel error {worst:.2e} over 100 configs ({attempt} candidates)"),
    );
}

/// 5. Coefficients stay in [0,1] under fuzzed (including out-of-range and
/// degenerate) entropies; α_clean is non-increasing and α_adv non-decreasing
/// on a 1,000-point entropy grid.
#[test]
fn c5_calibration_bounds_and_monotonicity() {
    let mut rng = ChaCha20Rng::seed_from_u64(55);
    let mut bound_violations = 0usize;
    for _ in 0..2000 {
        let lo = rng.random_range(-1.0..2.0);
        // One case in ten is degenerate (min == max).
        let hi = if rng.random::<f64>() < 0.1 {
            lo
        } else {
            lo + rng.random_range(0.0..2.0)
        };
        let cc = EntropyCalibration {
            min_h: lo,
            max_h: hi,
            mode: CalibMode::Clean,
            n_samples: 100,
        };
        let ca = EntropyCalibration {
            mode: CalibMode::Adv,
            ..cc
        };
        let h = rng.random_range(-2.0..4.0); // deliberately exceeds the band
        if !(0.0..=1.0).contains(&alpha_clean(&cc, h)) {
            bound_violations += 1;
        }
        if !(0.0..=1.0).contains(&alpha_adv(&ca, h)) {
            bound_violations += 1;
        }
    }

    let cc = EntropyCalibration {
        min_h: 0.2,
        max_h: 0.6,
        mode: CalibMode::Clean,
        n_samples: 100,
    };
    let ca = EntropyCalibration {
        mode: CalibMode::Adv,
        ..cc
    };
    let grid: Vec<f64> = (0..1000).map(|i| -0.5 + 1.8 * i as f64 / 999.0).collect();
    let mut monotone = true;
    for w in grid.windows(2) {
        if alpha_clean(&cc, w[1]) > alpha_clean(&cc, w[0]) {
            monotone = false;
        }
        if alpha_adv(&ca, w[1]) < alpha_adv(&ca, w[0]) {
            monotone = false;
        }
    }
    report(
        5,
        "calibration-bounds",
        bound_violations == 0 && monotone,
        &format!("{bound_violations} bound violations in 2000 fuzzed cases; monotone on 1000-point grid"),
    );
}

/// 6. Default pipeline (m = 1, pre-known == target): median over 5 seeds of
/// AdpMixup's avg(clean, adv) accuracy is within 0.02 of AdapterSoup's and of
/// the better single-adapter baseline, and the whole run stays under 10 min.
#[test]
fn c6_desk_scale_trend() {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.attack.pre_known.len(), 1);
    assert_eq!(cfg.attack.pre_known[0], cfg.attack.target);

    let dir = out_dir("pipeline");
    let t0 = Instant::now();
    let summary = run_pipeline(&cfg, &dir).unwrap();
    let secs = t0.elapsed().as_secs_f64();
    assert_eq!(summary.per_seed.len(), cfg.experiment.seeds.len());

    let med = |method: &str| -> f64 {
        median(
            summary
                .per_seed
                .iter()
                .map(|(_, rows)| rows.iter().find(|r| r.method == method).unwrap().avg_acc())
                .collect(),
        )
    };
    let adp = med("AdpMixup");
    let soup = med("AdapterSoup");
    let clean = med("CleanOnly");
    let adv = med("AdvOnly");
    let ok = adp >= soup - 0.02 && adp >= clean.max(adv) - 0.02 && secs <= 600.0;
    report(
        6,
        "desk-scale-trend",
        ok,
        &format!(
            "median avg acc: AdpMixup {adp:.3}, AdapterSoup {soup:.3}, CleanOnly {clean:.3}, AdvOnly {adv:.3}; {secs:.0}s"
        ),
    );
}

/// 7. Threshold tradeoff at 15% adversarial ratio: FNR non-increasing and
/// full-mix fraction non-decreasing along the 11-point grid on every seed;
/// at τ = 0 nothing is flagged and accuracy equals the clean adapter's pool
/// accuracy exactly; at τ = 1 every sample is flagged.
#[test]
fn c7_threshold_tradeoff() {
    let cfg = ExperimentConfig::default();
    assert_eq!(cfg.experiment.thresholds.len(), 11);
    let result = threshold_tradeoff(&cfg, &out_dir("tradeoff")).unwrap();

    let mut ok = true;
    let mut notes: Vec<String> = Vec::new();
    for ((seed, rows), art) in result.per_seed.iter().zip(default_artifacts()) {
        assert_eq!(*seed, art.seed);
        assert_eq!(rows.len(), cfg.experiment.thresholds.len());
        for w in rows.windows(2) {
            if w[1].fnr > w[0].fnr {
                ok = false;
                notes.push(format!("seed {seed}: fnr rises at τ={}", w[1].threshold));
            }
            if w[1].full_mix_fraction < w[0].full_mix_fraction {
                ok = false;
                notes.push(format!("seed {seed}: full-mix drops at τ={}", w[1].threshold));
            }
        }

        // Mirror the harness pool and score it with the clean adapter alone.
        let n = art.test_clean.len();
        let n_adv = ((cfg.experiment.adv_ratio * n as f64).round() as usize).min(art.adv_test.len());
        let pool_hits = hits(
            &art.backbone,
            &art.clean_adapter,
            art.test_clean.items[..n - n_adv]
                .iter()
                .chain(art.adv_test.items[..n_adv].iter()),
        );
        let clean_pool_acc = pool_hits as f64 / n as f64;

        let first = &rows[0];
        let last = rows.last().unwrap();
        if first.threshold != 0.0 || first.full_mix_fraction != 0.0 || first.accuracy != clean_pool_acc {
            ok = false;
            notes.push(format!(
                "seed {seed}: τ=0 endpoint (full_mix {}, acc {} vs clean pool {clean_pool_acc})",
                first.full_mix_fraction, first.accuracy
            ));
        }
        if last.threshold != 1.0 || last.full_mix_fraction != 1.0 {
            ok = false;
            notes.push(format!(
                "seed {seed}: τ=1 endpoint (full_mix {})",
                last.full_mix_fraction
            ));
        }
    }
    let detail = if notes.is_empty() {
        "monotone on all 5 seeds; exact endpoints at τ=0 and τ=1".to_string()
    } else {
        notes.join("; ")
    };
    report(7, "threshold-tradeoff", ok, &detail);
}

/// 8. β sweep over clean/adversarial mixes: the best fixed β is 1.0 at clean
/// ratio 1.0 and 0.0 at ratio 0.0 (medians over seeds), and dynamic AdpMixup
/// stays within 0.05 of the best fixed β at every ratio (median over seeds).
#[test]
fn c8_sweep_sanity() {
    let cfg = ExperimentConfig::default();
    let result = beta_sweep(&cfg, &out_dir("sweep")).unwrap();

    let mut ok = true;
    let mut max_gap = f64::NEG_INFINITY;
    let mut endpoints = String::new();
    for (idx, &ratio) in cfg.experiment.clean_ratios.iter().enumerate() {
        let col: Vec<_> = result.per_seed.iter().map(|(_, rs)| &rs[idx]).collect();
        assert!(col.iter().all(|r| r.clean_ratio == ratio));
        let beta_med = median(col.iter().map(|r| r.best_beta).collect());
        let gap_med = median(col.iter().map(|r| r.best_acc - r.dynamic_acc).collect());
        max_gap = max_gap.max(gap_med);
        if gap_med > 0.05 {
            ok = false;
        }
        if ratio == 1.0 {
            if beta_med != 1.0 {
                ok = false;
            }
            endpoints = format!("best β medians: {beta_med:.1} at ratio 1.0, {endpoints}");
        }
        if ratio == 0.0 {
            if beta_med != 0.0 {
                ok = false;
            }
            endpoints = format!("{beta_med:.1} at ratio 0.0");
        }
    }
    report(
        8,
        "sweep-sanity",
        ok,
        &format!("{endpoints}; max median best-vs-dynamic gap {max_gap:+.3}"),
    );
}

/// 9. Identical config and seed produce byte-identical checkpoints and CSVs
/// across two independent runs. A reduced configuration keeps the double run
/// quick; the write path is the same at every scale.
#[test]
fn c9_determinism() {
    let mut cfg = ExperimentConfig::default();
    cfg.task.train_size = 120;
    cfg.task.test_size = 40;
    cfg.train.epochs = 40;
    cfg.experiment.seeds = vec![7];

    let dir_a = out_dir("det-a");
    let dir_b = out_dir("det-b");
    run_pipeline(&cfg, &dir_a).unwrap();
    run_pipeline(&cfg, &dir_b).unwrap();

    fn collect(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
        fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
            for entry in fs::read_dir(dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    walk(&path, root, out);
                } else {
                    let rel = path.strip_prefix(root).unwrap().to_path_buf();
                    out.insert(rel, fs::read(&path).unwrap());
                }
            }
        }
        let mut out = BTreeMap::new();
        walk(root, root, &mut out);
        out
    }

    let files_a = collect(&dir_a);
    let files_b = collect(&dir_b);
    let mut differing: Vec<String> = Vec::new();
    for (rel, bytes) in &files_a {
        if files_b.get(rel) != Some(bytes) {
            differing.push(rel.display().to_string());
        }
    }
    for rel in files_b.keys() {
        if !files_a.contains_key(rel) {
            differing.push(rel.display().to_string());
        }
    }
    let ok = !files_a.is_empty() && differing.is_empty();
    let detail = if differing.is_empty() {
        format!("{} files byte-identical across two runs", files_a.len())
    } else {
        format!("differs: {}", differing.join(", "))
    };
    report(9, "determinism", ok, &detail);
}
