//! Metric oracles and harness behavior. The brute-force metric
//! reimplementations here stay independent of the production code paths.

use super::*;
use crate::pipeline::{AblationFlags, ModelParams, PipelineConfig};
use crate::synth::{generate_episode, TruncationRegime, WorldConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn action_pair(r: &mut ChaCha8Rng, d: usize) -> (Action, Action) {
    let kinds: Vec<DimKind> =
        (0..d).map(|i| if i < d - 2 { DimKind::Rotation } else { DimKind::Gripper }).collect();
    let gt: Vec<f64> = (0..d).map(|_| r.gen_range(-2.0..2.0)).collect();
    let pred: Vec<f64> =
        gt.iter().map(|v| v + r.gen_range(-0.8..0.8)).collect();
    (
        Action::raw(pred, kinds.clone()).unwrap(),
        Action::raw(gt, kinds).unwrap(),
    )
}

// Brute-force references.
fn oracle_strict(pred: &Action, gt: &Action, spec: &ThresholdSpec) -> u8 {
    let mut ok = true;
    for i in 0..pred.dim() {
        let thr = match pred.kinds[i] {
            DimKind::Rotation => spec.rotation,
            DimKind::Gripper => spec.gripper,
        };
        if (pred.values[i] - gt.values[i]).abs() > thr {
            ok = false;
        }
    }
    u8::from(ok)
}

fn oracle_per_dim(pred: &Action, gt: &Action, spec: &ThresholdSpec) -> f64 {
    let mut count = 0usize;
    for i in 0..pred.dim() {
        let thr = match pred.kinds[i] {
            DimKind::Rotation => spec.rotation,
            DimKind::Gripper => spec.gripper,
        };
        if (pred.values[i] - gt.values[i]).abs() <= thr {
            count += 1;
        }
    }
    count as f64 / pred.dim() as f64
}

fn oracle_l1(pred: &Action, gt: &Action) -> f64 {
    let mut total = 0.0;
    for i in 0..pred.dim() {
        total += (pred.values[i] - gt.values[i]).abs();
    }
    total / pred.dim() as f64
}

#[test]
fn strict_acc_trivial_and_boundary_cases() {
    let spec = ThresholdSpec::default();
    let kinds = vec![
        DimKind::Rotation,
        DimKind::Rotation,
        DimKind::Gripper,
    ];
    let gt = Action::raw(vec![0.5, -0.25, 3.0], kinds.clone()).unwrap();
    assert_eq!(strict_acc(&gt, &gt, &spec).unwrap(), 1);

    // One gripper dim off by 0.6 fails the 0.5 threshold.
    let off = Action::raw(vec![0.5, -0.25, 3.6], kinds.clone()).unwrap();
    assert_eq!(strict_acc(&off, &gt, &spec).unwrap(), 0);

    // Rotation exactly at the 0.1 boundary is inclusive.
    let boundary = Action::raw(vec![0.6, -0.25, 3.0], kinds).unwrap();
    assert_eq!(strict_acc(&boundary, &gt, &spec).unwrap(), 1);
}

#[test]
fn acc_per_dim_counting() {
    let spec = ThresholdSpec::default();
    let kinds = vec![DimKind::Rotation; 8];
    let gt = Action::raw(vec![0.0; 8], kinds.clone()).unwrap();
    assert_eq!(acc_per_dim(&gt, &gt, &spec).unwrap(), 1.0);
    let mut vals = vec![0.0; 8];
    vals[3] = 0.5; // one failing dim
    let pred = Action::raw(vals, kinds).unwrap();
    assert_eq!(acc_per_dim(&pred, &gt, &spec).unwrap(), 7.0 / 8.0);
}

#[test]
fn l1_distance_cases() {
    let kinds = vec![DimKind::Rotation; 2];
    let a = Action::raw(vec![1.0, 2.0], kinds.clone()).unwrap();
    assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
    let b = Action::raw(vec![2.0, 1.0], kinds).unwrap();
    assert_eq!(l1_distance(&b, &a).unwrap(), 1.0);
}

#[test]
fn metrics_match_brute_force_on_random_pairs() {
    let spec = ThresholdSpec::default();
    let mut r = ChaCha8Rng::seed_from_u64(71);
    for _ in 0..1000 {
        let (pred, gt) = action_pair(&mut r, 8);
        let s = strict_acc(&pred, &gt, &spec).unwrap();
        let p = acc_per_dim(&pred, &gt, &spec).unwrap();
        let l = l1_distance(&pred, &gt).unwrap();
        assert_eq!(s, oracle_strict(&pred, &gt, &spec));
        assert!((p - oracle_per_dim(&pred, &gt, &spec)).abs() < 1e-12);
        assert!((l - oracle_l1(&pred, &gt)).abs() < 1e-12);
        // Strictness ordering per sample.
        assert!(s as f64 <= p + 1e-12);
    }
}

#[test]
fn metric_shape_errors() {
    let spec = ThresholdSpec::default();
    let a = Action::raw(vec![0.0], vec![DimKind::Rotation]).unwrap();
    let b = Action::raw(vec![0.0, 1.0], vec![DimKind::Rotation; 2]).unwrap();
    assert!(strict_acc(&a, &b, &spec).is_err());
    assert!(acc_per_dim(&a, &b, &spec).is_err());
    assert!(l1_distance(&a, &b).is_err());
}

#[test]
fn split_rule_and_partition() {
    let rule = SplitRule::default();
    let (light, heavy) = split_by_truncation(&[0.10, 0.20], &rule).unwrap();
    assert_eq!(heavy, vec![0]);
    assert_eq!(light, vec![1]);

    // Ties go to light.
    let (light, heavy) = split_by_truncation(&[0.15, 0.15], &rule).unwrap();
    assert_eq!(light, vec![0, 1]);
    assert!(heavy.is_empty());

    // Empty input: two empty sets.
    let (light, heavy) = split_by_truncation(&[], &rule).unwrap();
    assert!(light.is_empty() && heavy.is_empty());

    // Partition is exhaustive and disjoint on random data.
    let mut r = ChaCha8Rng::seed_from_u64(72);
    let occ: Vec<f64> = (0..500).map(|_| r.gen_range(0.0..0.4)).collect();
    let (light, heavy) = split_by_truncation(&occ, &rule).unwrap();
    assert_eq!(light.len() + heavy.len(), occ.len());
    let mut all: Vec<usize> = light.iter().chain(heavy.iter()).copied().collect();
    all.sort_unstable();
    all.dedup();
    assert_eq!(all.len(), occ.len());
}

fn stub_samples(n: usize, exact: bool) -> Vec<EvalSample> {
    let mut r = ChaCha8Rng::seed_from_u64(73);
    (0..n)
        .map(|i| {
            let (pred, gt) = action_pair(&mut r, 6);
            let occupancy = if i % 2 == 0 { 0.25 } else { 0.05 };
            EvalSample {
                episode_id: format!("e{i}"),
                t: i,
                occupancy,
                pred: if exact { gt.clone() } else { pred },
                gt,
            }
        })
        .collect()
}

#[test]
fn oracle_stub_scores_perfectly_on_both_splits() {
    let report = aggregate_samples(
        "oracle",
        &stub_samples(40, true),
        &ThresholdSpec::default(),
        &SplitRule::default(),
    )
    .unwrap();
    assert_eq!(report.light.acc, 1.0);
    assert_eq!(report.heavy.acc, 1.0);
    assert_eq!(report.light.l1, 0.0);
    assert_eq!(report.heavy.l1, 0.0);
    assert_eq!(report.light.n + report.heavy.n, 40);
    report.check_invariants().unwrap();
}

fn tiny_eval_setup() -> (Vec<crate::synth::EpisodeRecord>, ModelParams) {
    let world = WorldConfig { resolution: 32, episode_len: 6, ..WorldConfig::default() };
    let episodes: Vec<_> = (0..2)
        .map(|i| {
            let regime = if i == 0 { TruncationRegime::Light } else { TruncationRegime::Heavy };
            generate_episode(&world, regime, &format!("ev{i}"), 500 + i as u64).unwrap()
        })
        .collect();
    let config = PipelineConfig {
        encoder: crate::encoder::EncoderConfig { resolution: 32, patch: 4, channels: 8, context_dim: 8 },
        dfa: crate::dfa::DfaConfig { directions: 4, dir_channels: 4, tap_len: 3, temperature: 1.0 },
        tdr: crate::tdr::TdrConfig {
            window: 4,
            fusion_hidden: 4,
            tcn_dilations: vec![1, 2],
            tcn_kernel: 2,
            tcn_channels: 8,
            regressor_hidden: 16,
            ..crate::tdr::TdrConfig::default()
        },
        ..PipelineConfig::default()
    };
    let params = ModelParams::init(&config, episodes[0].actions[0].kinds.clone(), 9).unwrap();
    (episodes, params)
}

#[test]
fn benchmark_grid_covers_variants_by_splits_and_is_deterministic() {
    let (episodes, params) = tiny_eval_setup();
    let variants: Vec<BenchVariant> = ["full", "no_dfa", "no_tdr", "no_mask", "no_refine"]
        .iter()
        .map(|name| {
            let mut p = params.clone();
            p.config.ablation = AblationFlags::variant(name).unwrap();
            BenchVariant { name: name.to_string(), params: p }
        })
        .collect();
    let spec = ThresholdSpec::default();
    let rule = SplitRule::default();
    let a = run_benchmark(&variants, &episodes, &spec, &rule).unwrap();
    assert_eq!(a.len(), 5);
    for r in &a {
        assert!(r.light.n > 0 && r.heavy.n > 0, "{}: both splits populated", r.variant);
        r.check_invariants().unwrap();
    }
    let b = run_benchmark(&variants, &episodes, &spec, &rule).unwrap();
    assert_eq!(a, b);
}

#[test]
fn benchmark_rejects_empty_eval_split() {
    let (_, params) = tiny_eval_setup();
    let variants = vec![BenchVariant { name: "full".into(), params }];
    assert!(matches!(
        run_benchmark(&variants, &[], &ThresholdSpec::default(), &SplitRule::default()),
        Err(Error::Data(_))
    ));
}

#[test]
fn sample_occupancy_agrees_with_mask_recomputation() {
    let (episodes, params) = tiny_eval_setup();
    let samples = evaluate_model(&params, &episodes).unwrap();
    for s in &samples {
        let ep = episodes.iter().find(|e| e.episode_id == s.episode_id).unwrap();
        let recomputed = ep.masks[s.t].occupancy().unwrap();
        assert!((s.occupancy - recomputed).abs() < 1e-12);
    }
}

#[test]
fn mask_study_severity_zero_equals_clean_bit_exactly() {
    let (episodes, params) = tiny_eval_setup();
    let rows = mask_quality_study(
        &params,
        &episodes,
        &[0.0, 0.5],
        &ThresholdSpec::default(),
        &SplitRule::default(),
    )
    .unwrap();
    assert_eq!(rows[0].degraded_light_l1, rows[0].clean_light_l1);
    assert_eq!(rows[0].degraded_heavy_l1, rows[0].clean_heavy_l1);
    assert_eq!(rows.len(), 2);
}

// ── Emission ─────────────────────────────────────────────────────────

fn sample_report() -> MetricReport {
    aggregate_samples(
        "full",
        &stub_samples(20, false),
        &ThresholdSpec::default(),
        &SplitRule::default(),
    )
    .unwrap()
}

#[test]
fn csv_has_exactly_two_data_rows_per_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    emit_report(&[sample_report()], &path, ReportFormat::Csv).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "variant,split,acc,acc_per_dim,l1,n");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("full,light,"));
    assert!(lines[2].starts_with("full,heavy,"));
}

#[test]
fn json_round_trip_preserves_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    let report = sample_report();
    emit_report(&[report.clone()], &path, ReportFormat::Json).unwrap();
    let parsed: Vec<MetricReport> =
        serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(parsed.len(), 1);
    assert!((parsed[0].light.l1 - report.light.l1).abs() < 1e-12);
    assert!((parsed[0].heavy.acc - report.heavy.acc).abs() < 1e-12);
}

#[test]
fn svg_has_root_element_and_one_polyline_per_variant() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.svg");
    let mut second = sample_report();
    second.variant = "no_dfa".into();
    emit_report(&[sample_report(), second], &path, ReportFormat::Svg).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("<svg"));
    assert_eq!(text.matches("<polyline").count(), 2);
}

#[test]
fn empty_reports_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    assert!(matches!(emit_report(&[], &path, ReportFormat::Csv), Err(Error::Param(_))));
}
