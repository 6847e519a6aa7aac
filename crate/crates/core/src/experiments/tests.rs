use super::*;
use crate::model::MaskMode;

fn tiny(kind: ExperimentKind) -> ExperimentSpec {
    let mut s = ExperimentSpec::for_kind(kind);
    s.model = ModelConfig {
        n_layers: 2,
        d_model: 16,
        d_ff: 32,
        n_heads: 2,
        max_seq_len: 32,
        rmu_layer: 1,
        ..ModelConfig::default()
    };
    s.data.n_entities = 15;
    s.data.forget_ratio = 0.15;
    s.data.pii_records = 40;
    s.data.pretrain_texts = 0;
    s.training.retain.epochs = 4;
    s.training.inject.epochs = 10;
    s.training.unlearn.epochs = 4;
    s.training.distill.epochs = 4;
    s.seeds = vec![0, 1, 2];
    s.random_seeds = vec![7, 11, 49];
    s.stats_rounds = 100;
    s.lr_search.enabled = false;
    s.jobs = Some(1);
    s
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(parse_spec(r#"{"kind": "controlled"}"#).is_ok());
    assert!(parse_spec(r#"{"kind": "controlled", "bogus": 1}"#).is_err());
    assert!(parse_spec(r#"{"data": {"n_entitys": 3}}"#).is_err());
    assert!(parse_spec(r#"{"training": {"unlearn": {"learning_rate": 0.1}}}"#).is_err());
}

#[test]
fn parsed_spec_keeps_values() {
    let s = parse_spec(r#"{"kind": "l2_distill", "objectives": [], "seeds": [4], "lr_overrides": {"npo": 0.5}}"#)
        .unwrap();
    assert_eq!(s.kind, ExperimentKind::L2Distill);
    assert_eq!(s.seeds, vec![4]);
    assert_eq!(s.lr_overrides[&Objective::Npo], 0.5);
}

#[test]
fn invalid_specs_fail_validation() {
    let mut s = ExperimentSpec::default();
    s.seeds = vec![0, 1];
    assert!(s.validate().is_err());
    let mut s = ExperimentSpec::default();
    s.seeds = vec![0, 0, 1];
    assert!(s.validate().is_err());
    let mut s = ExperimentSpec::for_kind(ExperimentKind::L2Distill);
    s.random_seeds = vec![1, 2];
    assert!(s.validate().is_err());
    let mut s = ExperimentSpec::default();
    s.localization.mode = MaskMode::IndividualWeight;
    assert!(s.validate().is_err());
    s.kind = ExperimentKind::Revisit;
    assert!(s.validate().is_ok());
    let mut s = ExperimentSpec::default();
    s.stats_rounds = 10;
    assert!(s.validate().is_err());
}

#[test]
fn config_hash_ignores_run_location() {
    let a = ExperimentSpec::default();
    let mut b = a.clone();
    b.output_dir = Some("elsewhere".into());
    b.cache_dir = Some("cache".into());
    b.jobs = Some(3);
    assert_eq!(a.config_hash(), b.config_hash());
    b.seeds = vec![0, 1, 2];
    assert_ne!(a.config_hash(), b.config_hash());
    assert_eq!(a.config_hash().len(), 64);
    let text = serde_json::to_string(&a).unwrap();
    assert_eq!(parse_spec(&text).unwrap().config_hash(), a.config_hash());
}

fn check_outputs(out: &RunOutput) {
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(out, dir.path()).unwrap();
    assert!(written.iter().all(|p| p.exists()));
    let back = load_report(&dir.path().join("report.json")).unwrap();
    assert_eq!(back, out.report);
    let csv = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(SUMMARY_HEADER));
    assert_eq!(lines.count(), out.report.cells.len());
    for c in &out.report.cells {
        if c.error.is_none() {
            assert!(dir.path().join(c.curve.as_ref().unwrap()).exists());
        }
    }
}

#[test]
fn controlled_run_has_expected_shape() {
    let spec = tiny(ExperimentKind::Controlled);
    let out = run(&spec, None).unwrap();
    let r = &out.report;
    assert_eq!(r.config_hash, spec.config_hash());
    assert_eq!(r.originals.len(), 3);
    assert_eq!(r.cells.len(), 3 * 2 * 2);
    assert!(r.cells.iter().all(|c| c.error.is_none()), "{:?}", r.cells);
    for obj in ["npo", "rmu"] {
        for sc in ["oracle", "random"] {
            let s = r.summary(obj, sc, "aues").unwrap();
            assert_eq!(s.n, 3);
            assert!(s.sd.is_some());
        }
        let c = r.comparison(obj, "aues", "oracle").unwrap();
        assert_eq!(c.n_strata, 3);
        assert!(c.test.p_value > 0.0 && c.test.p_value <= 1.0);
    }
    assert!(r.lr_search.iter().all(|c| c.source == "default"));
    check_outputs(&out);
}

#[test]
fn pii_run_reports_aues_only() {
    let mut spec = tiny(ExperimentKind::PiiControlled);
    spec.objectives = vec![Objective::Npo];
    let out = run(&spec, None).unwrap();
    let r = &out.report;
    assert!(r.cells.iter().all(|c| c.mu95.is_none() && c.aues.is_some()));
    assert!(r.summaries.iter().all(|s| s.metric == "aues"));
    assert!(r.comparisons.iter().all(|c| c.metric == "aues"));
    assert!(r.setup.gold.mu.is_none());
}

#[test]
fn l2_run_records_residuals() {
    let spec = tiny(ExperimentKind::L2Distill);
    let out = run(&spec, None).unwrap();
    let r = &out.report;
    assert_eq!(r.cells.len(), 3 * 4);
    assert_eq!(r.distill.len(), 12);
    for d in &r.distill {
        assert_eq!(d.per_layer_initial.len(), 2);
        assert!(d.initial_residual >= 0.0);
    }
    for sc in ["random_a", "random_b", "random_c"] {
        assert!(r.summary("l2", sc, "aues").is_some());
        assert!(r.comparison("l2", "aues", "oracle").is_some());
    }
    check_outputs(&out);
}

#[test]
fn revisit_run_emits_maps_and_baseline() {
    let mut spec = tiny(ExperimentKind::Revisit);
    spec.seeds = vec![0];
    spec.random_seeds = vec![7, 11];
    spec.methods = vec![RevisitMethod::Random, RevisitMethod::Activations, RevisitMethod::Wagle];
    let out = run(&spec, None).unwrap();
    let r = &out.report;
    assert_eq!(r.cells.len(), 2 + 2);
    assert_eq!(out.maps.len(), 2);
    assert!(r.summary("original", "theta_o", "mu95").is_some());
    assert!(r.comparison("npo", "aues", "wagle").map_or(0, |c| c.n_strata) == 2);
    assert!(!r.notes.is_empty());
    check_outputs(&out);
}

#[test]
fn cache_reuses_trained_models() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = tiny(ExperimentKind::Controlled);
    spec.objectives = vec![Objective::Npo];
    let a = run(&spec, Some(dir.path())).unwrap();
    let files = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(files, 2 * (2 + 3));
    let b = run(&spec, Some(dir.path())).unwrap();
    assert_eq!(a.report, b.report);
}

#[test]
fn kind_defaults_fill_partial_specs() {
    let s = parse_spec_for(ExperimentKind::Revisit, r#"{"seeds": [3], "data": {"n_entities": 9}}"#).unwrap();
    assert_eq!(s.kind, ExperimentKind::Revisit);
    assert_eq!(s.objectives, vec![Objective::Npo]);
    assert_eq!(s.data.n_entities, 9);
    assert_eq!(s.data.attrs_per_entity, DataConfig::default().attrs_per_entity);
    let p = parse_spec_for(ExperimentKind::PiiControlled, "{}").unwrap();
    assert!(!p.metrics.truth_metrics);
    assert!(parse_spec_for(ExperimentKind::Revisit, r#"{"kind": "controlled"}"#).is_err());
    assert!(parse_spec_for(ExperimentKind::Revisit, r#"{"model": {"depth": 2}}"#).is_err());
    assert!(parse_spec_for(ExperimentKind::Revisit, "[1]").is_err());
}
