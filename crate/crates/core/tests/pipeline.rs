mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use common::*;
use dxcausal_core::causal::CausalDag;
use dxcausal_core::ehr::{Candidate, CodeRegistry, Cohort, PatientRecord};
use dxcausal_core::gateway::TokenUsage;
use dxcausal_core::pipeline::{
    evaluate, load_run, recall_at_k, PatientArtifact, PatientOutcome, Pipeline, PipelineError, RunArtifacts,
    RunConfig, RunRequest,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const RUN_FILES: [&str; 5] = ["run.json", "artifacts.jsonl", "transcript.jsonl", "usage.json", "metrics.json"];

fn read_run_files(dir: &Path) -> Vec<Vec<u8>> {
    RUN_FILES.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect()
}

fn rule_based(root: &Path, extra: &str) -> Pipeline {
    Pipeline::load(fixture_config(root, RULE_BASED, extra)).unwrap()
}

fn ok(o: &PatientOutcome) -> &PatientArtifact {
    match o {
        PatientOutcome::Ok(a) => a,
        PatientOutcome::Failed(f) => panic!("{} failed: {}", f.patient_id, f.error),
    }
}

#[test]
fn rule_based_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let request = RunRequest::default();
    let (a1, m1, d1) = rule_based(dir.path(), "").execute(&request).unwrap();
    let first = read_run_files(&d1);
    let (a2, m2, d2) = rule_based(dir.path(), "").execute(&request).unwrap();
    assert_eq!(d1, d2);
    assert_eq!(first, read_run_files(&d2));
    assert_eq!(a1, a2);
    assert_eq!(m1, m2);
    // runs_dir is an output location and is not stored in the manifest
    let loaded = load_run(&d2).unwrap();
    assert_eq!(loaded.manifest.run_id, a2.manifest.run_id);
    assert_eq!((loaded.outcomes, loaded.total_usage), (a2.outcomes.clone(), a2.total_usage));
    assert_eq!(a2.outcomes.len(), 5);
    assert_snapshot("rule_based_fixture_artifacts.jsonl", std::str::from_utf8(&first[1]).unwrap());
    // the run id hashes absolute temp paths
    let mut metrics = m2.clone();
    metrics.run_id.clear();
    assert_snapshot("rule_based_fixture_metrics.json", &serde_json::to_string_pretty(&metrics).unwrap());
}

fn write_script(root: &Path, lines: &[(&str, u64, u64)]) -> String {
    let path = root.join("script.jsonl");
    let text: Vec<String> = lines
        .iter()
        .map(|(t, i, o)| serde_json::json!({ "text": t, "input_tokens": i, "output_tokens": o }).to_string())
        .collect();
    std::fs::write(&path, text.join("\n")).unwrap();
    format!("kind = \"scripted\"\nscript = \"{}\"", path.display())
}

const ONE_PATIENT_SCRIPT: &[(&str, u64, u64)] = &[
    ("hypertension kidney disease", 120, 6),
    ("Hypertension damages renal arteries.", 300, 8),
    ("Kidney disease causes anemia.", 280, 7),
    (r#"{"edges": [["401.9", "403.90"]]}"#, 400, 12),
    (r#"{"edges": [["401.9", "403.90"]]}"#, 450, 12),
    (r#"["403.90", "585.9"] <SEP> Hypertension drives the kidney disease."#, 900, 20),
];

#[test]
fn scripted_single_patient_run_is_reproducible() {
    let request = RunRequest {
        comment: None,
        patients: Some(vec!["p0001".into()]),
    };
    let run = |root: &Path| {
        let provider = write_script(root, ONE_PATIENT_SCRIPT);
        let p = Pipeline::load(fixture_config(root, &provider, "[params]\nk_retrieval = 2")).unwrap();
        let (artifacts, report, dir) = p.execute(&request).unwrap();
        (artifacts, report, read_run_files(&dir))
    };
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (a1, m1, f1) = run(d1.path());
    let (a2, m2, _) = run(d1.path());
    assert_eq!((&a1, &m1), (&a2, &m2));
    assert_eq!(f1, read_run_files(&d1.path().join("runs").join(&a1.manifest.run_id)));
    // a different working directory changes paths in the manifest, nothing else
    let (a3, _, _) = run(d2.path());
    assert_eq!(a1.outcomes, a3.outcomes);

    let a = ok(&a1.outcomes[0]);
    assert_eq!(a.prediction.codes, vec!["403.90", "585.9"]);
    assert_eq!(a.synthesis.as_ref().unwrap().summaries.len(), 2);
    assert_eq!(a.discovery.as_ref().unwrap().iterations.len(), 2);
    assert_eq!(a1.total_usage.input_tokens, 2450);
    assert_eq!(a1.total_usage.output_tokens, 65);
    assert_eq!(a.usage, a1.total_usage);
}

#[test]
fn provider_failure_keeps_partial_discovery_and_run_continues() {
    let dir = tempfile::tempdir().unwrap();
    let provider = write_script(dir.path(), &ONE_PATIENT_SCRIPT[..4]);
    let p = Pipeline::load(fixture_config(dir.path(), &provider, "[params]\nk_retrieval = 2")).unwrap();
    let request = RunRequest {
        comment: None,
        patients: Some(vec!["p0001".into(), "p0002".into()]),
    };
    let (artifacts, report, _) = p.execute(&request).unwrap();
    match &artifacts.outcomes[0] {
        PatientOutcome::Failed(f) => {
            assert_eq!(f.partial_discovery.as_ref().unwrap().len(), 1);
            assert!(f.error.contains("aborted"));
        }
        PatientOutcome::Ok(_) => panic!("script ran out, the patient should fail"),
    }
    assert!(matches!(artifacts.outcomes[1], PatientOutcome::Failed(_)));
    assert_eq!(report.n_failed, 2);
    assert_eq!(report.w_f1, 0.0);
}

#[test]
fn ablations_omit_exactly_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let run = |extra: &str| {
        let (a, _, _) = rule_based(dir.path(), extra).execute(&RunRequest::default()).unwrap();
        a
    };
    let full = run("");
    let no_causal = run("[ablation]\ndisable_causal = true");
    let no_knowledge = run("[ablation]\ndisable_knowledge = true");
    let neither = run("[ablation]\ndisable_causal = true\ndisable_knowledge = true");
    let ids: BTreeSet<&str> = [&full, &no_causal, &no_knowledge, &neither]
        .iter()
        .map(|a| a.manifest.run_id.as_str())
        .collect();
    assert_eq!(ids.len(), 4);

    for o in &full.outcomes {
        let a = ok(o);
        assert!(a.synthesis.is_some() && a.discovery.is_some());
    }
    for o in &no_causal.outcomes {
        let a = ok(o);
        assert!(a.synthesis.is_some() && a.discovery.is_none());
        let empty = CausalDag::empty(a.graph.nodes().iter().cloned());
        assert_eq!(a.graph, empty);
        assert!(a.prediction.exchange.request[0].content.contains(&empty.to_json()));
    }
    for o in &no_knowledge.outcomes {
        let a = ok(o);
        assert!(a.synthesis.is_none() && a.discovery.is_some());
        assert!(!a.prediction.exchange.request[0].content.contains("Disease information:"));
    }
    for o in &neither.outcomes {
        let a = ok(o);
        assert!(a.synthesis.is_none() && a.discovery.is_none());
        assert_eq!(a.usage, a.prediction.exchange.usage);
    }
}

fn sum_usage<'a>(usages: impl Iterator<Item = &'a TokenUsage>) -> (u64, u64) {
    usages.fold((0, 0), |(i, o), u| (i + u.input_tokens, o + u.output_tokens))
}

#[test]
fn token_totals_match_gateway_and_patients() {
    let dir = tempfile::tempdir().unwrap();
    let p = rule_based(dir.path(), "");
    let (artifacts, _, _) = p.execute(&RunRequest::default()).unwrap();
    let gw = p.gateway.cumulative_usage();
    let t = artifacts.total_usage;
    assert_eq!((t.input_tokens, t.output_tokens), (gw.input_tokens, gw.output_tokens));
    let per_patient = sum_usage(artifacts.outcomes.iter().map(|o| &ok(o).usage));
    assert_eq!(per_patient, (t.input_tokens, t.output_tokens));
    let expected = p.config.rates.cost(t.input_tokens, t.output_tokens);
    assert!((t.estimated_cost - expected).abs() < 1e-12);
}

#[test]
fn more_workers_same_outcomes() {
    let dir = tempfile::tempdir().unwrap();
    let (one, m1, _) = rule_based(dir.path(), "workers = 1").execute(&RunRequest::default()).unwrap();
    let (four, m4, _) = rule_based(dir.path(), "workers = 4").execute(&RunRequest::default()).unwrap();
    assert_eq!(one.outcomes, four.outcomes);
    assert_eq!(one.total_usage, four.total_usage);
    assert_eq!(m1.w_f1, m4.w_f1);
    assert_eq!(m1.per_patient, m4.per_patient);
}

#[test]
fn single_visit_patient_is_recorded_as_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cohort = dir.path().join("test.jsonl");
    let base = std::fs::read_to_string(fixtures().join("test5.jsonl")).unwrap();
    std::fs::write(&cohort, format!("{base}{{\"patient_id\":\"solo\",\"visits\":[[\"401.9\"]]}}\n")).unwrap();
    let mut config: RunConfig = fixture_config(dir.path(), RULE_BASED, "");
    config.test_cohort = cohort;
    let p = Pipeline::load(config).unwrap();
    let (artifacts, report, _) = p.execute(&RunRequest::default()).unwrap();
    assert_eq!(artifacts.outcomes.len(), 6);
    match artifacts.outcomes.last().unwrap() {
        PatientOutcome::Failed(f) => {
            assert_eq!(f.patient_id, "solo");
            assert!(f.error.contains("single visit"));
        }
        PatientOutcome::Ok(_) => panic!("no history to predict from"),
    }
    assert_eq!(report.n_failed, 1);
    assert_eq!(report.n_patients, 6);
}

/// A real artifact with its prediction and candidates replaced.
fn outcome(template: &PatientArtifact, id: &str, codes: &[&str], candidates: &[&str]) -> PatientOutcome {
    let mut a = template.clone();
    a.patient_id = id.into();
    a.prediction.codes = codes.iter().map(|c| c.to_string()).collect();
    a.candidates = candidates.iter().map(|c| Candidate { code: c.to_string(), score: 0.5 }).collect();
    PatientOutcome::Ok(a)
}

fn cohort(codes: &[&str], patients: &[(&str, Vec<Vec<usize>>)]) -> Cohort {
    let reg = Arc::new(CodeRegistry::from_codes(codes).unwrap());
    let records = patients.iter().map(|(id, v)| PatientRecord::new(*id, v.clone()).unwrap()).collect();
    Cohort::new(reg, records).unwrap()
}

fn template_run() -> (RunArtifacts, PatientArtifact) {
    let dir = tempfile::tempdir().unwrap();
    let p = rule_based(dir.path(), "");
    let request = RunRequest {
        comment: None,
        patients: Some(vec!["p0001".into()]),
    };
    let mut artifacts = p.run_inference(&request, &mut |_| Ok(())).unwrap();
    let a = ok(&artifacts.outcomes[0]).clone();
    artifacts.outcomes.clear();
    (artifacts, a)
}

#[test]
fn metrics_hand_fixtures() {
    let (mut run, t) = template_run();

    // truth {A, B, C}; top-10 holds A and B
    let c = cohort(&["A", "B", "C", "D"], &[("p1", vec![vec![3], vec![0, 1, 2]])]);
    run.outcomes = vec![outcome(&t, "p1", &["A", "D", "B"], &[])];
    let m = evaluate(&run, &c, &[10]).unwrap();
    assert!((m.recall_at[&10] - 2.0 / 3.0).abs() <= 1e-12);

    // p1 truth {A} pred {A, B}; p2 truth {B} pred {B}
    let c = cohort(&["A", "B"], &[("p1", vec![vec![1], vec![0]]), ("p2", vec![vec![0], vec![1]])]);
    run.outcomes = vec![outcome(&t, "p1", &["A", "B"], &[]), outcome(&t, "p2", &["B"], &[])];
    let m = evaluate(&run, &c, &[10]).unwrap();
    assert!((m.w_f1 - 5.0 / 6.0).abs() <= 1e-12);
    assert_eq!(m.recall_at[&10], 1.0);

    // exact predictions everywhere
    run.outcomes = vec![outcome(&t, "p1", &["A"], &[]), outcome(&t, "p2", &["B"], &[])];
    let m = evaluate(&run, &c, &[1, 10]).unwrap();
    assert_eq!((m.w_f1, m.recall_at[&1], m.recall_at[&10]), (1.0, 1.0, 1.0));
}

#[test]
fn padding_only_affects_recall() {
    let (mut run, t) = template_run();
    let c = cohort(&["A", "B", "C"], &[("p1", vec![vec![0], vec![1, 2]])]);
    run.outcomes = vec![outcome(&t, "p1", &["B"], &["B", "A", "C"])];
    let m = evaluate(&run, &c, &[1, 3]).unwrap();
    assert_eq!(m.recall_at[&1], 0.5);
    assert_eq!(m.recall_at[&3], 1.0);
    assert_eq!(m.per_patient[0].padded, 2);
    assert!((m.w_f1 - 0.5).abs() < 1e-12);
}

#[test]
fn coverage_mismatch_is_rejected() {
    let (mut run, t) = template_run();
    let c = cohort(&["A", "B"], &[("p1", vec![vec![1], vec![0]]), ("p2", vec![vec![0], vec![1]])]);
    run.outcomes = vec![outcome(&t, "p1", &["A"], &[])];
    assert!(matches!(evaluate(&run, &c, &[10]), Err(PipelineError::Coverage(_))));
    run.outcomes = vec![
        outcome(&t, "p1", &["A"], &[]),
        outcome(&t, "p2", &["A"], &[]),
        outcome(&t, "p3", &["A"], &[]),
    ];
    assert!(matches!(evaluate(&run, &c, &[10]), Err(PipelineError::Coverage(_))));
    run.outcomes = vec![
        outcome(&t, "p1", &["A"], &[]),
        outcome(&t, "p1", &["B"], &[]),
        outcome(&t, "p2", &["A"], &[]),
    ];
    assert!(matches!(evaluate(&run, &c, &[10]), Err(PipelineError::Coverage(_))));
}

#[test]
fn metrics_permutation_invariant() {
    let (mut run, t) = template_run();
    let codes = ["A", "B", "C", "D", "E"];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let raw = random_raw_cohort(&mut rng, 12, codes.len(), 4);
        let patients: Vec<(String, Vec<Vec<usize>>)> = raw
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let mut v = v.clone();
                if v.len() < 2 {
                    v.push(vec![0]);
                }
                (format!("p{i}"), v)
            })
            .collect();
        let refs: Vec<(&str, Vec<Vec<usize>>)> = patients.iter().map(|(id, v)| (id.as_str(), v.clone())).collect();
        let c = cohort(&codes, &refs);
        run.outcomes = patients
            .iter()
            .map(|(id, _)| {
                let mut pred: Vec<&str> = codes.iter().copied().filter(|_| rand::Rng::random_bool(&mut rng, 0.4)).collect();
                pred.shuffle(&mut rng);
                outcome(&t, id, &pred, &codes)
            })
            .collect();
        let base = evaluate(&run, &c, &[1, 2, 5]).unwrap();
        let mut order: Vec<usize> = (0..c.len()).collect();
        order.shuffle(&mut rng);
        let shuffled_cohort = c.reordered(&order).unwrap();
        run.outcomes.shuffle(&mut rng);
        let other = evaluate(&run, &shuffled_cohort, &[1, 2, 5]).unwrap();
        assert!((base.w_f1 - other.w_f1).abs() < 1e-12);
        for k in [1, 2, 5] {
            assert!((base.recall_at[&k] - other.recall_at[&k]).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]
    #[test]
    fn recall_non_decreasing_in_k(
        truth in proptest::collection::btree_set(0u8..30, 1..8),
        ranked in proptest::collection::vec(0u8..30, 0..40),
    ) {
        let truth: BTreeSet<String> = truth.iter().map(|c| format!("c{c}")).collect();
        let ranked: Vec<String> = ranked.iter().map(|c| format!("c{c}")).collect();
        let mut last = 0.0;
        for k in 0..=ranked.len() + 1 {
            let r = recall_at_k(&truth, &ranked, k);
            prop_assert!(r >= last && r <= 1.0);
            last = r;
        }
    }
}
