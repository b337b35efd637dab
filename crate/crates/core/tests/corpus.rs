use std::collections::HashSet;

use medscale::claimsgen::{generate_cohort, CodeSystem, EventRecord, GeneratorConfig, PatientRecord, Sex};
use medscale::corpus::*;
use proptest::prelude::*;

fn ev(code: &str, system: CodeSystem, age: u32) -> EventRecord {
    EventRecord { code: code.into(), system, age_days: age }
}

fn patient(id: &str, sex: Sex, events: Vec<EventRecord>) -> PatientRecord {
    PatientRecord { patient_id: id.into(), sex, events }
}

#[test]
fn med_codes_truncate_to_their_class() {
    assert_eq!(truncate_med_code("217102200001").unwrap(), "2171022");
    assert_eq!(truncate_med_code("1190017F1020").unwrap(), "1190017");
    assert!(matches!(truncate_med_code("123456"), Err(CorpusError::Validation { .. })));
}

#[test]
fn min_count_boundary_is_strictly_fewer_than() {
    let mut events = vec![ev("A01", CodeSystem::Diagnosis, 1); 3];
    events.extend(vec![ev("B02", CodeSystem::Diagnosis, 2); 2]);
    let v = build_vocab(&[patient("p", Sex::M, events)], 3);
    assert!(v.id(CodeSystem::Diagnosis, "A01").is_some());
    assert!(v.id(CodeSystem::Diagnosis, "B02").is_none());
    assert_eq!(v.count(CodeSystem::Diagnosis, "A01"), Some(3));
}

#[test]
fn same_code_in_two_systems_gets_two_ids() {
    let v = build_vocab(
        &[patient("p", Sex::F, vec![ev("1234567", CodeSystem::Medication, 1), ev("1234567", CodeSystem::Diagnosis, 1)])],
        1,
    );
    assert_eq!((v.n_diag(), v.n_med()), (1, 1));
    assert_eq!(v.id(CodeSystem::Diagnosis, "1234567"), Some(0));
    assert_eq!(v.id(CodeSystem::Medication, "1234567"), Some(0));
}

#[test]
fn vocabulary_json_round_trips_with_counts() {
    let records = normalize_records(&generate_cohort(&GeneratorConfig { n_patients: 200, ..Default::default() }).unwrap()).unwrap();
    let v = build_vocab(&records, 2);
    let back = Vocabulary::from_json(&v.to_json().unwrap()).unwrap();
    assert_eq!(back, v);
    assert_eq!(back.hash(), v.hash());
    assert!(v.to_json().unwrap().contains("[MASK]"));
}

#[test]
fn filtering_is_idempotent() {
    let records = normalize_records(&generate_cohort(&GeneratorConfig { n_patients: 300, ..Default::default() }).unwrap()).unwrap();
    let v = build_vocab(&records, 5);
    let filtered: Vec<PatientRecord> = records
        .iter()
        .map(|r| PatientRecord {
            events: r.events.iter().filter(|e| v.id(e.system, &e.code).is_some()).cloned().collect(),
            ..r.clone()
        })
        .collect();
    assert_eq!(build_vocab(&filtered, 5), v);
}

fn toy_vocab() -> Vocabulary {
    build_vocab(
        &[patient(
            "v",
            Sex::M,
            vec![ev("A", CodeSystem::Diagnosis, 0), ev("C", CodeSystem::Diagnosis, 0), ev("B", CodeSystem::Medication, 0)],
        )],
        1,
    )
}

#[test]
fn male_two_event_sequence_layout() {
    let v = toy_vocab();
    let s = build_sequence(
        &patient("m", Sex::M, vec![ev("A", CodeSystem::Diagnosis, 100), ev("B", CodeSystem::Medication, 200)]),
        &v,
    )
    .unwrap();
    assert_eq!(s.token_ids, vec![CLS, MALE, v.id(CodeSystem::Diagnosis, "A").unwrap(), v.id(CodeSystem::Medication, "B").unwrap()]);
    assert_eq!(s.tags, vec![TokenType::Special, TokenType::Special, TokenType::Diagnosis, TokenType::Medication]);
    assert_eq!(&s.ages[2..], &[100, 200]);
    assert!(s.is_well_formed());
}

#[test]
fn single_in_vocab_event_excludes_the_patient() {
    let v = toy_vocab();
    let p = patient("f", Sex::F, vec![ev("A", CodeSystem::Diagnosis, 1), ev("ZZZ", CodeSystem::Diagnosis, 2)]);
    assert!(build_sequence(&p, &v).is_none());
}

#[test]
fn same_day_events_keep_input_order() {
    let v = toy_vocab();
    let p = patient(
        "t",
        Sex::F,
        vec![ev("C", CodeSystem::Diagnosis, 50), ev("A", CodeSystem::Diagnosis, 50), ev("B", CodeSystem::Medication, 10)],
    );
    let s = build_sequence(&p, &v).unwrap();
    let c = v.id(CodeSystem::Diagnosis, "C").unwrap();
    let a = v.id(CodeSystem::Diagnosis, "A").unwrap();
    assert_eq!(&s.token_ids[3..], &[c, a]);
    assert_eq!(s.token_ids[1], FEMALE);
}

fn long_sequence(n_events: usize) -> TokenSequence {
    let v = toy_vocab();
    let events = (0..n_events).map(|i| ev("A", CodeSystem::Diagnosis, i as u32)).collect();
    build_sequence(&patient("l", Sex::M, events), &v).unwrap()
}

#[test]
fn truncation_keeps_the_earliest_positions() {
    let s = long_sequence(8);
    assert_eq!(truncate_sequence(&s, 8000).unwrap(), s);
    let long = long_sequence(8098);
    assert_eq!(long.len(), 8100);
    let t = truncate_sequence(&long, 8000).unwrap();
    assert_eq!(t.len(), 8000);
    assert_eq!(t.ages[7999], 7997);
    let three = truncate_sequence(&s, 3).unwrap();
    assert_eq!(three.tags.len(), 3);
    assert_eq!(three.ages[2], 0);
    assert!(truncate_sequence(&s, 2).is_err());
}

#[test]
fn ten_ids_split_seven_one_one_one() {
    let ids: Vec<String> = (0..10).map(|i| i.to_string()).collect();
    let s = split_patients(&ids, DEFAULT_RATIOS, 42).unwrap();
    let sizes: Vec<usize> = Partition::ALL.iter().map(|&p| s.ids(p).len()).collect();
    assert_eq!(sizes, vec![7, 1, 1, 1]);
    assert_eq!(split_patients(&ids, DEFAULT_RATIOS, 42).unwrap(), s);
    assert!(matches!(split_patients(&ids, [0.7, 0.1, 0.1, 0.2], 1), Err(CorpusError::Config(_))));
}

#[test]
fn sequence_cache_round_trip_and_key_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seqs.jsonl");
    let seqs = vec![long_sequence(3), long_sequence(5)];
    let key = sequence_cache_key("c", "v", 128);
    save_sequences(&path, &key, &seqs).unwrap();
    assert_eq!(load_sequences(&path, &key).unwrap(), Some(seqs));
    assert_eq!(load_sequences(&path, "other").unwrap(), None);
    assert_eq!(load_sequences(&dir.path().join("missing"), &key).unwrap(), None);
}

#[test]
fn generated_sequences_are_well_formed() {
    let records = normalize_records(&generate_cohort(&GeneratorConfig { n_patients: 500, ..Default::default() }).unwrap()).unwrap();
    let v = build_vocab(&records, 3);
    let seqs: Vec<_> = records.iter().filter_map(|r| build_sequence(r, &v)).collect();
    assert!(seqs.len() > 400);
    assert!(seqs.iter().all(TokenSequence::is_well_formed));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn split_is_disjoint_exhaustive_and_proportional(n in 0usize..3000, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("id{i}")).collect();
        let s = split_patients(&ids, DEFAULT_RATIOS, seed).unwrap();
        let mut seen = HashSet::new();
        for p in Partition::ALL {
            for id in s.ids(p) {
                prop_assert!(seen.insert(id.clone()));
                prop_assert_eq!(s.partition_of(id), Some(p));
            }
        }
        prop_assert_eq!(seen.len(), n);
        for (p, r) in Partition::ALL.iter().zip(DEFAULT_RATIOS) {
            prop_assert!((s.ids(*p).len() as f64 - r * n as f64).abs() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn sequences_are_structured_for_any_event_order(ages in prop::collection::vec(0u32..5000, 0..40), male in any::<bool>()) {
        let v = toy_vocab();
        let codes = [("A", CodeSystem::Diagnosis), ("B", CodeSystem::Medication), ("C", CodeSystem::Diagnosis), ("Q", CodeSystem::Medication)];
        let events: Vec<EventRecord> = ages.iter().enumerate().map(|(i, &a)| ev(codes[i % 4].0, codes[i % 4].1, a)).collect();
        let in_vocab = events.iter().filter(|e| e.code != "Q").count();
        let p = patient("x", if male { Sex::M } else { Sex::F }, events);
        match build_sequence(&p, &v) {
            None => prop_assert!(in_vocab < 2),
            Some(s) => {
                prop_assert!(s.is_well_formed());
                prop_assert_eq!(s.clinical_len(), in_vocab);
            }
        }
    }
}
