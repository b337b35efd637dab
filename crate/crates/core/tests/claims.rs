use std::io::Cursor;

use medscale::claimsgen::*;

fn small(n: usize, seed: u64) -> GeneratorConfig {
    GeneratorConfig { n_patients: n, seed, ..GeneratorConfig::default() }
}

fn jsonl(records: &[PatientRecord]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_claims(records, &mut buf).unwrap();
    buf
}

#[test]
fn generation_is_a_pure_function_of_config() {
    let a = generate_cohort(&small(300, 7)).unwrap();
    let b = generate_cohort(&small(300, 7)).unwrap();
    assert_eq!(jsonl(&a), jsonl(&b));
    let c = generate_cohort(&small(300, 8)).unwrap();
    assert_ne!(jsonl(&a), jsonl(&c));
}

#[test]
fn zero_patients_is_empty() {
    assert!(generate_cohort(&small(0, 1)).unwrap().is_empty());
}

#[test]
fn invalid_probability_is_rejected() {
    let cfg = GeneratorConfig { link_strength: 1.5, ..small(10, 1) };
    assert!(matches!(generate_cohort(&cfg), Err(ClaimsError::Config(_))));
}

#[test]
fn codes_have_the_expected_shapes_and_events_are_sorted() {
    for r in generate_cohort(&small(500, 3)).unwrap() {
        assert!(r.events.windows(2).all(|w| w[0].age_days <= w[1].age_days));
        for e in &r.events {
            match e.system {
                CodeSystem::Diagnosis => assert!(is_icd10_shaped(&e.code), "{}", e.code),
                CodeSystem::Medication => assert!(is_yj_shaped(&e.code) && e.code.len() == 12, "{}", e.code),
            }
        }
    }
}

#[test]
fn default_cohort_matches_calibration_bands() {
    let records = generate_cohort(&GeneratorConfig::default()).unwrap();
    assert_eq!(records.len(), 10_000);
    let s = summarize(&records).unwrap();
    assert!((10.0..=60.0).contains(&s.sequence_length.median), "{:?}", s.sequence_length);
    assert!((100.0..=2000.0).contains(&s.observation_days.median), "{:?}", s.observation_days);
    assert!((0.45..=0.55).contains(&s.male_fraction), "{}", s.male_fraction);
    // elderly-skewed: median first-record age above 60 years
    assert!(s.age_at_first_record_days.median > 60.0 * 365.0);
}

#[test]
fn linked_medication_follows_onset_at_the_configured_rate() {
    let cfg = GeneratorConfig { link_strength: 0.7, ..small(0, 11) };
    let world = CodeWorld::new(&cfg).unwrap();
    let (mut trials, mut hits) = (0usize, 0usize);
    let mut i = 0;
    while trials < 20_000 {
        let p = generate_patient(&world, &cfg, i);
        i += 1;
        for o in &p.onsets {
            let code = world.linked_med_code(o.latent);
            trials += 1;
            let lo = o.age_days;
            let hi = o.age_days + cfg.link_max_delay_days;
            if p.record.events.iter().any(|e| e.code == code && (lo..=hi).contains(&e.age_days)) {
                hits += 1;
            }
        }
    }
    let n = trials as f64;
    let p = cfg.link_strength;
    let sigma = (n * p * (1.0 - p)).sqrt();
    assert!((hits as f64 - n * p).abs() <= 3.0 * sigma, "{hits} of {trials}");
}

#[test]
fn jsonl_round_trip_is_identity() {
    let records = generate_cohort(&small(200, 5)).unwrap();
    let parsed = parse_claims(Cursor::new(jsonl(&records))).unwrap();
    assert_eq!(parsed, records);
}

#[test]
fn writer_emits_keys_in_schema_order() {
    let r = PatientRecord {
        patient_id: "p1".into(),
        sex: Sex::F,
        events: vec![EventRecord { code: "I10".into(), system: CodeSystem::Diagnosis, age_days: 27000 }],
    };
    let line = String::from_utf8(jsonl(&[r])).unwrap();
    assert_eq!(
        line,
        "{\"patient_id\":\"p1\",\"sex\":\"F\",\"events\":[{\"code\":\"I10\",\"system\":\"icd10\",\"age_days\":27000}]}\n"
    );
}

#[test]
fn missing_sex_is_a_parse_error_naming_the_field_and_line() {
    let input = "{\"patient_id\":\"a\",\"sex\":\"M\",\"events\":[]}\n{\"patient_id\":\"b\",\"events\":[]}\n";
    match parse_claims(Cursor::new(input)) {
        Err(ClaimsError::Parse { line, message }) => {
            assert_eq!(line, 2);
            assert!(message.contains("sex"), "{message}");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn out_of_order_events_are_sorted_and_unknown_fields_ignored() {
    let input = r#"{"patient_id":"x","sex":"M","extra":1,"events":[{"code":"B1","system":"yj","age_days":30,"note":"z"},{"code":"A1","system":"icd10","age_days":10},{"code":"C1","system":"icd10","age_days":30}]}"#;
    let r = &parse_claims(Cursor::new(input)).unwrap()[0];
    let codes: Vec<&str> = r.events.iter().map(|e| e.code.as_str()).collect();
    assert_eq!(codes, ["A1", "B1", "C1"]);
}

#[test]
fn negative_age_and_unknown_system_are_validation_errors() {
    let neg = r#"{"patient_id":"x","sex":"F","events":[{"code":"A1","system":"icd10","age_days":-1}]}"#;
    assert!(matches!(parse_claims(Cursor::new(neg)), Err(ClaimsError::Validation { line: 1, .. })));
    let sys = r#"{"patient_id":"x","sex":"F","events":[{"code":"A1","system":"atc","age_days":1}]}"#;
    assert!(matches!(parse_claims(Cursor::new(sys)), Err(ClaimsError::Validation { line: 1, .. })));
    assert!(matches!(parse_claims(Cursor::new("{not json")), Err(ClaimsError::Parse { line: 1, .. })));
}

#[test]
fn summary_of_hand_cohorts() {
    let ev = |age| EventRecord { code: "A01".into(), system: CodeSystem::Diagnosis, age_days: age };
    let one = PatientRecord { patient_id: "a".into(), sex: Sex::M, events: (0..5).map(|i| ev(1000 + 25 * i)).collect() };
    let s = summarize(std::slice::from_ref(&one)).unwrap();
    assert_eq!(s.sequence_length.median, 5.0);
    assert_eq!(s.observation_days.median, 100.0);

    let cohort: Vec<PatientRecord> = (1..=5)
        .map(|n| PatientRecord { patient_id: format!("p{n}"), sex: Sex::F, events: (0..n).map(ev).collect() })
        .collect();
    let s = summarize(&cohort).unwrap();
    assert_eq!((s.sequence_length.q1, s.sequence_length.median, s.sequence_length.q3), (2.0, 3.0, 4.0));
    assert!(matches!(summarize(&[]), Err(ClaimsError::Contract(_))));
}
