//! Simulated behaviour through the experiment harness against the classifier.

use erwre::classifier::SpeedSign;
use erwre::harness::{run_experiment, Agreement, ExperimentConfig};

fn config(spec: &str, mode: &str, replicas: u64, horizon: u64, seed: u64) -> ExperimentConfig {
    let text = format!(r#"{{ "spec": {spec}, "mode": "{mode}", "replicas": {replicas}, "horizon": {horizon}, "seed": {seed} }}"#);
    ExperimentConfig::from_json(&text).unwrap()
}

const SOLOMON_RIGHT: &str = r#"{ "p_law": { "kind": "constant", "params": { "p": 0.8 } },
                                 "m_law": { "kind": "constant", "params": { "m": 0 } } }"#;

#[test]
fn confidence_intervals_cover_the_true_speed() {
    let mut covered = 0;
    for seed in 0..100 {
        let report = run_experiment(&config(SOLOMON_RIGHT, "walk", 10, 2_000, 1_000 + seed)).unwrap();
        if report.aggregate("speed").unwrap().interval().contains(0.6) {
            covered += 1;
        }
    }
    assert!(covered >= 90, "95% intervals covered 0.6 in {covered} of 100 runs");
}

#[test]
fn simulated_sign_matches_the_verdict() {
    let cases = [
        // cookie-free, positive
        (SOLOMON_RIGHT, SpeedSign::Positive),
        // cookie-free, negative
        (
            r#"{ "p_law": { "kind": "two_point", "params": { "p_a": 0.2, "p_b": 0.45, "weight_a": 0.5 } },
                 "m_law": { "kind": "constant", "params": { "m": 0 } } }"#,
            SpeedSign::Negative,
        ),
        // cookie-free, zero: E[rho] > 1 and E[1/rho] > 1
        (
            r#"{ "p_law": { "kind": "two_point", "params": { "p_a": 0.25, "p_b": 0.75, "weight_a": 0.5 } },
                 "m_law": { "kind": "constant", "params": { "m": 0 } } }"#,
            SpeedSign::Zero,
        ),
        // left drift with finitely many cookies: negative
        (
            r#"{ "p_law": { "kind": "constant", "params": { "p": 0.3 } },
                 "m_law": { "kind": "geometric", "params": { "q": 0.5 } } }"#,
            SpeedSign::Negative,
        ),
        // left drift, most stacks infinite: positive
        (
            r#"{ "p_law": { "kind": "constant", "params": { "p": 0.3 } },
                 "m_law": { "kind": "two_point_with_infinity", "params": { "zero": 0.1, "infinity": 0.9 } } }"#,
            SpeedSign::Positive,
        ),
    ];
    for (spec, sign) in cases {
        let report = run_experiment(&config(spec, "walk", 16, 200_000, 77)).unwrap();
        assert_eq!(report.verdict.speed_sign, sign, "{spec}");
        assert_eq!(report.agreement, Agreement::Consistent, "{spec}: {}", report.agreement_detail);
    }
}

#[test]
fn regeneration_mode_agrees_with_direct_estimate() {
    let spec = r#"{ "p_law": { "kind": "two_point", "params": { "p_a": 0.7, "p_b": 0.9, "weight_a": 0.5 } },
                    "m_law": { "kind": "constant", "params": { "m": 0 } } }"#;
    let report = run_experiment(&config(spec, "regeneration", 16, 100_000, 3)).unwrap();
    assert_eq!(report.agreement, Agreement::Consistent, "{}", report.agreement_detail);
    let direct = report.aggregate("speed").unwrap().interval();
    let ratio = report.aggregate("ratio_speed").unwrap().interval();
    assert!(direct.overlaps(&ratio), "{direct:?} vs {ratio:?}");
    assert_eq!(report.detail["identity_violations"], 0.0);
}
