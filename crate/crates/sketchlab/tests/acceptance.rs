//! Acceptance battery: one PASS/FAIL line per criterion, then independent oracle cross-checks.

use std::io::Write;

use sketchlab::dgauss::{normalizer, pmf_dgauss_1d};
use sketchlab::suite::{run_criterion, CriterionOutcome, CRITERIA};

const ROOT_SEED: u64 = 2024;

fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{line}").unwrap();
    out.flush().unwrap();
}

/// Direct partial sum of `exp(-k²/2σ²)` over `|k| ≤ 40σ + 40`.
fn direct_normalizer(s2: f64) -> f64 {
    let reach = (40.0 * s2.sqrt()).ceil() as i64 + 40;
    (-reach..=reach).map(|k| (-((k * k) as f64) / (2.0 * s2)).exp()).sum()
}

#[test]
fn independent_oracles_agree_with_library() {
    for s2 in [0.5, 1.0, 4.0, 100.0, 1e6] {
        let (lib, direct) = (normalizer(s2).unwrap(), direct_normalizer(s2));
        assert!((lib - direct).abs() <= 1e-10 * direct, "Z({s2}): {lib} vs {direct}");
    }
    let s2 = 1e4;
    let z = direct_normalizer(s2);
    for k in [0i64, 1, 50, 300] {
        let direct = (-((k * k) as f64) / (2.0 * s2)).exp() / z;
        assert!((pmf_dgauss_1d(k, s2).unwrap() - direct).abs() <= 1e-12 * direct.max(1e-300));
    }
}

#[test]
fn acceptance_criteria() {
    report(&format!("acceptance battery, root seed {ROOT_SEED}"));
    let mut outcomes: Vec<CriterionOutcome> = Vec::new();
    for id in CRITERIA {
        let outcome = match run_criterion(id, ROOT_SEED) {
            Ok(o) => o,
            Err(e) => CriterionOutcome {
                id,
                title: sketchlab::suite::title(id).to_string(),
                pass: false,
                detail: format!("error: {e}"),
                seconds: 0.0,
            },
        };
        report(&outcome.line());
        outcomes.push(outcome);
    }
    let passed = outcomes.iter().filter(|o| o.pass).count();
    report(&format!("acceptance: {passed}/{} criteria pass", outcomes.len()));
    let failed: Vec<u8> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
