mod common;

use common::*;
use gridvolt::model::{parse_case_str, write_native_json, CaseParts, ParseOptions};
use gridvolt::{scale_load, CaseFormat, Error, GridCase};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(1.0)
}

fn parts_close(a: &CaseParts, b: &CaseParts) -> bool {
    let buses = a.buses.len() == b.buses.len()
        && a.buses.iter().zip(&b.buses).all(|(x, y)| {
            x.id == y.id
                && x.kind == y.kind
                && close(x.base_kv, y.base_kv)
                && close(x.v_init_mag, y.v_init_mag)
                && close(x.v_init_ang, y.v_init_ang)
                && close(x.v_soft_min, y.v_soft_min)
                && close(x.v_soft_max, y.v_soft_max)
        });
    let branches = a.branches.len() == b.branches.len()
        && a.branches.iter().zip(&b.branches).all(|(x, y)| {
            (x.from, x.to, x.status) == (y.from, y.to, y.status)
                && close(x.r, y.r)
                && close(x.x, y.x)
                && close(x.b_sh, y.b_sh)
                && close(x.tap, y.tap)
        });
    let gens = a.generators.len() == b.generators.len()
        && a.generators.iter().zip(&b.generators).all(|(x, y)| {
            (x.bus, x.status) == (y.bus, y.status)
                && close(x.p_set, y.p_set)
                && close(x.v_set_init, y.v_set_init)
                && close(x.q_min, y.q_min)
                && close(x.q_max, y.q_max)
        });
    let loads = a.loads.len() == b.loads.len()
        && a.loads
            .iter()
            .zip(&b.loads)
            .all(|(x, y)| (x.bus, x.status) == (y.bus, y.status) && close(x.p, y.p) && close(x.q, y.q));
    let shunts = a.shunts.len() == b.shunts.len()
        && a.shunts
            .iter()
            .zip(&b.shunts)
            .all(|(x, y)| (x.bus, x.status) == (y.bus, y.status) && close(x.g, y.g) && close(x.b, y.b));
    close(a.base_mva, b.base_mva) && buses && branches && gens && loads && shunts
}

#[test]
fn native_json_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut cases: Vec<GridCase> = (0..20).map(|_| random_network(&mut rng)).collect();
    cases.push(ieee14());
    cases.push(case9());
    for case in cases {
        let text = write_native_json(&case);
        let back = parse_case_str(&text, CaseFormat::NativeJson, &ParseOptions::default()).unwrap();
        assert!(parts_close(case.parts(), back.parts()));
    }
}

#[test]
fn ieee14_field_counts() {
    let c = ieee14();
    assert_eq!(c.buses().len(), 14);
    assert_eq!(c.branches().len(), 20);
    assert_eq!(c.generators().len(), 5);
    assert_eq!(c.generator_groups().len(), 5);
    // Published total load.
    assert!((c.total_load_mw() - 259.0).abs() < 1e-9);
}

#[test]
fn scale_load_is_multiplicative() {
    let case = ieee14();
    for (a, b) in [(0.85, 1.2), (2.0, 0.5), (1.0, 0.7)] {
        let two_step = scale_load(&scale_load(&case, a).unwrap(), b).unwrap();
        let one_step = scale_load(&case, a * b).unwrap();
        assert!(parts_close(two_step.parts(), one_step.parts()));
    }
    let unchanged = scale_load(&case, 1.0).unwrap();
    assert_eq!(unchanged, case);
}

/// One invariant violation applied to a valid native JSON document.
fn corrupt(mut doc: Value, which: usize) -> Value {
    let buses = doc["buses"].as_array().unwrap().len();
    match which {
        0 => {
            let dup = doc["buses"][0].clone();
            doc["buses"].as_array_mut().unwrap().push(dup);
        }
        1 => doc["buses"][buses - 1]["base_kv"] = json!(0.0),
        2 => doc["branches"][0]["to"] = json!(99),
        3 => {
            doc["buses"][0]["v_soft_min"] = json!(1.1);
            doc["buses"][0]["v_soft_max"] = json!(0.9);
        }
        4 => doc["branches"][0]["tap"] = json!(-1.0),
        5 => {
            doc["branches"][0]["r"] = json!(0.0);
            doc["branches"][0]["x"] = json!(0.0);
        }
        6 => doc["buses"][0]["kind"] = json!("PQ"),
        7 => doc["buses"][buses - 1]["kind"] = json!("Slack"),
        8 => {
            doc["generators"][0]["q_min"] = json!(5.0);
            doc["generators"][0]["q_max"] = json!(-5.0);
        }
        9 => doc["generators"][0]["bus"] = json!(buses),
        10 => doc["buses"][0]["color"] = json!("red"),
        11 => doc["branches"][0]["x"] = json!("0.1"),
        12 => doc["base_mva"] = json!(-100.0),
        13 => doc["loads"] = json!([{ "bus": 77, "p": 10.0 }]),
        14 => {
            doc["buses"]
                .as_array_mut()
                .unwrap()
                .push(json!({ "id": 500, "kind": "PQ", "base_kv": 330.0 }));
            doc["loads"] = json!([{ "bus": 500, "p": 10.0 }]);
        }
        15 => doc["buses"][buses - 1]["kind"] = json!("PV"),
        16 => doc["default_bounds"] = json!([1.2, 0.8]),
        _ => doc["buses"] = json!([]),
    }
    doc
}

proptest! {
    #[test]
    fn malformed_native_json_is_rejected(seed in 0u64..10_000, which in 0usize..18) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let case = random_network(&mut rng);
        let doc: Value = serde_json::from_str(&write_native_json(&case)).unwrap();
        let bad = corrupt(doc, which).to_string();
        let r = parse_case_str(&bad, CaseFormat::NativeJson, &ParseOptions::default());
        prop_assert!(r.is_err(), "corruption {} accepted", which);
    }

    #[test]
    fn truncated_native_json_is_rejected(seed in 0u64..10_000, frac in 0.0f64..0.999) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let text = write_native_json(&random_network(&mut rng));
        let cut = (text.trim_end().len() as f64 * frac) as usize;
        let r = parse_case_str(&text[..cut], CaseFormat::NativeJson, &ParseOptions::default());
        let is_parse = matches!(r, Err(Error::Parse { .. }));
        prop_assert!(is_parse, "cut at {} accepted or misreported", cut);
    }

    #[test]
    fn garbled_matpower_is_rejected(line in 15usize..60, token in "[a-z#@]{1,4}") {
        let text = std::fs::read_to_string(case_path("ieee14.m")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        prop_assume!(line < lines.len());
        let row = lines[line];
        prop_assume!(row.trim_start().starts_with(|c: char| c.is_ascii_digit()));
        let mut garbled: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
        garbled[line] = row.replacen(char::is_numeric, &token, 1);
        let r = parse_case_str(&garbled.join("\n"), CaseFormat::MatpowerText, &ParseOptions::default());
        prop_assert!(r.is_err());
    }
}

#[test]
fn matpower_structural_errors() {
    let text = std::fs::read_to_string(case_path("ieee14.m")).unwrap();
    let opts = ParseOptions::default();
    let dangling = text.replace("\t7\t8\t0\t0.17615", "\t7\t99\t0\t0.17615");
    assert!(matches!(
        parse_case_str(&dangling, CaseFormat::MatpowerText, &opts),
        Err(Error::Validation(m)) if m.contains("dangling branch endpoint")
    ));
    let no_slack = text.replace("\t1\t3\t0\t0\t0\t0\t1\t1.06", "\t1\t1\t0\t0\t0\t0\t1\t1.06");
    assert!(parse_case_str(&no_slack, CaseFormat::MatpowerText, &opts).is_err());
    let short_row = text.replace(
        "\t9\t10\t0.03181\t0.0845\t0\t0\t0\t0\t0\t0\t1\t-360\t360;",
        "\t9\t10\t0.03181;",
    );
    assert!(matches!(
        parse_case_str(&short_row, CaseFormat::MatpowerText, &opts),
        Err(Error::Parse { line, .. }) if line > 0
    ));
}
