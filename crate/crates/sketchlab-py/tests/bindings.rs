use sketchlab_py::*;

#[test]
fn scalar_bindings_match_closed_forms() {
    let z = normalizer(100.0).unwrap();
    assert!((z - (2.0 * std::f64::consts::PI * 100.0).sqrt()).abs() < 1e-9);
    assert!((pmf_dgauss(0, 100.0).unwrap() - 1.0 / z).abs() < 1e-15);
    assert_eq!(sample_dgauss(1e4, 100, 1).unwrap(), sample_dgauss(1e4, 100, 1).unwrap());
}

#[test]
fn json_bindings_round_trip() {
    let spec = r#"{"family":"projection-threshold","n":64,"r":4,"seed":3,"params":{"alpha":1000.0,"b":8.0}}"#;
    let info: serde_json::Value = serde_json::from_str(&sketch_summary(spec).unwrap()).unwrap();
    assert_eq!(info["r"], 4);
    let hard: serde_json::Value = serde_json::from_str(&hard_instance("opnorm-alpha", "d1", 2).unwrap()).unwrap();
    assert_eq!(hard["instance"]["side"], hard["event"]["side"]);
    assert!(run_criterion(6, 0).unwrap().0);
}
