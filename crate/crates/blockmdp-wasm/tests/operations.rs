//! The demo operations, exercised natively.

use blockmdp_wasm::{coefficients_json, highway_json, omd_step_json};
use serde_json::Value;

#[test]
fn coefficients_of_comb_lock() {
    let out: Value =
        serde_json::from_str(&coefficients_json(r#"{"generator":"comb_lock","horizon":3,"m_good":6,"m_bad":24}"#).unwrap())
            .unwrap();
    assert!((out["c_cov"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert!(coefficients_json(r#"{"generator":"nope"}"#).is_err());
}

#[test]
fn omd_step_with_and_without_constraints() {
    let free: Value =
        serde_json::from_str(&omd_step_json(r#"{"prev":[0.5,0.5],"loss":[1.0,0.0],"step":1.0}"#).unwrap()).unwrap();
    let p0 = free["next"][0].as_f64().unwrap();
    let expected = (-1f64).exp() / ((-1f64).exp() + 1.0);
    assert!((p0 - expected).abs() < 1e-12);
    let boxed: Value = serde_json::from_str(
        &omd_step_json(
            r#"{"prev":[0.5,0.5],"loss":[1.0,0.0],"step":1.0,"constraints":[{"groups":[[0],[1]],"targets":[0.5,0.5],"budget":0.2}]}"#,
        )
        .unwrap(),
    )
    .unwrap();
    assert!((boxed["next"][0].as_f64().unwrap() - 0.4).abs() < 1e-7);
    assert_eq!(boxed["feasible_unconstrained"], Value::Bool(false));
    assert!(omd_step_json(r#"{"prev":[1.0],"loss":[1.0,2.0],"step":1.0}"#).is_err());
}

#[test]
fn highway_bound() {
    let out: Value = serde_json::from_str(&highway_json(3, 15.0, 1e-3).unwrap()).unwrap();
    assert!((out["lower_bound"].as_f64().unwrap() - 0.256).abs() < 1e-9);
    assert!(out["suboptimality"].as_f64().unwrap() >= 0.256);
    assert!(highway_json(3, 2.0, 1e-3).is_err());
}
