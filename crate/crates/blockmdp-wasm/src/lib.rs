//! WebAssembly bindings for the browser demo. Every operation takes and returns JSON
//! text so the page needs no generated type definitions. The plain functions are
//! usable from Rust; the `#[wasm_bindgen]` wrappers turn their errors into
//! JavaScript exceptions.

use blockmdp::envs::EnvSpec;
use blockmdp::oracle::coverage_report;
use blockmdp::plhr::confidence::{omd_objective, omd_step, ConfidenceSet, ConstraintBlock, L1Constraint};
use blockmdp::psdp::{highway_lower_bound, run_psdp_worstcase};
use serde::{Deserialize, Serialize};
use serde_json::json;
use wasm_bindgen::prelude::*;

/// Coverage coefficients of the environment described by an `EnvSpec` JSON object,
/// for example `{"generator": "comb_lock", "horizon": 3}`.
pub fn coefficients_json(spec: &str) -> Result<String, String> {
    let spec: EnvSpec = serde_json::from_str(spec).map_err(|e| e.to_string())?;
    let env = spec.build().map_err(|e| e.to_string())?;
    let rep = coverage_report(&env.mdp, &env.mu, &env.class).map_err(|e| e.to_string())?;
    let doc = json!({
        "env": env.name,
        "states_per_layer": env.mdp.latent().state_counts(),
        "class_size": env.class.len(),
        "c_cov": rep.c_cov,
        "c_conc": rep.c_conc,
        "c_push": rep.c_push,
        "c_cov_per_layer": rep.c_cov_per_layer,
        "admissible": env.admissible,
    });
    Ok(doc.to_string())
}

/// One grouped `ℓ₁` constraint of an OMD request.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintInput {
    groups: Vec<Vec<usize>>,
    targets: Vec<f64>,
    budget: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OmdInput {
    prev: Vec<f64>,
    loss: Vec<f64>,
    step: f64,
    #[serde(default)]
    constraints: Vec<ConstraintInput>,
}

#[derive(Debug, Serialize)]
struct OmdOutput {
    next: Vec<f64>,
    objective: f64,
    /// The update without constraints, for comparison.
    unconstrained: Vec<f64>,
    feasible_unconstrained: bool,
}

/// One mirror-descent step on the simplex intersected with the given constraints.
pub fn omd_step_json(input: &str) -> Result<String, String> {
    let inp: OmdInput = serde_json::from_str(input).map_err(|e| e.to_string())?;
    let dim = inp.prev.len();
    if dim == 0 || inp.loss.len() != dim {
        return Err(format!("prev and loss must be nonempty and of equal length (got {} and {})", dim, inp.loss.len()));
    }
    if inp.prev.iter().any(|&p| p.is_nan() || p < 0.0) || inp.step.is_nan() || inp.step <= 0.0 {
        return Err("prev must be nonnegative and step positive".into());
    }
    let mut conf = ConfidenceSet::simplex(dim);
    for c in inp.constraints {
        if c.groups.len() != c.targets.len() || c.groups.iter().flatten().any(|&i| i >= dim) {
            return Err("each constraint needs one target per group and indices below the dimension".into());
        }
        let mut seen = vec![false; dim];
        for &i in c.groups.iter().flatten() {
            if std::mem::replace(&mut seen[i], true) {
                return Err(format!("index {i} appears in two groups"));
            }
        }
        let marginal = L1Constraint::new(dim, c.groups, c.targets, c.budget);
        conf.push(ConstraintBlock { marginal, pushforward: Vec::new(), empirical: vec![1.0 / dim as f64; dim] });
    }
    let next = omd_step(&inp.prev, &inp.loss, &conf, inp.step).map_err(|e| e.to_string())?;
    let unconstrained =
        omd_step(&inp.prev, &inp.loss, &ConfidenceSet::simplex(dim), inp.step).map_err(|e| e.to_string())?;
    let out = OmdOutput {
        objective: omd_objective(&next, &inp.prev, &inp.loss, inp.step),
        feasible_unconstrained: conf.contains(&unconstrained),
        next,
        unconstrained,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

/// Closed-form lower bound on PSDP's worst-case suboptimality on the highway instance,
/// next to the suboptimality the adversarial oracle actually induces.
pub fn highway_json(depth: usize, c_push: f64, eps_stat: f64) -> Result<String, String> {
    let env = blockmdp::envs::psdp_highway(depth, c_push, eps_stat).map_err(|e| e.to_string())?;
    let out = run_psdp_worstcase(&env.mdp, &env.mu, &env.class, eps_stat).map_err(|e| e.to_string())?;
    let actions: Vec<Option<usize>> = (1..=env.mdp.horizon()).map(|h| out.run.policy.open_loop_action(h)).collect();
    let doc = json!({
        "lower_bound": highway_lower_bound(depth, c_push, eps_stat),
        "suboptimality": out.suboptimality,
        "best_value": out.best_value,
        "value": out.value,
        "actions": actions,
    });
    Ok(doc.to_string())
}

#[wasm_bindgen]
pub fn coefficients(spec: &str) -> Result<String, JsValue> {
    coefficients_json(spec).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen(js_name = omdStep)]
pub fn omd_step_js(input: &str) -> Result<String, JsValue> {
    omd_step_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn highway(depth: usize, c_push: f64, eps_stat: f64) -> Result<String, JsValue> {
    highway_json(depth, c_push, eps_stat).map_err(|e| JsValue::from_str(&e))
}
