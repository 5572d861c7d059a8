//! Small end-to-end runs of each learner: determinism, serialization and oracle checks.

use blockmdp::access::{AccessHandle, Mode};
use blockmdp::envs::{random_block_mdp, EnvSpec, RandomParams};
use blockmdp::plhr::verify::verify_plhr;
use blockmdp::plhr::{run_plhr, PlhrParams, PlhrRun};
use blockmdp::plhr_det::{run_plhr_d, verify_det, DetParams};
use blockmdp::psdp::run_psdp;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn psdp_is_backward_and_reproducible() {
    let spec: EnvSpec = serde_json::from_str(r#"{"generator":"comb_lock","horizon":3,"m_good":4,"m_bad":8}"#).unwrap();
    let env = spec.build().unwrap();
    let run = |seed| {
        let mut acc = AccessHandle::new(&env.mdp, Some(&env.mu), Mode::MuReset, seed).unwrap();
        run_psdp(&mut acc, &env.class, 300, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    };
    let a = run(4);
    assert!(a.is_backward());
    assert_eq!(a.episodes, 900);
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&run(4)).unwrap());
}

#[test]
fn plhr_d_solves_a_small_deterministic_instance() {
    let mut p = RandomParams::new(3, 2, 3, 3, 21);
    p.deterministic = true;
    let env = random_block_mdp(&p).unwrap();
    let mut params = DetParams::new(0.1);
    params.tol_scale = 4.0;
    let mut acc = AccessHandle::new(&env.mdp, Some(&env.mu), Mode::HybridPlusEmission, 21).unwrap();
    let run = run_plhr_d(&mut acc, &env.class, &params).unwrap();
    let v = verify_det(&env, &run, 0.1, 64.0).unwrap();
    assert!(v.suboptimality <= 0.1, "{v:?}");
    assert_eq!(v.ground_truth_deletions, 0);
    assert!(v.suboptimality >= -1e-9);
}

#[test]
fn plhr_run_round_trips_through_json() {
    let env = random_block_mdp(&RandomParams::new(2, 2, 2, 3, 5)).unwrap();
    let mut params = PlhrParams::new(0.1, 10, 20, 100);
    params.eps_tol = Some(0.1);
    params.eps_dec = Some(0.11);
    let mut acc = AccessHandle::new(&env.mdp, Some(&env.mu), Mode::HybridReset, 5).unwrap().with_oracle_mc(true);
    let run = run_plhr(&mut acc, &env.class, &params, Some(&env.mdp)).unwrap();
    let text = serde_json::to_string(&run).unwrap();
    let back: PlhrRun = serde_json::from_str(&text).unwrap();
    assert_eq!(back, run);
    assert!(run.audit.lemma_checks.iter().all(|c| c.decode_valid && c.biclique));
    let v = verify_plhr(&env.mdp, &env.class, &run).unwrap();
    assert!(v.suboptimality >= -1e-9);
}

#[test]
fn plhr_rejects_online_access() {
    let env = random_block_mdp(&RandomParams::new(2, 2, 2, 3, 1)).unwrap();
    let mut acc = AccessHandle::new(&env.mdp, Some(&env.mu), Mode::Online, 1).unwrap();
    assert!(run_plhr(&mut acc, &env.class, &PlhrParams::new(0.1, 4, 4, 4), None).is_err());
}
