//! Property tests over randomly generated Block MDPs.

use approx::assert_abs_diff_eq;
use blockmdp::access::{AccessError, AccessHandle, McStart, Mode};
use blockmdp::envs::{random_block_mdp, EnvBundle, RandomParams};
use blockmdp::model::{Obs, Policy};
use blockmdp::oracle::{concentrability, coverability, exact_values, occupancy, Coefficient};
use blockmdp::plhr::confidence::{omd_step, ConfidenceSet, ConstraintBlock, L1Constraint};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use proptest::prelude::*;

const MODES: [Mode; 6] =
    [Mode::Online, Mode::Generative, Mode::LocalSim, Mode::MuReset, Mode::HybridReset, Mode::HybridPlusEmission];

fn env(seed: u64, states: usize, horizon: usize, tables: usize) -> EnvBundle {
    let mut p = RandomParams::new(states, 2, horizon, 3, seed);
    p.table_policies = tables;
    random_block_mdp(&p).unwrap()
}

fn simplex_point(raw: &[f64]) -> Vec<f64> {
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// A confidence set whose constraints all contain `anchor`.
fn anchored_set(anchor: &[f64], labels: &[Vec<usize>], budgets: &[f64]) -> ConfidenceSet {
    let dim = anchor.len();
    let mut conf = ConfidenceSet::simplex(dim);
    for (lab, &budget) in labels.iter().zip(budgets) {
        let groups: Vec<Vec<usize>> = (0..dim).map(|g| (0..dim).filter(|&i| lab[i] % dim == g).collect()).collect();
        let targets = groups.iter().map(|g| g.iter().map(|&i| anchor[i]).sum()).collect();
        let c = L1Constraint::new(dim, groups, targets, budget);
        conf.push(ConstraintBlock { marginal: c, pushforward: Vec::new(), empirical: anchor.to_vec() });
    }
    conf
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn access_modes_gate_primitives(seed in 0u64..1000, mode_ix in 0usize..6) {
        let mode = MODES[mode_ix];
        let e = env(seed, 2, 3, 0);
        let mut acc = AccessHandle::new(&e.mdp, Some(&e.mu), mode, seed).unwrap();
        let mu_reset = acc.reset_mu(2);
        prop_assert_eq!(mu_reset.is_ok(), matches!(mode, Mode::MuReset | Mode::HybridReset | Mode::HybridPlusEmission));
        prop_assert_eq!(acc.sample_emission(2, 0).is_ok(), mode == Mode::HybridPlusEmission);
        // A fresh handle has returned nothing, so local resets need the generative mode.
        let mut fresh = AccessHandle::new(&e.mdp, Some(&e.mu), mode, seed).unwrap();
        let local = fresh.reset_local(Obs::new(2, 0));
        match mode {
            Mode::Generative => prop_assert!(local.is_ok()),
            Mode::LocalSim | Mode::HybridReset | Mode::HybridPlusEmission => {
                prop_assert!(matches!(local, Err(AccessError::UnseenReset { .. })), "unexpected {:?}", local);
            }
            _ => prop_assert!(matches!(local, Err(AccessError::ModeViolation { .. })), "unexpected {:?}", local),
        }
        // Every observation returned by an online episode may be reset to afterwards.
        let first = fresh.reset_online().unwrap();
        let reset = fresh.reset_local(first);
        prop_assert_eq!(reset.is_ok(), mode != Mode::Online && mode != Mode::MuReset);
    }

    #[test]
    fn mc_is_reproducible_and_oracle_mode_is_exact(seed in 0u64..1000, j in 0usize..8) {
        let e = env(seed, 3, 3, 0);
        let pi = e.class.get(j % e.class.len());
        let obs = Obs::new(2, (seed as usize) % e.mdp.obs_count(2));
        let run = |oracle: bool| {
            let mut acc = AccessHandle::new(&e.mdp, Some(&e.mu), Mode::Generative, seed).unwrap().with_oracle_mc(oracle);
            let est = acc.mc(McStart::Obs(obs), pi, None, 64, None).unwrap();
            (est.mean, acc.episodes())
        };
        let (a, na) = run(false);
        let (b, _) = run(false);
        prop_assert_eq!(a.to_bits(), b.to_bits());
        let (exact, ne) = run(true);
        prop_assert_eq!(na, 64);
        prop_assert_eq!(ne, 64);
        let truth = exact_values(&e.mdp, pi).unwrap().obs_value(&e.mdp, pi, obs).unwrap();
        prop_assert!((exact - truth).abs() < 1e-12);
    }

    #[test]
    fn performance_difference_identity(seed in 0u64..1000, i in 0usize..12, k in 0usize..12) {
        let e = env(seed, 3, 3, 4);
        let m = &e.mdp;
        let (pi, alt) = (e.class.get(i % e.class.len()), e.class.get(k % e.class.len()));
        let lhs = exact_values(m, pi).unwrap().initial_value(m) - exact_values(m, alt).unwrap().initial_value(m);
        // Σ_h E_{x ∼ d^π_h} [Q^{π'}(x, π(x)) − Q^{π'}(x, π'(x))]
        let occ = occupancy(m, pi).unwrap();
        let q_alt = exact_values(m, alt).unwrap();
        let mut rhs = 0.0;
        for h in 1..=m.horizon() {
            for (x, w) in occ.obs_layer(m, h).into_iter().enumerate() {
                let o = Obs::new(h, x);
                let s = m.decode(o);
                rhs += w * (q_alt.q(h, s, pi.act(o).unwrap()) - q_alt.q(h, s, alt.act(o).unwrap()));
            }
        }
        prop_assert!((lhs - rhs).abs() < 1e-10, "lhs {} rhs {}", lhs, rhs);
    }

    #[test]
    fn coverability_matches_linear_program(seed in 0u64..1000) {
        let e = env(seed, 3, 3, 3);
        let m = &e.mdp;
        let cov = coverability(m, &e.class).unwrap();
        let occs: Vec<_> = e.class.iter().map(|pi| occupancy(m, pi).unwrap()).collect();
        for h in 1..=m.horizon() {
            // min Σ_x w_x subject to w_x ≥ d^π_h(x) for every π; w = C·μ at the optimum.
            let mut lp = Problem::new(OptimizationDirection::Minimize);
            let w: Vec<_> = (0..m.obs_count(h)).map(|_| lp.add_var(1.0, (0.0, f64::INFINITY))).collect();
            for occ in &occs {
                for (x, d) in occ.obs_layer(m, h).into_iter().enumerate() {
                    lp.add_constraint([(w[x], 1.0)], ComparisonOp::Ge, d);
                }
            }
            let sol = lp.solve().unwrap();
            prop_assert!((sol.objective() - cov.per_layer[h - 1]).abs() < 1e-8);
        }
        // The witness distribution attains the coverability value as its concentrability.
        let (conc, _) = concentrability(m, &cov.witness, &e.class).unwrap();
        match conc {
            Coefficient::Finite(c) => prop_assert!((c - cov.value).abs() < 1e-9),
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }

    #[test]
    fn projection_lands_in_a_convex_set(
        raw_anchor in prop::collection::vec(0.05f64..1.0, 2..6),
        raw_q1 in prop::collection::vec(0.01f64..1.0, 6),
        raw_q2 in prop::collection::vec(0.01f64..1.0, 6),
        labels in prop::collection::vec(prop::collection::vec(0usize..6, 6), 1..4),
        budgets in prop::collection::vec(0.01f64..0.4, 3),
        t in 0.0f64..1.0,
    ) {
        let anchor = simplex_point(&raw_anchor);
        let dim = anchor.len();
        let conf = anchored_set(&anchor, &labels, &budgets);
        prop_assert!(conf.contains(&anchor));
        let p1 = conf.project(&simplex_point(&raw_q1[..dim])).unwrap();
        let p2 = conf.project(&simplex_point(&raw_q2[..dim])).unwrap();
        prop_assert!(conf.contains(&p1) && conf.contains(&p2));
        let mix: Vec<f64> = p1.iter().zip(&p2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        prop_assert!(conf.contains(&mix));
        // Projecting a member returns it.
        let again = conf.project(&p1).unwrap();
        for (a, b) in again.iter().zip(&p1) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn omd_step_on_simplex_is_multiplicative_weights(
        raw in prop::collection::vec(0.01f64..1.0, 2..12),
        loss_seed in prop::collection::vec(-1.0f64..1.0, 12),
        step in 0.01f64..3.0,
    ) {
        let prev = simplex_point(&raw);
        let loss = &loss_seed[..prev.len()];
        let got = omd_step(&prev, loss, &ConfidenceSet::simplex(prev.len()), step).unwrap();
        let w: Vec<f64> = prev.iter().zip(loss).map(|(p, l)| p * (-step * l).exp()).collect();
        let z: f64 = w.iter().sum();
        for (g, v) in got.iter().zip(&w) {
            prop_assert!((g - v / z).abs() < 1e-12);
        }
    }
}

#[test]
fn open_loop_values_follow_the_chain() {
    let e = env(9, 2, 2, 0);
    let m = &e.mdp;
    let lat = m.latent();
    for pi in e.class.iter() {
        let Policy::OpenLoop(acts) = pi else { unreachable!() };
        let s1 = lat.initial_state();
        let r1 = lat.reward(1, s1, acts[0]).mean();
        let next: f64 =
            lat.transition(1, s1, acts[0]).iter().enumerate().map(|(s, p)| p * lat.reward(2, s, acts[1]).mean()).sum();
        assert_abs_diff_eq!(exact_values(m, pi).unwrap().initial_value(m), r1 + next, epsilon = 1e-12);
    }
}
