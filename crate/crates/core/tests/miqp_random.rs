mod common;

use ofo_core::miqp::{enumerate_oracle, solve_miqp, solve_miqp_with, MiqpOptions};
use proptest::prelude::*;

#[test]
fn branch_and_bound_matches_enumeration() {
    for seed in 0..400 {
        let p = common::random_projection_problem(seed);
        let bb = solve_miqp(&p).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        let en = enumerate_oracle(&p).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        assert!(
            (bb.objective - en.objective).abs() <= 1e-7 * (1.0 + en.objective.abs()),
            "seed {seed}: {} vs {}",
            bb.objective,
            en.objective
        );
        assert!(p.hard_violation(&bb.w) <= 1e-9, "seed {seed}");
        for &i in &p.integer_idx {
            assert!((bb.w[i] - bb.w[i].round()).abs() <= 1e-9);
        }
        assert!(bb.max_qp_kkt < 1e-8, "seed {seed}: kkt {}", bb.max_qp_kkt);
        assert!(en.max_qp_kkt < 1e-8, "seed {seed}: kkt {}", en.max_qp_kkt);
        assert!(bb.root_bound <= bb.objective + 1e-9 * (1.0 + bb.objective.abs()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn explored_nodes_never_exceed_incumbent(seed in 0u64..10_000) {
        let p = common::random_projection_problem(seed);
        let s = solve_miqp_with(&p, &MiqpOptions { trace: true, ..Default::default() }).unwrap();
        for r in &s.trace {
            prop_assert!(r.parent_bound <= r.incumbent + 1e-9 * (1.0 + r.incumbent.abs()));
        }
        prop_assert!(s.root_bound <= s.objective + 1e-9 * (1.0 + s.objective.abs()));
    }

    #[test]
    fn heavier_weight_shrinks_unconstrained_step(g in 0.01f64..100.0, lin in -10.0f64..10.0, lambda in 1.0f64..50.0) {
        let a = solve_miqp(&ofo_core::miqp::ProjectionProblem::new(vec![g], vec![lin])).unwrap();
        let b = solve_miqp(&ofo_core::miqp::ProjectionProblem::new(vec![g * lambda], vec![lin])).unwrap();
        prop_assert!(b.w[0].abs() <= a.w[0].abs() + 1e-15);
    }
}
