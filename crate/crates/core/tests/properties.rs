//! Property tests for the optimizer and harness invariants.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest, ProptestConfig, Strategy};

use deam::harness::{self, compute_regret, ExperimentConfig, Metric};
use deam::objectives::QuadraticObjective;
use deam::optimizers::{
    deam_backtrack, deam_beta1, BacktrackVariant, BaselineConfig, DeamHyperparams, DeamState, K,
};
use deam::{Experiment, OptimizerSpec, ParamVector};

fn grads(dim: usize, len: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-1e3..1e3f64, dim), 1..=len)
}

fn variant() -> impl Strategy<Value = BacktrackVariant> {
    prop::sample::select(BacktrackVariant::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn beta1_stays_in_range(theta in 0.0..=PI, eps in 1e-6..0.1f64) {
        let hp = DeamHyperparams::default().with_epsilon(eps);
        let b = deam_beta1(theta, &hp).unwrap();
        prop_assert!(b >= eps && b < 1.0 / K + eps);
    }

    #[test]
    fn clamped_backtrack_is_zero_exactly_on_acute_angles(theta in 0.0..=PI) {
        let d = deam_backtrack(theta, BacktrackVariant::ClampedCos).unwrap();
        prop_assert!((-0.5..=0.0).contains(&d));
        prop_assert_eq!(d == 0.0, theta <= FRAC_PI_2);
    }

    #[test]
    fn backtrack_variants_respect_their_ranges(theta in 0.0..=PI, v in variant()) {
        let (lo, hi) = v.range();
        let d = deam_backtrack(theta, v).unwrap();
        prop_assert!(d >= lo && d <= hi, "{v}: {d}");
    }

    #[test]
    fn beta1_drops_by_epsilon_across_the_right_angle(eps in 1e-6..0.1f64) {
        let hp = DeamHyperparams::default().with_epsilon(eps);
        let below = deam_beta1(FRAC_PI_2 - 1e-9, &hp).unwrap();
        let at = deam_beta1(FRAC_PI_2, &hp).unwrap();
        prop_assert!((below - at - eps).abs() < 1e-12);
    }

    #[test]
    fn deam_state_invariants(gs in grads(4, 40), eta in 1e-4..1.0f64, v in variant()) {
        let mut s = DeamState::new(4, DeamHyperparams::default().with_backtrack(v)).unwrap();
        let mut w = ParamVector::zeros(4);
        let mut g_max = [0.0f64; 4];
        for g in gs {
            let before = s.v_hat().clone();
            let g = ParamVector::new(g).unwrap();
            s.step(&mut w, &g, eta).unwrap();
            for i in 0..4 {
                g_max[i] = g_max[i].max(g[i].abs());
                prop_assert!(s.v_hat()[i] >= before[i]);
                prop_assert!(s.m()[i].abs() <= g_max[i] * (1.0 + 1e-12));
            }
            prop_assert!(w.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn deam_is_deterministic(gs in grads(3, 20)) {
        let run = || {
            let mut s = DeamState::new(3, DeamHyperparams::default()).unwrap();
            let mut w = ParamVector::zeros(3);
            for g in &gs {
                s.step(&mut w, &ParamVector::new(g.clone()).unwrap(), 0.1).unwrap();
            }
            w
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn regret_is_nonnegative_on_convex_quadratics(
        a in prop::collection::vec(0.1..5.0f64, 2),
        start in prop::collection::vec(-5.0..5.0f64, 2),
        eta in 1e-3..0.2f64,
    ) {
        let obj = Arc::new(QuadraticObjective::new(ParamVector::new(a).unwrap()).unwrap());
        let mut cfg = ExperimentConfig::new("deam", OptimizerSpec::Deam(DeamHyperparams::default()), eta, 50);
        cfg.snapshot = true;
        let trace = harness::run(&Experiment::new(obj.clone(), ParamVector::new(start).unwrap(), cfg)).unwrap();
        let report = compute_regret(&trace, obj.as_ref(), &[]).unwrap();
        prop_assert!(report.partial_sums.iter().all(|&r| r >= 0.0));
    }

    #[test]
    fn recorded_deam_diagnostics_respect_ranges(eta in 1e-3..0.5f64, v in variant()) {
        let obj = Arc::new(QuadraticObjective::counterexample());
        let hp = DeamHyperparams::default().with_backtrack(v);
        let cfg = ExperimentConfig::new("deam", OptimizerSpec::Deam(hp), eta, 100);
        let trace = harness::run(&Experiment::new(obj, [-4.0, -1.0].into(), cfg)).unwrap();
        let (lo, hi) = v.range();
        for r in &trace.records {
            let b = r.beta1_t.unwrap();
            let d = r.d_t.unwrap();
            prop_assert!(b >= hp.epsilon && b < 1.0 / K + hp.epsilon);
            prop_assert!(d >= lo && d <= hi);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn parallel_compare_matches_sequential(seed in 0u64..1000, steps in 1u64..60) {
        let obj = Arc::new(QuadraticObjective::new([1.0, 4.0, 2.0].into()).unwrap());
        let specs = [
            OptimizerSpec::Deam(DeamHyperparams::default()),
            OptimizerSpec::Baseline(BaselineConfig::adam()),
            OptimizerSpec::Baseline(BaselineConfig::amsgrad()),
            OptimizerSpec::Baseline(BaselineConfig::rmsprop()),
            OptimizerSpec::Baseline(BaselineConfig::sgd_momentum()),
        ];
        let experiments: Vec<Experiment> = specs
            .iter()
            .map(|s| {
                let mut cfg = ExperimentConfig::new(s.name(), *s, 0.05, steps);
                cfg.seed = seed;
                Experiment::new(obj.clone(), [1.0, -2.0, 0.5].into(), cfg)
            })
            .collect();
        let par = harness::compare(&experiments, Metric::FinalLoss, true).unwrap();
        let seq = harness::compare(&experiments, Metric::FinalLoss, false).unwrap();
        prop_assert_eq!(par.to_csv(), seq.to_csv());
        prop_assert_eq!(par, seq);
    }
}
