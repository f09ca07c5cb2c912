use odedbn::adaptive::{estimate_local_error, StepDecision};
use odedbn::engine::{mean_deltas, summarize, Filter, Particle};
use odedbn::{EvidenceSet, ModelFile, ParticleEnsemble, RngStream, StepController};
use proptest::prelude::*;

const DECAY: &str = "model decay\nnatural_step 0.1\nstate x = 1 ~ sigma 0.2\n\
    param k ~ uniform(0.5, 2) transition 0.05\ndx/dt = -k*x\n";

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn trial_steps_leave_the_ensemble_untouched(seed in 0u64..1000, h in 1e-4f64..0.5, n in 1usize..200) {
        let m = ModelFile::parse(DECAY).unwrap().model;
        let evidence = EvidenceSet::new();
        let filter = Filter::new(&m, &evidence).unwrap();
        let ens = filter.init_ensemble(n, 0.0, &RngStream::new(seed, 0)).unwrap();
        let before = ens.fingerprint();
        let mut trial = ens.clone();
        filter.step(&mut trial, h, &RngStream::new(seed, 5)).unwrap();
        prop_assert_eq!(ens.fingerprint(), before);
        prop_assert_ne!(trial.fingerprint(), before);
    }

    #[test]
    fn error_estimate_tracks_euler_local_error(k in 0.2f64..3.0, x0 in 0.1f64..10.0, h in 1e-4f64..0.05) {
        let text = format!("model d\nnatural_step 0.1\nstate x = {x0}\nparam k ~ gauss({k}, 0) transition 0\ndx/dt = -k*x\n");
        let m = ModelFile::parse(&text).unwrap().model;
        let evidence = EvidenceSet::new();
        let filter = Filter::new(&m, &evidence).unwrap();
        let mut ens = filter.init_ensemble(4, 0.0, &RngStream::new(1, 0)).unwrap();
        filter.step(&mut ens, h, &RngStream::new(1, 1)).unwrap();
        let est = estimate_local_error(&mean_deltas(&ens), &filter.current_deltas(&ens), h);
        let euler = summarize(&ens).state_mean[0];
        let exact = x0 * (-k * h).exp();
        let actual = (euler - exact).abs();
        prop_assert!(est <= 2.0 * actual && actual <= 2.0 * est, "estimate {est}, actual {actual}");
    }

    #[test]
    fn controller_proposals_stay_in_bounds(h in 1e-3f64..1.0, err in 0.0f64..10.0, tol in 1e-3f64..1.0) {
        let c = StepController::new(tol, 1e-4, 1.0);
        match c.propose_step(h, err, 0.0) {
            Ok((StepDecision::Accept, next)) => {
                prop_assert!(err <= tol);
                prop_assert!((c.h_min..=c.h_max).contains(&next));
            }
            Ok((StepDecision::Reject, next)) => {
                prop_assert!(err > tol);
                prop_assert!(next < h && next >= c.h_min);
            }
            Err(_) => prop_assert!(err > tol && h * c.shrink_limit < c.h_min + h),
        }
    }

    #[test]
    fn identical_particles_summarize_exactly(x in -1e6f64..1e6, p in -1e3f64..1e3, n in 1usize..100, lw in -50.0f64..0.0) {
        let particles: Vec<Particle> = (0..n)
            .map(|i| Particle { state: vec![x], params: vec![p], inputs: vec![], log_weight: lw - i as f64 * 1e-3 })
            .collect();
        let s = summarize(&ParticleEnsemble::from_particles(0.0, &particles));
        prop_assert_eq!(s.state_mean[0], x);
        prop_assert_eq!(s.state_std[0], 0.0);
        prop_assert_eq!(s.param_mean[0], p);
    }
}

#[test]
fn lorenz_error_estimate_matches_second_derivative() {
    use odedbn::oracle::{rk4_reference, BenchmarkCase};
    use odedbn::Distribution;
    let mut m = BenchmarkCase::named("lorenz").unwrap().model();
    let params = [-8.0 / 3.0, -10.0, 28.0];
    for (p, v) in m.params.iter_mut().zip(params) {
        p.prior = Distribution::Gaussian { mean: v, sd: 0.0 };
        p.transition_sigma = 0.0;
    }
    for s in &mut m.states {
        s.initial_mean = 1.0;
        s.initial_sigma = 0.0;
    }
    let evidence = EvidenceSet::new();
    let filter = Filter::new(&m, &evidence).unwrap();
    for h in [0.001, 0.002, 0.005] {
        let mut ens = filter.init_ensemble(2, 0.0, &RngStream::new(0, 0)).unwrap();
        filter.step(&mut ens, h, &RngStream::new(0, 1)).unwrap();
        let est = estimate_local_error(&mean_deltas(&ens), &filter.current_deltas(&ens), h);
        let exact = rk4_reference(&m, &params, &[1.0; 3], &[0.0, h], h / 50.0, &evidence).unwrap();
        let euler = summarize(&ens).state_mean;
        let actual = euler.iter().zip(exact.last().unwrap()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(est <= 2.0 * actual && actual <= 2.0 * est, "h {h}: estimate {est}, actual {actual}");
    }
}
