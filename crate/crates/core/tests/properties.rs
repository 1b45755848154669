use adasize::bench::effective_passes;
use adasize::data::{generate_synthetic, normalize, parse_sparse_text, shuffle_and_split, write_sparse_text};
use adasize::driver::{self, RunConfig};
use adasize::erm::{self, smoothness_constant};
use adasize::schedule::{self, WstarEstimate};
use adasize::solvers::{self, Method, SolverState};
use adasize::{Dataset, LabelMap, LossModel, RiskSpec, SmoothnessMode, Weights};
use proptest::prelude::*;

fn synthetic(n: usize, dim: usize, seed: u64) -> Dataset {
    normalize(&generate_synthetic(n, dim, 1.0, seed).unwrap().0)
}

fn loss_model() -> impl Strategy<Value = LossModel> {
    prop_oneof![Just(LossModel::Logistic), Just(LossModel::Squared)]
}

fn point(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, dim)
}

fn tight_spec(loss: LossModel, data: &Dataset, alpha: f64) -> RiskSpec {
    let m = smoothness_constant(loss, data, SmoothnessMode::Tight);
    RiskSpec::new(loss, 1.0, alpha, 1.0, m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn shuffled_prefixes_nest(seed in 0u64..1000, m in 1usize..60, extra in 0usize..60) {
        let data = synthetic(120, 4, seed);
        let (train, _) = shuffle_and_split(&data, 120, seed).unwrap();
        let n = m + extra;
        let small = train.prefix(m).unwrap();
        let large = train.prefix(n).unwrap();
        prop_assert_eq!(small.samples(), &large.samples()[..m]);
    }

    #[test]
    fn normalized_rows_fit_the_unit_ball(seed in 0u64..1000, dim in 1usize..30, sparsity in 0.05f64..1.0) {
        let (raw, _) = generate_synthetic(50, dim, sparsity, seed).unwrap();
        let data = normalize(&raw);
        for s in data.samples() {
            prop_assert!(s.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn sparse_text_round_trips(seed in 0u64..1000, dim in 1usize..12, sparsity in 0.1f64..1.0) {
        let (data, _) = generate_synthetic(30, dim, sparsity, seed).unwrap();
        let mut text = Vec::new();
        write_sparse_text(&data, &mut text).unwrap();
        let back = parse_sparse_text(text.as_slice(), &LabelMap::signed(), data.name(), Some(dim)).unwrap();
        prop_assert_eq!(back, data);
    }

    #[test]
    fn randomized_data_is_seed_determined(seed in 0u64..1000) {
        let a = shuffle_and_split(&synthetic(40, 3, seed), 30, seed).unwrap();
        let b = shuffle_and_split(&synthetic(40, 3, seed), 30, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn loss_averages_over_a_split(loss in loss_model(), seed in 0u64..1000, m in 1usize..40, w in point(5)) {
        let data = synthetic(40, 5, seed);
        let n = data.len();
        let whole = erm::empirical_loss(loss, &w, &data.full().unwrap()).unwrap();
        let head = erm::empirical_loss(loss, &w, &data.prefix(m).unwrap()).unwrap();
        let split = if m < n {
            let rest: Vec<usize> = (m..n).collect();
            let tail = data.subset("tail", &rest);
            let tail_loss = erm::empirical_loss(loss, &w, &tail.full().unwrap()).unwrap();
            (m as f64 / n as f64) * head + ((n - m) as f64 / n as f64) * tail_loss
        } else {
            head
        };
        prop_assert!((whole - split).abs() <= 1e-12 * whole.abs().max(1.0));
    }

    #[test]
    fn accuracy_decreases_geometrically(alpha in 0.5f64..=1.0, gamma in 0.1f64..10.0, n in 1usize..1_000_000) {
        let spec = RiskSpec::new(LossModel::Logistic, 1.0, alpha, gamma, 1.0).unwrap();
        prop_assert!(spec.v(n + 1) < spec.v(n));
        let ratio = spec.v(2 * n) / spec.v(n);
        prop_assert!((ratio - 2f64.powf(-alpha)).abs() <= 1e-14);
    }

    #[test]
    fn size_sequence_reaches_n_in_ceil_log2_steps(m0 in 1usize..5000, factor in 1.0f64..300.0) {
        let n_total = ((m0 as f64) * factor) as usize;
        let sizes = schedule::sample_sizes(m0, n_total).unwrap();
        let steps = (n_total as f64 / m0 as f64).log2().ceil() as usize;
        prop_assert_eq!(sizes.len() - 1, steps);
        prop_assert!(sizes.windows(2).all(|p| p[0] < p[1]));
        prop_assert_eq!(*sizes.last().unwrap(), n_total);
    }

    #[test]
    fn svrg_count_is_the_same_at_every_stage(alpha in 0.5f64..=1.0, wsq in 0.0f64..100.0, m0 in 1usize..500) {
        let spec = RiskSpec::new(LossModel::Logistic, 1.0, alpha, 1.0, 1.0).unwrap();
        let wstar = WstarEstimate::user(wsq).unwrap();
        let plans = schedule::plan_stages(&spec, m0, m0 * 64, &wstar).unwrap();
        prop_assert!(plans.iter().all(|p| p.s_n_svrg == plans[0].s_n_svrg));
    }

    #[test]
    fn generic_count_is_monotone(rho in 0.01f64..0.98, drho in 0.0f64..0.01, wsq in 0.0f64..100.0, dw in 0.0f64..10.0) {
        let spec = RiskSpec::new(LossModel::Logistic, 1.0, 0.5, 1.0, 1.0).unwrap();
        let base = schedule::iterations_generic(rho, &spec, &WstarEstimate::user(wsq).unwrap()).unwrap();
        let more_rho = schedule::iterations_generic(rho + drho, &spec, &WstarEstimate::user(wsq).unwrap()).unwrap();
        let more_w = schedule::iterations_generic(rho, &spec, &WstarEstimate::user(wsq + dw).unwrap()).unwrap();
        prop_assert!(more_rho >= base);
        prop_assert!(more_w >= base);
    }

    #[test]
    fn doubled_warm_start_matches_general(alpha in 0.5f64..=1.0, c in 0.1f64..10.0, m in 1usize..100_000, delta in 0.0f64..1.0, wsq in 0.0f64..100.0) {
        let spec = RiskSpec::new(LossModel::Logistic, c, alpha, 1.0, 1.0).unwrap();
        let b = schedule::warm_start_bound(&spec, m, 2 * m, delta, &WstarEstimate::user(wsq).unwrap()).unwrap();
        let doubled = b.doubled.unwrap();
        prop_assert!((doubled - b.general).abs() <= 1e-12 * b.general.abs());
    }

    #[test]
    fn effective_passes_are_exact_for_whole_passes(k in 0u64..10_000, n in 1usize..1_000_000) {
        prop_assert_eq!(effective_passes(k * n as u64, n), k as f64);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gd_never_increases_the_risk(loss in loss_model(), seed in 0u64..1000, w in point(6)) {
        let data = synthetic(64, 6, seed);
        let spec = tight_spec(loss, &data, 0.5);
        let view = data.full().unwrap();
        let mut state = SolverState::new(Method::Gd, Weights::from(w), seed);
        let mut prev = erm::risk_value(&spec, state.w(), &view).unwrap();
        for _ in 0..20 {
            solvers::gd_step(&mut state, &spec, &view).unwrap();
            let next = erm::risk_value(&spec, state.w(), &view).unwrap();
            prop_assert!(next <= prev + 1e-10);
            prev = next;
        }
    }

    #[test]
    fn svrg_direction_averages_to_the_gradient(loss in loss_model(), n in 1usize..=50, seed in 0u64..1000, w_hat in point(4), anchor in point(4)) {
        let data = synthetic(n, 4, seed);
        let spec = tight_spec(loss, &data, 0.5);
        let view = data.full().unwrap();
        let full = erm::risk_value_and_grad(&spec, &anchor, &view).unwrap().grad;
        let target = erm::risk_value_and_grad(&spec, &w_hat, &view).unwrap().grad;
        let mut mean = [0.0; 4];
        for i in 0..n {
            let d = solvers::svrg_direction(&spec, &view, &w_hat, &anchor, &full, i).unwrap();
            for (m, v) in mean.iter_mut().zip(d.iter()) {
                *m += v / n as f64;
            }
        }
        for (m, t) in mean.iter().zip(target.iter()) {
            prop_assert!((m - t).abs() < 1e-12);
        }
    }

    #[test]
    fn steps_charge_n_and_epochs_charge_2n(seed in 0u64..1000, n in 1usize..80, steps in 1usize..6) {
        let data = synthetic(n, 3, seed);
        let spec = tight_spec(LossModel::Logistic, &data, 0.5);
        let view = data.full().unwrap();
        for method in Method::ALL {
            let mut state = SolverState::new(method, Weights::zeros(3), seed);
            for _ in 0..steps {
                match method {
                    Method::Gd => solvers::gd_step(&mut state, &spec, &view).unwrap(),
                    Method::Agd => solvers::agd_step(&mut state, &spec, &view).unwrap(),
                    Method::Svrg => solvers::svrg_epoch(&mut state, &spec, &view).unwrap(),
                }
            }
            let per_step = if method == Method::Svrg { 2 * n } else { n };
            prop_assert_eq!(state.grad_evals(), (steps * per_step) as u64);
        }
    }

    #[test]
    fn agd_without_momentum_tracks_gd(loss in loss_model(), seed in 0u64..1000, w in point(5)) {
        let data = synthetic(40, 5, seed);
        let spec = tight_spec(loss, &data, 0.5);
        let view = data.full().unwrap();
        let eta = solvers::gd_step_size(&spec, view.len());
        let mut gd = SolverState::new(Method::Gd, Weights::from(w.clone()), seed);
        let mut agd = SolverState::new(Method::Agd, Weights::from(w), seed);
        for _ in 0..15 {
            solvers::gd_step(&mut gd, &spec, &view).unwrap();
            solvers::agd_step_with(&mut agd, &spec, &view, eta, 0.0).unwrap();
            prop_assert_eq!(gd.w(), agd.w());
        }
    }

    #[test]
    fn solvers_are_seed_deterministic(seed in 0u64..1000) {
        let data = synthetic(60, 4, seed);
        let spec = tight_spec(LossModel::Logistic, &data, 0.5);
        let view = data.full().unwrap();
        let budget = solvers::StepBudget::fixed(4);
        let mut a = SolverState::new(Method::Svrg, Weights::zeros(4), seed);
        let mut b = SolverState::new(Method::Svrg, Weights::zeros(4), seed);
        let oa = solvers::solve(&mut a, &spec, &view, budget).unwrap();
        let ob = solvers::solve(&mut b, &spec, &view, budget).unwrap();
        prop_assert_eq!(oa, ob);
        prop_assert_eq!(a.w(), b.w());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn adaptive_runs_certify_each_stage(seed in 0u64..1000, m0 in 8usize..64, method_index in 0usize..3) {
        let data = synthetic(400, 5, seed);
        let spec = RiskSpec::new(LossModel::Logistic, 1.0, 0.5, 1.0, 1.0).unwrap();
        let method = Method::ALL[method_index];
        let mut config = RunConfig::new(method, true, m0, data.len());
        config.seed = seed;
        let out = driver::adaptive_run(&config, &spec, &data, None).unwrap();

        let steps = (data.len() as f64 / m0 as f64).log2().ceil() as usize;
        prop_assert_eq!(out.stages.len(), 1 + steps);
        for pair in out.stages.windows(2) {
            prop_assert!(pair[0].n < pair[1].n);
        }
        for stage in &out.stages {
            prop_assert!(!stage.budget_exhausted);
            prop_assert!(stage.exit_grad_norm <= stage.threshold);
        }
        prop_assert!(out.trace.events.windows(2).all(|p| p[0].grad_evals < p[1].grad_evals));
        prop_assert_eq!(&out.weights, &out.stages.last().unwrap().w_exit);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn gradients_match_finite_differences(loss in loss_model(), seed in 0u64..1000, dim in 1usize..25, sparsity in 0.1f64..1.0) {
        let data = normalize(&generate_synthetic(80, dim, sparsity, seed).unwrap().0);
        let spec = tight_spec(loss, &data, 0.5);
        let report = adasize::verify::fd_gradient_check(&spec, &data.full().unwrap(), 10, seed).unwrap();
        prop_assert!(report.passed, "{:?}", report);
    }
}
