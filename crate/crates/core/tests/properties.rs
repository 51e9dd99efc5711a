use nalgebra::DVector;
use proptest::prelude::*;

use nonholonomic_newmark::catalog::{self, CvtConfig};
use nonholonomic_newmark::harness::{drift, run_simulation, ExperimentSpec, MethodId, SystemId};
use nonholonomic_newmark::mechanics::{MechanicalSystem, State};
use nonholonomic_newmark::nh_newmark::{discrete_constraint, explicit_step_000, solve_step};
use nonholonomic_newmark::{psi, Discretization, NewmarkParams};

fn system_strategy() -> impl Strategy<Value = SystemId> {
    prop_oneof![
        Just(SystemId::Particle),
        Just(SystemId::Chaotic),
        Just(SystemId::Cvt { epsilon: 0.0 }),
        Just(SystemId::Cvt { epsilon: 0.1 }),
    ]
}

fn discretization_strategy() -> impl Strategy<Value = Discretization> {
    prop_oneof![Just(Discretization::MidpointArgument), Just(Discretization::FormAverage)]
}

/// A system together with an admissible state on it.
fn admissible() -> impl Strategy<Value = (SystemId, State)> {
    system_strategy().prop_flat_map(|id| {
        let n = id.build().dim();
        (
            Just(id),
            prop::collection::vec(-1.5f64..1.5, n),
            prop::collection::vec(-1.0f64..1.0, n),
        )
            .prop_map(|(id, q, v)| {
                let sys = id.build();
                let s = id.project(&sys, &State::from_slices(&q, &v)).unwrap();
                (id, s)
            })
    })
}

fn max_rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1e-300)
}

/// d/dt[μ(q)v] along the continuous flow, by central differences of μ.
fn constraint_rate(sys: &MechanicalSystem, s: &State) -> f64 {
    let lam = sys.continuous_multipliers(s).unwrap();
    let acc = sys.gamma_nh(&s.q, &lam).unwrap();
    let eps = 1e-6;
    let mu_plus = sys.constraint_forms(&(&s.q + &s.v * eps));
    let mu_minus = sys.constraint_forms(&(&s.q - &s.v * eps));
    let dmu_v = (mu_plus - mu_minus) / (2.0 * eps) * &s.v;
    (dmu_v + sys.constraint_forms(&s.q) * acc).amax()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reaction_directions_invert_the_mass((id, s) in admissible()) {
        let sys = id.build();
        let z = sys.reaction_directions(&s.q).unwrap();
        let mu_t = sys.constraint_forms(&s.q).transpose();
        let lhs = sys.mass() * &z;
        prop_assert!((&lhs - &mu_t).amax() <= 1e-12 * mu_t.amax().max(1.0));
        let gram = sys.constraint_gram(&s.q).unwrap();
        let recomputed = sys.constraint_forms(&s.q) * &z;
        prop_assert!((&gram - &recomputed).amax() <= 1e-12 * gram.amax().max(1.0));
    }

    #[test]
    fn continuous_multipliers_keep_constraint_rate_zero((id, s) in admissible()) {
        let sys = id.build();
        prop_assert!(constraint_rate(&sys, &s) <= 1e-6);
    }

    #[test]
    fn gradient_matches_potential((id, s) in admissible()) {
        let sys = id.build();
        prop_assert!(sys.check_invariants(&[s.q.clone()]).is_ok());
    }

    #[test]
    fn symmetry_at_half(
        id in system_strategy(),
        disc in discretization_strategy(),
        q0 in prop::collection::vec(-1.5f64..1.5, 5),
        q1 in prop::collection::vec(-1.5f64..1.5, 5),
        h in 0.01f64..0.5,
    ) {
        // At α = 1/2, Φ(q_k, q_{k+1}; h) and Φ(q_{k+1}, q_k; −h) agree, so
        // their zero sets coincide.
        let sys = id.build();
        let n = sys.dim();
        let qa = DVector::from_column_slice(&q0[..n]);
        let qb = DVector::from_column_slice(&q1[..n]);
        let p = NewmarkParams::new(0.0, 0.0, 0.5, disc).unwrap();
        let fwd = discrete_constraint(&sys, &qa, &qb, &p, h);
        let back = discrete_constraint(&sys, &qb, &qa, &p, -h);
        prop_assert!((&fwd - &back).amax() <= 1e-12 * fwd.amax().max(1.0));
    }

    #[test]
    fn symmetric_methods_are_reversible(
        (id, s) in admissible(),
        beta in 0.0f64..0.15,
        h in 0.02f64..0.15,
        disc in discretization_strategy(),
    ) {
        let sys = id.build();
        let p = NewmarkParams::new(beta, beta, 0.5, disc).unwrap();
        let fwd = solve_step(&sys, &s, &p, h, None).unwrap();
        let back = solve_step(&sys, &fwd.state, &p, -h, None).unwrap();
        prop_assert!(back.state.distance(&s) <= 1e-9);
    }

    #[test]
    fn steps_preserve_both_constraint_blocks(
        (id, s) in admissible(),
        beta in 0.0f64..0.2,
        beta_prime in 0.0f64..0.2,
        alpha in 0.0f64..=1.0,
        disc in discretization_strategy(),
        h in 0.01f64..0.2,
    ) {
        let sys = id.build();
        let p = NewmarkParams::new(beta, beta_prime, alpha, disc).unwrap();
        let res = solve_step(&sys, &s, &p, h, None).unwrap();
        prop_assert!(sys.constraint_residual(&res.state).unwrap().amax() <= 1e-10);
        prop_assert!(res.discrete_constraint_norm <= 1e-10);
        let phi = discrete_constraint(&sys, &s.q, &res.state.q, &p, h);
        prop_assert!(phi.amax() <= 1e-10);
    }

    #[test]
    fn explicit_000_agrees_with_newton(
        (id, s) in admissible(),
        disc in discretization_strategy(),
        h in 0.01f64..0.2,
    ) {
        let sys = id.build();
        let p = NewmarkParams::new(0.0, 0.0, 0.0, disc).unwrap();
        let a = solve_step(&sys, &s, &p, h, None).unwrap();
        let b = explicit_step_000(&sys, &s, disc, h).unwrap();
        prop_assert!(a.state.distance(&b.state) <= 1e-10);
    }

    #[test]
    fn psi_substeps_stay_admissible((id, s) in admissible(), h in 0.02f64..0.2) {
        let sys = id.build();
        let m = psi(0.0, 0.0, Discretization::MidpointArgument).unwrap();
        let res = m.step(&sys, &s, h, None).unwrap();
        prop_assert_eq!(res.substeps, 2);
        prop_assert!(res.discrete_constraint_norm <= 1e-10);
        prop_assert!(sys.constraint_residual(&res.state).unwrap().amax() <= 1e-10);
    }

    #[test]
    fn cvt_closed_form_multiplier(
        eps in -0.2f64..0.2,
        q in prop::collection::vec(-3.0f64..3.0, 3),
        v in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let cfg = CvtConfig::with_epsilon(eps);
        let sys = catalog::pendulum_cvt(cfg);
        let s = catalog::cvt_project_velocity(&cfg, &State::from_slices(&q, &v));
        let generic = sys.continuous_multipliers(&s).unwrap()[0];
        let closed = catalog::cvt_multiplier_closed_form(&cfg, &s);
        prop_assert!((generic - closed).abs() <= 1e-8 * closed.abs().max(1.0));
    }

    #[test]
    fn particle_closed_form_matches_psi(
        q in prop::collection::vec(-1.5f64..1.5, 3),
        v in prop::collection::vec(-1.0f64..1.0, 3),
        h in 0.01f64..0.3,
    ) {
        let sys = catalog::nonholonomic_particle();
        let s = sys.project_velocity(&State::from_slices(&q, &v)).unwrap();
        let m = psi(0.0, 0.0, Discretization::MidpointArgument).unwrap();
        let a = m.step(&sys, &s, h, None).unwrap();
        let b = catalog::particle_composition_closed_form(&s, h).unwrap();
        prop_assert!(a.state.distance(&b) <= 1e-10);
        prop_assert!(max_rel(&b.v, &a.state.v) <= 1e-9);
    }

    #[test]
    fn gram_is_regular_and_symmetric((id, s) in admissible()) {
        let sys = id.build();
        let gram = sys.constraint_gram(&s.q).unwrap();
        prop_assert!((&gram - gram.transpose()).amax() <= 1e-14 * gram.amax());
        let eig = gram.symmetric_eigenvalues();
        prop_assert!(eig.min() > 1e-10 * eig.max());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn identical_specs_give_identical_csv(
        id in system_strategy(),
        beta in 0.0f64..0.2,
        h in 0.05f64..0.3,
        seed in any::<u64>(),
    ) {
        let mut spec = ExperimentSpec::new(
            id,
            MethodId::Newmark,
            NewmarkParams::midpoint(beta, beta, 0.5).unwrap(),
            h,
            20.0 * h,
        );
        spec.seed = seed;
        let a = run_simulation(&spec).unwrap();
        let b = run_simulation(&spec).unwrap();
        prop_assert_eq!(a.to_csv_string(), b.to_csv_string());
        prop_assert!(a.max_constraint_residual() <= 1e-10);
        prop_assert_eq!(drift(&a)[0], 0.0);
        for (k, row) in a.rows.iter().enumerate() {
            prop_assert_eq!(row.t, k as f64 * h);
        }
    }

    #[test]
    fn csv_floats_round_trip(id in system_strategy(), h in 0.05f64..0.3) {
        let spec = ExperimentSpec::new(id, MethodId::Psi, NewmarkParams::midpoint(0.0, 0.0, 0.5).unwrap(), h, 5.0 * h);
        let rec = run_simulation(&spec).unwrap();
        let csv = rec.to_csv_string();
        for (line, row) in csv.lines().skip(1).zip(&rec.rows) {
            let fields: Vec<f64> = line.split(',').map(|x| x.parse().unwrap()).collect();
            prop_assert_eq!(fields[0], row.t);
            prop_assert_eq!(fields[1 + 2 * rec.dim], row.energy);
            for i in 0..rec.dim {
                prop_assert_eq!(fields[1 + i], row.state.q[i]);
                prop_assert_eq!(fields[1 + rec.dim + i], row.state.v[i]);
            }
        }
    }
}
