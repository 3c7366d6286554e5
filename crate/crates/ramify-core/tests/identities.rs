//! Cross-module identities: the stochastic engine against the analytic
//! solvers.

use ramify_core::engine::{estimate_functional, EngineConfig};
use ramify_core::linear::solve_q_picard;
use ramify_core::mechanism::Displacement;
use ramify_core::nonlinear::cumulant_v;
use ramify_core::{
    BaseModel, Configuration, Domain, Functional, OffspringLaw, Point, ScalarField, SeededStream,
    SolverMesh,
};

fn two_state_chain(c: Vec<f64>) -> BaseModel {
    let dom = Domain::Finite { states: 2 };
    BaseModel::finite_chain(
        vec![vec![-1.0, 1.0], vec![1.0, -1.0]],
        ScalarField::from_values(dom, c).unwrap(),
    )
    .unwrap()
}

#[test]
fn laplace_identity_on_chain() {
    // E exp(-<mu_t, f>) started from one particle equals exp(-V_t f(x))
    let model = two_state_chain(vec![1.0, 1.0]);
    let law =
        OffspringLaw::constant(model.domain(), vec![0.0, 0.0, 1.0], Displacement::None).unwrap();
    let f = ScalarField::from_values(model.domain(), vec![0.8, 0.3]).unwrap();
    let t = 1.0;
    let mesh = SolverMesh::new(1e-3, t, 1e-10, 100).unwrap();
    let (v, _) = cumulant_v(&model, &law, &f, &mesh).unwrap();
    let predicted = (-v.last().values()[0]).exp();

    let est = estimate_functional(
        &model,
        &law,
        &Configuration::single(Point::Index(0)),
        t,
        &f,
        Functional::Exponential,
        30_000,
        &EngineConfig::default(),
        &SeededStream::new(101),
    )
    .unwrap();
    assert!(
        (est.mean - predicted).abs() < 3.0 * est.stderr,
        "MC {} vs analytic {predicted} (se {})",
        est.mean,
        est.stderr
    );
}

#[test]
fn moment_identity_with_state_dependent_killing() {
    // First-moment identity probed outside the constant-killing regime:
    // exp(-beta1 t) E<mu_t, f> against the Picard route for Q_t f.
    let model = two_state_chain(vec![1.2, 0.4]);
    let law =
        OffspringLaw::constant(model.domain(), vec![0.0, 0.0, 1.0], Displacement::None).unwrap();
    let beta1 = law.constants(model.killing()).unwrap().beta1;
    let f = ScalarField::from_values(model.domain(), vec![1.0, 0.5]).unwrap();
    let t = 1.0;
    let mesh = SolverMesh::new(1e-3, t, 1e-10, 100).unwrap();
    let (q, _) = solve_q_picard(&model, &law, &f, &mesh).unwrap();

    for start in 0..2 {
        let est = estimate_functional(
            &model,
            &law,
            &Configuration::single(Point::Index(start)),
            t,
            &f,
            Functional::Linear,
            30_000,
            &EngineConfig::default(),
            &SeededStream::new(202 + start as u64),
        )
        .unwrap();
        let scaled_mean = (-beta1 * t).exp() * est.mean;
        let scaled_se = (-beta1 * t).exp() * est.stderr;
        let analytic = q.last().values()[start];
        assert!(
            (scaled_mean - analytic).abs() < 3.0 * scaled_se,
            "start {start}: {scaled_mean} vs {analytic} (se {scaled_se})"
        );
    }
}

#[test]
fn laplace_identity_with_displaced_offspring_on_torus() {
    // Non-local branching: children scatter around the parent. The engine
    // samples the continuum displacement; the solver uses its grid
    // average. Agreement within MC error plus a small grid allowance.
    let length = 1.0;
    let grid = 32;
    let dom = Domain::Torus { length, grid };
    let model =
        BaseModel::brownian_torus(0.05, length, grid, ScalarField::constant(dom.clone(), 1.0))
            .unwrap();
    let law = OffspringLaw::constant(
        dom.clone(),
        vec![0.3, 0.0, 0.7],
        Displacement::Gaussian { sigma: 0.08 },
    )
    .unwrap();
    let f_values: Vec<f64> = (0..grid)
        .map(|i| {
            let x = i as f64 / grid as f64;
            0.5 + 0.4 * (2.0 * std::f64::consts::PI * x).sin()
        })
        .collect();
    let f = ScalarField::from_values(dom, f_values).unwrap();
    let t = 0.5;
    let mesh = SolverMesh::new(1e-3, t, 1e-9, 100).unwrap();
    let (v, _) = cumulant_v(&model, &law, &f, &mesh).unwrap();
    let x0 = 0.25;
    let predicted = (-v.last().eval(&Point::Coord(x0))).exp();

    let est = estimate_functional(
        &model,
        &law,
        &Configuration::single(Point::Coord(x0)),
        t,
        &f,
        Functional::Exponential,
        20_000,
        &EngineConfig {
            cap: 100_000,
            path_dt: 1e-3,
        },
        &SeededStream::new(404),
    )
    .unwrap();
    assert!(
        (est.mean - predicted).abs() < 3.0 * est.stderr + 5e-3,
        "MC {} vs analytic {predicted} (se {})",
        est.mean,
        est.stderr
    );
}

#[test]
fn estimates_reproduce_bit_for_bit() {
    let model = two_state_chain(vec![1.0, 1.0]);
    let law =
        OffspringLaw::constant(model.domain(), vec![0.25, 0.0, 0.75], Displacement::None).unwrap();
    let f = ScalarField::from_values(model.domain(), vec![0.8, 0.3]).unwrap();
    let run = || {
        estimate_functional(
            &model,
            &law,
            &Configuration::from_points(vec![Point::Index(0), Point::Index(1)]),
            2.0,
            &f,
            Functional::Exponential,
            5000,
            &EngineConfig::default(),
            &SeededStream::new(777),
        )
        .unwrap()
    };
    let a = run();
    let b = run();
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
}
