use nalgebra::DVector;
use proptest::prelude::*;

use homocont::homsolve::{residual, ParametricModel};
use homocont::models::{build, from_config, oracle_branch, oracle_solution, ConfigFormat, Params, BUILTINS};
use homocont::seqspace::Window;

const CUSTOM: &str = r#"{"model":"custom","dim":3,
    "minus":[[[2.0,0.0,0.0],[0.1,0.5,0.0],[0.0,0.2,1.5]]],
    "plus":[[[0.5,0.0,0.0],[0.3,3.0,0.0],[0.0,0.0,0.4]]],
    "lambda_matrix":[[0.0,0.0,0.0],[1.0,0.0,0.0],[0.0,0.5,0.0]],
    "forcing":{"vector":[0.0,0.1,0.0],"rate":0.5},
    "terms":[{"component":2,"coefficient":1.0,"powers":[2,0,0]},
             {"component":3,"coefficient":-0.5,"powers":[1,1,0],"lambda_power":1}]}"#;

fn all_models() -> Vec<ParametricModel> {
    let mut v: Vec<_> = BUILTINS.iter().map(|n| build(n, &Params::new()).unwrap()).collect();
    v.push(from_config(CUSTOM, ConfigFormat::Json).unwrap().1);
    v
}

fn check_derivatives(model: &ParametricModel, t: i64, x: &[f64], lambda: f64) {
    let h = 1e-6;
    let jac = model.rhs.jacobian(t, x, lambda);
    for k in 0..x.len() {
        let mut up = x.to_vec();
        let mut dn = x.to_vec();
        up[k] += h;
        dn[k] -= h;
        let fd = (model.rhs.eval(t, &up, lambda) - model.rhs.eval(t, &dn, lambda)) / (2.0 * h);
        let err = (fd - jac.column(k)).amax() / jac.amax().max(1.0);
        assert!(err < 1e-6, "{} D1 column {k} at t={t}: {err:e}", model.name);
    }
    let fd = (model.rhs.eval(t, x, lambda + h) - model.rhs.eval(t, x, lambda - h)) / (2.0 * h);
    let dl = model.rhs.param_derivative(t, x, lambda);
    assert!((&fd - dl).amax() < 1e-6 * (1.0 + fd.amax()), "{} D2 at t={t}", model.name);
}

proptest! {
    #[test]
    fn derivatives_match_central_differences(
        which in 0usize..7,
        t in -6i64..6,
        lambda in -1.5f64..1.5,
        raw in prop::collection::vec(0.05f64..1.5, 3),
        signs in prop::collection::vec(any::<bool>(), 3),
    ) {
        let model = &all_models()[which];
        let x: Vec<f64> = raw.iter().zip(&signs).take(model.dim()).map(|(v, s)| if *s { *v } else { -*v }).collect();
        check_derivatives(model, t, &x, lambda);
    }
}

#[test]
fn every_model_vanishes_at_zero_away_from_the_forcing() {
    for model in all_models() {
        let zero = vec![0.0; model.dim()];
        for t in [-40, 40] {
            assert!(model.rhs.eval(t, &zero, 0.3).amax() < 1e-10, "{} at t={t}", model.name);
        }
    }
}

#[test]
fn references_solve_their_equations() {
    for model in all_models() {
        model.validate().unwrap();
        let r = &model.reference;
        let res = residual(&model, &r.phi, r.lambda).unwrap().sup_norm();
        assert!(res < 1e-9, "{}: residual {res:e}", model.name);
    }
}

#[test]
fn limit_equations_pass_their_own_checks() {
    for model in all_models() {
        let (minus, plus) = model.limit_systems(model.reference.lambda).expect("limit equations");
        minus.validate(32, 2.0, 1).unwrap();
        plus.validate(32, 2.0, 2).unwrap();
    }
}

#[test]
fn transcritical_oracle_solves_the_recursion() {
    let p = Params::new();
    let model = build("transcritical", &p).unwrap();
    for lambda in [0.1, 0.9, 2.0] {
        let xi = oracle_branch("transcritical", &p, lambda).unwrap()[0];
        for t in -5..5 {
            let x = oracle_solution(0.5, 1.0, 2, lambda, xi, t);
            let next = oracle_solution(0.5, 1.0, 2, lambda, xi, t + 1);
            let f = model.rhs.eval(t, &x, lambda);
            assert!((DVector::from_vec(next.to_vec()) - f).amax() < 1e-9, "λ={lambda}, t={t}");
        }
    }
}

#[test]
fn toml_and_json_give_the_same_custom_model() {
    let json = from_config(CUSTOM, ConfigFormat::Json).unwrap().1;
    let value: serde_json::Value = serde_json::from_str(CUSTOM).unwrap();
    let toml_text = toml::to_string(&value).unwrap();
    let toml = from_config(&toml_text, ConfigFormat::Toml).unwrap().1;
    let x = [0.4, -0.2, 0.7];
    for t in [-3, 0, 5] {
        assert_eq!(json.rhs.eval(t, &x, 0.6), toml.rhs.eval(t, &x, 0.6));
    }
    let w = Window::symmetric(5).unwrap();
    assert_eq!(json.reference.phi.on_window(w).as_flat(), toml.reference.phi.on_window(w).as_flat());
}

#[test]
fn malformed_custom_models_are_rejected() {
    let linear_term = CUSTOM.replace(r#""powers":[2,0,0]"#, r#""powers":[1,0,0]"#);
    assert!(from_config(&linear_term, ConfigFormat::Json).is_err());
    let bad_component = CUSTOM.replace(r#""component":2"#, r#""component":4"#);
    assert!(from_config(&bad_component, ConfigFormat::Json).is_err());
    assert!(from_config(r#"{"model":"custom","dim":0}"#, ConfigFormat::Json).is_err());
}
