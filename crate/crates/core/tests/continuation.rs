use homocont::branchcont::{continue_both, continue_branch, single_step, start_point, ContinuationSettings, Direction, OutcomeCode};
use homocont::homsolve::residual;
use homocont::models::{build, oracle_branch, ParamValue, Params};

fn params(pairs: &[(&str, f64)], branch: Option<&str>) -> Params {
    let mut p: Params = pairs.iter().map(|(k, v)| (k.to_string(), ParamValue::Scalar(*v))).collect();
    if let Some(b) = branch {
        p.insert("branch".into(), ParamValue::Text(b.into()));
    }
    p
}

#[test]
fn transcritical_branch_follows_the_closed_form() {
    let p = params(&[("alpha", 0.5), ("delta", 1.0), ("lambda_star", 0.5)], Some("oracle"));
    let model = build("transcritical", &p).unwrap();
    let settings = ContinuationSettings { lambda_range: Some((0.1, 2.0)), ..Default::default() };
    for dir in [Direction::Plus, Direction::Minus] {
        let branch = continue_branch(&model, dir, &settings).unwrap();
        assert_eq!(branch.outcome.code, OutcomeCode::Unbounded, "{:?}", branch.outcome);
        let end = if dir == Direction::Plus { 2.0 } else { 0.1 };
        assert!((branch.points.last().unwrap().lambda - end).abs() < 1e-12);
        for pt in &branch.points {
            let xi = oracle_branch("transcritical", &p, pt.lambda).unwrap()[0];
            let x = pt.phi.at(0);
            assert!((x[0] - xi[0]).abs() <= 1e-6 && (x[1] - xi[1]).abs() <= 1e-6, "λ={} {:?} vs {:?}", pt.lambda, x, xi);
            assert!(residual(&model, &pt.phi, pt.lambda).unwrap().sup_norm() <= 1e-10);
        }
        for w in branch.points.windows(2) {
            assert!(w[0].distance(&w[1]) <= 2.0 * settings.max_step);
        }
    }
}

#[test]
fn trivial_branch_of_the_linear_model_is_unbounded_in_lambda() {
    let model = build("pw_linear", &params(&[("alpha", 0.5), ("lambda_star", 0.5)], None)).unwrap();
    let settings = ContinuationSettings { lambda_range: Some((-2.0, 3.0)), ..Default::default() };
    let pair = continue_both(&model, &[Direction::Plus, Direction::Minus], &settings, 2).unwrap();
    for b in [pair.plus.as_ref().unwrap(), pair.minus.as_ref().unwrap()] {
        assert_eq!(b.outcome.code, OutcomeCode::Unbounded, "{:?}", b.outcome);
        assert!(b.points.iter().all(|p| p.sup_norm < 1e-10));
    }
    assert!(pair.classification.unwrap().label.starts_with("(c)"));
}

#[test]
fn pitchfork_folds_at_zero() {
    let p = params(&[("alpha", 0.5), ("delta", -1.0), ("lambda_star", 0.5)], Some("oracle"));
    let model = build("pitchfork", &p).unwrap();
    let settings = ContinuationSettings { lambda_range: Some((-1.0, 2.0)), ..Default::default() };
    let branch = continue_branch(&model, Direction::Minus, &settings).unwrap();
    let fold = branch.outcome.folds.first().expect("a fold");
    assert!(fold.lambda_estimate.abs() <= 1e-4, "{fold:?}");
    for pt in &branch.points {
        let xi1 = pt.phi.at(0)[0];
        assert!((xi1 * xi1 - 2.0 * pt.lambda).abs() <= 1e-8, "λ={}", pt.lambda);
    }
}

#[test]
fn stepping_back_returns_to_the_previous_point() {
    let p = params(&[("alpha", 0.5), ("delta", 1.0), ("lambda_star", 0.5)], Some("oracle"));
    let model = build("transcritical", &p).unwrap();
    let settings = ContinuationSettings::default();
    let start = start_point(&model, Direction::Plus, &settings).unwrap();
    let next = single_step(&model, &start, &start.tangent, settings.steplength, &settings).unwrap();
    let back = single_step(&model, &next, &next.tangent.reversed(), settings.steplength, &settings).unwrap();
    assert!(back.distance(&start) <= 2.0 * settings.steplength);
}

#[test]
fn start_requires_hyperbolicity() {
    let model = build("pw_linear", &params(&[("lambda_star", 0.0)], None)).unwrap();
    assert!(matches!(
        start_point(&model, Direction::Plus, &ContinuationSettings::default()),
        Err(homocont::Error::Hypothesis(_)) | Err(homocont::Error::NonHyperbolic)
    ));
}
