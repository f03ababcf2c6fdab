//! Library-level pipeline properties.

use arfilt::estimator::estimate;
use arfilt::evaluation::{hinf_h2_errors, zero_input_step_variance, ArSystem};
use arfilt::rollout::{generate_rollouts, DesignConfig};
use arfilt::Filter;

#[test]
fn h2_error_matches_zero_input_variance() {
    let sys = ArSystem::new(
        Filter::new(vec![1.0, 0.5, -0.3, 0.2]).unwrap(),
        Filter::new(vec![0.5, -0.2, 0.1, 0.05]).unwrap(),
        1.0,
    )
    .unwrap();
    let set = generate_rollouts(
        &DesignConfig::new(4, 26.0, 1, 1.0, 77),
        &sys.g_star,
        &sys.h_star,
    )
    .unwrap();
    let res = estimate(&set).unwrap();
    let err = hinf_h2_errors(&res.g, &res.h, &sys.g_star, &sys.h_star).unwrap();
    let stat = zero_input_step_variance(&res.g, &res.h, &sys, 304, 200, 4000, 5).unwrap();
    let target = err.h2_err.powi(2) * sys.sigma.powi(2);
    assert!(
        (stat.mean - target).abs() <= 3.0 * stat.se,
        "MC {} +- {} vs {target}",
        stat.mean,
        stat.se
    );
}

#[test]
fn estimates_improve_with_more_rollouts() {
    let sys = ArSystem::new(
        Filter::new(vec![1.0, 0.3]).unwrap(),
        Filter::new(vec![0.4, 0.1]).unwrap(),
        1.0,
    )
    .unwrap();
    let err_at = |ell: usize| -> f64 {
        let mut v: Vec<f64> = (0..7)
            .map(|s| {
                let set = generate_rollouts(
                    &DesignConfig::new(2, 26.0, ell, 1.0, 100 + s),
                    &sys.g_star,
                    &sys.h_star,
                )
                .unwrap();
                let res = estimate(&set).unwrap();
                hinf_h2_errors(&res.g, &res.h, &sys.g_star, &sys.h_star)
                    .unwrap()
                    .hinf_err
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v[3]
    };
    assert!(err_at(32) < err_at(2));
}
