//! Learns an AR filter pair from designed rollouts and reports its
//! worst-case and average-case errors.

use arfilt::estimator::estimate;
use arfilt::evaluation::{hinf_h2_errors, ArSystem};
use arfilt::rollout::{generate_rollouts, DesignConfig};
use arfilt::Filter;

fn main() -> arfilt::Result<()> {
    let sys = ArSystem::new(
        Filter::new(vec![1.0, 0.5, -0.3, 0.2])?,
        Filter::new(vec![0.5, -0.2, 0.1, 0.05])?,
        1.0,
    )?;
    let cfg = DesignConfig::new(4, 26.0, 8, sys.sigma, 11);
    let set = generate_rollouts(&cfg, &sys.g_star, &sys.h_star)?;
    println!(
        "T = {}, L = {}, {} rollouts",
        cfg.t_len(),
        set.burn_in,
        set.rollouts.len()
    );
    let res = estimate(&set)?;
    println!(
        "objective {:.4} (initial {:.4}), {} iterations",
        res.minmax_objective, res.init_objective, res.solver_iters
    );
    println!("g = {:.4?}", res.g.coeffs());
    println!("h = {:.4?}", res.h.coeffs());
    let err = hinf_h2_errors(&res.g, &res.h, &sys.g_star, &sys.h_star)?;
    println!(
        "hinf_err = {:.4e}, h2_err = {:.4e}",
        err.hinf_err, err.h2_err
    );
    Ok(())
}
