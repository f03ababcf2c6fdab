//! Min-max estimator against ordinary least squares and an FIR fit on the
//! scalar Kalman benchmark.

use arfilt::estimator::{estimate, fir_ls_baseline, ordinary_ls_baseline};
use arfilt::evaluation::{hinf_h2_errors, ArSystem};
use arfilt::lds::{steady_state_kalman, unroll_kalman, LdsSpec, RICCATI_MAX_ITER, RICCATI_TOL};
use arfilt::rollout::{generate_rollouts, DesignConfig};
use arfilt::Filter;

fn main() -> arfilt::Result<()> {
    let gains = steady_state_kalman(&LdsSpec::appendix_a(0.8), RICCATI_TOL, RICCATI_MAX_ITER)?;
    let u = unroll_kalman(&gains, 4)?;
    let sys = ArSystem::new(u.g_star, u.h_star, 1.0)?;
    let cfg = DesignConfig::new(4, 26.0, 16, 1.0, 3);
    let set = generate_rollouts(&cfg, &sys.g_star, &sys.h_star)?;
    let mm = estimate(&set)?;
    let (g_ols, h_ols) = ordinary_ls_baseline(&set.rollouts, 4)?;
    let g_fir = fir_ls_baseline(&set.rollouts, 8)?;
    println!("{:>10} {:>12} {:>12}", "method", "hinf_err", "h2_err");
    for (name, g, h) in [
        ("min-max", &mm.g, &mm.h),
        ("ols", &g_ols, &h_ols),
        ("fir-8", &g_fir, &Filter::zeros(4)),
    ] {
        let e = hinf_h2_errors(g, h, &sys.g_star, &sys.h_star)?;
        println!("{name:>10} {:>12.4e} {:>12.4e}", e.hinf_err, e.h2_err);
    }
    Ok(())
}
