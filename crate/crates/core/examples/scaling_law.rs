//! Median H-infinity error against the number of rollouts per frequency,
//! with the log-log slope and the theoretical rate overlay.

use arfilt::evaluation::{scaling_experiment, ArSystem};
use arfilt::lds::{steady_state_kalman, unroll_kalman, LdsSpec, RICCATI_MAX_ITER, RICCATI_TOL};
use arfilt::rollout::DesignConfig;

fn main() -> arfilt::Result<()> {
    let gains = steady_state_kalman(&LdsSpec::appendix_a(0.8), RICCATI_TOL, RICCATI_MAX_ITER)?;
    let u = unroll_kalman(&gains, 4)?;
    let sys = ArSystem::new(u.g_star, u.h_star, 1.0)?;
    let base = DesignConfig::new(4, 26.0, 1, 1.0, 2024);
    println!(
        "{:>4} {:>12} {:>12} {:>12}",
        "ell", "minmax", "ols", "theory"
    );
    let table = scaling_experiment(&sys, &base, &[4, 8, 16, 32], 10, 0.1, |row| {
        println!(
            "{:>4} {:>12.4e} {:>12.4e} {:>12.4e}",
            row.ell, row.median_hinf, row.median_hinf_ols, row.theory.eps1_theory
        );
        Ok(())
    })?;
    if let Some(f) = table.slope {
        println!("min-max slope {:.3} +- {:.3}", f.slope, f.half_width);
    }
    if let Some(f) = table.slope_ols {
        println!("ols slope     {:.3} +- {:.3}", f.slope, f.half_width);
    }
    Ok(())
}
