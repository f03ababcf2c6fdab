//! Unrolls the steady-state Kalman predictor of a random state-space system
//! into an AR filter pair and compares the two predictors on a trajectory.

use arfilt::lds::{
    kalman_predict, kalman_sufficient_length, simulate_lds, steady_state_kalman, unroll_kalman,
    LdsSpec, RICCATI_MAX_ITER, RICCATI_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> arfilt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let spec = LdsSpec::random(&mut rng, 3, 0.85);
    let gains = steady_state_kalman(&spec, RICCATI_TOL, RICCATI_MAX_ITER)?;
    println!(
        "state dim {}, rho(A) = {:.3}, rho(A_kf) = {:.3}, Riccati iterations {}",
        spec.state_dim(),
        spec.spectral_radius(),
        gains.spectral_radius(),
        gains.iterations
    );
    for eps in [1e-3, 1e-6, 1e-9] {
        let r = kalman_sufficient_length(&gains, eps)?;
        let u = unroll_kalman(&gains, r)?;
        let n = 400;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = simulate_lds(&spec, &x, 99, &vec![0.0; spec.state_dim()])?;
        // y[i] is the output following x[i]; shift so that y_obs[t] pairs with x[t].
        let mut y_obs = vec![0.0];
        y_obs.extend_from_slice(&y[..n - 1]);
        let kf = kalman_predict(&gains, &x, &y_obs)?;
        let dev = (2 * r..n)
            .map(|t| {
                let ar: f64 = (0..r)
                    .map(|k| u.g_star.get(k) * x[t - 1 - k] + u.h_star.get(k) * y_obs[t - 1 - k])
                    .sum();
                (ar - kf[t]).abs()
            })
            .fold(0.0, f64::max);
        println!("eps = {eps:.0e}: r = {r:3}, max |AR - Kalman| = {dev:.3e}");
    }
    Ok(())
}
