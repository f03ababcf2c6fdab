//! Dense-grid maximum of random polynomials against their maximum over the
//! roots of unity.

use arfilt::signal::interp_bound_ratio;
use arfilt::Filter;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> arfilt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("{:>4} {:>6} {:>10} {:>10}", "r", "N", "max ratio", "bound");
    for r in [5usize, 10, 20, 40] {
        let n = (4.0 * std::f64::consts::PI * r as f64).ceil() as usize;
        let mut worst = 0.0f64;
        let mut bound = 0.0;
        for _ in 0..200 {
            let q = Filter::new((0..=r).map(|_| StandardNormal.sample(&mut rng)).collect())?;
            let b = interp_bound_ratio(&q, n, 64 * n)?;
            worst = worst.max(b.ratio);
            bound = b.bound;
        }
        println!("{r:>4} {n:>6} {worst:>10.4} {bound:>10.4}");
    }
    Ok(())
}
