//! Truncation lengths from the stability-radius bound compared with the
//! exact l1 tails of geometric and unrolled filters.

use arfilt::signal::{exact_sufficient_length, tail_l1, unroll, unrolled_sufficient_length};
use arfilt::Filter;

fn main() -> arfilt::Result<()> {
    println!(
        "{:>6} {:>8} {:>8} {:>8} {:>12}",
        "a", "eps", "R(eps)", "exact", "tail"
    );
    for a in [0.5, 0.9, 0.99] {
        // 1 / (1 - a z^-1) is the unrolled form of h = [a].
        let h = Filter::new(vec![a])?;
        let f = unroll(&h, 20_000);
        for eps in [1e-2, 1e-4, 1e-8] {
            let r = unrolled_sufficient_length(&h, None, eps)?;
            println!(
                "{a:>6} {eps:>8.0e} {r:>8} {:>8} {:>12.3e}",
                exact_sufficient_length(&f, eps),
                tail_l1(&f, r)
            );
        }
    }
    Ok(())
}
