//! FIR versus autoregressive prediction error for the scalar system
//! `h(t) = rho h(t-1) + x(t-1) + xi`, `y = h + eta`, from closed forms and from the Riccati iteration.

use arfilt::expkit::{appendix_csv, appendix_rows};

fn main() -> arfilt::Result<()> {
    let rows = appendix_rows(&[0.1, 0.5, 0.8, 0.9, 0.95, 0.99])?;
    print!("{}", appendix_csv(&rows));
    let worst = rows.iter().map(|r| r.riccati_delta).fold(0.0, f64::max);
    println!("max |closed form - Riccati| = {worst:.3e}");
    Ok(())
}
