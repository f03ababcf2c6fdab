//! Config-driven simulate, estimate and evaluate run in a scratch directory,
//! the same path taken by the `arfilt` binary.

use arfilt::expkit::{cmd_estimate, cmd_evaluate, cmd_simulate, ExperimentConfig};

fn main() -> arfilt::Result<()> {
    let dir = std::env::temp_dir().join("arfilt-example-pipeline");
    let cfg = ExperimentConfig::from_json(&format!(
        r#"{{
            "schema_version": 1,
            "system": {{"lds": {{"a": [[0.8]], "b": [[1.0]], "c": [[1.0]],
                                 "sigma_xi": [[1.0]], "sigma_eta": [[1.0]]}}}},
            "design": {{"r": 4, "c": 26, "ell": 4}},
            "evaluation": {{"delta": 0.1, "n_mc": 64, "test_scales": [1, 2, 4]}},
            "output_dir": {:?},
            "seed": 42
        }}"#,
        dir.display().to_string()
    ))?;
    println!("config hash {}", cfg.hash());
    println!("{}", cmd_simulate(&cfg, None)?);
    println!("{}", cmd_estimate(&cfg, None, true)?);
    println!("{}", cmd_evaluate(&cfg, None, false)?);
    Ok(())
}
