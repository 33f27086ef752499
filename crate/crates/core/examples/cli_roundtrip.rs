//! Drives the command-line entry point on the bundled propagation scenario,
//! shortened to half a second, and prints the run manifest.

use shs_moments::cli::{main_with_args, MANIFEST};
use shs_moments::config::ScenarioFile;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("shs_moments_cli_example");
    std::fs::create_dir_all(&dir)?;
    let here = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("examples/bouncing_ball_propagate.cfg");
    let mut file = ScenarioFile::load(&here)?;
    file.propagation.t_end = 0.5;
    let cfg = dir.join("short.cfg");
    std::fs::write(&cfg, file.to_toml())?;

    let out = dir.join("out");
    let code = main_with_args([
        "shs-moments".as_ref(),
        "--out".as_ref(),
        out.as_os_str(),
        "propagate".as_ref(),
        "--config".as_ref(),
        cfg.as_os_str(),
    ]);
    println!("exit code {code}");
    let manifest = out.join(MANIFEST);
    print!("{}", std::fs::read_to_string(&manifest)?);
    Ok(())
}
