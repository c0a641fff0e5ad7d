//! Runs the file-producing pipeline from a TOML configuration, the same
//! stages the `qbm` binary exposes, into a temporary directory.

use qbm::cli::config::RunConfig;
use qbm::cli::{run, RunOptions, Stage};

const CONFIG: &str = r#"
[model]
family = "OhmicLorentzCutoff"
gamma0 = 0.2
cutoff = 10.0
temperature = 0.5
mass = 1.0
omega = 2.0

[grid]
t_max = 1.0
dt = 0.01
master_dt = 0.1

[forcing]
kind = "cubic"
amplitude = 0.05

[outputs]
directory = "qbm-out"
"#;

fn main() {
    let config = match RunConfig::from_toml(CONFIG) {
        Ok(c) => c,
        Err(diag) => {
            eprintln!("{diag}");
            std::process::exit(2);
        }
    };
    let out = std::env::temp_dir().join(format!("qbm-pipeline-{}", std::process::id()));
    let opts = RunOptions {
        out: Some(out.clone()),
        tolerance_report: true,
        ..Default::default()
    };
    match run(&config, Stage::L1, &opts) {
        Ok(report) => println!("{}", report.render(true)),
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(i32::from(e.exit_code()));
        }
    }
}
