use conic_ln::harness::{parse_config, run_command, Command};

fn main() {
    let cfg = parse_config(r#"{"n": 3, "phi_max": 1.5707963267948966, "mu": 6.5, "c": [0.1], "node_count": 200}"#)
        .expect("valid config");
    let out = run_command(Command::Verify, &cfg, None);
    for line in &out.summary {
        println!("{line}");
    }
    println!("artifacts: {:?}", out.artifacts.files.keys().collect::<Vec<_>>());
    println!("exit code {}", out.exit_code());
}
