//! One end-to-end run with every baseline enabled.
//!
//!     cargo run --release --example pipeline -- [config.json] [results.csv]

use clusterfit::harness::{clusterfit_run, ExperimentConfig};
use clusterfit::nnet::DistillConfig;

fn main() -> clusterfit::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut args = std::env::args().skip(1);
    let mut cfg = match args.next() {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => {
            let mut cfg = ExperimentConfig::default();
            cfg.pretrain.noise_p = 0.5;
            cfg.baselines.npre2x = true;
            cfg.baselines.distill = Some(DistillConfig::default());
            cfg.baselines.prototype = true;
            cfg
        }
    };
    cfg.output = args.next().map(Into::into).or(cfg.output);

    let table = match clusterfit_run(&cfg) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("failed in stage {}: {e}", e.stage().unwrap_or("?"));
            std::process::exit(1);
        }
    };
    print!("{}", table.to_csv());
    Ok(())
}
