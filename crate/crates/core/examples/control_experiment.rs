//! Label-noise control experiment on the default synthetic task.
//!
//! Pre-trains on coarse labels with a fraction `p` of them replaced by random
//! wrong ones, refits on k-means ids, and probes the fine target.
//!
//!     cargo run --release --example control_experiment -- [config.json] [seeds]
//!
//! `seeds` defaults to `0..4`.

use std::collections::BTreeMap;
use std::time::Instant;

use clusterfit::harness::{parse_seeds, sweep_cached, ExperimentConfig, StageCache, SweepAxis};
use clusterfit::nnet::DistillConfig;

fn main() -> clusterfit::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().skip(1).collect();
    let mut cfg = match args.first() {
        Some(path) if path != "-" => ExperimentConfig::from_file(path)?,
        _ => ExperimentConfig::default(),
    };
    let seeds = parse_seeds(args.get(1).map_or("0..4", |s| s.as_str()))?;
    cfg.baselines.distill.get_or_insert(DistillConfig::default());
    cfg.probe.targets = vec!["fine".into()];

    let t0 = Instant::now();
    let cache = StageCache::new();
    let ps: Vec<String> = ["0", "0.25", "0.5", "0.75"].map(String::from).to_vec();
    let table = sweep_cached(&cfg, SweepAxis::P, &ps, &seeds, &cache)?;

    let mut means: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for r in &table.rows {
        means
            .entry((format!("{:.2}", r.p), r.method.clone()))
            .or_default()
            .push(r.top1);
    }
    println!("{:>5} {:>8} {:>8} {:>8} {:>9} {:>9}", "p", "npre", "cf", "distill", "cf-npre", "dist-npre");
    for p in ["0.00", "0.25", "0.50", "0.75"] {
        let get = |m: &str| {
            means
                .get(&(p.to_string(), m.to_string()))
                .map_or(f64::NAN, |v| v.iter().sum::<f64>() / v.len() as f64)
        };
        let (n, c, d) = (get("npre"), get("cf"), get("distill"));
        println!(
            "{p:>5} {:>8.4} {:>8.4} {:>8.4} {:>+9.4} {:>+9.4}",
            n,
            c,
            d,
            c - n,
            d - n
        );
    }
    println!("{} runs in {:.1}s", table.rows.len(), t0.elapsed().as_secs_f64());
    Ok(())
}
