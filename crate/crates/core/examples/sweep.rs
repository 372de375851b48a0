//! Sweeping the cluster count. The pre-trained network and its features are
//! computed once per seed and reused for every K.
//!
//!     cargo run --release --example sweep -- [axis] [values] [seeds]
//!
//! Defaults: `K 100,200,400 0..1`.

use clusterfit::harness::{parse_seeds, sweep_cached, ExperimentConfig, StageCache, SweepAxis};

fn main() -> clusterfit::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let axis: SweepAxis = args.first().map_or("K", |s| s.as_str()).parse()?;
    let values: Vec<String> = args
        .get(1)
        .map_or("100,200,400", |s| s.as_str())
        .split(',')
        .map(String::from)
        .collect();
    let seeds = parse_seeds(args.get(2).map_or("0..1", |s| s.as_str()))?;

    let mut cfg = ExperimentConfig::default();
    cfg.pretrain.noise_p = 0.5;
    cfg.probe.targets = vec!["fine".into()];
    let cache = StageCache::new();
    let table = sweep_cached(&cfg, axis, &values, &seeds, &cache)?;
    print!("{}", table.to_csv());
    eprintln!("stage cache: {} hits, {} misses", cache.hits(), cache.misses());
    Ok(())
}
