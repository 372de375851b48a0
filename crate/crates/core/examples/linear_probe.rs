//! Linear probes on raw inputs versus a trained network's features.
//!
//!     cargo run --release --example linear_probe

use clusterfit::harness::{synth_generate, SynthSpec};
use clusterfit::nnet::{extract_features, train, MlpSpec, Objective, TrainConfig};
use clusterfit::probe::{probe_lr_sweep, ProbeConfig};

fn main() -> clusterfit::Result<()> {
    let data = synth_generate(&SynthSpec::default())?;
    let (tr, ev) = (&data.target_train, &data.target_eval);
    let cfg = ProbeConfig::default();
    let grid = [0.1, 0.03, 0.01];

    let (raw, lr) = probe_lr_sweep(
        &tr.features,
        tr.require_labels()?,
        &ev.features,
        ev.require_labels()?,
        &cfg,
        &grid,
    )?;
    println!("raw inputs: fine top-1 {:.4} (lr {lr})", raw.top1);

    let pre = &data.pretrain;
    let labels = pre.require_labels()?;
    let spec = MlpSpec::new(pre.features.d(), vec![128, 64], vec![labels.num_classes()])?;
    let net = train(&spec, &pre.features, labels, &TrainConfig::default(), &Objective::CrossEntropy)?;
    let (feat, lr) = probe_lr_sweep(
        &extract_features(&net.model, &tr.features)?,
        tr.require_labels()?,
        &extract_features(&net.model, &ev.features)?,
        ev.require_labels()?,
        &cfg,
        &grid,
    )?;
    println!("coarse-trained features: fine top-1 {:.4} (lr {lr})", feat.top1);
    println!("nearest true center: {:.4}", data.reference_top1);
    Ok(())
}
