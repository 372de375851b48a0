//! Training the MLP with cross-entropy, distillation and two heads, then
//! saving a checkpoint and extracting penultimate features.
//!
//!     cargo run --release --example train_network

use clusterfit::harness::{synth_generate, SynthSpec};
use clusterfit::nnet::{
    extract_features, read_checkpoint, train, write_checkpoint, DistillConfig, MlpSpec,
    Objective, TrainConfig,
};

fn main() -> clusterfit::Result<()> {
    let data = synth_generate(&SynthSpec {
        n_pretrain: 4000,
        ..SynthSpec::default()
    })?;
    let x = &data.pretrain.features;
    let coarse = data.pretrain.require_labels()?;
    let cfg = TrainConfig {
        epochs: 5,
        ..TrainConfig::default()
    };

    let spec = MlpSpec::new(x.d(), vec![128, 64], vec![coarse.num_classes()])?;
    let teacher = train(&spec, x, coarse, &cfg, &Objective::CrossEntropy)?;
    println!("cross-entropy losses: {:.3?}", teacher.epoch_losses);

    let student = train(
        &spec,
        x,
        coarse,
        &cfg,
        &Objective::Distill {
            config: DistillConfig::default(),
            teacher: &teacher.model,
        },
    )?;
    println!("distillation losses: {:.3?}", student.epoch_losses);

    // second head predicts the coarse label modulo 4
    let extra = [coarse.map(4, |c| c % 4)?];
    let two_heads = spec.with_heads(vec![coarse.num_classes(), 4]);
    let mt = train(&two_heads, x, coarse, &cfg, &Objective::MultiTask { extra: &extra })?;
    println!("two-head losses: {:.3?}", mt.epoch_losses);

    let path = std::env::temp_dir().join("teacher.ckpt");
    write_checkpoint(&path, &teacher.model, cfg.epochs)?;
    let (restored, header) = read_checkpoint(&path)?;
    let feats = extract_features(&restored, &data.target_eval.features)?;
    println!(
        "checkpoint {} (epoch {}): {} params, features {} x {}",
        path.display(),
        header.epoch,
        restored.param_count(),
        feats.n(),
        feats.d()
    );
    Ok(())
}
