//! Uniform label noise and unsupervised pseudo-labels.
//!
//!     cargo run --release --example noisy_labels

use clusterfit::harness::{synth_generate, SynthSpec};
use clusterfit::kmeans::KMeansConfig;
use clusterfit::relabel::{inject_noise, pseudo_labels, NoiseSpec};

fn main() -> clusterfit::Result<()> {
    let data = synth_generate(&SynthSpec {
        n_pretrain: 5000,
        ..SynthSpec::default()
    })?;
    let clean = data.pretrain.require_labels()?;

    for p in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let noisy = inject_noise(clean, &NoiseSpec::new(p, 7)?)?;
        let flipped = clean.iter().zip(noisy.iter()).filter(|(a, b)| a != b).count();
        println!("p = {p:.2}: {flipped} of {} labels replaced", clean.n());
    }

    // cluster ids ignore the labels entirely
    let ids = pseudo_labels(&data.pretrain.features, &KMeansConfig::new(100, 3))?;
    let sizes = ids.class_counts();
    println!(
        "100 clusters, sizes from {} to {}",
        sizes.iter().min().unwrap(),
        sizes.iter().max().unwrap()
    );
    Ok(())
}
