//! Per-label clustering: the cluster budget is split across classes in
//! proportion to the square root of class size.
//!
//!     cargo run --release --example per_label_clusters

use clusterfit::featurestore::{FeatureMatrix, LabelVector};
use clusterfit::kmeans::KMeansConfig;
use clusterfit::relabel::{per_label_plan, per_label_pseudo_labels};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> clusterfit::Result<()> {
    let sizes = [100, 400, 900, 1600];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut labels = vec![];
    let mut values = vec![];
    for (c, &n) in sizes.iter().enumerate() {
        for _ in 0..n {
            labels.push(c as u32);
            values.push(c as f64 * 5.0 + rng.random_range(-1.0..1.0));
            values.push(rng.random_range(-1.0..1.0));
        }
    }
    let y = LabelVector::new(labels, sizes.len())?;
    let x = FeatureMatrix::from_vec(y.n(), 2, values)?;

    let plan = per_label_plan(&y, 20)?;
    println!("class sizes {sizes:?} -> clusters {:?}", plan.k_per_class);
    println!("plan file: {}", plan.to_json()?);

    let pseudo = per_label_pseudo_labels(&x, &y, &plan, &KMeansConfig::new(20, 0))?;
    println!(
        "{} pseudo-classes; class 3 uses ids {}..{}",
        pseudo.num_classes(),
        plan.offsets()[3],
        plan.offsets()[3] + plan.k_per_class[3]
    );
    Ok(())
}
