//! Two-stage k-means: Lloyd iterations on a subsample, then on all rows.
//!
//!     cargo run --release --example kmeans

use clusterfit::featurestore::FeatureMatrix;
use clusterfit::kmeans::{kmeans_assign, kmeans_fit_traced, read_centroids, write_centroids, KMeansConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> clusterfit::Result<()> {
    // one blob at each corner of a cube
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let (n, d, k) = (8000, 3, 8);
    let values = (0..n * d)
        .map(|i| {
            let (row, j) = (i / d, i % d);
            3.0 * ((row % k >> j) & 1) as f64 + noise.sample(&mut rng)
        })
        .collect();
    let x = FeatureMatrix::from_vec(n, d, values)?;

    // 20% subsample for up to 30 iterations, then 5 on everything
    let cfg = KMeansConfig::new(k, 42);
    let fit = kmeans_fit_traced(&x, &cfg)?;
    println!("stage 1 inertia: {:?}", fit.stage1_inertia);
    println!("stage 2 inertia: {:?}", fit.stage2_inertia);
    println!(
        "final inertia {:.3} after {} iterations",
        fit.centroids.inertia(),
        fit.centroids.iterations_run()
    );

    let assignment = kmeans_assign(&x, &fit.centroids)?;
    let labels = assignment.into_labels(k)?;
    println!("cluster sizes: {:?}", labels.class_counts());

    let path = std::env::temp_dir().join("kmeans-example.cff");
    write_centroids(&path, &fit.centroids, cfg.seed)?;
    let (_, meta) = read_centroids(&path)?;
    println!("saved {} centers to {} ({meta:?})", meta.k, path.display());
    Ok(())
}
