//! Writing and reading the `CFF1` feature and `CFL1` label formats.
//!
//!     cargo run --example feature_files -- [out_dir]

use clusterfit::featurestore::{
    l2_normalize, read_features, read_labels, write_features, write_labels, FeatureMatrix,
    LabelVector,
};

fn main() -> clusterfit::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(std::path::PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);

    let x = FeatureMatrix::from_vec(4, 3, vec![3., 4., 0., 1., 0., 0., 0., 2., 2., -1., 1., 1.])?;
    let x = l2_normalize(&x)?;
    let y = LabelVector::new(vec![0, 1, 1, 2], 3)?;

    let (xp, yp) = (dir.join("example.cff"), dir.join("example.cfl"));
    write_features(&xp, &x)?;
    write_labels(&yp, &y)?;

    let x2 = read_features(&xp)?;
    let y2 = read_labels(&yp)?;
    println!(
        "{}: {} x {} (l2-normalized: {})",
        xp.display(),
        x2.n(),
        x2.d(),
        x2.is_l2_normalized()
    );
    println!("{}: {:?} over {} classes", yp.display(), y2.as_slice(), y2.num_classes());
    println!("class counts: {:?}", y2.class_counts());
    Ok(())
}
