//! Prototype relabeling: one nearest-class-mean step.
//!
//!     cargo run --example prototypes

use clusterfit::featurestore::{FeatureMatrix, LabelVector};
use clusterfit::relabel::prototype_labels;

fn main() -> clusterfit::Result<()> {
    // class A around (0,0), class B around (10,0); the last A point sits at (9,0)
    let x = FeatureMatrix::from_vec(
        6,
        2,
        vec![-1., 0., 1., 0., 9., 0., 11., 0., 10., 0., 9., 0.],
    )?;
    let y = LabelVector::new(vec![0, 0, 1, 1, 1, 0], 2)?;
    let relabeled = prototype_labels(&x, &y)?;
    println!("labels before: {:?}", y.as_slice());
    println!("labels after:  {:?}", relabeled.as_slice());
    Ok(())
}
