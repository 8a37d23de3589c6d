//! Scores three hand-built units against labels and keeps two of them.
//!
//! Run with `cargo run -p ped-core --example offline_scoring`.

use ped_core::energy::{dependence_profile, EstimatorVariant};
use ped_core::io::{FeatureMatrix, LabelVector};
use ped_core::ped::{offline_step, HeadMode, Strategy};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // Six samples, classes 1 and 2. Unit 0 separates the classes cleanly,
    // unit 1 is constant noise, unit 2 separates them weakly.
    let labels = LabelVector::new(vec![1, 1, 1, 2, 2, 2])?;
    let units = vec![
        FeatureMatrix::from_rows(&[
            vec![0.0, 0.1],
            vec![0.1, 0.0],
            vec![0.0, 0.0],
            vec![5.0, 5.1],
            vec![5.1, 5.0],
            vec![5.0, 5.0],
        ])?,
        FeatureMatrix::from_rows(&[
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        ])?,
        FeatureMatrix::from_rows(&[
            vec![0.0, 0.2],
            vec![0.3, 0.0],
            vec![0.1, 0.1],
            vec![0.9, 1.0],
            vec![1.0, 0.8],
            vec![0.9, 0.9],
        ])?,
    ];

    let profile = dependence_profile(&units, &labels, EstimatorVariant::V, None, 0)?;
    for u in &profile.units {
        println!("unit {}: dependence {:.4}", u.index, u.dependence);
    }

    let step = offline_step(&profile, 2, Strategy::ClusterHead(HeadMode::MaxValue), 0)?;
    println!("kept units: {:?}", step.selection.kept);
    Ok(())
}
