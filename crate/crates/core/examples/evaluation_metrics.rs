//! The evaluation toolkit on synthetic data: Fréchet feature distance
//! between image sets, intra-cluster diversity, and k-means NMI.
//!
//! ```text
//! cargo run --release --example evaluation_metrics
//! ```

use promptgen::io::synth::{synth_dataset, SyntheticDatasetSpec};
use promptgen::metrics::{image_frechet, intra_cluster_diversity, pooled_grayscale, representation_nmi};
use promptgen::Image;

fn main() -> promptgen::Result<()> {
    let reference = synth_dataset(&SyntheticDatasetSpec::target(40, 1))?;
    let same_classes = synth_dataset(&SyntheticDatasetSpec::target(40, 2))?;
    let other_classes = synth_dataset(&SyntheticDatasetSpec::source(20, 3))?;
    let rigid = synth_dataset(&SyntheticDatasetSpec {
        jitter: 0.0,
        ..SyntheticDatasetSpec::target(40, 4)
    })?;

    println!("Fréchet distance to the reference set");
    for (name, set) in [
        ("same classes, new draw", &same_classes.images),
        ("unjittered same classes", &rigid.images),
        ("different classes", &other_classes.images),
    ] {
        println!("  {name:<24} {:.3}", image_frechet(set, &reference.images)?);
    }

    println!("intra-cluster diversity against the reference set");
    let train = &reference.images;
    for (name, set) in [("jittered draws", &same_classes.images), ("unjittered draws", &rigid.images)] {
        let d = intra_cluster_diversity(set, train)?;
        println!("  {name:<24} {:.3} over {} clusters", d.value, d.clusters);
    }
    let copies: Vec<Image> = train.iter().take(10).flat_map(|im| [im.clone(), im.clone()]).collect();
    println!("  {:<24} {:.3}", "exact copies", intra_cluster_diversity(&copies, train)?.value);

    println!("k-means NMI of pooled features against class labels");
    let features = reference
        .images
        .iter()
        .map(pooled_grayscale)
        .collect::<promptgen::Result<Vec<_>>>()?;
    println!("  pooled pixels            {:.3}", representation_nmi(&features, &reference.labels, 0)?);
    let mut shuffled = reference.labels.clone();
    shuffled.rotate_left(7);
    println!("  rotated labels           {:.3}", representation_nmi(&features, &shuffled, 0)?);
    Ok(())
}
