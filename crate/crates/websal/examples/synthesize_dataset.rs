//! Generate a small synthetic webpage dataset, write it to disk in the
//! layout the loader expects (stimuli/, fixmaps/, fixations/), read it
//! back, split it, and walk one epoch of batches.
//!
//! Run with `cargo run --example synthesize_dataset`.

use std::path::Path;

use websal::data::{
    batch_iter, describe_split, load_dataset, split_dataset, synth_webpage_detailed,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = Path::new("target/example-output/synth-set");

    // the synth subcommand is also a library call away
    let code = websal::cli::cli([
        "websal".to_string(),
        "synth".into(),
        "--count".into(),
        "8".into(),
        "--out".into(),
        root.display().to_string(),
        "--seed".into(),
        "100".into(),
    ]);
    assert_eq!(code, 0, "synth subcommand failed");

    // peek at the layout the renderer chose for one seed
    let (_, layout) = synth_webpage_detailed(100, 64, 64)?;
    println!(
        "seed 100 layout: logo at {:?}, {} cards, text column at {:?}, {} stripes",
        layout.logo_center,
        layout.card_centers.len(),
        layout.text_center,
        layout.stripe_count
    );

    // round trip through the directory loader (blur sigma 0 = scaled default)
    let samples = load_dataset(root, 0.0)?;
    println!("loaded {} samples back from {}", samples.len(), root.display());
    for s in samples.iter().take(3) {
        println!(
            "  {}: image {}, ground truth peak {:.3}, fixations {}",
            s.id,
            s.image.shape(),
            s.saliency.to_vec().iter().cloned().fold(0.0, f64::max),
            s.fixation_mask
                .as_ref()
                .map(|m| m.to_vec().iter().filter(|&&v| v == 1.0).count())
                .unwrap_or(0)
        );
    }

    let split = split_dataset(&samples, 6, 7)?;
    println!("{}", describe_split(&split));

    let train: Vec<_> = split.train_samples(&samples).into_iter().cloned().collect();
    for epoch in 0..2 {
        let batches = batch_iter(&train, 4, 7, epoch)?;
        let order: Vec<&str> = batches
            .iter()
            .flat_map(|b| b.ids.iter().map(String::as_str))
            .collect();
        println!("epoch {epoch}: {} batches, order {:?}", batches.len(), order);
    }
    Ok(())
}
