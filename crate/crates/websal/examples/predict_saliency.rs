//! Run the full inference path on one synthetic page: load (or
//! initialize) weights, predict coarse and fine maps, and write the
//! PNGs plus a red-overlay heatmap to `target/example-output/predict/`.
//!
//! If `train_overfit` has been run, its checkpoint is picked up and the
//! maps are worth looking at; otherwise the weights are fresh and the
//! output is an untrained network's guess.
//!
//! Run with `cargo run --example predict_saliency`.

use std::path::{Path, PathBuf};

use websal::data::synth_webpage;
use websal::imageops::{save_gray, save_heatmap, save_rgb};
use websal::networks::{build_params, predict, NetworkConfig};
use websal::tensor::checkpoint;
use websal::trainer::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from("target/example-output/predict");
    std::fs::create_dir_all(&out)?;

    let overfit_ckpt = Path::new("target/example-output/overfit/checkpoints/epoch_30.ckpt");
    let (store, config) = if overfit_ckpt.is_file() {
        let loaded = checkpoint::load(overfit_ckpt)?;
        // the checkpoint's metadata carries the layout it was built with
        let train_config: TrainConfig = serde_json::from_value(loaded.meta["config"].clone())?;
        println!("using the trained checkpoint from the train_overfit example");
        (loaded.store, train_config.network)
    } else {
        println!("no trained checkpoint found; predicting with fresh weights");
        println!("(run `cargo run --example train_overfit` first for a real map)");
        let config = NetworkConfig::tiny();
        (build_params(1, &config)?, config)
    };

    // seed 1 is the first page of the overfit training set
    let page = synth_webpage(1, 64, 64)?;
    let (coarse, fine) = predict(&store, &config, &page.image)?;

    save_rgb(&page.image, &out.join("page.png"))?;
    save_gray(&page.saliency, &out.join("ground_truth.png"))?;
    save_gray(&coarse, &out.join("coarse.png"))?;
    save_gray(&fine, &out.join("fine.png"))?;
    save_heatmap(&fine, &page.image, &out.join("heatmap.png"))?;

    let stats = |name: &str, t: &websal::Tensor| {
        let v = t.to_vec();
        println!(
            "  {name}: range [{:.3}, {:.3}], mean {:.3}",
            v.iter().cloned().fold(f64::INFINITY, f64::min),
            v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            v.iter().sum::<f64>() / v.len() as f64
        );
    };
    stats("coarse", &coarse);
    stats("fine", &fine);
    println!("wrote page, ground_truth, coarse, fine, heatmap PNGs to {}", out.display());
    Ok(())
}
