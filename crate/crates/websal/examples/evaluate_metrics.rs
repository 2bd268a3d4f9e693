//! The two saliency metrics by hand and at dataset scale: CC (Pearson
//! correlation between maps) and NSS (z-scored prediction sampled at
//! fixation points), then a full report over synthetic pages.
//!
//! Like `predict_saliency`, this picks up the `train_overfit` checkpoint
//! when it exists, so the dataset numbers reflect a trained model.
//!
//! Run with `cargo run --example evaluate_metrics`.

use std::path::{Path, PathBuf};

use websal::data::synth_set;
use websal::metrics::{cc, evaluate_dataset, nss};
use websal::networks::{build_params, NetworkConfig};
use websal::tensor::checkpoint;
use websal::trainer::TrainConfig;
use websal::Tensor;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // hand-sized pairs first: perfect, inverted, and structureless
    let a = Tensor::from_vec((1, 1, 2, 2), vec![0.1, 0.4, 0.6, 0.9])?;
    let b = Tensor::from_vec((1, 1, 2, 2), vec![0.9, 0.6, 0.4, 0.1])?;
    println!("cc(a, a)        = {:>7.4}", cc(&a, &a)?);
    println!("cc(a, 2a+1)     = {:>7.4}  (affine invariance)", {
        let scaled = a.scale(2.0).add_scalar(1.0);
        cc(&a, &scaled)?
    });
    println!("cc(a, reversed) = {:>7.4}", cc(&a, &b)?);

    // one fixation on the peak of a single-bump map scores high NSS
    let mut bump = vec![0.0; 25];
    bump[12] = 1.0;
    let pred = Tensor::from_vec((1, 1, 5, 5), bump)?;
    let mut hit = vec![0.0; 25];
    hit[12] = 1.0;
    let fix = Tensor::from_vec((1, 1, 5, 5), hit)?;
    println!("nss(peaked map, fixation on peak) = {:.4}", nss(&pred, &fix)?);

    // dataset-scale: trained weights when available, fresh otherwise
    let overfit_ckpt = Path::new("target/example-output/overfit/checkpoints/epoch_30.ckpt");
    let (store, config, label) = if overfit_ckpt.is_file() {
        let loaded = checkpoint::load(overfit_ckpt)?;
        let tc: TrainConfig = serde_json::from_value(loaded.meta["config"].clone())?;
        (loaded.store, tc.network, "trained (train_overfit checkpoint)")
    } else {
        let config = NetworkConfig::tiny();
        (build_params(1, &config)?, config, "untrained (fresh weights)")
    };
    let samples = synth_set(1, 4)?;
    let report = evaluate_dataset(&store, &config, &samples)?;
    println!("\n{label} over {} synthetic pages:", report.count);
    println!(
        "  mean CC  {:.4} (std {:.4}, {} defined)",
        report.mean_cc, report.std_cc, report.cc_count
    );
    println!(
        "  mean NSS {:.4} (std {:.4}, {} defined)",
        report.mean_nss, report.std_nss, report.nss_count
    );

    let out = PathBuf::from("target/example-output/evaluate");
    report.write(&out)?;
    println!("wrote metrics.csv and summary.json to {}", out.display());
    Ok(())
}
