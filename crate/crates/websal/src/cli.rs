//! The command-line surface: `train`, `predict`, `evaluate`, `outline`,
//! and `synth` subcommands over the library. Exit codes: 0 success, 1
//! usage error, 2 runtime failure.

use std::error::Error;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use crate::data::{crop_to, pad_reflect_to, next_multiple_of_16, synth_webpage};
use crate::imageops;
use crate::metrics::evaluate_dataset;
use crate::networks::{predict, NetworkConfig};
use crate::tensor::checkpoint;
use crate::trainer::{train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "websal",
    version,
    about = "Two-stage adversarial saliency prediction for webpage screenshots"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train (or resume) from a JSON config file.
    Train {
        /// Path to the TrainConfig JSON.
        #[arg(long)]
        config: PathBuf,
    },
    /// Predict saliency maps for one screenshot.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input screenshot (PNG or PGM); padded internally if its dims
        /// are not multiples of 16.
        #[arg(long)]
        image: PathBuf,
        /// Where the stage-1 (coarse) map PNG goes.
        #[arg(long = "out-coarse")]
        out_coarse: PathBuf,
        /// Where the stage-2 (fine) map PNG goes.
        #[arg(long = "out-fine")]
        out_fine: PathBuf,
        /// Where the overlay of the fine map on the screenshot goes.
        #[arg(long)]
        heatmap: PathBuf,
    },
    /// Score a checkpoint against a dataset directory.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset root (stimuli/ plus fixmaps/ or fixations/).
        #[arg(long)]
        data: PathBuf,
        /// Output directory for metrics.csv and summary.json.
        #[arg(long)]
        report: PathBuf,
    },
    /// Extract the Laplacian-of-Gaussian outline map of an image.
    Outline {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 2.0)]
        sigma: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render synthetic webpage samples into a dataset directory.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

/// Parse and run; the process-facing entry point.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    match dispatch(parsed.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(command: Command) -> Result<(), Box<dyn Error>> {
    match command {
        Command::Train { config } => {
            let config = TrainConfig::from_file(&config)?;
            let path = train(&config)?;
            println!("final checkpoint: {}", path.display());
            Ok(())
        }
        Command::Predict {
            checkpoint,
            image,
            out_coarse,
            out_fine,
            heatmap,
        } => run_predict(&checkpoint, &image, &out_coarse, &out_fine, &heatmap),
        Command::Evaluate {
            checkpoint,
            data,
            report,
        } => run_evaluate(&checkpoint, &data, &report),
        Command::Outline { image, sigma, out } => {
            let img = imageops::load_image(&image)?;
            let edges = imageops::extract_outline(&img, sigma)?;
            imageops::save_gray(&edges, &out)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Synth { count, out, seed } => run_synth(count, &out, seed),
    }
}

/// Pull the network layout out of a checkpoint's metadata.
fn network_config(meta: &serde_json::Value) -> NetworkConfig {
    let embedded = meta
        .get("config")
        .and_then(|c| c.get("network"))
        .or_else(|| meta.get("network"));
    match embedded.cloned().map(serde_json::from_value) {
        Some(Ok(config)) => config,
        _ => {
            eprintln!("note: checkpoint metadata has no network config; using defaults");
            NetworkConfig::default()
        }
    }
}

fn run_predict(
    checkpoint: &Path,
    image: &Path,
    out_coarse: &Path,
    out_fine: &Path,
    heatmap: &Path,
) -> Result<(), Box<dyn Error>> {
    let loaded = checkpoint::load(checkpoint)?;
    let config = network_config(&loaded.meta);
    let img = imageops::load_image(image)?;
    let s = img.shape();
    let padded = pad_reflect_to(&img, next_multiple_of_16(s.h), next_multiple_of_16(s.w))?;
    let (coarse, fine) = predict(&loaded.store, &config, &padded)?;
    let coarse = crop_to(&coarse, s.h, s.w)?;
    let fine = crop_to(&fine, s.h, s.w)?;
    imageops::save_gray(&coarse, out_coarse)?;
    imageops::save_gray(&fine, out_fine)?;
    imageops::save_heatmap(&fine, &img, heatmap)?;
    println!(
        "wrote {}, {}, {}",
        out_coarse.display(),
        out_fine.display(),
        heatmap.display()
    );
    Ok(())
}

fn run_evaluate(checkpoint: &Path, data: &Path, report_dir: &Path) -> Result<(), Box<dyn Error>> {
    let loaded = checkpoint::load(checkpoint)?;
    let config = network_config(&loaded.meta);
    let samples = crate::data::load_dataset(data, 0.0)?;
    let report = evaluate_dataset(&loaded.store, &config, &samples)?;
    report.write(report_dir)?;
    let fmt = |count: usize, mean: f64| {
        if count > 0 {
            format!("{mean:.4} over {count}")
        } else {
            "undefined".to_string()
        }
    };
    println!(
        "images: {}  CC: {}  NSS: {}",
        report.count,
        fmt(report.cc_count, report.mean_cc),
        fmt(report.nss_count, report.mean_nss)
    );
    println!("report written to {}", report_dir.display());
    Ok(())
}

fn run_synth(count: usize, out: &Path, seed: u64) -> Result<(), Box<dyn Error>> {
    if count == 0 {
        return Err("count must be >= 1".into());
    }
    std::fs::create_dir_all(out.join("stimuli"))?;
    std::fs::create_dir_all(out.join("fixmaps"))?;
    std::fs::create_dir_all(out.join("fixations"))?;
    for k in 0..count {
        let sample = synth_webpage(seed + k as u64, 64, 64)?;
        let name = &sample.id;
        imageops::save_rgb(&sample.image, &out.join(format!("stimuli/{name}.png")))?;
        imageops::save_gray(&sample.saliency, &out.join(format!("fixmaps/{name}.png")))?;
        let mask = sample.fixation_mask.as_ref().expect("synth samples carry fixations");
        let shape = mask.shape();
        let mut lines = String::new();
        for (idx, v) in mask.to_vec().iter().enumerate() {
            if *v == 1.0 {
                lines.push_str(&format!("{} {}\n", idx % shape.w, idx / shape.w));
            }
        }
        std::fs::write(out.join(format!("fixations/{name}.txt")), lines)?;
    }
    println!("wrote {count} samples under {}", out.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(cli(["websal", "no-such-command"]), 1);
        assert_eq!(cli(["websal", "outline", "--bogus-flag", "x"]), 1);
        assert_eq!(cli(["websal"]), 1);
        assert_eq!(cli(["websal", "--help"]), 0);
    }

    #[test]
    fn runtime_errors_exit_two() {
        assert_eq!(
            cli([
                "websal",
                "outline",
                "--image",
                "/nonexistent/input.png",
                "--out",
                "/tmp/never.png"
            ]),
            2
        );
    }

    #[test]
    fn synth_then_outline_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("set");
        let code = cli([
            "websal".to_string(),
            "synth".into(),
            "--count".into(),
            "2".into(),
            "--out".into(),
            out.display().to_string(),
            "--seed".into(),
            "9".into(),
        ]);
        assert_eq!(code, 0);
        assert!(out.join("stimuli/synthetic_0009.png").is_file());
        assert!(out.join("fixmaps/synthetic_0010.png").is_file());
        assert!(out.join("fixations/synthetic_0009.txt").is_file());

        let edge = dir.path().join("edge.png");
        let code = cli([
            "websal".to_string(),
            "outline".into(),
            "--image".into(),
            out.join("stimuli/synthetic_0009.png").display().to_string(),
            "--out".into(),
            edge.display().to_string(),
        ]);
        assert_eq!(code, 0);
        let reloaded = imageops::load_gray(&edge).unwrap();
        assert_eq!(reloaded.shape().h, 64);
    }
}
