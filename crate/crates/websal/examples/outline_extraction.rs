//! Render a synthetic webpage and pull out its Laplacian-of-Gaussian
//! outline map at a few blur scales. Writes PNGs under
//! `target/example-output/outline/`.
//!
//! Run with `cargo run --example outline_extraction`.

use std::fs;
use std::path::Path;

use websal::data::synth_webpage;
use websal::imageops::{extract_outline, save_gray, save_rgb};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = Path::new("target/example-output/outline");
    fs::create_dir_all(out)?;

    let page = synth_webpage(42, 96, 128)?;
    save_rgb(&page.image, &out.join("page.png"))?;
    println!("rendered {} ({}x{})", page.id, page.orig_h, page.orig_w);

    for sigma in [1.0, 2.0, 4.0] {
        let edges = extract_outline(&page.image, sigma)?;
        let data = edges.to_vec();
        let lit = data.iter().filter(|&&v| v > 0.25).count();
        println!(
            "sigma {sigma}: {:>5.1}% of pixels above 0.25, peak {:.3}",
            100.0 * lit as f64 / data.len() as f64,
            data.iter().cloned().fold(0.0, f64::max)
        );
        save_gray(&edges, &out.join(format!("edges_sigma{sigma}.png")))?;
    }

    println!("wrote {}", out.display());
    Ok(())
}
