//! Tour of the tensor engine: build a tiny conv -> batchnorm -> relu
//! pipeline, run a backward pass, and cross-check one gradient against a
//! central finite difference.
//!
//! Run with `cargo run --example autodiff_basics`.

use websal::rng::SplitMix64;
use websal::{Mode, Shape, Tensor};

fn randn(shape: impl Into<Shape>, std: f64, rng: &mut SplitMix64) -> Tensor {
    let shape = shape.into();
    let data: Vec<f64> = (0..shape.len()).map(|_| rng.next_normal() * std).collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = SplitMix64::new(7);
    let x = randn((1, 2, 5, 5), 1.0, &mut rng).trainable();
    let w = randn((3, 2, 3, 3), 0.3, &mut rng).trainable();
    let b = Tensor::zeros((1, 3, 1, 1)).trainable();
    let gamma = Tensor::full((1, 3, 1, 1), 1.0).trainable();
    let beta = Tensor::zeros((1, 3, 1, 1)).trainable();

    let forward = |input: &Tensor| -> Result<Tensor, Box<dyn std::error::Error>> {
        // fresh running stats each call: in Train mode they are updated as
        // a side effect but never read, so the output is unaffected
        let running_mean = Tensor::zeros((1, 3, 1, 1));
        let running_var = Tensor::full((1, 3, 1, 1), 1.0);
        let y = input.conv2d(&w, &b, 1, 1, 1)?;
        let y = y.batchnorm2d(&gamma, &beta, &running_mean, &running_var, Mode::Train)?;
        Ok(y.relu().square().mean_all())
    };

    let loss = forward(&x)?;
    println!("loss = {:.6}", loss.item());
    loss.backward()?;

    let gw = w.grad().expect("weight gradient");
    println!(
        "dL/dw: {} values, |g|_inf = {:.6}",
        gw.len(),
        gw.iter().fold(0.0f64, |m, g| m.max(g.abs()))
    );

    // central finite difference on one weight entry, probed through
    // detached copies so the graph never sees the perturbation
    let probe = 13;
    let eps = 1e-5;
    let mut perturbed = w.to_vec();
    perturbed[probe] += eps;
    let w_plus = Tensor::from_vec(w.shape(), perturbed.clone())?;
    perturbed[probe] -= 2.0 * eps;
    let w_minus = Tensor::from_vec(w.shape(), perturbed)?;

    let eval = |wp: &Tensor| -> Result<f64, Box<dyn std::error::Error>> {
        let running_mean = Tensor::zeros((1, 3, 1, 1));
        let running_var = Tensor::full((1, 3, 1, 1), 1.0);
        let y = x.detach().conv2d(wp, &b.detach(), 1, 1, 1)?;
        let y = y.batchnorm2d(
            &gamma.detach(),
            &beta.detach(),
            &running_mean,
            &running_var,
            Mode::Train,
        )?;
        Ok(y.relu().square().mean_all().item())
    };
    let numeric = (eval(&w_plus)? - eval(&w_minus)?) / (2.0 * eps);
    println!(
        "weight[{probe}]: analytic {:.8}  numeric {:.8}  (diff {:.2e})",
        gw[probe],
        numeric,
        (gw[probe] - numeric).abs()
    );

    // gradients accumulate across backward passes until cleared
    let again = forward(&x)?;
    again.backward()?;
    let doubled = w.grad().expect("accumulated gradient");
    println!(
        "after a second backward, weight[{probe}] grad = {:.8} (2x the first)",
        doubled[probe]
    );
    w.zero_grad();
    println!("after zero_grad, weight grad present: {}", w.grad().is_some());
    Ok(())
}
