//! The training loop: alternating discriminator/generator updates over
//! both stages, per-epoch checkpoints, CSV loss logging, and bit-exact
//! resume.
//!
//! Determinism contract: all randomness flows from the config seed through
//! the repo's own PRNG, batch order is a pure function of (seed, epoch),
//! and every checkpoint save rounds live parameters and optimizer moments
//! to f32 — so a resumed run continues from exactly the state an
//! uninterrupted run would have had.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    batch_iter, load_dataset, split_dataset, synth_set, DataError, WebpageSample,
};
use crate::imageops::{outline_pyramid, ImageOpsError};
use crate::losses::{
    adversarial_losses, generator_adversarial_loss, l2_pixel_loss, total_loss, tv_loss, GanMode,
    LossError, LossReport, LossTerms, LossWeights,
};
use crate::networks::{
    build_params, decoder_level_dims, discriminator_forward, generator_forward, NetworkConfig,
    NetworkError,
};
use crate::tensor::checkpoint::{self, CheckpointError};
use crate::tensor::optim::{Method, Optimizer};
use crate::tensor::params::ParamStore;
use crate::tensor::{no_grad, Mode, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("train config: {0}")]
    BadConfig(String),
    #[error("dataset `{0}` is neither a directory nor `synthetic:N`")]
    BadDataset(String),
    #[error("non-finite loss at step {step} ({what}); diagnostics written to {dump}")]
    NonFinite {
        step: u64,
        what: String,
        dump: PathBuf,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Image(#[from] ImageOpsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything a run needs, JSON-serializable losslessly. `dataset` is a
/// directory path or `synthetic:N` (N generated 64x64 pages);
/// `train_count = 0` trains on every sample, otherwise the deterministic
/// split keeps that many for training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Discriminator steps per generator step; 0 freezes the
    /// discriminator entirely (pure supervised ablation).
    pub n_critic: usize,
    /// Critic weight-clip bound in wgan-clip mode.
    pub clip_value: f64,
    pub weights: LossWeights,
    pub network: NetworkConfig,
    /// Gaussian for fixation-point densities; 0 scales it from page width.
    pub blur_sigma: f64,
    pub seed: u64,
    pub dataset: String,
    pub train_count: usize,
    pub checkpoint_dir: PathBuf,
    pub log_path: PathBuf,
    /// Train stage 1 alone for the first half of the epochs, then jointly.
    pub stagewise: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 2,
            lr_g: 2e-4,
            lr_d: 2e-4,
            n_critic: 1,
            clip_value: 0.01,
            weights: LossWeights::default(),
            network: NetworkConfig::default(),
            blur_sigma: 0.0,
            seed: 1,
            dataset: "synthetic:8".into(),
            train_count: 0,
            checkpoint_dir: PathBuf::from("checkpoints"),
            log_path: PathBuf::from("training_log.csv"),
            stagewise: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |m: String| Err(TrainerError::BadConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        for (name, v) in [("lr_g", self.lr_g), ("lr_d", self.lr_d)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if self.weights.gan_mode == GanMode::WganClip && !(self.clip_value > 0.0) {
            return bad(format!(
                "clip_value must be positive in wgan-clip mode, got {}",
                self.clip_value
            ));
        }
        if self.dataset.is_empty() {
            return Err(TrainerError::BadDataset(self.dataset.clone()));
        }
        self.weights.validate()?;
        self.network.validate()?;
        Ok(())
    }

    /// Parse from a JSON file.
    pub fn from_file(path: &Path) -> Result<TrainConfig, TrainerError> {
        let body = std::fs::read_to_string(path)?;
        serde_json::from_str(&body)
            .map_err(|e| TrainerError::BadConfig(format!("{}: {e}", path.display())))
    }
}

/// Materialize the configured dataset (directory or `synthetic:N`).
pub fn resolve_dataset(config: &TrainConfig) -> Result<Vec<WebpageSample>, TrainerError> {
    if let Some(rest) = config.dataset.strip_prefix("synthetic:") {
        let n: usize = rest
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| TrainerError::BadDataset(config.dataset.clone()))?;
        Ok(synth_set(config.seed, n)?)
    } else {
        Ok(load_dataset(Path::new(&config.dataset), config.blur_sigma)?)
    }
}

fn checkpoint_file(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch}.ckpt"))
}

/// Highest `epoch_K.ckpt` in `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<(usize, PathBuf)>, TrainerError> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(k) = name
            .strip_prefix("epoch_")
            .and_then(|r| r.strip_suffix(".ckpt"))
            .and_then(|r| r.parse::<usize>().ok())
        {
            if best.as_ref().is_none_or(|(b, _)| k > *b) {
                best = Some((k, path));
            }
        }
    }
    Ok(best)
}

struct Abort<'a> {
    config: &'a TrainConfig,
    store: &'a ParamStore,
}

impl Abort<'_> {
    fn dump(&self, step: u64, what: &str, report: &LossReport) -> TrainerError {
        let norms: Vec<serde_json::Value> = self
            .store
            .grad_norms(|_| true)
            .into_iter()
            .map(|(name, norm)| serde_json::json!({ "param": name, "grad_norm": norm }))
            .collect();
        let dump = serde_json::json!({
            "step": step,
            "what": what,
            "terms": report,
            "grad_norms": norms,
        });
        let path = self.config.checkpoint_dir.join("abort_dump.json");
        let _ = std::fs::write(
            &path,
            serde_json::to_string_pretty(&dump).expect("dump serializes"),
        );
        TrainerError::NonFinite {
            step,
            what: what.to_string(),
            dump: path,
        }
    }
}

/// Run (or resume) training; returns the final checkpoint path.
///
/// Each step follows the two-phase schedule: `n_critic` discriminator
/// updates on detached fakes from both stages (weights clipped in
/// wgan-clip mode), then one generator update on the full five-term
/// objective with gradients flowing jointly through both stages.
pub fn train(config: &TrainConfig) -> Result<PathBuf, TrainerError> {
    config.validate()?;
    let samples = resolve_dataset(config)?;
    let train_set: Vec<WebpageSample> = if config.train_count == 0 {
        samples
    } else {
        let split = split_dataset(&samples, config.train_count, config.seed)?;
        split
            .train_samples(&samples)
            .into_iter()
            .cloned()
            .collect()
    };

    std::fs::create_dir_all(&config.checkpoint_dir)?;
    let mut opt_g = Optimizer::new(Method::adam(), config.lr_g);
    let mut opt_d = Optimizer::new(Method::adam(), config.lr_d);
    let mut start_epoch = 0usize;
    let mut step: u64 = 0;
    let store;
    if let Some((k, path)) = latest_checkpoint(&config.checkpoint_dir)? {
        if k >= config.epochs {
            return Ok(path);
        }
        let loaded = checkpoint::load(&path)?;
        if let Some(s) = loaded.optimizer_state("g") {
            opt_g = Optimizer::from_state(s.clone());
        }
        if let Some(s) = loaded.optimizer_state("d") {
            opt_d = Optimizer::from_state(s.clone());
        }
        step = loaded
            .meta
            .get("step")
            .and_then(|v| v.as_u64())
            .unwrap_or(0);
        store = loaded.store;
        start_epoch = k;
    } else {
        store = build_params(config.seed, &config.network)?;
    }

    // fresh runs truncate the log; resumes append to it
    let mut log: std::fs::File = if start_epoch == 0 {
        let mut f = std::fs::File::create(&config.log_path)?;
        writeln!(f, "step,epoch,l1,l2_g,l3,l4_g,tv,total,d_loss")?;
        f
    } else {
        std::fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(&config.log_path)?
    };

    let abort = Abort { config, store: &store };
    let is_gen = |n: &str| n.starts_with("stage");
    let is_disc = |n: &str| n.starts_with("disc.");
    let gan = config.weights.gan_mode;
    let disc_mode = gan.disc_mode();

    for epoch in start_epoch..config.epochs {
        let stage1_only = config.stagewise && epoch < config.epochs / 2;
        let mut weights = config.weights.clone();
        if stage1_only {
            weights.lambda3 = 0.0;
            weights.lambda4 = 0.0;
            weights.lambda5 = 0.0;
        }

        for batch in batch_iter(&train_set, config.batch_size, config.seed, epoch as u64)? {
            let dims = batch.images.shape();
            let pyramid = outline_pyramid(
                &batch.images,
                config.network.sigma,
                &decoder_level_dims(dims.h, dims.w),
            )?;

            // (a) discriminator phase: fakes carry no generator graph
            let mut d_loss_value = 0.0;
            for _ in 0..config.n_critic {
                let (coarse, fine) = no_grad(|| {
                    generator_forward(&store, &config.network, &batch.images, &pyramid, Mode::Train)
                })?;
                store.zero_grad_all();
                let d_real = discriminator_forward(&store, &batch.saliency, disc_mode)?;
                let d_fake1 = discriminator_forward(&store, &coarse, disc_mode)?;
                let d_fake2 = discriminator_forward(&store, &fine, disc_mode)?;
                let (_, d1) = adversarial_losses(&d_real, &d_fake1, gan)?;
                let (_, d2) = adversarial_losses(&d_real, &d_fake2, gan)?;
                let d_total = if stage1_only { d1 } else { d1.add(&d2)? };
                d_loss_value = d_total.item();
                d_total.backward()?;
                opt_d.step(&store, is_disc)?;
                if gan == GanMode::WganClip {
                    store.clamp_values(is_disc, -config.clip_value, config.clip_value);
                }
            }

            // (b) generator phase: one joint update over both stages
            store.zero_grad_all();
            let (coarse, fine) =
                generator_forward(&store, &config.network, &batch.images, &pyramid, Mode::Train)?;
            let d_fake1 = discriminator_forward(&store, &coarse, disc_mode)?;
            let d_fake2 = discriminator_forward(&store, &fine, disc_mode)?;
            let terms = LossTerms {
                l1: l2_pixel_loss(&coarse, &batch.saliency)?,
                l2_g: generator_adversarial_loss(&d_fake1, gan),
                l3: l2_pixel_loss(&fine, &batch.saliency)?,
                l4_g: generator_adversarial_loss(&d_fake2, gan),
                tv: tv_loss(&fine, weights.alpha)?,
            };
            let total = match total_loss(&terms, &weights) {
                Ok(t) => t,
                Err(LossError::NonFinite { term, value }) => {
                    let report = LossReport::new(&terms, f64::NAN, d_loss_value);
                    return Err(abort.dump(step + 1, &format!("{term} = {value}"), &report));
                }
                Err(e) => return Err(e.into()),
            };
            total.backward()?;
            opt_g.step(&store, is_gen)?;

            step += 1;
            let report = LossReport::new(&terms, total.item(), d_loss_value);
            if !report.is_finite() {
                return Err(abort.dump(step, "a logged value is non-finite", &report));
            }
            writeln!(
                log,
                "{},{},{},{},{},{},{},{},{}",
                step,
                epoch + 1,
                report.l1,
                report.l2_g,
                report.l3,
                report.l4_g,
                report.tv,
                report.total,
                report.d_loss
            )?;
        }
        log.flush()?;

        let meta = serde_json::json!({
            "config": config,
            "epoch": epoch + 1,
            "step": step,
        });
        let path = checkpoint_file(&config.checkpoint_dir, epoch + 1);
        checkpoint::save(&path, &store, &mut [("g", &mut opt_g), ("d", &mut opt_d)], &meta)?;
    }
    Ok(checkpoint_file(&config.checkpoint_dir, config.epochs))
}
