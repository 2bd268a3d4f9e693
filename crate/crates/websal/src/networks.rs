//! The three sub-networks and their two-stage wiring.
//!
//! Stage 1 maps an RGB screenshot to a coarse saliency map; stage 2 takes
//! the screenshot concatenated with the coarse map (4 channels) and emits
//! the refined map. Both stages share every parameter except the stage-2
//! encoder's first conv, which has to accept the extra channel — sharing
//! is expressed as name aliases over common storage in the `ParamStore`.
//! A single fully-convolutional discriminator scores maps from either
//! stage.
//!
//! Layout is config-driven. The defaults are sized for CPU training:
//!
//! * encoder: 8 conv3x3+relu layers, max-pool /2 after layers 2,4,6,8;
//! * decoder: 8 dilated residual blocks (conv-bn-relu-conv-bn + skip,
//!   then relu), 4 deconvs (stride 2) each followed by relu, a 1-channel
//!   conv head with sigmoid; outline maps are concatenated at configured
//!   levels and fused back to the level width by a 3x3 conv;
//! * discriminator: 8 conv3x3+relu layers (stride 2 at 1,3,5,7) and a
//!   1x1 head, yielding an (n,1,h/16,w/16) score map.

use serde::{Deserialize, Serialize};

use crate::imageops::{ImageOpsError, OutlinePyramid};
use crate::rng::SplitMix64;
use crate::tensor::params::ParamStore;
use crate::tensor::{Mode, Shape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error("network config: {0}")]
    BadConfig(String),
    #[error("{what}: expected {expected} input channels, got {got}")]
    WrongChannels {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("input {h}x{w} is not divisible by 16; reflect-pad it first (see the data module)")]
    NotDivisible { h: usize, w: usize },
    #[error("outline level {level} is {got_h}x{got_w} but this injection point needs {need_h}x{need_w}")]
    OutlineDims {
        level: usize,
        got_h: usize,
        got_w: usize,
        need_h: usize,
        need_w: usize,
    },
    #[error("outline pyramid has {got} levels; level {level} was requested")]
    OutlineMissing { level: usize, got: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Outline(#[from] ImageOpsError),
}

/// Widths and knobs for all three networks. Serialized into training
/// configs and checkpoint metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Out-channels of the 8 encoder convs (kernel 3, stride 1, pad 1).
    pub encoder_widths: Vec<usize>,
    /// Channel width of the 8 dilated residual blocks.
    pub block_channels: usize,
    /// Dilation rate per block.
    pub block_dilations: Vec<usize>,
    /// Out-channels of the 4 transposed convs (kernel 4, stride 2, pad 1).
    pub deconv_widths: Vec<usize>,
    /// Out-channels of the 8 discriminator convs.
    pub disc_widths: Vec<usize>,
    /// Decoder levels that receive the outline map: 0 = decoder input
    /// (h/16), k = after the k-th deconv, up to 4 = full resolution.
    pub outline_levels: Vec<usize>,
    /// Laplacian-of-Gaussian scale for outline extraction.
    pub sigma: f64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            encoder_widths: vec![32, 32, 64, 64, 128, 128, 256, 256],
            block_channels: 256,
            block_dilations: vec![1, 1, 2, 2, 4, 4, 2, 1],
            deconv_widths: vec![256, 128, 64, 32],
            disc_widths: vec![32, 32, 64, 64, 128, 128, 256, 256],
            outline_levels: vec![0],
            sigma: 2.0,
        }
    }
}

impl NetworkConfig {
    /// A deliberately small layout for smoke tests and quick runs.
    pub fn tiny() -> Self {
        NetworkConfig {
            encoder_widths: vec![8, 8, 12, 12, 16, 16, 24, 24],
            block_channels: 24,
            block_dilations: vec![1, 1, 2, 2, 4, 4, 2, 1],
            deconv_widths: vec![24, 16, 12, 8],
            disc_widths: vec![8, 8, 12, 12, 16, 16, 16, 16],
            outline_levels: vec![0],
            sigma: 2.0,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |msg: String| Err(NetworkError::BadConfig(msg));
        if self.encoder_widths.len() != 8 {
            return bad(format!(
                "encoder_widths needs 8 entries, got {}",
                self.encoder_widths.len()
            ));
        }
        if self.block_dilations.len() != 8 {
            return bad(format!(
                "block_dilations needs 8 entries, got {}",
                self.block_dilations.len()
            ));
        }
        if self.deconv_widths.len() != 4 {
            return bad(format!(
                "deconv_widths needs 4 entries, got {}",
                self.deconv_widths.len()
            ));
        }
        if self.disc_widths.len() != 8 {
            return bad(format!(
                "disc_widths needs 8 entries, got {}",
                self.disc_widths.len()
            ));
        }
        if self
            .encoder_widths
            .iter()
            .chain(&self.deconv_widths)
            .chain(&self.disc_widths)
            .chain([&self.block_channels])
            .any(|&w| w == 0)
        {
            return bad("channel widths must be >= 1".into());
        }
        if self.block_dilations.iter().any(|&d| d == 0) {
            return bad("dilations must be >= 1".into());
        }
        let mut seen = [false; 5];
        for &l in &self.outline_levels {
            if l > 4 {
                return bad(format!("outline level {l} out of range 0..=4"));
            }
            if seen[l] {
                return bad(format!("outline level {l} listed twice"));
            }
            seen[l] = true;
        }
        if !self.outline_levels.contains(&0)
            && self.encoder_widths[7] != self.block_channels
        {
            return bad(format!(
                "without level-0 injection the encoder top width {} must equal block_channels {}",
                self.encoder_widths[7], self.block_channels
            ));
        }
        if self.sigma <= 0.0 {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        Ok(())
    }
}

/// Spatial dims of the decoder's five feature levels for an h-by-w input,
/// deepest first: h/16 up to full resolution. Outline pyramids are built
/// against these.
pub fn decoder_level_dims(h: usize, w: usize) -> [(usize, usize); 5] {
    [
        (h / 16, w / 16),
        (h / 8, w / 8),
        (h / 4, w / 4),
        (h / 2, w / 2),
        (h, w),
    ]
}

const STAGE1_IN: usize = 3;
const STAGE2_IN: usize = 4;

/// Initial bias of the sigmoid output head, sigmoid(-2) ~ 0.12. Most
/// webpage pixels attract no gaze; a head that already predicts a low
/// base rate sends its first gradients toward structure instead of a
/// uniform downward shift that can saturate the sigmoid on the way.
const HEAD_BIAS_PRIOR: f64 = -2.0;

fn he_conv(rng: &mut SplitMix64, shape: Shape, fan_in: usize) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let data: Vec<f64> = (0..shape.len()).map(|_| rng.next_normal() * std).collect();
    Tensor::from_vec(shape, data)
        .expect("shape/data sized together")
        .trainable()
}

struct Builder<'a> {
    store: ParamStore,
    rng: &'a mut SplitMix64,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, out_c: usize, in_c: usize, k: usize) {
        let w = he_conv(self.rng, Shape::new(out_c, in_c, k, k), in_c * k * k);
        self.store.insert(&format!("{name}.weight"), w).unwrap();
        self.store
            .insert(
                &format!("{name}.bias"),
                Tensor::zeros((1, out_c, 1, 1)).trainable(),
            )
            .unwrap();
    }

    fn deconv(&mut self, name: &str, in_c: usize, out_c: usize, k: usize) {
        let w = he_conv(self.rng, Shape::new(in_c, out_c, k, k), in_c * k * k);
        self.store.insert(&format!("{name}.weight"), w).unwrap();
        self.store
            .insert(
                &format!("{name}.bias"),
                Tensor::zeros((1, out_c, 1, 1)).trainable(),
            )
            .unwrap();
    }

    fn bn(&mut self, name: &str, c: usize) {
        self.store
            .insert(
                &format!("{name}.gamma"),
                Tensor::full((1, c, 1, 1), 1.0).trainable(),
            )
            .unwrap();
        self.store
            .insert(
                &format!("{name}.beta"),
                Tensor::zeros((1, c, 1, 1)).trainable(),
            )
            .unwrap();
        self.store
            .insert(&format!("{name}.running_mean"), Tensor::zeros((1, c, 1, 1)))
            .unwrap();
        self.store
            .insert(
                &format!("{name}.running_var"),
                Tensor::full((1, c, 1, 1), 1.0),
            )
            .unwrap();
    }
}

/// Allocate and He-initialize every parameter, wiring the stage-2 aliases.
pub fn build_params(seed: u64, config: &NetworkConfig) -> Result<ParamStore, NetworkError> {
    config.validate()?;
    let mut rng = SplitMix64::new(seed);
    let mut b = Builder {
        store: ParamStore::new(),
        rng: &mut rng,
    };

    // stage-1 encoder
    let mut in_c = STAGE1_IN;
    for (k, &out_c) in config.encoder_widths.iter().enumerate() {
        b.conv(&format!("stage1.encoder.layer{}", k + 1), out_c, in_c, 3);
        in_c = out_c;
    }

    // stage-1 decoder
    if config.outline_levels.contains(&0) {
        b.conv(
            "stage1.decoder.inject0",
            config.block_channels,
            config.encoder_widths[7] + 1,
            3,
        );
    }
    for k in 1..=8 {
        let base = format!("stage1.decoder.block{k}");
        b.conv(
            &format!("{base}.conv1"),
            config.block_channels,
            config.block_channels,
            3,
        );
        b.bn(&format!("{base}.bn1"), config.block_channels);
        b.conv(
            &format!("{base}.conv2"),
            config.block_channels,
            config.block_channels,
            3,
        );
        b.bn(&format!("{base}.bn2"), config.block_channels);
    }
    let mut dec_c = config.block_channels;
    for (k, &out_c) in config.deconv_widths.iter().enumerate() {
        b.deconv(&format!("stage1.decoder.deconv{}", k + 1), dec_c, out_c, 4);
        dec_c = out_c;
        if config.outline_levels.contains(&(k + 1)) {
            b.conv(
                &format!("stage1.decoder.inject{}", k + 1),
                out_c,
                out_c + 1,
                3,
            );
        }
    }
    b.conv("stage1.decoder.head", 1, dec_c, 3);
    b.store
        .require("stage1.decoder.head.bias")
        .expect("just inserted")
        .update_data(|d| d.fill(HEAD_BIAS_PRIOR));

    // stage-2: a fresh first conv for the 4-channel input, everything else
    // aliased onto stage-1 storage
    b.conv(
        "stage2.encoder.layer1",
        config.encoder_widths[0],
        STAGE2_IN,
        3,
    );
    let stage1_names: Vec<String> = b
        .store
        .iter()
        .map(|(n, _)| n.to_string())
        .filter(|n| n.starts_with("stage1.") && !n.starts_with("stage1.encoder.layer1."))
        .collect();
    for name in stage1_names {
        let alias = name.replacen("stage1.", "stage2.", 1);
        b.store.alias(&alias, &name).unwrap();
    }

    // discriminator
    let mut in_c = 1;
    for (k, &out_c) in config.disc_widths.iter().enumerate() {
        b.conv(&format!("disc.layer{}", k + 1), out_c, in_c, 3);
        in_c = out_c;
    }
    b.conv("disc.head", 1, in_c, 1);

    Ok(b.store)
}

/// Feature extraction: 8 conv+relu layers with four /2 pools; total
/// downsampling 16x. Stage 1 takes the 3-channel image, stage 2 the
/// image concatenated with the coarse map.
pub fn encoder_forward(
    store: &ParamStore,
    stage: u8,
    input: &Tensor,
) -> Result<Tensor, NetworkError> {
    let expected = if stage == 1 { STAGE1_IN } else { STAGE2_IN };
    if input.shape().c != expected {
        return Err(NetworkError::WrongChannels {
            what: "encoder",
            expected,
            got: input.shape().c,
        });
    }
    let mut x = input.clone();
    for k in 1..=8 {
        let w = store.require(&format!("stage{stage}.encoder.layer{k}.weight"))?;
        let bias = store.require(&format!("stage{stage}.encoder.layer{k}.bias"))?;
        x = x.conv2d(w, bias, 1, 1, 1)?.relu();
        if k % 2 == 0 {
            x = x.maxpool2d(2, 2)?;
        }
    }
    Ok(x)
}

fn residual_block(
    store: &ParamStore,
    base: &str,
    x: &Tensor,
    dilation: usize,
    mode: Mode,
) -> Result<Tensor, NetworkError> {
    let conv = |name: &str, input: &Tensor| -> Result<Tensor, NetworkError> {
        let w = store.require(&format!("{base}.{name}.weight"))?;
        let bias = store.require(&format!("{base}.{name}.bias"))?;
        Ok(input.conv2d(w, bias, 1, dilation, dilation)?)
    };
    let bn = |name: &str, input: &Tensor| -> Result<Tensor, NetworkError> {
        let gamma = store.require(&format!("{base}.{name}.gamma"))?;
        let beta = store.require(&format!("{base}.{name}.beta"))?;
        let rm = store.require(&format!("{base}.{name}.running_mean"))?;
        let rv = store.require(&format!("{base}.{name}.running_var"))?;
        Ok(input.batchnorm2d(gamma, beta, rm, rv, mode)?)
    };
    let mut y = bn("bn1", &conv("conv1", x)?)?.relu();
    y = bn("bn2", &conv("conv2", &y)?)?;
    Ok(y.add(x)?.relu())
}

fn inject_outline(
    store: &ParamStore,
    stage: u8,
    level: usize,
    x: &Tensor,
    outline: &OutlinePyramid,
) -> Result<Tensor, NetworkError> {
    let edge = outline
        .levels
        .get(level)
        .ok_or(NetworkError::OutlineMissing {
            level,
            got: outline.levels.len(),
        })?;
    let (xs, es) = (x.shape(), edge.shape());
    if (es.n, es.h, es.w) != (xs.n, xs.h, xs.w) || es.c != 1 {
        return Err(NetworkError::OutlineDims {
            level,
            got_h: es.h,
            got_w: es.w,
            need_h: xs.h,
            need_w: xs.w,
        });
    }
    // the outline is conditioning data, not a gradient path
    let merged = Tensor::concat_channels(&[x, &edge.detach()])?;
    let w = store.require(&format!("stage{stage}.decoder.inject{level}.weight"))?;
    let bias = store.require(&format!("stage{stage}.decoder.inject{level}.bias"))?;
    Ok(merged.conv2d(w, bias, 1, 1, 1)?.relu())
}

/// Decode features into a saliency map, mixing in outline maps at the
/// configured levels. Output is (n,1,16*fh,16*fw) in (0,1).
pub fn decoder_forward(
    store: &ParamStore,
    config: &NetworkConfig,
    stage: u8,
    features: &Tensor,
    outline: &OutlinePyramid,
    mode: Mode,
) -> Result<Tensor, NetworkError> {
    let mut x = if config.outline_levels.contains(&0) {
        inject_outline(store, stage, 0, features, outline)?
    } else {
        if features.shape().c != config.block_channels {
            return Err(NetworkError::WrongChannels {
                what: "decoder",
                expected: config.block_channels,
                got: features.shape().c,
            });
        }
        features.clone()
    };
    for (k, &dilation) in config.block_dilations.iter().enumerate() {
        let base = format!("stage{stage}.decoder.block{}", k + 1);
        x = residual_block(store, &base, &x, dilation, mode)?;
    }
    for k in 1..=4 {
        let w = store.require(&format!("stage{stage}.decoder.deconv{k}.weight"))?;
        let bias = store.require(&format!("stage{stage}.decoder.deconv{k}.bias"))?;
        x = x.conv_transpose2d(w, bias, 2, 1)?.relu();
        if config.outline_levels.contains(&k) {
            x = inject_outline(store, stage, k, &x, outline)?;
        }
    }
    let w = store.require(&format!("stage{stage}.decoder.head.weight"))?;
    let bias = store.require(&format!("stage{stage}.decoder.head.bias"))?;
    Ok(x.conv2d(w, bias, 1, 1, 1)?.sigmoid())
}

/// How the discriminator head is read: raw scores (critic) or
/// probabilities (sigmoid).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DiscMode {
    Critic,
    Probability,
}

/// Score a saliency map; one shared parameter set serves both stages.
/// Output is an (n,1,h/16,w/16) map.
pub fn discriminator_forward(
    store: &ParamStore,
    map: &Tensor,
    mode: DiscMode,
) -> Result<Tensor, NetworkError> {
    if map.shape().c != 1 {
        return Err(NetworkError::WrongChannels {
            what: "discriminator",
            expected: 1,
            got: map.shape().c,
        });
    }
    let mut x = map.clone();
    for k in 1..=8 {
        let w = store.require(&format!("disc.layer{k}.weight"))?;
        let bias = store.require(&format!("disc.layer{k}.bias"))?;
        let stride = if k % 2 == 1 { 2 } else { 1 };
        x = x.conv2d(w, bias, stride, 1, 1)?.relu();
    }
    let w = store.require("disc.head.weight")?;
    let bias = store.require("disc.head.bias")?;
    let score = x.conv2d(w, bias, 1, 0, 1)?;
    Ok(match mode {
        DiscMode::Critic => score,
        DiscMode::Probability => score.sigmoid(),
    })
}

/// Run both generator stages: coarse from the image, fine from
/// image ⊕ coarse. Gradients flow from the fine map back into stage 1.
pub fn generator_forward(
    store: &ParamStore,
    config: &NetworkConfig,
    image: &Tensor,
    outline: &OutlinePyramid,
    mode: Mode,
) -> Result<(Tensor, Tensor), NetworkError> {
    let f1 = encoder_forward(store, 1, image)?;
    let coarse = decoder_forward(store, config, 1, &f1, outline, mode)?;
    let stitched = Tensor::concat_channels(&[image, &coarse])?;
    let f2 = encoder_forward(store, 2, &stitched)?;
    let fine = decoder_forward(store, config, 2, &f2, outline, mode)?;
    Ok((coarse, fine))
}

/// Inference: both stages in eval mode with no graph recording; builds the
/// outline pyramid internally. Requires h,w divisible by 16.
pub fn predict(
    store: &ParamStore,
    config: &NetworkConfig,
    image: &Tensor,
) -> Result<(Tensor, Tensor), NetworkError> {
    let s = image.shape();
    if s.c != STAGE1_IN {
        return Err(NetworkError::WrongChannels {
            what: "predict",
            expected: STAGE1_IN,
            got: s.c,
        });
    }
    if s.h % 16 != 0 || s.w % 16 != 0 {
        return Err(NetworkError::NotDivisible { h: s.h, w: s.w });
    }
    let pyramid = crate::imageops::outline_pyramid(
        image,
        config.sigma,
        &decoder_level_dims(s.h, s.w),
    )?;
    crate::tensor::no_grad(|| generator_forward(store, config, image, &pyramid, Mode::Eval))
}
