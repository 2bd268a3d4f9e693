//! Dataset handling: loading screenshot/fixation pairs from disk,
//! deterministic splits and batching, reflect-padding to multiple-of-16
//! dims, and a synthetic webpage generator for quick self-contained runs.
//!
//! On-disk layout expected by [`load_dataset`]:
//!
//! ```text
//! root/
//!   stimuli/      <id>.png | <id>.pgm          screenshots
//!   fixmaps/      <id>.png | <id>.pgm          grayscale density (optional)
//!   fixations/    <id>.txt                     ASCII lines "x y" (optional)
//! ```
//!
//! Every stimulus needs a density map or a fixation file; when both exist
//! the density map wins. Fixation coordinates are 0-based pixels, x =
//! column. A `manifest.json` (ids, dims, categories, checksums) is written
//! into the root on load, best-effort.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::imageops::{self, ImageOpsError};
use crate::rng::SplitMix64;
use crate::tensor::{Shape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("dataset root {0} has no stimuli/ directory")]
    MissingStimuli(PathBuf),
    #[error("stimuli/ in {0} contains no .png or .pgm files")]
    EmptyDataset(PathBuf),
    #[error("no ground truth for `{stem}`: tried {tried}")]
    MissingPair { stem: String, tried: String },
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: PathBuf,
        source: Box<ImageOpsError>,
    },
    #[error("{path} line {line}: cannot parse `{content}` as `x y`")]
    BadFixationLine {
        path: PathBuf,
        line: usize,
        content: String,
    },
    #[error("{path}: {source}")]
    BadFixations {
        path: PathBuf,
        source: Box<ImageOpsError>,
    },
    #[error("sample `{id}` is invalid: {why}")]
    InvalidSample { id: String, why: String },
    #[error("train_count must satisfy 0 < count < {len}, got {count}")]
    BadTrainCount { count: usize, len: usize },
    #[error("batch_size must be >= 1")]
    BadBatchSize,
    #[error("cannot batch an empty sample list")]
    EmptySplit,
    #[error("synthetic pages need h,w divisible by 16 and >= 64, got {h}x{w}")]
    BadSynthDims { h: usize, w: usize },
    #[error("cannot pad {have_h}x{have_w} to smaller {want_h}x{want_w}")]
    BadPad {
        have_h: usize,
        have_w: usize,
        want_h: usize,
        want_w: usize,
    },
    #[error("cannot crop {have_h}x{have_w} down to larger {want_h}x{want_w}")]
    BadCrop {
        have_h: usize,
        have_w: usize,
        want_h: usize,
        want_w: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] ImageOpsError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Textual,
    Pictorial,
    Mixed,
    Synthetic,
}

/// One prepared sample: image and ground truth reflect-padded to
/// multiple-of-16 dims, original dims kept so predictions can be cropped
/// back. The fixation mask (zero-padded) is present when the ground truth
/// came from discrete points or the synthesizer.
#[derive(Clone, Debug)]
pub struct WebpageSample {
    pub id: String,
    pub image: Tensor,
    pub saliency: Tensor,
    pub fixation_mask: Option<Tensor>,
    pub category: Category,
    pub orig_h: usize,
    pub orig_w: usize,
}

impl WebpageSample {
    /// Pad raw (unpadded) tensors to multiple-of-16 dims and validate.
    pub fn prepare(
        id: &str,
        image: Tensor,
        saliency: Tensor,
        fixation_mask: Option<Tensor>,
        category: Category,
    ) -> Result<WebpageSample, DataError> {
        let s = image.shape();
        let (ph, pw) = (next_multiple_of_16(s.h), next_multiple_of_16(s.w));
        let sample = WebpageSample {
            id: id.to_string(),
            image: pad_reflect_to(&image, ph, pw)?,
            saliency: pad_reflect_to(&saliency, ph, pw)?,
            fixation_mask: fixation_mask
                .map(|m| pad_zero_to(&m, ph, pw))
                .transpose()?,
            category,
            orig_h: s.h,
            orig_w: s.w,
        };
        sample.validate()?;
        Ok(sample)
    }

    /// Check the structural invariants every sample must satisfy.
    pub fn validate(&self) -> Result<(), DataError> {
        let fail = |why: String| {
            Err(DataError::InvalidSample {
                id: self.id.clone(),
                why,
            })
        };
        let im = self.image.shape();
        let sa = self.saliency.shape();
        if im.n != 1 || im.c != 3 {
            return fail(format!("image must be (1,3,h,w), got {im}"));
        }
        if sa != Shape::new(1, 1, im.h, im.w) {
            return fail(format!("saliency {sa} does not match image {im}"));
        }
        if im.h % 16 != 0 || im.w % 16 != 0 {
            return fail(format!("dims {}x{} not divisible by 16", im.h, im.w));
        }
        if self.orig_h > im.h || self.orig_w > im.w || self.orig_h == 0 || self.orig_w == 0 {
            return fail(format!(
                "original dims {}x{} inconsistent with padded {}x{}",
                self.orig_h, self.orig_w, im.h, im.w
            ));
        }
        let sal = self.saliency.to_vec();
        if sal.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return fail("saliency values outside [0,1]".into());
        }
        if let Some(mask) = &self.fixation_mask {
            if mask.shape() != sa {
                return fail(format!("mask {} does not match saliency {sa}", mask.shape()));
            }
            let m = mask.to_vec();
            if m.iter().any(|&v| v != 0.0 && v != 1.0) {
                return fail("fixation mask is not binary".into());
            }
            if m.iter().any(|&v| v == 1.0) {
                let peak = sal.iter().cloned().fold(0.0, f64::max);
                if (peak - 1.0).abs() > 1e-9 {
                    return fail(format!("fixations exist but saliency max is {peak}"));
                }
            }
        }
        Ok(())
    }
}

/// Smallest multiple of 16 that is >= `x`.
pub fn next_multiple_of_16(x: usize) -> usize {
    x.div_ceil(16) * 16
}

/// Reflect-pad on the bottom/right edges up to the target dims; cropping
/// back to the original dims restores the input exactly.
pub fn pad_reflect_to(t: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor, DataError> {
    pad_to(t, target_h, target_w, true)
}

/// Zero-pad on the bottom/right edges up to the target dims.
pub fn pad_zero_to(t: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor, DataError> {
    pad_to(t, target_h, target_w, false)
}

fn pad_to(t: &Tensor, target_h: usize, target_w: usize, reflect: bool) -> Result<Tensor, DataError> {
    let s = t.shape();
    if target_h < s.h || target_w < s.w {
        return Err(DataError::BadPad {
            have_h: s.h,
            have_w: s.w,
            want_h: target_h,
            want_w: target_w,
        });
    }
    if target_h == s.h && target_w == s.w {
        return Ok(t.detach());
    }
    let src = t.to_vec();
    let mut out = vec![0.0; s.n * s.c * target_h * target_w];
    for nc in 0..s.n * s.c {
        let src_base = nc * s.h * s.w;
        let dst_base = nc * target_h * target_w;
        for i in 0..target_h {
            for j in 0..target_w {
                let v = if i < s.h && j < s.w {
                    src[src_base + i * s.w + j]
                } else if reflect {
                    let si = imageops::reflect_index(i as i64, s.h);
                    let sj = imageops::reflect_index(j as i64, s.w);
                    src[src_base + si * s.w + sj]
                } else {
                    0.0
                };
                out[dst_base + i * target_w + j] = v;
            }
        }
    }
    Ok(Tensor::from_vec((s.n, s.c, target_h, target_w), out)?)
}

/// Top-left crop back to `(h, w)` — the inverse of the padding helpers.
pub fn crop_to(t: &Tensor, h: usize, w: usize) -> Result<Tensor, DataError> {
    let s = t.shape();
    if h > s.h || w > s.w {
        return Err(DataError::BadCrop {
            have_h: s.h,
            have_w: s.w,
            want_h: h,
            want_w: w,
        });
    }
    if h == s.h && w == s.w {
        return Ok(t.detach());
    }
    let src = t.to_vec();
    let mut out = Vec::with_capacity(s.n * s.c * h * w);
    for nc in 0..s.n * s.c {
        let base = nc * s.h * s.w;
        for i in 0..h {
            out.extend_from_slice(&src[base + i * s.w..base + i * s.w + w]);
        }
    }
    Ok(Tensor::from_vec((s.n, s.c, h, w), out)?)
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    h: usize,
    w: usize,
    category: Category,
    checksum: String,
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

fn guess_category(stem: &str) -> Category {
    let lower = stem.to_ascii_lowercase();
    if lower.starts_with("text") {
        Category::Textual
    } else if lower.starts_with("pict") {
        Category::Pictorial
    } else {
        Category::Mixed
    }
}

fn read_fixation_points(path: &Path) -> Result<Vec<(i64, i64)>, DataError> {
    let body = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (idx, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut it = line.split_whitespace();
        let parsed = (|| {
            let x: i64 = it.next()?.parse().ok()?;
            let y: i64 = it.next()?.parse().ok()?;
            if it.next().is_some() {
                return None;
            }
            Some((x, y))
        })();
        match parsed {
            Some(p) => points.push(p),
            None => {
                return Err(DataError::BadFixationLine {
                    path: path.to_path_buf(),
                    line: idx + 1,
                    content: line.to_string(),
                })
            }
        }
    }
    Ok(points)
}

fn find_with_ext(dir: &Path, stem: &str, exts: &[&str]) -> Option<PathBuf> {
    exts.iter()
        .map(|e| dir.join(format!("{stem}.{e}")))
        .find(|p| p.is_file())
}

/// Load every stimulus/ground-truth pair under `root`. `blur_sigma` sets
/// the Gaussian used to turn fixation points into a density; pass 0 to
/// scale it from the image width (25 px per 1360-wide page). Samples come
/// back sorted by id, padded and validated.
pub fn load_dataset(root: &Path, blur_sigma: f64) -> Result<Vec<WebpageSample>, DataError> {
    let stim_dir = root.join("stimuli");
    if !stim_dir.is_dir() {
        return Err(DataError::MissingStimuli(root.to_path_buf()));
    }
    let mut stems: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(&stim_dir)? {
        let path = entry?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if matches!(ext.as_deref(), Some("png") | Some("pgm")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                stems.push((stem.to_string(), path.clone()));
            }
        }
    }
    if stems.is_empty() {
        return Err(DataError::EmptyDataset(root.to_path_buf()));
    }
    stems.sort();

    let fixmap_dir = root.join("fixmaps");
    let points_dir = root.join("fixations");
    let mut samples = Vec::with_capacity(stems.len());
    let mut manifest = Vec::with_capacity(stems.len());
    for (stem, stim_path) in &stems {
        let image = imageops::load_image(stim_path).map_err(|e| DataError::Unreadable {
            path: stim_path.clone(),
            source: Box::new(e),
        })?;
        let s = image.shape();
        let sigma = if blur_sigma > 0.0 {
            blur_sigma
        } else {
            imageops::scaled_blur_sigma(s.w)
        };

        // fixation points, when present, provide the binary mask and a
        // fallback density (built while validating their bounds)
        let mut mask = None;
        let mut point_density = None;
        if let Some(pts_path) = find_with_ext(&points_dir, stem, &["txt"]) {
            let points = read_fixation_points(&pts_path)?;
            let density = imageops::fixations_to_saliency(&points, s.h, s.w, sigma).map_err(
                |e| DataError::BadFixations {
                    path: pts_path.clone(),
                    source: Box::new(e),
                },
            )?;
            let mut m = vec![0.0; s.h * s.w];
            for &(x, y) in &points {
                m[y as usize * s.w + x as usize] = 1.0;
            }
            mask = Some(Tensor::from_vec((1, 1, s.h, s.w), m)?);
            point_density = Some(density);
        }

        // a stored grayscale density wins over the point-derived one
        let saliency = if let Some(map_path) = find_with_ext(&fixmap_dir, stem, &["png", "pgm"]) {
            let raw = imageops::load_gray(&map_path).map_err(|e| DataError::Unreadable {
                path: map_path.clone(),
                source: Box::new(e),
            })?;
            let mut data = raw.to_vec();
            let peak = data.iter().cloned().fold(0.0, f64::max);
            if peak > 0.0 {
                for v in data.iter_mut() {
                    *v /= peak;
                }
            }
            Tensor::from_vec(raw.shape(), data)?
        } else if let Some(density) = point_density {
            density
        } else {
            return Err(DataError::MissingPair {
                stem: stem.clone(),
                tried: format!(
                    "{} and {}",
                    fixmap_dir.join(format!("{stem}.(png|pgm)")).display(),
                    points_dir.join(format!("{stem}.txt")).display()
                ),
            });
        };

        let category = guess_category(stem);
        let sample = WebpageSample::prepare(stem, image, saliency, mask, category)?;
        manifest.push(ManifestEntry {
            id: stem.clone(),
            h: s.h,
            w: s.w,
            category,
            checksum: format!("{:016x}", fnv1a64(&std::fs::read(stim_path)?)),
        });
        samples.push(sample);
    }

    // best-effort: a read-only dataset directory should not fail the load
    let manifest_json =
        serde_json::to_string_pretty(&manifest).expect("manifest entries serialize");
    if let Err(e) = std::fs::write(root.join("manifest.json"), manifest_json) {
        eprintln!("note: could not write {}: {e}", root.join("manifest.json").display());
    }
    Ok(samples)
}

/// A deterministic train/test partition, stored as id lists.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub seed: u64,
}

impl DatasetSplit {
    fn pick<'a>(ids: &[String], samples: &'a [WebpageSample]) -> Vec<&'a WebpageSample> {
        ids.iter()
            .filter_map(|id| samples.iter().find(|s| &s.id == id))
            .collect()
    }

    pub fn train_samples<'a>(&self, samples: &'a [WebpageSample]) -> Vec<&'a WebpageSample> {
        Self::pick(&self.train, samples)
    }

    pub fn test_samples<'a>(&self, samples: &'a [WebpageSample]) -> Vec<&'a WebpageSample> {
        Self::pick(&self.test, samples)
    }
}

/// Shuffle ids with the given seed and put the first `train_count` into
/// the train side.
pub fn split_dataset(
    samples: &[WebpageSample],
    train_count: usize,
    seed: u64,
) -> Result<DatasetSplit, DataError> {
    if train_count == 0 || train_count >= samples.len() {
        return Err(DataError::BadTrainCount {
            count: train_count,
            len: samples.len(),
        });
    }
    let mut ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    SplitMix64::new(seed).shuffle(&mut ids);
    let test = ids.split_off(train_count);
    Ok(DatasetSplit {
        train: ids,
        test,
        seed,
    })
}

/// Where the synthesizer put things; bump weights in the ground-truth rule
/// key off these.
#[derive(Clone, Debug)]
pub struct SynthLayout {
    /// (row, col) of the logo block center — the saliency peak.
    pub logo_center: (usize, usize),
    pub card_centers: Vec<(usize, usize)>,
    pub text_center: (usize, usize),
    pub stripe_count: usize,
}

fn fill_rect(plane: &mut [f64], w: usize, y0: usize, x0: usize, rh: usize, rw: usize, v: f64) {
    for i in y0..y0 + rh {
        plane[i * w + x0..i * w + x0 + rw].fill(v);
    }
}

/// Render one webpage-like image plus its rule-based ground truth: header
/// band, nav column, logo block, >= 3 text stripes and >= 1 image card;
/// saliency is a Gaussian-bump mixture (logo 1.0, cards 0.7, first text
/// block 0.5, mild top-left prior), max-normalized. Deterministic per seed.
pub fn synth_webpage_detailed(
    seed: u64,
    h: usize,
    w: usize,
) -> Result<(WebpageSample, SynthLayout), DataError> {
    if h % 16 != 0 || w % 16 != 0 || h < 64 || w < 64 {
        return Err(DataError::BadSynthDims { h, w });
    }
    let mut rng = SplitMix64::new(seed);
    let plane = h * w;
    let mut rgb = vec![0.96; 3 * plane];

    let header_h = h / 8;
    let nav_w = w / 6;
    // pastel header tint
    let tint: Vec<f64> = (0..3).map(|_| 0.72 + 0.2 * rng.next_f64()).collect();
    for (c, t) in tint.iter().enumerate() {
        fill_rect(&mut rgb[c * plane..(c + 1) * plane], w, 0, 0, header_h, w, *t);
    }
    for c in 0..3 {
        fill_rect(
            &mut rgb[c * plane..(c + 1) * plane],
            w,
            header_h,
            0,
            h - header_h,
            nav_w,
            0.88,
        );
    }

    // logo: saturated square in the left half of the header
    let side = (h / 10)
        .max(4)
        .min(header_h.saturating_sub(2).max(2))
        .min(w / 4);
    let ly0 = (header_h - side) / 2;
    let lx0 = 1 + rng.next_below(w / 2 - side - 1);
    let hot = rng.next_below(3);
    for c in 0..3 {
        let v = if c == hot {
            0.75 + 0.2 * rng.next_f64()
        } else {
            0.08 + 0.15 * rng.next_f64()
        };
        fill_rect(&mut rgb[c * plane..(c + 1) * plane], w, ly0, lx0, side, side, v);
    }
    let logo_center = (ly0 + side / 2, lx0 + side / 2);

    // text stripes in the content area
    let content_top = header_h + 2;
    let content_left = nav_w + 2;
    let content_w = w - content_left - 2;
    let stripe_h = (h / 64).max(2);
    let step = 3 * stripe_h;
    let max_fit = (h - content_top - 2) / step;
    let stripe_count = (3 + rng.next_below(4)).min(max_fit).max(3);
    let mut text_center = (content_top + stripe_h / 2, content_left + content_w / 2);
    for k in 0..stripe_count {
        let y0 = content_top + k * step;
        let sw = content_w / 2 + rng.next_below(content_w / 2);
        let shade = 0.12 + 0.15 * rng.next_f64();
        for c in 0..3 {
            fill_rect(
                &mut rgb[c * plane..(c + 1) * plane],
                w,
                y0,
                content_left,
                stripe_h,
                sw.max(8),
                shade,
            );
        }
        if k == 0 {
            text_center = (y0 + stripe_h / 2, content_left + sw.max(8) / 2);
        }
    }

    // image cards: saturated rectangles lower in the content area
    let card_count = 1 + rng.next_below(3);
    let ch = (h / 5).max(8);
    let cw = (w / 5).max(8);
    let mut card_centers = Vec::with_capacity(card_count);
    for _ in 0..card_count {
        let span_y = h - content_top - ch - 1;
        let span_x = w - content_left - cw - 1;
        let y0 = content_top + span_y / 3 + rng.next_below(span_y - span_y / 3 + 1);
        let x0 = content_left + rng.next_below(span_x + 1);
        let hot = rng.next_below(3);
        for c in 0..3 {
            let v = if c == hot {
                0.6 + 0.35 * rng.next_f64()
            } else {
                0.15 + 0.3 * rng.next_f64()
            };
            fill_rect(&mut rgb[c * plane..(c + 1) * plane], w, y0, x0, ch, cw, v);
        }
        card_centers.push((y0 + ch / 2, x0 + cw / 2));
    }

    // ground truth: weighted Gaussian bumps + a mild top-left prior; bumps
    // combine by max so overlapping cards can never outweigh the logo
    let sigma = (h.min(w) as f64) / 16.0;
    let two_s2 = 2.0 * sigma * sigma;
    let bump = |sal: &mut [f64], (cy, cx): (usize, usize), weight: f64| {
        for i in 0..h {
            for j in 0..w {
                let dy = i as f64 - cy as f64;
                let dx = j as f64 - cx as f64;
                let v = weight * (-(dy * dy + dx * dx) / two_s2).exp();
                let cell = &mut sal[i * w + j];
                *cell = cell.max(v);
            }
        }
    };
    let mut sal = vec![0.0; plane];
    bump(&mut sal, logo_center, 1.0);
    for &c in &card_centers {
        bump(&mut sal, c, 0.7);
    }
    bump(&mut sal, text_center, 0.5);
    let (ph2, pw2) = ((h as f64 / 2.0).powi(2), (w as f64 / 2.0).powi(2));
    for i in 0..h {
        for j in 0..w {
            let prior = (-(i as f64 * i as f64) / (2.0 * ph2) - (j as f64 * j as f64) / (2.0 * pw2))
                .exp();
            sal[i * w + j] += 0.1 * prior;
        }
    }
    let peak = sal.iter().cloned().fold(0.0, f64::max);
    for v in sal.iter_mut() {
        *v /= peak;
    }

    let mut mask = vec![0.0; plane];
    mask[logo_center.0 * w + logo_center.1] = 1.0;
    for &(cy, cx) in &card_centers {
        mask[cy * w + cx] = 1.0;
    }
    mask[text_center.0 * w + text_center.1] = 1.0;
    // the saliency peak sits at the logo and normalization pins it to 1,
    // satisfying the fixation/max invariant exactly
    let peak_idx = sal
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    sal[peak_idx] = 1.0;

    let layout = SynthLayout {
        logo_center,
        card_centers,
        text_center,
        stripe_count,
    };
    let sample = WebpageSample::prepare(
        &format!("synthetic_{seed:04}"),
        Tensor::from_vec((1, 3, h, w), rgb)?,
        Tensor::from_vec((1, 1, h, w), sal)?,
        Some(Tensor::from_vec((1, 1, h, w), mask)?),
        Category::Synthetic,
    )?;
    Ok((sample, layout))
}

/// [`synth_webpage_detailed`] without the layout report.
pub fn synth_webpage(seed: u64, h: usize, w: usize) -> Result<WebpageSample, DataError> {
    Ok(synth_webpage_detailed(seed, h, w)?.0)
}

/// One minibatch: samples padded (reflect) to the batch max dims and
/// stacked along n.
pub struct Batch {
    pub ids: Vec<String>,
    pub images: Tensor,
    pub saliency: Tensor,
}

/// Deterministic epoch batching: shuffle with `seed ^ epoch`, chunk, keep
/// the final partial batch.
pub fn batch_iter(
    samples: &[WebpageSample],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>, DataError> {
    if batch_size == 0 {
        return Err(DataError::BadBatchSize);
    }
    if samples.is_empty() {
        return Err(DataError::EmptySplit);
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    SplitMix64::new(seed ^ epoch).shuffle(&mut order);

    let mut batches = Vec::new();
    for chunk in order.chunks(batch_size) {
        let bh = chunk.iter().map(|&i| samples[i].image.shape().h).max().unwrap();
        let bw = chunk.iter().map(|&i| samples[i].image.shape().w).max().unwrap();
        let n = chunk.len();
        let mut ids = Vec::with_capacity(n);
        let mut images = Vec::with_capacity(n * 3 * bh * bw);
        let mut sal = Vec::with_capacity(n * bh * bw);
        for &i in chunk {
            let s = &samples[i];
            ids.push(s.id.clone());
            images.extend_from_slice(&pad_reflect_to(&s.image, bh, bw)?.to_vec());
            sal.extend_from_slice(&pad_reflect_to(&s.saliency, bh, bw)?.to_vec());
        }
        batches.push(Batch {
            ids,
            images: Tensor::from_vec((n, 3, bh, bw), images)?,
            saliency: Tensor::from_vec((n, 1, bh, bw), sal)?,
        });
    }
    Ok(batches)
}

/// Render `count` synthetic pages (64x64, seeds `seed..seed+count`).
pub fn synth_set(seed: u64, count: usize) -> Result<Vec<WebpageSample>, DataError> {
    (0..count)
        .map(|k| synth_webpage(seed + k as u64, 64, 64))
        .collect()
}

/// Format a split as a short human-readable summary line.
pub fn describe_split(split: &DatasetSplit) -> String {
    let mut out = String::new();
    let _ = write!(
        out,
        "train {} / test {} (seed {})",
        split.train.len(),
        split.test.len(),
        split.seed
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn padding_targets_next_sixteen() {
        assert_eq!(next_multiple_of_16(1366), 1376);
        assert_eq!(next_multiple_of_16(768), 768);
        assert_eq!(next_multiple_of_16(1), 16);
    }

    #[test]
    fn pad_then_crop_round_trips() {
        let mut rng = SplitMix64::new(3);
        let data: Vec<f64> = (0..3 * 5 * 7).map(|_| rng.next_f64()).collect();
        let t = Tensor::from_vec((1, 3, 5, 7), data.clone()).unwrap();
        let padded = pad_reflect_to(&t, 16, 16).unwrap();
        assert_eq!(padded.shape(), Shape::new(1, 3, 16, 16));
        let back = crop_to(&padded, 5, 7).unwrap();
        assert_eq!(back.to_vec(), data);
    }

    #[test]
    fn reflect_padding_mirrors_the_edge() {
        let t = Tensor::from_vec((1, 1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let p = pad_reflect_to(&t, 1, 6).unwrap();
        // reflection of [1 2 3] continues 2 1 1 at symmetric boundaries
        assert_eq!(p.to_vec(), vec![1.0, 2.0, 3.0, 3.0, 2.0, 1.0]);
    }

    #[test]
    fn synth_is_deterministic_and_valid() {
        let a = synth_webpage(9, 64, 64).unwrap();
        let b = synth_webpage(9, 64, 64).unwrap();
        assert_eq!(a.image.to_vec(), b.image.to_vec());
        assert_eq!(a.saliency.to_vec(), b.saliency.to_vec());
        a.validate().unwrap();

        let c = synth_webpage(10, 64, 64).unwrap();
        assert_ne!(a.image.to_vec(), c.image.to_vec());

        assert!(matches!(
            synth_webpage(1, 60, 64),
            Err(DataError::BadSynthDims { .. })
        ));
    }

    #[test]
    fn synth_peak_is_the_logo() {
        for seed in 1..=10 {
            let (sample, layout) = synth_webpage_detailed(seed, 64, 96).unwrap();
            let sal = sample.saliency.to_vec();
            let w = sample.saliency.shape().w;
            let (mut best, mut best_v) = (0, f64::MIN);
            for (i, &v) in sal.iter().enumerate() {
                if v > best_v {
                    best = i;
                    best_v = v;
                }
            }
            assert_eq!(
                (best / w, best % w),
                layout.logo_center,
                "seed {seed}: peak away from logo"
            );
            assert!(layout.stripe_count >= 3);
            assert!(!layout.card_centers.is_empty());
        }
    }

    #[test]
    fn split_is_deterministic_and_partitioning() {
        let samples = synth_set(1, 10).unwrap();
        let s1 = split_dataset(&samples, 7, 42).unwrap();
        let s2 = split_dataset(&samples, 7, 42).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(s1.train.len(), 7);
        assert_eq!(s1.test.len(), 3);
        let mut all: Vec<&String> = s1.train.iter().chain(&s1.test).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 10);

        let s3 = split_dataset(&samples, 7, 43).unwrap();
        assert_ne!(s1.train, s3.train);

        assert!(matches!(
            split_dataset(&samples, 10, 1),
            Err(DataError::BadTrainCount { .. })
        ));
    }

    #[test]
    fn batches_partition_and_reshuffle() {
        let samples = synth_set(5, 10).unwrap();
        let b0 = batch_iter(&samples, 4, 7, 0).unwrap();
        assert_eq!(
            b0.iter().map(|b| b.ids.len()).collect::<Vec<_>>(),
            vec![4, 4, 2]
        );
        assert_eq!(b0[0].images.shape(), Shape::new(4, 3, 64, 64));
        assert_eq!(b0[0].saliency.shape(), Shape::new(4, 1, 64, 64));

        let b0_again = batch_iter(&samples, 4, 7, 0).unwrap();
        let order = |bs: &[Batch]| {
            bs.iter()
                .flat_map(|b| b.ids.clone())
                .collect::<Vec<String>>()
        };
        assert_eq!(order(&b0), order(&b0_again));
        let b1 = batch_iter(&samples, 4, 7, 1).unwrap();
        assert_ne!(order(&b0), order(&b1));

        assert!(matches!(
            batch_iter(&[], 4, 7, 0),
            Err(DataError::EmptySplit)
        ));
    }

    #[test]
    fn mixed_size_batch_pads_to_the_largest() {
        let small = synth_webpage(1, 64, 64).unwrap();
        let large = synth_webpage(2, 96, 128).unwrap();
        let batches = batch_iter(&[small, large], 2, 1, 0).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].images.shape(), Shape::new(2, 3, 96, 128));
    }

    #[test]
    fn loader_round_trips_a_synthetic_directory() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("stimuli")).unwrap();
        std::fs::create_dir_all(root.join("fixations")).unwrap();
        for k in 0..3 {
            let sample = synth_webpage(100 + k, 64, 64).unwrap();
            imageops::save_rgb(
                &sample.image,
                &root.join(format!("stimuli/page{k}.png")),
            )
            .unwrap();
            std::fs::write(
                root.join(format!("fixations/page{k}.txt")),
                "10 12\n40 30\n20 50\n",
            )
            .unwrap();
        }
        let samples = load_dataset(root, 4.0).unwrap();
        assert_eq!(samples.len(), 3);
        for s in &samples {
            assert_eq!(s.image.shape().h % 16, 0);
            assert!(s.fixation_mask.is_some());
            s.validate().unwrap();
        }
        assert!(root.join("manifest.json").is_file());
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(root.join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest.as_array().unwrap().len(), 3);
    }

    #[test]
    fn loader_reports_missing_and_bad_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("stimuli")).unwrap();
        let img = synth_webpage(1, 64, 64).unwrap().image;
        imageops::save_rgb(&img, &root.join("stimuli/lonely.png")).unwrap();
        match load_dataset(root, 4.0) {
            Err(DataError::MissingPair { stem, .. }) => assert_eq!(stem, "lonely"),
            other => panic!("expected MissingPair, got {other:?}"),
        }

        std::fs::create_dir_all(root.join("fixations")).unwrap();
        std::fs::write(root.join("fixations/lonely.txt"), "10 999\n").unwrap();
        match load_dataset(root, 4.0) {
            Err(DataError::BadFixations { source, .. }) => {
                assert!(source.to_string().contains("(10,999)"));
            }
            other => panic!("expected BadFixations, got {other:?}"),
        }

        std::fs::write(root.join("fixations/lonely.txt"), "10 zebra\n").unwrap();
        assert!(matches!(
            load_dataset(root, 4.0),
            Err(DataError::BadFixationLine { line: 1, .. })
        ));
    }

    #[test]
    fn fixmap_ground_truth_is_normalized() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        std::fs::create_dir_all(root.join("stimuli")).unwrap();
        std::fs::create_dir_all(root.join("fixmaps")).unwrap();
        let sample = synth_webpage(3, 64, 64).unwrap();
        imageops::save_rgb(&sample.image, &root.join("stimuli/a.png")).unwrap();
        imageops::save_gray(&sample.saliency.scale(0.5), &root.join("fixmaps/a.png")).unwrap();
        let loaded = load_dataset(root, 0.0).unwrap();
        let peak = loaded[0]
            .saliency
            .to_vec()
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        assert_eq!(peak, 1.0);
        assert!(loaded[0].fixation_mask.is_none());
    }
}
