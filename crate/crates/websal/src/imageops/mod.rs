//! Classical image processing: Laplacian-of-Gaussian outline extraction,
//! area-average resampling, fixation-map construction, and file I/O.
//!
//! Everything here is plain f64 arithmetic on tensor data — no gradients.
//! Outline maps are prepared per batch and fed to the decoder as constants.

mod io;

pub use io::{load_gray, load_image, save_gray, save_heatmap, save_rgb};

use std::path::PathBuf;

use crate::tensor::{Shape, Tensor, TensorError};

#[derive(Debug, thiserror::Error)]
pub enum ImageOpsError {
    #[error("sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("kernel radius must be >= 1, got {0}")]
    BadRadius(i64),
    #[error("downsample target {th}x{tw} is invalid for {h}x{w} source (must be 1..=source)")]
    BadTarget {
        th: usize,
        tw: usize,
        h: usize,
        w: usize,
    },
    #[error("fixation points outside the {w}x{h} image: {points}")]
    OutOfBoundsPoints { w: usize, h: usize, points: String },
    #[error("{path}: unsupported image format (8-bit PNG and binary PGM only)")]
    UnsupportedFormat { path: PathBuf },
    #[error("{path}: {detail}")]
    CorruptFile { path: PathBuf, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Edge maps downsampled to each decoder resolution, deepest first.
pub struct OutlinePyramid {
    pub levels: Vec<Tensor>,
    pub sigma: f64,
}

/// Mirror an out-of-range index back into `[0, n)` (edge pixels repeat).
pub(crate) fn reflect_index(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    debug_assert!(n > 0);
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Laplacian-of-Gaussian kernel sampled on the integer grid
/// `[-radius, radius]^2` and shifted to zero mean, so constant regions
/// respond with exactly 0.
pub fn log_kernel(sigma: f64, radius: i64) -> Result<Tensor, ImageOpsError> {
    if sigma <= 0.0 {
        return Err(ImageOpsError::NonPositiveSigma(sigma));
    }
    if radius < 1 {
        return Err(ImageOpsError::BadRadius(radius));
    }
    let side = (2 * radius + 1) as usize;
    let mut k = Vec::with_capacity(side * side);
    let s2 = sigma * sigma;
    let norm = -1.0 / (std::f64::consts::PI * s2 * s2);
    for y in -radius..=radius {
        for x in -radius..=radius {
            let r2 = (x * x + y * y) as f64;
            k.push(norm * (1.0 - r2 / (2.0 * s2)) * (-r2 / (2.0 * s2)).exp());
        }
    }
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    for v in k.iter_mut() {
        *v -= mean;
    }
    Ok(Tensor::from_vec(Shape::new(1, 1, side, side), k)?)
}

/// Default kernel radius for a given sigma: three standard deviations,
/// rounded up.
pub fn default_radius(sigma: f64) -> i64 {
    (3.0 * sigma).ceil() as i64
}

/// BT.601 luma of an RGB image.
fn luma(image: &Tensor) -> Result<Vec<f64>, ImageOpsError> {
    let s = image.shape();
    if s.c != 3 {
        return Err(ImageOpsError::Tensor(TensorError::ShapeMismatch {
            op: "extract_outline",
            detail: format!("expected a 3-channel image, got {}", s),
        }));
    }
    let plane = s.h * s.w;
    Ok(image.with_data(|d| {
        let mut out = vec![0.0; s.n * plane];
        for n in 0..s.n {
            let r = n * 3 * plane;
            let (g, b) = (r + plane, r + 2 * plane);
            for i in 0..plane {
                out[n * plane + i] = 0.299 * d[r + i] + 0.587 * d[g + i] + 0.114 * d[b + i];
            }
        }
        out
    }))
}

/// Raw (signed) LoG response of an RGB image, before rectification and
/// normalization. Reflect padding at the borders. Adding a constant to all
/// channels leaves this unchanged because the kernel has zero mean.
pub fn outline_response(image: &Tensor, sigma: f64) -> Result<Tensor, ImageOpsError> {
    let s = image.shape();
    let gray = luma(image)?;
    let radius = default_radius(sigma);
    let kernel = log_kernel(sigma, radius)?;
    let side = (2 * radius + 1) as usize;
    let plane = s.h * s.w;
    let mut out = vec![0.0; s.n * plane];
    kernel.with_data(|k| {
        for n in 0..s.n {
            let base = n * plane;
            for y in 0..s.h {
                for x in 0..s.w {
                    let mut acc = 0.0;
                    for ky in 0..side {
                        let sy = reflect_index(y as i64 + ky as i64 - radius, s.h);
                        for kx in 0..side {
                            let sx = reflect_index(x as i64 + kx as i64 - radius, s.w);
                            acc += k[ky * side + kx] * gray[base + sy * s.w + sx];
                        }
                    }
                    out[base + y * s.w + x] = acc;
                }
            }
        }
    });
    Ok(Tensor::from_vec(Shape::new(s.n, 1, s.h, s.w), out)?)
}

/// Rescale each sample of a single-channel map to [0,1] by min-max;
/// constant samples become all zeros.
fn minmax_per_sample(data: &mut [f64], n: usize) {
    let per = data.len() / n.max(1);
    for i in 0..n {
        let chunk = &mut data[i * per..(i + 1) * per];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in chunk.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if hi > lo {
            let inv = 1.0 / (hi - lo);
            for v in chunk.iter_mut() {
                *v = (*v - lo) * inv;
            }
        } else {
            chunk.fill(0.0);
        }
    }
}

/// Outline map of an RGB image: |LoG response|, min-max normalized to
/// [0,1] per sample. Constant images map to all zeros.
pub fn extract_outline(image: &Tensor, sigma: f64) -> Result<Tensor, ImageOpsError> {
    let resp = outline_response(image, sigma)?;
    let s = resp.shape();
    let mut data = resp.to_vec();
    for v in data.iter_mut() {
        *v = v.abs();
    }
    minmax_per_sample(&mut data, s.n);
    Ok(Tensor::from_vec(s, data)?)
}

/// Area-average downsampling with fractional bins. Each target pixel
/// averages the source region it covers, so the global mean is preserved
/// when the target dims divide the source dims, and [0,1] inputs stay in
/// [0,1].
pub fn downsample(map: &Tensor, target_h: usize, target_w: usize) -> Result<Tensor, ImageOpsError> {
    let s = map.shape();
    if target_h < 1 || target_w < 1 || target_h > s.h || target_w > s.w {
        return Err(ImageOpsError::BadTarget {
            th: target_h,
            tw: target_w,
            h: s.h,
            w: s.w,
        });
    }
    if target_h == s.h && target_w == s.w {
        return Ok(Tensor::from_vec(s, map.to_vec())?);
    }
    let out_shape = Shape::new(s.n, s.c, target_h, target_w);
    let mut out = vec![0.0; out_shape.len()];
    let ry = s.h as f64 / target_h as f64;
    let rx = s.w as f64 / target_w as f64;
    map.with_data(|d| {
        let mut o = 0;
        for nc in 0..s.n * s.c {
            let base = nc * s.h * s.w;
            for ty in 0..target_h {
                let y0 = ty as f64 * ry;
                let y1 = (ty + 1) as f64 * ry;
                for tx in 0..target_w {
                    let x0 = tx as f64 * rx;
                    let x1 = (tx + 1) as f64 * rx;
                    let mut acc = 0.0;
                    let mut sy = y0.floor() as usize;
                    while (sy as f64) < y1 {
                        let wy = y1.min((sy + 1) as f64) - y0.max(sy as f64);
                        if wy > 0.0 {
                            let row = base + sy.min(s.h - 1) * s.w;
                            let mut sx = x0.floor() as usize;
                            while (sx as f64) < x1 {
                                let wx = x1.min((sx + 1) as f64) - x0.max(sx as f64);
                                if wx > 0.0 {
                                    acc += wy * wx * d[row + sx.min(s.w - 1)];
                                }
                                sx += 1;
                            }
                        }
                        sy += 1;
                    }
                    out[o] = acc / (ry * rx);
                    o += 1;
                }
            }
        }
    });
    Ok(Tensor::from_vec(out_shape, out)?)
}

/// Build the outline pyramid for a batch of images: one level per decoder
/// resolution (dims supplied by the caller, deepest first), each min-max
/// normalized to [0,1].
pub fn outline_pyramid(
    image: &Tensor,
    sigma: f64,
    level_dims: &[(usize, usize)],
) -> Result<OutlinePyramid, ImageOpsError> {
    let full = extract_outline(image, sigma)?;
    let n = full.shape().n;
    let mut levels = Vec::with_capacity(level_dims.len());
    for &(h, w) in level_dims {
        let level = downsample(&full, h, w)?;
        let mut data = level.to_vec();
        minmax_per_sample(&mut data, n);
        levels.push(Tensor::from_vec(level.shape(), data)?);
    }
    Ok(OutlinePyramid { levels, sigma })
}

/// Gaussian fixation density: impulses at the given (x, y) points, blurred
/// with `sigma_blur`, then scaled so the maximum is exactly 1. An empty
/// point list yields the all-zero map.
pub fn fixations_to_saliency(
    points: &[(i64, i64)],
    h: usize,
    w: usize,
    sigma_blur: f64,
) -> Result<Tensor, ImageOpsError> {
    if sigma_blur <= 0.0 {
        return Err(ImageOpsError::NonPositiveSigma(sigma_blur));
    }
    let bad: Vec<String> = points
        .iter()
        .filter(|&&(x, y)| x < 0 || y < 0 || x >= w as i64 || y >= h as i64)
        .map(|&(x, y)| format!("({x},{y})"))
        .collect();
    if !bad.is_empty() {
        return Err(ImageOpsError::OutOfBoundsPoints {
            w,
            h,
            points: bad.join(", "),
        });
    }
    let mut map = vec![0.0; h * w];
    for &(x, y) in points {
        map[y as usize * w + x as usize] += 1.0;
    }
    if !points.is_empty() {
        map = gaussian_blur(&map, h, w, sigma_blur);
        let peak = map.iter().cloned().fold(0.0, f64::max);
        if peak > 0.0 {
            for v in map.iter_mut() {
                *v /= peak;
            }
        }
    }
    Ok(Tensor::from_vec(Shape::new(1, 1, h, w), map)?)
}

/// Blur sigma matching ~1 degree of visual angle: 25 px at 1360-wide
/// stimuli, scaled proportionally for other widths.
pub fn scaled_blur_sigma(width: usize) -> f64 {
    25.0 * width as f64 / 1360.0
}

/// Separable truncated-Gaussian blur with zero padding.
fn gaussian_blur(map: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for d in -radius..=radius {
        kernel.push((-(d * d) as f64 / (2.0 * sigma * sigma)).exp());
    }
    let total: f64 = kernel.iter().sum();
    for v in kernel.iter_mut() {
        *v /= total;
    }
    // rows
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let sx = x as i64 + i as i64 - radius;
                if sx >= 0 && sx < w as i64 {
                    acc += k * map[y * w + sx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    // columns
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, k) in kernel.iter().enumerate() {
                let sy = y as i64 + i as i64 - radius;
                if sy >= 0 && sy < h as i64 {
                    acc += k * tmp[sy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_kernel_sums_to_zero_and_is_symmetric() {
        let k = log_kernel(2.0, 6).unwrap();
        let d = k.to_vec();
        assert!(d.iter().sum::<f64>().abs() < 1e-12);
        let side = 13;
        for i in 0..side {
            for j in 0..side {
                assert_eq!(d[i * side + j], d[j * side + i]);
                assert_eq!(d[i * side + j], d[(side - 1 - i) * side + j]);
            }
        }
    }

    #[test]
    fn log_kernel_matches_closed_form_before_shift() {
        // independently sample the closed form, then apply the mean shift
        let (sigma, radius) = (1.0f64, 3i64);
        let mut expect = Vec::new();
        for y in -radius..=radius {
            for x in -radius..=radius {
                let r2 = (x * x + y * y) as f64;
                let s2 = sigma * sigma;
                expect.push(
                    -1.0 / (std::f64::consts::PI * s2 * s2)
                        * (1.0 - r2 / (2.0 * s2))
                        * (-r2 / (2.0 * s2)).exp(),
                );
            }
        }
        let center = expect[expect.len() / 2];
        assert!((center - (-1.0 / std::f64::consts::PI)).abs() < 1e-10);
        let mean = expect.iter().sum::<f64>() / expect.len() as f64;
        let got = log_kernel(sigma, radius).unwrap().to_vec();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - (e - mean)).abs() < 1e-15);
        }
    }

    #[test]
    fn log_kernel_rejects_bad_args() {
        assert!(matches!(
            log_kernel(0.0, 3),
            Err(ImageOpsError::NonPositiveSigma(_))
        ));
        assert!(matches!(log_kernel(1.0, 0), Err(ImageOpsError::BadRadius(0))));
    }

    #[test]
    fn constant_image_has_zero_outline() {
        let img = Tensor::full((1, 3, 20, 20), 0.4);
        let out = extract_outline(&img, 2.0).unwrap();
        assert!(out.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn outline_response_ignores_constant_offsets() {
        let mut base = vec![0.0; 3 * 24 * 24];
        let mut rng = crate::rng::SplitMix64::new(11);
        for v in base.iter_mut() {
            *v = rng.next_f64() * 0.5;
        }
        let a = Tensor::from_vec((1, 3, 24, 24), base.clone()).unwrap();
        let shifted: Vec<f64> = base.iter().map(|v| v + 0.25).collect();
        let b = Tensor::from_vec((1, 3, 24, 24), shifted).unwrap();
        let ra = outline_response(&a, 2.0).unwrap().to_vec();
        let rb = outline_response(&b, 2.0).unwrap().to_vec();
        for (x, y) in ra.iter().zip(&rb) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn step_edge_response_peaks_on_the_edge() {
        // vertical step at column 10 in a 20-wide image
        let (h, w) = (16, 20);
        let mut img = vec![0.0; 3 * h * w];
        for c in 0..3 {
            for y in 0..h {
                for x in 10..w {
                    img[(c * h + y) * w + x] = 1.0;
                }
            }
        }
        let t = Tensor::from_vec((1, 3, h, w), img).unwrap();
        let out = extract_outline(&t, 1.0).unwrap();
        let d = out.to_vec();
        // column energy should peak adjacent to the step
        let col_energy: Vec<f64> = (0..w)
            .map(|x| (0..h).map(|y| d[y * w + x]).sum())
            .collect();
        let argmax = col_energy
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(
            argmax == 9 || argmax == 10,
            "edge response peaked at column {argmax}"
        );
        // and decay away from the edge
        assert!(col_energy[3] < col_energy[9]);
        assert!(col_energy[16] < col_energy[10]);
    }

    #[test]
    fn downsample_identity_and_block_averages() {
        let m = Tensor::from_vec((1, 1, 4, 4), (0..16).map(|v| v as f64).collect()).unwrap();
        assert_eq!(downsample(&m, 4, 4).unwrap().to_vec(), m.to_vec());

        let ones = Tensor::full((1, 1, 4, 4), 1.0);
        assert_eq!(downsample(&ones, 2, 2).unwrap().to_vec(), vec![1.0; 4]);

        // checkerboard averages to one half
        let mut cb = vec![0.0; 16];
        for y in 0..4 {
            for x in 0..4 {
                cb[y * 4 + x] = ((x + y) % 2) as f64;
            }
        }
        let cbt = Tensor::from_vec((1, 1, 4, 4), cb).unwrap();
        let down = downsample(&cbt, 2, 2).unwrap().to_vec();
        for v in down {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn downsample_preserves_mean_on_integer_factors() {
        let mut rng = crate::rng::SplitMix64::new(3);
        let data: Vec<f64> = (0..12 * 8).map(|_| rng.next_f64()).collect();
        let src_mean = data.iter().sum::<f64>() / data.len() as f64;
        let m = Tensor::from_vec((1, 1, 12, 8), data).unwrap();
        let d = downsample(&m, 3, 4).unwrap().to_vec();
        let dst_mean = d.iter().sum::<f64>() / d.len() as f64;
        assert!((src_mean - dst_mean).abs() < 1e-10);
    }

    #[test]
    fn downsample_rejects_upscaling() {
        let m = Tensor::zeros((1, 1, 4, 4));
        assert!(matches!(
            downsample(&m, 8, 4),
            Err(ImageOpsError::BadTarget { .. })
        ));
        assert!(matches!(
            downsample(&m, 0, 4),
            Err(ImageOpsError::BadTarget { .. })
        ));
    }

    #[test]
    fn fixation_map_peaks_at_the_point() {
        let m = fixations_to_saliency(&[(8, 8)], 17, 17, 2.0).unwrap();
        let d = m.to_vec();
        let peak = d
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        assert_eq!(peak.0, 8 * 17 + 8);
        assert!((peak.1 - 1.0).abs() < 1e-12);
        // radially decreasing along a row
        assert!(d[8 * 17 + 9] > d[8 * 17 + 11]);
        assert!(d[8 * 17 + 11] > d[8 * 17 + 14]);
    }

    #[test]
    fn two_distant_points_give_two_maxima() {
        let m = fixations_to_saliency(&[(3, 3), (20, 20)], 24, 24, 1.0).unwrap();
        let d = m.to_vec();
        let at = |x: usize, y: usize| d[y * 24 + x];
        // both point locations are local maxima of equal height 1
        assert!((at(3, 3) - 1.0).abs() < 1e-9);
        assert!((at(20, 20) - 1.0).abs() < 1e-9);
        assert!(at(3, 3) > at(4, 3) && at(3, 3) > at(3, 4));
        assert!(at(20, 20) > at(19, 20) && at(20, 20) > at(20, 19));
    }

    #[test]
    fn empty_fixations_give_zero_map() {
        let m = fixations_to_saliency(&[], 8, 8, 2.0).unwrap();
        assert!(m.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn out_of_bounds_points_are_listed() {
        let err = fixations_to_saliency(&[(2, 2), (9, 1), (-1, 0)], 8, 8, 2.0).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(9,1)") && msg.contains("(-1,0)"));
        assert!(!msg.contains("(2,2)"));
    }

    #[test]
    fn reflect_index_mirrors() {
        assert_eq!(reflect_index(-1, 5), 0);
        assert_eq!(reflect_index(-2, 5), 1);
        assert_eq!(reflect_index(5, 5), 4);
        assert_eq!(reflect_index(6, 5), 3);
        assert_eq!(reflect_index(2, 5), 2);
    }
}
