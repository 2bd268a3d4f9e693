//! Image file reading and writing: 8-bit PNG (via the `image` crate) and
//! binary PGM (P5, hand-parsed), plus heatmap overlays.

use std::fs;
use std::path::Path;
use std::sync::LazyLock;

use image::{GrayImage, ImageFormat, ImageReader, RgbImage};

use super::ImageOpsError;
use crate::tensor::{Shape, Tensor};

/// Red-yellow heatmap ramp: black at 0, pure red at 0.5, yellow at 1.
static COLORMAP: LazyLock<[[u8; 3]; 256]> = LazyLock::new(|| {
    let mut table = [[0u8; 3]; 256];
    for (i, entry) in table.iter_mut().enumerate() {
        let t = i as f64 / 255.0;
        let (r, g) = if t <= 0.5 {
            (2.0 * t, 0.0)
        } else {
            (1.0, 2.0 * t - 1.0)
        };
        *entry = [(r * 255.0).round() as u8, (g * 255.0).round() as u8, 0];
    }
    table
});

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case(ext))
        .unwrap_or(false)
}

fn io_err(path: &Path, source: std::io::Error) -> ImageOpsError {
    ImageOpsError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(path: &Path, detail: impl Into<String>) -> ImageOpsError {
    ImageOpsError::CorruptFile {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

/// Binary PGM (P5) with maxval <= 255. Header tokens may be separated by
/// any whitespace; `#` comments are skipped.
fn load_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>), ImageOpsError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(corrupt(path, "missing P5 magic"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3]; // width, height, maxval
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(corrupt(path, "truncated header"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| corrupt(path, "bad header number"))?;
    }
    let [w, h, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(corrupt(path, format!("maxval {maxval} out of range (1-255)")));
    }
    if w == 0 || h == 0 {
        return Err(corrupt(path, "zero dimension"));
    }
    // exactly one whitespace byte separates header and payload
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(corrupt(path, "missing header terminator"));
    }
    pos += 1;
    if bytes.len() - pos < w * h {
        return Err(corrupt(
            path,
            format!("payload has {} bytes, needs {}", bytes.len() - pos, w * h),
        ));
    }
    let mut data = bytes[pos..pos + w * h].to_vec();
    if maxval != 255 {
        for v in data.iter_mut() {
            *v = ((*v as usize * 255) / maxval).min(255) as u8;
        }
    }
    Ok((h, w, data))
}

fn save_pgm(path: &Path, h: usize, w: usize, data: &[u8]) -> Result<(), ImageOpsError> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(data);
    fs::write(path, out).map_err(|e| io_err(path, e))
}

fn decode_png(path: &Path) -> Result<image::DynamicImage, ImageOpsError> {
    ImageReader::open(path)
        .map_err(|e| io_err(path, e))?
        .decode()
        .map_err(|e| corrupt(path, e.to_string()))
}

/// Load a color image as (1, 3, h, w) with values in [0,1]. PNG loads its
/// RGB channels (alpha dropped); PGM replicates gray across channels.
pub fn load_image(path: &Path) -> Result<Tensor, ImageOpsError> {
    if has_ext(path, "pgm") {
        let (h, w, gray) = load_pgm(path)?;
        let plane: Vec<f64> = gray.iter().map(|&v| v as f64 / 255.0).collect();
        let mut data = Vec::with_capacity(3 * h * w);
        for _ in 0..3 {
            data.extend_from_slice(&plane);
        }
        return Ok(Tensor::from_vec(Shape::new(1, 3, h, w), data)?);
    }
    if !has_ext(path, "png") {
        return Err(ImageOpsError::UnsupportedFormat {
            path: path.to_path_buf(),
        });
    }
    let rgb = decode_png(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.into_raw();
    let plane = h * w;
    let mut data = vec![0.0; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            data[c * plane + i] = raw[3 * i + c] as f64 / 255.0;
        }
    }
    Ok(Tensor::from_vec(Shape::new(1, 3, h, w), data)?)
}

/// Load a grayscale map as (1, 1, h, w) in [0,1].
pub fn load_gray(path: &Path) -> Result<Tensor, ImageOpsError> {
    if has_ext(path, "pgm") {
        let (h, w, gray) = load_pgm(path)?;
        let data: Vec<f64> = gray.iter().map(|&v| v as f64 / 255.0).collect();
        return Ok(Tensor::from_vec(Shape::new(1, 1, h, w), data)?);
    }
    if !has_ext(path, "png") {
        return Err(ImageOpsError::UnsupportedFormat {
            path: path.to_path_buf(),
        });
    }
    let gray = decode_png(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    let data: Vec<f64> = gray.into_raw().iter().map(|&v| v as f64 / 255.0).collect();
    Ok(Tensor::from_vec(Shape::new(1, 1, h, w), data)?)
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Save the first sample of a single-channel map as PNG or PGM (by
/// extension), clamping to [0,1].
pub fn save_gray(map: &Tensor, path: &Path) -> Result<(), ImageOpsError> {
    let s = map.shape();
    let plane = s.h * s.w;
    let bytes: Vec<u8> = map.with_data(|d| d[..plane].iter().map(|&v| quantize(v)).collect());
    if has_ext(path, "pgm") {
        return save_pgm(path, s.h, s.w, &bytes);
    }
    if !has_ext(path, "png") {
        return Err(ImageOpsError::UnsupportedFormat {
            path: path.to_path_buf(),
        });
    }
    let img = GrayImage::from_raw(s.w as u32, s.h as u32, bytes)
        .expect("buffer sized from shape");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| corrupt(path, e.to_string()))
}

/// Save an RGB tensor (first sample) as PNG.
pub fn save_rgb(image: &Tensor, path: &Path) -> Result<(), ImageOpsError> {
    let s = image.shape();
    let plane = s.h * s.w;
    let bytes: Vec<u8> = image.with_data(|d| {
        let mut out = Vec::with_capacity(3 * plane);
        for i in 0..plane {
            for c in 0..3 {
                out.push(quantize(d[c * plane + i]));
            }
        }
        out
    });
    let img = RgbImage::from_raw(s.w as u32, s.h as u32, bytes)
        .expect("buffer sized from shape");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| corrupt(path, e.to_string()))
}

/// Alpha-blend a red-yellow rendering of `map` over the stimulus at weight
/// 0.5 and save as PNG. Shapes must agree on (h, w).
pub fn save_heatmap(map: &Tensor, base: &Tensor, path: &Path) -> Result<(), ImageOpsError> {
    let (ms, bs) = (map.shape(), base.shape());
    if (ms.h, ms.w) != (bs.h, bs.w) {
        return Err(ImageOpsError::Tensor(
            crate::tensor::TensorError::ShapeMismatch {
                op: "save_heatmap",
                detail: format!("map {} and stimulus {} disagree on (h,w)", ms, bs),
            },
        ));
    }
    let plane = ms.h * ms.w;
    let bytes: Vec<u8> = map.with_data(|m| {
        base.with_data(|b| {
            let mut out = Vec::with_capacity(3 * plane);
            for i in 0..plane {
                let color = COLORMAP[quantize(m[i]) as usize];
                for c in 0..3 {
                    let blended = 0.5 * b[c * plane + i].clamp(0.0, 1.0)
                        + 0.5 * color[c] as f64 / 255.0;
                    out.push(quantize(blended));
                }
            }
            out
        })
    });
    let img = RgbImage::from_raw(ms.w as u32, ms.h as u32, bytes)
        .expect("buffer sized from shape");
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| corrupt(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_written_pgm_loads_expected_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.pgm");
        let mut bytes = b"P5\n# a comment\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0u8, 51, 102, 255]);
        fs::write(&path, bytes).unwrap();
        let t = load_gray(&path).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 1, 2, 2));
        let d = t.to_vec();
        assert_eq!(d[0], 0.0);
        assert!((d[1] - 0.2).abs() < 1e-12);
        assert!((d[2] - 0.4).abs() < 1e-12);
        assert_eq!(d[3], 1.0);
    }

    #[test]
    fn png_round_trip_is_lossless_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.png");
        let mut rng = crate::rng::SplitMix64::new(5);
        let data: Vec<f64> = (0..3 * 8 * 8).map(|_| rng.next_f64()).collect();
        let img = Tensor::from_vec((1, 3, 8, 8), data.clone()).unwrap();
        save_rgb(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        for (a, b) in data.iter().zip(back.to_vec()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn gray_round_trip_through_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.pgm");
        let m = Tensor::from_vec((1, 1, 2, 3), vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.1]).unwrap();
        save_gray(&m, &path).unwrap();
        let back = load_gray(&path).unwrap();
        for (a, b) in m.to_vec().iter().zip(back.to_vec()) {
            assert!((a - b).abs() <= 1.0 / 255.0 + 1e-12);
        }
    }

    #[test]
    fn zero_heatmap_is_half_intensity_stimulus() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("overlay.png");
        let base = Tensor::full((1, 3, 4, 4), 1.0);
        let map = Tensor::zeros((1, 1, 4, 4));
        save_heatmap(&map, &base, &path).unwrap();
        let back = load_image(&path).unwrap();
        // colormap(0) is black, so every channel is 0.5 * 1.0
        for v in back.to_vec() {
            assert!((v - 128.0 / 255.0).abs() <= 1.0 / 255.0);
        }
    }

    #[test]
    fn unsupported_extension_is_rejected() {
        let err = load_image(Path::new("/nonexistent/picture.jpg")).unwrap_err();
        assert!(matches!(err, ImageOpsError::UnsupportedFormat { .. }));
    }

    #[test]
    fn truncated_pgm_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        fs::write(&path, b"P5\n4 4\n255\nxx").unwrap();
        assert!(matches!(
            load_gray(&path),
            Err(ImageOpsError::CorruptFile { .. })
        ));
    }
}
