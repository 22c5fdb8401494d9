//! Baseline 8-bit grayscale JPEG, one image per slice.

use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageFormat};

use crate::codec::{downsample_16_to_8, upsample_8_to_16, CodecId, CodecResult};
use crate::error::{Error, Result};
use crate::imgio::{BitDepth, ImageStack};

/// Encodes one 8-bit slice.
pub fn encode_slice(samples: &[u16], width: usize, height: usize, quality: u8) -> Result<Vec<u8>> {
    let bytes: Vec<u8> = samples.iter().map(|&v| v as u8).collect();
    let mut out = Vec::new();
    JpegEncoder::new_with_quality(&mut out, quality)
        .encode(&bytes, width as u32, height as u32, ExtendedColorType::L8)
        .map_err(|e| Error::EncodeFailure(e.to_string()))?;
    Ok(out)
}

pub fn decode_slice(bytes: &[u8], width: usize, height: usize) -> Result<Vec<u16>> {
    let img = image::load_from_memory_with_format(bytes, ImageFormat::Jpeg)
        .map_err(|e| Error::EncodeFailure(e.to_string()))?
        .into_luma8();
    if img.width() as usize != width || img.height() as usize != height {
        return Err(Error::EncodeFailure("decoded JPEG has wrong dims".into()));
    }
    Ok(img.into_raw().into_iter().map(u16::from).collect())
}

/// Encoded slices of an 8-bit stack.
pub fn encode_stack(stack8: &ImageStack, quality: u8) -> Result<Vec<Vec<u8>>> {
    if !(1..=100).contains(&quality) {
        return Err(Error::InvalidSpec(format!("JPEG quality {quality} outside 1..=100")));
    }
    let d = stack8.dims();
    (0..d.depth).map(|z| encode_slice(stack8.slice(z), d.width, d.height, quality)).collect()
}

/// Reduces to 8 bit, encodes and decodes each slice, and returns the 16-bit
/// result. The ratio is taken against the original byte count.
pub fn jpeg_roundtrip(stack: &ImageStack, quality: u8) -> Result<CodecResult> {
    let stack8 = match stack.bit_depth() {
        BitDepth::Sixteen => downsample_16_to_8(stack)?.decoded,
        BitDepth::Eight => stack.clone(),
    };
    let slices = encode_stack(&stack8, quality)?;
    let d = stack.dims();
    let mut data = Vec::with_capacity(d.len());
    for s in &slices {
        data.extend(decode_slice(s, d.width, d.height)?);
    }
    let decoded8 = stack8.with_data(data)?;
    let decoded = match stack.bit_depth() {
        BitDepth::Sixteen => upsample_8_to_16(&decoded8)?,
        BitDepth::Eight => decoded8,
    };
    let bytes = slices.iter().map(Vec::len).sum();
    Ok(CodecResult::new(stack, decoded, bytes, CodecId::Jpeg(quality)))
}

/// Compression ratio at a given quality, without decoding.
pub fn jpeg_ratio(stack: &ImageStack, quality: u8) -> Result<f64> {
    let stack8 = match stack.bit_depth() {
        BitDepth::Sixteen => downsample_16_to_8(stack)?.decoded,
        BitDepth::Eight => stack.clone(),
    };
    let bytes: usize = encode_stack(&stack8, quality)?.iter().map(Vec::len).sum();
    Ok(stack.byte_len() as f64 / bytes as f64)
}

/// Quality whose ratio is nearest `target`, by bisection on the (non-increasing)
/// ratio-versus-quality curve. Ties go to the higher quality.
pub fn jpeg_search_quality(stack: &ImageStack, target: f64) -> Result<u8> {
    let (mut lo, mut hi) = (1u8, 100u8);
    if jpeg_ratio(stack, hi)? >= target {
        return Ok(hi);
    }
    if jpeg_ratio(stack, lo)? <= target {
        return Ok(lo);
    }
    // invariant: ratio(lo) > target > ratio(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if jpeg_ratio(stack, mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (rl, rh) = (jpeg_ratio(stack, lo)?, jpeg_ratio(stack, hi)?);
    Ok(if (rl - target).abs() < (rh - target).abs() { lo } else { hi })
}

/// Round trip at the quality nearest a target ratio.
pub fn jpeg_target_ratio(stack: &ImageStack, target: f64) -> Result<CodecResult> {
    jpeg_roundtrip(stack, jpeg_search_quality(stack, target)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imgio::Dims;

    fn gradient(n: usize) -> ImageStack {
        let data = (0..n * n).map(|i| (((i % n) + (i / n)) * 255 / (2 * n - 2)) as u16 * 257).collect();
        ImageStack::new(data, Dims::plane(n, n), BitDepth::Sixteen).unwrap()
    }

    fn psnr8(a: &ImageStack, b: &ImageStack) -> f64 {
        let mse = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| (f64::from(x / 257) - f64::from(y / 257)).powi(2))
            .sum::<f64>()
            / a.len() as f64;
        10.0 * (255.0f64 * 255.0 / mse).log10()
    }

    #[test]
    fn mid_grey_flatfield_exact_at_any_quality() {
        let s = ImageStack::filled(Dims::plane(24, 16), BitDepth::Sixteen, 128 * 257).unwrap();
        for q in [1, 10, 50, 75, 100] {
            assert_eq!(jpeg_roundtrip(&s, q).unwrap().decoded, s, "quality {q}");
        }
    }

    #[test]
    fn flatfield_exact_at_high_quality() {
        for v in [0u16, 37, 200, 255] {
            let s = ImageStack::filled(Dims::plane(16, 16), BitDepth::Sixteen, v * 257).unwrap();
            for q in [75, 90, 100] {
                assert_eq!(jpeg_roundtrip(&s, q).unwrap().decoded, s, "value {v} quality {q}");
            }
        }
    }

    #[test]
    fn dims_and_range() {
        let s = gradient(33);
        let r = jpeg_roundtrip(&s, 30).unwrap();
        assert_eq!(r.decoded.dims(), s.dims());
        assert_eq!(r.decoded.bit_depth(), BitDepth::Sixteen);
        assert!(r.compression_ratio > 0.0);
    }

    #[test]
    fn smooth_gradient_psnr() {
        let s = gradient(256);
        let r = jpeg_roundtrip(&s, 95).unwrap();
        assert!(psnr8(&s, &r.decoded) >= 40.0);
    }

    #[test]
    fn ratio_non_increasing_in_quality() {
        let s = gradient(64);
        let mut prev = f64::INFINITY;
        for q in (5..=100).step_by(5) {
            let r = jpeg_ratio(&s, q).unwrap();
            assert!(r <= prev * 1.0001, "quality {q}: {r} > {prev}");
            prev = r;
        }
    }

    #[test]
    fn search_hits_nearest() {
        let s = gradient(64);
        let q = jpeg_search_quality(&s, 10.0).unwrap();
        let best = (1..=100u8)
            .map(|q| (jpeg_ratio(&s, q).unwrap() - 10.0).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(((jpeg_ratio(&s, q).unwrap() - 10.0).abs() - best).abs() < 1e-9 || best < 0.5);
    }

    #[test]
    fn bad_quality() {
        assert!(jpeg_roundtrip(&gradient(8), 0).is_err());
    }
}
