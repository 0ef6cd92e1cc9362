use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ImagePair;
use crate::error::{Error, Result};
use crate::io::{quantize_unit, ImageHDR, ImageLDR};

/// Random crop followed by a bilinear resize to a fixed output size.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub out_width: usize,
    pub out_height: usize,
    /// Smallest crop side as a fraction of the source side.
    pub min_crop_scale: f64,
    /// With `false` the whole image is resized.
    pub crop: bool,
}

impl AugmentConfig {
    pub fn resize_only(out_width: usize, out_height: usize) -> Self {
        AugmentConfig {
            out_width,
            out_height,
            min_crop_scale: 1.0,
            crop: false,
        }
    }
}

/// Bilinear resize of an interleaved `h×w×c` buffer using half-pixel
/// centres. Same-size resizes return the input unchanged.
pub fn resize_bilinear(src: &[f64], w: usize, h: usize, c: usize, ow: usize, oh: usize) -> Vec<f64> {
    assert_eq!(src.len(), w * h * c);
    if (w, h) == (ow, oh) {
        return src.to_vec();
    }
    let sx = w as f64 / ow as f64;
    let sy = h as f64 / oh as f64;
    let axis = |dst: usize, scale: f64, len: usize| {
        let p = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, p - i0 as f64)
    };
    let mut out = Vec::with_capacity(ow * oh * c);
    for y in 0..oh {
        let (y0, y1, fy) = axis(y, sy, h);
        for x in 0..ow {
            let (x0, x1, fx) = axis(x, sx, w);
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bot = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    out
}

fn crop(src: &[f64], w: usize, c: usize, (x0, y0, cw, ch): (usize, usize, usize, usize)) -> Vec<f64> {
    let mut out = Vec::with_capacity(cw * ch * c);
    for y in y0..y0 + ch {
        out.extend_from_slice(&src[(y * w + x0) * c..(y * w + x0 + cw) * c]);
    }
    out
}

fn validate(cfg: &AugmentConfig, w: usize, h: usize) -> Result<()> {
    if w < cfg.out_width || h < cfg.out_height {
        return Err(Error::contract(format!(
            "{w}x{h} image is smaller than the {}x{} output",
            cfg.out_width, cfg.out_height
        )));
    }
    if cfg.out_width == 0 || cfg.out_height == 0 {
        return Err(Error::contract("augment output size must be positive"));
    }
    if !(cfg.min_crop_scale > 0.0 && cfg.min_crop_scale <= 1.0) {
        return Err(Error::contract(format!(
            "min_crop_scale must be in (0, 1], got {}",
            cfg.min_crop_scale
        )));
    }
    Ok(())
}

/// `(x0, y0, width, height)` of the crop drawn from `seed`.
fn crop_window(w: usize, h: usize, cfg: &AugmentConfig, seed: u64) -> (usize, usize, usize, usize) {
    if !cfg.crop {
        return (0, 0, w, h);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = if cfg.min_crop_scale < 1.0 {
        rng.gen_range(cfg.min_crop_scale..=1.0)
    } else {
        1.0
    };
    let cw = ((w as f64 * s).round() as usize).clamp(1, w);
    let ch = ((h as f64 * s).round() as usize).clamp(1, h);
    (rng.gen_range(0..=w - cw), rng.gen_range(0..=h - ch), cw, ch)
}

fn crop_resize_hdr(hdr: &ImageHDR, window: (usize, usize, usize, usize), cfg: &AugmentConfig) -> Result<ImageHDR> {
    let src: Vec<f64> = hdr.pixels().iter().map(|&v| v as f64).collect();
    let out = resize_bilinear(
        &crop(&src, hdr.width(), 3, window),
        window.2,
        window.3,
        3,
        cfg.out_width,
        cfg.out_height,
    );
    let mut img = ImageHDR::new(
        cfg.out_width,
        cfg.out_height,
        out.iter().map(|&v| v.max(0.0) as f32).collect(),
    )?;
    img.norm_scale = hdr.norm_scale;
    Ok(img)
}

/// The HDR half of [`augment_pair`]: same window for the same seed.
pub fn augment_hdr(hdr: &ImageHDR, cfg: &AugmentConfig, seed: u64) -> Result<ImageHDR> {
    validate(cfg, hdr.width(), hdr.height())?;
    crop_resize_hdr(hdr, crop_window(hdr.width(), hdr.height(), cfg, seed), cfg)
}

/// Applies one crop window and resize, drawn from `seed`, to both images
/// of the pair.
pub fn augment_pair(pair: &ImagePair, cfg: &AugmentConfig, seed: u64) -> Result<ImagePair> {
    let (w, h) = (pair.ldr.width(), pair.ldr.height());
    validate(cfg, w, h)?;
    let window = crop_window(w, h, cfg, seed);
    let (ow, oh) = (cfg.out_width, cfg.out_height);

    let ldr: Vec<f64> = pair.ldr.pixels().iter().map(|&b| b as f64 / 255.0).collect();
    let ldr = resize_bilinear(&crop(&ldr, w, 3, window), window.2, window.3, 3, ow, oh);
    let ldr = ImageLDR::new(ow, oh, ldr.iter().map(|&v| quantize_unit(v, 255) as u8).collect())?;
    let hdr = crop_resize_hdr(&pair.hdr, window, cfg)?;
    ImagePair::new(ldr, hdr, pair.id.clone())
}
