//! Training-pair synthesis, augmentation, dataset discovery and batching.

mod augment;
mod batch;
mod curve;
mod dataset;

pub use augment::{augment_hdr, augment_pair, resize_bilinear, AugmentConfig};
pub use batch::{batch_iter, epoch_order, make_batch, Batch, BatchIter};
pub use curve::{CameraCurve, SynthSpec};
pub use dataset::{load_dataset, load_pair, scan_dataset, LoadedDataset, PairEntry, ScanReport};

use crate::error::{Error, Result};
use crate::io::{quantize_unit, ImageHDR, ImageLDR};

/// An LDR input and its HDR target of the same size.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub ldr: ImageLDR,
    pub hdr: ImageHDR,
    pub id: String,
}

impl ImagePair {
    pub fn new(ldr: ImageLDR, hdr: ImageHDR, id: impl Into<String>) -> Result<Self> {
        if (ldr.width(), ldr.height()) != (hdr.width(), hdr.height()) {
            return Err(Error::contract(format!(
                "LDR is {}x{} but HDR is {}x{}",
                ldr.width(),
                ldr.height(),
                hdr.width(),
                hdr.height()
            )));
        }
        Ok(ImagePair {
            ldr,
            hdr,
            id: id.into(),
        })
    }
}

/// Divides by the image maximum so values land in `[0, 1]`; the divisor is
/// folded into `norm_scale`. All-black images are left as they are.
pub fn normalize_hdr(img: &ImageHDR) -> ImageHDR {
    let max = img.max_value();
    if max <= 0.0 {
        return img.clone();
    }
    let pixels = img.pixels().iter().map(|&v| (v / max).min(1.0)).collect();
    let mut out = ImageHDR::new(img.width(), img.height(), pixels).expect("scaled pixels stay valid");
    out.norm_scale = img.norm_scale * max as f64;
    out
}

/// Exposure → clip → camera curve → quantize, per sample. Expects a
/// normalized HDR image.
pub fn synth_ldr(hdr: &ImageHDR, spec: &SynthSpec) -> Result<ImageLDR> {
    spec.validate()?;
    let pixels = hdr
        .pixels()
        .iter()
        // Lower simulated bit depths are still stored as 8-bit codes.
        .map(|&v| quantize_unit(spec.map_value(v as f64), 255) as u8)
        .collect();
    ImageLDR::new(hdr.width(), hdr.height(), pixels)
}

/// A procedural linear-radiance scene: a smooth coloured background with a
/// few bright Gaussian light sources. Dynamic range is roughly 1:40. Used
/// wherever real HDR captures are not at hand.
pub fn synthetic_hdr(width: usize, height: usize, seed: u64) -> Result<ImageHDR> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.6..1.0));
    let freq: [f64; 2] = std::array::from_fn(|_| rng.gen_range(0.5..2.5));
    let phase: [f64; 2] = std::array::from_fn(|_| rng.gen_range(0.0..std::f64::consts::TAU));
    let lights: Vec<(f64, f64, f64, f64, [f64; 3])> = (0..rng.gen_range(1..=3))
        .map(|_| {
            (
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.05..0.2),
                rng.gen_range(2.0..8.0),
                std::array::from_fn(|_| rng.gen_range(0.7..1.0)),
            )
        })
        .collect();
    let mut pixels = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let u = x as f64 / width as f64;
            let v = y as f64 / height as f64;
            let base = 0.3
                + 0.1 * (std::f64::consts::TAU * freq[0] * u + phase[0]).sin()
                + 0.1 * (std::f64::consts::TAU * freq[1] * v + phase[1]).cos();
            for c in 0..3 {
                let glow: f64 = lights
                    .iter()
                    .map(|&(cx, cy, r, peak, col)| {
                        let d2 = (u - cx).powi(2) + (v - cy).powi(2);
                        peak * col[c] * (-d2 / (2.0 * r * r)).exp()
                    })
                    .sum();
                pixels.push((base * tint[c] + glow) as f32);
            }
        }
    }
    ImageHDR::new(width, height, pixels)
}

/// Normalized synthetic scenes turned into LDR/HDR pairs, one exposure each.
pub fn synthetic_pairs(
    count: usize,
    width: usize,
    height: usize,
    ev_range: (f64, f64),
    curves: &[CameraCurve],
    seed: u64,
) -> Result<Vec<ImagePair>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let hdr = normalize_hdr(&synthetic_hdr(width, height, seed.wrapping_add(i as u64 + 1))?);
            let spec = SynthSpec::sample(&mut rng, ev_range, curves)?;
            let ldr = synth_ldr(&hdr, &spec)?;
            ImagePair::new(ldr, hdr, format!("synthetic_{i:03}"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{write_pfm, write_ppm, write_rgbe};
    use crate::tensor::Shape;
    use proptest::prelude::*;

    fn flat_hdr(w: usize, h: usize, v: f32) -> ImageHDR {
        ImageHDR::new(w, h, vec![v; w * h * 3]).unwrap()
    }

    fn gamma(e: f64) -> CameraCurve {
        CameraCurve::gamma(e).unwrap()
    }

    #[test]
    fn synth_worked_examples() {
        let half = synth_ldr(&flat_hdr(1, 1, 0.5), &SynthSpec::new(0.0, gamma(1.0))).unwrap();
        assert_eq!(half.pixels(), &[128, 128, 128]);
        let quarter = synth_ldr(&flat_hdr(1, 1, 0.25), &SynthSpec::new(0.0, gamma(1.0 / 2.2))).unwrap();
        assert!((0.25f64.powf(1.0 / 2.2) - 0.5326).abs() < 1e-4);
        assert_eq!(quarter.pixels(), &[136, 136, 136]);
        for curve in CameraCurve::standard_set() {
            let bright = synth_ldr(&flat_hdr(1, 1, 1.0 / 256.0), &SynthSpec::new(8.0, curve)).unwrap();
            assert_eq!(bright.pixels(), &[255, 255, 255], "{curve:?}");
        }
    }

    #[test]
    fn curves_fix_endpoints_and_parse() {
        for c in CameraCurve::standard_set() {
            assert!(c.apply(0.0).abs() < 1e-12, "{c:?}");
            assert!((c.apply(1.0) - 1.0).abs() < 1e-12, "{c:?}");
            assert_eq!(CameraCurve::parse(&c.descriptor()).unwrap(), c);
        }
        assert_eq!(CameraCurve::standard_set().len(), 7);
        assert_eq!(CameraCurve::parse("gamma:1/2").unwrap(), gamma(0.5));
        assert!(CameraCurve::parse("gamma:-1").is_err());
        assert!(CameraCurve::parse("linear").is_err());
        assert!(CameraCurve::sigmoid(4.0, 1.5).is_err());
        let mut spec = SynthSpec::new(0.0, gamma(1.0));
        spec.quantize_bits = 17;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn normalization_records_scale() {
        let img = ImageHDR::new(2, 1, vec![0.5, 1.0, 4.0, 2.0, 0.0, 1.0]).unwrap();
        let n = normalize_hdr(&img);
        assert_eq!(n.max_value(), 1.0);
        assert_eq!(n.norm_scale, 4.0);
        assert_eq!(n.pixel(0, 0), [0.125, 0.25, 1.0]);
        let black = flat_hdr(2, 2, 0.0);
        assert_eq!(normalize_hdr(&black), black);
    }

    /// An image whose every pixel encodes its own coordinates.
    fn coordinate_pair(w: usize, h: usize) -> ImagePair {
        let mut values = Vec::with_capacity(w * h * 3);
        for y in 0..h {
            for x in 0..w {
                values.extend([x as f64 / (w - 1) as f64, y as f64 / (h - 1) as f64, 0.5]);
            }
        }
        let ldr = ImageLDR::from_unit_values(w, h, &values).unwrap();
        // The HDR target holds exactly the LDR codes / 255 so both halves
        // carry the same signal.
        let hdr_px = ldr.pixels().iter().map(|&b| b as f32 / 255.0).collect();
        ImagePair::new(ldr, ImageHDR::new(w, h, hdr_px).unwrap(), "coords").unwrap()
    }

    #[test]
    fn augmentation_is_deterministic_and_identity_without_crop() {
        let pair = coordinate_pair(20, 16);
        let cfg = AugmentConfig {
            out_width: 8,
            out_height: 8,
            min_crop_scale: 0.5,
            crop: true,
        };
        assert_eq!(
            augment_pair(&pair, &cfg, 3).unwrap(),
            augment_pair(&pair, &cfg, 3).unwrap()
        );
        assert_ne!(
            augment_pair(&pair, &cfg, 3).unwrap(),
            augment_pair(&pair, &cfg, 4).unwrap()
        );
        assert_eq!(
            augment_pair(&pair, &AugmentConfig::resize_only(20, 16), 9).unwrap(),
            pair
        );
        assert!(augment_pair(&pair, &AugmentConfig::resize_only(40, 16), 0).is_err());
    }

    #[test]
    fn marker_pixel_lands_in_the_same_place() {
        let (w, h) = (24, 18);
        for seed in 0..20u64 {
            let mut ldr = vec![10u8; w * h * 3];
            let mut hdr = vec![0.01f32; w * h * 3];
            // Mark a 2x2 block so it survives bilinear downsampling.
            let (mx, my) = (7 + (seed as usize % 9), 5 + (seed as usize % 7));
            for (yy, xx) in [(my, mx), (my, mx + 1), (my + 1, mx), (my + 1, mx + 1)] {
                let i = (yy * w + xx) * 3;
                ldr[i] = 255;
                hdr[i] = 1.0;
            }
            let pair = ImagePair::new(
                ImageLDR::new(w, h, ldr).unwrap(),
                ImageHDR::new(w, h, hdr).unwrap(),
                "marker",
            )
            .unwrap();
            let cfg = AugmentConfig {
                out_width: 12,
                out_height: 9,
                min_crop_scale: 0.6,
                crop: true,
            };
            let out = augment_pair(&pair, &cfg, seed).unwrap();
            let argmax_l = (0..12 * 9).max_by_key(|&p| out.ldr.pixels()[p * 3]).unwrap();
            let argmax_h = (0..12 * 9)
                .max_by(|&a, &b| out.hdr.pixels()[a * 3].total_cmp(&out.hdr.pixels()[b * 3]))
                .unwrap();
            if out.hdr.pixels()[argmax_h * 3] > 0.05 {
                assert_eq!(argmax_l, argmax_h, "seed {seed}");
            }
            assert_eq!(augment_hdr(&pair.hdr, &cfg, seed).unwrap(), out.hdr);
        }
    }

    #[test]
    fn batches_cover_an_epoch_with_short_tail() {
        let pairs = synthetic_pairs(10, 4, 4, (0.0, 0.0), &[gamma(1.0)], 1).unwrap();
        let sizes: Vec<usize> = batch_iter::<f32>(&pairs, 4, 7, 0, 0)
            .unwrap()
            .map(|b| b.unwrap().ids.len())
            .collect();
        assert_eq!(sizes, vec![4, 4, 2]);
        let ids = |seed| {
            batch_iter::<f32>(&pairs, 4, seed, 0, 0)
                .unwrap()
                .flat_map(|b| b.unwrap().ids)
                .collect::<Vec<_>>()
        };
        assert_eq!(ids(7), ids(7));
        let mut all = ids(7);
        all.sort();
        assert_eq!(all, pairs.iter().map(|p| p.id.clone()).collect::<Vec<_>>());
        assert_ne!(epoch_order(10, 7, 0), epoch_order(10, 7, 1));

        let resumed: Vec<String> = batch_iter::<f32>(&pairs, 4, 7, 0, 1)
            .unwrap()
            .flat_map(|b| b.unwrap().ids)
            .collect();
        assert_eq!(resumed, ids(7)[4..]);
    }

    #[test]
    fn batch_values_and_mixed_sizes() {
        let white = ImagePair::new(ImageLDR::new(1, 1, vec![255; 3]).unwrap(), flat_hdr(1, 1, 1.0), "w").unwrap();
        let b = make_batch::<f64>(std::slice::from_ref(&white), &[0]).unwrap();
        assert_eq!(b.ldr.shape(), Shape::new(1, 3, 1, 1));
        assert!(b.ldr.data().iter().all(|&v| v == 1.0));
        let big = ImagePair::new(ImageLDR::new(2, 1, vec![0; 6]).unwrap(), flat_hdr(2, 1, 0.0), "b").unwrap();
        assert!(make_batch::<f64>(&[white, big], &[0, 1]).is_err());
    }

    fn write_pair(root: &std::path::Path, stem: &str, hdr_ext: &str) {
        let ldr = ImageLDR::new(2, 2, vec![100; 12]).unwrap();
        let hdr = ImageHDR::new(2, 2, (0..12).map(|i| i as f32 * 0.5).collect()).unwrap();
        std::fs::write(root.join("ldr").join(format!("{stem}.ppm")), write_ppm(&ldr)).unwrap();
        let bytes = if hdr_ext == "pfm" {
            write_pfm(&hdr)
        } else {
            write_rgbe(&hdr)
        };
        std::fs::write(root.join("hdr").join(format!("{stem}.{hdr_ext}")), bytes).unwrap();
    }

    #[test]
    fn scan_matches_stems_and_reports_orphans() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        assert!(scan_dataset(root).unwrap().pairs.is_empty());
        std::fs::create_dir_all(root.join("ldr")).unwrap();
        std::fs::create_dir_all(root.join("hdr")).unwrap();
        write_pair(root, "c", "pfm");
        write_pair(root, "a", "hdr");
        write_pair(root, "b", "pfm");
        std::fs::write(root.join("ldr/orphan.ppm"), b"P6\n1 1\n255\n\0\0\0").unwrap();

        let report = scan_dataset(root).unwrap();
        let stems: Vec<&str> = report.pairs.iter().map(|p| p.stem.as_str()).collect();
        assert_eq!(stems, ["a", "b", "c"]);
        assert_eq!(report.warnings.len(), 1);
        assert!(report.warnings[0].contains("orphan"));
        assert_eq!(scan_dataset(root).unwrap().pairs, report.pairs);

        let loaded = load_dataset(root).unwrap();
        assert_eq!(loaded.pairs.len(), 3);
        assert!(loaded.pairs.iter().all(|p| p.hdr.max_value() <= 1.0));
        assert!((loaded.pairs[1].hdr.norm_scale - 5.5).abs() < 1e-9);

        // A corrupt file is an item error; the rest still load.
        std::fs::write(root.join("hdr/b.pfm"), b"PF\n2 2\n-1\n").unwrap();
        let loaded = load_dataset(root).unwrap();
        assert_eq!(loaded.pairs.len(), 2);
        assert_eq!(loaded.skipped.len(), 1);
        assert_eq!(loaded.skipped[0].0, "b");

        assert!(scan_dataset(&root.join("missing")).is_err());
    }

    #[test]
    fn synthetic_pairs_are_reproducible() {
        let curves = CameraCurve::standard_set();
        let a = synthetic_pairs(3, 16, 12, (-2.0, 2.0), &curves, 5).unwrap();
        assert_eq!(a, synthetic_pairs(3, 16, 12, (-2.0, 2.0), &curves, 5).unwrap());
        assert_ne!(a, synthetic_pairs(3, 16, 12, (-2.0, 2.0), &curves, 6).unwrap());
        for p in &a {
            assert_eq!(p.hdr.max_value(), 1.0);
            assert!(p.hdr.norm_scale > 1.0);
        }
    }

    fn arb_curve() -> impl Strategy<Value = CameraCurve> {
        prop_oneof![
            (0.3..1.5f64).prop_map(|e| CameraCurve::Gamma { exponent: e }),
            (2.0..10.0f64, 0.2..0.8f64).prop_map(|(s, m)| CameraCurve::Sigmoid { slope: s, midpoint: m }),
        ]
    }

    proptest! {
        #[test]
        fn synth_is_monotone(a in 0.0..1.0f32, b in 0.0..1.0f32, ev in -4.0..4.0f64, curve in arb_curve(), bits in 1u32..=16) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let spec = SynthSpec { exposure_ev: ev, curve, quantize_bits: bits };
            prop_assert!(spec.map_value(lo as f64) <= spec.map_value(hi as f64));
            let l = synth_ldr(&flat_hdr(1, 1, lo), &spec).unwrap();
            let h = synth_ldr(&flat_hdr(1, 1, hi), &spec).unwrap();
            prop_assert!(l.pixels()[0] <= h.pixels()[0]);
        }

        /// The quantized code pins the curve output to half a level; the
        /// inverse then recovers the pre-curve value to that error divided
        /// by the local slope.
        #[test]
        fn curve_inversion_recovers_exposed_value(x in 0.05..0.95f64, curve in arb_curve(), bits in 4u32..=12) {
            let spec = SynthSpec { exposure_ev: 0.0, curve, quantize_bits: bits };
            let half_level = 0.5 / ((1u32 << bits) - 1) as f64;
            let q = spec.map_value(x);
            prop_assert!((q - curve.apply(x)).abs() <= half_level + 1e-12);
            let back = curve.invert(q);
            let h = 1e-6;
            let slope_lo = (curve.apply(x.min(back)) - curve.apply(x.min(back) - h)) / h;
            let slope_hi = (curve.apply(x.max(back) + h) - curve.apply(x.max(back))) / h;
            let slope = slope_lo.min(slope_hi);
            prop_assert!((back - x).abs() <= half_level / slope * (1.0 + 1e-3) + 1e-9);
        }

        #[test]
        fn augmentation_keeps_pairs_aligned(seed in 0u64..10_000, scale in 0.4..1.0f64) {
            let pair = coordinate_pair(20, 15);
            let cfg = AugmentConfig { out_width: 9, out_height: 7, min_crop_scale: scale, crop: true };
            let out = augment_pair(&pair, &cfg, seed).unwrap();
            for (l, h) in out.ldr.pixels().iter().zip(out.hdr.pixels()) {
                prop_assert!((*l as f32 / 255.0 - h).abs() <= 0.5 / 255.0 + 1e-6);
            }
        }
    }
}
