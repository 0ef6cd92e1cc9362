//! Image containers and codecs: PFM and Radiance RGBE for HDR, binary PPM
//! for 8-bit LDR.

mod header;
mod pfm;
mod ppm;
mod rgbe;

use std::path::Path;

pub use pfm::{read_pfm, write_pfm};
pub use ppm::{read_ppm, write_ppm};
pub use rgbe::{read_rgbe, rgbe_decode_pixel, rgbe_encode_pixel, write_rgbe, write_rgbe_with, RgbeEncoding};

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

/// Linear-radiance RGB image, interleaved, top row first.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageHDR {
    width: usize,
    height: usize,
    pixels: Vec<f32>,
    /// The factor the pixels were divided by during normalization
    /// (1.0 for raw images).
    pub norm_scale: f64,
}

impl ImageHDR {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract("image dimensions must be positive"));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::contract(format!(
                "{width}x{height} RGB image needs {} samples, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        if let Some((i, v)) = pixels.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Domain {
                op: "ImageHDR",
                index: i,
                value: *v as f64,
            });
        }
        Ok(ImageHDR {
            width,
            height,
            pixels,
            norm_scale: 1.0,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn max_value(&self) -> f32 {
        self.pixels.iter().copied().fold(0.0, f32::max)
    }

    /// `1×3×H×W` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(Shape::new(1, 3, self.height, self.width), |[_, c, y, x]| {
            T::from_f64(self.pixels[(y * self.width + x) * 3 + c] as f64)
        })
    }

    /// Takes batch item `item` of an `N×3×H×W` tensor; negatives clamp to 0.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, item: usize) -> Result<Self> {
        let s = t.shape();
        if s.c != 3 || item >= s.n {
            return Err(Error::contract(format!("cannot take RGB item {item} from {s}")));
        }
        let mut pixels = Vec::with_capacity(s.h * s.w * 3);
        for y in 0..s.h {
            for x in 0..s.w {
                for c in 0..3 {
                    let v = t.get(item, c, y, x).as_f64() as f32;
                    pixels.push(if v.is_finite() { v.max(0.0) } else { 0.0 });
                }
            }
        }
        Self::new(s.w, s.h, pixels)
    }
}

/// 8-bit RGB image, interleaved, top row first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageLDR {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageLDR {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::contract("image dimensions must be positive"));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::contract(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(ImageLDR { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// `1×3×H×W` tensor with codes mapped to `[0, 1]` by `/255`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(Shape::new(1, 3, self.height, self.width), |[_, c, y, x]| {
            T::from_f64(self.pixels[(y * self.width + x) * 3 + c] as f64 / 255.0)
        })
    }

    /// Quantizes `[0, 1]` values (clipped) to 8 bits, rounding half up.
    pub fn from_unit_values(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        let pixels = values.iter().map(|&v| quantize_unit(v, 255)).map(|q| q as u8).collect();
        Self::new(width, height, pixels)
    }
}

/// `floor(clip(v, 0, 1) * levels + 0.5)`.
pub fn quantize_unit(v: f64, levels: u32) -> u32 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    ((v * levels as f64) + 0.5).floor() as u32
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default()
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::file(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

pub fn is_hdr_path(path: &Path) -> bool {
    matches!(extension(path).as_str(), "pfm" | "hdr" | "pic")
}

/// Reads `.pfm` or `.hdr`/`.pic` by extension.
pub fn read_hdr_file(path: &Path) -> Result<ImageHDR> {
    let bytes = read_bytes(path)?;
    match extension(path).as_str() {
        "pfm" => read_pfm(&bytes),
        "hdr" | "pic" => read_rgbe(&bytes),
        other => Err(Error::Unsupported(format!("HDR extension {other:?}"))),
    }
}

pub fn write_hdr_file(path: &Path, img: &ImageHDR) -> Result<()> {
    let bytes = match extension(path).as_str() {
        "pfm" => write_pfm(img),
        "hdr" | "pic" => write_rgbe(img),
        other => return Err(Error::Unsupported(format!("HDR extension {other:?}"))),
    };
    write_bytes(path, &bytes)
}

pub fn read_ppm_file(path: &Path) -> Result<ImageLDR> {
    read_ppm(&read_bytes(path)?)
}

pub fn write_ppm_file(path: &Path, img: &ImageLDR) -> Result<()> {
    write_bytes(path, &write_ppm(img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hdr(w: usize, h: usize, pixels: &[f32]) -> ImageHDR {
        ImageHDR::new(w, h, pixels.to_vec()).unwrap()
    }

    #[test]
    fn pfm_single_pixel_round_trip() {
        let img = hdr(1, 1, &[0.5, 1.0, 2.0]);
        let back = read_pfm(&write_pfm(&img)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn pfm_scale_sign_selects_endianness() {
        // Two rows stored bottom-up: file row 0 is image row 1.
        let samples = [1.5f32, 0.25, 3.0, 0.0, 7.0, 0.125];
        for (scale, le) in [("-1.0", true), ("1.0", false), ("-0.5", true)] {
            let mut bytes = format!("PF\n1 2\n{scale}\n").into_bytes();
            for v in samples {
                bytes.extend_from_slice(&if le { v.to_le_bytes() } else { v.to_be_bytes() });
            }
            let img = read_pfm(&bytes).unwrap();
            assert_eq!(img.pixel(0, 1), [1.5, 0.25, 3.0], "scale {scale}");
            assert_eq!(img.pixel(0, 0), [0.0, 7.0, 0.125], "scale {scale}");
        }
    }

    #[test]
    fn pfm_truncated_payload_reports_offset() {
        let bytes = write_pfm(&hdr(2, 2, &[1.0; 12]));
        let cut = &bytes[..bytes.len() - 3];
        assert!(matches!(read_pfm(cut), Err(Error::Parse { .. })));
        assert!(matches!(read_pfm(b"PF\n2 2\n"), Err(Error::Parse { .. })));
        assert!(matches!(read_pfm(b"Pf\n1 1\n-1\n\0\0\0\0"), Err(Error::Unsupported(_))));
    }

    #[test]
    fn rgbe_black_encodes_to_zero() {
        assert_eq!(rgbe_encode_pixel([0.0; 3]), [0, 0, 0, 0]);
        assert_eq!(rgbe_decode_pixel([0, 0, 0, 0]), [0.0; 3]);
        let img = hdr(1, 1, &[0.0; 3]);
        assert_eq!(read_rgbe(&write_rgbe(&img)).unwrap(), img);
    }

    #[test]
    fn rgbe_pixel_within_shared_exponent_error() {
        // Hand evaluation: max 1.0 = 0.5 * 2^1, so mantissas are 128, 64, 32
        // with exponent byte 129.
        let px = [1.0, 0.5, 0.25];
        assert_eq!(rgbe_encode_pixel(px), [128, 64, 32, 129]);
        let back = rgbe_decode_pixel([128, 64, 32, 129]);
        for c in 0..3 {
            assert!(((back[c] - px[c]) / px[c]).abs() <= 1.0 / 128.0);
        }
    }

    #[test]
    fn rgbe_rle_and_flat_decode_identically() {
        let w = 40;
        let pixels: Vec<f32> = (0..w * 3 * 3)
            .map(|i| if (i / 30) % 2 == 0 { 2.0 } else { (i % 17) as f32 * 0.3 })
            .collect();
        let img = hdr(w, 3, &pixels);
        let flat = write_rgbe_with(&img, RgbeEncoding::Flat);
        let rle = write_rgbe_with(&img, RgbeEncoding::Rle);
        assert_ne!(flat, rle);
        assert!(rle.len() < flat.len());
        assert_eq!(read_rgbe(&flat).unwrap(), read_rgbe(&rle).unwrap());
    }

    #[test]
    fn rgbe_rejects_bad_header() {
        assert!(matches!(read_rgbe(b"P6\n1 1\n255\n"), Err(Error::Parse { .. })));
        assert!(matches!(
            read_rgbe(b"#?RADIANCE\n\n-Y x +X 2\n"),
            Err(Error::Parse { .. })
        ));
        assert!(matches!(
            read_rgbe(b"#?RADIANCE\nFORMAT=32-bit_rle_xyze\n\n-Y 1 +X 1\n\0\0\0\0"),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn ppm_checkerboard_round_trip() {
        let px = [255, 255, 255, 0, 0, 0, 0, 0, 0, 255, 255, 255];
        let img = ImageLDR::new(2, 2, px.to_vec()).unwrap();
        assert_eq!(read_ppm(&write_ppm(&img)).unwrap(), img);
    }

    #[test]
    fn ppm_skips_comments() {
        let mut bytes = b"P6\n# made by hand\n2 1 # trailing\n# another\n255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6]);
        let img = read_ppm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn ppm_enforces_payload_and_maxval() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend_from_slice(&[0; 11]);
        assert!(matches!(read_ppm(&bytes), Err(Error::Parse { .. })));
        assert!(matches!(
            read_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0"),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(read_ppm(b"P6\n1 1\n0\n\0\0\0"), Err(Error::Parse { .. })));
        assert!(matches!(read_ppm(b"P3\n1 1\n255\n1 2 3"), Err(Error::Parse { .. })));
    }

    #[test]
    fn image_invariants_are_enforced() {
        assert!(ImageHDR::new(1, 1, vec![0.0, -1.0, 0.0]).is_err());
        assert!(ImageHDR::new(1, 1, vec![0.0, f32::NAN, 0.0]).is_err());
        assert!(ImageHDR::new(0, 1, vec![]).is_err());
        assert!(ImageLDR::new(2, 1, vec![0; 5]).is_err());
    }

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize_unit(0.5, 255), 128);
        assert_eq!(quantize_unit(-0.1, 255), 0);
        assert_eq!(quantize_unit(1.7, 255), 255);
        assert_eq!(quantize_unit(1.5 / 255.0, 255), 2);
    }

    #[test]
    fn tensor_conversion_round_trip() {
        let img = hdr(2, 1, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let t = img.to_tensor::<f32>();
        assert_eq!(t.get(0, 2, 0, 1), 0.6);
        assert_eq!(ImageHDR::from_tensor(&t, 0).unwrap(), img);
        let ldr = ImageLDR::new(1, 1, vec![255, 0, 51]).unwrap();
        assert_eq!(ldr.to_tensor::<f64>().data(), &[1.0, 0.0, 0.2]);
    }

    fn arb_hdr() -> impl Strategy<Value = ImageHDR> {
        (1..6usize, 1..6usize).prop_flat_map(|(w, h)| {
            proptest::collection::vec(prop_oneof![Just(0.0f32), 0.0f32..1e6, 1e-20f32..1e-3], w * h * 3)
                .prop_map(move |p| ImageHDR::new(w, h, p).unwrap())
        })
    }

    fn arb_ldr() -> impl Strategy<Value = ImageLDR> {
        (1..6usize, 1..6usize).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h * 3).prop_map(move |p| ImageLDR::new(w, h, p).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pfm_round_trip_is_bit_exact(img in arb_hdr()) {
            let back = read_pfm(&write_pfm(&img)).unwrap();
            prop_assert!(back.pixels().iter().zip(img.pixels()).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn ppm_round_trip_is_bit_exact(img in arb_ldr()) {
            prop_assert_eq!(read_ppm(&write_ppm(&img)).unwrap(), img);
        }

        #[test]
        fn rgbe_round_trip_error_is_bounded(img in arb_hdr(), rle in any::<bool>()) {
            let enc = if rle { RgbeEncoding::Rle } else { RgbeEncoding::Flat };
            let back = read_rgbe(&write_rgbe_with(&img, enc)).unwrap();
            for (p, q) in img.pixels().chunks(3).zip(back.pixels().chunks(3)) {
                let max = p.iter().copied().fold(0.0f32, f32::max) as f64;
                if max > 1e-30 {
                    for c in 0..3 {
                        prop_assert!((q[c] as f64 - p[c] as f64).abs() <= max / 256.0 * (1.0 + 1e-6));
                    }
                }
            }
        }

        #[test]
        fn readers_never_panic_on_garbage(bytes in proptest::collection::vec(any::<u8>(), 0..64), prefix in 0usize..3) {
            let mut data = [b"PF\n".to_vec(), b"P6\n".to_vec(), b"#?RADIANCE\n".to_vec()][prefix].clone();
            data.extend(bytes);
            let _ = read_pfm(&data);
            let _ = read_ppm(&data);
            let _ = read_rgbe(&data);
        }
    }
}
