//! PSNR and SSIM between μ-law tonemapped images.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::ImageHDR;
use crate::losses::tonemap_scalar;
use crate::tensor::{Real, Shape, Tensor};

/// Reported in place of `+inf` for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// `10·log10(max²/MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &[f64], b: &[f64], max: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::contract(format!(
            "psnr: inputs have {} and {} samples",
            a.len(),
            b.len()
        )));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (max * max / mse).log10()).min(PSNR_CAP_DB))
}

fn tonemapped(values: impl Iterator<Item = f64>, mu: f64) -> Result<Vec<f64>> {
    values
        .enumerate()
        .map(|(index, v)| {
            if v >= 0.0 && v.is_finite() {
                Ok(tonemap_scalar(v, mu))
            } else {
                Err(Error::Domain {
                    op: "tonemap",
                    index,
                    value: v,
                })
            }
        })
        .collect()
}

fn check_same(what: &str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::contract(format!("{what}: shapes {a} and {b} differ")));
    }
    Ok(())
}

fn check_image_dims(what: &str, a: &ImageHDR, b: &ImageHDR) -> Result<Shape> {
    let (sa, sb) = (
        Shape::new(1, 3, a.height(), a.width()),
        Shape::new(1, 3, b.height(), b.width()),
    );
    check_same(what, sa, sb)?;
    Ok(sa)
}

/// PSNR with peak 1 between the tonemapped images.
pub fn psnr_tonemapped(gen: &ImageHDR, gt: &ImageHDR, mu: f64) -> Result<f64> {
    check_image_dims("psnr_tonemapped", gen, gt)?;
    let a = tonemapped(gen.pixels().iter().map(|&v| v as f64), mu)?;
    let b = tonemapped(gt.pixels().iter().map(|&v| v as f64), mu)?;
    psnr(&a, &b, 1.0)
}

/// [`psnr_tonemapped`] for tensors of any batch size, pooled over all samples.
pub fn psnr_tonemapped_tensor<T: Real>(gen: &Tensor<T>, gt: &Tensor<T>, mu: f64) -> Result<f64> {
    check_same("psnr_tonemapped", gen.shape(), gt.shape())?;
    let a = tonemapped(gen.data().iter().map(|v| v.as_f64()), mu)?;
    let b = tonemapped(gt.data().iter().map(|v| v.as_f64()), mu)?;
    psnr(&a, &b, 1.0)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "valid" filtering of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over one pair of planes.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, k: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, k);
    let mu_b = filter_valid(b, h, w, k);
    let aa = filter_valid(&prod(a, a), h, w, k);
    let bb = filter_valid(&prod(b, b), h, w, k);
    let ab = filter_valid(&prod(a, b), h, w, k);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    total / mu_a.len() as f64
}

/// Mean local SSIM with an 11×11 Gaussian window (σ = 1.5) over the valid
/// region, averaged over channels and batch items. Inputs are expected in
/// `[0, 1]`, e.g. already tonemapped.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let s = a.shape();
    check_same("ssim", s, b.shape())?;
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(Error::contract(format!(
            "ssim: {}x{} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            s.w, s.h
        )));
    }
    let k = gaussian_window();
    let (da, db) = (a.to_f64_vec(), b.to_f64_vec());
    let plane = s.plane();
    let planes = s.n * s.c;
    let total: f64 = (0..planes)
        .map(|p| {
            let r = p * plane..(p + 1) * plane;
            ssim_plane(&da[r.clone()], &db[r], s.h, s.w, &k)
        })
        .sum();
    Ok(total / planes as f64)
}

/// SSIM between the tonemapped images.
pub fn ssim_tonemapped(gen: &ImageHDR, gt: &ImageHDR, mu: f64) -> Result<f64> {
    ssim_tonemapped_tensor::<f64>(&gen.to_tensor(), &gt.to_tensor(), mu)
}

pub fn ssim_tonemapped_tensor<T: Real>(gen: &Tensor<T>, gt: &Tensor<T>, mu: f64) -> Result<f64> {
    check_same("ssim_tonemapped", gen.shape(), gt.shape())?;
    let a = Tensor::from_vec(gen.shape(), tonemapped(gen.data().iter().map(|v| v.as_f64()), mu)?)?;
    let b = Tensor::from_vec(gt.shape(), tonemapped(gt.data().iter().map(|v| v.as_f64()), mu)?)?;
    ssim(&a, &b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub image_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image scores and their dataset means.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
}

impl MetricReport {
    pub fn push(&mut self, image_id: impl Into<String>, psnr_db: f64, ssim: f64) {
        self.images.push(ImageMetrics {
            image_id: image_id.into(),
            psnr_db,
            ssim,
        });
    }

    pub fn mean_psnr(&self) -> f64 {
        mean(self.images.iter().map(|m| m.psnr_db))
    }

    pub fn mean_ssim(&self) -> f64 {
        mean(self.images.iter().map(|m| m.ssim))
    }

    /// CSV with columns `image_id, psnr_db, ssim`; the last row, with id
    /// `mean`, holds the dataset means.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["image_id", "psnr_db", "ssim"])?;
        for m in &self.images {
            w.write_record([
                m.image_id.clone(),
                format!("{:.6}", m.psnr_db),
                format!("{:.6}", m.ssim),
            ])?;
        }
        w.write_record([
            "mean".to_string(),
            format!("{:.6}", self.mean_psnr()),
            format!("{:.6}", self.mean_ssim()),
        ])?;
        w.flush()?;
        Ok(())
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}
