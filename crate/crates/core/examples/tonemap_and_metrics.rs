//! μ-law tonemapping and the tonemapped PSNR/SSIM used for evaluation.
//!
//! ```text
//! cargo run --example tonemap_and_metrics
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fhdr::data::synthetic_hdr;
use fhdr::io::ImageHDR;
use fhdr::losses::{inverse_tonemap_scalar, tonemap_scalar, DEFAULT_MU};
use fhdr::metrics::{psnr_tonemapped, ssim_tonemapped};

fn main() -> fhdr::Result<()> {
    for h in [0.0, 0.001, 0.01, 0.1, 0.5, 1.0] {
        let t = tonemap_scalar(h, DEFAULT_MU);
        println!(
            "T({h:<5}) = {t:.6}   inverse {:.6}",
            inverse_tonemap_scalar(t, DEFAULT_MU)
        );
    }

    let gt = synthetic_hdr(64, 64, 2)?;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    println!("\nnoise sigma   PSNR (dB)   SSIM");
    for sigma in [0.0, 0.005, 0.02, 0.05, 0.1] {
        let noisy: Vec<f32> = gt
            .pixels()
            .iter()
            .map(|&v| (v * (1.0 + sigma * (rng.gen::<f32>() * 2.0 - 1.0))).max(0.0))
            .collect();
        let gen = ImageHDR::new(gt.width(), gt.height(), noisy)?;
        println!(
            "{sigma:<11}   {:>9.3}   {:.4}",
            psnr_tonemapped(&gen, &gt, DEFAULT_MU)?,
            ssim_tonemapped(&gen, &gt, DEFAULT_MU)?
        );
    }
    Ok(())
}
