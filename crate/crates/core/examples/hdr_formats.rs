//! Writes one HDR image as PFM, flat RGBE and run-length RGBE, reads each
//! back and reports sizes and round-trip error.
//!
//! ```text
//! cargo run --example hdr_formats -- [out_dir]
//! ```

use std::path::PathBuf;

use fhdr::data::{synth_ldr, synthetic_hdr, CameraCurve, SynthSpec};
use fhdr::io::{read_pfm, read_ppm, read_rgbe, write_pfm, write_ppm, write_rgbe_with, ImageHDR, RgbeEncoding};

fn max_rel_err(a: &ImageHDR, b: &ImageHDR) -> f64 {
    a.pixels()
        .chunks(3)
        .zip(b.pixels().chunks(3))
        .map(|(p, q)| {
            let m = p.iter().cloned().fold(0.0f32, f32::max).max(1e-30) as f64;
            p.iter()
                .zip(q)
                .map(|(x, y)| (*x as f64 - *y as f64).abs() / m)
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

fn main() -> fhdr::Result<()> {
    let out = std::env::args().nth(1).map_or_else(std::env::temp_dir, PathBuf::from);
    std::fs::create_dir_all(&out)?;
    let img = synthetic_hdr(96, 64, 5)?;
    println!("source: {}x{}, max {:.3}", img.width(), img.height(), img.max_value());

    let pfm = write_pfm(&img);
    let back = read_pfm(&pfm)?;
    println!("PFM       {:>7} bytes, bit-exact: {}", pfm.len(), back == img);

    for (label, enc) in [("RGBE flat", RgbeEncoding::Flat), ("RGBE rle ", RgbeEncoding::Rle)] {
        let bytes = write_rgbe_with(&img, enc);
        let back = read_rgbe(&bytes)?;
        println!(
            "{label} {:>7} bytes, max error / pixel max: {:.2e} (bound {:.2e})",
            bytes.len(),
            max_rel_err(&img, &back),
            1.0 / 128.0
        );
        std::fs::write(
            out.join(format!("scene_{}.hdr", label.trim().replace(' ', "_"))),
            &bytes,
        )?;
    }

    let ldr = synth_ldr(&img, &SynthSpec::new(1.0, CameraCurve::gamma(1.0 / 2.2)?))?;
    let ppm = write_ppm(&ldr);
    println!("PPM       {:>7} bytes, exact: {}", ppm.len(), read_ppm(&ppm)? == ldr);
    std::fs::write(out.join("scene.pfm"), &pfm)?;
    std::fs::write(out.join("scene.ppm"), &ppm)?;
    println!("files written to {}", out.display());
    Ok(())
}
