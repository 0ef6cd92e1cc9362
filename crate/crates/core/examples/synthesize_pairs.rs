//! Builds a small paired dataset from procedural HDR scenes: several
//! exposures and camera curves per scene, random crops, then a reload
//! through the dataset scanner.
//!
//! ```text
//! cargo run --example synthesize_pairs -- [out_dir]
//! ```

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fhdr::data::{
    augment_hdr, load_dataset, normalize_hdr, synth_ldr, synthetic_hdr, AugmentConfig, CameraCurve, SynthSpec,
};
use fhdr::io::{write_hdr_file, write_ppm_file};

fn main() -> fhdr::Result<()> {
    let root = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("fhdr_pairs"), PathBuf::from);
    for sub in ["ldr", "hdr"] {
        std::fs::create_dir_all(root.join(sub))?;
    }
    let curves = CameraCurve::standard_set();
    println!(
        "curves: {}",
        curves
            .iter()
            .map(CameraCurve::descriptor)
            .collect::<Vec<_>>()
            .join(", ")
    );

    let crop = AugmentConfig {
        out_width: 32,
        out_height: 32,
        min_crop_scale: 0.5,
        crop: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for scene in 0..3u64 {
        let src = synthetic_hdr(64, 64, scene)?;
        for k in 0..3u64 {
            let hdr = normalize_hdr(&augment_hdr(&src, &crop, scene * 10 + k)?);
            let spec = SynthSpec::sample(&mut rng, (-3.0, 3.0), &curves)?;
            let ldr = synth_ldr(&hdr, &spec)?;
            let clipped = ldr.pixels().iter().filter(|&&v| v == 255).count() as f64 / ldr.pixels().len() as f64;
            println!(
                "scene {scene} #{k}: EV {:+.2}, {:<16} {:>5.1}% clipped",
                spec.exposure_ev,
                spec.curve.descriptor(),
                100.0 * clipped
            );
            let stem = format!("s{scene}_{k}");
            write_ppm_file(&root.join("ldr").join(format!("{stem}.ppm")), &ldr)?;
            write_hdr_file(&root.join("hdr").join(format!("{stem}.pfm")), &hdr)?;
        }
    }

    let ds = load_dataset(&root)?;
    println!(
        "reloaded {} pairs from {} ({} skipped)",
        ds.pairs.len(),
        root.display(),
        ds.skipped.len()
    );
    Ok(())
}
