//! Runs an untrained default FHDR on one LDR image and prints what each
//! feedback iteration produces, plus the layer audit.
//!
//! ```text
//! cargo run --release --example forward_pass -- [image.ppm] [iterations]
//! ```

use std::path::PathBuf;
use std::time::Instant;

use fhdr::data::{synth_ldr, synthetic_hdr, CameraCurve, SynthSpec};
use fhdr::io::read_ppm_file;
use fhdr::model::{fhdr_infer, layer_audit, FhdrParams, ModelConfig};

fn main() -> fhdr::Result<()> {
    let mut args = std::env::args().skip(1);
    let input = args.next().map(PathBuf::from);
    let n: usize = args.next().map_or(4, |s| s.parse().expect("iterations"));

    let ldr = match input {
        Some(path) => read_ppm_file(&path)?,
        None => synth_ldr(
            &synthetic_hdr(64, 48, 1)?,
            &SynthSpec::new(0.0, CameraCurve::gamma(1.0 / 2.2)?),
        )?,
    };
    let cfg = ModelConfig {
        iterations: n,
        ..ModelConfig::default()
    };
    let audit = layer_audit(&cfg)?;
    println!(
        "conv layers: FEB {} / FBB {} / HRB {}; widest DDB concat {} channels",
        audit.feb, audit.fbb, audit.hrb, audit.ddb_concat_channels
    );

    let params = FhdrParams::<f32>::init(&cfg, 0)?;
    println!("{} parameters, shared by all {n} iterations", params.param_count());
    let start = Instant::now();
    let outputs = fhdr_infer(&params, &ldr.to_tensor(), n)?;
    println!(
        "{}x{} input, forward took {:.1?}",
        ldr.width(),
        ldr.height(),
        start.elapsed()
    );
    for (t, out) in outputs.iter().enumerate() {
        let data = out.data();
        let mean = data.iter().map(|&v| v as f64).sum::<f64>() / data.len() as f64;
        let max = data.iter().cloned().fold(0.0f32, f32::max);
        println!("iteration {}: mean {mean:.4}, max {max:.4}", t + 1);
    }
    Ok(())
}
