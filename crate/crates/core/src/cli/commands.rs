use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::manifest::RunManifest;
use super::{AblateArgs, EvalArgs, Failure, GradcheckArgs, InferArgs, ScopeArg, SynthArgs, TrainArgs};
use crate::data::{
    augment_hdr, load_dataset, normalize_hdr, synth_ldr, AugmentConfig, CameraCurve, ImagePair, SynthSpec,
};
use crate::error::Error;
use crate::gradcheck::{self, CheckOptions, Scope};
use crate::io::{is_hdr_path, read_hdr_file, read_ppm_file, write_hdr_file, write_ppm_file, ImageHDR, ImageLDR};
use crate::losses::{tonemap_scalar, PerceptualExtractor, DEFAULT_MU};
use crate::model::fhdr_infer;
use crate::train::{ablate_iterations, decode_extractor, evaluate, train_to_dir, Checkpoint, Trainer};

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}

fn parse_curves(spec: &str) -> Result<Vec<CameraCurve>, Failure> {
    if spec.trim() == "standard" {
        return Ok(CameraCurve::standard_set());
    }
    spec.split(',')
        .map(|s| CameraCurve::parse(s).map_err(|e| usage(e.to_string())))
        .collect()
}

fn list_hdr_sources(dir: &Path) -> crate::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        if path.is_file() && is_hdr_path(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

pub fn synth(a: &SynthArgs, argv: &[String]) -> CmdResult {
    let curves = parse_curves(&a.curves)?;
    if a.per_source == 0 {
        return Err(usage("--per-source must be at least 1"));
    }
    let sources = list_hdr_sources(&a.hdr_dir)?;
    let config = format!(
        "size = {:?}\nev_range = {}:{}\ncurves = {}\nper_source = {}\n",
        a.size,
        a.ev_range.0,
        a.ev_range.1,
        curves.iter().map(CameraCurve::descriptor).collect::<Vec<_>>().join(","),
        a.per_source
    );
    let manifest = RunManifest::begin(&a.out_dir, "synth", argv, config, a.seed)?;
    let (ldr_dir, hdr_dir) = (a.out_dir.join("ldr"), a.out_dir.join("hdr"));
    for d in [&ldr_dir, &hdr_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::file(d, e))?;
    }
    let csv_path = a.out_dir.join("manifest.csv");
    let mut csv = csv::Writer::from_path(&csv_path).map_err(Error::from)?;
    csv.write_record(["stem", "width", "height", "norm_scale", "exposure_ev", "curve"])
        .map_err(Error::from)?;

    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut written = 0;
    for src_path in &sources {
        let src = match read_hdr_file(src_path) {
            Ok(img) => img,
            Err(e) => {
                warn(format_args!("skipping {}: {e}", src_path.display()));
                continue;
            }
        };
        let src_stem = src_path.file_stem().and_then(|s| s.to_str()).unwrap_or("source");
        for k in 0..a.per_source {
            let spec = SynthSpec::sample(&mut rng, a.ev_range, &curves)?;
            let crop_seed: u64 = rng.gen();
            let hdr = match a.size {
                Some((w, h)) => {
                    let cfg = AugmentConfig {
                        out_width: w,
                        out_height: h,
                        min_crop_scale: 0.5,
                        crop: true,
                    };
                    match augment_hdr(&src, &cfg, crop_seed) {
                        Ok(img) => img,
                        Err(e) => {
                            warn(format_args!("skipping {}: {e}", src_path.display()));
                            break;
                        }
                    }
                }
                None => src.clone(),
            };
            let hdr = normalize_hdr(&hdr);
            let ldr = synth_ldr(&hdr, &spec)?;
            let stem = format!("{src_stem}_{k:02}");
            write_ppm_file(&ldr_dir.join(format!("{stem}.ppm")), &ldr)?;
            write_hdr_file(&hdr_dir.join(format!("{stem}.pfm")), &hdr)?;
            csv.write_record([
                stem,
                hdr.width().to_string(),
                hdr.height().to_string(),
                format!("{:e}", hdr.norm_scale),
                format!("{}", spec.exposure_ev),
                spec.curve.descriptor(),
            ])
            .map_err(Error::from)?;
            written += 1;
        }
    }
    csv.flush().map_err(Error::from)?;
    if written == 0 {
        return Err(Failure::Failed(format!(
            "no pairs written from {}",
            a.hdr_dir.display()
        )));
    }
    println!("wrote {written} pairs to {}", a.out_dir.display());
    manifest.finish([csv_path, ldr_dir, hdr_dir]).map_err(Failure::from)
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig, Failure> {
    match path {
        Some(p) => RunConfig::load(p).map_err(usage),
        None => Ok(RunConfig::default()),
    }
}

fn apply_training_flags(
    cfg: &mut RunConfig,
    iterations: Option<usize>,
    epochs: Option<usize>,
    seed: Option<u64>,
    batch_size: Option<usize>,
    decay_start: Option<usize>,
) -> Result<(), Failure> {
    if let Some(n) = iterations {
        cfg.model.iterations = n;
    }
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    if let Some(b) = batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(e) = epochs {
        cfg.train.epochs = e;
        // Keep the constant-then-linear shape when only the length changes.
        if decay_start.is_none() && !cfg.is_explicit("decay_start_epoch") {
            cfg.train.decay_start_epoch = (e / 2).max(1);
        }
    }
    if let Some(d) = decay_start {
        cfg.train.decay_start_epoch = d;
    }
    cfg.validate().map_err(usage)
}

fn load_pairs(root: &Path) -> Result<Vec<ImagePair>, Failure> {
    let ds = load_dataset(root)?;
    ds.warnings.iter().for_each(warn);
    for (stem, reason) in &ds.skipped {
        warn(format_args!("skipping pair {stem}: {reason}"));
    }
    if ds.pairs.is_empty() {
        return Err(Failure::Failed(format!("no usable pairs under {}", root.display())));
    }
    Ok(ds.pairs)
}

fn load_extractor(cfg: &RunConfig) -> Result<PerceptualExtractor<f32>, Failure> {
    match &cfg.extractor_weights {
        Some(p) => {
            let bytes = std::fs::read(p).map_err(|e| Error::file(p, e))?;
            Ok(decode_extractor(&bytes)?)
        }
        None => Ok(PerceptualExtractor::default()),
    }
}

fn checkpoint_files(out: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(out)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "fhdr"))
        .collect();
    files.sort();
    files
}

pub fn train(a: &TrainArgs, argv: &[String]) -> CmdResult {
    let mut cfg = load_run_config(a.config.as_deref())?;
    apply_training_flags(&mut cfg, a.iterations, a.epochs, a.seed, a.batch_size, a.decay_start)?;
    let resume = match &a.resume {
        Some(p) => {
            let ckpt = Checkpoint::load(p)?;
            // Without explicit model settings the checkpoint defines the model.
            let model_keys = [
                "base_channels",
                "growth_rate",
                "num_ddb",
                "dilated_layers_per_ddb",
                "iterations",
                "dilation",
            ];
            if a.iterations.is_some() || model_keys.iter().any(|k| cfg.is_explicit(k)) {
                ckpt.check_config(&cfg.model)?;
            }
            cfg.model = ckpt.config().clone();
            Some(ckpt)
        }
        None => None,
    };

    let pairs = load_pairs(&a.data)?;
    let eval_pairs = match &a.eval_data {
        Some(p) => load_pairs(p)?,
        None => pairs.clone(),
    };
    let extractor = load_extractor(&cfg)?;
    let manifest = RunManifest::begin(&a.out, "train", argv, cfg.to_text(), cfg.train.seed)?;

    let mut trainer = match resume {
        Some(ckpt) => Trainer::resume(ckpt, &cfg.train, pairs, extractor)?,
        None => Trainer::new(&cfg.model, &cfg.train, pairs, extractor)?,
    };
    println!(
        "training {} parameters, n = {}, {} pairs, {} epochs",
        trainer.params().param_count(),
        cfg.model.iterations,
        trainer.pairs().len(),
        cfg.train.epochs
    );
    let outputs = train_to_dir(&mut trainer, &a.out, Some(&eval_pairs), |e| {
        println!(
            "epoch {:>4}  loss {:.6}  lr {:.3e}  {:.1}s",
            e.epoch, e.mean_loss, e.lr, e.seconds
        );
    })?;
    let mut files = vec![outputs.log_path];
    files.extend(checkpoint_files(&a.out));
    manifest.finish(files).map_err(Failure::from)
}

pub fn eval(a: &EvalArgs, argv: &[String]) -> CmdResult {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    if let Some(p) = &a.config {
        let expected = RunConfig::load(p).map_err(usage)?;
        ckpt.check_config(&expected.model)?;
    }
    let mut params = ckpt.params;
    if let Some(n) = a.iterations {
        if n == 0 {
            return Err(usage("--iterations must be at least 1"));
        }
        params = params.with_iterations(n)?;
    }
    if !(a.mu > 0.0) {
        return Err(usage("--mu must be positive"));
    }
    let pairs = load_pairs(&a.data)?;
    let manifest = RunManifest::begin(&a.out, "eval", argv, format!("{}\nmu = {}\n", params.config(), a.mu), 0)?;
    let report = evaluate(&params, &pairs, a.mu)?;
    for (id, reason) in &report.errors {
        warn(format_args!("could not evaluate {id}: {reason}"));
    }
    if report.per_iteration.first().is_none_or(|r| r.images.is_empty()) {
        return Err(Failure::Failed("no pair could be evaluated".into()));
    }
    report.write_dir(&a.out)?;
    for t in 1..=report.iterations() {
        println!(
            "iteration {t}: mean PSNR {:.3} dB  mean SSIM {:.4}",
            report.mean_psnr(t),
            report.mean_ssim(t)
        );
    }
    let mut files = vec![a.out.join("eval.csv"), a.out.join("summary.csv")];
    files.extend((1..=report.iterations()).map(|t| a.out.join(format!("metrics_t{t}.csv"))));
    manifest.finish(files).map_err(Failure::from)
}

fn with_suffix(path: &Path, suffix: &str, ext: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    path.with_file_name(format!("{stem}{suffix}.{ext}"))
}

pub fn infer(a: &InferArgs) -> CmdResult {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let n = ckpt.config().iterations;
    let wanted: Vec<usize> = match a.iteration.as_deref() {
        None => vec![n],
        Some("all") => (1..=n).collect(),
        Some(s) => {
            let t: usize = s
                .parse()
                .map_err(|_| usage(format!("--iteration must be a number or \"all\", got {s:?}")))?;
            if t == 0 || t > n {
                return Err(usage(format!("--iteration {t} is outside 1..={n}")));
            }
            vec![t]
        }
    };
    let ext = a
        .out
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("pfm")
        .to_ascii_lowercase();
    if !is_hdr_path(&a.out) {
        return Err(usage(format!(
            "--out must end in .pfm or .hdr, got {}",
            a.out.display()
        )));
    }
    let ldr = read_ppm_file(&a.input)?;
    let last = *wanted.last().expect("at least one iteration");
    let outputs = fhdr_infer(&ckpt.params, &ldr.to_tensor::<f32>(), last)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    for &t in &wanted {
        let img = ImageHDR::from_tensor(&outputs[t - 1], 0)?;
        let path = if wanted.len() > 1 {
            with_suffix(&a.out, &format!("_t{t}"), &ext)
        } else {
            a.out.clone()
        };
        write_hdr_file(&path, &img)?;
        println!("wrote {}", path.display());
        if a.tonemap_preview {
            let values: Vec<f64> = img
                .pixels()
                .iter()
                .map(|&v| tonemap_scalar(v as f64, DEFAULT_MU))
                .collect();
            let preview = ImageLDR::from_unit_values(img.width(), img.height(), &values)?;
            let p = with_suffix(&path, "_preview", "ppm");
            write_ppm_file(&p, &preview)?;
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> CmdResult {
    let opts = CheckOptions {
        seed: a.seed,
        conv_grad_fault: a.inject_fault,
        ..CheckOptions::default()
    };
    let scopes: &[Scope] = match a.scope {
        ScopeArg::Ops => &[Scope::Ops],
        ScopeArg::Model => &[Scope::Model],
        ScopeArg::All => &[Scope::Ops, Scope::Model],
    };
    let mut failing = Vec::new();
    for &scope in scopes {
        for r in gradcheck::run(scope, &opts)? {
            println!(
                "{:<24} max_rel_err {:.3e}  compared {:>5}  kinks {:>3}  {}",
                r.name,
                r.max_rel_err,
                r.compared,
                r.kinks_skipped,
                if r.passed { "PASS" } else { "FAIL" }
            );
            if !r.passed {
                failing.push(r.name);
            }
        }
    }
    if failing.is_empty() {
        Ok(())
    } else {
        Err(Failure::Failed(format!(
            "gradient check failed for {}",
            failing.join(", ")
        )))
    }
}

pub fn ablate(a: &AblateArgs, argv: &[String]) -> CmdResult {
    let mut cfg = load_run_config(a.config.as_deref())?;
    apply_training_flags(&mut cfg, None, a.epochs, a.seed, None, None)?;
    if a.n_list.is_empty() || a.n_list.contains(&0) {
        return Err(usage("--n-list needs positive iteration counts"));
    }
    let pairs = load_pairs(&a.data)?;
    let eval_pairs = match &a.eval_data {
        Some(p) => load_pairs(p)?,
        None => pairs.clone(),
    };
    let extractor = load_extractor(&cfg)?;
    let manifest = RunManifest::begin(&a.out, "ablate", argv, cfg.to_text(), cfg.train.seed)?;
    let report = ablate_iterations(&cfg.model, &cfg.train, &pairs, &eval_pairs, &extractor, &a.n_list)?;
    let csv_path = a.out.join("ablation.csv");
    report.write_csv(&csv_path)?;
    let counts_path = a.out.join("param_counts.csv");
    let mut text = String::from("n,param_count\n");
    for (n, c) in &report.param_counts {
        text += &format!("{n},{c}\n");
    }
    std::fs::write(&counts_path, text).map_err(|e| Error::file(&counts_path, e))?;
    for &n in &a.n_list {
        if let Some(last) = report.curve(n).last() {
            println!("n = {n}: final PSNR {last:.3} dB");
        }
    }
    manifest.finish([csv_path, counts_path]).map_err(Failure::from)
}
