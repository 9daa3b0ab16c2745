use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sonoseg::acoustics::{clean_target, sample_scene, simulate as run_simulation, Scene};
use sonoseg::filters::{self, FilterSpec, ImageFilter};
use sonoseg::metrics::{evaluate_dataset, Denoiser, EvalReport, Identity, SsimParams};
use sonoseg::model::{checkpoint, infer_image, infer_video, threshold_mask, NetworkDenoiser, Trainer};
use sonoseg::noise::{add_noise as corrupt, realized_snr_db};
use sonoseg::pipeline::{self, load_split, read_manifest, source_count, PipelineConfig, Split};
use sonoseg::tensor::{read_tensor, write_tensor, Metadata, Tensor};
use sonoseg::{FieldVideo, SilhouetteMask, SpectralImage};

use crate::error::{CliError, CliResult};
use crate::render::{write_png, Scale};

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn print_json(value: &impl Serialize) -> CliResult<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn write_image(path: &Path, img: &SpectralImage) -> CliResult<()> {
    let (t, m) = img.to_tensor(false);
    Ok(write_tensor(path, &t, &m)?)
}

fn write_mask(path: &Path, mask: &SilhouetteMask) -> CliResult<()> {
    let (t, m) = mask.to_tensor();
    Ok(write_tensor(path, &t, &m)?)
}

fn write_video(path: &Path, video: &FieldVideo) -> CliResult<()> {
    let (t, m) = video.to_tensor();
    Ok(write_tensor(path, &t, &m)?)
}

fn read_image(path: &Path) -> CliResult<SpectralImage> {
    let (t, m) = read_tensor(path)?;
    Ok(SpectralImage::from_tensor(&t, &m)?)
}

fn read_mask(path: &Path) -> CliResult<SilhouetteMask> {
    let (t, _) = read_tensor(path)?;
    Ok(SilhouetteMask::from_tensor(&t)?)
}

pub fn simulate(config: &Path, index: usize, scene: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg = PipelineConfig::load(config)?;
    let scene: Scene = match scene {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            let scene: Scene = serde_json::from_str(&text)?;
            scene.validate(&cfg.sim)?;
            scene
        }
        None => {
            let rng = cfg.rng().split_index("scene", index as u64);
            sample_scene(&rng, &cfg.scene, &cfg.sim, source_count(index))?
        }
    };
    let video = run_simulation(&scene, &cfg.sim)?;
    let mask = scene.mask(&cfg.sim);
    let clean = clean_target(&video, &mask, scene.freq_hz)?;
    create_dir(out)?;
    write_video(&out.join("video.sft"), &video)?;
    write_mask(&out.join("mask.sft"), &mask)?;
    write_image(&out.join("clean.sft"), &clean)?;
    write_json(&out.join("scene.json"), &scene)?;
    print_json(&serde_json::json!({
        "frames": video.frames(),
        "freq_hz": clean.freq_hz,
        "bin_index": clean.bin_index,
        "silhouette_area_frac": mask.area_fraction(),
    }))
}

pub fn make_dataset(config: &Path, out: Option<&Path>, workers: Option<usize>) -> CliResult<()> {
    let cfg = PipelineConfig::load(config)?;
    let out = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.dataset_dir.clone())
        .ok_or_else(|| CliError::Usage("no --out given and no output.dataset_dir in config".into()))?;
    let manifest = pipeline::make_dataset(&cfg, &out, workers)?;
    print_json(&serde_json::json!({
        "dataset": out,
        "scenes": manifest.scenes.len(),
        "train": manifest.splits.train.len(),
        "val": manifest.splits.val.len(),
        "test": manifest.splits.test.len(),
    }))
}

/// Uses the random streams of dataset scene `index`, so a clean image taken
/// from scene `index` is corrupted with that scene's noise levels.
pub fn add_noise(config: &Path, clean: &Path, mask: &Path, index: usize, out: &Path) -> CliResult<()> {
    let cfg = PipelineConfig::load(config)?;
    let clean = read_image(clean)?;
    let mask = read_mask(mask)?;
    let pdf = cfg.noise.pdf.load()?;
    let rng = cfg.rng().split_index("scene", index as u64);
    let levels = cfg.noise.sample_levels(&mut rng.split("snr"));
    let noisy = corrupt(&clean, &mask, levels, &pdf, &rng.split("noise"))?;
    let (t, m) = noisy.to_tensor(cfg.dataset.f32_storage);
    write_tensor(out, &t, &m)?;
    print_json(&serde_json::json!({
        "snr_sound_db": levels.snr_sound_db,
        "snr_sil_db": levels.snr_sil_db,
        "realized_snr_sound_db": realized_snr_db(&clean, &noisy, &mask, false),
        "realized_snr_sil_db": realized_snr_db(&clean, &noisy, &mask, true),
    }))
}

pub fn train(dataset: &Path, config: Option<&Path>, out: Option<&Path>, resume: bool) -> CliResult<()> {
    let cfg = match config {
        Some(path) => PipelineConfig::load(path)?,
        None => read_manifest(dataset)?.config,
    };
    let run = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.run_dir.clone())
        .ok_or_else(|| CliError::Usage("no --out given and no output.run_dir in config".into()))?;
    let train_set = load_split(dataset, Split::Train)?;
    let val_set = load_split(dataset, Split::Val)?;
    let ckpt = run.join("checkpoint");
    let mut trainer = if resume {
        let t = checkpoint::load_trainer(&ckpt)?;
        if t.cfg != cfg.train {
            return Err(sonoseg::Error::CheckpointMismatch(
                "training config differs from the checkpoint".into(),
            )
            .into());
        }
        t
    } else {
        Trainer::new(cfg.train, &cfg.rng().split("train"), train_set.len())?
    };
    create_dir(&run)?;
    std::fs::write(run.join("config.toml"), cfg.to_toml()?).map_err(|e| CliError::io(&run, e))?;
    trainer.fit(&train_set, &val_set, |t, row| {
        checkpoint::save(&ckpt, t)?;
        eprintln!("{}", serde_json::to_string(row)?);
        Ok(())
    })?;
    checkpoint::save(&ckpt, &trainer)?;
    checkpoint::write_history(&run.join("history.csv"), &trainer.history)?;
    if val_set.is_empty() {
        return print_json(&serde_json::json!({ "epochs": trainer.epoch, "val": Value::Null }));
    }
    let net = trainer.best_network();
    let den = NetworkDenoiser {
        net: &net,
        threshold: cfg.train.threshold,
    };
    let report = evaluate_dataset(&den, &val_set, &ssim_params(cfg.train.peak))?;
    report.write_csv(&run.join("val_report.csv"))?;
    report.write_summary_json(&run.join("val_summary.json"))?;
    print_json(&serde_json::json!({ "epochs": trainer.epoch, "val": report.summary() }))
}

fn ssim_params(peak: f64) -> SsimParams {
    SsimParams {
        peak,
        ..Default::default()
    }
}

enum Input {
    Image(SpectralImage, Metadata),
    Video(FieldVideo),
}

/// Reads a spectral image or a field video. Tensors without a `kind` key are
/// taken as videos when they carry `fs` and `dx`.
fn read_input(path: &Path) -> CliResult<Input> {
    let (t, meta) = read_tensor(path)?;
    let kind = meta.get("kind").and_then(Value::as_str).map(str::to_owned);
    let video = |t: &Tensor, m: &Metadata| -> CliResult<Input> { Ok(Input::Video(FieldVideo::from_tensor(t, m)?)) };
    match kind.as_deref() {
        Some("spectral_image") => Ok(Input::Image(SpectralImage::from_tensor(&t, &meta)?, meta)),
        Some("field_video") => video(&t, &meta),
        Some(other) => Err(CliError::Usage(format!(
            "{}: expected a spectral_image or field_video tensor, got kind {other:?}",
            path.display()
        ))),
        None if meta.contains_key("fs") && meta.contains_key("dx") => video(&t, &meta),
        None => Ok(Input::Image(SpectralImage::from_tensor(&t, &meta)?, meta)),
    }
}

fn peak_or(peak: Option<f64>, values: &[f64]) -> f64 {
    peak.unwrap_or_else(|| {
        let m = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if m > 0.0 {
            m
        } else {
            1.0
        }
    })
}

fn render_image(out: &Path, img: &SpectralImage, mask: &SilhouetteMask, peak: f64) -> CliResult<()> {
    let (w, h) = (img.width(), img.height());
    let scale = Scale::symmetric(peak)?;
    write_png(&out.join("denoised_re.png"), &img.re, w, h, scale)?;
    write_png(&out.join("denoised_im.png"), &img.im, w, h, scale)?;
    let labels: Vec<f64> = mask.labels().iter().map(|&l| f64::from(l)).collect();
    write_png(&out.join("mask.png"), &labels, w, h, Scale { min: 0.0, max: 1.0 })
}

/// Renders every frame with one color scale.
fn render_video(out: &Path, video: &FieldVideo, mask: &SilhouetteMask, peak: f64) -> CliResult<()> {
    let (w, h) = (video.width(), video.height());
    let scale = Scale::symmetric(peak)?;
    let frames = out.join("frames");
    create_dir(&frames)?;
    for t in 0..video.frames() {
        write_png(&frames.join(format!("frame_{t:05}.png")), &video.frame(t), w, h, scale)?;
    }
    let labels: Vec<f64> = mask.labels().iter().map(|&l| f64::from(l)).collect();
    write_png(&out.join("mask.png"), &labels, w, h, Scale { min: 0.0, max: 1.0 })
}

fn write_image_outputs(out: &Path, img: &SpectralImage, mask: &SilhouetteMask, peak: f64) -> CliResult<()> {
    create_dir(out)?;
    write_image(&out.join("denoised.sft"), img)?;
    write_mask(&out.join("mask.sft"), mask)?;
    render_image(out, img, mask, peak)?;
    print_json(&serde_json::json!({
        "kind": "spectral_image",
        "width": img.width(),
        "height": img.height(),
        "scale": [-peak, peak],
    }))
}

fn write_video_outputs(out: &Path, video: &FieldVideo, mask: &SilhouetteMask, peak: f64) -> CliResult<()> {
    create_dir(out)?;
    write_video(&out.join("denoised.sft"), video)?;
    write_mask(&out.join("mask.sft"), mask)?;
    render_video(out, video, mask, peak)?;
    print_json(&serde_json::json!({
        "kind": "field_video",
        "width": video.width(),
        "height": video.height(),
        "frames": video.frames(),
        "scale": [-peak, peak],
    }))
}

pub fn infer(ckpt: &Path, input: &Path, out: &Path, threshold: Option<f64>, peak: Option<f64>) -> CliResult<()> {
    let manifest = checkpoint::read_manifest(ckpt)?;
    let net = checkpoint::load_network(ckpt)?;
    let threshold = threshold.unwrap_or(manifest.train.threshold);
    match read_input(input)? {
        Input::Image(img, _) => {
            let (den, prob) = infer_image(&net, &img)?;
            let mask = threshold_mask(&prob, img.width(), img.height(), threshold);
            let peak = peak.unwrap_or(manifest.train.peak);
            write_image_outputs(out, &den, &mask, peak)
        }
        Input::Video(video) => {
            let (den, mask) = infer_video(&net, &video, threshold)?;
            let peak = peak_or(peak, den.data());
            write_video_outputs(out, &den, &mask, peak)
        }
    }
}

fn read_filter_spec(path: &Path) -> CliResult<FilterSpec> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    toml::from_str(&text).map_err(|e| sonoseg::Error::Config(format!("{}: {e}", path.display())).into())
}

pub fn filter(spec: &Path, input: &Path, out: &Path, dx: Option<f64>, peak: Option<f64>) -> CliResult<()> {
    let spec = read_filter_spec(spec)?;
    match read_input(input)? {
        Input::Image(img, meta) => {
            let dx = dx
                .or_else(|| meta.get("dx").and_then(Value::as_f64))
                .ok_or_else(|| CliError::Usage("spectral-image input needs --dx or a dx key".into()))?;
            let (den, mask) = ImageFilter { spec, dx }.denoise(&img)?;
            let peak = peak_or(peak, &img.to_channels());
            write_image_outputs(out, &den, &mask, peak)
        }
        Input::Video(video) => {
            let den = filters::apply(&video, &spec)?;
            let mask = SilhouetteMask::empty(video.width(), video.height());
            let peak = peak_or(peak, video.data());
            write_video_outputs(out, &den, &mask, peak)
        }
    }
}

pub enum EvalTarget {
    Checkpoint(PathBuf),
    Filter(PathBuf),
    Identity,
}

pub fn evaluate(dataset: &Path, target: &EvalTarget, split: &str, out: &Path, threshold: Option<f64>) -> CliResult<()> {
    let manifest = read_manifest(dataset)?;
    let split: Split = split.parse()?;
    let pairs = load_split(dataset, split)?;
    let cfg = &manifest.config;
    let report: EvalReport = match target {
        EvalTarget::Checkpoint(dir) => {
            let m = checkpoint::read_manifest(dir)?;
            let net = checkpoint::load_network(dir)?;
            let den = NetworkDenoiser {
                net: &net,
                threshold: threshold.unwrap_or(m.train.threshold),
            };
            evaluate_dataset(&den, &pairs, &ssim_params(m.train.peak))?
        }
        EvalTarget::Filter(path) => {
            let den = ImageFilter {
                spec: read_filter_spec(path)?,
                dx: cfg.sim.dx,
            };
            evaluate_dataset(&den, &pairs, &ssim_params(cfg.train.peak))?
        }
        EvalTarget::Identity => evaluate_dataset(&Identity, &pairs, &ssim_params(cfg.train.peak))?,
    };
    create_dir(out)?;
    report.write_csv(&out.join("report.csv"))?;
    report.write_summary_json(&out.join("summary.json"))?;
    report.write_scatter(out)?;
    print_json(&serde_json::json!({
        "summary": report.summary(),
        "input_psnr_db": report.mean_input_psnr_db(),
    }))
}
