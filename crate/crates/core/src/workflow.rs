//! End-to-end runs shared by the command line and the acceptance suite:
//! corpus generation, a training run directory, evaluation and probes.

use std::cell::RefCell;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use haze_tensor::{Scalar, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, RUN_CONFIG_FILE};
use crate::data_pipeline::{center_crop, load_samples, make_loader, SceneSample};
use crate::density_control::{encode_pair, sweep};
use crate::error::{invalid, io_err, Error, Result};
use crate::evalprobe::{
    collinearity, diversity, embedder_by_name, equivariance_residual, frechet_distance, style_spread, latent_domain_probe, psnr, spearman, ssim,
    ProbeDataset, ProbeResult,
};
use crate::grid::{stack_working, ImageGrid};
use crate::manifest::{Manifest, Split, MANIFEST_FILE};
use crate::networks::{Networks, CLEAR_CLASS, HAZE_CLASS};
use crate::objectives::LogRecord;
use crate::scene_synth::build_corpus;
use crate::trainer::{checkpoint, restore, TrainState, Trainer};

pub const LOSS_LOG_FILE: &str = "loss.log";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn checkpoint_name(iteration: u64) -> String {
    format!("ckpt_{iteration:07}.ckpt")
}

/// Build the corpus described by `cfg` under `cfg.paths.corpus`.
pub fn generate_corpus(cfg: &RunConfig) -> Result<Manifest> {
    cfg.validate()?;
    build_corpus(cfg.scenes, &cfg.paths.corpus, &cfg.corpus)
}

pub fn load_corpus(dir: &Path) -> Result<Manifest> {
    Manifest::load(&dir.join(MANIFEST_FILE))
}

/// What a finished training run leaves behind.
pub struct TrainOutcome<T: Scalar> {
    pub state: TrainState<T>,
    pub records: Vec<LogRecord>,
    pub run_dir: PathBuf,
    pub final_checkpoint: PathBuf,
}

/// Train per `cfg` into `cfg.paths.run_dir`, writing the config, the loss
/// log (one record per line), periodic checkpoints and a final checkpoint.
/// With `resume`, training continues from that checkpoint and the log is
/// appended to.
pub fn train_run<T: Scalar + Send>(
    cfg: &RunConfig,
    manifest: &Manifest,
    resume: Option<&Path>,
    mut progress: impl FnMut(&LogRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if manifest.count(Split::Train) == 0 {
        return Err(invalid("corpus has no training scenes"));
    }
    let loader = Arc::new(make_loader(manifest, &cfg.pipeline, Split::Train)?);
    let mut trainer = Trainer::<T>::new(&cfg.network, &cfg.train, &cfg.objective)?;
    if let Some(path) = resume {
        trainer.state = restore(path, Some(&cfg.network))?;
    }
    let dir = cfg.paths.run_dir.clone();
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    cfg.save(&dir.join(RUN_CONFIG_FILE))?;
    let log_path = dir.join(LOSS_LOG_FILE);
    let file = if resume.is_some() {
        OpenOptions::new().create(true).append(true).open(&log_path)
    } else {
        File::create(&log_path)
    }
    .map_err(io_err(&log_path))?;
    let log = RefCell::new(BufWriter::new(file));
    let mut records = Vec::new();
    trainer.run(
        &loader,
        cfg.train.total_iters,
        |r| {
            writeln!(log.borrow_mut(), "{}", r.to_line()).map_err(io_err(&log_path))?;
            progress(r);
            records.push(*r);
            Ok(())
        },
        |state| {
            log.borrow_mut().flush().map_err(io_err(&log_path))?;
            checkpoint(state, &dir.join(checkpoint_name(state.iteration)))
        },
    )?;
    log.borrow_mut().flush().map_err(io_err(&log_path))?;
    let final_checkpoint = dir.join(FINAL_CHECKPOINT);
    checkpoint(&trainer.state, &final_checkpoint)?;
    Ok(TrainOutcome { state: trainer.state, records, run_dir: dir, final_checkpoint })
}

/// Held-out scenes of `split`, center-cropped to `crop`, at most `max` (`0` = all).
pub fn cropped_samples(manifest: &Manifest, split: Split, crop: usize, max: usize) -> Result<Vec<SceneSample>> {
    let mut samples = load_samples(manifest, split)?;
    if max > 0 {
        samples.truncate(max);
    }
    for s in &mut samples {
        s.clear = center_crop(&s.clear, crop)?;
        s.haze = center_crop(&s.haze, crop)?;
    }
    Ok(samples)
}

fn one<T: Scalar>(image: &ImageGrid) -> Var<T> {
    Var::constant(image.to_working::<T>())
}

/// `G(E^c(x), E^s(x))`.
pub fn self_reconstruct<T: Scalar>(nets: &Networks<T>, image: &ImageGrid) -> Result<ImageGrid> {
    let x = one::<T>(image);
    let y = nets.generate(&nets.content_encode(&x)?, &nets.style_encode(&x)?)?;
    ImageGrid::from_working(y.value(), 0)
}

/// One named metric value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub value: f64,
    pub detail: String,
}

impl MetricRecord {
    fn new(metric: &str, value: f64, detail: impl Into<String>) -> Self {
        Self { metric: metric.into(), value, detail: detail.into() }
    }
}

/// Plain-text table of records.
pub fn format_table(records: &[MetricRecord]) -> String {
    let width = records.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<width$}  {:>12}  detail\n", "metric", "value");
    for r in records {
        out.push_str(&format!("{:<width$}  {:>12.6}  {}\n", r.metric, r.value, r.detail));
    }
    out
}

/// One JSON object per line.
pub fn format_jsonl(records: &[MetricRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Config(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len().max(1) as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match v.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => v[n / 2],
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Reconstruction and synthesis quality over held-out scenes.
///
/// Synthesized haze is `G(E^c(x_j), E^s(x_i))` for the scene's own pair and
/// is compared against the physically rendered haze image.
pub fn evaluate<T: Scalar>(nets: &Networks<T>, samples: &[SceneSample], cfg: &RunConfig) -> Result<Vec<MetricRecord>> {
    if samples.len() < 2 {
        return Err(invalid("evaluation needs at least 2 held-out scenes"));
    }
    let embedder = embedder_by_name(&cfg.eval.embedder)?;
    let (mut rc_psnr, mut rc_ssim, mut rh_psnr, mut rh_ssim, mut sh_psnr, mut sh_ssim) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let (mut real, mut fake, mut synthesized) = (Vec::new(), Vec::new(), Vec::new());
    for s in samples {
        let rc = self_reconstruct(nets, &s.clear)?;
        let rh = self_reconstruct(nets, &s.haze)?;
        let sh = encode_pair(nets, &s.clear, &s.haze)?.render(nets, 1.0)?;
        rc_psnr.push(psnr(&rc, &s.clear)?);
        rc_ssim.push(ssim(&rc, &s.clear, &cfg.eval.ssim)?);
        rh_psnr.push(psnr(&rh, &s.haze)?);
        rh_ssim.push(ssim(&rh, &s.haze, &cfg.eval.ssim)?);
        sh_psnr.push(psnr(&sh, &s.haze)?);
        sh_ssim.push(ssim(&sh, &s.haze, &cfg.eval.ssim)?);
        real.push(embedder.embed(&s.haze)?);
        fake.push(embedder.embed(&sh)?);
        synthesized.push(sh);
    }
    let n = samples.len();
    let stages = embedder.stages(&samples[0].haze)?.len();
    let weights = vec![1.0; stages];
    let div = diversity(&synthesized, embedder.as_ref(), &weights, cfg.eval.diversity_pairs, cfg.eval.probe.seed)?;
    let scenes = format!("{n} scenes");
    Ok(vec![
        MetricRecord::new("recon_clear_psnr", mean(&rc_psnr), &scenes),
        MetricRecord::new("recon_clear_ssim", mean(&rc_ssim), &scenes),
        MetricRecord::new("recon_haze_psnr", mean(&rh_psnr), &scenes),
        MetricRecord::new("recon_haze_ssim", mean(&rh_ssim), &scenes),
        MetricRecord::new("synth_haze_psnr", mean(&sh_psnr), &scenes),
        MetricRecord::new("synth_haze_ssim", mean(&sh_ssim), &scenes),
        MetricRecord::new("frechet_synth_vs_real", frechet_distance(&fake, &real)?, embedder.name()),
        MetricRecord::new("diversity", div, format!("{} pairs, {}", cfg.eval.diversity_pairs, embedder.name())),
    ])
}

/// Results of every disentanglement probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub style: ProbeResult,
    pub content: ProbeResult,
    pub image: ProbeResult,
    /// Re-encoded sweep codes, one residual per scene.
    pub collinearity_reencoded: Vec<f64>,
    /// Pre-generator interpolated codes, one residual per scene.
    pub collinearity_interpolated: Vec<f64>,
    /// Spearman correlation of α against distance to the atmospheric light, per scene.
    pub density_spearman: Vec<f64>,
    pub equivariance_trained: Vec<f64>,
    pub equivariance_baseline: Vec<f64>,
    /// Per-pair code distance of each encoder, for scale-free comparisons.
    pub style_spread_trained: Vec<f64>,
    pub style_spread_baseline: Vec<f64>,
}

impl ProbeReport {
    pub fn equivariance_wins(&self) -> usize {
        self.equivariance_trained.iter().zip(&self.equivariance_baseline).filter(|(t, b)| t < b).count()
    }

    /// Wins after dividing each residual by its encoder's code spread.
    pub fn relative_equivariance_wins(&self) -> usize {
        let relative = |r: &[f64], s: &[f64]| r.iter().zip(s).map(|(r, s)| r / s).collect::<Vec<f64>>();
        let trained = relative(&self.equivariance_trained, &self.style_spread_trained);
        let baseline = relative(&self.equivariance_baseline, &self.style_spread_baseline);
        trained.iter().zip(&baseline).filter(|(t, b)| t < b).count()
    }

    pub fn records(&self) -> Vec<MetricRecord> {
        let scenes = format!("{} scenes", self.density_spearman.len());
        let monotone = self.density_spearman.iter().filter(|r| **r <= -0.9).count();
        vec![
            MetricRecord::new("probe_style_test_acc", self.style.test_acc, format!("train {:.4}", self.style.train_acc)),
            MetricRecord::new("probe_content_test_acc", self.content.test_acc, format!("train {:.4}", self.content.train_acc)),
            MetricRecord::new("probe_image_test_acc", self.image.test_acc, format!("train {:.4}", self.image.train_acc)),
            MetricRecord::new("collinearity_reencoded_median", median(&self.collinearity_reencoded), &scenes),
            MetricRecord::new(
                "collinearity_interpolated_max",
                self.collinearity_interpolated.iter().cloned().fold(0.0, f64::max),
                &scenes,
            ),
            MetricRecord::new("density_spearman_median", median(&self.density_spearman), format!("{monotone} of {scenes} at <= -0.9")),
            MetricRecord::new("equivariance_trained_median", median(&self.equivariance_trained), "k = 0.5"),
            MetricRecord::new("equivariance_baseline_median", median(&self.equivariance_baseline), "untrained encoder, k = 0.5"),
            MetricRecord::new(
                "equivariance_wins",
                self.equivariance_wins() as f64,
                format!("of {} pairs", self.equivariance_trained.len()),
            ),
            MetricRecord::new(
                "equivariance_relative_wins",
                self.relative_equivariance_wins() as f64,
                format!("of {} pairs, residual / code spread", self.equivariance_trained.len()),
            ),
        ]
    }
}

/// Latent features of both domains for every scene, labeled by domain.
fn domain_features(samples: &[SceneSample], f: &mut impl FnMut(&ImageGrid) -> Result<Vec<f64>>) -> Result<Vec<(Vec<f64>, usize)>> {
    let mut out = Vec::with_capacity(2 * samples.len());
    for s in samples {
        out.push((f(&s.haze)?, HAZE_CLASS));
        out.push((f(&s.clear)?, CLEAR_CLASS));
    }
    Ok(out)
}

fn pooled_content<T: Scalar>(nets: &Networks<T>, image: &ImageGrid) -> Result<Vec<f64>> {
    let c = nets.content_encode(&one::<T>(image))?;
    let (_, ch, h, w) = c.value().nchw();
    let data = c.value().data();
    Ok((0..ch).map(|k| data[k * h * w..(k + 1) * h * w].iter().map(|v| v.to_f64_lossy()).sum::<f64>() / (h * w) as f64).collect())
}

fn probe_on(
    train: &[SceneSample],
    test: &[SceneSample],
    cfg: &RunConfig,
    mut f: impl FnMut(&ImageGrid) -> Result<Vec<f64>>,
) -> Result<ProbeResult> {
    let data = ProbeDataset::new(domain_features(train, &mut f)?, domain_features(test, &mut f)?)?;
    latent_domain_probe(&data, &cfg.eval.probe)
}

/// Domain probes on style codes, pooled content maps and raw pixels
/// (trained on `train` scenes, scored on `test` scenes), plus density,
/// collinearity and equivariance statistics on `test` scenes.
/// `baseline` supplies the untrained style encoder for the equivariance comparison.
pub fn probe<T: Scalar>(
    nets: &Networks<T>,
    baseline: &Networks<T>,
    train: &[SceneSample],
    test: &[SceneSample],
    cfg: &RunConfig,
) -> Result<ProbeReport> {
    if train.is_empty() || test.len() < 2 {
        return Err(invalid("probes need training scenes and at least 2 held-out scenes"));
    }
    let style = probe_on(train, test, cfg, |im| Ok(nets.style_encode(&one::<T>(im))?.value().to_f64_vec()))?;
    let content = probe_on(train, test, cfg, |im| pooled_content(nets, im))?;
    let image = probe_on(train, test, cfg, |im| Ok(im.data().to_vec()))?;

    let alphas = &cfg.eval.alphas;
    let (mut reencoded, mut interpolated, mut density) = (Vec::new(), Vec::new(), Vec::new());
    for s in test {
        let sw = sweep(nets, &s.clear, &s.haze, alphas)?;
        if alphas.len() >= 3 {
            reencoded.push(collinearity(&sw.reencoded)?);
            interpolated.push(collinearity(&sw.interpolated)?);
        }
        if alphas.len() >= 2 {
            let d = sw.airlight_distances(s.atmospheric_light);
            density.push(spearman(alphas, &d).unwrap_or(0.0));
        }
    }

    let x_i: Vec<&ImageGrid> = test.iter().map(|s| &s.haze).collect();
    let x_j: Vec<&ImageGrid> = test.iter().map(|s| &s.clear).collect();
    let equivariance = |n: &Networks<T>| -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut residual, mut spread) = (Vec::with_capacity(test.len()), Vec::with_capacity(test.len()));
        for (a, b) in x_i.iter().zip(&x_j) {
            let (ta, tb): (Tensor<T>, Tensor<T>) = (stack_working(&[a])?, stack_working(&[b])?);
            residual.extend(equivariance_residual(&ta, &tb, 0.5, n)?);
            spread.extend(style_spread(&ta, &tb, n)?);
        }
        Ok((residual, spread))
    };
    let (equivariance_trained, style_spread_trained) = equivariance(nets)?;
    let (equivariance_baseline, style_spread_baseline) = equivariance(baseline)?;
    Ok(ProbeReport {
        style,
        content,
        image,
        collinearity_reencoded: reencoded,
        collinearity_interpolated: interpolated,
        density_spearman: density,
        equivariance_trained,
        equivariance_baseline,
        style_spread_trained,
        style_spread_baseline,
    })
}

/// Networks from a checkpoint, checked against the configured architecture.
pub fn load_networks<T: Scalar>(path: &Path, cfg: &RunConfig) -> Result<Networks<T>> {
    Ok(restore::<T>(path, Some(&cfg.network))?.nets)
}
