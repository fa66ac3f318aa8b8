use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use haze_synth::config::{Preset, RunConfig, RUN_CONFIG_FILE};
use haze_synth::density_control::{even_alphas, sweep, synthesize_density, DensityRequest};
use haze_synth::imageio::{read_png, write_png};
use haze_synth::manifest::Split;
use haze_synth::networks::Networks;
use haze_synth::objectives::parse_log;
use haze_synth::plot::{plot_losses, PlotStyle};
use haze_synth::trainer::restore;
use haze_synth::workflow::{
    cropped_samples, evaluate, format_jsonl, format_table, generate_corpus, load_corpus, probe, train_run,
};

#[derive(Parser)]
#[command(name = "haze", version, about = "Density-controllable haze synthesis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a procedural corpus with depth, clear and haze images.
    GenData {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        scenes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (defaults to the configured corpus path).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model into a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        iters: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        checkpoint_every: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Continue from this checkpoint; the loss log is appended to.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Print a progress line every this many iterations (0 silences).
        #[arg(long, default_value_t = 100)]
        log_every: u64,
    },
    /// Render a haze-free image at one or several haze densities.
    Synthesize {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Haze-free source image.
        #[arg(long)]
        input: PathBuf,
        /// Baseline haze image.
        #[arg(long)]
        reference: PathBuf,
        /// Density in [0, 1].
        #[arg(long, conflicts_with = "sweep", allow_negative_numbers = true)]
        alpha: Option<f64>,
        /// Number of evenly spaced densities from 0 to 1.
        #[arg(long)]
        sweep: Option<usize>,
        /// Output PNG for --alpha; output directory for --sweep.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruction, synthesis and feature-distance metrics on held-out scenes.
    Evaluate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        embedder: Option<String>,
    },
    /// Disentanglement probes on a trained model.
    Probe {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Draw one curve image per loss term from a loss log.
    PlotLosses {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        smoothing: usize,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset used when no config file is given.
    #[arg(long, default_value = "desk")]
    preset: String,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(path) => Ok(RunConfig::load(path)?),
            None => Ok(RunConfig::preset(self.preset.parse::<Preset>()?)),
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Run configuration; defaults to the one stored next to the checkpoint, then the desk preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write machine-readable records (one JSON object per line) here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use at most this many held-out scenes.
    #[arg(long)]
    max_scenes: Option<usize>,
}

impl ModelArgs {
    fn config(&self) -> Result<RunConfig> {
        let stored = self.checkpoint.parent().map(|d| d.join(RUN_CONFIG_FILE));
        let mut cfg = match (&self.config, stored) {
            (Some(path), _) => RunConfig::load(path)?,
            (None, Some(path)) if path.exists() => RunConfig::load(&path)?,
            _ => RunConfig::preset(Preset::Desk),
        };
        if let Some(n) = self.max_scenes {
            cfg.eval.max_scenes = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn check_inputs(&self) -> Result<()> {
        if !self.checkpoint.is_file() {
            bail!("checkpoint {} does not exist", self.checkpoint.display());
        }
        if !self.corpus.is_dir() {
            bail!("corpus directory {} does not exist", self.corpus.display());
        }
        Ok(())
    }
}

fn write_report(records: &[haze_synth::workflow::MetricRecord], out: Option<&Path>) -> Result<()> {
    print!("{}", format_table(records));
    if let Some(path) = out {
        std::fs::write(path, format_jsonl(records)?).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { config, scenes, seed, out } => {
            let mut cfg = config.load()?;
            if let Some(n) = scenes {
                cfg.scenes = n;
            }
            if let Some(s) = seed {
                cfg.corpus.seed = s;
            }
            if let Some(dir) = out {
                cfg.paths.corpus = dir;
            }
            cfg.validate()?;
            let manifest = generate_corpus(&cfg)?;
            eprintln!(
                "wrote {} scenes ({} train, {} test) to {}",
                manifest.records.len(),
                manifest.count(Split::Train),
                manifest.count(Split::Test),
                cfg.paths.corpus.display()
            );
        }
        Command::Train { config, corpus, run_dir, iters, seed, batch_size, checkpoint_every, workers, resume, log_every } => {
            let mut cfg = config.load()?;
            if let Some(dir) = corpus {
                cfg.paths.corpus = dir;
            }
            if let Some(dir) = run_dir {
                cfg.paths.run_dir = dir;
            }
            if let Some(n) = iters {
                cfg.train.total_iters = n;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(b) = batch_size {
                cfg.pipeline.batch_size = b;
            }
            if let Some(c) = checkpoint_every {
                cfg.train.checkpoint_every = c;
            }
            if let Some(w) = workers {
                cfg.pipeline.workers = w;
            }
            cfg.validate()?;
            if let Some(path) = &resume {
                if !path.is_file() {
                    bail!("resume checkpoint {} does not exist", path.display());
                }
            }
            let manifest = load_corpus(&cfg.paths.corpus)?;
            let outcome = train_run::<f32>(&cfg, &manifest, resume.as_deref(), |r| {
                if log_every > 0 && (r.iteration + 1) % log_every == 0 {
                    eprintln!("{}", r.to_line());
                }
            })?;
            eprintln!(
                "trained to iteration {}; final checkpoint {}",
                outcome.state.iteration,
                outcome.final_checkpoint.display()
            );
        }
        Command::Synthesize { checkpoint, input, reference, alpha, sweep: steps, out } => {
            let alphas = match (alpha, steps) {
                (Some(a), None) => {
                    if !(0.0..=1.0).contains(&a) {
                        bail!("--alpha {a} is outside the valid range [0, 1]");
                    }
                    vec![a]
                }
                (None, Some(n)) => even_alphas(n)?,
                _ => bail!("pass exactly one of --alpha or --sweep"),
            };
            for path in [&checkpoint, &input, &reference] {
                if !path.is_file() {
                    bail!("{} does not exist", path.display());
                }
            }
            let nets: Networks<f32> = restore(&checkpoint, None)?.nets;
            let source = read_png(&input)?;
            let reference = read_png(&reference)?;
            if alpha.is_some() {
                let image = synthesize_density(&DensityRequest::new(alphas[0], source, reference)?, &nets)?;
                write_png(&out, &image)?;
                eprintln!("wrote {}", out.display());
            } else {
                let result = sweep(&nets, &source, &reference, &alphas)?;
                let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
                result.write(&out, stem)?;
                eprintln!("wrote {} densities to {}", alphas.len(), out.display());
            }
        }
        Command::Evaluate { model, embedder } => {
            model.check_inputs()?;
            let mut cfg = model.config()?;
            if let Some(name) = embedder {
                cfg.eval.embedder = name;
            }
            cfg.validate()?;
            let nets = haze_synth::workflow::load_networks::<f32>(&model.checkpoint, &cfg)?;
            let manifest = load_corpus(&model.corpus)?;
            let test = cropped_samples(&manifest, Split::Test, cfg.pipeline.crop_size, cfg.eval.max_scenes)?;
            write_report(&evaluate(&nets, &test, &cfg)?, model.out.as_deref())?;
        }
        Command::Probe { model } => {
            model.check_inputs()?;
            let cfg = model.config()?;
            let nets = haze_synth::workflow::load_networks::<f32>(&model.checkpoint, &cfg)?;
            let baseline = Networks::<f32>::new(&nets.spec, cfg.eval.baseline_seed)?;
            let manifest = load_corpus(&model.corpus)?;
            let train = cropped_samples(&manifest, Split::Train, cfg.pipeline.crop_size, 0)?;
            let test = cropped_samples(&manifest, Split::Test, cfg.pipeline.crop_size, cfg.eval.max_scenes)?;
            write_report(&probe(&nets, &baseline, &train, &test, &cfg)?.records(), model.out.as_deref())?;
        }
        Command::PlotLosses { log, out, smoothing } => {
            let text = std::fs::read_to_string(&log).with_context(|| format!("reading {}", log.display()))?;
            let records = parse_log(&text)?;
            let written = plot_losses(&records, &out, &PlotStyle { smoothing, ..PlotStyle::default() })?;
            eprintln!("wrote {} curves to {}", written.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
