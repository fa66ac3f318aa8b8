//! Alternating critic / encoder-generator optimization.
//!
//! Each iteration first updates `D` and `D^c` on detached generator outputs,
//! then updates `E^c`, `E^s` and `G` jointly on the full weighted objective
//! with a fresh interpolation weight `k ~ U[0, 1]`. Batches and `k` are pure
//! functions of `(seed, iteration)`, so a restored run continues exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use haze_tensor::{ops, Adam, ParamStore, Scalar, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data_pipeline::{Batch, Loader};
use crate::error::{invalid, io_err, Error, Result};
use crate::networks::{NetSpec, Networks, CLEAR_CLASS, HAZE_CLASS};
use crate::objectives::{
    adversarial_losses, content_adversarial_from_logits, cycle_term, domain_classification_loss, interpolate_style,
    reconstruction_from, split_critic_output, style_regression_from, LogRecord, LossReport, ObjectiveConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr0: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub lr_halving_period: u64,
    pub total_iters: u64,
    /// `0` disables intermediate checkpoints; a final one is always written.
    pub checkpoint_every: u64,
    pub seed: u64,
    /// Verify with parameter checksums that each phase only moves its own groups.
    pub check_phase_isolation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            lr_halving_period: 10_000,
            total_iters: 200_000,
            checkpoint_every: 10_000,
            seed: 0,
            check_phase_isolation: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(invalid(format!("lr0 {} must be positive", self.lr0)));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(invalid(format!("{name} {b} must be in [0, 1)")));
            }
        }
        if self.lr_halving_period == 0 || self.total_iters == 0 {
            return Err(invalid("lr_halving_period and total_iters must be positive"));
        }
        Ok(())
    }

    /// `lr0 · 0.5^⌊t / period⌋`.
    pub fn learning_rate(&self, iteration: u64) -> f64 {
        learning_rate(self.lr0, self.lr_halving_period, iteration)
    }
}

pub fn learning_rate(lr0: f64, period: u64, iteration: u64) -> f64 {
    lr0 * 0.5f64.powi((iteration / period).min(i32::MAX as u64) as i32)
}

/// Per-iteration generator for the interpolation weight.
pub fn iteration_rng(seed: u64, iteration: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6B_5F_49_4E_54_45_52_50);
    rng.set_stream(iteration);
    rng
}

pub struct Optimizers<T: Scalar> {
    pub gen: Adam<T>,
    pub disc: Adam<T>,
    pub content_disc: Adam<T>,
}

/// Models, optimizer moments and the iteration counter.
pub struct TrainState<T: Scalar> {
    pub nets: Networks<T>,
    pub opt: Optimizers<T>,
    /// Completed iterations.
    pub iteration: u64,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(spec: &NetSpec, cfg: &TrainConfig) -> Result<Self> {
        let nets = Networks::new(spec, cfg.seed)?;
        let adam = |s: &ParamStore<T>| Adam::new(s, cfg.adam_beta1, cfg.adam_beta2);
        let opt = Optimizers { gen: adam(&nets.gen), disc: adam(&nets.disc), content_disc: adam(&nets.content_disc) };
        Ok(Self { nets, opt, iteration: 0 })
    }
}

fn non_finite(report: &LossReport, iteration: u64) -> Result<()> {
    match report.non_finite() {
        Some(term) => Err(Error::NonFinite { term: term.to_string(), iteration }),
        None => Ok(()),
    }
}

fn item<T: Scalar>(v: &Var<T>) -> f64 {
    v.item().to_f64_lossy()
}

fn cat<T: Scalar>(parts: &[&Var<T>]) -> Result<Var<T>> {
    let owned: Vec<_> = parts.iter().map(|v| (*v).clone()).collect();
    Ok(ops::cat_batch(&owned)?)
}

fn split<T: Scalar>(v: &Var<T>, parts: usize) -> Result<Vec<Var<T>>> {
    let b = v.shape()[0] / parts;
    (0..parts).map(|p| Ok(ops::narrow_batch(v, p * b, b)?)).collect()
}

/// One iteration at index `state.iteration` with interpolation weight `k`.
///
/// Returns the report of the encoder-generator phase.
pub fn train_step<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &Batch<T>,
    obj: &ObjectiveConfig,
    lr: f64,
    k: f64,
    check_isolation: bool,
) -> Result<LossReport> {
    let it = state.iteration;
    step_phases(state, batch, obj, lr, k, check_isolation).map_err(|e| match e {
        Error::NonFiniteTerm(term) => Error::NonFinite { term, iteration: it },
        other => other,
    })
}

fn step_phases<T: Scalar>(
    state: &mut TrainState<T>,
    batch: &Batch<T>,
    obj: &ObjectiveConfig,
    lr: f64,
    k: f64,
    check_isolation: bool,
) -> Result<LossReport> {
    let it = state.iteration;
    let w = obj.weights;
    let b = batch.len();
    let nets = &mut state.nets;
    let x_i = Var::constant(batch.x_i.clone());
    let x_j = Var::constant(batch.x_j.clone());

    // Shared forward: codes for both domains, then one generator pass for
    // the two self-reconstructions, the two translations and x_k.
    let codes_in = cat(&[&x_i, &x_j])?;
    let c = split(&nets.content_encode(&codes_in)?, 2)?;
    let s = split(&nets.style_encode(&codes_in)?, 2)?;
    let (c_i, c_j, s_i, s_j) = (&c[0], &c[1], &s[0], &s[1]);
    let s_k = interpolate_style(s_i, s_j, k)?;
    let gen_out = nets.generate(&cat(&[c_i, c_j, c_i, c_j, c_j])?, &cat(&[s_i, s_j, s_j, s_i, &s_k])?)?;
    let g = split(&gen_out, 5)?;
    let (xr_i, xr_j, x_ij, x_ji, x_k) = (&g[0], &g[1], &g[2], &g[3], &g[4]);

    // Phase 1: critics on real images and detached translations.
    let gen_sum = check_isolation.then(|| nets.gen.checksum());
    {
        let d_in = cat(&[&x_i, &x_j, &x_ji.detach(), &x_ij.detach()])?;
        let parts = split_critic_output(&nets.discriminate(&d_in)?, 4)?;
        let adv = adversarial_losses(&parts[0], &parts[1], &parts[2], &parts[3], obj)?;
        let real_logits = cat(&[&parts[0].domain_logits, &parts[1].domain_logits])?;
        let labels: Vec<usize> = (0..2 * b).map(|n| if n < b { HAZE_CLASS } else { CLEAR_CLASS }).collect();
        let cls_real = domain_classification_loss(&real_logits, &labels)?;
        let dc_in = cat(&[&c_i.detach(), &c_j.detach()])?;
        let z = split(&nets.content_discriminate(&dc_in)?, 2)?;
        let advc = content_adversarial_from_logits(&z[0], &z[1], obj)?;
        let d_loss = ops::add_all(&[
            ops::scale(&ops::add_all(&[adv.l_di.clone(), adv.l_dj.clone(), cls_real])?, w.lambda_adv),
            ops::scale(&advc.critic, w.lambda_advc),
        ])?;
        if !d_loss.value().all_finite() {
            return Err(Error::NonFinite { term: "critic objective".into(), iteration: it });
        }
        let grads = d_loss.backward();
        state.opt.disc.step(&mut nets.disc, &grads, lr)?;
        state.opt.content_disc.step(&mut nets.content_disc, &grads, lr)?;
    }
    if let Some(before) = gen_sum {
        if before != nets.gen.checksum() {
            return Err(Error::Validation(format!("critic phase modified encoder/generator parameters at iteration {it}")));
        }
    }

    // Phase 2: encoders and generator against the freshly updated critics.
    let disc_sums = check_isolation.then(|| (nets.disc.checksum(), nets.content_disc.checksum()));
    nets.disc.set_trainable(false);
    nets.content_disc.set_trainable(false);
    let phase2 = (|| -> Result<(LossReport, Var<T>)> {
        let re_c = split(&nets.content_encode(&cat(&[xr_i, xr_j, x_ij, x_ji])?)?, 4)?;
        let re_s = split(&nets.style_encode(&cat(&[xr_i, xr_j, x_ij, x_ji, x_k])?)?, 5)?;
        let (cr_i, cr_j, c_ij, c_ji) = (&re_c[0], &re_c[1], &re_c[2], &re_c[3]);
        let (sr_i, sr_j, s_ij, s_ji, s_k_re) = (&re_s[0], &re_s[1], &re_s[2], &re_s[3], &re_s[4]);
        let cycle = split(&nets.generate(&cat(&[c_ij, c_ji])?, &cat(&[s_ji, s_ij])?)?, 2)?;

        let recon = reconstruction_from([&x_i, &x_j], [c_i, c_j], [s_i, s_j], [xr_i, xr_j], [cr_i, cr_j], [sr_i, sr_j])?;
        let l_s = ops::l1_mean(s_k_re, &s_k.detach())?;
        let l_s = if obj.symmetric_style_regression {
            let x_k_i = nets.generate(c_i, &s_k)?;
            ops::add(&l_s, &style_regression_from(&x_k_i, &s_k, &*nets)?)?
        } else {
            l_s
        };
        let l_cc = cycle_term(&x_i, &x_j, &cycle[0], &cycle[1])?;

        let parts = split_critic_output(&nets.discriminate(&cat(&[&x_i, &x_j, x_ji, x_ij])?)?, 4)?;
        let adv = adversarial_losses(&parts[0], &parts[1], &parts[2], &parts[3], obj)?;
        let fake_logits = cat(&[&parts[2].domain_logits, &parts[3].domain_logits])?;
        let labels: Vec<usize> = (0..2 * b).map(|n| if n < b { HAZE_CLASS } else { CLEAR_CLASS }).collect();
        let l_cls = domain_classification_loss(&fake_logits, &labels)?;
        let z = split(&nets.content_discriminate(&cat(&[c_i, c_j])?)?, 2)?;
        let advc = content_adversarial_from_logits(&z[0], &z[1], obj)?;

        let objective = ops::add_all(&[
            ops::scale(&ops::add(&adv.generator, &l_cls)?, w.lambda_adv),
            ops::scale(&advc.encoder, w.lambda_advc),
            ops::scale(&recon.recon_x, w.lambda_recon_x),
            ops::scale(&recon.recon_c, w.lambda_recon_c),
            ops::scale(&recon.regre_s(&l_s)?, w.lambda_regre_s),
            ops::scale(&l_cc, w.lambda_cc),
        ])?;
        let report = LossReport {
            l_di: item(&adv.l_di),
            l_dj: item(&adv.l_dj),
            l_advc: item(&advc.critic),
            l_recon_x: item(&recon.recon_x),
            l_recon_c: item(&recon.recon_c),
            l_recon_s: item(&recon.recon_s),
            l_s: item(&l_s),
            l_cc: item(&l_cc),
            l_cls: item(&l_cls),
            total: 0.0,
        }
        .with_total(&w);
        Ok((report, objective))
    })();
    nets.disc.set_trainable(true);
    nets.content_disc.set_trainable(true);
    let (report, objective) = phase2?;
    non_finite(&report, it)?;
    if !objective.value().all_finite() {
        return Err(Error::NonFinite { term: "encoder/generator objective".into(), iteration: it });
    }
    let grads = objective.backward();
    state.opt.gen.step(&mut nets.gen, &grads, lr)?;
    if let Some((d, dc)) = disc_sums {
        if d != nets.disc.checksum() || dc != nets.content_disc.checksum() {
            return Err(Error::Validation(format!("encoder/generator phase modified critic parameters at iteration {it}")));
        }
    }
    state.iteration += 1;
    Ok(report)
}

/// Training loop over a loader, one batch per iteration.
pub struct Trainer<T: Scalar> {
    pub state: TrainState<T>,
    pub train: TrainConfig,
    pub objective: ObjectiveConfig,
}

impl<T: Scalar + Send> Trainer<T> {
    pub fn new(spec: &NetSpec, train: &TrainConfig, objective: &ObjectiveConfig) -> Result<Self> {
        train.validate()?;
        objective.weights.validate()?;
        Ok(Self { state: TrainState::new(spec, train)?, train: train.clone(), objective: *objective })
    }

    /// One iteration; returns its log record.
    pub fn step(&mut self, batch: &Batch<T>) -> Result<LogRecord> {
        let it = self.state.iteration;
        let lr = self.train.learning_rate(it);
        let k: f64 = iteration_rng(self.train.seed, it).random_range(0.0..=1.0);
        let report = train_step(&mut self.state, batch, &self.objective, lr, k, self.train.check_phase_isolation)?;
        Ok(LogRecord { iteration: it, lr, k, report })
    }

    /// Run until `until` iterations are complete, feeding each record to
    /// `on_record` and calling `on_checkpoint` every `checkpoint_every`.
    pub fn run(
        &mut self,
        loader: &std::sync::Arc<Loader>,
        until: u64,
        mut on_record: impl FnMut(&LogRecord) -> Result<()>,
        mut on_checkpoint: impl FnMut(&TrainState<T>) -> Result<()>,
    ) -> Result<()> {
        let start = self.state.iteration;
        if until <= start {
            return Ok(());
        }
        let mut stream = loader.stream::<T>(start);
        while self.state.iteration < until {
            let batch = stream.next().ok_or_else(|| invalid("batch stream ended"))??;
            let record = self.step(&batch)?;
            on_record(&record)?;
            let done = self.state.iteration;
            if self.train.checkpoint_every > 0 && done % self.train.checkpoint_every == 0 && done < until {
                on_checkpoint(&self.state)?;
            }
        }
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"HZCKPT\0\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct GroupHeader {
    name: String,
    params: Vec<(String, Vec<usize>)>,
    adam_step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    dtype: String,
    netspec: NetSpec,
    iteration: u64,
    groups: Vec<GroupHeader>,
}

/// Binary container: magic, `u32` version, `u64` header length, JSON header
/// (dtype, NetSpec, iteration, parameter names and shapes per group, Adam
/// step and betas), then for each group its parameters, first moments and
/// second moments as little-endian floats in header order.
pub fn checkpoint<T: Scalar>(state: &TrainState<T>, path: &Path) -> Result<()> {
    let groups = [
        ("gen", &state.nets.gen, &state.opt.gen),
        ("disc", &state.nets.disc, &state.opt.disc),
        ("content_disc", &state.nets.content_disc, &state.opt.content_disc),
    ];
    let header = Header {
        dtype: T::DTYPE.to_string(),
        netspec: state.nets.spec.clone(),
        iteration: state.iteration,
        groups: groups
            .iter()
            .map(|(name, store, adam)| GroupHeader {
                name: name.to_string(),
                params: store.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect(),
                adam_step: adam.step,
                beta1: adam.beta1,
                beta2: adam.beta2,
                eps: adam.eps,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, store, adam) in groups {
        for (_, t) in store.iter() {
            T::to_le_bytes_vec(t.data(), &mut out);
        }
        for t in adam.first.iter().chain(&adam.second) {
            T::to_le_bytes_vec(t.data(), &mut out);
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(&out).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

fn take<'a>(bytes: &'a [u8], pos: &mut usize, n: usize) -> Result<&'a [u8]> {
    let s = bytes.get(*pos..*pos + n).ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
    *pos += n;
    Ok(s)
}

/// Restore a checkpoint. With `expected = Some(spec)`, a different stored
/// NetSpec is an error.
pub fn restore<T: Scalar>(path: &Path, expected: Option<&NetSpec>) -> Result<TrainState<T>> {
    let mut bytes = Vec::new();
    fs::File::open(path).map_err(io_err(path))?.read_to_end(&mut bytes).map_err(io_err(path))?;
    let mut pos = 0;
    if take(&bytes, &mut pos, 8)? != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(take(&bytes, &mut pos, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version} (expected {CHECKPOINT_VERSION})")));
    }
    let hlen = u64::from_le_bytes(take(&bytes, &mut pos, 8)?.try_into().unwrap()) as usize;
    let header: Header =
        serde_json::from_slice(take(&bytes, &mut pos, hlen)?).map_err(|e| Error::Checkpoint(format!("corrupt header: {e}")))?;
    if header.dtype != T::DTYPE {
        return Err(Error::Checkpoint(format!("stored dtype {} does not match {}", header.dtype, T::DTYPE)));
    }
    if let Some(spec) = expected {
        if *spec != header.netspec {
            return Err(Error::Checkpoint(format!("NetSpec mismatch: stored {:?}, expected {:?}", header.netspec, spec)));
        }
    }
    let mut nets = Networks::<T>::new(&header.netspec, 0)?;
    let width = std::mem::size_of::<T>();
    let mut read_tensor = |shape: &[usize]| -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let data = T::from_le_bytes_slice(take(&bytes, &mut pos, n * width)?);
        Ok(Tensor::from_vec(shape.to_vec(), data)?)
    };
    let mut adams = Vec::with_capacity(3);
    for (g, store) in header.groups.iter().zip([&mut nets.gen, &mut nets.disc, &mut nets.content_disc]) {
        if g.params.len() != store.len() || g.params.iter().zip(store.names()).any(|((a, _), b)| a != b) {
            return Err(Error::Checkpoint(format!("group `{}` does not match the NetSpec's parameters", g.name)));
        }
        for (name, shape) in &g.params {
            let t = read_tensor(shape)?;
            store.set_value(name, t).map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        let first = g.params.iter().map(|(_, s)| read_tensor(s)).collect::<Result<Vec<_>>>()?;
        let second = g.params.iter().map(|(_, s)| read_tensor(s)).collect::<Result<Vec<_>>>()?;
        adams.push(Adam { beta1: g.beta1, beta2: g.beta2, eps: g.eps, step: g.adam_step, first, second });
    }
    if pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
    }
    let mut it = adams.into_iter();
    let (gen, disc, content_disc) = match (it.next(), it.next(), it.next()) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::Checkpoint("expected three parameter groups".into())),
    };
    Ok(TrainState { nets, opt: Optimizers { gen, disc, content_disc }, iteration: header.iteration })
}
