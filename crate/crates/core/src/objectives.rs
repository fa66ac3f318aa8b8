//! Training objectives: image and content adversarial terms, self
//! reconstruction of images, content and style, the self-supervised style
//! regression through a random convex combination of style codes, the
//! cross-cycle consistency, and their weighted total.
//!
//! Adversarial terms are reported in cross-entropy form, so a critic that
//! outputs probability 0.5 on everything scores `2·ln 2 ≈ 1.3863`. Critics
//! minimize these values; the encoder and generator sides receive the
//! saturating counterparts (`ln(1 − D(fake))` and the negated content term).
//!
//! Every L1 term is the mean absolute difference over all elements, summed
//! over the two domains where the objective has one summand per domain.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use haze_tensor::{ops, Scalar, Var};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::networks::{DiscOutput, Networks};

/// Probability floor inside the logarithms of the adversarial terms.
pub const PROB_FLOOR: f64 = 1e-7;

pub trait ContentEncoder<T: Scalar> {
    fn encode_content(&self, x: &Var<T>) -> Result<Var<T>>;
}

pub trait StyleEncoder<T: Scalar> {
    fn encode_style(&self, x: &Var<T>) -> Result<Var<T>>;
}

pub trait Generator<T: Scalar> {
    fn generate_image(&self, c: &Var<T>, s: &Var<T>) -> Result<Var<T>>;
}

pub trait ImageCritic<T: Scalar> {
    fn critique(&self, x: &Var<T>) -> Result<DiscOutput<T>>;
}

pub trait ContentCritic<T: Scalar> {
    fn critique_content(&self, c: &Var<T>) -> Result<Var<T>>;
}

impl<T: Scalar> ContentEncoder<T> for Networks<T> {
    fn encode_content(&self, x: &Var<T>) -> Result<Var<T>> {
        self.content_encode(x)
    }
}

impl<T: Scalar> StyleEncoder<T> for Networks<T> {
    fn encode_style(&self, x: &Var<T>) -> Result<Var<T>> {
        self.style_encode(x)
    }
}

impl<T: Scalar> Generator<T> for Networks<T> {
    fn generate_image(&self, c: &Var<T>, s: &Var<T>) -> Result<Var<T>> {
        self.generate(c, s)
    }
}

impl<T: Scalar> ImageCritic<T> for Networks<T> {
    fn critique(&self, x: &Var<T>) -> Result<DiscOutput<T>> {
        self.discriminate(x)
    }
}

impl<T: Scalar> ContentCritic<T> for Networks<T> {
    fn critique_content(&self, c: &Var<T>) -> Result<Var<T>> {
        self.content_discriminate(c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_advc: f64,
    pub lambda_recon_x: f64,
    pub lambda_recon_c: f64,
    pub lambda_regre_s: f64,
    pub lambda_cc: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_adv: 1.0, lambda_advc: 10.0, lambda_recon_x: 10.0, lambda_recon_c: 1.0, lambda_regre_s: 20.0, lambda_cc: 10.0 }
    }
}

impl LossWeights {
    pub fn zero() -> Self {
        Self { lambda_adv: 0.0, lambda_advc: 0.0, lambda_recon_x: 0.0, lambda_recon_c: 0.0, lambda_regre_s: 0.0, lambda_cc: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_adv, self.lambda_advc, self.lambda_recon_x, self.lambda_recon_c, self.lambda_regre_s, self.lambda_cc];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("loss weights must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GanMode {
    /// Log-likelihood terms as written, with the probability floor.
    #[default]
    Log,
    /// Least-squares terms on the raw critic outputs.
    LeastSquares,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObjectiveConfig {
    pub weights: LossWeights,
    pub gan_mode: GanMode,
    pub prob_floor: f64,
    /// Also regress the style of `G(c_i, s_k)`.
    pub symmetric_style_regression: bool,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self { weights: LossWeights::default(), gan_mode: GanMode::Log, prob_floor: PROB_FLOOR, symmetric_style_regression: false }
    }
}

/// The six weighted parts of the total objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightedParts {
    pub adv: f64,
    pub advc: f64,
    pub recon_x: f64,
    pub recon_c: f64,
    pub regre_s: f64,
    pub cc: f64,
}

pub fn weighted_total(p: &WeightedParts, w: &LossWeights) -> f64 {
    w.lambda_adv * p.adv
        + w.lambda_advc * p.advc
        + w.lambda_recon_x * p.recon_x
        + w.lambda_recon_c * p.recon_c
        + w.lambda_regre_s * p.regre_s
        + w.lambda_cc * p.cc
}

/// Column names of a [`LossReport`], in log order.
pub const REPORT_TERMS: [&str; 9] = ["L_DI", "L_DJ", "L_advc", "L_recon_x", "L_recon_c", "L_recon_s", "L_s", "L_cc", "L_cls"];

/// One scalar per loss term plus the weighted total.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct LossReport {
    pub l_di: f64,
    pub l_dj: f64,
    pub l_advc: f64,
    pub l_recon_x: f64,
    pub l_recon_c: f64,
    pub l_recon_s: f64,
    pub l_s: f64,
    pub l_cc: f64,
    pub l_cls: f64,
    pub total: f64,
}

impl LossReport {
    /// Fill `total` from the terms: `L_adv = L_DI + L_DJ + L_cls`,
    /// `L_regre = L_recon_s + L_s`.
    pub fn with_total(mut self, w: &LossWeights) -> Self {
        self.total = weighted_total(&self.parts(), w);
        self
    }

    pub fn parts(&self) -> WeightedParts {
        WeightedParts {
            adv: self.l_di + self.l_dj + self.l_cls,
            advc: self.l_advc,
            recon_x: self.l_recon_x,
            recon_c: self.l_recon_c,
            regre_s: self.l_recon_s + self.l_s,
            cc: self.l_cc,
        }
    }

    pub fn l_regre_s(&self) -> f64 {
        self.l_recon_s + self.l_s
    }

    pub fn terms(&self) -> [(&'static str, f64); 9] {
        [
            ("L_DI", self.l_di),
            ("L_DJ", self.l_dj),
            ("L_advc", self.l_advc),
            ("L_recon_x", self.l_recon_x),
            ("L_recon_c", self.l_recon_c),
            ("L_recon_s", self.l_recon_s),
            ("L_s", self.l_s),
            ("L_cc", self.l_cc),
            ("L_cls", self.l_cls),
        ]
    }

    /// First non-finite term, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        self.terms().iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| *n).or((!self.total.is_finite()).then_some("total"))
    }

    fn from_map(map: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |k: &str| map.get(k).copied().ok_or_else(|| invalid(format!("missing loss term `{k}`")));
        Ok(Self {
            l_di: get("L_DI")?,
            l_dj: get("L_DJ")?,
            l_advc: get("L_advc")?,
            l_recon_x: get("L_recon_x")?,
            l_recon_c: get("L_recon_c")?,
            l_recon_s: get("L_recon_s")?,
            l_s: get("L_s")?,
            l_cc: get("L_cc")?,
            l_cls: get("L_cls")?,
            total: get("total")?,
        })
    }
}

/// One line of the metrics log: `iter=… lr=… k=… L_DI=… … total=…`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: u64,
    pub lr: f64,
    pub k: f64,
    pub report: LossReport,
}

impl LogRecord {
    /// Values print in shortest round-trip form, so parsing is exact.
    pub fn to_line(&self) -> String {
        let mut line = format!("iter={} lr={} k={}", self.iteration, self.lr, self.k);
        for (name, v) in self.report.terms() {
            let _ = write!(line, " {name}={v}");
        }
        let _ = write!(line, " total={}", self.report.total);
        line
    }

    pub fn parse(line: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| invalid(format!("log field `{field}` is not name=value")))?;
            let v: f64 = v.parse().map_err(|_| invalid(format!("log field `{k}` has non-numeric value `{v}`")))?;
            map.insert(k.to_string(), v);
        }
        let iteration = map.get("iter").copied().ok_or_else(|| invalid("log line without `iter`"))?;
        Ok(Self {
            iteration: iteration as u64,
            lr: map.get("lr").copied().unwrap_or(f64::NAN),
            k: map.get("k").copied().unwrap_or(f64::NAN),
            report: LossReport::from_map(&map)?,
        })
    }
}

pub fn parse_log(text: &str) -> Result<Vec<LogRecord>> {
    text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).map(LogRecord::parse).collect()
}

fn check_finite<T: Scalar>(term: &str, v: &Var<T>) -> Result<()> {
    if v.value().all_finite() {
        Ok(())
    } else {
        Err(Error::NonFiniteTerm(term.to_string()))
    }
}

/// Critic loss of patch logits against a constant target, averaged over
/// patches within each scale and then over scales.
pub fn gan_term<T: Scalar>(logits: &[Var<T>], target: f64, cfg: &ObjectiveConfig) -> Result<Var<T>> {
    if logits.is_empty() {
        return Err(invalid("gan_term needs at least one scale"));
    }
    let per_scale: Vec<Var<T>> = logits
        .iter()
        .map(|z| match cfg.gan_mode {
            GanMode::Log => ops::bce_with_floor(z, target, cfg.prob_floor),
            GanMode::LeastSquares => ops::mse_to(z, target),
        })
        .collect();
    Ok(ops::scale(&ops::add_all(&per_scale)?, 1.0 / logits.len() as f64))
}

/// Image adversarial terms for one critic pass over real and fake batches.
pub struct AdversarialLosses<T: Scalar> {
    /// Critic loss in the haze domain: real `x_i` vs `x_{j→i}`.
    pub l_di: Var<T>,
    /// Critic loss in the haze-free domain: real `x_j` vs `x_{i→j}`.
    pub l_dj: Var<T>,
    /// Generator side, summed over both domains.
    pub generator: Var<T>,
}

/// `fake_i` lives in the haze domain (`G(c_j, s_i)`), `fake_j` in the
/// haze-free domain (`G(c_i, s_j)`).
pub fn adversarial_losses<T: Scalar>(
    real_i: &DiscOutput<T>,
    real_j: &DiscOutput<T>,
    fake_i: &DiscOutput<T>,
    fake_j: &DiscOutput<T>,
    cfg: &ObjectiveConfig,
) -> Result<AdversarialLosses<T>> {
    for (term, out) in [("L_DI real", real_i), ("L_DJ real", real_j), ("L_DI fake", fake_i), ("L_DJ fake", fake_j)] {
        for p in &out.patches {
            check_finite(term, p)?;
        }
    }
    let fake_term_i = gan_term(&fake_i.patches, 0.0, cfg)?;
    let fake_term_j = gan_term(&fake_j.patches, 0.0, cfg)?;
    let l_di = ops::add(&gan_term(&real_i.patches, 1.0, cfg)?, &fake_term_i)?;
    let l_dj = ops::add(&gan_term(&real_j.patches, 1.0, cfg)?, &fake_term_j)?;
    let generator = match cfg.gan_mode {
        GanMode::Log => ops::scale(&ops::add(&fake_term_i, &fake_term_j)?, -1.0),
        GanMode::LeastSquares => ops::add(&gan_term(&fake_i.patches, 1.0, cfg)?, &gan_term(&fake_j.patches, 1.0, cfg)?)?,
    };
    Ok(AdversarialLosses { l_di, l_dj, generator })
}

/// Critic-only form of [`adversarial_losses`] when D sees one concatenated
/// batch `[real_i; real_j; fake_i; fake_j]` of equal-size parts.
pub fn split_critic_output<T: Scalar>(out: &DiscOutput<T>, parts: usize) -> Result<Vec<DiscOutput<T>>> {
    let n = out.domain_logits.shape()[0];
    if parts == 0 || n % parts != 0 {
        return Err(invalid(format!("cannot split a critic batch of {n} into {parts} parts")));
    }
    let b = n / parts;
    (0..parts)
        .map(|p| {
            Ok(DiscOutput {
                patches: out.patches.iter().map(|z| ops::narrow_batch(z, p * b, b)).collect::<std::result::Result<_, _>>()?,
                domain_logits: ops::narrow_batch(&out.domain_logits, p * b, b)?,
            })
        })
        .collect()
}

/// Domain-head cross-entropy against per-image class labels.
pub fn domain_classification_loss<T: Scalar>(logits: &Var<T>, labels: &[usize]) -> Result<Var<T>> {
    check_finite("L_cls", logits)?;
    Ok(ops::cross_entropy(logits, labels)?)
}

pub struct ContentAdversarial<T: Scalar> {
    /// Critic loss: `−[ln D^c(c_i) + ln(1 − D^c(c_j))]`.
    pub critic: Var<T>,
    /// Encoder side: the negated critic loss.
    pub encoder: Var<T>,
}

/// Content adversarial term from `D^c` logits on haze (`z_i`) and
/// haze-free (`z_j`) content maps.
pub fn content_adversarial_from_logits<T: Scalar>(z_i: &Var<T>, z_j: &Var<T>, cfg: &ObjectiveConfig) -> Result<ContentAdversarial<T>> {
    check_finite("L_advc haze", z_i)?;
    check_finite("L_advc haze-free", z_j)?;
    let critic = ops::add(&gan_term(std::slice::from_ref(z_i), 1.0, cfg)?, &gan_term(std::slice::from_ref(z_j), 0.0, cfg)?)?;
    let encoder = match cfg.gan_mode {
        GanMode::Log => ops::scale(&critic, -1.0),
        GanMode::LeastSquares => ops::add(&ops::mse_to(z_i, 0.5), &ops::mse_to(z_j, 0.5))?,
    };
    Ok(ContentAdversarial { critic, encoder })
}

pub fn content_adversarial_loss<T: Scalar>(
    dc: &impl ContentCritic<T>,
    c_i: &Var<T>,
    c_j: &Var<T>,
    cfg: &ObjectiveConfig,
) -> Result<ContentAdversarial<T>> {
    content_adversarial_from_logits(&dc.critique_content(c_i)?, &dc.critique_content(c_j)?, cfg)
}

/// `s_k = k·s_i + (1 − k)·s_j`.
pub fn interpolate_style<T: Scalar>(s_i: &Var<T>, s_j: &Var<T>, k: f64) -> Result<Var<T>> {
    if !(0.0..=1.0).contains(&k) {
        return Err(invalid(format!("interpolation weight {k} outside [0, 1]")));
    }
    Ok(ops::lerp(s_i, s_j, k)?)
}

/// Plain-vector form of [`interpolate_style`].
pub fn interpolate_codes(s_i: &[f64], s_j: &[f64], k: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&k) {
        return Err(invalid(format!("interpolation weight {k} outside [0, 1]")));
    }
    if s_i.len() != s_j.len() {
        return Err(invalid("style codes differ in length"));
    }
    Ok(s_i.iter().zip(s_j).map(|(a, b)| k * a + (1.0 - k) * b).collect())
}

pub struct StyleRegression<T: Scalar> {
    pub l_s: Var<T>,
    pub x_k: Var<T>,
}

/// `‖E^s(G(c_j, s_k)) − sg(s_k)‖₁`: the target carries no gradient while
/// the generator input does.
pub fn style_regression_loss<T: Scalar>(
    c_j: &Var<T>,
    s_k: &Var<T>,
    es: &impl StyleEncoder<T>,
    g: &impl Generator<T>,
) -> Result<StyleRegression<T>> {
    let x_k = g.generate_image(c_j, s_k)?;
    let l_s = style_regression_from(&x_k, s_k, es)?;
    Ok(StyleRegression { l_s, x_k })
}

/// Regression term for an already generated `x_k`.
pub fn style_regression_from<T: Scalar>(x_k: &Var<T>, s_k: &Var<T>, es: &impl StyleEncoder<T>) -> Result<Var<T>> {
    Ok(ops::l1_mean(&es.encode_style(x_k)?, &s_k.detach())?)
}

pub struct Reconstruction<T: Scalar> {
    pub recon_x: Var<T>,
    pub recon_c: Var<T>,
    pub recon_s: Var<T>,
    pub x_rec_i: Var<T>,
    pub x_rec_j: Var<T>,
}

impl<T: Scalar> Reconstruction<T> {
    /// `L_regre = L_recon_s + L_s`.
    pub fn regre_s(&self, l_s: &Var<T>) -> Result<Var<T>> {
        Ok(ops::add(&self.recon_s, l_s)?)
    }
}

/// Self-reconstruction terms from precomputed codes and reconstructions.
/// The style target `s` carries no gradient.
pub fn reconstruction_from<T: Scalar>(
    x: [&Var<T>; 2],
    c: [&Var<T>; 2],
    s: [&Var<T>; 2],
    x_rec: [&Var<T>; 2],
    c_rec: [&Var<T>; 2],
    s_rec: [&Var<T>; 2],
) -> Result<Reconstruction<T>> {
    let pair = |a: [&Var<T>; 2], b: [&Var<T>; 2]| -> Result<Var<T>> {
        Ok(ops::add(&ops::l1_mean(a[0], b[0])?, &ops::l1_mean(a[1], b[1])?)?)
    };
    Ok(Reconstruction {
        recon_x: pair(x_rec, x)?,
        recon_c: pair(c_rec, c)?,
        recon_s: pair(s_rec, [&s[0].detach(), &s[1].detach()])?,
        x_rec_i: x_rec[0].clone(),
        x_rec_j: x_rec[1].clone(),
    })
}

pub fn reconstruction_losses<T: Scalar, M>(x_i: &Var<T>, x_j: &Var<T>, m: &M) -> Result<Reconstruction<T>>
where
    M: ContentEncoder<T> + StyleEncoder<T> + Generator<T>,
{
    let (c_i, c_j) = (m.encode_content(x_i)?, m.encode_content(x_j)?);
    let (s_i, s_j) = (m.encode_style(x_i)?, m.encode_style(x_j)?);
    let r_i = m.generate_image(&c_i, &s_i)?;
    let r_j = m.generate_image(&c_j, &s_j)?;
    let (cr_i, cr_j) = (m.encode_content(&r_i)?, m.encode_content(&r_j)?);
    let (sr_i, sr_j) = (m.encode_style(&r_i)?, m.encode_style(&r_j)?);
    reconstruction_from([x_i, x_j], [&c_i, &c_j], [&s_i, &s_j], [&r_i, &r_j], [&cr_i, &cr_j], [&sr_i, &sr_j])
}

pub struct CrossCycle<T: Scalar> {
    pub l_cc: Var<T>,
    pub x_ij: Var<T>,
    pub x_ji: Var<T>,
    pub x_iji: Var<T>,
    pub x_jij: Var<T>,
}

/// `x_{i→j} = G(c_i, s_j)`, `x_{j→i} = G(c_j, s_i)`, then
/// `x_{i→j→i} = G(E^c(x_{i→j}), E^s(x_{j→i}))` and
/// `x_{j→i→j} = G(E^c(x_{j→i}), E^s(x_{i→j}))`.
pub fn cross_cycle_loss<T: Scalar, M>(x_i: &Var<T>, x_j: &Var<T>, m: &M) -> Result<CrossCycle<T>>
where
    M: ContentEncoder<T> + StyleEncoder<T> + Generator<T>,
{
    let (c_i, c_j) = (m.encode_content(x_i)?, m.encode_content(x_j)?);
    let (s_i, s_j) = (m.encode_style(x_i)?, m.encode_style(x_j)?);
    let x_ij = m.generate_image(&c_i, &s_j)?;
    let x_ji = m.generate_image(&c_j, &s_i)?;
    let x_iji = m.generate_image(&m.encode_content(&x_ij)?, &m.encode_style(&x_ji)?)?;
    let x_jij = m.generate_image(&m.encode_content(&x_ji)?, &m.encode_style(&x_ij)?)?;
    let l_cc = cycle_term(x_i, x_j, &x_iji, &x_jij)?;
    Ok(CrossCycle { l_cc, x_ij, x_ji, x_iji, x_jij })
}

/// `‖x_i − x_{i→j→i}‖₁ + ‖x_j − x_{j→i→j}‖₁`.
pub fn cycle_term<T: Scalar>(x_i: &Var<T>, x_j: &Var<T>, x_iji: &Var<T>, x_jij: &Var<T>) -> Result<Var<T>> {
    Ok(ops::add(&ops::l1_mean(x_i, x_iji)?, &ops::l1_mean(x_j, x_jij)?)?)
}

/// Weighted sum of the six parts; errors when a part is missing.
pub fn total_loss(parts: &BTreeMap<&str, f64>, w: &LossWeights) -> Result<f64> {
    let get = |k: &str| parts.get(k).copied().ok_or_else(|| invalid(format!("missing loss part `{k}`")));
    Ok(weighted_total(
        &WeightedParts {
            adv: get("adv")?,
            advc: get("advc")?,
            recon_x: get("recon_x")?,
            recon_c: get("recon_c")?,
            regre_s: get("regre_s")?,
            cc: get("cc")?,
        },
        w,
    ))
}
