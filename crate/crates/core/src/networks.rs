//! The five network roles: shared content encoder `E^c`, shared style
//! encoder `E^s`, generator `G`, multiscale patch discriminator `D` with a
//! domain head, and content discriminator `D^c`.
//!
//! Layer schedules are data ([`LayerSpec`] lists derived from a [`NetSpec`]);
//! parameters live in three [`ParamStore`]s, one per optimizer group.
//!
//! Padding: stride-1 layers with kernel 5 or 7 use reflection padding, all
//! other layers zero padding. Stride-2 transposed convolutions use padding 2
//! and output padding 1, so each one doubles the spatial size exactly.

use haze_tensor::{ops, uniform_fan_in, ParamStore, Scalar, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const IN_EPS: f64 = 1e-5;
const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StyleInjection {
    /// Per-channel affine parameters predicted from the code modulate each
    /// instance-normalized activation in the generator's residual blocks.
    Adain,
    /// The code is tiled over the content grid, concatenated and fused by a
    /// 1×1 convolution before plain residual blocks.
    BroadcastConcat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Conv,
    Deconv,
    ResBlock,
    AdaptivePool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    None,
    Instance,
    Adaptive,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    None,
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
}

/// One row of a layer schedule. `channels` is already width-scaled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub norm: Norm,
    pub act: Activation,
}

const fn layer(kind: LayerKind, channels: usize, kernel: usize, stride: usize, norm: Norm, act: Activation) -> LayerSpec {
    LayerSpec { kind, channels, kernel, stride, norm, act }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    ContentEncoder,
    StyleEncoder,
    Generator,
    Discriminator,
    ContentDiscriminator,
}

impl Role {
    pub const ALL: [Role; 5] =
        [Role::ContentEncoder, Role::StyleEncoder, Role::Generator, Role::Discriminator, Role::ContentDiscriminator];

    /// Parameter-name prefix.
    pub fn prefix(self) -> &'static str {
        match self {
            Role::ContentEncoder => "ec.",
            Role::StyleEncoder => "es.",
            Role::Generator => "g.",
            Role::Discriminator => "d.",
            Role::ContentDiscriminator => "dc.",
        }
    }
}

/// Architecture hyperparameters; schedules are pure functions of this.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetSpec {
    /// Multiplier applied to every nominal channel count.
    pub width: f64,
    pub style_dim: usize,
    pub content_res_blocks: usize,
    pub generator_res_blocks: usize,
    pub style_injection: StyleInjection,
    pub disc_scales: usize,
    pub image_channels: usize,
}

impl Default for NetSpec {
    fn default() -> Self {
        Self {
            width: 1.0,
            style_dim: 8,
            content_res_blocks: 4,
            generator_res_blocks: 4,
            style_injection: StyleInjection::Adain,
            disc_scales: 2,
            image_channels: 3,
        }
    }
}

impl NetSpec {
    pub fn desk() -> Self {
        Self { width: 0.25, ..Self::default() }
    }

    /// Tiny network (one residual block per stack) for gradient checks.
    pub fn miniature() -> Self {
        Self { width: 1.0 / 32.0, style_dim: 3, content_res_blocks: 1, generator_res_blocks: 1, disc_scales: 1, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(invalid(format!("width multiplier {} must be positive", self.width)));
        }
        if self.style_dim == 0 || self.disc_scales == 0 || self.image_channels == 0 {
            return Err(invalid("style_dim, disc_scales and image_channels must be positive"));
        }
        if self.content_res_blocks == 0 || self.generator_res_blocks == 0 {
            return Err(invalid("residual block counts must be positive"));
        }
        Ok(())
    }

    /// Width-scaled channel count, at least 1.
    pub fn ch(&self, nominal: usize) -> usize {
        ((nominal as f64 * self.width).round() as usize).max(1)
    }

    /// Channels of the content map.
    pub fn content_channels(&self) -> usize {
        self.ch(256)
    }

    pub fn schedule(&self, role: Role) -> Vec<LayerSpec> {
        use Activation as A;
        use LayerKind as L;
        let ch = |n| self.ch(n);
        match role {
            Role::ContentEncoder => {
                let mut s = vec![
                    layer(L::Conv, ch(64), 7, 1, Norm::Instance, A::None),
                    layer(L::Conv, ch(128), 4, 2, Norm::Instance, A::Relu),
                    layer(L::Conv, ch(128), 4, 2, Norm::Instance, A::Relu),
                ];
                s.extend((0..self.content_res_blocks).map(|_| layer(L::ResBlock, ch(256), 3, 1, Norm::Instance, A::Relu)));
                s
            }
            Role::StyleEncoder => vec![
                layer(L::Conv, ch(64), 7, 1, Norm::None, A::Relu),
                layer(L::Conv, ch(128), 4, 2, Norm::None, A::Relu),
                layer(L::Conv, ch(256), 4, 2, Norm::None, A::Relu),
                layer(L::AdaptivePool, ch(256), 1, 1, Norm::None, A::None),
                layer(L::Conv, self.style_dim, 1, 1, Norm::None, A::Sigmoid),
            ],
            Role::Generator => {
                let norm = match self.style_injection {
                    StyleInjection::Adain => Norm::Adaptive,
                    StyleInjection::BroadcastConcat => Norm::Instance,
                };
                let mut s: Vec<LayerSpec> =
                    (0..self.generator_res_blocks).map(|_| layer(L::ResBlock, ch(256), 3, 1, norm, A::Relu)).collect();
                s.push(layer(L::Deconv, ch(128), 5, 2, Norm::None, A::Relu));
                s.push(layer(L::Deconv, ch(64), 5, 2, Norm::None, A::Relu));
                s.push(layer(L::Deconv, self.image_channels, 7, 1, Norm::None, A::Tanh));
                s
            }
            Role::Discriminator => vec![
                layer(L::Conv, ch(64), 4, 2, Norm::None, A::LeakyRelu),
                layer(L::Conv, ch(128), 4, 2, Norm::None, A::LeakyRelu),
                layer(L::Conv, ch(256), 4, 2, Norm::None, A::LeakyRelu),
                layer(L::Conv, 1, 4, 2, Norm::None, A::None),
            ],
            Role::ContentDiscriminator => vec![
                layer(L::Conv, ch(256), 4, 2, Norm::None, A::LeakyRelu),
                layer(L::Conv, ch(256), 4, 2, Norm::None, A::LeakyRelu),
                layer(L::Conv, ch(256), 3, 1, Norm::None, A::LeakyRelu),
                layer(L::Conv, 1, 1, 1, Norm::None, A::None),
            ],
        }
    }

    fn input_channels(&self, role: Role) -> usize {
        match role {
            Role::ContentEncoder | Role::StyleEncoder | Role::Discriminator => self.image_channels,
            Role::Generator | Role::ContentDiscriminator => self.content_channels(),
        }
    }
}

/// Per-scale realness patch maps (logits) plus `(B, 2)` domain logits.
pub struct DiscOutput<T: Scalar> {
    pub patches: Vec<Var<T>>,
    pub domain_logits: Var<T>,
}

/// Domain label used by the domain head: haze is class 0, haze-free class 1.
pub const HAZE_CLASS: usize = 0;
pub const CLEAR_CLASS: usize = 1;

/// Parameter counts per role.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamCounts {
    pub content_encoder: usize,
    pub style_encoder: usize,
    pub generator: usize,
    pub discriminator: usize,
    pub content_discriminator: usize,
}

impl ParamCounts {
    pub fn total(&self) -> usize {
        self.content_encoder + self.style_encoder + self.generator + self.discriminator + self.content_discriminator
    }
}

/// Every network of the model, with parameters grouped by optimizer:
/// `gen` holds `E^c`, `E^s` and `G`; `disc` holds `D`; `content_disc` holds `D^c`.
pub struct Networks<T: Scalar> {
    pub spec: NetSpec,
    pub gen: ParamStore<T>,
    pub disc: ParamStore<T>,
    pub content_disc: ParamStore<T>,
}

struct Builder<'a, T: Scalar> {
    store: &'a mut ParamStore<T>,
    rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<()> {
        let fan_in = cin * k * k;
        self.store.insert(format!("{name}.w"), uniform_fan_in(self.rng, &[cout, cin, k, k], fan_in))?;
        self.store.insert(format!("{name}.b"), uniform_fan_in(self.rng, &[cout], fan_in))?;
        Ok(())
    }

    fn deconv(&mut self, name: &str, cin: usize, cout: usize, k: usize) -> Result<()> {
        let fan_in = cout * k * k;
        self.store.insert(format!("{name}.w"), uniform_fan_in(self.rng, &[cin, cout, k, k], fan_in))?;
        self.store.insert(format!("{name}.b"), uniform_fan_in(self.rng, &[cout], fan_in))?;
        Ok(())
    }

    fn linear(&mut self, name: &str, cin: usize, cout: usize) -> Result<()> {
        self.store.insert(format!("{name}.w"), uniform_fan_in(self.rng, &[cout, cin], cin))?;
        self.store.insert(format!("{name}.b"), uniform_fan_in(self.rng, &[cout], cin))?;
        Ok(())
    }

    fn stack(&mut self, prefix: &str, spec: &NetSpec, schedule: &[LayerSpec], mut cin: usize) -> Result<usize> {
        for (i, l) in schedule.iter().enumerate() {
            let name = format!("{prefix}{i}");
            match l.kind {
                LayerKind::Conv => self.conv(&name, cin, l.channels, l.kernel)?,
                LayerKind::Deconv if l.stride == 1 => self.conv(&name, cin, l.channels, l.kernel)?,
                LayerKind::Deconv => self.deconv(&name, cin, l.channels, l.kernel)?,
                LayerKind::ResBlock => {
                    self.conv(&format!("{name}.conv1"), cin, l.channels, l.kernel)?;
                    self.conv(&format!("{name}.conv2"), l.channels, l.channels, l.kernel)?;
                    if cin != l.channels {
                        self.conv(&format!("{name}.skip"), cin, l.channels, 1)?;
                    }
                    if l.norm == Norm::Adaptive {
                        for norm in ["style1", "style2"] {
                            self.linear(&format!("{name}.{norm}.gamma"), spec.style_dim, l.channels)?;
                            self.linear(&format!("{name}.{norm}.beta"), spec.style_dim, l.channels)?;
                        }
                    }
                }
                LayerKind::AdaptivePool => {}
            }
            cin = l.channels;
        }
        Ok(cin)
    }
}

impl<T: Scalar> Networks<T> {
    /// Fresh networks with parameters drawn from `seed`.
    pub fn new(spec: &NetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = ParamStore::new();
        let mut disc = ParamStore::new();
        let mut content_disc = ParamStore::new();
        {
            let mut b = Builder { store: &mut gen, rng: &mut rng };
            b.stack("ec.", spec, &spec.schedule(Role::ContentEncoder), spec.image_channels)?;
            b.stack("es.", spec, &spec.schedule(Role::StyleEncoder), spec.image_channels)?;
            let cc = spec.content_channels();
            if spec.style_injection == StyleInjection::BroadcastConcat {
                b.conv("g.fuse", cc + spec.style_dim, cc, 1)?;
            }
            b.stack("g.", spec, &spec.schedule(Role::Generator), cc)?;
        }
        {
            let mut b = Builder { store: &mut disc, rng: &mut rng };
            let schedule = spec.schedule(Role::Discriminator);
            for scale in 0..spec.disc_scales {
                b.stack(&format!("d.s{scale}."), spec, &schedule, spec.image_channels)?;
            }
            b.linear("d.cls", schedule[schedule.len() - 2].channels, 2)?;
        }
        {
            let mut b = Builder { store: &mut content_disc, rng: &mut rng };
            b.stack("dc.", spec, &spec.schedule(Role::ContentDiscriminator), spec.input_channels(Role::ContentDiscriminator))?;
        }
        Ok(Self { spec: spec.clone(), gen, disc, content_disc })
    }

    pub fn param_counts(&self) -> ParamCounts {
        let count = |store: &ParamStore<T>, prefix: &str| {
            store.iter().filter(|(n, _)| n.starts_with(prefix)).map(|(_, t)| t.numel()).sum()
        };
        ParamCounts {
            content_encoder: count(&self.gen, "ec."),
            style_encoder: count(&self.gen, "es."),
            generator: count(&self.gen, "g."),
            discriminator: count(&self.disc, "d."),
            content_discriminator: count(&self.content_disc, "dc."),
        }
    }

    /// Turn gradient collection on or off for every store.
    pub fn set_trainable(&mut self, trainable: bool) {
        self.gen.set_trainable(trainable);
        self.disc.set_trainable(trainable);
        self.content_disc.set_trainable(trainable);
    }

    /// `E^c`: `(B, C, H, W)` → `(B, C_c, H/4, W/4)`.
    pub fn content_encode(&self, x: &Var<T>) -> Result<Var<T>> {
        let s = x.shape();
        if s.len() != 4 || s[2] % 4 != 0 || s[3] % 4 != 0 {
            return Err(Error::Shape { op: "content_encode", detail: format!("spatial dims of {s:?} must be divisible by 4") });
        }
        run_stack(&self.gen, "ec.", &self.spec.schedule(Role::ContentEncoder), x, None)
    }

    /// `E^s`: `(B, C, H, W)` → `(B, S)` in `(0, 1)`.
    pub fn style_encode(&self, x: &Var<T>) -> Result<Var<T>> {
        let out = run_stack(&self.gen, "es.", &self.spec.schedule(Role::StyleEncoder), x, None)?;
        let b = out.shape()[0];
        Ok(ops::reshape(&out, &[b, self.spec.style_dim])?)
    }

    /// `G`: content `(B, C_c, h, w)` and style `(B, S)` → image `(B, C, 4h, 4w)` in `[−1, 1]`.
    pub fn generate(&self, c: &Var<T>, s: &Var<T>) -> Result<Var<T>> {
        let (cs, ss) = (c.shape(), s.shape());
        if cs.len() != 4 || ss.len() != 2 || cs[0] != ss[0] || ss[1] != self.spec.style_dim || cs[1] != self.spec.content_channels() {
            return Err(Error::Shape { op: "generate", detail: format!("content {cs:?} with style {ss:?}") });
        }
        let schedule = self.spec.schedule(Role::Generator);
        match self.spec.style_injection {
            StyleInjection::Adain => run_stack(&self.gen, "g.", &schedule, c, Some(s)),
            StyleInjection::BroadcastConcat => {
                let tiled = ops::broadcast_spatial(s, cs[2], cs[3])?;
                let fused = conv(&self.gen, "g.fuse", &ops::cat_channels(c, &tiled)?, 1, Padding::Zero(0))?;
                run_stack(&self.gen, "g.", &schedule, &fused, None)
            }
        }
    }

    /// `D`: patch logits at full and successively halved resolution, plus
    /// domain logits from the full-resolution trunk.
    pub fn discriminate(&self, x: &Var<T>) -> Result<DiscOutput<T>> {
        let schedule = self.spec.schedule(Role::Discriminator);
        let (trunk, head) = schedule.split_at(schedule.len() - 1);
        let mut patches = Vec::with_capacity(self.spec.disc_scales);
        let mut input = x.clone();
        let mut domain_logits = None;
        for scale in 0..self.spec.disc_scales {
            if scale > 0 {
                input = ops::avg_pool2(&input)?;
            }
            let prefix = format!("d.s{scale}.");
            let features = run_stack(&self.disc, &prefix, trunk, &input, None)?;
            let head_name = format!("{prefix}{}", trunk.len());
            patches.push(apply_layer(&self.disc, &head_name, &head[0], &features, None)?);
            if scale == 0 {
                let pooled = ops::global_avg_pool(&features)?;
                let b = pooled.shape()[0];
                let flat = ops::reshape(&pooled, &[b, pooled.shape()[1]])?;
                domain_logits = Some(ops::linear(&flat, &self.disc.get("d.cls.w")?, Some(&self.disc.get("d.cls.b")?))?);
            }
        }
        Ok(DiscOutput { patches, domain_logits: domain_logits.expect("at least one scale") })
    }

    /// `D^c`: content map → `(B, 1, h, w)` domain logits (high means haze).
    pub fn content_discriminate(&self, c: &Var<T>) -> Result<Var<T>> {
        run_stack(&self.content_disc, "dc.", &self.spec.schedule(Role::ContentDiscriminator), c, None)
    }
}

/// Spatial size after each layer of `role` for a square input of side `size`.
pub fn output_sides(spec: &NetSpec, role: Role, size: usize) -> Vec<usize> {
    let mut side = size;
    spec.schedule(role)
        .iter()
        .map(|l| {
            side = match (l.kind, l.stride) {
                (LayerKind::AdaptivePool, _) => 1,
                (LayerKind::Deconv, 2) => side * 2,
                (_, 1) => side,
                (_, s) => (side + 2 * zero_pad(l.kernel) - l.kernel) / s + 1,
            };
            side
        })
        .collect()
}

enum Padding {
    Zero(usize),
    Reflect(usize),
}

fn zero_pad(kernel: usize) -> usize {
    match kernel {
        4 => 1,
        k => k / 2,
    }
}

fn padding_for(l: &LayerSpec) -> Padding {
    if l.stride == 1 && l.kernel >= 5 {
        Padding::Reflect(l.kernel / 2)
    } else {
        Padding::Zero(zero_pad(l.kernel))
    }
}

fn conv<T: Scalar>(store: &ParamStore<T>, name: &str, x: &Var<T>, stride: usize, pad: Padding) -> Result<Var<T>> {
    let w = store.get(&format!("{name}.w"))?;
    let b = store.get(&format!("{name}.b"))?;
    let out = match pad {
        Padding::Zero(p) => ops::conv2d(x, &w, Some(&b), stride, p)?,
        Padding::Reflect(0) => ops::conv2d(x, &w, Some(&b), stride, 0)?,
        Padding::Reflect(p) => ops::conv2d(&ops::reflect_pad(x, p)?, &w, Some(&b), stride, 0)?,
    };
    Ok(out)
}

fn activate<T: Scalar>(x: Var<T>, act: Activation) -> Var<T> {
    match act {
        Activation::None => x,
        Activation::Relu => ops::relu(&x),
        Activation::LeakyRelu => ops::leaky_relu(&x, LEAKY_SLOPE),
        Activation::Sigmoid => ops::sigmoid(&x),
        Activation::Tanh => ops::tanh(&x),
    }
}

/// Instance norm, then the style affine when `style` is given:
/// `γ = 1 + W_γ s`, `β = W_β s`.
fn normalize<T: Scalar>(store: &ParamStore<T>, name: &str, x: &Var<T>, norm: Norm, style: Option<&Var<T>>) -> Result<Var<T>> {
    match norm {
        Norm::None => Ok(x.clone()),
        Norm::Instance => Ok(ops::instance_norm(x, IN_EPS)?),
        Norm::Adaptive => {
            let s = style.ok_or_else(|| invalid(format!("{name}: adaptive norm needs a style code")))?;
            let normed = ops::instance_norm(x, IN_EPS)?;
            let affine = |part: &str| -> Result<Var<T>> {
                let w = store.get(&format!("{name}.{part}.w"))?;
                let b = store.get(&format!("{name}.{part}.b"))?;
                Ok(ops::linear(s, &w, Some(&b))?)
            };
            let gamma = ops::add_scalar(&affine("gamma")?, 1.0);
            Ok(ops::modulate(&normed, &gamma, &affine("beta")?)?)
        }
    }
}

fn res_block<T: Scalar>(store: &ParamStore<T>, name: &str, l: &LayerSpec, x: &Var<T>, style: Option<&Var<T>>) -> Result<Var<T>> {
    let pad = || Padding::Zero(zero_pad(l.kernel));
    let h = conv(store, &format!("{name}.conv1"), x, 1, pad())?;
    let h = normalize(store, &format!("{name}.style1"), &h, l.norm, style)?;
    let h = activate(h, l.act);
    let h = conv(store, &format!("{name}.conv2"), &h, 1, pad())?;
    let h = normalize(store, &format!("{name}.style2"), &h, l.norm, style)?;
    let skip = if x.shape()[1] != l.channels { conv(store, &format!("{name}.skip"), x, 1, Padding::Zero(0))? } else { x.clone() };
    Ok(ops::add(&skip, &h)?)
}

fn apply_layer<T: Scalar>(store: &ParamStore<T>, name: &str, l: &LayerSpec, x: &Var<T>, style: Option<&Var<T>>) -> Result<Var<T>> {
    let y = match l.kind {
        LayerKind::Conv => {
            let y = conv(store, name, x, l.stride, padding_for(l))?;
            let y = normalize(store, name, &y, l.norm, style)?;
            activate(y, l.act)
        }
        LayerKind::Deconv if l.stride == 1 => activate(conv(store, name, x, 1, padding_for(l))?, l.act),
        LayerKind::Deconv => {
            let w = store.get(&format!("{name}.w"))?;
            let b = store.get(&format!("{name}.b"))?;
            let p = l.kernel / 2;
            activate(ops::conv_transpose2d(x, &w, Some(&b), l.stride, p, l.stride - 1)?, l.act)
        }
        LayerKind::ResBlock => res_block(store, name, l, x, style)?,
        LayerKind::AdaptivePool => ops::global_avg_pool(x)?,
    };
    Ok(y)
}

fn run_stack<T: Scalar>(store: &ParamStore<T>, prefix: &str, schedule: &[LayerSpec], x: &Var<T>, style: Option<&Var<T>>) -> Result<Var<T>> {
    let mut h = x.clone();
    for (i, l) in schedule.iter().enumerate() {
        h = apply_layer(store, &format!("{prefix}{i}"), l, &h, style)?;
    }
    Ok(h)
}
