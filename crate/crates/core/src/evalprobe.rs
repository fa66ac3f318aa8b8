//! Image metrics, feature-space distances and disentanglement probes.

use haze_tensor::{ops, uniform_fan_in, Adam, ParamStore, Scalar, Tensor, Var};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::ImageGrid;
use crate::objectives::StyleEncoder;

fn check_aligned(op: &'static str, a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::Shape {
            op,
            detail: format!("{}x{}x{} vs {}x{}x{}", a.width(), a.height(), a.channels(), b.width(), b.height(), b.channels()),
        })
    }
}

/// Peak signal-to-noise ratio in dB for images in `[0, 1]`.
/// Identical images give `f64::INFINITY`.
pub fn psnr(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    check_aligned("psnr", a, b)?;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03 }
    }
}

/// Normalized 1-D Gaussian taps of length `window`.
pub fn gaussian_taps(window: usize, sigma: f64) -> Vec<f64> {
    let mid = (window as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..window).map(|i| (-(i as f64 - mid).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mean local SSIM over every window fully inside the image, averaged over
/// channels. Dynamic range is 1.
pub fn ssim(a: &ImageGrid, b: &ImageGrid, params: &SsimParams) -> Result<f64> {
    check_aligned("ssim", a, b)?;
    let win = params.window;
    if win == 0 || a.width() < win || a.height() < win {
        return Err(invalid(format!("ssim window {win} exceeds image {}x{}", a.width(), a.height())));
    }
    let taps = gaussian_taps(win, params.sigma);
    let (c1, c2) = ((params.k1).powi(2), (params.k2).powi(2));
    let (w, h) = (a.width(), a.height());
    let (ow, oh) = (w - win + 1, h - win + 1);
    let mut total = 0.0;
    for ch in 0..a.channels() {
        let maps: [Vec<f64>; 5] = {
            let mut m: [Vec<f64>; 5] = Default::default();
            for y in 0..h {
                for x in 0..w {
                    let (p, q) = (a.get(x, y, ch), b.get(x, y, ch));
                    for (slot, v) in m.iter_mut().zip([p, q, p * p, q * q, p * q]) {
                        slot.push(v);
                    }
                }
            }
            m
        };
        let filtered: Vec<Vec<f64>> = maps.iter().map(|m| separable_valid(m, w, h, &taps)).collect();
        for i in 0..ow * oh {
            let (mu_a, mu_b) = (filtered[0][i], filtered[1][i]);
            let var_a = filtered[2][i] - mu_a * mu_a;
            let var_b = filtered[3][i] - mu_b * mu_b;
            let cov = filtered[4][i] - mu_a * mu_b;
            total += ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
        }
    }
    Ok(total / (ow * oh * a.channels()) as f64)
}

fn separable_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(t, &g)| g * src[y * w + x + t]).sum();
        }
    }
    let oh = h - k + 1;
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(t, &g)| g * rows[(y + t) * ow + x]).sum();
        }
    }
    out
}

fn feature_matrix(op: &str, feats: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let dim = feats.first().map(Vec::len).unwrap_or(0);
    if feats.len() < 2 {
        return Err(invalid(format!("{op} needs at least 2 samples, got {}", feats.len())));
    }
    if dim == 0 || feats.iter().any(|f| f.len() != dim) {
        return Err(invalid(format!("{op}: feature vectors must share one non-zero length")));
    }
    Ok(DMatrix::from_fn(feats.len(), dim, |r, c| feats[r][c]))
}

fn mean_and_cov(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows() as f64;
    let mean = DVector::from_fn(m.ncols(), |c, _| m.column(c).sum() / n);
    let mut centered = m.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1.0);
    (mean, cov)
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussians fitted to two feature sets
/// (rows are samples, covariance with `n − 1` normalization).
pub fn frechet_distance(feats_a: &[Vec<f64>], feats_b: &[Vec<f64>]) -> Result<f64> {
    let (a, b) = (feature_matrix("frechet_distance", feats_a)?, feature_matrix("frechet_distance", feats_b)?);
    if a.ncols() != b.ncols() {
        return Err(invalid(format!("frechet_distance: feature dims {} and {} differ", a.ncols(), b.ncols())));
    }
    let (mu_a, cov_a) = mean_and_cov(&a);
    let (mu_b, cov_b) = mean_and_cov(&b);
    let root_a = psd_sqrt(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let cross = SymmetricEigen::new((&inner + inner.transpose()) * 0.5).eigenvalues.map(|v| v.max(0.0).sqrt()).sum();
    let d = (mu_a - mu_b).norm_squared() + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(d.max(0.0))
}

/// A deterministic map from an image to feature stages of fixed length.
pub trait Embedder: Send + Sync {
    fn name(&self) -> &str;

    /// Feature vectors, one per stage, shallow to deep.
    fn stages(&self, image: &ImageGrid) -> Result<Vec<Vec<f64>>>;

    /// The deepest stage, used for Fréchet statistics.
    fn embed(&self, image: &ImageGrid) -> Result<Vec<f64>> {
        self.stages(image)?.pop().ok_or_else(|| invalid(format!("embedder `{}` produced no stages", self.name())))
    }
}

/// Flattened pixel values as a single stage.
#[derive(Clone, Copy, Debug, Default)]
pub struct PixelFlatten;

impl Embedder for PixelFlatten {
    fn name(&self) -> &str {
        "pixel-flatten"
    }

    fn stages(&self, image: &ImageGrid) -> Result<Vec<Vec<f64>>> {
        Ok(vec![image.data().to_vec()])
    }
}

/// A fixed, seeded random convolutional network. Each stage is the
/// channel-wise spatial mean and standard deviation of one ReLU conv layer,
/// so the feature length does not depend on the image size.
#[derive(Debug)]
pub struct RandomConvFrozen {
    layers: Vec<(Tensor<f64>, Tensor<f64>)>,
}

impl RandomConvFrozen {
    pub const CHANNELS: [usize; 3] = [16, 32, 64];

    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 3;
        let layers = Self::CHANNELS
            .iter()
            .map(|&cout| {
                let w = uniform_fan_in(&mut rng, &[cout, cin, 3, 3], cin * 9);
                let b = uniform_fan_in(&mut rng, &[cout], cin * 9);
                cin = cout;
                (w, b)
            })
            .collect();
        Self { layers }
    }
}

impl Default for RandomConvFrozen {
    fn default() -> Self {
        Self::new(0)
    }
}

impl Embedder for RandomConvFrozen {
    fn name(&self) -> &str {
        "random-conv-frozen"
    }

    fn stages(&self, image: &ImageGrid) -> Result<Vec<Vec<f64>>> {
        if image.channels() != 3 {
            return Err(invalid(format!("random-conv-frozen expects 3 channels, got {}", image.channels())));
        }
        let min_side = 1 << Self::CHANNELS.len();
        if image.width() < min_side || image.height() < min_side {
            return Err(invalid(format!("random-conv-frozen needs images of at least {min_side}x{min_side}")));
        }
        let mut x = Var::constant(image.to_working::<f64>());
        let mut out = Vec::with_capacity(self.layers.len());
        for (w, b) in &self.layers {
            x = ops::relu(&ops::conv2d(&x, &Var::constant(w.clone()), Some(&Var::constant(b.clone())), 2, 1)?);
            let (_, c, h, wd) = x.value().nchw();
            let plane = h * wd;
            let mut feats = Vec::with_capacity(2 * c);
            for p in x.value().data().chunks(plane) {
                let mean = p.iter().sum::<f64>() / plane as f64;
                let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / plane as f64;
                feats.push(mean);
                feats.push(var.sqrt());
            }
            out.push(feats);
        }
        Ok(out)
    }
}

/// Built-in embedders by name.
pub fn embedder_by_name(name: &str) -> Result<Box<dyn Embedder>> {
    match name {
        "pixel-flatten" => Ok(Box::new(PixelFlatten)),
        "random-conv-frozen" => Ok(Box::new(RandomConvFrozen::default())),
        other => Err(invalid(format!("unknown embedder `{other}` (built-ins: pixel-flatten, random-conv-frozen)"))),
    }
}

/// `sqrt(Σ_l w_l · ‖f_l(a) − f_l(b)‖² / dim_l)`: per-stage squared
/// distances are normalized by stage length, so the pixel embedder with unit
/// weight gives the RMS pixel difference.
pub fn perceptual_distance(a: &ImageGrid, b: &ImageGrid, embedder: &dyn Embedder, layer_weights: &[f64]) -> Result<f64> {
    check_aligned("perceptual_distance", a, b)?;
    let (fa, fb) = (embedder.stages(a)?, embedder.stages(b)?);
    if fa.is_empty() {
        return Err(invalid(format!("embedder `{}` exposes no feature stages", embedder.name())));
    }
    if layer_weights.len() != fa.len() {
        return Err(invalid(format!("{} layer weights for {} stages of `{}`", layer_weights.len(), fa.len(), embedder.name())));
    }
    if layer_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(invalid("layer weights must be finite and >= 0"));
    }
    let total: f64 = fa
        .iter()
        .zip(&fb)
        .zip(layer_weights)
        .map(|((x, y), w)| w * x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / x.len() as f64)
        .sum();
    Ok(total.sqrt())
}

/// Mean perceptual distance over `pairs` random distinct pairs of `images`.
pub fn diversity(images: &[ImageGrid], embedder: &dyn Embedder, layer_weights: &[f64], pairs: usize, seed: u64) -> Result<f64> {
    if images.len() < 2 || pairs == 0 {
        return Err(invalid("diversity needs at least 2 images and 1 pair"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..pairs {
        let picked = rand::seq::index::sample(&mut rng, images.len(), 2);
        total += perceptual_distance(&images[picked.index(0)], &images[picked.index(1)], embedder, layer_weights)?;
    }
    Ok(total / pairs as f64)
}

/// Labeled latent vectors split into disjoint train and test parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeDataset {
    pub train: Vec<(Vec<f64>, usize)>,
    pub test: Vec<(Vec<f64>, usize)>,
}

impl ProbeDataset {
    pub fn new(train: Vec<(Vec<f64>, usize)>, test: Vec<(Vec<f64>, usize)>) -> Result<Self> {
        let ds = Self { train, test };
        ds.validate()?;
        Ok(ds)
    }

    /// Deterministic stratified split; `test_fraction` of each class goes to test.
    pub fn split(samples: Vec<(Vec<f64>, usize)>, test_fraction: f64, seed: u64) -> Result<Self> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(invalid(format!("test fraction {test_fraction} must lie in (0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let classes = samples.iter().map(|s| s.1).max().map_or(0, |m| m + 1);
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for class in 0..classes {
            let mut members: Vec<_> = samples.iter().filter(|s| s.1 == class).cloned().collect();
            members.shuffle(&mut rng);
            let n_test = ((members.len() as f64) * test_fraction).round() as usize;
            test.extend(members.drain(..n_test));
            train.extend(members);
        }
        Self::new(train, test)
    }

    pub fn dim(&self) -> usize {
        self.train.first().map_or(0, |s| s.0.len())
    }

    pub fn class_count(&self) -> usize {
        self.train.iter().chain(&self.test).map(|s| s.1).max().map_or(0, |m| m + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        if dim == 0 || self.test.is_empty() {
            return Err(invalid("probe dataset needs non-empty train and test parts with non-empty features"));
        }
        if self.train.iter().chain(&self.test).any(|s| s.0.len() != dim || s.0.iter().any(|v| !v.is_finite())) {
            return Err(invalid("probe features must share one length and be finite"));
        }
        let classes = self.class_count();
        let mut counts = vec![0usize; classes];
        for s in self.train.iter().chain(&self.test) {
            counts[s.1] += 1;
        }
        if classes < 2 || counts.contains(&0) {
            return Err(invalid("probe dataset needs at least two populated classes"));
        }
        let (lo, hi) = (*counts.iter().min().unwrap(), *counts.iter().max().unwrap());
        if (hi - lo) as f64 > 0.1 * hi as f64 {
            return Err(invalid(format!("probe classes unbalanced beyond 10%: counts {counts:?}")));
        }
        let seen: std::collections::HashSet<Vec<u64>> =
            self.train.iter().map(|s| s.0.iter().map(|v| v.to_bits()).collect()).collect();
        if self.test.iter().any(|s| seen.contains(&s.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>())) {
            return Err(invalid("probe train and test parts share a sample"));
        }
        Ok(())
    }
}

/// Fixed recipe for the probe classifier: `Linear(d, hidden) → ReLU →
/// Linear(hidden, classes)`, full-batch Adam on standardized features.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { hidden: 64, epochs: 300, lr: 1e-3, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub train_acc: f64,
    pub test_acc: f64,
}

fn standardize(rows: &[(Vec<f64>, usize)], mean: &[f64], std: &[f64]) -> Tensor<f64> {
    let dim = mean.len();
    let data = rows.iter().flat_map(|(f, _)| f.iter().zip(mean).zip(std).map(|((v, m), s)| (v - m) / s)).collect();
    Tensor::from_vec(vec![rows.len(), dim], data).expect("rows share dim")
}

fn accuracy(store: &ParamStore<f64>, x: &Tensor<f64>, labels: &[usize]) -> Result<f64> {
    let logits = mlp(store, &Var::constant(x.clone()))?;
    let classes = logits.shape()[1];
    let correct = logits
        .value()
        .data()
        .chunks(classes)
        .zip(labels)
        .filter(|(row, &y)| {
            let best = row.iter().enumerate().fold(0, |b, (i, v)| if *v > row[b] { i } else { b });
            best == y
        })
        .count();
    Ok(correct as f64 / labels.len() as f64)
}

fn mlp(store: &ParamStore<f64>, x: &Var<f64>) -> Result<Var<f64>> {
    let h = ops::relu(&ops::linear(x, &store.get("l1.w")?, Some(&store.get("l1.b")?))?);
    Ok(ops::linear(&h, &store.get("l2.w")?, Some(&store.get("l2.b")?))?)
}

/// Train the probe classifier and report train and test accuracy.
pub fn latent_domain_probe(data: &ProbeDataset, config: &ProbeConfig) -> Result<ProbeResult> {
    data.validate()?;
    if config.hidden == 0 || config.epochs == 0 || !(config.lr > 0.0) {
        return Err(invalid("probe needs hidden > 0, epochs > 0 and lr > 0"));
    }
    let dim = data.dim();
    let n = data.train.len() as f64;
    let mean: Vec<f64> = (0..dim).map(|d| data.train.iter().map(|s| s.0[d]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..dim)
        .map(|d| {
            let v = data.train.iter().map(|s| (s.0[d] - mean[d]).powi(2)).sum::<f64>() / n;
            if v > 1e-24 { v.sqrt() } else { 1.0 }
        })
        .collect();
    let x_train = standardize(&data.train, &mean, &std);
    let x_test = standardize(&data.test, &mean, &std);
    let y_train: Vec<usize> = data.train.iter().map(|s| s.1).collect();
    let y_test: Vec<usize> = data.test.iter().map(|s| s.1).collect();

    let classes = data.class_count();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut store = ParamStore::new();
    store.insert("l1.w", uniform_fan_in(&mut rng, &[config.hidden, dim], dim))?;
    store.insert("l1.b", uniform_fan_in(&mut rng, &[config.hidden], dim))?;
    store.insert("l2.w", uniform_fan_in(&mut rng, &[classes, config.hidden], config.hidden))?;
    store.insert("l2.b", uniform_fan_in(&mut rng, &[classes], config.hidden))?;
    let mut adam = Adam::new(&store, 0.9, 0.999);
    let x = Var::constant(x_train.clone());
    for _ in 0..config.epochs {
        let loss = ops::cross_entropy(&mlp(&store, &x)?, &y_train)?;
        let grads = loss.backward();
        adam.step(&mut store, &grads, config.lr)?;
    }
    Ok(ProbeResult { train_acc: accuracy(&store, &x_train, &y_train)?, test_acc: accuracy(&store, &x_test, &y_test)? })
}

/// `1 −` the fraction of variance along the first principal axis.
/// Zero means the codes lie on one line; a set with no spread counts as collinear.
pub fn collinearity(codes: &[Vec<f64>]) -> Result<f64> {
    if codes.len() < 3 {
        return Err(invalid(format!("collinearity needs at least 3 codes, got {}", codes.len())));
    }
    let m = feature_matrix("collinearity", codes)?;
    let n = m.nrows() as f64;
    let mean = DVector::from_fn(m.ncols(), |c, _| m.column(c).sum() / n);
    let mut centered = m;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let sv = centered.singular_values();
    let energy: Vec<f64> = sv.iter().map(|s| s * s).collect();
    let total: f64 = energy.iter().sum();
    if total == 0.0 {
        return Ok(0.0);
    }
    let top = energy.iter().cloned().fold(0.0, f64::max);
    Ok(((total - top) / total).clamp(0.0, 1.0))
}

/// `b + k·(a − b)` elementwise, exactly `a` at `k = 1` and exactly `b` at
/// `k = 0` or when `a == b`.
fn blend<T: Scalar>(a: &[T], b: &[T], k: f64) -> Vec<T> {
    if k == 1.0 {
        return a.to_vec();
    }
    let k = T::from_f64_lossy(k);
    a.iter().zip(b).map(|(&p, &q)| q + k * (p - q)).collect()
}

/// Per-pair `‖E^s(k·x_i + (1−k)·x_j) − (k·E^s(x_i) + (1−k)·E^s(x_j))‖₁ / S`
/// for working-range batches `x_i`, `x_j`.
pub fn equivariance_residual<T: Scalar>(x_i: &Tensor<T>, x_j: &Tensor<T>, k: f64, es: &impl StyleEncoder<T>) -> Result<Vec<f64>> {
    if x_i.shape() != x_j.shape() {
        return Err(Error::Shape { op: "equivariance_residual", detail: format!("{:?} vs {:?}", x_i.shape(), x_j.shape()) });
    }
    if !(0.0..=1.0).contains(&k) {
        return Err(invalid(format!("interpolation weight {k} outside [0, 1]")));
    }
    let mixed = Tensor::from_vec(x_i.shape().to_vec(), blend(x_i.data(), x_j.data(), k))?;
    let s_mix = es.encode_style(&Var::constant(mixed))?;
    let s_i = es.encode_style(&Var::constant(x_i.clone()))?;
    let s_j = es.encode_style(&Var::constant(x_j.clone()))?;
    let target = blend(s_i.value().data(), s_j.value().data(), k);
    let dim = s_mix.shape()[1];
    Ok(s_mix
        .value()
        .data()
        .chunks(dim)
        .zip(target.chunks(dim))
        .map(|(p, q)| p.iter().zip(q).map(|(&a, &b)| (a - b).to_f64_lossy().abs()).sum::<f64>() / dim as f64)
        .collect())
}

/// Per-pair `‖E^s(x_i) − E^s(x_j)‖₁ / S`, the scale of the codes an
/// equivariance residual is measured against.
pub fn style_spread<T: Scalar>(x_i: &Tensor<T>, x_j: &Tensor<T>, es: &impl StyleEncoder<T>) -> Result<Vec<f64>> {
    if x_i.shape() != x_j.shape() {
        return Err(Error::Shape { op: "style_spread", detail: format!("{:?} vs {:?}", x_i.shape(), x_j.shape()) });
    }
    let s_i = es.encode_style(&Var::constant(x_i.clone()))?;
    let s_j = es.encode_style(&Var::constant(x_j.clone()))?;
    let dim = s_i.shape()[1];
    Ok(s_i
        .value()
        .data()
        .chunks(dim)
        .zip(s_j.value().data().chunks(dim))
        .map(|(p, q)| p.iter().zip(q).map(|(&a, &b)| (a - b).to_f64_lossy().abs()).sum::<f64>() / dim as f64)
        .collect())
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(invalid(format!("pearson needs two equal-length series of at least 2 values, got {} and {}", x.len(), y.len())));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        return Err(invalid("pearson is undefined for a series with zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Ranks from 1, ties receiving the mean of their positions.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            out[o] = r;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation: Pearson on tie-averaged ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid(format!("spearman needs equal lengths, got {} and {}", x.len(), y.len())));
    }
    pearson(&ranks(x), &ranks(y))
}
