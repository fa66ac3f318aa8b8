//! Procedural haze-free scenes with ground-truth depth, and haze rendering
//! through the atmospheric scattering model `I = J·t + A·(1 − t)`,
//! `t = exp(−β·d)`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Error, Result};
use crate::grid::ImageGrid;
use crate::imageio;
use crate::manifest::{Manifest, ManifestRecord, Split, MANIFEST_FILE};

/// Slack allowed above 1 / below 0 before haze output counts as invalid.
const RANGE_SLACK: f64 = 1e-6;

/// Per-pixel scene depth in meters; strictly positive and finite.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height || width == 0 || height == 0 {
            return Err(invalid(format!("depth map {width}x{height} with {} values", values.len())));
        }
        check_depth_values(&values)?;
        Ok(Self { width, height, values })
    }

    pub fn filled(width: usize, height: usize, depth: f32) -> Result<Self> {
        Self::new(width, height, vec![depth; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(invalid("depth crop exceeds map"));
        }
        let mut values = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            values.extend_from_slice(&self.values[y * self.width + x0..y * self.width + x0 + width]);
        }
        Ok(Self { width, height, values })
    }

    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        imageio::write_pfm(path, self.width, self.height, 1, &self.values)
    }

    pub fn read_pfm(path: &Path) -> Result<Self> {
        let (w, h, c, values) = imageio::read_pfm(path)?;
        if c != 1 {
            return Err(Error::Format { path: path.to_path_buf(), detail: format!("depth map must have 1 channel, got {c}") });
        }
        Self::new(w, h, values).map_err(|e| Error::Format { path: path.to_path_buf(), detail: e.to_string() })
    }
}

fn check_depth_values(values: &[f32]) -> Result<()> {
    if let Some((i, d)) = values.iter().enumerate().find(|(_, d)| !(d.is_finite() && **d > 0.0)) {
        return Err(invalid(format!("depth value {d} at index {i} must be finite and > 0")));
    }
    Ok(())
}

/// Atmospheric light `A ∈ [0, 1]` and scattering coefficient `β ≥ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterParams {
    pub atmospheric_light: f64,
    pub beta: f64,
}

impl ScatterParams {
    pub fn new(atmospheric_light: f64, beta: f64) -> Result<Self> {
        let p = Self { atmospheric_light, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.atmospheric_light) {
            return Err(invalid(format!("atmospheric light {} outside [0, 1]", self.atmospheric_light)));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!("scattering coefficient {} must be finite and >= 0", self.beta)));
        }
        Ok(())
    }
}

/// `t = exp(−β·d)` as a single-channel grid in `(0, 1]`.
///
/// Values that underflow are held at the smallest positive normal `f64`, so
/// arbitrarily deep pixels stay strictly positive.
pub fn transmittance(depth: &DepthMap, beta: f64) -> Result<ImageGrid> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(invalid(format!("scattering coefficient {beta} must be finite and >= 0")));
    }
    check_depth_values(&depth.values)?;
    let data = depth.values.iter().map(|&d| (-beta * d as f64).exp().max(f64::MIN_POSITIVE)).collect();
    ImageGrid::new(depth.width, depth.height, 1, data)
}

/// `I = J·t + A·(1 − t)` per pixel and channel, `t` broadcast over channels.
pub fn apply_haze(clear: &ImageGrid, t: &ImageGrid, atmospheric_light: f64) -> Result<ImageGrid> {
    if t.channels() != 1 {
        return Err(Error::Shape { op: "apply_haze", detail: format!("transmittance must be single-channel, got {}", t.channels()) });
    }
    if !clear.same_size(t) {
        return Err(Error::Shape {
            op: "apply_haze",
            detail: format!("image {}x{} vs transmittance {}x{}", clear.width(), clear.height(), t.width(), t.height()),
        });
    }
    if !(0.0..=1.0).contains(&atmospheric_light) {
        return Err(invalid(format!("atmospheric light {atmospheric_light} outside [0, 1]")));
    }
    if let Some(v) = t.data().iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
        return Err(invalid(format!("transmittance value {v} outside (0, 1]")));
    }
    let c = clear.channels();
    let mut out = Vec::with_capacity(clear.len());
    for (px, &tv) in clear.data().chunks_exact(c).zip(t.data()) {
        for &j in px {
            let v = j * tv + atmospheric_light * (1.0 - tv);
            let v = if v < 0.0 && v >= -RANGE_SLACK {
                0.0
            } else if v > 1.0 && v <= 1.0 + RANGE_SLACK {
                1.0
            } else {
                v
            };
            if !(0.0..=1.0).contains(&v) {
                return Err(invalid(format!("haze value {v} left [0, 1] by more than {RANGE_SLACK}")));
            }
            out.push(v);
        }
    }
    ImageGrid::new(clear.width(), clear.height(), c, out)
}

/// Layout of one procedural street-like scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Upright rectangles standing on the ground (vehicles, buildings, trees).
    pub element_count: usize,
    /// Ground depth at the bottom row and just below the horizon.
    pub ground_depth_range: (f64, f64),
    pub sky_depth: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self { seed: 0, width: 64, height: 64, element_count: 5, ground_depth_range: (0.25, 3.0), sky_depth: 1000.0 }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let (near, far) = self.ground_depth_range;
        if self.width < 16 || self.height < 16 {
            return Err(invalid(format!("scene must be at least 16x16, got {}x{}", self.width, self.height)));
        }
        if !(near > 0.0 && near < far && far.is_finite()) {
            return Err(invalid(format!("ground depth range ({near}, {far}) must satisfy 0 < near < far")));
        }
        if !(self.sky_depth >= far && self.sky_depth.is_finite()) {
            return Err(invalid(format!("sky depth {} must be finite and >= far depth {far}", self.sky_depth)));
        }
        Ok(())
    }

    /// First ground row; rows above it are sky.
    fn horizon(&self, rng: &mut ChaCha8Rng) -> usize {
        let lo = self.height * 7 / 20;
        let hi = self.height / 2;
        rng.random_range(lo..=hi)
    }
}

/// Ground depth for `row ≥ horizon`: linear in inverse depth, `far` at the
/// horizon row, `near` at the bottom row.
fn ground_depth(row: usize, horizon: usize, height: usize, near: f64, far: f64) -> f32 {
    let span = (height - 1 - horizon).max(1) as f64;
    let f = (row - horizon) as f64 / span;
    let inv = 1.0 / far + (1.0 / near - 1.0 / far) * f;
    (1.0 / inv) as f32
}

#[derive(Clone, Debug)]
struct Element {
    x0: usize,
    x1: usize,
    y0: usize,
    /// Base row, inclusive bottom edge.
    y1: usize,
    depth: f32,
    color: [f64; 3],
    trim: [f64; 3],
}

fn sample_elements(spec: &SceneSpec, horizon: usize, rng: &mut ChaCha8Rng) -> Vec<Element> {
    let (w, h) = (spec.width, spec.height);
    let (near, far) = spec.ground_depth_range;
    let ground_rows: Vec<usize> = (horizon + 2..h).collect();
    let mut rows = ground_rows.clone();
    let mut out = Vec::with_capacity(spec.element_count);
    for _ in 0..spec.element_count {
        if rows.is_empty() {
            rows = ground_rows.clone();
        }
        let base = rows.swap_remove(rng.random_range(0..rows.len()));
        let depth = ground_depth(base, horizon, h, near, far);
        let nearness = (near / depth as f64).powf(0.6);
        let ph = ((rng.random_range(0.25..0.7) * h as f64 * nearness).round() as usize).clamp(3, base + 1);
        let pw = ((rng.random_range(0.12..0.45) * w as f64 * nearness).round() as usize).clamp(2, w);
        let cx = rng.random_range(0..w);
        let x0 = cx.saturating_sub(pw / 2);
        let x1 = (x0 + pw).min(w);
        let hue = rng.random_range(0.0..1.0);
        let color = hsv(hue, rng.random_range(0.35..0.9), rng.random_range(0.25..0.85));
        let shade = rng.random_range(0.45..0.8);
        out.push(Element { x0, x1, y0: base + 1 - ph, y1: base, depth, color, trim: color.map(|c| c * shade) });
    }
    out
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match i as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Render a deterministic scene: sky above a ground plane whose depth grows
/// toward the horizon, then elements painted far-to-near so nearer ones
/// overwrite colour and depth of farther ones.
///
/// Element layouts are resampled (deterministically) until every element
/// stays visible on at least two rows and all base rows differ, when that is
/// achievable within a bounded number of attempts.
pub fn generate_scene(spec: &SceneSpec) -> Result<(ImageGrid, DepthMap)> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let (near, far) = spec.ground_depth_range;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let horizon = spec.horizon(&mut rng);

    let sky_top = [rng.random_range(0.35..0.55), rng.random_range(0.5..0.7), rng.random_range(0.75..0.95)];
    let sky_low = [rng.random_range(0.7..0.85), rng.random_range(0.75..0.9), rng.random_range(0.85..0.98)];
    let road = rng.random_range(0.28..0.45);
    let verge = [rng.random_range(0.2..0.35), rng.random_range(0.35..0.5), rng.random_range(0.15..0.25)];
    let road_half = rng.random_range(0.25..0.4);
    let grain: Vec<f64> = (0..w * h).map(|_| rng.random_range(-0.03..0.03)).collect();

    let mut color = vec![[0.0f64; 3]; w * h];
    let mut depth = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if y < horizon {
                let f = y as f64 / horizon.max(1) as f64;
                color[i] = [0, 1, 2].map(|c| sky_top[c] * (1.0 - f) + sky_low[c] * f);
                depth[i] = spec.sky_depth as f32;
            } else {
                let f = (y - horizon) as f64 / (h - horizon).max(1) as f64;
                let half = (0.02 + road_half * f) * w as f64;
                let dx = (x as f64 + 0.5 - w as f64 / 2.0).abs();
                let base = if dx < half {
                    let stripe = dx < half * 0.04 + 0.3 && (y / 3) % 2 == 0;
                    if stripe { [0.85, 0.82, 0.6] } else { [road; 3] }
                } else {
                    verge
                };
                color[i] = base.map(|c| (c + grain[i]).clamp(0.0, 1.0));
                depth[i] = ground_depth(y, horizon, h, near, far);
            }
        }
    }

    let mut elements = Vec::new();
    for _attempt in 0..64 {
        elements = sample_elements(spec, horizon, &mut rng);
        if elements_visible(&elements, w, h) {
            break;
        }
    }
    elements.sort_by(|a, b| b.depth.total_cmp(&a.depth));
    for e in &elements {
        for y in e.y0..=e.y1 {
            for x in e.x0..e.x1 {
                let i = y * w + x;
                let band = (y - e.y0) % 4 == 1 && x > e.x0 && x + 1 < e.x1;
                color[i] = if band { e.trim } else { e.color };
                depth[i] = e.depth;
            }
        }
    }

    let data: Vec<f64> = color.iter().flat_map(|c| c.iter().copied()).collect();
    Ok((ImageGrid::new(w, h, 3, data)?, DepthMap::new(w, h, depth)?))
}

fn elements_visible(elements: &[Element], w: usize, h: usize) -> bool {
    let mut rows: Vec<usize> = elements.iter().map(|e| e.y1).collect();
    rows.sort_unstable();
    rows.dedup();
    if rows.len() != elements.len() {
        return false;
    }
    let mut order: Vec<usize> = (0..elements.len()).collect();
    order.sort_by(|&a, &b| elements[b].depth.total_cmp(&elements[a].depth));
    let mut owner = vec![usize::MAX; w * h];
    for &k in &order {
        let e = &elements[k];
        for y in e.y0..=e.y1 {
            for x in e.x0..e.x1 {
                owner[y * w + x] = k;
            }
        }
    }
    (0..elements.len()).all(|k| {
        let mut rows = (0..h).filter(|&y| owner[y * w..(y + 1) * w].contains(&k));
        rows.next().is_some() && rows.next().is_some()
    })
}

/// How a corpus samples its scenes and haze.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusParams {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Inclusive range of elements per scene.
    pub elements: (usize, usize),
    pub ground_depth_range: (f64, f64),
    pub sky_depth: f64,
    /// `A` is drawn uniformly from this range once per scene.
    pub atmospheric_light: (f64, f64),
    pub beta: f64,
    /// Train and test parts of the split ratio (train:test).
    pub split_ratio: (usize, usize),
}

impl Default for CorpusParams {
    fn default() -> Self {
        Self {
            seed: 1,
            width: 64,
            height: 64,
            elements: (3, 8),
            ground_depth_range: (0.25, 3.0),
            sky_depth: 1000.0,
            atmospheric_light: (0.8, 1.0),
            beta: 1.0,
            split_ratio: (3, 1),
        }
    }
}

impl CorpusParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.atmospheric_light;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
            return Err(invalid(format!("atmospheric light range ({lo}, {hi}) must lie in [0, 1] with lo <= hi")));
        }
        if self.elements.0 > self.elements.1 {
            return Err(invalid("element count range is reversed"));
        }
        if self.split_ratio.0 + self.split_ratio.1 == 0 {
            return Err(invalid("split ratio must have a positive part"));
        }
        ScatterParams::new(lo, self.beta)?;
        self.scene(0, 0).validate()
    }

    fn scene(&self, seed: u64, element_count: usize) -> SceneSpec {
        SceneSpec {
            seed,
            width: self.width,
            height: self.height,
            element_count,
            ground_depth_range: self.ground_depth_range,
            sky_depth: self.sky_depth,
        }
    }

    /// Number of training scenes out of `n` (the rest are test).
    pub fn train_count(&self, n: usize) -> usize {
        let (a, b) = self.split_ratio;
        n * a / (a + b)
    }
}

/// Everything rendered for one scene before it is written to disk.
#[derive(Clone, Debug)]
pub struct RenderedScene {
    pub id: String,
    /// Clear image already at 8-bit precision, so the stored haze image is
    /// reproducible from the stored clear image.
    pub clear: ImageGrid,
    pub depth: DepthMap,
    pub transmittance: ImageGrid,
    pub haze: ImageGrid,
    pub atmospheric_light: f64,
}

pub fn scene_id(index: usize) -> String {
    format!("scene_{index:05}")
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 on the pair.
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Render scene `index` of a corpus; a pure function of `(params, index)`.
pub fn render_scene(params: &CorpusParams, index: usize) -> Result<RenderedScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(params.seed, index as u64));
    let elements = rng.random_range(params.elements.0..=params.elements.1);
    let (lo, hi) = params.atmospheric_light;
    let a = if lo == hi { lo } else { rng.random_range(lo..=hi) };
    let spec = params.scene(rng.random(), elements);
    let (clear, depth) = generate_scene(&spec)?;
    let clear = clear.quantized();
    let t = transmittance(&depth, params.beta)?;
    let haze = apply_haze(&clear, &t, a)?;
    Ok(RenderedScene { id: scene_id(index), clear, depth, transmittance: t, haze, atmospheric_light: a })
}

/// Render `n_scenes` scenes into `out_dir` and write the manifest.
///
/// Layout: `clear/<id>.png`, `depth/<id>.pfm`, `haze/<id>.png`,
/// `trans/<id>.pfm` (transmittance at the corpus β) and `manifest.tsv`.
/// The first `train_count(n)` scenes are train, the rest test.
pub fn build_corpus(n_scenes: usize, out_dir: &Path, params: &CorpusParams) -> Result<Manifest> {
    if n_scenes < 1 {
        return Err(invalid("corpus needs at least one scene"));
    }
    params.validate()?;
    for sub in ["clear", "depth", "haze", "trans"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let n_train = params.train_count(n_scenes);
    let mut records = Vec::with_capacity(n_scenes);
    for index in 0..n_scenes {
        let scene = render_scene(params, index)?;
        let rel = |dir: &str, ext: &str| PathBuf::from(dir).join(format!("{}.{ext}", scene.id));
        let record = ManifestRecord {
            id: scene.id.clone(),
            clear: rel("clear", "png"),
            depth: rel("depth", "pfm"),
            haze: rel("haze", "png"),
            atmospheric_light: scene.atmospheric_light,
            split: if index < n_train { Split::Train } else { Split::Test },
        };
        imageio::write_png(&out_dir.join(&record.clear), &scene.clear)?;
        scene.depth.write_pfm(&out_dir.join(&record.depth))?;
        imageio::write_png(&out_dir.join(&record.haze), &scene.haze)?;
        let t32: Vec<f32> = scene.transmittance.data().iter().map(|&v| v as f32).collect();
        imageio::write_pfm(&out_dir.join(rel("trans", "pfm")), scene.depth.width(), scene.depth.height(), 1, &t32)?;
        records.push(record);
    }
    let manifest = Manifest { root: out_dir.to_path_buf(), records };
    manifest.write(&out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

/// Pair `<stem>.png` colour images with `<stem>.pfm` depth maps in `dir`,
/// sorted by stem. The hook for swapping in real RGB-D data.
pub fn load_rgbd_dir(dir: &Path) -> Result<Vec<(String, ImageGrid, DepthMap)>> {
    let mut stems: Vec<String> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    stems.sort();
    let mut out = Vec::with_capacity(stems.len());
    for stem in stems {
        let image = imageio::read_png(&dir.join(format!("{stem}.png")))?;
        let depth_path = dir.join(format!("{stem}.pfm"));
        if !depth_path.exists() {
            return Err(Error::Sample { id: stem, detail: format!("missing depth map {}", depth_path.display()) });
        }
        let depth = DepthMap::read_pfm(&depth_path)?;
        if depth.width() != image.width() || depth.height() != image.height() {
            return Err(Error::Sample { id: stem, detail: "colour and depth sizes differ".into() });
        }
        out.push((stem, image, depth));
    }
    Ok(out)
}
