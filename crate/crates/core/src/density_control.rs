//! Density-controlled synthesis: render a haze-free image with a style code
//! interpolated between its own code and that of a baseline haze image.

use std::path::Path;

use haze_tensor::{Scalar, Var};
use serde::Serialize;

use crate::error::{invalid, io_err, Error, Result};
use crate::grid::{to_working_value, ImageGrid};
use crate::imageio::write_png;
use crate::networks::Networks;
use crate::objectives::{interpolate_codes, interpolate_style};

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(invalid(format!("alpha {alpha} outside the valid range [0, 1]")))
    }
}

/// One synthesis request: render `source` (haze-free) at density `alpha`
/// relative to the baseline haze image `reference`.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityRequest {
    pub alpha: f64,
    pub source: ImageGrid,
    pub reference: ImageGrid,
}

impl DensityRequest {
    pub fn new(alpha: f64, source: ImageGrid, reference: ImageGrid) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self { alpha, source, reference })
    }
}

/// Codes and content of a source/reference pair, reusable across densities.
pub struct EncodedPair<T: Scalar> {
    pub content: Var<T>,
    pub source_style: Var<T>,
    pub reference_style: Var<T>,
}

pub fn encode_pair<T: Scalar>(nets: &Networks<T>, source: &ImageGrid, reference: &ImageGrid) -> Result<EncodedPair<T>> {
    let x_j = Var::constant(source.to_working::<T>());
    let x_i = Var::constant(reference.to_working::<T>());
    Ok(EncodedPair { content: nets.content_encode(&x_j)?, source_style: nets.style_encode(&x_j)?, reference_style: nets.style_encode(&x_i)? })
}

impl<T: Scalar> EncodedPair<T> {
    /// `α·s_i + (1 − α)·s_j`.
    pub fn style_at(&self, alpha: f64) -> Result<Var<T>> {
        check_alpha(alpha)?;
        interpolate_style(&self.reference_style, &self.source_style, alpha)
    }

    pub fn render(&self, nets: &Networks<T>, alpha: f64) -> Result<ImageGrid> {
        let y = nets.generate(&self.content, &self.style_at(alpha)?)?;
        ImageGrid::from_working(y.value(), 0)
    }
}

/// `G(E^c(x_j), α·E^s(x_i) + (1 − α)·E^s(x_j))`.
pub fn synthesize_density<T: Scalar>(req: &DensityRequest, nets: &Networks<T>) -> Result<ImageGrid> {
    check_alpha(req.alpha)?;
    encode_pair(nets, &req.source, &req.reference)?.render(nets, req.alpha)
}

/// Output of [`sweep`]: one image, one interpolated code and one
/// re-encoded code per density. Interpolated codes are computed in `f64`
/// from the endpoint codes.
#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub alphas: Vec<f64>,
    pub images: Vec<ImageGrid>,
    pub interpolated: Vec<Vec<f64>>,
    pub reencoded: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct SweepRecord<'a> {
    alpha: f64,
    interpolated: &'a [f64],
    reencoded: &'a [f64],
}

/// Evenly spaced densities `0, 1/(n−1), …, 1`.
pub fn even_alphas(n: usize) -> Result<Vec<f64>> {
    match n {
        0 => Err(invalid("a sweep needs at least one alpha")),
        1 => Ok(vec![0.0]),
        _ => Ok((0..n).map(|i| i as f64 / (n - 1) as f64).collect()),
    }
}

/// Render `source` at each density in `alphas` (ascending, within `[0, 1]`).
pub fn sweep<T: Scalar>(nets: &Networks<T>, source: &ImageGrid, reference: &ImageGrid, alphas: &[f64]) -> Result<Sweep> {
    if alphas.is_empty() {
        return Err(invalid("a sweep needs at least one alpha"));
    }
    for &a in alphas {
        check_alpha(a)?;
    }
    if alphas.windows(2).any(|w| w[1] < w[0]) {
        return Err(invalid("sweep alphas must be sorted ascending"));
    }
    let pair = encode_pair(nets, source, reference)?;
    let (s_i, s_j) = (pair.reference_style.value().to_f64_vec(), pair.source_style.value().to_f64_vec());
    let mut out = Sweep { alphas: alphas.to_vec(), images: Vec::new(), interpolated: Vec::new(), reencoded: Vec::new() };
    for &a in alphas {
        let s = pair.style_at(a)?;
        let y = nets.generate(&pair.content, &s)?;
        out.reencoded.push(nets.style_encode(&y)?.value().to_f64_vec());
        out.interpolated.push(interpolate_codes(&s_i, &s_j, a)?);
        out.images.push(ImageGrid::from_working(y.value(), 0)?);
    }
    Ok(out)
}

/// Tile equally sized images left to right.
pub fn strip(images: &[ImageGrid]) -> Result<ImageGrid> {
    let first = images.first().ok_or_else(|| invalid("cannot tile an empty image list"))?;
    if images.iter().any(|im| !im.same_shape(first)) {
        return Err(Error::Shape { op: "strip", detail: "images differ in size".into() });
    }
    let w = first.width();
    ImageGrid::from_fn(w * images.len(), first.height(), first.channels(), |x, y, c| images[x / w].get(x % w, y, c))
}

impl Sweep {
    /// Write `<stem>.png` (the tiled strip) and `<stem>.codes.jsonl` (one
    /// record per density with both codes) into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_png(&dir.join(format!("{stem}.png")), &strip(&self.images)?)?;
        let path = dir.join(format!("{stem}.codes.jsonl"));
        let mut text = String::new();
        for ((&alpha, interpolated), reencoded) in self.alphas.iter().zip(&self.interpolated).zip(&self.reencoded) {
            let line = serde_json::to_string(&SweepRecord { alpha, interpolated, reencoded })
                .map_err(|e| Error::Format { path: path.clone(), detail: e.to_string() })?;
            text.push_str(&line);
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(io_err(&path))
    }

    /// Mean `|x_α − A|` per density, in the working range.
    pub fn airlight_distances(&self, atmospheric_light: f64) -> Vec<f64> {
        self.images.iter().map(|im| airlight_distance(im, atmospheric_light)).collect()
    }
}

/// Mean absolute distance to the atmospheric light, both mapped to `[-1, 1]`.
pub fn airlight_distance(image: &ImageGrid, atmospheric_light: f64) -> f64 {
    let a = to_working_value(atmospheric_light);
    image.data().iter().map(|&v| (to_working_value(v) - a).abs()).sum::<f64>() / image.len() as f64
}
