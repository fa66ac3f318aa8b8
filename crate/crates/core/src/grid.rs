//! Raster carrier shared by every stage: `height × width × channels`, values in `[0, 1]`.

use haze_tensor::{Scalar, Tensor};

use crate::error::{invalid, Error, Result};

/// Interleaved (HWC) floating-point image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(invalid(format!("image dimensions must be positive, got {width}x{height}x{channels}")));
        }
        if data.len() != width * height * channels {
            return Err(invalid(format!(
                "image {width}x{height}x{channels} needs {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("image value {v} at index {i} outside [0, 1]")));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Build from `f(x, y, c)`.
    pub fn from_fn(width: usize, height: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_size(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.same_size(other) && self.channels == other.channels
    }

    /// Sub-window with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if x0 + width > self.width || y0 + height > self.height {
            return Err(invalid(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds image {}x{}",
                self.width, self.height
            )));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(width * height * c);
        for y in y0..y0 + height {
            let row = (y * self.width + x0) * c;
            data.extend_from_slice(&self.data[row..row + width * c]);
        }
        Ok(Self { width, height, channels: c, data })
    }

    /// Round every value to the nearest multiple of 1/255.
    pub fn quantized(&self) -> Self {
        Self { data: self.data.iter().map(|&v| (v * 255.0).round() / 255.0).collect(), ..self.clone() }
    }

    /// Channel-planar tensor `(1, c, h, w)` in the model's `[-1, 1]` range.
    pub fn to_working<T: Scalar>(&self) -> Tensor<T> {
        let (w, h, c) = (self.width, self.height, self.channels);
        let mut out = vec![T::zero(); c * h * w];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = T::from_f64_lossy(to_working_value(self.get(x, y, ch)));
                }
            }
        }
        Tensor::from_vec(vec![1, c, h, w], out).expect("shape matches data")
    }

    /// Inverse of [`to_working`](Self::to_working) for item `index` of an NCHW batch.
    /// Values are clamped into `[0, 1]`.
    pub fn from_working<T: Scalar>(batch: &Tensor<T>, index: usize) -> Result<Self> {
        if batch.rank() != 4 {
            return Err(Error::Shape { op: "from_working", detail: format!("expected NCHW, got {:?}", batch.shape()) });
        }
        let (n, c, h, w) = batch.nchw();
        if index >= n {
            return Err(invalid(format!("batch index {index} out of range for batch of {n}")));
        }
        let plane = &batch.data()[index * c * h * w..(index + 1) * c * h * w];
        Self::from_fn(w, h, c, |x, y, ch| from_working_value(plane[(ch * h + y) * w + x].to_f64_lossy()).clamp(0.0, 1.0))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// `[0, 1] → [-1, 1]`.
#[inline]
pub fn to_working_value(v: f64) -> f64 {
    2.0 * v - 1.0
}

/// `[-1, 1] → [0, 1]`.
#[inline]
pub fn from_working_value(v: f64) -> f64 {
    (v + 1.0) * 0.5
}

/// Stack equally-sized images into an NCHW batch in the working range.
pub fn stack_working<T: Scalar>(images: &[&ImageGrid]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| invalid("cannot stack an empty image list"))?;
    if let Some(bad) = images.iter().find(|im| !im.same_shape(first)) {
        return Err(Error::Shape {
            op: "stack_working",
            detail: format!(
                "{}x{}x{} vs {}x{}x{}",
                first.width, first.height, first.channels, bad.width, bad.height, bad.channels
            ),
        });
    }
    let parts: Vec<Tensor<T>> = images.iter().map(|im| im.to_working()).collect();
    let refs: Vec<&Tensor<T>> = parts.iter().collect();
    Ok(Tensor::cat_first(&refs)?)
}
