//! Unpaired cross-domain batching over a corpus manifest.
//!
//! The haze domain (`x_i`) draws from the manifest's haze images and the
//! haze-free domain (`x_j`) from its clear images. Each domain has its own
//! shuffle, so index `b` of `x_i` and `x_j` are unrelated scenes.
//!
//! Every batch is a pure function of `(shuffle_seed, epoch, index)`; the
//! loader holds no iteration state, which makes resuming from a checkpoint
//! exact and lets prefetch workers compute batches out of order.

use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use haze_tensor::{Scalar, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{stack_working, ImageGrid};
use crate::imageio;
use crate::manifest::{Manifest, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub crop_size: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    /// Background batch builders; `0` builds batches on the calling thread.
    pub workers: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self { crop_size: 64, batch_size: 4, shuffle_seed: 0, workers: 0 }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(invalid("batch_size must be at least 1"));
        }
        if self.crop_size < 4 || self.crop_size % 4 != 0 {
            return Err(invalid(format!("crop_size {} must be a positive multiple of 4", self.crop_size)));
        }
        Ok(())
    }
}

/// One unpaired training batch, `(B, 3, H, W)` tensors in the working range.
#[derive(Clone, Debug)]
pub struct Batch<T: Scalar> {
    pub x_i: Tensor<T>,
    pub x_j: Tensor<T>,
    pub ids_i: Vec<String>,
    pub ids_j: Vec<String>,
}

impl<T: Scalar> Batch<T> {
    pub fn len(&self) -> usize {
        self.ids_i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids_i.is_empty()
    }
}

/// A held-out scene with both renderings and its airlight, for evaluation.
#[derive(Clone, Debug)]
pub struct SceneSample {
    pub id: String,
    pub clear: ImageGrid,
    pub haze: ImageGrid,
    pub atmospheric_light: f64,
}

fn load_image(manifest: &Manifest, id: &str, rel: &std::path::Path) -> Result<ImageGrid> {
    imageio::read_png(&manifest.resolve(rel)).map_err(|e| Error::Sample { id: id.to_string(), detail: e.to_string() })
}

/// Load every scene of `split` with both its clear and haze images.
pub fn load_samples(manifest: &Manifest, split: Split) -> Result<Vec<SceneSample>> {
    manifest
        .split(split)
        .map(|r| {
            Ok(SceneSample {
                id: r.id.clone(),
                clear: load_image(manifest, &r.id, &r.clear)?,
                haze: load_image(manifest, &r.id, &r.haze)?,
                atmospheric_light: r.atmospheric_light,
            })
        })
        .collect()
}

/// Center crop to `size × size`.
pub fn center_crop(image: &ImageGrid, size: usize) -> Result<ImageGrid> {
    check_crop(image, size)?;
    image.crop((image.width() - size) / 2, (image.height() - size) / 2, size, size)
}

/// Offsets `(x0, y0)` drawn uniformly from `{0..=W−size} × {0..=H−size}`.
pub fn random_crop_offset<R: Rng>(rng: &mut R, width: usize, height: usize, size: usize) -> (usize, usize) {
    (rng.random_range(0..=width - size), rng.random_range(0..=height - size))
}

fn check_crop(image: &ImageGrid, size: usize) -> Result<()> {
    if size > image.width().min(image.height()) {
        return Err(invalid(format!("crop {size} exceeds image {}x{}", image.width(), image.height())));
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Domain {
    Haze = 1,
    Clear = 2,
}

fn derive_seed(parts: &[u64]) -> u64 {
    let mut z = 0x243F_6A88_85A3_08D3u64;
    for &p in parts {
        z ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(z << 6).wrapping_add(z >> 2);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Deterministic batch source over one split of a corpus.
///
/// Train split: per-epoch shuffles (independent per domain), a fresh random
/// crop per item per epoch, and incomplete trailing batches dropped. Test
/// split: manifest order, center crops, trailing batch kept.
#[derive(Debug)]
pub struct Loader {
    config: PipelineConfig,
    split: Split,
    haze: Vec<(String, ImageGrid)>,
    clear: Vec<(String, ImageGrid)>,
}

pub fn make_loader(manifest: &Manifest, config: &PipelineConfig, split: Split) -> Result<Loader> {
    Loader::new(manifest, config, split)
}

impl Loader {
    pub fn new(manifest: &Manifest, config: &PipelineConfig, split: Split) -> Result<Self> {
        config.validate()?;
        let mut haze = Vec::new();
        let mut clear = Vec::new();
        for r in manifest.split(split) {
            let h = load_image(manifest, &r.id, &r.haze)?;
            let c = load_image(manifest, &r.id, &r.clear)?;
            for im in [&h, &c] {
                if im.channels() != 3 {
                    return Err(Error::Sample { id: r.id.clone(), detail: format!("expected RGB, got {} channels", im.channels()) });
                }
                check_crop(im, config.crop_size).map_err(|e| Error::Sample { id: r.id.clone(), detail: e.to_string() })?;
            }
            haze.push((r.id.clone(), h));
            clear.push((r.id.clone(), c));
        }
        if haze.is_empty() {
            return Err(invalid(format!("manifest has no {split} samples")));
        }
        Ok(Self { config: config.clone(), split, haze, clear })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn sample_count(&self) -> usize {
        self.haze.len()
    }

    pub fn batches_per_epoch(&self) -> usize {
        let (n, b) = (self.haze.len(), self.config.batch_size);
        match self.split {
            Split::Train => n / b,
            Split::Test => n.div_ceil(b),
        }
    }

    fn order(&self, domain: Domain, epoch: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.haze.len()).collect();
        if self.split == Split::Train {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[self.config.shuffle_seed, domain as u64, epoch]));
            order.shuffle(&mut rng);
        }
        order
    }

    fn take(&self, domain: Domain, epoch: u64, positions: std::ops::Range<usize>) -> Result<(Vec<ImageGrid>, Vec<String>)> {
        let pool = match domain {
            Domain::Haze => &self.haze,
            Domain::Clear => &self.clear,
        };
        let order = self.order(domain, epoch);
        let size = self.config.crop_size;
        let mut images = Vec::with_capacity(positions.len());
        let mut ids = Vec::with_capacity(positions.len());
        for pos in positions {
            let (id, im) = &pool[order[pos]];
            let cropped = match self.split {
                Split::Train => {
                    let mut rng =
                        ChaCha8Rng::seed_from_u64(derive_seed(&[self.config.shuffle_seed, domain as u64, epoch, pos as u64, 7]));
                    let (x0, y0) = random_crop_offset(&mut rng, im.width(), im.height(), size);
                    im.crop(x0, y0, size, size)?
                }
                Split::Test => center_crop(im, size)?,
            };
            images.push(cropped);
            ids.push(id.clone());
        }
        Ok((images, ids))
    }

    /// Batch `index` of `epoch`.
    pub fn batch<T: Scalar>(&self, epoch: u64, index: usize) -> Result<Batch<T>> {
        let bpe = self.batches_per_epoch();
        if index >= bpe {
            return Err(invalid(format!("batch {index} out of range ({bpe} per epoch)")));
        }
        let b = self.config.batch_size;
        let range = index * b..((index + 1) * b).min(self.haze.len());
        let (hi, ids_i) = self.take(Domain::Haze, epoch, range.clone())?;
        let (cj, ids_j) = self.take(Domain::Clear, epoch, range)?;
        Ok(Batch {
            x_i: stack_working(&hi.iter().collect::<Vec<_>>())?,
            x_j: stack_working(&cj.iter().collect::<Vec<_>>())?,
            ids_i,
            ids_j,
        })
    }

    /// Batch for global training step `step`, cycling through epochs.
    pub fn batch_at<T: Scalar>(&self, step: u64) -> Result<Batch<T>> {
        let bpe = self.batches_per_epoch() as u64;
        self.batch(step / bpe, (step % bpe) as usize)
    }

    /// All batches of one epoch, in order.
    pub fn epoch<T: Scalar>(&self, epoch: u64) -> impl Iterator<Item = Result<Batch<T>>> + '_ {
        (0..self.batches_per_epoch()).map(move |i| self.batch(epoch, i))
    }

    /// Endless stream of batches for steps `start, start+1, ...`, built by
    /// `config.workers` background threads. Delivery order never depends on
    /// the worker count.
    pub fn stream<T: Scalar + Send>(self: &Arc<Self>, start: u64) -> BatchStream<T> {
        let workers = self.config.workers;
        if workers == 0 {
            return BatchStream { loader: Arc::clone(self), start, next: start, lanes: Vec::new(), handles: Vec::new() };
        }
        let mut lanes = Vec::with_capacity(workers);
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers as u64 {
            let (tx, rx) = sync_channel(2);
            let loader = Arc::clone(self);
            handles.push(std::thread::spawn(move || {
                let mut step = start + w;
                while tx.send(loader.batch_at::<T>(step)).is_ok() {
                    step += workers as u64;
                }
            }));
            lanes.push(rx);
        }
        BatchStream { loader: Arc::clone(self), start, next: start, lanes, handles }
    }
}

pub struct BatchStream<T: Scalar> {
    loader: Arc<Loader>,
    start: u64,
    next: u64,
    lanes: Vec<Receiver<Result<Batch<T>>>>,
    handles: Vec<JoinHandle<()>>,
}

impl<T: Scalar> Iterator for BatchStream<T> {
    type Item = Result<Batch<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        let step = self.next;
        self.next += 1;
        if self.lanes.is_empty() {
            return Some(self.loader.batch_at(step));
        }
        let lane = ((step - self.start) % self.lanes.len() as u64) as usize;
        self.lanes[lane].recv().ok()
    }
}

impl<T: Scalar> Drop for BatchStream<T> {
    fn drop(&mut self) {
        self.lanes.clear();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}
