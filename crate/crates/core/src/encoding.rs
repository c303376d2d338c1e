//! Dataset ingestion and spike encoding.
//!
//! Static images are rate encoded: each pixel spikes independently per step
//! with probability proportional to its intensity. Class targets make the
//! matching output neuron spike at every step. Loaders parse whole files
//! before constructing anything, so malformed input never yields partial
//! datasets.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::network::SpikeTrain;
use crate::Real;

/// One labeled example: a static image (pixels in `[0, 1]`) or a spike train.
#[derive(Debug, Clone)]
pub enum InputData {
    Image(Vec<Real>),
    Spikes(SpikeTrain),
}

#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub input: InputData,
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub items: Vec<DatasetItem>,
    pub num_classes: usize,
    pub input_dim: usize,
    /// Step count suggested by the source (container header or convention).
    pub t_hint: usize,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        for (k, item) in self.items.iter().enumerate() {
            if item.label >= self.num_classes {
                return Err(CoreError::format(format!(
                    "item {k} label {} out of range {}",
                    item.label, self.num_classes
                )));
            }
            let dim = match &item.input {
                InputData::Image(px) => px.len(),
                InputData::Spikes(train) => train.units(),
            };
            if dim != self.input_dim {
                return Err(CoreError::format(format!(
                    "item {k} input dim {dim}, expected {}",
                    self.input_dim
                )));
            }
        }
        Ok(())
    }

    /// Keep only the listed raw labels, remapping them to `0..keep.len()`.
    pub fn filter_classes(&self, keep: &[usize]) -> Dataset {
        let items = self
            .items
            .iter()
            .filter_map(|item| {
                keep.iter().position(|&k| k == item.label).map(|label| DatasetItem {
                    input: item.input.clone(),
                    label,
                })
            })
            .collect();
        Dataset {
            items,
            num_classes: keep.len(),
            input_dim: self.input_dim,
            t_hint: self.t_hint,
        }
    }
}

/// Rate-encoding parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub t_len: usize,
    /// Cap on the per-step spiking probability, in `(0, 1]`.
    pub p_max: Real,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_len < 1 {
            return Err(CoreError::config("encoder needs at least one step"));
        }
        if !(self.p_max > 0.0 && self.p_max <= 1.0) {
            return Err(CoreError::config("p_max must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Bernoulli spike train for a static image: pixel `p` spikes at each step
/// with probability `pixel * p_max`, independently across steps and pixels.
pub fn rate_encode(image: &[Real], cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<SpikeTrain> {
    cfg.validate()?;
    if image.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(CoreError::invalid("pixel values must lie in [0, 1]"));
    }
    let mut train = SpikeTrain::empty(cfg.t_len, image.len(), 1);
    for t in 0..cfg.t_len {
        for (p, &v) in image.iter().enumerate() {
            if rng.gen::<Real>() < v * cfg.p_max {
                train.set(t, p, 0, 1);
            }
        }
    }
    Ok(train)
}

/// Target train over `num_classes` output neurons with `channels` spiking
/// channels each: the labeled neuron spikes on every channel at every step.
pub fn encode_target(
    label: usize,
    num_classes: usize,
    t_len: usize,
    channels: usize,
) -> Result<SpikeTrain> {
    if label >= num_classes {
        return Err(CoreError::invalid(format!("label {label} out of range {num_classes}")));
    }
    let mut train = SpikeTrain::empty(t_len, num_classes, channels);
    for t in 0..t_len {
        for n in 0..channels {
            train.set(t, label, n, 1);
        }
    }
    Ok(train)
}

/// Spike train for one item: encode an image per `cfg`, or pass a recorded
/// train through (truncated to `cfg.t_len` when longer).
pub fn spikes_for_item(
    item: &DatasetItem,
    cfg: &EncoderConfig,
    rng: &mut impl Rng,
) -> Result<SpikeTrain> {
    match &item.input {
        InputData::Image(px) => rate_encode(px, cfg, rng),
        InputData::Spikes(train) => {
            if train.t_len() < cfg.t_len {
                return Err(CoreError::invalid(format!(
                    "recorded train has {} steps, {} requested",
                    train.t_len(),
                    cfg.t_len
                )));
            }
            SpikeTrain::new(train.steps()[..cfg.t_len].to_vec())
        }
    }
}

// --- IDX (big-endian images/labels) ---------------------------------------

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct ByteReader<'a> {
    buf: &'a [u8],
    off: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, off: 0 }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.off + n > self.buf.len() {
            return Err(CoreError::format(format!(
                "truncated file: wanted {n} bytes for {what} at offset {}",
                self.off
            )));
        }
        let s = &self.buf[self.off..self.off + n];
        self.off += n;
        Ok(s)
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u16_le(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
}

/// Images from an IDX file, pixels scaled to `[0, 1]`.
pub fn load_idx_images(path: &Path) -> Result<Vec<Vec<Real>>> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    let magic = r.u32_be("magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CoreError::format(format!(
            "bad image magic {magic:#010x} at offset 0 (expected {IDX_IMAGES_MAGIC:#010x})"
        )));
    }
    let count = r.u32_be("image count")? as usize;
    let rows = r.u32_be("row count")? as usize;
    let cols = r.u32_be("column count")? as usize;
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let raw = r.take(rows * cols, &format!("image {i}"))?;
        images.push(raw.iter().map(|&b| b as Real / 255.0).collect());
    }
    Ok(images)
}

/// Labels from an IDX file.
pub fn load_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    let magic = r.u32_be("magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(CoreError::format(format!(
            "bad label magic {magic:#010x} at offset 0 (expected {IDX_LABELS_MAGIC:#010x})"
        )));
    }
    let count = r.u32_be("label count")? as usize;
    let raw = r.take(count, "labels")?;
    Ok(raw.iter().map(|&b| b as usize).collect())
}

/// Paired IDX image/label files as a dataset.
pub fn load_idx_dataset(images_path: &Path, labels_path: &Path, t_hint: usize) -> Result<Dataset> {
    let images = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if images.len() != labels.len() {
        return Err(CoreError::format(format!(
            "{} images but {} labels",
            images.len(),
            labels.len()
        )));
    }
    let input_dim = images.first().map_or(0, |im| im.len());
    let num_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let items = images
        .into_iter()
        .zip(labels)
        .map(|(im, label)| DatasetItem { input: InputData::Image(im), label })
        .collect();
    let ds = Dataset { items, num_classes, input_dim, t_hint };
    ds.validate()?;
    Ok(ds)
}

// --- Spike-train container --------------------------------------------------

const TRAIN_MAGIC: &[u8; 4] = b"SQTR";
const TRAIN_VERSION: u16 = 1;

/// Generic spike-train container: little-endian header
/// `(magic "SQTR", version u16, T u32, channels u32, items u32, classes u32)`
/// then, per item, a `u32` label and a `ceil(T*channels/8)`-byte bitmap with
/// bit `t*channels + ch` stored LSB-first.
pub fn load_spiketrain_file(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let mut r = ByteReader::new(&bytes);
    let magic = r.take(4, "magic")?;
    if magic != TRAIN_MAGIC {
        return Err(CoreError::format("bad spike-train magic at offset 0".to_string()));
    }
    let version = r.u16_le("version")?;
    if version != TRAIN_VERSION {
        return Err(CoreError::format(format!("unsupported container version {version}")));
    }
    let t_len = r.u32_le("step count")? as usize;
    let channels = r.u32_le("channel count")? as usize;
    let count = r.u32_le("item count")? as usize;
    let num_classes = r.u32_le("class count")? as usize;
    if t_len == 0 || channels == 0 {
        return Err(CoreError::format("container must declare positive T and channels"));
    }
    let bitmap_len = (t_len * channels).div_ceil(8);
    let mut items = Vec::with_capacity(count);
    for i in 0..count {
        let label = r.u32_le(&format!("item {i} label"))? as usize;
        let bitmap = r.take(bitmap_len, &format!("item {i} bitmap"))?;
        let mut train = SpikeTrain::empty(t_len, channels, 1);
        for t in 0..t_len {
            for ch in 0..channels {
                let k = t * channels + ch;
                if bitmap[k / 8] >> (k % 8) & 1 == 1 {
                    train.set(t, ch, 0, 1);
                }
            }
        }
        items.push(DatasetItem { input: InputData::Spikes(train), label });
    }
    if r.off != bytes.len() {
        return Err(CoreError::format(format!("trailing bytes at offset {}", r.off)));
    }
    let ds = Dataset { items, num_classes, input_dim: channels, t_hint: t_len };
    ds.validate()?;
    Ok(ds)
}

/// Write a dataset of recorded spike trains in the container format.
pub fn write_spiketrain_file(path: &Path, ds: &Dataset) -> Result<()> {
    ds.validate()?;
    let t_len = ds.t_hint;
    let channels = ds.input_dim;
    let mut out = Vec::new();
    out.extend_from_slice(TRAIN_MAGIC);
    out.extend_from_slice(&TRAIN_VERSION.to_le_bytes());
    out.extend_from_slice(&(t_len as u32).to_le_bytes());
    out.extend_from_slice(&(channels as u32).to_le_bytes());
    out.extend_from_slice(&(ds.items.len() as u32).to_le_bytes());
    out.extend_from_slice(&(ds.num_classes as u32).to_le_bytes());
    for item in &ds.items {
        let train = match &item.input {
            InputData::Spikes(train) => train,
            InputData::Image(_) => {
                return Err(CoreError::invalid("container holds spike trains, not images"))
            }
        };
        if train.t_len() != t_len || train.units() != channels {
            return Err(CoreError::invalid("item shape does not match container header"));
        }
        out.extend_from_slice(&(item.label as u32).to_le_bytes());
        let mut bitmap = vec![0u8; (t_len * channels).div_ceil(8)];
        for t in 0..t_len {
            for ch in 0..channels {
                if train.get(t, ch, 0) == 1 {
                    let k = t * channels + ch;
                    bitmap[k / 8] |= 1 << (k % 8);
                }
            }
        }
        out.extend_from_slice(&bitmap);
    }
    fs::write(path, out)?;
    Ok(())
}

// --- Synthetic two-pattern task ---------------------------------------------

/// Desk-scale binary task: class 0 spikes on the first half of the channels,
/// class 1 on the second half, with independent bit-flip noise. Labels are
/// balanced and interleaved.
pub fn synth_two_pattern(
    n_per_class: usize,
    noise_flip_prob: Real,
    t_len: usize,
    channels: usize,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&noise_flip_prob) {
        return Err(CoreError::invalid("flip probability must lie in [0, 1]"));
    }
    if channels < 2 || t_len == 0 {
        return Err(CoreError::invalid("need at least two channels and one step"));
    }
    let half = channels / 2;
    let mut items = Vec::with_capacity(2 * n_per_class);
    for k in 0..n_per_class {
        for label in 0..2usize {
            let _ = k;
            let mut train = SpikeTrain::empty(t_len, channels, 1);
            for t in 0..t_len {
                for ch in 0..channels {
                    let base = if label == 0 { ch < half } else { ch >= half };
                    let flip = rng.gen::<Real>() < noise_flip_prob;
                    if base != flip {
                        train.set(t, ch, 0, 1);
                    }
                }
            }
            items.push(DatasetItem { input: InputData::Spikes(train), label });
        }
    }
    Ok(Dataset { items, num_classes: 2, input_dim: channels, t_hint: t_len })
}

// --- USPS CSV ----------------------------------------------------------------

/// USPS-style CSV: each row holds 256 pixel intensities already normalized
/// to `[0, 1]`, then the digit label.
pub fn load_usps_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut items = Vec::new();
    let mut input_dim = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 2 {
            return Err(CoreError::format(format!("line {}: need pixels and a label", lineno + 1)));
        }
        let dim = fields.len() - 1;
        if *input_dim.get_or_insert(dim) != dim {
            return Err(CoreError::format(format!("line {}: ragged row width", lineno + 1)));
        }
        let mut pixels = Vec::with_capacity(dim);
        for (k, f) in fields[..dim].iter().enumerate() {
            let v: Real = f.trim().parse().map_err(|_| {
                CoreError::format(format!("line {} field {}: bad pixel value '{f}'", lineno + 1, k + 1))
            })?;
            if !(0.0..=1.0).contains(&v) {
                return Err(CoreError::format(format!(
                    "line {} field {}: pixel {v} outside [0, 1] (normalize before loading)",
                    lineno + 1,
                    k + 1
                )));
            }
            pixels.push(v);
        }
        let label: usize = fields[dim].trim().parse().map_err(|_| {
            CoreError::format(format!("line {}: bad label '{}'", lineno + 1, fields[dim]))
        })?;
        items.push(DatasetItem { input: InputData::Image(pixels), label });
    }
    if items.is_empty() {
        return Err(CoreError::format("empty CSV"));
    }
    let num_classes = items.iter().map(|i| i.label).max().unwrap() + 1;
    let ds = Dataset { items, num_classes, input_dim: input_dim.unwrap(), t_hint: 10 };
    ds.validate()?;
    Ok(ds)
}
