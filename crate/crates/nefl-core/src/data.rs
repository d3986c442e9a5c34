//! Datasets and client partitions.
//!
//! Three sources: synthetic Gaussian blobs (vector data), IDX image files,
//! and CIFAR-style binary batches. Two partitioners: IID equal shards and
//! per-class Dirichlet splitting. Augmentation (pad-4 random crop plus
//! horizontal flip) applies only to image data in training mode.

use crate::error::{io_err, NeflError, Result};
use crate::rng::{self, Purpose};
use crate::tape::Mode;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use std::io::Read;
use std::path::Path;

/// Per-channel statistics used to normalize CIFAR-style RGB images.
pub const CIFAR_MEAN: [f64; 3] = [0.4914, 0.4822, 0.4465];
pub const CIFAR_STD: [f64; 3] = [0.2023, 0.1994, 0.2010];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    /// Flat feature vectors; augmentation is a no-op.
    Vector,
    /// [C,H,W] images; augmentation crops and flips.
    Image,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    /// [N,D] for vectors, [N,C,H,W] for images.
    pub examples: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub kind: DataKind,
}

/// A train/test pair drawn from the same source.
#[derive(Clone, Debug)]
pub struct SplitDataset {
    pub train: Dataset,
    pub test: Dataset,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-example feature shape (without the leading N axis).
    pub fn example_shape(&self) -> &[usize] {
        &self.examples.shape()[1..]
    }

    /// Copies the rows at `indices` into a batch tensor plus labels.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let row: usize = self.example_shape().iter().product();
        let mut data = Vec::with_capacity(indices.len() * row);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(NeflError::Index(format!(
                    "example index {} out of range for dataset of {}",
                    i,
                    self.len()
                )));
            }
            data.extend_from_slice(&self.examples.data()[i * row..(i + 1) * row]);
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(self.example_shape());
        Ok((Tensor::from_vec(shape, data)?, labels))
    }

    pub fn label_histogram(&self) -> Vec<usize> {
        let mut hist = vec![0usize; self.num_classes];
        for &y in &self.labels {
            hist[y] += 1;
        }
        hist
    }
}

// ── Synthetic blobs ─────────────────────────────────────────────────────

/// Gaussian blobs with unit noise around class centers whose minimum
/// pairwise distance is exactly `margin`. Each class contributes
/// `per_class` examples, split 5:1 into train and test.
pub fn gen_synthetic(
    classes: usize,
    per_class: usize,
    dim: usize,
    margin: f64,
    seed: u64,
) -> Result<SplitDataset> {
    if classes < 2 {
        return Err(NeflError::Config(format!("synthetic data needs >= 2 classes, got {}", classes)));
    }
    if per_class < 6 {
        return Err(NeflError::Config(format!(
            "synthetic data needs per_class >= 6 for a 5:1 split, got {}",
            per_class
        )));
    }
    if dim == 0 {
        return Err(NeflError::Config("synthetic data needs dim >= 1".into()));
    }
    if !(margin > 0.0) {
        return Err(NeflError::Config(format!("synthetic margin must be > 0, got {}", margin)));
    }

    let mut r = rng::stream(seed, Purpose::DataGen, 0, 0);
    let normal = rand_distr::StandardNormal;

    // Random centers, rescaled so the closest pair sits exactly at `margin`.
    let mut centers = vec![0.0f64; classes * dim];
    loop {
        for v in centers.iter_mut() {
            *v = normal.sample(&mut r);
        }
        let mut min_d2 = f64::INFINITY;
        for a in 0..classes {
            for b in (a + 1)..classes {
                let d2: f64 = (0..dim)
                    .map(|j| {
                        let d = centers[a * dim + j] - centers[b * dim + j];
                        d * d
                    })
                    .sum();
                min_d2 = min_d2.min(d2);
            }
        }
        if min_d2 > 1e-12 {
            let scale = margin / min_d2.sqrt();
            for v in centers.iter_mut() {
                *v *= scale;
            }
            break;
        }
        // Degenerate draw (coincident centers); try again on the same stream.
    }

    let n_train_per = (per_class * 5).div_ceil(6);
    let n_test_per = per_class - n_train_per;
    let build = |count: usize, start_at_test: bool| -> Result<Dataset> {
        // Deterministic layout: class-major, noise drawn in a fixed order.
        let mut data = Vec::with_capacity(classes * count * dim);
        let mut labels = Vec::with_capacity(classes * count);
        for c in 0..classes {
            let mut cr = rng::stream(
                seed,
                Purpose::DataGen,
                1 + c as u64,
                if start_at_test { 1 } else { 0 },
            );
            for _ in 0..count {
                for j in 0..dim {
                    let noise: f64 = normal.sample(&mut cr);
                    data.push(centers[c * dim + j] + noise);
                }
                labels.push(c);
            }
        }
        Ok(Dataset {
            examples: Tensor::from_vec(vec![classes * count, dim], data)?,
            labels,
            num_classes: classes,
            kind: DataKind::Vector,
        })
    };
    Ok(SplitDataset { train: build(n_train_per, false)?, test: build(n_test_per, true)? })
}

// ── IDX files ───────────────────────────────────────────────────────────

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

struct ByteReader {
    bytes: Vec<u8>,
    pos: usize,
}

impl ByteReader {
    fn open(path: &Path) -> Result<ByteReader> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| io_err(path, e))?;
        Ok(ByteReader { bytes, pos: 0 })
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(NeflError::Format {
                offset: self.bytes.len() as u64,
                msg: format!("truncated {}: wanted {} bytes at offset {}", what, n, self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Loads an IDX image/label file pair (big-endian, unsigned-byte payload)
/// into one dataset. Pixels are scaled to [0,1]; the class count is inferred
/// from the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let mut img = ByteReader::open(images_path)?;
    let magic = img.u32_be("image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(NeflError::Format {
            offset: 0,
            msg: format!("bad image magic {:#010x}, expected {:#010x}", magic, IDX_IMAGES_MAGIC),
        });
    }
    let n = img.u32_be("image count")? as usize;
    let rows = img.u32_be("row count")? as usize;
    let cols = img.u32_be("column count")? as usize;
    let payload = img.take(n * rows * cols, "image payload")?;
    let data: Vec<f64> = payload.iter().map(|&b| b as f64 / 255.0).collect();

    let mut lab = ByteReader::open(labels_path)?;
    let magic = lab.u32_be("label magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(NeflError::Format {
            offset: 0,
            msg: format!("bad label magic {:#010x}, expected {:#010x}", magic, IDX_LABELS_MAGIC),
        });
    }
    let ln = lab.u32_be("label count")? as usize;
    if ln != n {
        return Err(NeflError::Format {
            offset: 4,
            msg: format!("label count {} does not match image count {}", ln, n),
        });
    }
    let labels: Vec<usize> = lab.take(ln, "label payload")?.iter().map(|&b| b as usize).collect();
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1).max(1);

    Ok(Dataset {
        examples: Tensor::from_vec(vec![n, 1, rows, cols], data)?,
        labels,
        num_classes,
        kind: DataKind::Image,
    })
}

// ── CIFAR binary batches ────────────────────────────────────────────────

const CIFAR_RECORD: usize = 3073;
const CIFAR_SIDE: usize = 32;
const CIFAR_CLASSES: usize = 10;

fn load_cifar_file(path: &Path) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;
    if bytes.len() % CIFAR_RECORD != 0 {
        return Err(NeflError::Format {
            offset: (bytes.len() / CIFAR_RECORD * CIFAR_RECORD) as u64,
            msg: format!(
                "{}: file length {} is not a multiple of the {}-byte record",
                path.display(),
                bytes.len(),
                CIFAR_RECORD
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD;
    let plane = CIFAR_SIDE * CIFAR_SIDE;
    let mut data = Vec::with_capacity(n * 3 * plane);
    let mut labels = Vec::with_capacity(n);
    for rec in 0..n {
        let base = rec * CIFAR_RECORD;
        let label = bytes[base] as usize;
        if label >= CIFAR_CLASSES {
            return Err(NeflError::Format {
                offset: base as u64,
                msg: format!("{}: label byte {} >= {}", path.display(), label, CIFAR_CLASSES),
            });
        }
        labels.push(label);
        for c in 0..3 {
            for p in 0..plane {
                let raw = bytes[base + 1 + c * plane + p] as f64 / 255.0;
                data.push((raw - CIFAR_MEAN[c]) / CIFAR_STD[c]);
            }
        }
    }
    Ok((data, labels))
}

/// Loads CIFAR-style binary batches from `dir`: `data_batch_1..5.bin` form
/// the train split, `test_batch.bin` the test split. Each record is one
/// label byte followed by 32x32 R, G, B planes; pixels are scaled to [0,1]
/// and normalized per channel.
pub fn load_cifar_binary(dir: &Path) -> Result<SplitDataset> {
    let mut train_data = Vec::new();
    let mut train_labels = Vec::new();
    for i in 1..=5 {
        let (mut d, mut l) = load_cifar_file(&dir.join(format!("data_batch_{}.bin", i)))?;
        train_data.append(&mut d);
        train_labels.append(&mut l);
    }
    let (test_data, test_labels) = load_cifar_file(&dir.join("test_batch.bin"))?;

    let dataset = |data: Vec<f64>, labels: Vec<usize>| -> Result<Dataset> {
        let n = labels.len();
        Ok(Dataset {
            examples: Tensor::from_vec(vec![n, 3, CIFAR_SIDE, CIFAR_SIDE], data)?,
            labels,
            num_classes: CIFAR_CLASSES,
            kind: DataKind::Image,
        })
    };
    Ok(SplitDataset {
        train: dataset(train_data, train_labels)?,
        test: dataset(test_data, test_labels)?,
    })
}

// ── Client partitions ───────────────────────────────────────────────────

/// Shuffles the training indices and deals them into `m` shards whose sizes
/// differ by at most one.
pub fn partition_iid(train: &Dataset, m: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if m == 0 {
        return Err(NeflError::Config("cannot partition into 0 clients".into()));
    }
    if m > train.len() {
        return Err(NeflError::Config(format!(
            "cannot split {} examples into {} non-empty shards",
            train.len(),
            m
        )));
    }
    let mut idx: Vec<usize> = (0..train.len()).collect();
    let mut r = rng::stream(seed, Purpose::Partition, 0, 0);
    rng::shuffle(&mut r, &mut idx);
    let base = train.len() / m;
    let rem = train.len() % m;
    let mut shards = Vec::with_capacity(m);
    let mut at = 0;
    for i in 0..m {
        let take = base + usize::from(i < rem);
        shards.push(idx[at..at + take].to_vec());
        at += take;
    }
    Ok(shards)
}

/// Splits each class across clients with proportions drawn from a symmetric
/// Dirichlet(alpha). If any client ends up empty the whole partition is
/// redrawn with an incremented seed, up to 100 attempts.
pub fn partition_dirichlet(
    train: &Dataset,
    m: usize,
    alpha: f64,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    if m == 0 {
        return Err(NeflError::Config("cannot partition into 0 clients".into()));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(NeflError::Config(format!("dirichlet alpha must be positive, got {}", alpha)));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); train.num_classes];
    for (i, &y) in train.labels.iter().enumerate() {
        by_class[y].push(i);
    }

    const ATTEMPTS: u64 = 100;
    for attempt in 0..ATTEMPTS {
        let mut r = rng::stream(seed + attempt, Purpose::Partition, 1, 0);
        let gamma = rand_distr::Gamma::new(alpha, 1.0)
            .map_err(|e| NeflError::Config(format!("dirichlet alpha {} rejected: {}", alpha, e)))?;
        let mut shards: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut ok = true;
        for class_idx in &by_class {
            if class_idx.is_empty() {
                continue;
            }
            let mut idx = class_idx.clone();
            rng::shuffle(&mut r, &mut idx);
            let mut props: Vec<f64> = (0..m).map(|_| gamma.sample(&mut r)).collect();
            let total: f64 = props.iter().sum();
            if !(total > 0.0) {
                ok = false;
                break;
            }
            for p in props.iter_mut() {
                *p /= total;
            }
            // Cumulative rounding: counts sum exactly to the class size.
            let n_c = idx.len();
            let mut cum = 0.0;
            let mut prev_boundary = 0usize;
            for (i, &p) in props.iter().enumerate() {
                cum += p;
                let boundary = if i + 1 == m { n_c } else { (cum * n_c as f64).round() as usize };
                let boundary = boundary.clamp(prev_boundary, n_c);
                shards[i].extend_from_slice(&idx[prev_boundary..boundary]);
                prev_boundary = boundary;
            }
        }
        if ok && shards.iter().all(|s| !s.is_empty()) {
            return Ok(shards);
        }
    }
    Err(NeflError::Config(format!(
        "dirichlet partition (alpha {}) left a client empty after {} attempts",
        alpha, ATTEMPTS
    )))
}

// ── Augmentation ────────────────────────────────────────────────────────

/// Horizontally flips every image in a [B,C,H,W] batch. Applying it twice
/// returns the original batch bit-for-bit.
pub fn hflip(batch: &Tensor) -> Result<Tensor> {
    let s = batch.shape().to_vec();
    if s.len() != 4 {
        return Err(NeflError::Dimension(format!("hflip expects [B,C,H,W], got {:?}", s)));
    }
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = batch.data().to_vec();
    for img in 0..b * c * h {
        let base = img * w;
        out[base..base + w].reverse();
    }
    Tensor::from_vec(s, out)
}

/// Training-time augmentation for image batches: zero-pad by 4, take a
/// random crop at the original size, then flip horizontally with
/// probability 1/2 (independently per image). Vector data and eval mode
/// pass through untouched.
pub fn augment(batch: &Tensor, kind: DataKind, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Tensor> {
    if kind == DataKind::Vector || mode == Mode::Eval {
        return Ok(batch.clone());
    }
    let s = batch.shape().to_vec();
    if s.len() != 4 {
        return Err(NeflError::Dimension(format!("augment expects [B,C,H,W], got {:?}", s)));
    }
    const PAD: usize = 4;
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    let mut out = vec![0.0; batch.len()];
    for i in 0..b {
        // Fixed draw order per image keeps the stream scheduling-independent.
        let dy = rng.gen_range(0..=2 * PAD);
        let dx = rng.gen_range(0..=2 * PAD);
        let flip = rng.gen_bool(0.5);
        for ch in 0..c {
            for r in 0..h {
                for q in 0..w {
                    // Position (r+dy, q+dx) in the padded image.
                    let pr = r + dy;
                    let pq = q + dx;
                    let v = if pr >= PAD && pr < PAD + h && pq >= PAD && pq < PAD + w {
                        batch.data()[((i * c + ch) * h + (pr - PAD)) * w + (pq - PAD)]
                    } else {
                        0.0
                    };
                    let dest_q = if flip { w - 1 - q } else { q };
                    out[((i * c + ch) * h + r) * w + dest_q] = v;
                }
            }
        }
    }
    Tensor::from_vec(s, out)
}
