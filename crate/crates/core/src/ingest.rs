//! MNIST IDX parsing and sequence framing.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;

use crate::datagen::{SequenceDataset, Targets};
use crate::error::{Error, Result};
use crate::rng;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const SIDE: usize = 28;
pub const PIXELS: usize = SIDE * SIDE;

#[derive(Debug, Clone, PartialEq)]
pub struct MnistSplit {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `N × rows·cols`, scaled to `[0, 1]`.
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
}

impl MnistSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let p = self.pixels();
        &self.images[i * p..(i + 1) * p]
    }

    /// First `n` examples.
    pub fn take(&self, n: usize) -> MnistSplit {
        let n = n.min(self.len());
        MnistSplit {
            rows: self.rows,
            cols: self.cols,
            images: self.images[..n * self.pixels()].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }
}

fn be_u32(bytes: &[u8], offset: usize, field: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Format {
            field,
            detail: format!("file ends before byte {}", offset + 4),
        })
}

/// Parse an image file (`0x803`, `N × rows × cols` unsigned bytes).
pub fn parse_images(bytes: &[u8]) -> Result<(usize, usize, Vec<f64>)> {
    let magic = be_u32(bytes, 0, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format {
            field: "image magic",
            detail: format!("expected 0x{IMAGE_MAGIC:08x}, found 0x{magic:08x}"),
        });
    }
    let n = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "image rows")? as usize;
    let cols = be_u32(bytes, 12, "image cols")? as usize;
    let need = n * rows * cols;
    let payload = &bytes[16..];
    if payload.len() != need {
        return Err(Error::Format {
            field: "image payload",
            detail: format!("expected {need} bytes for {n}×{rows}×{cols}, found {}", payload.len()),
        });
    }
    Ok((rows, cols, payload.iter().map(|&b| b as f64 / 255.0).collect()))
}

/// Parse a label file (`0x801`, `N` unsigned bytes in `0..=9`).
pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format {
            field: "label magic",
            detail: format!("expected 0x{LABEL_MAGIC:08x}, found 0x{magic:08x}"),
        });
    }
    let n = be_u32(bytes, 4, "label count")? as usize;
    let payload = &bytes[8..];
    if payload.len() != n {
        return Err(Error::Format {
            field: "label payload",
            detail: format!("expected {n} bytes, found {}", payload.len()),
        });
    }
    if let Some(bad) = payload.iter().find(|&&l| l > 9) {
        return Err(Error::Format {
            field: "label value",
            detail: format!("label {bad} outside 0..=9"),
        });
    }
    Ok(payload.to_vec())
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<MnistSplit> {
    let (rows, cols, images) = parse_images(images)?;
    let labels = parse_labels(labels)?;
    let n_img = if rows * cols == 0 { 0 } else { images.len() / (rows * cols) };
    if n_img != labels.len() {
        return Err(Error::Format {
            field: "count",
            detail: format!("{n_img} images but {} labels", labels.len()),
        });
    }
    Ok(MnistSplit {
        rows,
        cols,
        images,
        labels,
    })
}

pub fn load_idx(path_images: &Path, path_labels: &Path) -> Result<MnistSplit> {
    parse_idx(&std::fs::read(path_images)?, &std::fs::read(path_labels)?)
}

/// Encode a split back to IDX bytes (pixels rounded to the nearest byte).
pub fn encode_idx(split: &MnistSplit) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + split.images.len());
    for v in [IMAGE_MAGIC, split.len() as u32, split.rows as u32, split.cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend(split.images.iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lab = Vec::with_capacity(8 + split.len());
    for v in [LABEL_MAGIC, split.len() as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(&split.labels);
    (img, lab)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameMode {
    /// One pixel per step.
    Pixel,
    /// One image row per step.
    Row,
}

impl FrameMode {
    pub fn name(self) -> &'static str {
        match self {
            FrameMode::Pixel => "pixel784",
            FrameMode::Row => "row28",
        }
    }
}

impl std::str::FromStr for FrameMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pixel784" | "pixel" => Ok(FrameMode::Pixel),
            "row28" | "row" => Ok(FrameMode::Row),
            other => Err(Error::Config(format!("unknown framing mode '{other}'"))),
        }
    }
}

/// Fisher–Yates permutation of `0..n` from stream 0 of `seed`.
/// `perm[k]` is the source pixel placed at position `k`.
pub fn pixel_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    let mut r = rng::shared(seed);
    for i in (1..n).rev() {
        let j = r.random_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

pub fn frame_sequence(split: &MnistSplit, mode: FrameMode, permutation_seed: Option<u64>) -> SequenceDataset {
    let p = split.pixels();
    let perm = permutation_seed.map(|s| pixel_permutation(p, s));
    let mut inputs = Vec::with_capacity(split.images.len());
    for i in 0..split.len() {
        let img = split.image(i);
        match &perm {
            Some(perm) => inputs.extend(perm.iter().map(|&k| img[k])),
            None => inputs.extend_from_slice(img),
        }
    }
    let (t, n_i) = match mode {
        FrameMode::Pixel => (p, 1),
        FrameMode::Row => (split.rows, split.cols),
    };
    let mut meta = BTreeMap::new();
    meta.insert("generator".into(), "mnist".into());
    meta.insert("framing".into(), mode.name().into());
    meta.insert("n".into(), split.len().to_string());
    meta.insert("t".into(), t.to_string());
    meta.insert("classes".into(), "10".into());
    meta.insert(
        "permutation_seed".into(),
        permutation_seed.map_or_else(|| "none".into(), |s| s.to_string()),
    );
    SequenceDataset {
        n: split.len(),
        t,
        n_i,
        inputs,
        targets: Targets::Labels(split.labels.iter().map(|&l| l as usize).collect()),
        meta,
    }
}

/// Inverse of [`frame_sequence`].
pub fn unframe(ds: &SequenceDataset, rows: usize, cols: usize, permutation_seed: Option<u64>) -> Result<MnistSplit> {
    let p = rows * cols;
    if ds.t * ds.n_i != p {
        return Err(Error::Format {
            field: "framing",
            detail: format!("T·n_i = {} does not match {rows}×{cols}", ds.t * ds.n_i),
        });
    }
    let Targets::Labels(labels) = &ds.targets else {
        return Err(Error::Format {
            field: "labels",
            detail: "dataset has no class labels".into(),
        });
    };
    let perm = permutation_seed.map(|s| pixel_permutation(p, s));
    let mut images = vec![0.0; ds.n * p];
    for i in 0..ds.n {
        let seq = ds.raw_sequence(i);
        let out = &mut images[i * p..(i + 1) * p];
        match &perm {
            Some(perm) => {
                for (k, &src) in perm.iter().enumerate() {
                    out[src] = seq[k];
                }
            }
            None => out.copy_from_slice(seq),
        }
    }
    Ok(MnistSplit {
        rows,
        cols,
        images,
        labels: labels.iter().map(|&l| l as u8).collect(),
    })
}

/// Train and test splits of `dir` framed into one dataset, train first, with
/// the split point recorded as `train_count`.
pub fn load_framed(dir: &Path, mode: FrameMode, permutation_seed: Option<u64>) -> Result<SequenceDataset> {
    let train = load_dir(dir, "train")?;
    let test = load_dir(dir, "test")?;
    if (train.rows, train.cols) != (test.rows, test.cols) {
        return Err(Error::Format {
            field: "image size",
            detail: format!("train {}×{} vs test {}×{}", train.rows, train.cols, test.rows, test.cols),
        });
    }
    let n_train = train.len();
    let mut all = train;
    all.images.extend_from_slice(&test.images);
    all.labels.extend_from_slice(&test.labels);
    let mut ds = frame_sequence(&all, mode, permutation_seed);
    ds.meta.insert("train_count".into(), n_train.to_string());
    ds.meta.insert("source".into(), dir.display().to_string());
    Ok(ds)
}

/// `train-images-idx3-ubyte` style file names under `dir`.
pub fn load_dir(dir: &Path, split: &str) -> Result<MnistSplit> {
    let prefix = match split {
        "train" => "train",
        "test" => "t10k",
        other => return Err(Error::Config(format!("unknown MNIST split '{other}'"))),
    };
    load_idx(
        &dir.join(format!("{prefix}-images-idx3-ubyte")),
        &dir.join(format!("{prefix}-labels-idx1-ubyte")),
    )
}
