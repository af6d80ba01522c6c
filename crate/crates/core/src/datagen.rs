//! Synthetic regression datasets (mix-sin, mix-poly) and the on-disk
//! dataset container shared with the MNIST framing code.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "FRUDSET\0"
//! version    u32      1
//! meta_len   u32      number of key/value pairs
//!   key_len  u32, key bytes (UTF-8)
//!   val_len  u32, val bytes (UTF-8)
//! n          u64      sequences
//! t          u64      steps per sequence
//! n_i        u64      input width per step
//! kind       u8       0 = next-step regression, 1 = class labels
//! inputs     f64 × n·t·n_i
//! targets    f64 × n·t   (kind 0)  |  f64 × n (kind 1, integral labels)
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::rng;

pub const MAGIC: &[u8; 8] = b"FRUDSET\0";
pub const FORMAT_VERSION: u32 = 1;
pub const MIX_COMPONENTS: usize = 5;
pub const DEFAULT_N: usize = 1000;
pub const TRAIN_FRACTION: f64 = 0.8;
/// Standard deviation of the per-sequence weights `δᵢ` and offsets `bᵢ`.
pub const MIX_WEIGHT_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// `N × T`; entry `(l, t)` is the input at step `t + 1`.
    NextStep(Vec<f64>),
    Labels(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    pub n: usize,
    pub t: usize,
    pub n_i: usize,
    /// Row-major `N × T × n_i`.
    pub inputs: Vec<f64>,
    pub targets: Targets,
    pub meta: BTreeMap<String, String>,
}

impl SequenceDataset {
    pub fn is_regression(&self) -> bool {
        matches!(self.targets, Targets::NextStep(_))
    }

    pub fn num_classes(&self) -> Option<usize> {
        match &self.targets {
            Targets::Labels(l) => Some(
                self.meta_usize("classes")
                    .unwrap_or_else(|| l.iter().max().map_or(0, |m| m + 1)),
            ),
            Targets::NextStep(_) => None,
        }
    }

    /// First test-split index: sequences `0..split` train, `split..n` test.
    /// An explicit `train_count` in the metadata wins over `train_fraction`.
    pub fn split_index(&self) -> usize {
        if let Some(c) = self.meta_usize("train_count") {
            return c.min(self.n);
        }
        let frac = self
            .meta
            .get("train_fraction")
            .and_then(|v| v.parse::<f64>().ok())
            .unwrap_or(TRAIN_FRACTION);
        ((self.n as f64) * frac).floor() as usize
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.split_index()
    }

    pub fn test_indices(&self) -> std::ops::Range<usize> {
        self.split_index()..self.n
    }

    pub fn raw_sequence(&self, l: usize) -> &[f64] {
        let w = self.t * self.n_i;
        &self.inputs[l * w..(l + 1) * w]
    }

    pub fn sequence(&self, l: usize) -> Vec<Vector> {
        self.raw_sequence(l)
            .chunks_exact(self.n_i.max(1))
            .map(|c| Vector::from_vec(c.to_vec()))
            .collect()
    }

    /// Per-step regression targets of sequence `l` as 1-vectors.
    pub fn step_targets(&self, l: usize) -> Option<Vec<Vector>> {
        match &self.targets {
            Targets::NextStep(v) => Some(
                v[l * self.t..(l + 1) * self.t]
                    .iter()
                    .map(|&y| Vector::from_vec(vec![y]))
                    .collect(),
            ),
            Targets::Labels(_) => None,
        }
    }

    pub fn label(&self, l: usize) -> Option<usize> {
        match &self.targets {
            Targets::Labels(v) => Some(v[l]),
            Targets::NextStep(_) => None,
        }
    }

    pub fn meta_usize(&self, key: &str) -> Option<usize> {
        self.meta.get(key).and_then(|v| v.parse().ok())
    }

    /// Shape consistency plus the next-step alignment for scalar regression
    /// data: `target(l, t) == input(l, t + 1)` bitwise.
    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.n * self.t * self.n_i {
            return Err(Error::Format {
                field: "inputs",
                detail: format!("{} values for n·t·n_i = {}", self.inputs.len(), self.n * self.t * self.n_i),
            });
        }
        match &self.targets {
            Targets::NextStep(v) => {
                if v.len() != self.n * self.t {
                    return Err(Error::Format {
                        field: "targets",
                        detail: format!("{} values for n·t = {}", v.len(), self.n * self.t),
                    });
                }
                if self.n_i == 1 {
                    for l in 0..self.n {
                        let x = self.raw_sequence(l);
                        let y = &v[l * self.t..(l + 1) * self.t];
                        if let Some(t) = (0..self.t.saturating_sub(1)).find(|&t| y[t].to_bits() != x[t + 1].to_bits()) {
                            return Err(Error::Format {
                                field: "targets",
                                detail: format!("sequence {l}: target at step {t} is not the next input"),
                            });
                        }
                    }
                }
            }
            Targets::Labels(v) => {
                if v.len() != self.n {
                    return Err(Error::Format {
                        field: "labels",
                        detail: format!("{} labels for n = {}", v.len(), self.n),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + 8 * (self.inputs.len() + self.n * self.t));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            out.extend_from_slice(&(k.len() as u32).to_le_bytes());
            out.extend_from_slice(k.as_bytes());
            out.extend_from_slice(&(v.len() as u32).to_le_bytes());
            out.extend_from_slice(v.as_bytes());
        }
        for d in [self.n, self.t, self.n_i] {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        let (kind, tail): (u8, Vec<f64>) = match &self.targets {
            Targets::NextStep(v) => (0, v.clone()),
            Targets::Labels(v) => (1, v.iter().map(|&l| l as f64).collect()),
        };
        out.push(kind);
        for x in self.inputs.iter().chain(tail.iter()) {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::Format {
                field: "magic",
                detail: "not a dataset file".into(),
            });
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Format {
                field: "version",
                detail: format!("unsupported version {version}"),
            });
        }
        let count = r.u32("meta_len")?;
        let mut meta = BTreeMap::new();
        for _ in 0..count {
            let k = r.string("meta key")?;
            let v = r.string("meta value")?;
            meta.insert(k, v);
        }
        let n = r.u64("n")? as usize;
        let t = r.u64("t")? as usize;
        let n_i = r.u64("n_i")? as usize;
        let kind = r.take(1, "kind")?[0];
        let inputs = r.f64s(n * t * n_i, "inputs")?;
        let targets = match kind {
            0 => Targets::NextStep(r.f64s(n * t, "targets")?),
            1 => {
                let raw = r.f64s(n, "labels")?;
                let mut labels = Vec::with_capacity(n);
                for v in raw {
                    if !(v >= 0.0 && v.fract() == 0.0) {
                        return Err(Error::Format {
                            field: "labels",
                            detail: format!("non-integral label {v}"),
                        });
                    }
                    labels.push(v as usize);
                }
                Targets::Labels(labels)
            }
            other => {
                return Err(Error::Format {
                    field: "kind",
                    detail: format!("unknown target kind {other}"),
                })
            }
        };
        if r.pos != bytes.len() {
            return Err(Error::Format {
                field: "payload",
                detail: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        let ds = SequenceDataset {
            n,
            t,
            n_i,
            inputs,
            targets,
            meta,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// CSV with columns `sequence,t,x[,x1..],target` (one row per step). For
    /// labelled data the target column repeats the sequence label.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let xcols: Vec<String> = if self.n_i == 1 {
            vec!["x".into()]
        } else {
            (0..self.n_i).map(|i| format!("x{i}")).collect()
        };
        writeln!(w, "sequence,t,{},target", xcols.join(","))?;
        for l in 0..self.n {
            let seq = self.raw_sequence(l);
            for t in 0..self.t {
                let target = match &self.targets {
                    Targets::NextStep(v) => format!("{}", v[l * self.t + t]),
                    Targets::Labels(v) => v[l].to_string(),
                };
                let xs: Vec<String> = seq[t * self.n_i..(t + 1) * self.n_i].iter().map(|x| format!("{x}")).collect();
                writeln!(w, "{l},{},{},{target}", t + 1, xs.join(","))?;
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format {
            field,
            detail: format!("truncated: need {n} bytes at offset {}", self.pos),
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, field: &'static str) -> Result<String> {
        let len = self.u32(field)? as usize;
        String::from_utf8(self.take(len, field)?.to_vec()).map_err(|e| Error::Format {
            field,
            detail: e.to_string(),
        })
    }

    fn f64s(&mut self, n: usize, field: &'static str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).unwrap_or(usize::MAX), field)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixKind {
    Sin,
    Poly,
}

impl MixKind {
    pub fn name(self) -> &'static str {
        match self {
            MixKind::Sin => "mix-sin",
            MixKind::Poly => "mix-poly",
        }
    }
}

impl std::str::FromStr for MixKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mix-sin" => Ok(MixKind::Sin),
            "mix-poly" => Ok(MixKind::Poly),
            other => Err(Error::Config(format!("unknown generator '{other}'"))),
        }
    }
}

/// Full generator configuration. `degree` is `D` (frequencies) for mix-sin
/// and `d` (polynomial degree) for mix-poly.
#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub kind: MixKind,
    pub n: usize,
    pub t: usize,
    pub degree: usize,
    pub seed: u64,
    /// Test hook: force every `a_{i,j}` to zero.
    pub zero_coefficients: bool,
}

/// Shared draws of a mixture: `a_{i,j}` and (mix-sin only) `f_j`, `θ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixComponents {
    pub coeffs: Vec<Vec<f64>>,
    pub freqs: Vec<f64>,
    pub phases: Vec<f64>,
}

pub fn mix_components(spec: &MixSpec) -> MixComponents {
    let mut r = rng::shared(spec.seed);
    let (freqs, phases) = match spec.kind {
        MixKind::Sin => {
            let f: Vec<f64> = (0..spec.degree).map(|_| r.random_range(0.1..3.0)).collect();
            let p: Vec<f64> = (0..spec.degree).map(|_| r.random_range(-1.0..1.0)).collect();
            (f, p)
        }
        MixKind::Poly => (Vec::new(), Vec::new()),
    };
    let coeffs = (0..MIX_COMPONENTS)
        .map(|_| {
            (0..spec.degree)
                .map(|_| {
                    let a = r.random_range(-1.0..1.0);
                    if spec.zero_coefficients {
                        0.0
                    } else {
                        a
                    }
                })
                .collect()
        })
        .collect();
    MixComponents { coeffs, freqs, phases }
}

/// Per-sequence weights `(δ, b)` of sequence `l`.
pub fn sequence_weights(seed: u64, l: usize) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng::item(seed, l);
    let delta = (0..MIX_COMPONENTS).map(|_| rng::normal(&mut r, 0.0, MIX_WEIGHT_STD)).collect();
    let b = (0..MIX_COMPONENTS).map(|_| rng::normal(&mut r, 0.0, MIX_WEIGHT_STD)).collect();
    (delta, b)
}

/// Component values `S_i(t) = Σⱼ a_{i,j}·basis_j(t)` for `t = 1..=T+1`,
/// row-major `(T+1) × 5`.
fn component_table(spec: &MixSpec, comp: &MixComponents) -> Vec<f64> {
    let half = 0.5 * spec.t as f64;
    let mut table = Vec::with_capacity((spec.t + 1) * MIX_COMPONENTS);
    for t in 1..=spec.t + 1 {
        let s = (t as f64 - half) / half;
        let basis: Vec<f64> = match spec.kind {
            MixKind::Sin => comp
                .freqs
                .iter()
                .zip(&comp.phases)
                .map(|(f, th)| (2.0 * PI * f * s + 2.0 * PI * th).sin())
                .collect(),
            MixKind::Poly => (1..=spec.degree).map(|j| s.powi(j as i32)).collect(),
        };
        for a in &comp.coeffs {
            table.push(a.iter().zip(&basis).map(|(a, b)| a * b).sum());
        }
    }
    table
}

pub fn generate(spec: &MixSpec) -> Result<SequenceDataset> {
    if spec.n == 0 || spec.t == 0 || spec.degree == 0 {
        return Err(Error::Config(format!(
            "{} needs N, T and degree ≥ 1 (got {}, {}, {})",
            spec.kind.name(),
            spec.n,
            spec.t,
            spec.degree
        )));
    }
    let comp = mix_components(spec);
    let table = component_table(spec, &comp);
    let rows: Vec<Vec<f64>> = (0..spec.n)
        .into_par_iter()
        .map(|l| {
            let (delta, b) = sequence_weights(spec.seed, l);
            (0..=spec.t)
                .map(|t| {
                    let s = &table[t * MIX_COMPONENTS..(t + 1) * MIX_COMPONENTS];
                    (0..MIX_COMPONENTS).map(|i| delta[i] * s[i] + b[i]).sum()
                })
                .collect()
        })
        .collect();
    let mut inputs = Vec::with_capacity(spec.n * spec.t);
    let mut targets = Vec::with_capacity(spec.n * spec.t);
    for row in &rows {
        inputs.extend_from_slice(&row[..spec.t]);
        targets.extend_from_slice(&row[1..]);
    }
    let mut meta = BTreeMap::new();
    meta.insert("generator".into(), spec.kind.name().into());
    meta.insert("n".into(), spec.n.to_string());
    meta.insert("t".into(), spec.t.to_string());
    meta.insert("k".into(), MIX_COMPONENTS.to_string());
    meta.insert(
        match spec.kind {
            MixKind::Sin => "frequencies",
            MixKind::Poly => "degree",
        }
        .into(),
        spec.degree.to_string(),
    );
    meta.insert("seed".into(), spec.seed.to_string());
    meta.insert("train_fraction".into(), TRAIN_FRACTION.to_string());
    meta.insert("weight_noise".into(), format!("normal(0, std={MIX_WEIGHT_STD})"));
    meta.insert("rng".into(), "chacha8/seed_from_u64; stream 0 shared, stream l+1 for sequence l".into());
    if spec.zero_coefficients {
        meta.insert("zero_coefficients".into(), "true".into());
    }
    let ds = SequenceDataset {
        n: spec.n,
        t: spec.t,
        n_i: 1,
        inputs,
        targets: Targets::NextStep(targets),
        meta,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn gen_mix_sin(n: usize, t: usize, frequencies: usize, seed: u64) -> Result<SequenceDataset> {
    generate(&MixSpec {
        kind: MixKind::Sin,
        n,
        t,
        degree: frequencies,
        seed,
        zero_coefficients: false,
    })
}

pub fn gen_mix_poly(n: usize, t: usize, degree: usize, seed: u64) -> Result<SequenceDataset> {
    generate(&MixSpec {
        kind: MixKind::Poly,
        n,
        t,
        degree,
        seed,
        zero_coefficients: false,
    })
}
