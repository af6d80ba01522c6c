//! Trainable-parameter counts under two conventions.
//!
//! `native`: every tensor of the cell as built here, including the output
//! map `Y`, `yb`.
//! `reference`: RNN and LSTM as native; SRU and FRU add a dense `head`-wide
//! ReLU layer between the summary state and the output, and the FRU hidden
//! width equals `d`.

use frulab::cells::Arch;
use frulab::train::ModelSpec;
use frulab::Result;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct VariableRow {
    pub model: String,
    pub native: usize,
    pub reference: usize,
    /// Published figure, where one exists.
    pub published: Option<usize>,
}

impl VariableRow {
    pub fn delta(&self, count: usize) -> Option<f64> {
        self.published.map(|p| (count as f64 - p as f64) / p as f64)
    }
}

pub const VARIABLES_CSV_HEADER: &str = "model,native,reference,published,native_delta,reference_delta";

#[derive(Debug, Clone, Copy)]
pub struct Sizes {
    pub units: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub inner: usize,
    pub sru_alphas: usize,
    pub fru_d: usize,
    pub head: usize,
}

pub fn rnn_count(s: &Sizes) -> usize {
    let (h, i, y) = (s.units, s.inputs, s.outputs);
    h * h + h * i + h + y * h + y
}

pub fn lstm_count(s: &Sizes) -> usize {
    let (h, i, y) = (s.units, s.inputs, s.outputs);
    4 * (h * (h + i) + h) + y * h + y
}

/// Gated summary cell with hidden width `h` and state width `m`, plus the
/// dense head.
fn summary_count(s: &Sizes, h: usize, m: usize) -> usize {
    let g = s.inner;
    let head = if s.head == 0 { s.outputs * m + s.outputs } else { s.head * m + s.head + s.outputs * s.head + s.outputs };
    g * m + g + h * g + h * s.inputs + h + head
}

pub fn sru_reference_count(s: &Sizes) -> usize {
    summary_count(s, s.units, s.units * s.sru_alphas)
}

pub fn fru_reference_count(s: &Sizes, k: usize) -> usize {
    summary_count(s, s.fru_d, k * s.fru_d)
}

fn native(arch: Arch, s: &Sizes, k: usize) -> Result<usize> {
    let mut m = ModelSpec::new(arch);
    m.units = s.units;
    m.inner = s.inner;
    m.fru_k = k;
    m.fru_d = s.fru_d;
    m.alphas = (0..s.sru_alphas).map(|i| i as f64 / s.sru_alphas as f64).collect();
    Ok(m.build(s.inputs, s.outputs, 784, 0)?.num_trainable())
}

/// Rows for RNN, LSTM, SRU and one FRU per entry of `fru_ks`. Published
/// figures apply only to the default sizes.
pub fn variable_table(s: &Sizes, fru_ks: &[usize]) -> Result<Vec<VariableRow>> {
    let default_sizes = s.units == 200 && s.inputs == 1 && s.outputs == 10 && s.inner == 60 && s.sru_alphas == 5 && s.fru_d == 10 && s.head == 200;
    let published = |v: usize| default_sizes.then_some(v);
    let mut rows = vec![
        VariableRow {
            model: "rnn".into(),
            native: native(Arch::Rnn, s, 1)?,
            reference: rnn_count(s),
            published: published(42_000),
        },
        VariableRow {
            model: "lstm".into(),
            native: native(Arch::Lstm, s, 1)?,
            reference: lstm_count(s),
            published: published(164_000),
        },
        VariableRow {
            model: "sru".into(),
            native: native(Arch::Sru, s, 1)?,
            reference: sru_reference_count(s),
            published: published(275_000),
        },
    ];
    for &k in fru_ks {
        rows.push(VariableRow {
            model: format!("fru{k},{}", s.fru_d),
            native: native(Arch::Fru, s, k)?,
            reference: fru_reference_count(s, k),
            published: if k == 60 { published(159_000) } else { None },
        });
    }
    Ok(rows)
}

pub fn write_variables_csv<W: std::io::Write>(rows: &[VariableRow], mut w: W) -> Result<()> {
    writeln!(w, "{VARIABLES_CSV_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "\"{}\",{},{},{},{},{}",
            r.model,
            r.native,
            r.reference,
            r.published.map(|p| p.to_string()).unwrap_or_default(),
            opt(r.delta(r.native)),
            opt(r.delta(r.reference)),
        )?;
    }
    Ok(())
}
