use crate::args::*;
use crate::output::{emit, manifest_path, write_atomic, ManifestGuard};
use crate::variables::{variable_table, write_variables_csv, Sizes};
use frulab::bounds::{self, RandomSuite};
use frulab::cells::{sample_log_spectrum, Arch};
use frulab::datagen::{self, MixKind, MixSpec, SequenceDataset};
use frulab::ingest::{self, FrameMode};
use frulab::train::{self, Checkpoint, HistoryRow, Hooks, LossKind, ModelSpec, PhaseMode, TrainConfig};
use frulab::{theory, Cell, Error, Matrix, Result};
use serde_json::json;
use std::path::Path;

/// `Ok(true)` when every check in the command held.
pub type Outcome = Result<bool>;

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> Result<T> {
    s.trim().parse()
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| p.trim().parse::<T>().map_err(|_| Error::Config(format!("bad {what} entry '{p}'"))))
        .collect()
}

pub fn model_spec(m: &ModelArgs) -> Result<ModelSpec> {
    let arch: Arch = parse(&m.arch)?;
    let mut spec = ModelSpec::new(arch);
    spec.units = m.units;
    spec.inner = m.inner;
    spec.fru_k = m.fru_k;
    spec.fru_d = m.fru_d;
    spec.fmin = m.fmin;
    spec.fmax = m.fmax;
    spec.phases = parse::<PhaseMode>(&m.phases)?;
    spec.alphas = parse_list(&m.alphas, "alpha")?;
    if let Some(a) = &m.activation {
        spec.activation = parse(a)?;
    }
    Ok(spec)
}

pub fn load_data(d: &DataArgs) -> Result<SequenceDataset> {
    if d.data.is_dir() {
        let mode: FrameMode = parse(&d.frame)?;
        ingest::load_framed(&d.data, mode, d.perm_seed)
    } else {
        SequenceDataset::load(&d.data)
    }
}

pub fn datagen(a: &DatagenArgs) -> Outcome {
    let kind: MixKind = parse(&a.gen)?;
    let mut artifacts = vec![a.out.clone()];
    artifacts.extend(a.csv.clone());
    let guard = ManifestGuard::begin("datagen", a, Some(a.seed), manifest_path(&a.out, false), artifacts)?;
    let ds = datagen::generate(&MixSpec {
        kind,
        n: a.n,
        t: a.t,
        degree: a.degree,
        seed: a.seed,
        zero_coefficients: false,
    })?;
    write_atomic(&a.out, &ds.to_bytes())?;
    if let Some(csv) = &a.csv {
        emit(csv, |w| ds.write_csv(w))?;
    }
    println!("wrote {} sequences of length {} to {}", ds.n, ds.t, a.out.display());
    guard.finish(true, None)?;
    Ok(true)
}

pub fn train_config(a: &TrainArgs, data: &SequenceDataset) -> Result<TrainConfig> {
    let loss = match &a.loss {
        Some(l) => parse::<LossKind>(l)?,
        None => LossKind::for_dataset(data),
    };
    let mut cfg = TrainConfig::new(model_spec(&a.model)?, loss);
    cfg.lr = a.lr;
    cfg.lr_decay = a.decay;
    cfg.epochs = a.epochs;
    cfg.batch_size = a.batch;
    cfg.seed = a.seed;
    cfg.max_train = a.max_train;
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Outcome {
    let history_path = a.out.join("history.csv");
    let ckpt_path = a.out.join("checkpoint.json");
    let grid_path = a.out.join("grid.csv");
    let mut artifacts = vec![history_path.clone(), ckpt_path.clone()];
    if a.grid {
        artifacts.push(grid_path.clone());
    }
    let data = load_data(&a.data)?;
    let mut cfg = train_config(a, &data)?;
    let guard = ManifestGuard::begin("train", &json!({ "args": a, "resolved": &cfg }), Some(a.seed), manifest_path(&a.out, true), artifacts)?;

    if a.grid {
        let g = train::grid_search(&cfg, &data, &train::LR_GRID, &train::DECAY_GRID)?;
        emit(&grid_path, |w| train::write_grid_csv(&g.rows, w))?;
        eprintln!("grid best: lr {} decay {}", g.best_config.lr, g.best_config.lr_decay);
        cfg = g.best_config;
    }

    let mut on_row = |r: &HistoryRow| {
        eprintln!("{}", train::format_history_row(r));
        Ok(())
    };
    let mut on_model = |_: usize, _: &Cell| Ok(());
    let out = train::train_with(
        &cfg,
        &data,
        Hooks {
            on_row: &mut on_row,
            on_model: &mut on_model,
        },
    )?;
    emit(&history_path, |w| train::write_history_csv(&out.history, w))?;
    write_atomic(&ckpt_path, out.checkpoint.to_json()?.as_bytes())?;
    let (metric, value) = out.final_test.headline();
    println!("final test {metric} {value:e}");
    guard.finish(true, Some(json!({ "metric": metric, "value": value, "lr": cfg.lr, "lr_decay": cfg.lr_decay })))?;
    Ok(true)
}

/// Load a checkpoint written by `train`.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}

fn fixed_cell(a: &CertifyArgs, arch: Arch, scale: f64, t: usize) -> Result<Cell> {
    let w = Matrix::identity(a.units).scaled(scale);
    match arch {
        Arch::Rnn => Ok(bounds::linear_rnn(w, a.seed)),
        Arch::Sru => Ok(bounds::linear_sru(w, a.alpha, a.seed)),
        Arch::Fru => {
            let mut spectrum = sample_log_spectrum(a.units, 0.25, (t as f64 / 2.0).max(0.5), 1, t, a.seed)?;
            if a.basis == "square" {
                spectrum.basis = bounds::sampled_basis(&spectrum, &bounds::square_wave(t))?;
            }
            bounds::linear_fru(w, spectrum, a.seed)
        }
        Arch::Lstm => Err(Error::Config("certify supports rnn, sru and fru".into())),
    }
}

pub fn certify(a: &CertifyArgs) -> Outcome {
    let arch: Arch = parse(&a.arch)?;
    let horizons: Vec<usize> = parse_list(&a.t, "horizon")?;
    if horizons.is_empty() {
        return Err(Error::Config("--t needs at least one horizon".into()));
    }
    if a.basis != "cosine" && a.basis != "square" {
        return Err(Error::Config(format!("unknown basis '{}'", a.basis)));
    }
    let mut artifacts = vec![a.out.clone()];
    artifacts.extend(a.jsonl.clone());
    let guard = ManifestGuard::begin("certify", a, Some(a.seed), manifest_path(&a.out, false), artifacts)?;
    let certs = match a.w_scale {
        Some(scale) => {
            let t = horizons[0];
            let cell = fixed_cell(a, arch, scale, t)?;
            bounds::certify(&cell, t, a.t0, a.trials, a.seed)?
        }
        None => bounds::run_random_suite(
            &RandomSuite {
                arch,
                trials: a.trials,
                horizons,
                max_hidden: a.max_hidden,
                sigma_cap: a.sigma_cap,
                t0: a.t0,
                square_wave: a.basis == "square",
            },
            a.seed,
        )?,
    };
    emit(&a.out, |w| bounds::write_certificates_csv(&certs, w))?;
    if let Some(p) = &a.jsonl {
        emit(p, |w| bounds::write_certificates_jsonl(&certs, w))?;
    }
    let t = bounds::tally(&certs);
    println!("pass {} fail {} out-of-domain {}", t.pass, t.fail, t.out_of_domain);
    let ok = t.fail == 0;
    guard.finish(ok, Some(json!({ "pass": t.pass, "fail": t.fail, "out_of_domain": t.out_of_domain })))?;
    Ok(ok)
}

pub fn probe(a: &ProbeArgs) -> Outcome {
    let data = SequenceDataset::load(&a.data)?;
    let mut snapshots: Vec<usize> = parse_list(&a.snapshots, "snapshot")?;
    snapshots.sort_unstable();
    snapshots.dedup();
    let last = *snapshots.last().ok_or_else(|| Error::Config("--snapshots is empty".into()))?;
    let mut cfg = TrainConfig::new(model_spec(&a.model)?, LossKind::PerStepMse);
    cfg.lr = a.lr;
    cfg.lr_decay = a.decay;
    cfg.epochs = last;
    cfg.batch_size = a.batch;
    cfg.seed = a.seed;
    let guard = ManifestGuard::begin("probe", &json!({ "args": a, "resolved": &cfg }), Some(a.seed), manifest_path(&a.out, false), vec![a.out.clone()])?;

    let sequences: Vec<usize> = data.train_indices().take(a.sequences).collect();
    let mut rows = Vec::new();
    let mut on_row = |r: &HistoryRow| {
        eprintln!("{}", train::format_history_row(r));
        Ok(())
    };
    let mut on_model = |epoch: usize, cell: &Cell| {
        if snapshots.binary_search(&epoch).is_ok() {
            rows.extend(bounds::gradient_probe(cell, &data, &sequences, a.bucket, epoch)?);
        }
        Ok(())
    };
    if last == 0 {
        on_model(0, &cfg.build_cell(&data)?)?;
    } else {
        train::train_with(
            &cfg,
            &data,
            Hooks {
                on_row: &mut on_row,
                on_model: &mut on_model,
            },
        )?;
    }
    emit(&a.out, |w| bounds::write_probe_csv(&rows, w))?;
    println!("wrote {} probe rows to {}", rows.len(), a.out.display());
    guard.finish(true, None)?;
    Ok(true)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct TheoryLine {
    pub name: String,
    pub value: f64,
    pub target: Option<f64>,
    pub tolerance: Option<f64>,
    pub pass: bool,
}

pub const THEORY_CSV_HEADER: &str = "name,value,target,tolerance,pass";

const CONSTANT_TOL: f64 = 1e-3;
const FIT_EPS: f64 = 1e-3;

fn close(name: &str, value: f64, target: f64) -> TheoryLine {
    TheoryLine {
        name: name.into(),
        value,
        target: Some(target),
        tolerance: Some(CONSTANT_TOL),
        pass: (value - target).abs() <= CONSTANT_TOL,
    }
}

pub fn theory_report(a: &TheoryArgs) -> Result<Vec<TheoryLine>> {
    let c = theory::counterexample_constants(a.quad_points)?;
    let mut lines = vec![
        close("beta", c.beta, 9.9263),
        close("beta1", c.beta1, 0.1828),
        close("beta2", c.beta2, 0.8172),
        close("M1/T", c.masses[0], 0.0847),
        close("M2/T", c.masses[1], -0.2017),
        close("M3/T", c.masses[2], 0.2017),
        close("M4/T", c.masses[3], -0.0847),
        close("int|P|/T", c.total_abs, 0.5727),
    ];
    for d in 0..=a.max_d {
        let mut worst: f64 = 0.0;
        let mut halvings = 0;
        let mut ok = 0;
        for i in 0..a.polys {
            let q = theory::random_poly(d, a.seed.wrapping_add(d as u64), i);
            match theory::fit_fourier_to_poly_with(&q, FIT_EPS, a.grid_points) {
                Ok(fit) => {
                    ok += 1;
                    worst = worst.max(fit.sup_error);
                    halvings = halvings.max(fit.halvings);
                }
                Err(Error::Convergence { best, .. }) => worst = worst.max(best),
                Err(e) => return Err(e),
            }
        }
        lines.push(TheoryLine {
            name: format!("fourier d={d} worst sup error ({ok}/{} fitted, max {halvings} halvings)", a.polys),
            value: worst,
            target: Some(0.0),
            tolerance: Some(FIT_EPS),
            pass: ok == a.polys && worst <= FIT_EPS,
        });
    }
    for k in 0..=a.exp_k {
        let fit = theory::exp_sum_best_fit(k, a.exp_trials, a.seed)?;
        let line = if k == 0 {
            close("exp-sum k=0 error", fit.error, 0.5727)
        } else {
            TheoryLine {
                name: format!("exp-sum k={k} error (floor M1/T)"),
                value: fit.error,
                target: Some(0.0847),
                tolerance: Some(CONSTANT_TOL),
                pass: fit.error >= 0.0847 - CONSTANT_TOL,
            }
        };
        lines.push(line);
    }
    Ok(lines)
}

pub fn write_theory_csv<W: std::io::Write>(lines: &[TheoryLine], mut w: W) -> Result<()> {
    writeln!(w, "{THEORY_CSV_HEADER}")?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for l in lines {
        writeln!(w, "\"{}\",{},{},{},{}", l.name, l.value, opt(l.target), opt(l.tolerance), l.pass)?;
    }
    Ok(())
}

pub fn theory(a: &TheoryArgs) -> Outcome {
    let guard = match &a.out {
        Some(p) => Some(ManifestGuard::begin("theory", a, Some(a.seed), manifest_path(p, false), vec![p.clone()])?),
        None => None,
    };
    let lines = theory_report(a)?;
    for l in &lines {
        let target = l.target.map(|t| format!("{t:.4}")).unwrap_or_else(|| "-".into());
        println!("{:<60} {:>12.6} target {:>8}  {}", l.name, l.value, target, if l.pass { "PASS" } else { "FAIL" });
    }
    let ok = lines.iter().all(|l| l.pass);
    if let (Some(p), Some(g)) = (&a.out, guard) {
        emit(p, |w| write_theory_csv(&lines, w))?;
        g.finish(ok, None)?;
    }
    Ok(ok)
}

pub fn variables(a: &VariablesArgs) -> Outcome {
    let sizes = Sizes {
        units: a.units,
        inputs: a.inputs,
        outputs: a.outputs,
        inner: a.inner,
        sru_alphas: a.sru_alphas,
        fru_d: a.fru_d,
        head: a.head,
    };
    let ks: Vec<usize> = parse_list(&a.fru_k, "fru-k")?;
    let guard = match &a.out {
        Some(p) => Some(ManifestGuard::begin("variables", a, None, manifest_path(p, false), vec![p.clone()])?),
        None => None,
    };
    let rows = variable_table(&sizes, &ks)?;
    println!("{:<10} {:>10} {:>10} {:>10} {:>9} {:>9}", "model", "native", "reference", "published", "Δnative", "Δref");
    let pct = |v: Option<f64>| v.map(|x| format!("{:+.1}%", 100.0 * x)).unwrap_or_else(|| "-".into());
    for r in &rows {
        println!(
            "{:<10} {:>10} {:>10} {:>10} {:>9} {:>9}",
            r.model,
            r.native,
            r.reference,
            r.published.map(|p| p.to_string()).unwrap_or_else(|| "-".into()),
            pct(r.delta(r.native)),
            pct(r.delta(r.reference)),
        );
    }
    if let (Some(p), Some(g)) = (&a.out, guard) {
        emit(p, |w| write_variables_csv(&rows, w))?;
        g.finish(true, None)?;
    }
    Ok(true)
}
