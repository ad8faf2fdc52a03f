use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use lstmkf::kalman::{grid_search, run_baseline, BaselineParams, ModelFamily};
use lstmkf::lstm::presets::{preset_big_f, preset_small};
use lstmkf::metrics::{summarize, ErrorSummary};
use lstmkf::rng::derive_seed;
use lstmkf::synth::{apply_bursts, load_dataset, save_dataset};
use lstmkf::train::train_model;
use lstmkf::{Checkpoint, LstmKfParams, Preset, StdLstm, TrainLog, TrainedModel, TrajectoryDataset};

use crate::config::{Method, ModelKind, RunConfig};
use crate::Common;

pub const TRAIN_DATASET: &str = "train.dataset";
pub const TEST_DATASET: &str = "test.dataset";

/// Loads the config, applies the seed override and echoes the result.
fn setup(common: &Common, command: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    write(&common.out, &format!("{command}.config.toml"), &cfg.echo()?)?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

fn load(path: &Path) -> Result<TrajectoryDataset> {
    load_dataset(path).with_context(|| format!("loading {}", path.display()))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))
}

fn checkpoint_name(model: ModelKind) -> String {
    format!("{}.checkpoint.json", model.name())
}

fn log_name(model: ModelKind) -> String {
    format!("{}.train_log.csv", model.name())
}

/// Root-mean-square of `z - y` over every component of every step.
fn noise_rms(ds: &TrajectoryDataset) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for s in &ds.sequences {
        for (z, y) in s.measurements.iter().zip(&s.truth) {
            for (a, b) in z.iter().zip(y) {
                sum += (a - b) * (a - b);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

fn in_burst(ds: &TrajectoryDataset, t: usize) -> bool {
    ds.meta.bursts.iter().any(|b| b.spec.contains(t))
}

fn describe(name: &str, ds: &TrajectoryDataset) -> String {
    let steps = ds.sequences.first().map_or(0, |s| s.len());
    let burst_steps = (0..steps).filter(|&t| in_burst(ds, t)).count();
    format!(
        "{name}: {} sequences, T={steps}, d={}, {} generator, noise rms {:.4} (nominal {:.4}), burst steps {burst_steps}\n",
        ds.sequences.len(),
        ds.dim(),
        ds.meta.generator.name(),
        noise_rms(ds),
        ds.meta.generator.measurement_variance().sqrt(),
    )
}

pub fn generate(common: &Common) -> Result<String> {
    let cfg = setup(common, "generate")?;
    let data = &cfg.data;
    let splits = [
        (TRAIN_DATASET, data.train_sequences, &data.train_bursts, 1, 3),
        (TEST_DATASET, data.test_sequences, &data.test_bursts, 2, 4),
    ];
    let mut summary = String::new();
    for (name, sequences, bursts, data_stream, burst_stream) in splits {
        let mut ds = data
            .generator(sequences)
            .generate(derive_seed(cfg.seed, data_stream))
            .with_context(|| format!("generating {name}"))?;
        if let Some(spec) = bursts {
            ds = apply_bursts(&ds, spec, derive_seed(cfg.seed, burst_stream))
                .with_context(|| format!("bursts for {name}"))?;
        }
        let path = common.out.join(name);
        save_dataset(&ds, &path).with_context(|| format!("writing {}", path.display()))?;
        summary.push_str(&describe(name, &ds));
    }
    Ok(summary)
}

pub fn train(common: &Common, data: Option<PathBuf>) -> Result<String> {
    let cfg = setup(common, "train")?;
    let path = data.unwrap_or_else(|| common.out.join(TRAIN_DATASET));
    let ds = load(&path)?;
    let tc = cfg.train.train_config(cfg.seed);
    let d = ds.dim();
    let (model, log) = match cfg.train.model {
        ModelKind::LstmKf => {
            let mut p = LstmKfParams::new(d, cfg.train.preset, cfg.seed)?;
            let log = p.train(&ds.sequences, &tc)?;
            (TrainedModel::LstmKf(p), log)
        }
        ModelKind::StdLstm => {
            let seed = derive_seed(cfg.seed, 1);
            let module = match cfg.train.preset {
                Preset::Small => preset_small(d, seed),
                Preset::Big => preset_big_f(d, seed),
            };
            let mut m = StdLstm { module };
            let log = train_model(&mut m, &ds.sequences, &tc)?;
            (TrainedModel::StdLstm(m), log)
        }
    };
    let kind = cfg.train.model;
    let ckpt = Checkpoint { model, train_config: Some(tc), seed: cfg.seed };
    let ckpt_path = common.out.join(checkpoint_name(kind));
    ckpt.save(&ckpt_path).with_context(|| format!("writing {}", ckpt_path.display()))?;
    write(&common.out, &log_name(kind), &log.to_csv())?;

    let mut summary = format!("trained {} on {} sequences for {} epochs\n", kind.name(), ds.sequences.len(), log.epochs.len());
    if let (Some(first), Some(last)) = (log.epochs.first(), log.epochs.last()) {
        writeln!(summary, "loss {:.6} -> {:.6}", first.loss, last.loss)?;
        if let (Some(g0), Some(g1)) = (first.mean_gain, last.mean_gain) {
            writeln!(summary, "mean gain {g0:.4} -> {g1:.4}")?;
        }
    }
    Ok(summary)
}

struct MetricsRow {
    method: Method,
    summary: ErrorSummary,
}

fn family(method: Method) -> Option<ModelFamily> {
    match method {
        Method::KalmanVel => Some(ModelFamily::ConstantVelocity),
        Method::KalmanAcc => Some(ModelFamily::ConstantAcceleration),
        Method::Ema => Some(ModelFamily::Ema),
        _ => None,
    }
}

fn describe_params(p: &BaselineParams) -> String {
    match p {
        BaselineParams::Kalman { q, r } => format!("q={q:e} r={r:e}"),
        BaselineParams::Ema { window } => format!("window={window}"),
    }
}

pub fn eval(
    common: &Common,
    data: Option<PathBuf>,
    train_data: Option<PathBuf>,
    checkpoints: Option<PathBuf>,
) -> Result<String> {
    let cfg = setup(common, "eval")?;
    let ev = &cfg.eval;
    if ev.methods.is_empty() {
        bail!("no methods requested");
    }
    let test_path = data.unwrap_or_else(|| common.out.join(TEST_DATASET));
    let test = load(&test_path)?;
    let train = if ev.methods.iter().any(|&m| family(m).is_some()) {
        Some(load(&train_data.unwrap_or_else(|| common.out.join(TRAIN_DATASET)))?)
    } else {
        None
    };
    let ckpt_dir = checkpoints.unwrap_or_else(|| common.out.clone());
    let dt = test.dt();

    let mut rows = Vec::new();
    let mut notes = Vec::new();
    for &method in &ev.methods {
        let estimates: Vec<Vec<Vec<f64>>> = match method {
            Method::Measurements => test.sequences.iter().map(|s| s.measurements.clone()).collect(),
            Method::KalmanVel | Method::KalmanAcc | Method::Ema => {
                let fam = family(method).expect("baseline method");
                let train = train.as_ref().expect("loaded for baselines");
                let grid = grid_search(&train.sequences, fam, &ev.q_grid, &ev.r_grid, &ev.window_grid, train.dt())
                    .with_context(|| format!("grid search for {method}"))?;
                write(&common.out, &format!("grid_{method}.csv"), &grid.to_csv())?;
                notes.push(format!("{method}: {} (train error {:.6})", describe_params(&grid.best), grid.best_error));
                test.sequences
                    .iter()
                    .map(|s| run_baseline(fam, grid.best, &s.measurements, dt))
                    .collect::<lstmkf::Result<_>>()?
            }
            Method::StdLstm | Method::LstmKf => {
                let kind = if method == Method::LstmKf { ModelKind::LstmKf } else { ModelKind::StdLstm };
                let path = ckpt_dir.join(checkpoint_name(kind));
                let ckpt = load_checkpoint(&path)?;
                match (&ckpt.model, method) {
                    (TrainedModel::LstmKf(p), Method::LstmKf) => test
                        .sequences
                        .iter()
                        .map(|s| p.filter(&s.measurements).map(|t| t.estimates))
                        .collect::<lstmkf::Result<_>>()?,
                    (TrainedModel::StdLstm(m), Method::StdLstm) => test
                        .sequences
                        .iter()
                        .map(|s| m.filter(&s.measurements))
                        .collect::<lstmkf::Result<_>>()?,
                    _ => bail!("{} does not hold a {method} model", path.display()),
                }
            }
        };
        let summary = summarize(
            estimates
                .iter()
                .zip(&test.sequences)
                .map(|(e, s)| (&e[..], &s.truth[..])),
        )
        .with_context(|| format!("scoring {method}"))?;
        rows.push(MetricsRow { method, summary });
    }

    let d = test.dim();
    let csv = metrics_csv(&rows, d);
    let text = metrics_text(&rows, d, &test, &notes);
    write(&common.out, "metrics.csv", &csv)?;
    write(&common.out, "metrics.txt", &text)?;
    Ok(text)
}

fn metrics_csv(rows: &[MetricsRow], d: usize) -> String {
    let mut s = String::from("method,mean,median");
    for k in 1..=d {
        s.push_str(&format!(",rmse_{k}"));
    }
    s.push('\n');
    for row in rows {
        s.push_str(&format!("{},{:.17e},{:.17e}", row.method, row.summary.mean, row.summary.median));
        for v in &row.summary.rmse_per_dim {
            s.push_str(&format!(",{v:.17e}"));
        }
        s.push('\n');
    }
    s
}

fn metrics_text(rows: &[MetricsRow], d: usize, test: &TrajectoryDataset, notes: &[String]) -> String {
    let steps = test.sequences.first().map_or(0, |s| s.len());
    let mut s = String::new();
    s.push_str("SYNTHETIC DATA: all errors are measured on generated trajectories\n");
    s.push_str(&format!(
        "test set: {} generator, seed {}, {} sequences, T={steps}, d={d}\n",
        test.meta.generator.name(),
        test.meta.seed,
        test.sequences.len(),
    ));
    for n in notes {
        s.push_str(&format!("grid search {n}\n"));
    }
    s.push('\n');

    let mut header = vec!["method".to_string(), "mean".to_string(), "median".to_string()];
    header.extend((1..=d).map(|k| format!("rmse_{k}")));
    let mut table = vec![header];
    for row in rows {
        let mut cells = vec![
            row.method.to_string(),
            format!("{:.6}", row.summary.mean),
            format!("{:.6}", row.summary.median),
        ];
        cells.extend(row.summary.rmse_per_dim.iter().map(|v| format!("{v:.6}")));
        table.push(cells);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|r| r.get(c).map_or(0, |x| x.len())).max().unwrap_or(0))
        .collect();
    for r in &table {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, x)| if c == 0 { format!("{x:<w$}", w = widths[c]) } else { format!("{x:>w$}", w = widths[c]) })
            .collect();
        s.push_str(line.join("  ").trim_end());
        s.push('\n');
    }
    s
}

pub fn gain_curve(common: &Common, log: Option<PathBuf>) -> Result<String> {
    setup(common, "gain-curve")?;
    let path = log.unwrap_or_else(|| common.out.join(log_name(ModelKind::LstmKf)));
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let log = TrainLog::from_csv(&text).with_context(|| format!("parsing {}", path.display()))?;
    let mut s = String::from("epoch,loss,mean_gain\n");
    for e in &log.epochs {
        let Some(g) = e.mean_gain else {
            bail!("{}: epoch {} has no Kalman gain", path.display(), e.epoch);
        };
        s.push_str(&format!("{},{:.17e},{g:.17e}\n", e.epoch, e.loss));
    }
    let out = write(&common.out, "gain_curve.csv", &s)?;
    Ok(format!("{} epochs written to {}\n", log.epochs.len(), out.display()))
}

/// Scales to [0, 1]; a constant series maps to 0.
fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|v| if span > 0.0 { ((v - lo) / span).clamp(0.0, 1.0) } else { 0.0 })
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn noise_trace(common: &Common, checkpoint: Option<PathBuf>, data: Option<PathBuf>, index: usize) -> Result<String> {
    setup(common, "noise-trace")?;
    let ckpt_path = checkpoint.unwrap_or_else(|| common.out.join(checkpoint_name(ModelKind::LstmKf)));
    let ckpt = load_checkpoint(&ckpt_path)?;
    let TrainedModel::LstmKf(params) = &ckpt.model else {
        bail!("{} does not hold an lstm_kf model", ckpt_path.display());
    };
    let ds = load(&data.unwrap_or_else(|| common.out.join(TEST_DATASET)))?;
    let Some(seq) = ds.sequences.get(index) else {
        bail!("sequence index {index} out of range (dataset has {})", ds.sequences.len());
    };
    let trace = params.filter(&seq.measurements)?;
    let r: Vec<f64> = trace.measurement_noise.iter().map(|v| norm(v)).collect();
    let q: Vec<f64> = trace.process_noise.iter().map(|v| norm(v)).collect();
    let (rs, qs) = (min_max(&r), min_max(&q));
    let mut s = String::from("t,r_norm,q_norm,r_norm_scaled,q_norm_scaled,in_burst\n");
    for t in 0..r.len() {
        s.push_str(&format!(
            "{t},{:.17e},{:.17e},{:.17e},{:.17e},{}\n",
            r[t],
            q[t],
            rs[t],
            qs[t],
            u8::from(in_burst(&ds, t))
        ));
    }
    let out = write(&common.out, &format!("noise_trace_{index}.csv"), &s)?;
    Ok(format!("{} steps written to {}\n", r.len(), out.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn min_max_range() {
        let v = min_max(&[3.0, 1.0, 2.0]);
        assert_eq!(v, vec![1.0, 0.0, 0.5]);
        assert_eq!(min_max(&[2.0, 2.0]), vec![0.0, 0.0]);
    }
}
