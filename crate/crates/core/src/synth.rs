//! Seeded synthetic trajectories and the plain-text dataset format.
//!
//! Sequence `k` of a dataset draws from its own generator seeded with
//! `derive_seed(seed, k)`. Noise parameters `q` and `r` are variances.
//!
//! Dataset file layout:
//!
//! ```text
//! lstmkf-dataset 1
//! {"generator":"linear_cv","params":{...},"seed":7,"bursts":[]}
//! sequences 2
//! sequence 0 steps 100 dim 2
//! t,y_1,y_2,z_1,z_2
//! 0,1.0000000000000000e0,...
//! ...
//! end
//! sequence 1 steps 100 dim 2
//! ...
//! end
//! end-dataset
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! `f64` exactly.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kalman::{build_cv_model, kf_filter, GaussianBelief};
use crate::matrix::Matrix;
use crate::metrics::step_errors;
use crate::rng::{derive_seed, SeededRng};

pub const DATASET_HEADER: &str = "lstmkf-dataset 1";

/// Ground truth `y_t` and measurements `z_t` for one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub truth: Vec<Vec<f64>>,
    pub measurements: Vec<Vec<f64>>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.truth.first().map_or(0, |v| v.len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearCvParams {
    pub dim: usize,
    pub steps: usize,
    pub sequences: usize,
    /// velocity random-walk variance per step
    pub q: f64,
    /// measurement noise variance
    pub r: f64,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OscillatorParams {
    pub dim: usize,
    pub steps: usize,
    pub sequences: usize,
    pub amplitude: f64,
    /// cycles per unit time
    pub frequency: f64,
    /// measurement noise variance
    pub r: f64,
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", content = "params", rename_all = "snake_case")]
pub enum Generator {
    LinearCv(LinearCvParams),
    Oscillator(OscillatorParams),
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::LinearCv(_) => "linear_cv",
            Generator::Oscillator(_) => "oscillator",
        }
    }

    pub fn dt(&self) -> f64 {
        match self {
            Generator::LinearCv(p) => p.dt,
            Generator::Oscillator(p) => p.dt,
        }
    }

    pub fn measurement_variance(&self) -> f64 {
        match self {
            Generator::LinearCv(p) => p.r,
            Generator::Oscillator(p) => p.r,
        }
    }

    pub fn generate(&self, seed: u64) -> Result<TrajectoryDataset> {
        match self {
            Generator::LinearCv(p) => gen_linear_cv(p, seed),
            Generator::Oscillator(p) => gen_oscillator(p, seed),
        }
    }
}

/// Burst intervals are 1-indexed and inclusive: `(starts[i], ends[i])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstSpec {
    pub starts: Vec<usize>,
    pub ends: Vec<usize>,
    /// multiplier on the measurement noise standard deviation
    pub scale: f64,
}

impl BurstSpec {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if self.starts.len() != self.ends.len() {
            return Err(Error::invalid("burst starts and ends differ in length"));
        }
        if !(self.scale >= 0.0) || !self.scale.is_finite() {
            return Err(Error::invalid("burst scale must be finite and nonnegative"));
        }
        let mut iv: Vec<(usize, usize)> = self.starts.iter().copied().zip(self.ends.iter().copied()).collect();
        iv.sort_unstable();
        for (i, &(s, e)) in iv.iter().enumerate() {
            if s < 1 || e < s || e > steps {
                return Err(Error::invalid(format!(
                    "burst interval [{s}, {e}] outside [1, {steps}]"
                )));
            }
            if i > 0 && s <= iv[i - 1].1 {
                return Err(Error::invalid(format!("burst interval [{s}, {e}] overlaps another")));
            }
        }
        Ok(())
    }

    /// Whether 0-based step `t` lies inside a burst.
    pub fn contains(&self, t: usize) -> bool {
        let step = t + 1;
        self.starts
            .iter()
            .zip(&self.ends)
            .any(|(&s, &e)| s <= step && step <= e)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppliedBursts {
    pub spec: BurstSpec,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(flatten)]
    pub generator: Generator,
    pub seed: u64,
    #[serde(default)]
    pub bursts: Vec<AppliedBursts>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub sequences: Vec<Sequence>,
    pub meta: DatasetMeta,
}

impl TrajectoryDataset {
    /// Rebuilds the dataset from its metadata alone.
    pub fn regenerate(meta: &DatasetMeta) -> Result<Self> {
        let mut ds = meta.generator.generate(meta.seed)?;
        for b in &meta.bursts {
            ds = apply_bursts(&ds, &b.spec, b.seed)?;
        }
        Ok(ds)
    }

    pub fn dim(&self) -> usize {
        self.sequences.first().map_or(0, |s| s.dim())
    }

    pub fn dt(&self) -> f64 {
        self.meta.generator.dt()
    }
}

fn check_counts(dim: usize, steps: usize, sequences: usize) -> Result<()> {
    if dim == 0 || steps == 0 || sequences == 0 {
        return Err(Error::invalid("dim, steps and sequences must be at least 1"));
    }
    Ok(())
}

/// Constant-velocity kinematics matching [`build_cv_model`]: the state
/// starts at position 0 with velocity drawn from `N(0, I)`, then each step
/// applies `x += dt·v`, `v += N(0, q)`, and observes `z = x + N(0, r)`.
pub fn gen_linear_cv(p: &LinearCvParams, seed: u64) -> Result<TrajectoryDataset> {
    check_counts(p.dim, p.steps, p.sequences)?;
    if !(p.q >= 0.0 && p.r >= 0.0 && p.dt > 0.0) {
        return Err(Error::invalid("q and r must be nonnegative and dt positive"));
    }
    let (sq, sr) = (p.q.sqrt(), p.r.sqrt());
    let sequences = (0..p.sequences)
        .map(|k| {
            let mut rng = SeededRng::new(derive_seed(seed, k as u64));
            let mut x = vec![0.0; p.dim];
            let mut v: Vec<f64> = (0..p.dim).map(|_| rng.normal()).collect();
            let mut truth = Vec::with_capacity(p.steps);
            let mut measurements = Vec::with_capacity(p.steps);
            for _ in 0..p.steps {
                for i in 0..p.dim {
                    x[i] += p.dt * v[i];
                    v[i] += sq * rng.normal();
                }
                let z = x.iter().map(|xi| xi + sr * rng.normal()).collect();
                truth.push(x.clone());
                measurements.push(z);
            }
            Sequence { truth, measurements }
        })
        .collect();
    Ok(TrajectoryDataset {
        sequences,
        meta: DatasetMeta {
            generator: Generator::LinearCv(p.clone()),
            seed,
            bursts: Vec::new(),
        },
    })
}

/// `y_t[k] = amplitude · sin(2π·frequency·t·dt + φ_k)` for `t = 0..steps`,
/// with per-sequence phases `φ_k ~ U[0, 2π)`, observed with `N(0, r)` noise.
pub fn gen_oscillator(p: &OscillatorParams, seed: u64) -> Result<TrajectoryDataset> {
    check_counts(p.dim, p.steps, p.sequences)?;
    if !(p.amplitude > 0.0 && p.frequency > 0.0 && p.r >= 0.0 && p.dt > 0.0) {
        return Err(Error::invalid(
            "amplitude, frequency and dt must be positive and r nonnegative",
        ));
    }
    let sr = p.r.sqrt();
    let sequences = (0..p.sequences)
        .map(|k| {
            let mut rng = SeededRng::new(derive_seed(seed, k as u64));
            let phase: Vec<f64> = (0..p.dim).map(|_| rng.uniform_range(0.0, 2.0 * PI)).collect();
            let mut truth = Vec::with_capacity(p.steps);
            let mut measurements = Vec::with_capacity(p.steps);
            for t in 0..p.steps {
                let w = 2.0 * PI * p.frequency * t as f64 * p.dt;
                let y: Vec<f64> = phase.iter().map(|ph| p.amplitude * (w + ph).sin()).collect();
                let z = y.iter().map(|yi| yi + sr * rng.normal()).collect();
                truth.push(y);
                measurements.push(z);
            }
            Sequence { truth, measurements }
        })
        .collect();
    Ok(TrajectoryDataset {
        sequences,
        meta: DatasetMeta {
            generator: Generator::Oscillator(p.clone()),
            seed,
            bursts: Vec::new(),
        },
    })
}

/// Re-samples measurements inside burst intervals with the noise standard
/// deviation multiplied by `spec.scale`. Truth is untouched.
pub fn apply_bursts(ds: &TrajectoryDataset, spec: &BurstSpec, seed: u64) -> Result<TrajectoryDataset> {
    let sd = ds.meta.generator.measurement_variance().sqrt() * spec.scale;
    let mut out = ds.clone();
    for (k, s) in out.sequences.iter_mut().enumerate() {
        spec.validate(s.len())?;
        let mut rng = SeededRng::new(derive_seed(seed, k as u64));
        for t in 0..s.len() {
            if spec.contains(t) {
                for (z, y) in s.measurements[t].iter_mut().zip(&s.truth[t]) {
                    *z = y + sd * rng.normal();
                }
            }
        }
    }
    out.meta.bursts.push(AppliedBursts {
        spec: spec.clone(),
        seed,
    });
    Ok(out)
}

/// Mean Euclidean error of the exact Kalman filter run with the true
/// constant-velocity model, initialized with the generator's prior.
pub fn oracle_error(ds: &TrajectoryDataset) -> Result<f64> {
    let Generator::LinearCv(p) = &ds.meta.generator else {
        return Err(Error::invalid("oracle error needs a linear_cv dataset"));
    };
    if !ds.meta.bursts.is_empty() {
        return Err(Error::invalid("oracle error is undefined once bursts are applied"));
    }
    // unit noise only fixes the structure; the true (possibly zero) variances follow
    let mut model = build_cv_model(p.dim, p.dt, 1.0, 1.0)?;
    model.process_noise = model.process_noise.scale(p.q);
    model.measurement_noise = model.measurement_noise.scale(p.r);
    let n = 2 * p.dim;
    let init = GaussianBelief::new(
        Matrix::zeros(n, 1),
        Matrix::from_fn(n, n, |i, j| if i == j && i >= p.dim { 1.0 } else { 0.0 }),
    )?;
    let estimates: Vec<Vec<Vec<f64>>> = ds
        .sequences
        .iter()
        .map(|s| {
            Ok(kf_filter(&s.measurements, &model, &init)?
                .into_iter()
                .map(|b| b.mean.as_slice()[..p.dim].to_vec())
                .collect())
        })
        .collect::<Result<_>>()?;
    let errs = step_errors(
        estimates
            .iter()
            .zip(&ds.sequences)
            .map(|(e, s)| (&e[..], &s.truth[..])),
    )?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Mean Euclidean distance between measurements and truth.
pub fn measurement_error(ds: &TrajectoryDataset) -> Result<f64> {
    let errs = step_errors(
        ds.sequences
            .iter()
            .map(|s| (&s.measurements[..], &s.truth[..])),
    )?;
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

pub fn dataset_to_string(ds: &TrajectoryDataset) -> String {
    let mut s = String::new();
    s.push_str(DATASET_HEADER);
    s.push('\n');
    s.push_str(&serde_json::to_string(&ds.meta).expect("metadata serializes"));
    s.push('\n');
    s.push_str(&format!("sequences {}\n", ds.sequences.len()));
    for (k, seq) in ds.sequences.iter().enumerate() {
        let d = seq.dim();
        s.push_str(&format!("sequence {k} steps {} dim {d}\n", seq.len()));
        s.push('t');
        for i in 1..=d {
            s.push_str(&format!(",y_{i}"));
        }
        for i in 1..=d {
            s.push_str(&format!(",z_{i}"));
        }
        s.push('\n');
        for (t, (y, z)) in seq.truth.iter().zip(&seq.measurements).enumerate() {
            s.push_str(&t.to_string());
            for v in y.iter().chain(z) {
                s.push_str(&format!(",{v:.16e}"));
            }
            s.push('\n');
        }
        s.push_str("end\n");
    }
    s.push_str("end-dataset\n");
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.inner.next() {
            Some((i, l)) => Ok((i + 1, l)),
            None => Err(Error::Parse {
                line: 0,
                message: format!("unexpected end of file, expected {what}"),
            }),
        }
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// `"<keyword> <n>"` pairs such as `sequence 0 steps 100 dim 2`.
fn keyed_numbers(line: usize, text: &str, keys: &[&str]) -> Result<Vec<usize>> {
    let parts: Vec<&str> = text.split_whitespace().collect();
    if parts.len() != 2 * keys.len() {
        return Err(parse_err(line, format!("expected `{}`", keys.join(" <n> ") + " <n>")));
    }
    keys.iter()
        .enumerate()
        .map(|(i, k)| {
            if parts[2 * i] != *k {
                return Err(parse_err(line, format!("expected `{k}`, found `{}`", parts[2 * i])));
            }
            parts[2 * i + 1]
                .parse()
                .map_err(|_| parse_err(line, format!("bad count `{}`", parts[2 * i + 1])))
        })
        .collect()
}

pub fn dataset_from_str(text: &str) -> Result<TrajectoryDataset> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (n, header) = lines.next("header")?;
    if header != DATASET_HEADER {
        return Err(parse_err(n, format!("expected `{DATASET_HEADER}`")));
    }
    let (n, meta_line) = lines.next("metadata")?;
    let meta: DatasetMeta =
        serde_json::from_str(meta_line).map_err(|e| parse_err(n, format!("metadata: {e}")))?;
    let (n, l) = lines.next("sequence count")?;
    let count = keyed_numbers(n, l, &["sequences"])?[0];
    let mut sequences = Vec::with_capacity(count);
    for k in 0..count {
        let (n, l) = lines.next("sequence header")?;
        let nums = keyed_numbers(n, l, &["sequence", "steps", "dim"])?;
        if nums[0] != k {
            return Err(parse_err(n, format!("expected sequence {k}, found {}", nums[0])));
        }
        let (steps, dim) = (nums[1], nums[2]);
        let (n, cols) = lines.next("column header")?;
        if cols.split(',').count() != 1 + 2 * dim {
            return Err(parse_err(n, "column header does not match dim"));
        }
        let mut truth = Vec::with_capacity(steps);
        let mut measurements = Vec::with_capacity(steps);
        for t in 0..steps {
            let (n, row) = lines.next("data row")?;
            let fields: Vec<&str> = row.split(',').collect();
            if fields.len() != 1 + 2 * dim {
                return Err(parse_err(n, format!("expected {} fields, found {}", 1 + 2 * dim, fields.len())));
            }
            if fields[0].parse::<usize>().ok() != Some(t) {
                return Err(parse_err(n, format!("expected step {t}")));
            }
            let vals: Vec<f64> = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|_| parse_err(n, format!("bad number `{f}`"))))
                .collect::<Result<_>>()?;
            truth.push(vals[..dim].to_vec());
            measurements.push(vals[dim..].to_vec());
        }
        let (n, l) = lines.next("`end`")?;
        if l != "end" {
            return Err(parse_err(n, "expected `end`"));
        }
        sequences.push(Sequence { truth, measurements });
    }
    let (n, l) = lines.next("`end-dataset`")?;
    if l != "end-dataset" {
        return Err(parse_err(n, "expected `end-dataset`"));
    }
    Ok(TrajectoryDataset { sequences, meta })
}

pub fn save_dataset(ds: &TrajectoryDataset, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, dataset_to_string(ds))?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<TrajectoryDataset> {
    dataset_from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cv(q: f64, r: f64, steps: usize, sequences: usize) -> LinearCvParams {
        LinearCvParams {
            dim: 2,
            steps,
            sequences,
            q,
            r,
            dt: 1.0,
        }
    }

    fn osc(r: f64) -> OscillatorParams {
        OscillatorParams {
            dim: 2,
            steps: 60,
            sequences: 3,
            amplitude: 1.5,
            frequency: 0.05,
            r,
            dt: 1.0,
        }
    }

    #[test]
    fn noiseless_cv_is_piecewise_linear() {
        let ds = gen_linear_cv(&cv(0.0, 0.0, 20, 2), 3).unwrap();
        for s in &ds.sequences {
            assert_eq!(s.truth, s.measurements);
            for t in 2..s.len() {
                for i in 0..2 {
                    let d2 = s.truth[t][i] - 2.0 * s.truth[t - 1][i] + s.truth[t - 2][i];
                    assert!(d2.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn cv_measurement_variance_calibrated() {
        let ds = gen_linear_cv(&cv(0.1, 1.0, 500, 10), 11).unwrap();
        let mut acc = 0.0;
        let mut n = 0.0;
        for s in &ds.sequences {
            for (z, y) in s.measurements.iter().zip(&s.truth) {
                for i in 0..2 {
                    acc += (z[i] - y[i]).powi(2);
                    n += 1.0;
                }
            }
        }
        assert!((acc / n - 1.0).abs() < 0.05);
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(
            gen_linear_cv(&cv(0.1, 1.0, 30, 3), 5).unwrap(),
            gen_linear_cv(&cv(0.1, 1.0, 30, 3), 5).unwrap()
        );
        assert_ne!(
            gen_linear_cv(&cv(0.1, 1.0, 30, 3), 5).unwrap(),
            gen_linear_cv(&cv(0.1, 1.0, 30, 3), 6).unwrap()
        );
        assert_eq!(gen_oscillator(&osc(0.1), 5).unwrap(), gen_oscillator(&osc(0.1), 5).unwrap());
    }

    #[test]
    fn oscillator_contracts() {
        let ds = gen_oscillator(&osc(0.0), 2).unwrap();
        for s in &ds.sequences {
            assert_eq!(s.truth, s.measurements);
            assert!(s.truth.iter().flatten().all(|v| v.abs() <= 1.5));
            // frequency·dt·20 = 1 full period
            for i in 0..2 {
                assert!((s.truth[20][i] - s.truth[0][i]).abs() < 1e-9);
            }
        }
        let mut p = osc(0.0);
        p.frequency = 0.0;
        assert!(gen_oscillator(&p, 0).is_err());
    }

    #[test]
    fn bursts_leave_truth_and_scale_noise() {
        let ds = gen_linear_cv(&cv(0.01, 1.0, 100, 100), 1).unwrap();
        let spec = BurstSpec {
            starts: vec![50],
            ends: vec![60],
            scale: 10.0,
        };
        let b = apply_bursts(&ds, &spec, 9).unwrap();
        let (mut vin, mut nin, mut vout, mut nout) = (0.0, 0.0, 0.0, 0.0);
        for (s0, s) in ds.sequences.iter().zip(&b.sequences) {
            assert_eq!(s0.truth, s.truth);
            for t in 0..s.len() {
                let e: f64 = s.measurements[t].iter().zip(&s.truth[t]).map(|(z, y)| (z - y).powi(2)).sum();
                if spec.contains(t) {
                    vin += e;
                    nin += 2.0;
                } else {
                    assert_eq!(s.measurements[t], s0.measurements[t]);
                    vout += e;
                    nout += 2.0;
                }
            }
        }
        let ratio = (vin / nin) / (vout / nout);
        assert!((ratio / 100.0 - 1.0).abs() < 0.2, "ratio {ratio}");
        assert_eq!(TrajectoryDataset::regenerate(&b.meta).unwrap(), b);
    }

    #[test]
    fn burst_validation() {
        let ds = gen_linear_cv(&cv(0.01, 1.0, 10, 1), 1).unwrap();
        let bad = |starts: Vec<usize>, ends: Vec<usize>| BurstSpec {
            starts,
            ends,
            scale: 2.0,
        };
        assert!(apply_bursts(&ds, &bad(vec![0], vec![3]), 0).is_err());
        assert!(apply_bursts(&ds, &bad(vec![5], vec![11]), 0).is_err());
        assert!(apply_bursts(&ds, &bad(vec![2, 4], vec![5, 8]), 0).is_err());
        assert!(apply_bursts(&ds, &bad(vec![1, 10], vec![1, 10]), 0).is_ok());
    }

    #[test]
    fn oracle_beats_measurements() {
        let ds = gen_linear_cv(&cv(0.01, 1.0, 100, 5), 4).unwrap();
        assert!(oracle_error(&ds).unwrap() < measurement_error(&ds).unwrap());
        let clean = gen_linear_cv(&cv(0.01, 0.0, 50, 2), 4).unwrap();
        assert!(oracle_error(&clean).unwrap() < 1e-9);
        assert!(oracle_error(&gen_oscillator(&osc(0.1), 1).unwrap()).is_err());
    }

    #[test]
    fn file_roundtrip_and_truncation() {
        let ds = apply_bursts(
            &gen_oscillator(&osc(0.1), 3).unwrap(),
            &BurstSpec {
                starts: vec![3],
                ends: vec![7],
                scale: 4.0,
            },
            2,
        )
        .unwrap();
        let text = dataset_to_string(&ds);
        assert_eq!(dataset_from_str(&text).unwrap(), ds);
        let cut = &text[..text.len() / 2];
        assert!(matches!(dataset_from_str(cut), Err(Error::Parse { .. })));
        let bad = text.replacen(",", ";", 3);
        match dataset_from_str(&bad) {
            Err(Error::Parse { line, .. }) => assert!(line > 0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn file_on_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.dataset");
        let ds = gen_linear_cv(&cv(0.1, 0.5, 5, 2), 42).unwrap();
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.meta.seed, 42);
    }
}
