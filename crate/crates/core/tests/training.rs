use lstmkf::kalman::{kf_filter, GaussianBelief, LinearKfModel};
use lstmkf::lstm::presets::{preset_small, spec_small};
use lstmkf::synth::{gen_linear_cv, gen_oscillator, LinearCvParams, OscillatorParams};
use lstmkf::train::{train_model, SequenceModel};
use lstmkf::{Checkpoint, LstmKfParams, Matrix, NetModule, Preset, StdLstm, TrainConfig, TrainedModel};

fn oscillator(sequences: usize, steps: usize, seed: u64) -> Vec<lstmkf::Sequence> {
    let p = OscillatorParams { dim: 2, steps, sequences, amplitude: 1.0, frequency: 0.05, r: 0.01, dt: 1.0 };
    gen_oscillator(&p, seed).unwrap().sequences
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let data = oscillator(2, 20, 1);
    let mut kf = LstmKfParams::new(2, Preset::Small, 2).unwrap();
    let before = kf.clone();
    let cfg = TrainConfig { learning_rate: 0.0, epochs: 1, ..TrainConfig::small() };
    let log = kf.train(&data, &cfg).unwrap();
    assert_eq!(log.epochs.len(), 1);
    assert_eq!(kf, before);
}

#[test]
fn training_reduces_loss() {
    let data = oscillator(6, 40, 3);
    let mut kf = LstmKfParams::new(2, Preset::Small, 4).unwrap();
    let cfg = TrainConfig { epochs: 25, seed: 4, ..TrainConfig::small() };
    let log = kf.train(&data, &cfg).unwrap();
    let (first, last) = (&log.epochs[0], log.epochs.last().unwrap());
    assert!(last.loss < first.loss, "{} -> {}", first.loss, last.loss);
    assert!(log.epochs.iter().all(|e| e.mean_gain.is_some_and(|g| g > 0.0 && g < 1.0)));
    let epochs: Vec<usize> = log.epochs.iter().map(|e| e.epoch).collect();
    assert_eq!(epochs, (1..=25).collect::<Vec<_>>());
}

#[test]
fn training_is_deterministic() {
    let data = oscillator(4, 30, 5);
    let cfg = TrainConfig { epochs: 3, seed: 6, ..TrainConfig::small() };
    let run = || {
        let mut kf = LstmKfParams::new(2, Preset::Small, 6).unwrap();
        let log = kf.train(&data, &cfg).unwrap();
        (kf, log)
    };
    assert_eq!(run(), run());
}

#[test]
fn std_lstm_training_reduces_loss() {
    let data = oscillator(4, 40, 7);
    let mut m = StdLstm { module: preset_small(2, 8) };
    let cfg = TrainConfig { epochs: 20, seed: 8, ..TrainConfig::small() };
    let log = train_model(&mut m, &data, &cfg).unwrap();
    assert!(log.epochs.last().unwrap().loss < log.epochs[0].loss);
    assert!(log.epochs.iter().all(|e| e.mean_gain.is_none()));
}

#[test]
fn constant_modules_reproduce_classic_filter() {
    let d = 2;
    let (q, r): (f64, f64) = (0.2, 0.7);
    let constant = |v: f64| {
        let mut m = NetModule::zeros(&spec_small(d)).unwrap();
        m.heads[0].bias = Matrix::filled(d, 1, v);
        m
    };
    let kf = LstmKfParams::from_modules(constant(0.0), constant(q.ln()), constant(r.ln())).unwrap();
    let cv = LinearCvParams { dim: d, steps: 50, sequences: 1, q: 0.01, r: 0.5, dt: 1.0 };
    let s = &gen_linear_cv(&cv, 9).unwrap().sequences[0];
    let model = LinearKfModel::new(
        Matrix::zeros(d, d),
        Matrix::identity(d),
        Matrix::identity(d).scale(q),
        Matrix::identity(d).scale(r),
    )
    .unwrap();
    let init = GaussianBelief::new(Matrix::column(&s.measurements[0]), Matrix::identity(d)).unwrap();
    let classic = kf_filter(&s.measurements, &model, &init).unwrap();
    let trace = kf.filter(&s.measurements).unwrap();
    for (t, b) in classic.iter().enumerate() {
        assert!(Matrix::column(&trace.estimates[t]).sub(&b.mean).unwrap().max_abs() <= 1e-10);
        assert!(trace.covariances[t].sub(&b.cov).unwrap().max_abs() <= 1e-10);
    }
}

#[test]
fn checkpoint_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let data = oscillator(2, 15, 10);
    let mut kf = LstmKfParams::new(2, Preset::Small, 11).unwrap();
    let cfg = TrainConfig { epochs: 2, seed: 11, ..TrainConfig::small() };
    kf.train(&data, &cfg).unwrap();
    let ckpt = Checkpoint { model: TrainedModel::LstmKf(kf.clone()), train_config: Some(cfg), seed: 11 };
    let path = dir.path().join("kf.json");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    let TrainedModel::LstmKf(loaded) = back.model else { panic!("wrong kind") };
    assert_eq!(loaded.filter(&data[0].measurements).unwrap(), kf.filter(&data[0].measurements).unwrap());
    assert_eq!(loaded.params().len(), kf.params().len());
}

#[test]
fn training_rejects_empty_data() {
    let mut kf = LstmKfParams::new(2, Preset::Small, 1).unwrap();
    assert!(kf.train(&[], &TrainConfig::small()).is_err());
}
