//! Classic linear Kalman filter and the fixed-model baselines.
//!
//! The constant-velocity and constant-acceleration builders use a discrete
//! white-noise model on the highest derivative only: `Q` is `q_scale · I`
//! on the velocity (resp. acceleration) block and zero elsewhere, and
//! `R = r_scale · I`. The EMA baseline maps a window `N` to the smoothing
//! coefficient `α = 2 / (N + 1)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::step_errors;
use crate::synth::Sequence;

/// Mean and covariance of a Gaussian state estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: Matrix,
    pub cov: Matrix,
}

impl GaussianBelief {
    pub fn new(mean: Matrix, cov: Matrix) -> Result<Self> {
        let n = mean.rows();
        if mean.cols() != 1 || cov.shape() != (n, n) {
            return Err(Error::ShapeMismatch {
                op: "belief",
                left: mean.shape(),
                right: cov.shape(),
            });
        }
        Ok(GaussianBelief { mean, cov })
    }

    /// Mean = `z` lifted into a `state_dim` state (higher derivatives zero),
    /// covariance = identity.
    pub fn from_first_measurement(z: &[f64], state_dim: usize) -> Result<Self> {
        if state_dim < z.len() {
            return Err(Error::invalid("state smaller than the measurement"));
        }
        let mut mean = Matrix::zeros(state_dim, 1);
        for (i, v) in z.iter().enumerate() {
            mean[(i, 0)] = *v;
        }
        Ok(GaussianBelief {
            mean,
            cov: Matrix::identity(state_dim),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.rows()
    }
}

/// Linear-Gaussian model: `y_t = A y_{t-1} + w`, `z_t = H y_t + v`,
/// `w ~ N(0, Q)`, `v ~ N(0, R)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearKfModel {
    pub transition: Matrix,
    pub observation: Matrix,
    pub process_noise: Matrix,
    pub measurement_noise: Matrix,
}

impl LinearKfModel {
    pub fn new(
        transition: Matrix,
        observation: Matrix,
        process_noise: Matrix,
        measurement_noise: Matrix,
    ) -> Result<Self> {
        let n = transition.rows();
        let m = observation.rows();
        let checks = [
            ("transition", transition.shape(), (n, n)),
            ("observation", observation.shape(), (m, n)),
            ("process_noise", process_noise.shape(), (n, n)),
            ("measurement_noise", measurement_noise.shape(), (m, m)),
        ];
        for (op, got, want) in checks {
            if got != want {
                return Err(Error::ShapeMismatch {
                    op,
                    left: got,
                    right: want,
                });
            }
        }
        Ok(LinearKfModel {
            transition,
            observation,
            process_noise,
            measurement_noise,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.transition.rows()
    }

    pub fn measurement_dim(&self) -> usize {
        self.observation.rows()
    }
}

/// `mean' = A·mean`, `cov' = sym(A·cov·Aᵀ + Q)`.
pub fn kf_predict(belief: &GaussianBelief, model: &LinearKfModel) -> Result<GaussianBelief> {
    let a = &model.transition;
    let mean = a.matmul(&belief.mean)?;
    let cov = a
        .matmul(&belief.cov)?
        .matmul(&a.transpose())?
        .add(&model.process_noise)?
        .symmetrize();
    Ok(GaussianBelief { mean, cov })
}

/// Measurement update; also returns the gain `K`.
pub fn kf_update_with_gain(
    belief: &GaussianBelief,
    z: &[f64],
    model: &LinearKfModel,
) -> Result<(GaussianBelief, Matrix)> {
    let h = &model.observation;
    if z.len() != model.measurement_dim() {
        return Err(Error::ShapeMismatch {
            op: "kf_update measurement",
            left: (z.len(), 1),
            right: (model.measurement_dim(), 1),
        });
    }
    let hp = h.matmul(&belief.cov)?;
    let s = hp.matmul(&h.transpose())?.add(&model.measurement_noise)?;
    // K = P Hᵀ S⁻¹ = (S⁻¹ H P)ᵀ for symmetric P, S
    let gain = s.solve_spd(&hp)?.transpose();
    let innovation = Matrix::column(z).sub(&h.matmul(&belief.mean)?)?;
    let mean = belief.mean.add(&gain.matmul(&innovation)?)?;
    let n = belief.dim();
    let cov = Matrix::identity(n)
        .sub(&gain.matmul(h)?)?
        .matmul(&belief.cov)?
        .symmetrize();
    Ok((GaussianBelief { mean, cov }, gain))
}

pub fn kf_update(belief: &GaussianBelief, z: &[f64], model: &LinearKfModel) -> Result<GaussianBelief> {
    kf_update_with_gain(belief, z, model).map(|(b, _)| b)
}

/// Alternates predict and update over `measurements`, returning posteriors.
pub fn kf_filter(
    measurements: &[Vec<f64>],
    model: &LinearKfModel,
    init: &GaussianBelief,
) -> Result<Vec<GaussianBelief>> {
    let mut belief = init.clone();
    let mut out = Vec::with_capacity(measurements.len());
    for (t, z) in measurements.iter().enumerate() {
        let prior = kf_predict(&belief, model).map_err(|e| e.at_step(t))?;
        belief = kf_update(&prior, z, model).map_err(|e| e.at_step(t))?;
        out.push(belief.clone());
    }
    Ok(out)
}

fn check_kinematic_args(pose_dim: usize, dt: f64, q: f64, r: f64) -> Result<()> {
    if pose_dim == 0 || !(dt > 0.0) || !(q > 0.0) || !(r > 0.0) {
        return Err(Error::invalid(format!(
            "kinematic model needs pose_dim ≥ 1 and positive dt, q, r (got {pose_dim}, {dt}, {q}, {r})"
        )));
    }
    Ok(())
}

/// Kinematic chain of `order` derivative blocks (2 = velocity, 3 = acceleration).
fn build_kinematic(order: usize, pose_dim: usize, dt: f64, q: f64, r: f64) -> Result<LinearKfModel> {
    check_kinematic_args(pose_dim, dt, q, r)?;
    let n = order * pose_dim;
    // block (i, j), j ≥ i: dt^(j-i) / (j-i)!
    let mut a = Matrix::zeros(n, n);
    for bi in 0..order {
        for bj in bi..order {
            let k = bj - bi;
            let coef = dt.powi(k as i32) / (1..=k).product::<usize>().max(1) as f64;
            for p in 0..pose_dim {
                a[(bi * pose_dim + p, bj * pose_dim + p)] = coef;
            }
        }
    }
    let mut h = Matrix::zeros(pose_dim, n);
    for p in 0..pose_dim {
        h[(p, p)] = 1.0;
    }
    let mut qm = Matrix::zeros(n, n);
    for p in 0..pose_dim {
        let i = (order - 1) * pose_dim + p;
        qm[(i, i)] = q;
    }
    let rm = Matrix::identity(pose_dim).scale(r);
    LinearKfModel::new(a, h, qm, rm)
}

/// State `[pose; velocity]`.
pub fn build_cv_model(pose_dim: usize, dt: f64, q_scale: f64, r_scale: f64) -> Result<LinearKfModel> {
    build_kinematic(2, pose_dim, dt, q_scale, r_scale)
}

/// State `[pose; velocity; acceleration]`.
pub fn build_ca_model(pose_dim: usize, dt: f64, q_scale: f64, r_scale: f64) -> Result<LinearKfModel> {
    build_kinematic(3, pose_dim, dt, q_scale, r_scale)
}

/// Exponential smoothing with `α = 2 / (window + 1)`.
pub fn ema_filter(measurements: &[Vec<f64>], window: usize) -> Result<Vec<Vec<f64>>> {
    if window == 0 {
        return Err(Error::invalid("EMA window must be at least 1"));
    }
    let alpha = 2.0 / (window as f64 + 1.0);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(measurements.len());
    for z in measurements {
        let next = match out.last() {
            None => z.clone(),
            Some(prev) => z
                .iter()
                .zip(prev)
                .map(|(zi, pi)| alpha * zi + (1.0 - alpha) * pi)
                .collect(),
        };
        out.push(next);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    ConstantVelocity,
    ConstantAcceleration,
    Ema,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum BaselineParams {
    Kalman { q: f64, r: f64 },
    Ema { window: usize },
}

/// Runs a fixed-model baseline and returns pose estimates.
pub fn run_baseline(
    family: ModelFamily,
    params: BaselineParams,
    measurements: &[Vec<f64>],
    dt: f64,
) -> Result<Vec<Vec<f64>>> {
    match (family, params) {
        (ModelFamily::Ema, BaselineParams::Ema { window }) => ema_filter(measurements, window),
        (ModelFamily::ConstantVelocity | ModelFamily::ConstantAcceleration, BaselineParams::Kalman { q, r }) => {
            let Some(first) = measurements.first() else {
                return Ok(Vec::new());
            };
            let d = first.len();
            let model = if family == ModelFamily::ConstantVelocity {
                build_cv_model(d, dt, q, r)?
            } else {
                build_ca_model(d, dt, q, r)?
            };
            let init = GaussianBelief::from_first_measurement(first, model.state_dim())?;
            Ok(kf_filter(measurements, &model, &init)?
                .into_iter()
                .map(|b| b.mean.as_slice()[..d].to_vec())
                .collect())
        }
        _ => Err(Error::invalid(format!("{params:?} do not fit family {family:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridRow {
    pub params: BaselineParams,
    pub mean_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSearchResult {
    pub family: ModelFamily,
    pub best: BaselineParams,
    pub best_error: f64,
    /// one row per grid point, in evaluation order
    pub table: Vec<GridRow>,
}

impl GridSearchResult {
    /// `q,r,mean_error` for Kalman families, `window,mean_error` for EMA.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        match self.family {
            ModelFamily::Ema => s.push_str("window,mean_error\n"),
            _ => s.push_str("q,r,mean_error\n"),
        }
        for row in &self.table {
            match row.params {
                BaselineParams::Ema { window } => {
                    s.push_str(&format!("{window},{:.17e}\n", row.mean_error))
                }
                BaselineParams::Kalman { q, r } => {
                    s.push_str(&format!("{q:e},{r:e},{:.17e}\n", row.mean_error))
                }
            }
        }
        s
    }
}

fn sorted(grid: &[f64]) -> Vec<f64> {
    let mut g = grid.to_vec();
    g.sort_by(|a, b| a.total_cmp(b));
    g
}

/// Exhaustive search for the baseline parameters with the lowest mean
/// Euclidean error on `train`. Grids are visited in ascending order and only
/// a strictly smaller error replaces the incumbent, so ties go to the
/// smallest `q`, then `r`, then window.
pub fn grid_search(
    train: &[Sequence],
    family: ModelFamily,
    q_grid: &[f64],
    r_grid: &[f64],
    window_grid: &[usize],
    dt: f64,
) -> Result<GridSearchResult> {
    if train.is_empty() || train.iter().all(|s| s.is_empty()) {
        return Err(Error::invalid("grid search needs training data"));
    }
    let points: Vec<BaselineParams> = match family {
        ModelFamily::Ema => {
            let mut w = window_grid.to_vec();
            w.sort_unstable();
            w.into_iter().map(|window| BaselineParams::Ema { window }).collect()
        }
        _ => {
            let qs = sorted(q_grid);
            let rs = sorted(r_grid);
            qs.iter()
                .flat_map(|&q| rs.iter().map(move |&r| BaselineParams::Kalman { q, r }))
                .collect()
        }
    };
    if points.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    let mut table = Vec::with_capacity(points.len());
    for p in points {
        let estimates: Vec<Vec<Vec<f64>>> = train
            .iter()
            .map(|s| run_baseline(family, p, &s.measurements, dt))
            .collect::<Result<_>>()?;
        let errs = step_errors(
            estimates
                .iter()
                .zip(train)
                .map(|(e, s)| (&e[..], &s.truth[..])),
        )?;
        let mean_error = errs.iter().sum::<f64>() / errs.len() as f64;
        table.push(GridRow {
            params: p,
            mean_error,
        });
    }
    let mut best = 0;
    for (i, row) in table.iter().enumerate() {
        if row.mean_error < table[best].mean_error {
            best = i;
        }
    }
    Ok(GridSearchResult {
        family,
        best: table[best].params,
        best_error: table[best].mean_error,
        table,
    })
}
