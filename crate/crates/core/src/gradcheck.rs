//! Finite-difference verification of reverse-mode gradients.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::tape::{Tape, Var};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Entries whose gradients are both below this magnitude are compared
/// absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// max over entries of `|a - n| / max(|a|, |n|, REL_FLOOR)`
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// (parameter index, flat entry index) of the worst entry
    pub worst: Option<(usize, usize)>,
    pub analytic: Vec<Matrix>,
    pub numeric: Vec<Matrix>,
}

fn eval<F>(f: &F, params: &[Matrix]) -> Result<f64>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.shape(out) != (1, 1) {
        return Err(Error::invalid("gradient check needs a scalar function"));
    }
    let v = tape.value(out)[(0, 0)];
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "gradient check loss".into(),
            index: 0,
        });
    }
    Ok(v)
}

/// Compares the tape gradient of the scalar function `f` against central
/// finite differences at `params`.
pub fn gradient_check<F>(f: F, params: &[Matrix], tolerance: f64) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&mut Tape<'t>, &[Var]) -> Result<Var>,
{
    let analytic = {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.iter().map(|p| tape.param(p)).collect();
        let out = f(&mut tape, &vars)?;
        let grads = tape.backward(out)?;
        vars.iter().map(|v| grads.wrt(&tape, *v)).collect::<Vec<_>>()
    };

    let mut work: Vec<Matrix> = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    for pi in 0..params.len() {
        let mut g = Matrix::zeros(params[pi].rows(), params[pi].cols());
        for e in 0..params[pi].len() {
            let orig = work[pi].as_slice()[e];
            work[pi].as_mut_slice()[e] = orig + FD_STEP;
            let plus = eval(&f, &work)?;
            work[pi].as_mut_slice()[e] = orig - FD_STEP;
            let minus = eval(&f, &work)?;
            work[pi].as_mut_slice()[e] = orig;
            g.as_mut_slice()[e] = (plus - minus) / (2.0 * FD_STEP);
        }
        numeric.push(g);
    }

    let mut max_rel_error = 0.0;
    let mut worst = None;
    for (pi, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for (e, (x, y)) in a.as_slice().iter().zip(n.as_slice()).enumerate() {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(REL_FLOOR);
            if rel > max_rel_error || worst.is_none() {
                max_rel_error = rel;
                worst = Some((pi, e));
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
        worst,
        analytic,
        numeric,
    })
}
