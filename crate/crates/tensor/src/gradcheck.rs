//! Central finite-difference checking of tape gradients.

use crate::error::{GradCheckError, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tape::{Tape, Var};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Coordinates checked per parameter; `0` checks all of them.
    pub max_coords: usize,
    /// Lower bound on the relative-error denominator so that gradients that
    /// are zero up to round-off do not blow the ratio up.
    pub floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-4,
            max_coords: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(parameter, coordinate, analytic, numeric)` of the worst coordinate.
    pub worst: Option<(String, usize, f64, f64)>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval<F>(store: &ParamStore, f: &mut F) -> Result<(f64, bool), GradCheckError>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let loss = f(&mut tape, &vars)?;
    let value = tape.value(loss);
    if value.len() != 1 {
        return Err(GradCheckError::NotScalar(value.shape().to_vec()));
    }
    Ok((value.item(), tape.is_stochastic()))
}

/// Compares the tape gradient of the scalar returned by `f` against central
/// differences for every parameter of `store`. `f` receives the bound
/// parameter vars indexed by [`ParamId`].
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut f: F,
    config: &GradCheckConfig,
) -> Result<GradCheckReport, GradCheckError>
where
    F: FnMut(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars = store.bind(&mut tape);
    let loss = f(&mut tape, &vars)?;
    if tape.is_stochastic() {
        return Err(GradCheckError::Stochastic);
    }
    if tape.value(loss).len() != 1 {
        return Err(GradCheckError::NotScalar(tape.value(loss).shape().to_vec()));
    }
    let grads = tape.backward(loss)?;
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| {
            grads
                .get(vars[id.0])
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; store.value(id).len()])
        })
        .collect();
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let n = store.value(id).len();
        let coords: Vec<usize> = if config.max_coords == 0 || n <= config.max_coords {
            (0..n).collect()
        } else {
            (0..config.max_coords).map(|i| i * n / config.max_coords).collect()
        };
        for c in coords {
            let orig = store.value(id).data()[c];
            store.value_mut(id).data_mut()[c] = orig + config.step;
            let (plus, _) = eval(store, &mut f)?;
            store.value_mut(id).data_mut()[c] = orig - config.step;
            let (minus, _) = eval(store, &mut f)?;
            store.value_mut(id).data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * config.step);
            let a = analytic[id.0][c];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(GradCheckError::NonFinite {
                    param: store.name(id).to_string(),
                });
            }
            let err = relative_error(a, numeric, config.floor);
            report.checked += 1;
            if report.worst.is_none() || err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst = Some((store.name(id).to_string(), c, a, numeric));
            }
        }
    }
    Ok(report)
}
