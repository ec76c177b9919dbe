//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Gradients smaller than this are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

/// Which coordinates to probe.
#[derive(Clone, Copy, Debug)]
pub enum Coordinates {
    All,
    /// Up to `per_param` coordinates from every parameter (all of them when
    /// the parameter is smaller), drawn without replacement.
    Sample { per_param: usize, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub coordinates_checked: usize,
    /// Largest relative error per parameter name.
    pub per_param: Vec<(String, f64, usize)>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

fn evaluate<F>(builder: &F, params: &ParamStore) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = builder(&mut tape, params)?;
    let value = tape.value(loss);
    if value.len() != 1 {
        return Err(Error::NonScalarLoss(value.shape().to_vec()));
    }
    let v = value.item();
    if !v.is_finite() {
        return Err(Error::Degenerate(format!("non-finite loss {v} during gradient check")));
    }
    Ok(v)
}

/// Compares tape gradients against `(L(θ+ε) − L(θ−ε)) / 2ε` and returns the worst
/// relative error found.
pub fn grad_check<F>(
    builder: F,
    params: &ParamStore,
    epsilon: f64,
    coordinates: Coordinates,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = builder(&mut tape, params)?;
    let base = tape.value(loss).item();
    if !base.is_finite() {
        return Err(Error::Degenerate(format!("non-finite loss {base} during gradient check")));
    }
    let grads = tape.backward(loss)?;

    let mut rng = match coordinates {
        Coordinates::Sample { seed, .. } => ChaCha8Rng::seed_from_u64(seed),
        Coordinates::All => ChaCha8Rng::seed_from_u64(0),
    };
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        coordinates_checked: 0,
        per_param: Vec::new(),
    };
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let n = params.get(&name).unwrap().len();
        let indices: Vec<usize> = match coordinates {
            Coordinates::Sample { per_param, .. } if per_param < n => {
                let mut v = sample(&mut rng, n, per_param).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..n).collect(),
        };
        let analytic_all = grads.get(&name).map(|g| g.data().to_vec());
        let mut worst_here: (f64, usize) = (0.0, 0);
        for i in indices {
            let original = params.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = original + epsilon;
            let plus = evaluate(&builder, &probe)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = original - epsilon;
            let minus = evaluate(&builder, &probe)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let analytic = analytic_all.as_ref().map_or(0.0, |g| g[i]);
            let err = relative_error(analytic, numeric);
            report.coordinates_checked += 1;
            if err > worst_here.0 {
                worst_here = (err, i);
            }
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_param = name.clone();
                report.worst_index = i;
                report.analytic = analytic;
                report.numeric = numeric;
            }
        }
        report.per_param.push((name, worst_here.0, worst_here.1));
    }
    Ok(report)
}
