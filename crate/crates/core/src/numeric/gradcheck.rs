//! Central finite differences, used as an independent check on [`Tape::backward`].
//!
//! [`Tape::backward`]: crate::numeric::Tape::backward

use std::collections::BTreeMap;

use crate::error::Result;
use crate::numeric::{Matrix, ParamStore};

pub type Gradients = BTreeMap<String, Matrix>;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// `(f(θ+ε) − f(θ−ε)) / 2ε` for every scalar of every parameter.
pub fn finite_difference_grad<F>(mut loss_fn: F, params: &ParamStore, epsilon: f64) -> Result<Gradients>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut work = params.clone();
    let mut out = Gradients::new();
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let base = params.value(&name)?.clone();
        let mut est = Matrix::zeros(base.rows(), base.cols());
        for k in 0..base.data().len() {
            let orig = base.data()[k];
            work.value_mut(&name)?.data_mut()[k] = orig + epsilon;
            let plus = loss_fn(&work)?;
            work.value_mut(&name)?.data_mut()[k] = orig - epsilon;
            let minus = loss_fn(&work)?;
            work.value_mut(&name)?.data_mut()[k] = orig;
            est.data_mut()[k] = (plus - minus) / (2.0 * epsilon);
        }
        out.insert(name, est);
    }
    Ok(out)
}

/// Largest `|analytic − numeric| / max(1, |analytic|)` per parameter.
pub fn max_relative_errors(analytic: &ParamStore, numeric: &Gradients) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for (name, est) in numeric {
        let grad = analytic.grad(name)?;
        let worst = grad
            .data()
            .iter()
            .zip(est.data())
            .map(|(&a, &n)| (a - n).abs() / a.abs().max(1.0))
            .fold(0.0, f64::max);
        out.insert(name.clone(), worst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::matrix::stable_sigmoid;

    fn one(name: &str, v: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert(name, Matrix::scalar(v).unwrap()).unwrap();
        p
    }

    #[test]
    fn quadratic_is_exact() {
        let p = one("t", 3.0);
        let g = finite_difference_grad(|s| Ok(s.value("t")?.data()[0].powi(2)), &p, 1e-5).unwrap();
        assert!((g["t"].data()[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn constant_has_zero_gradient() {
        let mut p = one("t", 3.0);
        p.insert("u", Matrix::filled(2, 3, 1.5)).unwrap();
        let g = finite_difference_grad(|_| Ok(4.2), &p, 1e-5).unwrap();
        assert!(g.values().all(|m| m.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn sigmoid_slope_at_zero() {
        let p = one("t", 0.0);
        let g = finite_difference_grad(|s| Ok(stable_sigmoid(s.value("t")?.data()[0])), &p, 1e-5).unwrap();
        assert!((g["t"].data()[0] - 0.25).abs() < 1e-9);
    }
}
