use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamStore};

pub const DEFAULT_LEARNING_RATE: f64 = 0.01;

/// Moment estimates and hyper-parameters for Adam.
///
/// The state tracks an explicit set of parameter names; parameters outside
/// that set are left untouched by [`adam_step`], which is how a frozen
/// sub-model is expressed.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step_count: u64,
    first_moment: BTreeMap<String, Matrix>,
    second_moment: BTreeMap<String, Matrix>,
}

impl AdamState {
    /// State covering every parameter currently in `params`.
    pub fn new(params: &ParamStore, learning_rate: f64) -> Self {
        Self::for_names(params, params.names(), learning_rate)
    }

    /// State covering only the named parameters. Unknown names are kept and
    /// reported by the first [`adam_step`].
    pub fn for_names<'a>(
        params: &ParamStore,
        names: impl IntoIterator<Item = &'a str>,
        learning_rate: f64,
    ) -> Self {
        let mut first_moment = BTreeMap::new();
        let mut second_moment = BTreeMap::new();
        for name in names {
            let (r, c) = params.value(name).map(Matrix::shape).unwrap_or((0, 0));
            first_moment.insert(name.to_string(), Matrix::zeros(r, c));
            second_moment.insert(name.to_string(), Matrix::zeros(r, c));
        }
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment,
            second_moment,
        }
    }

    pub fn first_moment(&self, name: &str) -> Option<&Matrix> {
        self.first_moment.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Matrix> {
        self.second_moment.get(name)
    }
}

/// One bias-corrected Adam update of every tracked parameter from the
/// gradients currently held in `params`.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    for name in state.first_moment.keys() {
        let grad = params
            .grad(name)
            .map_err(|_| Error::MissingGradient(name.clone()))?;
        if grad.shape() != state.first_moment[name].shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: grad.shape(),
                right: state.first_moment[name].shape(),
            });
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.epsilon, state.learning_rate);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (name, value, grad) in params.iter_mut_with_grad() {
        let (Some(m), Some(v)) = (
            state.first_moment.get_mut(name),
            state.second_moment.get_mut(name),
        ) else {
            continue;
        };
        for (((w, &g), mi), vi) in value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = b1 * *mi + (1.0 - b1) * g;
            *vi = b2 * *vi + (1.0 - b2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        if value.data().iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("adam_step"));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(name: &str, value: f64, grad: f64) -> ParamStore {
        let mut p = ParamStore::new();
        p.insert(name, Matrix::scalar(value).unwrap()).unwrap();
        p.accumulate_grad(name, &Matrix::scalar(grad).unwrap()).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_store("theta", 1.0, 1.0);
        let mut s = AdamState::new(&p, 0.01);
        adam_step(&mut p, &mut s).unwrap();
        // m_hat = 1, v_hat = 1 => step = lr / (1 + eps)
        let expected = 1.0 - 0.01 / (1.0 + 1e-8);
        assert!((p.value("theta").unwrap().data()[0] - expected).abs() < 1e-15);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut p = scalar_store("theta", 0.37, 0.0);
        let mut s = AdamState::new(&p, 0.01);
        for _ in 0..5 {
            adam_step(&mut p, &mut s).unwrap();
        }
        assert_eq!(p.value("theta").unwrap().data(), &[0.37]);
        assert_eq!(s.step_count, 5);
    }

    #[test]
    fn parameters_update_independently() {
        let mut joint = ParamStore::new();
        joint.insert("a", Matrix::scalar(1.0).unwrap()).unwrap();
        joint.insert("b", Matrix::scalar(-2.0).unwrap()).unwrap();
        let mut single_a = scalar_store("a", 1.0, 0.3);
        let mut single_b = scalar_store("b", -2.0, -5.0);
        let mut sj = AdamState::new(&joint, 0.01);
        let mut sa = AdamState::new(&single_a, 0.01);
        let mut sb = AdamState::new(&single_b, 0.01);
        for _ in 0..3 {
            joint.zero_grads();
            joint.accumulate_grad("a", &Matrix::scalar(0.3).unwrap()).unwrap();
            joint.accumulate_grad("b", &Matrix::scalar(-5.0).unwrap()).unwrap();
            adam_step(&mut joint, &mut sj).unwrap();
            adam_step(&mut single_a, &mut sa).unwrap();
            adam_step(&mut single_b, &mut sb).unwrap();
        }
        assert_eq!(joint.value("a").unwrap(), single_a.value("a").unwrap());
        assert_eq!(joint.value("b").unwrap(), single_b.value("b").unwrap());
    }

    #[test]
    fn untracked_parameters_stay_frozen() {
        let mut p = scalar_store("a", 1.0, 1.0);
        p.insert("b", Matrix::scalar(1.0).unwrap()).unwrap();
        p.accumulate_grad("b", &Matrix::scalar(1.0).unwrap()).unwrap();
        let mut s = AdamState::for_names(&p, ["a"], 0.01);
        adam_step(&mut p, &mut s).unwrap();
        assert_eq!(p.value("b").unwrap().data(), &[1.0]);
        assert_ne!(p.value("a").unwrap().data(), &[1.0]);
    }

    #[test]
    fn missing_parameter_is_an_error() {
        let mut p = scalar_store("a", 1.0, 1.0);
        let mut s = AdamState::for_names(&p, ["a", "ghost"], 0.01);
        assert_eq!(
            adam_step(&mut p, &mut s),
            Err(Error::MissingGradient("ghost".into()))
        );
    }
}
