use crate::error::{Error, Result};

use super::scalar::Scalar;
use super::tensor::Tensor;

/// Handle to a parameter inside a [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A trainable (or frozen) tensor with its gradient and optimizer slots.
#[derive(Debug, Clone)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub gradient: Tensor<T>,
    pub trainable: bool,
    first_moment: Vec<T>,
    second_moment: Vec<T>,
}

impl<T: Scalar> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>, trainable: bool) -> Self {
        let gradient = Tensor::zeros(value.shape());
        let n = value.len();
        Parameter {
            name: name.into(),
            value,
            gradient,
            trainable,
            first_moment: vec![T::zero(); n],
            second_moment: vec![T::zero(); n],
        }
    }
}

/// Owning collection of parameters addressed by [`ParamId`].
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T> {
    params: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>, trainable: bool) -> ParamId {
        self.params.push(Parameter::new(name, value, trainable));
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.gradient.fill(T::zero());
        }
    }

    /// Snapshot of all parameter values (used for best-epoch restore).
    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, values: Vec<Tensor<T>>) {
        for (p, v) in self.params.iter_mut().zip(values) {
            p.value = v;
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    fn check_gradients(&self) -> Result<()> {
        for p in self.params.iter().filter(|p| p.trainable) {
            if !p.gradient.all_finite() {
                return Err(Error::NonFinite(format!("gradient of parameter '{}'", p.name)));
            }
        }
        Ok(())
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// One bias-corrected Adam update over every trainable parameter.
/// `step_count` is 1-based.
pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, adam: &Adam, step_count: u64) -> Result<()> {
    if step_count == 0 {
        return Err(Error::InvalidArgument("adam step_count must be >= 1".into()));
    }
    params.check_gradients()?;
    let b1 = T::from_f64(adam.beta1);
    let b2 = T::from_f64(adam.beta2);
    let one = T::one();
    let correction1 = 1.0 - adam.beta1.powf(step_count as f64);
    let correction2 = 1.0 - adam.beta2.powf(step_count as f64);
    let lr_t = T::from_f64(adam.learning_rate * correction2.sqrt() / correction1);
    let eps_hat = T::from_f64(adam.epsilon);
    for p in params.params.iter_mut().filter(|p| p.trainable) {
        let grad = p.gradient.data();
        let value = p.value.data_mut();
        for i in 0..grad.len() {
            let g = grad[i];
            let m = b1 * p.first_moment[i] + (one - b1) * g;
            let v = b2 * p.second_moment[i] + (one - b2) * g * g;
            p.first_moment[i] = m;
            p.second_moment[i] = v;
            value[i] -= lr_t * m / (v.sqrt() + eps_hat);
        }
    }
    Ok(())
}

/// Plain gradient descent.
pub fn sgd_step<T: Scalar>(params: &mut ParamSet<T>, learning_rate: f64) -> Result<()> {
    params.check_gradients()?;
    let lr = T::from_f64(learning_rate);
    for p in params.params.iter_mut().filter(|p| p.trainable) {
        for (v, g) in p.value.data_mut().iter_mut().zip(p.gradient.data()) {
            *v -= lr * *g;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: Vec<f64>, trainable: bool) -> (ParamSet<f64>, ParamId) {
        let mut ps = ParamSet::new();
        let n = value.len();
        let id = ps.add("w", Tensor::new(vec![n], value).unwrap(), trainable);
        (ps, id)
    }

    #[test]
    fn zero_gradient_leaves_value_unchanged() {
        let (mut ps, id) = single(vec![0.3, -1.2], true);
        for step in 1..=5 {
            adam_step(&mut ps, &Adam::default(), step).unwrap();
        }
        assert_eq!(ps.value(id).data(), &[0.3, -1.2]);
    }

    #[test]
    fn frozen_parameter_untouched() {
        let (mut ps, id) = single(vec![1.0], false);
        ps.get_mut(id).gradient.data_mut()[0] = 5.0;
        adam_step(&mut ps, &Adam::default(), 1).unwrap();
        sgd_step(&mut ps, 0.1).unwrap();
        assert_eq!(ps.value(id).data(), &[1.0]);
    }

    #[test]
    fn constant_gradient_update_approaches_learning_rate() {
        // With a constant gradient g, m_t/(1-b1^t) = g and v_t/(1-b2^t) = g^2
        // exactly, so every step moves by lr * |g| / (|g| + eps_hat).
        let adam = Adam {
            epsilon: 1e-12,
            ..Adam::default()
        };
        let (mut ps, id) = single(vec![0.0, 0.0], true);
        let grads = [0.7, -3.0];
        let mut prev = ps.value(id).data().to_vec();
        for step in 1..=200 {
            ps.get_mut(id).gradient.data_mut().copy_from_slice(&grads);
            adam_step(&mut ps, &adam, step).unwrap();
            let now = ps.value(id).data().to_vec();
            for k in 0..2 {
                let delta = now[k] - prev[k];
                assert!((delta + adam.learning_rate * grads[k].signum()).abs() < 1e-9);
            }
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let (mut ps, id) = single(vec![1.0], true);
        ps.get_mut(id).gradient.data_mut()[0] = f64::NAN;
        let err = adam_step(&mut ps, &Adam::default(), 1).unwrap_err();
        assert!(err.to_string().contains("'w'"));
    }
}
