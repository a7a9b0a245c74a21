//! Adam with bias correction.

use crate::autodiff::{Grads, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like every parameter of `store`; β1 = 0.9,
    /// β2 = 0.999, ε = 1e-8.
    pub fn new(store: &ParamStore<T>, learning_rate: f64) -> Self {
        let zeros: Vec<Tensor<T>> = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &Tensor<T> {
        &self.first[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor<T> {
        &self.second[index]
    }
}

/// One in-place Adam update of every parameter that received a gradient.
///
/// Parameters without a gradient (not reachable from the loss) are skipped
/// and their moments left untouched.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, grads: &Grads<T>, state: &mut AdamState<T>) -> Result<()> {
    if grads.len() != store.len() || state.first.len() != store.len() {
        return Err(Error::Shape(format!(
            "adam_step: {} parameters, {} gradients, {} moment slots",
            store.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for id in store.ids() {
        if let Some(g) = grads.get(id) {
            let shape = store.value(id).shape();
            if g.shape() != shape || state.first[id.index()].shape() != shape {
                return Err(Error::Shape(format!(
                    "adam_step: parameter {:?} has shape {shape:?}, gradient {:?}",
                    store.name(id),
                    g.shape()
                )));
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let (one_m_b1, one_m_b2) = (T::one() - b1, T::one() - b2);
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    let step_size = T::of(state.learning_rate / bias1);
    let inv_sqrt_bias2 = T::of(1.0 / bias2.sqrt());
    let eps = T::of(state.epsilon);

    for id in store.ids() {
        let Some(g) = grads.get(id) else { continue };
        let i = id.index();
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        let p = store.value_mut(id).data_mut();
        for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
            *m = b1 * *m + one_m_b1 * g;
            *v = b2 * *v + one_m_b2 * g * g;
            // p -= lr * m_hat / (sqrt(v_hat) + eps)
            *p = *p - step_size * *m / (v.sqrt() * inv_sqrt_bias2 + eps);
        }
    }
    Ok(())
}
