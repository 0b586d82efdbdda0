//! Loss, SGD with momentum, and the step learning-rate schedule.

use indexmap::IndexMap;

use crate::autograd::Tape;
use crate::backbone::ParamStore;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Mean negative log-likelihood of `labels` under `softmax(logits)`.
pub fn cross_entropy<T: Element>(logits: &Tensor<T>, labels: &[usize]) -> Result<T> {
    let tape = Tape::new();
    let loss = tape.constant(logits.clone()).cross_entropy(labels)?;
    let value = loss.value();
    Ok(value.data()[0])
}

/// `lr = base · 0.1^⌊epoch / drop_every⌋`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSchedule {
    pub base: f64,
    pub drop_every: usize,
}

impl StepSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        let drops = epoch / self.drop_every.max(1);
        // dividing by an exact power of ten rounds once instead of per factor
        self.base / 10f64.powi(drops as i32)
    }
}

/// Momentum buffers plus optimizer hyperparameters.
#[derive(Debug, Clone)]
pub struct OptimState<T: Element = f32> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: IndexMap<String, Tensor<T>>,
}

impl<T: Element> OptimState<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid("optimizer", format!("learning rate must be positive, got {lr}")));
        }
        Ok(Self {
            lr,
            momentum,
            weight_decay,
            buffers: IndexMap::new(),
        })
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.get(name)
    }
}

/// One SGD step over every trainable parameter:
///
/// ```text
/// v ← μ·v + g + λ·θ
/// θ ← θ − lr·v
/// ```
///
/// `λ` is zero for colla-factors and batch-norm parameters.
pub fn sgd_step<T: Element>(
    store: &mut ParamStore<T>,
    grads: &IndexMap<String, Tensor<T>>,
    state: &mut OptimState<T>,
) -> Result<()> {
    let (mu, lr) = (T::of(state.momentum), T::of(state.lr));
    for (name, param) in store.iter_mut().filter(|(_, p)| p.role.trainable()) {
        let grad = grads
            .get(name)
            .ok_or_else(|| Error::MissingGradient { name: name.to_string() })?;
        if grad.shape() != param.value.shape() {
            return Err(Error::shape(
                "sgd_step",
                format!("{name}: gradient {:?} vs parameter {:?}", grad.shape(), param.value.shape()),
            ));
        }
        let wd = T::of(if param.role.decays() { state.weight_decay } else { 0.0 });
        let buffer = state
            .buffers
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(grad.shape().to_vec()).expect("valid shape"));
        for ((v, &g), theta) in buffer
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(param.value.data_mut())
        {
            *v = mu * *v + g + wd * *theta;
            *theta -= lr * *v;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::Role;

    fn store(role: Role, value: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("p", Tensor::from_vec([2], vec![value, -value]).unwrap(), role).unwrap();
        s
    }

    fn grads(g: [f64; 2]) -> IndexMap<String, Tensor<f64>> {
        IndexMap::from([("p".to_string(), Tensor::from_vec([2], g.to_vec()).unwrap())])
    }

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::<f64>::zeros([3, 10]).unwrap();
        let loss = cross_entropy(&logits, &[0, 5, 9]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_logit() {
        let mut logits = Tensor::<f64>::zeros([1, 4]).unwrap();
        logits.data_mut()[2] = 50.0;
        assert!(cross_entropy(&logits, &[2]).unwrap() < 1e-9);
    }

    #[test]
    fn out_of_range_label_rejected() {
        let logits = Tensor::<f64>::zeros([1, 4]).unwrap();
        assert!(cross_entropy(&logits, &[4]).is_err());
    }

    #[test]
    fn vanilla_step_subtracts_gradient() {
        let mut s = store(Role::Weight, 1.0);
        let mut st = OptimState::new(1.0, 0.0, 0.0).unwrap();
        sgd_step(&mut s, &grads([0.25, -0.5]), &mut st).unwrap();
        assert_eq!(s.value("p").unwrap().data(), &[0.75, -0.5]);
    }

    #[test]
    fn two_momentum_steps() {
        let mut s = store(Role::Weight, 0.0);
        let mut st = OptimState::new(1.0, 0.9, 0.0).unwrap();
        let g = 0.5;
        sgd_step(&mut s, &grads([g, g]), &mut st).unwrap();
        sgd_step(&mut s, &grads([g, g]), &mut st).unwrap();
        let expected = -(g + 1.9 * g);
        assert!((s.value("p").unwrap().data()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn colla_factor_skips_decay() {
        let mut s = store(Role::CollaFactor, 0.3);
        let mut st = OptimState::new(0.1, 0.9, 0.0005).unwrap();
        sgd_step(&mut s, &grads([0.0, 0.0]), &mut st).unwrap();
        assert_eq!(s.value("p").unwrap().data(), &[0.3, -0.3]);

        let mut w = store(Role::Weight, 0.3);
        sgd_step(&mut w, &grads([0.0, 0.0]), &mut OptimState::new(0.1, 0.9, 0.0005).unwrap()).unwrap();
        assert!(w.value("p").unwrap().data()[0] < 0.3);
    }

    #[test]
    fn missing_gradient_rejected() {
        let mut s = store(Role::Weight, 1.0);
        let mut st = OptimState::new(1.0, 0.0, 0.0).unwrap();
        let err = sgd_step(&mut s, &IndexMap::new(), &mut st).unwrap_err();
        assert!(matches!(err, Error::MissingGradient { .. }));
    }

    #[test]
    fn schedule_examples() {
        let cifar = StepSchedule { base: 0.001, drop_every: 50 };
        assert_eq!(cifar.lr(0), 0.001);
        assert_eq!(cifar.lr(49), 0.001);
        assert_eq!(cifar.lr(50), 0.0001);
        assert_eq!(cifar.lr(100), 0.00001);
        let fast = StepSchedule { base: 0.1, drop_every: 5 };
        assert!((fast.lr(12) - 0.001).abs() < 1e-18);
    }

    #[test]
    fn nonpositive_lr_rejected() {
        assert!(OptimState::<f32>::new(0.0, 0.9, 0.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn schedule_is_a_staircase(base in 1e-5f64..1.0, drop_every in 1usize..60, epoch in 0usize..300) {
            let s = StepSchedule { base, drop_every };
            let k = (epoch / drop_every) as i32;
            proptest::prop_assert!((s.lr(epoch) / (base / 10f64.powi(k)) - 1.0).abs() < 1e-12);
            proptest::prop_assert!(s.lr(epoch + 1) <= s.lr(epoch));
            let start = epoch - epoch % drop_every;
            proptest::prop_assert_eq!(s.lr(start), s.lr(epoch));
        }
    }
}
