use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction. Moments are kept per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || {
            store
                .ids()
                .map(|id| {
                    let [r, c] = store.get(id).shape();
                    Tensor::zeros(r, c)
                })
                .collect::<Vec<_>>()
        };
        Adam {
            lr,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, id: ParamId) -> &Tensor {
        &self.m[id.index()]
    }

    pub fn second_moment(&self, id: ParamId) -> &Tensor {
        &self.v[id.index()]
    }

    /// One update. `grads[i]` is the gradient of parameter `i`; `None`
    /// counts as zero. Frozen rows are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Tensor>]) -> Result<()> {
        if grads.len() != self.m.len() || store.len() != self.m.len() {
            return Err(Error::dim(format!(
                "optimizer tracks {} parameters, got {} gradients for {}",
                self.m.len(),
                grads.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        let ids: Vec<ParamId> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            if let Some(g) = &grads[i] {
                if g.shape() != m.shape() {
                    return Err(Error::dim(format!(
                        "gradient {:?} for parameter {} of shape {:?}",
                        g.shape(),
                        store.name(id),
                        m.shape()
                    )));
                }
            }
            let frozen = store.frozen_row(id);
            let cols = m.cols();
            let p = store.get_mut(id);
            for k in 0..p.len() {
                let g = grads[i].as_ref().map_or(0.0, |g| g.data()[k]);
                let mk = BETA1 * m.data()[k] + (1.0 - BETA1) * g;
                let vk = BETA2 * v.data()[k] + (1.0 - BETA2) * g * g;
                m.data_mut()[k] = mk;
                v.data_mut()[k] = vk;
                if frozen == Some(k / cols) {
                    continue;
                }
                p.data_mut()[k] -= self.lr * (mk / c1) / ((vk / c2).sqrt() + EPSILON);
            }
        }
        Ok(())
    }
}

/// Global L2 norm over all gradients.
pub fn global_norm(grads: &[Option<Tensor>]) -> f64 {
    grads
        .iter()
        .flatten()
        .map(Tensor::norm_sq)
        .sum::<f64>()
        .sqrt()
}

/// Rescales every gradient by `max_norm / ‖g‖` when the global norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor>], max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::config(format!(
            "clip norm {max_norm} must be positive"
        )));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            for x in g.data_mut() {
                *x *= scale;
            }
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_store(x: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", Tensor::scalar(x));
        s
    }

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut store = scalar_store(1.5);
        let mut adam = Adam::new(&store, 0.1);
        adam.step(&mut store, &[Some(Tensor::scalar(2.0))]).unwrap();
        let after_one = store.get(ParamId(0)).item().unwrap();
        let m1 = adam.first_moment(ParamId(0)).item().unwrap();
        adam.step(&mut store, &[Some(Tensor::scalar(0.0))]).unwrap();
        let m2 = adam.first_moment(ParamId(0)).item().unwrap();
        assert!((m2 - BETA1 * m1).abs() < 1e-15);
        // a zero gradient from fresh moments is an exact no-op
        let mut fresh = scalar_store(1.5);
        let mut adam = Adam::new(&fresh, 0.1);
        adam.step(&mut fresh, &[None]).unwrap();
        assert_eq!(fresh.get(ParamId(0)).item().unwrap(), 1.5);
        assert!(after_one < 1.5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = scalar_store(0.0);
        let mut adam = Adam::new(&store, 3e-4);
        adam.step(&mut store, &[Some(Tensor::scalar(1.0))]).unwrap();
        // m̂ = 1, v̂ = 1
        let want = -3e-4 / (1.0 + EPSILON);
        assert!((store.get(ParamId(0)).item().unwrap() - want).abs() < 1e-18);
    }

    #[test]
    fn frozen_rows_never_move() {
        let mut store = ParamStore::new();
        let id = store.add("t", Tensor::zeros(2, 2));
        store.freeze_row(id, 0);
        let mut adam = Adam::new(&store, 0.1);
        for _ in 0..3 {
            adam.step(&mut store, &[Some(Tensor::filled(2, 2, 1.0))])
                .unwrap();
        }
        assert_eq!(store.get(id).row_slice(0), &[0.0, 0.0]);
        assert!(store.get(id).row_slice(1).iter().all(|&x| x < 0.0));
    }

    #[test]
    fn trajectories_are_deterministic() {
        let run = || {
            let mut store = scalar_store(2.0);
            let mut adam = Adam::new(&store, 0.05);
            for k in 0..20 {
                let x = store.get(ParamId(0)).item().unwrap();
                adam.step(
                    &mut store,
                    &[Some(Tensor::scalar(2.0 * x + k as f64 * 0.01))],
                )
                .unwrap();
            }
            store.get(ParamId(0)).item().unwrap()
        };
        assert_eq!(run().to_bits(), run().to_bits());
    }

    #[test]
    fn clipping_examples() {
        let mut g = vec![Some(Tensor::row(vec![0.3, 0.4]))];
        assert_eq!(clip_global_norm(&mut g, 1.0).unwrap(), 0.5);
        assert_eq!(g[0].as_ref().unwrap().data(), &[0.3, 0.4]);
        let mut g = vec![
            Some(Tensor::row(vec![3.0])),
            None,
            Some(Tensor::row(vec![4.0])),
        ];
        assert_eq!(clip_global_norm(&mut g, 1.0).unwrap(), 5.0);
        assert!((g[0].as_ref().unwrap().data()[0] - 0.6).abs() < 1e-15);
        assert!((g[2].as_ref().unwrap().data()[0] - 0.8).abs() < 1e-15);
        assert!(clip_global_norm(&mut g, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn clipped_norm_is_bounded(
            xs in proptest::collection::vec(-100.0f64..100.0, 1..20),
            max in 0.1f64..10.0,
        ) {
            let mut g = vec![Some(Tensor::row(xs))];
            clip_global_norm(&mut g, max).unwrap();
            prop_assert!(global_norm(&g) <= max + 1e-12);
        }
    }
}
