use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::params::{Gradients, ParamGroup, ParamStore};

/// Heavy-ball SGD: `v ← μ·v + g + λ·p`, `p ← p − lr·v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Rescales the whole gradient when its norm exceeds this.
    pub max_grad_norm: Option<f64>,
}

impl Default for Sgd {
    fn default() -> Self {
        Self {
            momentum: 0.9,
            weight_decay: 0.0,
            max_grad_norm: None,
        }
    }
}

/// Momentum buffers, laid out like the parameter store.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub velocity: Vec<Vec<f64>>,
    pub steps: u64,
}

impl OptimizerState {
    pub fn new(store: &ParamStore) -> Self {
        Self {
            velocity: store.entries().iter().map(|e| vec![0.0; e.values.len()]).collect(),
            steps: 0,
        }
    }
}

impl Sgd {
    /// Applies one update. `lr` returns the rate for a group, or `None` to
    /// freeze it.
    pub fn step(
        &self,
        store: &mut ParamStore,
        grads: &Gradients,
        state: &mut OptimizerState,
        lr: impl Fn(ParamGroup) -> Option<f64>,
    ) {
        let clip = match self.max_grad_norm {
            Some(max) => {
                let norm = grads.norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(rate) = lr(store.entry(id).group) else {
                continue;
            };
            let g = grads.get(id);
            let v = &mut state.velocity[id.index()];
            let p = store.values_mut(id);
            for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                let d = clip * gi + self.weight_decay * *pi;
                *vi = self.momentum * *vi + d;
                *pi -= rate * *vi;
            }
        }
        state.steps += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{Init, Modality};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn frozen_groups_do_not_move() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let a = store.register("a".into(), ParamGroup::Encoder(Modality::Rgb), vec![3], 1, Init::Relu, &mut rng);
        let b = store.register("b".into(), ParamGroup::Decoder, vec![2], 1, Init::Relu, &mut rng);
        let before = store.clone();
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(a).iter_mut().for_each(|g| *g = 1.0);
        grads.get_mut(b).iter_mut().for_each(|g| *g = 1.0);
        let mut state = OptimizerState::new(&store);
        let sgd = Sgd::default();
        sgd.step(&mut store, &grads, &mut state, |g| (g == ParamGroup::Decoder).then_some(0.1));
        assert_eq!(store.values(a), before.values(a));
        for (x, y) in store.values(b).iter().zip(before.values(b)) {
            assert!((y - x - 0.1).abs() < 1e-15);
        }
        sgd.step(&mut store, &grads, &mut state, |g| (g == ParamGroup::Decoder).then_some(0.1));
        // second step uses v = 0.9 + 1
        for (x, y) in store.values(b).iter().zip(before.values(b)) {
            assert!((y - x - 0.1 - 0.19).abs() < 1e-12);
        }
        assert_eq!(state.steps, 2);
    }
}
