//! Named parameter storage shared by the model layers, the optimizers, and
//! the checkpoint format. A store is exclusively owned by one trainer at a
//! time; snapshots are plain `Vec<f32>` copies, cheap to move across threads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which learning-rate track a parameter follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Linear-term parameters, always trainable.
    Base,
    /// Quadratic-term parameters, frozen until the unfreeze epoch.
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

struct Slot {
    name: String,
    tensor: Tensor,
    group: ParamGroup,
    trainable: bool,
}

/// Values for re-seeding a store: one flat buffer per parameter, in
/// registration order.
pub type Snapshot = Vec<Vec<f32>>;

#[derive(Default)]
pub struct ParamStore {
    slots: Vec<Slot>,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore { slots: Vec::new() }
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        data: Vec<f32>,
        shape: &[usize],
        group: ParamGroup,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.slots.iter().any(|s| s.name == name) {
            return Err(Error::contract(
                "param_store",
                format!("duplicate parameter name {name:?}"),
            ));
        }
        let tensor = Tensor::param(data, shape)?;
        self.slots.push(Slot {
            name,
            tensor,
            group,
            trainable: group == ParamGroup::Base,
        });
        Ok(ParamId(self.slots.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Tensor handle for use in a forward pass.
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.slots[id.0].tensor
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.slots[id.0].name
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.slots[id.0].group
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.slots.iter().position(|s| s.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.slots.len()).map(ParamId)
    }

    pub fn set_quadratic_trainable(&mut self, trainable: bool) {
        for slot in &mut self.slots {
            if slot.group == ParamGroup::Quadratic {
                slot.trainable = trainable;
            }
        }
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.slots[id.0].trainable
    }

    pub fn quadratic_trainable(&self) -> bool {
        self.slots
            .iter()
            .any(|s| s.group == ParamGroup::Quadratic && s.trainable)
    }

    /// Replace a parameter's value, preserving shape. The old tensor handle
    /// stays valid for graphs that already captured it.
    pub fn set_data(&mut self, id: ParamId, data: Vec<f32>) {
        let slot = &mut self.slots[id.0];
        debug_assert_eq!(data.len(), slot.tensor.numel());
        slot.tensor = Tensor::raw(data, slot.tensor.shape().to_vec(), true);
    }

    pub fn zero_grads(&self) {
        for slot in &self.slots {
            slot.tensor.zero_grad();
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        self.slots.iter().map(|s| s.tensor.data().to_vec()).collect()
    }

    pub fn load_snapshot(&mut self, snap: &Snapshot) {
        assert_eq!(snap.len(), self.slots.len(), "snapshot arity mismatch");
        for (i, data) in snap.iter().enumerate() {
            self.set_data(ParamId(i), data.clone());
        }
    }

    /// (total, base, quadratic) scalar parameter counts.
    pub fn count_by_group(&self) -> (usize, usize, usize) {
        let mut base = 0;
        let mut quad = 0;
        for slot in &self.slots {
            match slot.group {
                ParamGroup::Base => base += slot.tensor.numel(),
                ParamGroup::Quadratic => quad += slot.tensor.numel(),
            }
        }
        (base + quad, base, quad)
    }

    pub fn iter_named(&self) -> impl Iterator<Item = (&str, &Tensor)> + '_ {
        self.slots.iter().map(|s| (s.name.as_str(), &s.tensor))
    }
}

/// How to draw initial values for the base (linear-term) parameters.
#[derive(Debug, Clone, Copy)]
pub enum InitSpec {
    /// Normal(0, std) rejected beyond two standard deviations.
    TruncNormal { std: f32 },
    Uniform { lo: f32, hi: f32 },
    Zeros,
}

impl InitSpec {
    pub fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
        match self {
            InitSpec::TruncNormal { std } => {
                let dist = Normal::new(0.0f32, *std).expect("valid std");
                (0..n)
                    .map(|_| loop {
                        let v = dist.sample(rng);
                        if v.abs() <= 2.0 * *std {
                            break v;
                        }
                    })
                    .collect()
            }
            InitSpec::Uniform { lo, hi } => (0..n).map(|_| rng.random_range(*lo..*hi)).collect(),
            InitSpec::Zeros => vec![0.0; n],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn register_and_lookup() {
        let mut store = ParamStore::new();
        let id = store
            .register("layer.w", vec![1.0, 2.0], &[2], ParamGroup::Base)
            .unwrap();
        assert_eq!(store.name(id), "layer.w");
        assert_eq!(store.find("layer.w"), Some(id));
        assert!(store.find("missing").is_none());
        assert!(store
            .register("layer.w", vec![0.0], &[1], ParamGroup::Base)
            .is_err());
    }

    #[test]
    fn quadratic_params_start_frozen() {
        let mut store = ParamStore::new();
        let b = store
            .register("w_r", vec![0.0; 4], &[2, 2], ParamGroup::Base)
            .unwrap();
        let q = store
            .register("w_g", vec![0.0; 4], &[2, 2], ParamGroup::Quadratic)
            .unwrap();
        assert!(store.is_trainable(b));
        assert!(!store.is_trainable(q));
        store.set_quadratic_trainable(true);
        assert!(store.is_trainable(q));
    }

    #[test]
    fn snapshot_roundtrip_is_exact() {
        let mut store = ParamStore::new();
        let id = store
            .register("p", vec![0.1, -0.9, 3.3], &[3], ParamGroup::Base)
            .unwrap();
        let snap = store.snapshot();
        store.set_data(id, vec![9.0, 9.0, 9.0]);
        store.load_snapshot(&snap);
        assert_eq!(store.get(id).data(), &[0.1, -0.9, 3.3]);
    }

    #[test]
    fn trunc_normal_respects_bounds_and_seed() {
        let spec = InitSpec::TruncNormal { std: 0.02 };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = spec.draw(256, &mut rng);
        assert!(a.iter().all(|v| v.abs() <= 0.04));
        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let b = spec.draw(256, &mut rng2);
        assert_eq!(a, b);
    }
}
