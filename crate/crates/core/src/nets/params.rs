//! Named parameter storage and graph binding.
//!
//! Every learnable tensor lives in a [`ParamStore`] under a key of the form
//! `component/param`, where the component prefix is one of the nine named
//! sub-networks. Forward passes run through a [`Session`], which lazily
//! binds store tensors as graph leaves and remembers the mapping so
//! gradients can be routed back to named parameters after `backward`.

use std::collections::BTreeMap;

use ndarray::ArrayD;

use crate::rng::{derive_seed, hex_digest, stream_rng};
use crate::tensor::{kaiming_uniform, Gradients, Graph, VarId};

/// The nine independently addressable sub-networks.
pub const COMPONENTS: [&str; 9] = [
    "enc_c", "enc_m", "det_c", "det_m", "seg_c", "seg_m", "pose_enc", "pose_dec", "dom_cls",
];

/// Component prefix of a parameter key (`"enc_c/stem.w"` → `"enc_c"`).
pub fn component_of(name: &str) -> &str {
    name.split('/').next().unwrap_or(name)
}

/// Ordered map from parameter name to tensor. Deterministic iteration
/// order makes digests, checkpoints, and update loops reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, ArrayD<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f32>) {
        let name = name.into();
        debug_assert!(
            COMPONENTS.contains(&component_of(&name)),
            "parameter {name} has no known component prefix"
        );
        self.map.insert(name, value);
    }

    pub fn get(&self, name: &str) -> &ArrayD<f32> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ArrayD<f32> {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f32>)> {
        self.map.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    /// Parameter names belonging to one component, in sorted order.
    pub fn names_of(&self, component: &str) -> Vec<String> {
        self.map
            .keys()
            .filter(|n| component_of(n) == component)
            .cloned()
            .collect()
    }

    /// Zero-filled tensors with the same names and shapes (momentum buffers).
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            map: self
                .map
                .iter()
                .map(|(n, v)| (n.clone(), ArrayD::zeros(v.raw_dim())))
                .collect(),
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.map.values().map(|v| v.len()).sum()
    }

    /// Bit-level digest of one component's parameters.
    pub fn component_digest(&self, component: &str) -> String {
        let mut bytes = Vec::new();
        for (name, value) in &self.map {
            if component_of(name) != component {
                continue;
            }
            bytes.extend_from_slice(name.as_bytes());
            bytes.push(0);
            for d in value.shape() {
                bytes.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in value.iter() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        hex_digest(&bytes)
    }

    /// Bit-level digest over every parameter.
    pub fn digest(&self) -> String {
        let mut bytes = Vec::new();
        for comp in COMPONENTS {
            bytes.extend_from_slice(self.component_digest(comp).as_bytes());
        }
        hex_digest(&bytes)
    }
}

/// Builder used by `init_components`: namespaces parameter creation under
/// one component and derives a per-parameter RNG from the tensor's full
/// name, so initialization is independent of creation order.
pub struct ComponentInit<'a> {
    store: &'a mut ParamStore,
    component: &'static str,
    seed: u64,
}

impl<'a> ComponentInit<'a> {
    pub fn new(store: &'a mut ParamStore, component: &'static str, seed: u64) -> Self {
        ComponentInit {
            store,
            component,
            seed,
        }
    }

    fn full_name(&self, name: &str) -> String {
        format!("{}/{}", self.component, name)
    }

    fn name_seed(&self, full: &str) -> u64 {
        let digest = hex_digest(full.as_bytes());
        let word = u64::from_str_radix(&digest[..16], 16).expect("hex digest prefix");
        derive_seed(self.seed, word)
    }

    /// Kaiming-uniform weight tensor.
    pub fn weight(&mut self, name: &str, shape: &[usize], fan_in: usize) {
        self.weight_scaled(name, shape, fan_in, 1.0);
    }

    /// Kaiming-uniform weight tensor shrunk by `scale`. Small scales keep
    /// deep unnormalized stacks near identity at initialization while
    /// still breaking symmetry and passing gradients from the first step.
    pub fn weight_scaled(&mut self, name: &str, shape: &[usize], fan_in: usize, scale: f32) {
        let full = self.full_name(name);
        let mut rng = stream_rng(self.name_seed(&full), 0);
        let mut value = kaiming_uniform::<f32, _>(&mut rng, shape, fan_in);
        if scale != 1.0 {
            value.mapv_inplace(|v| v * scale);
        }
        self.store.insert(full, value);
    }

    /// Tensor filled with a constant (biases, zero-initialized layers).
    pub fn constant(&mut self, name: &str, shape: &[usize], value: f32) {
        let full = self.full_name(name);
        self.store.insert(full, ArrayD::from_elem(shape.to_vec(), value));
    }
}

/// A forward-pass context: one graph plus the name↔leaf binding for every
/// parameter touched so far.
pub struct Session<'a> {
    pub g: Graph<f32>,
    store: &'a ParamStore,
    bound: BTreeMap<String, VarId>,
    trainable: bool,
}

impl<'a> Session<'a> {
    /// `trainable` controls whether bound parameters require gradients.
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Session {
            g: Graph::new(),
            store,
            bound: BTreeMap::new(),
            trainable,
        }
    }

    /// Bind (or reuse) the leaf for a named parameter.
    pub fn param(&mut self, name: &str) -> VarId {
        if let Some(&id) = self.bound.get(name) {
            return id;
        }
        let id = self.g.leaf(self.store.get(name).clone(), self.trainable);
        self.bound.insert(name.to_string(), id);
        id
    }

    pub fn bound_params(&self) -> &BTreeMap<String, VarId> {
        &self.bound
    }

    /// Gradient per bound parameter name (absent where no gradient flowed).
    pub fn collect_grads(&self, grads: &Gradients<f32>) -> BTreeMap<String, ArrayD<f32>> {
        self.bound
            .iter()
            .filter_map(|(name, &id)| grads.get(id).map(|g| (name.clone(), g.clone())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::ArrayD;

    fn store_with(names: &[&str]) -> ParamStore {
        let mut s = ParamStore::new();
        for n in names {
            s.insert(*n, ArrayD::zeros(vec![2, 2]));
        }
        s
    }

    #[test]
    fn every_parameter_belongs_to_exactly_one_component() {
        let s = store_with(&["enc_c/a", "enc_c/b", "det_m/x", "dom_cls/fc1.w"]);
        for name in s.names() {
            let owners: Vec<_> = COMPONENTS
                .iter()
                .filter(|c| component_of(name) == **c)
                .collect();
            assert_eq!(owners.len(), 1, "{name}");
        }
        assert_eq!(s.names_of("enc_c"), vec!["enc_c/a", "enc_c/b"]);
    }

    #[test]
    fn component_digest_tracks_only_its_component() {
        let mut s = store_with(&["enc_c/a", "det_c/x"]);
        let enc_before = s.component_digest("enc_c");
        let det_before = s.component_digest("det_c");
        s.get_mut("det_c/x")[[0, 0]] = 5.0;
        assert_eq!(s.component_digest("enc_c"), enc_before);
        assert_ne!(s.component_digest("det_c"), det_before);
    }

    #[test]
    fn session_binds_each_parameter_once() {
        let s = store_with(&["enc_c/a"]);
        let mut sess = Session::new(&s, true);
        let id1 = sess.param("enc_c/a");
        let id2 = sess.param("enc_c/a");
        assert_eq!(id1, id2);
        assert_eq!(sess.bound_params().len(), 1);
    }

    #[test]
    fn name_derived_init_is_order_independent() {
        let mut a = ParamStore::new();
        let mut ia = ComponentInit::new(&mut a, "enc_c", 7);
        ia.weight("w1", &[3, 3], 9);
        ia.weight("w2", &[3, 3], 9);
        let mut b = ParamStore::new();
        let mut ib = ComponentInit::new(&mut b, "enc_c", 7);
        ib.weight("w2", &[3, 3], 9);
        ib.weight("w1", &[3, 3], 9);
        assert_eq!(a, b);
        assert_ne!(a.get("enc_c/w1"), a.get("enc_c/w2"));
    }
}
