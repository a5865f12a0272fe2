//! Named parameter tensors shared by every network in the crate.

use std::collections::BTreeMap;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::{Error, Graph, Gradients, Result, Tensor, Var};

/// Ordered map from unique parameter name to tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Result<()> {
        let name = name.into();
        if self.tensors.contains_key(&name) {
            return Err(Error::Contract(format!("parameter {name} registered twice")));
        }
        self.tensors.insert(name, t);
        Ok(())
    }

    /// Registers `{name}.w` (`[fan_in, fan_out]`, Glorot-uniform) and `{name}.b`
    /// (`[1, fan_out]`, zeros).
    pub fn add_linear<R: Rng>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<()> {
        self.add_matrix(&format!("{name}.w"), fan_in, fan_out, rng)?;
        self.insert(format!("{name}.b"), Tensor::zeros(&[1, fan_out]))
    }

    pub fn add_matrix<R: Rng>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<()> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        self.insert(name, Tensor::matrix(fan_in, fan_out, data)?)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((n1, t1), (n2, t2))| n1 == n2 && t1.shape() == t2.shape())
    }

    /// Places every tensor in `g`, as gradient-carrying leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(n, t)| {
                let v = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (n.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Replaces tensors by name; the layout must match exactly.
    pub fn load_from(&mut self, tensors: &BTreeMap<String, Tensor>, prefix: &str) -> Result<()> {
        for (name, t) in self.tensors.iter_mut() {
            let key = format!("{prefix}{name}");
            let src = tensors
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")))?;
            if src.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {key} has shape {:?}, expected {:?}",
                    src.shape(),
                    t.shape()
                )));
            }
            *t = src.clone();
        }
        Ok(())
    }

    /// SHA-256 over names, shapes and the exact bit patterns of the values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.tensors {
            h.update(name.as_bytes());
            for &d in t.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Graph handles for a bound [`ParamSet`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Panics if `name` was never registered: layouts are fixed at construction.
    pub fn var(&self, name: &str) -> Var {
        match self.vars.get(name) {
            Some(&v) => v,
            None => panic!("unknown parameter {name}"),
        }
    }

    /// Substitutes the handle of one registered parameter, e.g. to differentiate
    /// with respect to a single tensor.
    pub fn with_var(mut self, name: &str, v: Var) -> Self {
        match self.vars.get_mut(name) {
            Some(slot) => *slot = v,
            None => panic!("unknown parameter {name}"),
        }
        self
    }

    /// `x @ {name}.w + {name}.b`.
    pub fn linear(&self, g: &mut Graph, name: &str, x: Var) -> Result<Var> {
        let w = self.var(&format!("{name}.w"));
        let b = self.var(&format!("{name}.b"));
        Ok(g.affine(x, w, b)?)
    }

    /// Gradient per parameter name, zero where no gradient reached the leaf.
    pub fn collect(&self, g: &Graph, grads: &mut Gradients) -> BTreeMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(n, &v)| {
                let t = grads
                    .take(v)
                    .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()));
                (n.clone(), t)
            })
            .collect()
    }
}

/// `[x(t-1), x(t), x(t+1)]` stacked along columns (zero padded at the edges).
pub fn context3(g: &mut Graph, x: Var) -> Result<Var> {
    let prev = g.shift_rows(x, 1)?;
    let next = g.shift_rows(x, -1)?;
    Ok(g.concat_cols(&[prev, x, next])?)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn duplicate_names_are_rejected() {
        let mut p = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        p.add_linear("a", 2, 3, &mut rng).unwrap();
        assert!(matches!(
            p.add_linear("a", 2, 3, &mut rng),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn digest_tracks_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = ParamSet::new();
        p.add_linear("l", 3, 2, &mut rng).unwrap();
        let d0 = p.digest();
        assert_eq!(d0, p.clone().digest());
        p.get_mut("l.b").unwrap().data_mut()[0] = 1e-300;
        assert_ne!(d0, p.digest());
    }

    #[test]
    fn unbound_leaves_get_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamSet::new();
        p.add_linear("used", 2, 2, &mut rng).unwrap();
        p.add_linear("unused", 2, 2, &mut rng).unwrap();
        let mut g = Graph::new();
        let b = p.bind(&mut g, true);
        let x = g.constant(Tensor::row(vec![1.0, 2.0]));
        let y = b.linear(&mut g, "used", x).unwrap();
        let s = g.sum(y);
        let mut grads = g.backward(s).unwrap();
        let named = b.collect(&g, &mut grads);
        assert_eq!(named["unused.w"].data(), &[0.0; 4]);
        assert_eq!(named["used.b"].data(), &[1.0, 1.0]);
    }
}
