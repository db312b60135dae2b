//! Named parameter storage and initialization.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum Init {
    /// Uniform with variance `2 / ((1 + slope^2) fan_in)`, for layers feeding a leaky ReLU.
    He {
        fan_in: usize,
        slope: f64,
    },
    Zeros,
    Values(Vec<f64>),
    /// Per-channel bilinear x2 upsampling kernel for a `[C, C, 4, 4]` transposed conv.
    Bilinear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn bilinear_kernel<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    let taps = [0.25, 0.75, 0.75, 0.25];
    Tensor::from_fn(shape, |i| {
        if i[0] == i[1] {
            T::lit(taps[i[2]] * taps[i[3]])
        } else {
            T::zero()
        }
    })
}

pub fn initialize<T: Scalar>(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let uniform = |rng: &mut ChaCha8Rng, var: f64| {
        let bound = (3.0 * var).sqrt();
        Tensor::from_fn(&spec.shape, |_| T::lit(rng.gen_range(-bound..bound)))
    };
    match &spec.init {
        Init::He { fan_in, slope } => uniform(rng, 2.0 / ((1.0 + slope * slope) * *fan_in as f64)),
        Init::Zeros => Tensor::zeros(&spec.shape),
        Init::Values(v) => {
            Tensor::from_vec(&spec.shape, v.iter().map(|&x| T::lit(x)).collect()).expect("init values match shape")
        }
        Init::Bilinear => bilinear_kernel(&spec.shape),
    }
}

/// Parameters by name. Ordered so iteration, hashing and serialization are stable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    /// Initializes every spec in order from a single seeded stream.
    pub fn from_specs(specs: &[ParamSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = specs
            .iter()
            .map(|s| (s.name.clone(), initialize(s, &mut rng)))
            .collect();
        Self { tensors }
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor<T>>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
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

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_kernel_is_diagonal() {
        let k = bilinear_kernel::<f64>(&[2, 2, 4, 4]);
        assert_eq!(k.data()[5], 0.75 * 0.75);
        let off: f64 = (0..16).map(|i| k.data()[16 + i]).sum();
        assert_eq!(off, 0.0);
    }

    #[test]
    fn init_is_seeded() {
        let specs = vec![ParamSpec {
            name: "a".into(),
            shape: vec![4, 3, 3, 3],
            init: Init::He { fan_in: 27, slope: 0.2 },
        }];
        let a = ParamStore::<f32>::from_specs(&specs, 1);
        let b = ParamStore::<f32>::from_specs(&specs, 1);
        let c = ParamStore::<f32>::from_specs(&specs, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = (3.0 * 2.0 / (1.04 * 27.0f64)).sqrt() as f32;
        assert!(a.get("a").unwrap().data().iter().all(|v| v.abs() <= bound));
    }
}
