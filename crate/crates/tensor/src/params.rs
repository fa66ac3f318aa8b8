use std::collections::HashMap;

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;
use crate::var::{Gradients, Var};

struct Param<T: Scalar> {
    name: String,
    value: Tensor<T>,
    leaf: Var<T>,
}

/// Named, ordered collection of trainable tensors.
///
/// Each parameter is exposed to forward passes as a graph leaf; the leaf is
/// rebuilt whenever the value changes or the trainable flag flips.
pub struct ParamStore<T: Scalar> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
    trainable: bool,
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { params: Vec::new(), index: HashMap::new(), trainable: true }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(TensorError::Invalid(format!("duplicate parameter `{name}`")));
        }
        let leaf = Var::leaf(value.clone(), self.trainable);
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, value, leaf });
        Ok(())
    }

    /// Graph leaf for `name`.
    pub fn get(&self, name: &str) -> Result<Var<T>> {
        self.index
            .get(name)
            .map(|&i| self.params[i].leaf.clone())
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<T>> {
        self.index.get(name).map(|&i| &self.params[i].value).ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn set_value(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let &i = self.index.get(name).ok_or_else(|| TensorError::UnknownParam(name.to_string()))?;
        let p = &mut self.params[i];
        if p.value.shape() != value.shape() {
            return Err(TensorError::Shape { op: "set_value", expected: p.value.shape().to_vec(), got: value.shape().to_vec() });
        }
        p.leaf = Var::leaf(value.clone(), self.trainable);
        p.value = value;
        Ok(())
    }

    /// Whether leaves handed out by [`get`](Self::get) collect gradients.
    pub fn set_trainable(&mut self, trainable: bool) {
        if self.trainable == trainable {
            return;
        }
        self.trainable = trainable;
        for p in &mut self.params {
            p.leaf = Var::leaf(p.value.clone(), trainable);
        }
    }

    pub fn is_trainable(&self) -> bool {
        self.trainable
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|p| (p.name.as_str(), &p.value))
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// FNV-1a over names, shapes and value bits.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv::default();
        for p in &self.params {
            h.write(p.name.as_bytes());
            for &d in p.value.shape() {
                h.write(&(d as u64).to_le_bytes());
            }
            let mut buf = Vec::new();
            T::to_le_bytes_vec(p.value.data(), &mut buf);
            h.write(&buf);
        }
        h.0
    }

    /// Gradient for each parameter, zero where the backward pass did not reach.
    pub fn collect_grads(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .map(|p| grads.get(&p.leaf).cloned().unwrap_or_else(|| Tensor::zeros(p.value.shape().to_vec())))
            .collect()
    }

    fn update_all(&mut self, f: impl Fn(usize, &mut Tensor<T>)) {
        for (i, p) in self.params.iter_mut().enumerate() {
            f(i, &mut p.value);
            p.leaf = Var::leaf(p.value.clone(), self.trainable);
        }
    }
}

#[derive(Clone, Copy)]
struct Fnv(u64);

impl Default for Fnv {
    fn default() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
}

impl Fnv {
    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

/// Adam with bias correction; one instance per parameter group.
#[derive(Clone, Debug)]
pub struct Adam<T: Scalar> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, beta1: f64, beta2: f64) -> Self {
        let shapes: Vec<_> = store.params.iter().map(|p| p.value.shape().to_vec()).collect();
        Self {
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            first: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
            second: shapes.iter().map(|s| Tensor::zeros(s.clone())).collect(),
        }
    }

    /// Apply one update with learning rate `lr` from the gradients of `store`'s leaves.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        let g = store.collect_grads(grads);
        self.step_with(store, &g, lr)
    }

    pub fn step_with(&mut self, store: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if grads.len() != store.len() || self.first.len() != store.len() {
            return Err(TensorError::Invalid(format!(
                "adam: {} grads / {} moments for {} params",
                grads.len(),
                self.first.len(),
                store.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (lit::<T>(self.beta1), lit::<T>(self.beta2));
        let bc1 = lit::<T>(1.0 - self.beta1.powi(t));
        let bc2 = lit::<T>(1.0 - self.beta2.powi(t));
        let (lr, eps) = (lit::<T>(lr), lit::<T>(self.eps));
        for (i, grad) in grads.iter().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for ((mv, vv), &gv) in m.data_mut().iter_mut().zip(v.data_mut().iter_mut()).zip(grad.data()) {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            }
        }
        let (first, second) = (&self.first, &self.second);
        store.update_all(|i, value| {
            for ((p, &mv), &vv) in value.data_mut().iter_mut().zip(first[i].data()).zip(second[i].data()) {
                let mhat = mv / bc1;
                let vhat = vv / bc2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            }
        });
        Ok(())
    }
}

/// `U(−1/√fan_in, 1/√fan_in)`, the default initialization of common frameworks
/// for convolution and linear layers.
pub fn uniform_fan_in<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform(rng, shape, -bound, bound)
}

pub fn uniform<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], lo: f64, hi: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| lit::<T>(rng.random_range(lo..hi))).collect();
    Tensor::from_vec(shape.to_vec(), data).unwrap()
}
