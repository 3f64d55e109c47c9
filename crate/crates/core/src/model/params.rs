use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

/// Learning-rate group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Body,
    Head,
}

/// Storage precision of parameters. Arithmetic is always 64-bit; in `F32`
/// mode values are rounded to the nearest `f32` after every update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    pub fn round(self, x: f64) -> f64 {
        match self {
            Precision::F32 => x as f32 as f64,
            Precision::F64 => x,
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(Error::Config(format!("precision must be f32 or f64, got {s:?}"))),
        }
    }
}

/// One named parameter tensor with its Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

/// All trainable tensors, addressed by insertion index or by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    /// Adam step counter.
    pub step: u64,
    pub precision: Precision,
}

impl ParamStore {
    pub fn new(precision: Precision) -> Self {
        ParamStore {
            params: Vec::new(),
            step: 0,
            precision,
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn value(&self, index: usize) -> &Tensor {
        &self.params[index].value
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn push(&mut self, name: impl Into<String>, group: ParamGroup, mut value: Tensor) -> usize {
        let p = self.precision;
        value.data_mut().iter_mut().for_each(|x| *x = p.round(*x));
        let shape = value.shape().to_vec();
        self.params.push(Param {
            name: name.into(),
            group,
            m: Tensor::zeros(shape.clone()),
            v: Tensor::zeros(shape),
            value,
        });
        self.params.len() - 1
    }

    /// Weight `[fan_in, fan_out]` drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn push_uniform(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        shape: &[usize],
        fan_in: usize,
        rng: &mut SplitMix64,
    ) -> usize {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.uniform(-bound, bound)).collect();
        let t = Tensor::new(shape.to_vec(), data).expect("shape product matches data");
        self.push(name, group, t)
    }

    pub fn round_to_precision(&mut self) {
        let p = self.precision;
        for param in &mut self.params {
            param.value.data_mut().iter_mut().for_each(|x| *x = p.round(*x));
        }
    }

    /// Clears optimizer state.
    pub fn reset_moments(&mut self) {
        self.step = 0;
        for p in &mut self.params {
            p.m.data_mut().fill(0.0);
            p.v.data_mut().fill(0.0);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.is_finite())
    }

    /// Copies values (and moments) of every parameter whose name and shape
    /// match one in `other`. Returns the names that were copied.
    pub fn copy_matching(&mut self, other: &ParamStore, with_moments: bool) -> Vec<String> {
        let mut copied = Vec::new();
        for p in &mut self.params {
            if let Some(q) = other.params.iter().find(|q| q.name == p.name) {
                if q.value.shape() == p.value.shape() {
                    p.value = q.value.clone();
                    if with_moments {
                        p.m = q.m.clone();
                        p.v = q.v.clone();
                    }
                    copied.push(p.name.clone());
                }
            }
        }
        copied
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_init_is_bounded_and_seeded() {
        let mut a = ParamStore::new(Precision::F64);
        let mut b = ParamStore::new(Precision::F64);
        let i = a.push_uniform("w", ParamGroup::Body, &[16, 4], 16, &mut SplitMix64::new(3));
        b.push_uniform("w", ParamGroup::Body, &[16, 4], 16, &mut SplitMix64::new(3));
        assert_eq!(a, b);
        assert!(a.value(i).data().iter().all(|x| x.abs() <= 0.25));
        assert_eq!(a.index_of("w"), Some(0));
        assert_eq!(a.num_scalars(), 64);
    }

    #[test]
    fn f32_rounding() {
        let mut s = ParamStore::new(Precision::F32);
        s.push("x", ParamGroup::Head, Tensor::vector(vec![0.1]));
        assert_eq!(s.value(0).data()[0], 0.1f32 as f64);
        assert_ne!(s.value(0).data()[0], 0.1);
    }
}
