use crate::autograd::{Graph, NodeId};
use crate::error::Result;
use crate::rng::SplitMix64;

use super::params::{ParamGroup, ParamStore};

/// `x W + b` with `W: [fan_in, fan_out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        fan_in: usize,
        fan_out: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let w = store.push_uniform(format!("{name}.w"), group, &[fan_in, fan_out], fan_in, rng);
        let b = store.push_uniform(format!("{name}.b"), group, &[fan_out], fan_in, rng);
        Linear { w, b }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = g.param(self.w, store.value(self.w))?;
        let b = g.param(self.b, store.value(self.b))?;
        let y = g.matmul(x, w)?;
        g.add_bias(y, b)
    }
}

/// Linear layers with ReLU between them (none after the last).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `widths = [in, hidden..., out]`.
    pub fn new(store: &mut ParamStore, name: &str, group: ParamGroup, widths: &[usize], rng: &mut SplitMix64) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.{i}"), group, w[0], w[1], rng))
            .collect();
        Mlp { layers }
    }

    pub fn apply(&self, g: &mut Graph, store: &ParamStore, mut x: NodeId) -> Result<NodeId> {
        for (i, l) in self.layers.iter().enumerate() {
            if i > 0 {
                x = g.relu(x)?;
            }
            x = l.apply(g, store, x)?;
        }
        Ok(x)
    }
}

/// MLP over the concatenation of several rows of one matrix.
///
/// The first layer's weight is stored as one `[width, hidden]` block per
/// input slot, so `concat(h[i_0], ..., h[i_s]) W = sum_s h[i_s] W_s` can be
/// computed by projecting `h` once per slot and gathering. This keeps the
/// all-pairs distance head linear in the number of atoms up to the gather.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotMlp {
    pub slots: Vec<usize>,
    pub bias: usize,
    pub rest: Mlp,
}

impl SlotMlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: ParamGroup,
        slots: usize,
        width: usize,
        hidden: usize,
        out: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let fan_in = slots * width;
        let slot_ids = (0..slots)
            .map(|s| store.push_uniform(format!("{name}.0.w{s}"), group, &[width, hidden], fan_in, rng))
            .collect();
        let bias = store.push_uniform(format!("{name}.0.b"), group, &[hidden], fan_in, rng);
        let rest = Mlp::new(store, &format!("{name}.rest"), group, &[hidden, out], rng);
        SlotMlp {
            slots: slot_ids,
            bias,
            rest,
        }
    }

    /// `rows[s][r]` is the row of `h` feeding slot `s` of output row `r`.
    pub fn apply(&self, g: &mut Graph, store: &ParamStore, h: NodeId, rows: &[&[usize]]) -> Result<NodeId> {
        debug_assert_eq!(rows.len(), self.slots.len());
        let mut acc: Option<NodeId> = None;
        for (&w, idx) in self.slots.iter().zip(rows) {
            let wn = g.param(w, store.value(w))?;
            let proj = g.matmul(h, wn)?;
            let part = g.gather_rows(proj, idx)?;
            acc = Some(match acc {
                None => part,
                Some(a) => g.add(a, part)?,
            });
        }
        let b = g.param(self.bias, store.value(self.bias))?;
        let z = g.add_bias(acc.expect("at least one slot"), b)?;
        let z = g.relu(z)?;
        self.rest.apply(g, store, z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Precision;
    use crate::tensor::Tensor;

    #[test]
    fn zero_weights_give_bias() {
        let mut s = ParamStore::new(Precision::F64);
        let l = Linear::new(&mut s, "l", ParamGroup::Head, 3, 2, &mut SplitMix64::new(1));
        s.get_mut(l.w).value.data_mut().fill(0.0);
        s.get_mut(l.b).value = Tensor::vector(vec![0.5, -1.0]);
        let mut g = Graph::new();
        let x = g.constant(Tensor::full([4, 3], 7.0)).unwrap();
        let y = l.apply(&mut g, &s, x).unwrap();
        for r in 0..4 {
            assert_eq!(g.value(y).row(r), &[0.5, -1.0]);
        }
    }

    #[test]
    fn slot_mlp_equals_concat_mlp() {
        let mut s = ParamStore::new(Precision::F64);
        let mut rng = SplitMix64::new(9);
        let head = SlotMlp::new(&mut s, "h", ParamGroup::Head, 2, 3, 5, 2, &mut rng);
        let h = Tensor::from_rows(&[vec![0.1, -0.2, 0.3], vec![1.0, 0.5, -0.7], vec![0.0, 0.4, 0.9]]).unwrap();
        let (a, b) = (vec![0, 2, 1], vec![1, 0, 2]);

        let mut g = Graph::new();
        let hn = g.constant(h.clone()).unwrap();
        let out = head.apply(&mut g, &s, hn, &[&a, &b]).unwrap();

        // explicit concat oracle
        let w0 = s.value(head.slots[0]);
        let w1 = s.value(head.slots[1]);
        let b1 = s.value(head.bias);
        let w2 = s.value(head.rest.layers[0].w);
        let b2 = s.value(head.rest.layers[0].b);
        for r in 0..3 {
            let x: Vec<f64> = h.row(a[r]).iter().chain(h.row(b[r])).copied().collect();
            let mut z = vec![0.0; 5];
            for (j, zj) in z.iter_mut().enumerate() {
                *zj = b1.data()[j];
                for i in 0..3 {
                    *zj += x[i] * w0.get(i, j) + x[3 + i] * w1.get(i, j);
                }
                *zj = zj.max(0.0);
            }
            for k in 0..2 {
                let mut o = b2.data()[k];
                for j in 0..5 {
                    o += z[j] * w2.get(j, k);
                }
                assert!((g.value(out).get(r, k) - o).abs() < 1e-12);
            }
        }
    }
}
