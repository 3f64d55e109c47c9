use crate::autograd::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::features::{EncodedGraph, FeatureLayout};
use crate::geometry::DualGraph;
use crate::rng::SplitMix64;
use crate::tensor::Tensor;

use super::layers::{Linear, Mlp, SlotMlp};
use super::params::{ParamGroup, ParamStore, Precision};
use super::ModelConfig;

const INIT_BODY: u64 = 1;
const INIT_GEOMETRY_HEADS: u64 = 2;
const INIT_FINGERPRINT: u64 = 3;
const INIT_DOWNSTREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Norm {
    gamma: usize,
    beta: usize,
}

impl Norm {
    fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Norm {
            gamma: store.push(format!("{name}.gamma"), ParamGroup::Body, Tensor::full([width], 1.0)),
            beta: store.push(format!("{name}.beta"), ParamGroup::Body, Tensor::zeros([width])),
        }
    }

    fn apply(&self, g: &mut Graph, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let gamma = g.param(self.gamma, store.value(self.gamma))?;
        let beta = g.param(self.beta, store.value(self.beta))?;
        g.layer_norm(x, gamma, beta)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Block {
    angle_proj: Linear,
    bond_mlp: Mlp,
    bond_norm: Norm,
    atom_mlp: Mlp,
    atom_norm: Norm,
}

/// Final atom and bond representations and the pooled graph vector
/// (`[1, hidden]`), as nodes on the caller's tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedding {
    pub atoms: NodeId,
    pub bonds: NodeId,
    pub graph: NodeId,
}

/// Model definition plus its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoGnn {
    pub config: ModelConfig,
    pub layout: FeatureLayout,
    pub params: ParamStore,
    atom_proj: Linear,
    bond_proj: Linear,
    blocks: Vec<Block>,
    length_head: SlotMlp,
    angle_head: SlotMlp,
    distance_head: SlotMlp,
    fingerprint_head: Option<Linear>,
    downstream_head: Option<Mlp>,
}

/// Feature matrix with the mask flag appended as a last column.
fn with_mask_column(x: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let (n, d) = x.require_2d("mask column")?;
    let mut out = Vec::with_capacity(n * (d + 1));
    for (r, &m) in mask.iter().enumerate().take(n) {
        out.extend_from_slice(x.row(r));
        out.push(if m { 1.0 } else { 0.0 });
    }
    Tensor::matrix(n, d + 1, out)
}

fn tag_block(block: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite { .. } => Error::NonFiniteBlock {
            block,
            source: Box::new(e),
        },
        other => other,
    }
}

impl GeoGnn {
    pub fn new(config: ModelConfig, layout: FeatureLayout, seed: u64, precision: Precision) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let mut store = ParamStore::new(precision);

        let mut rng = SplitMix64::derive(seed, &[INIT_BODY]);
        let atom_proj = Linear::new(&mut store, "atom_proj", ParamGroup::Body, layout.atom_width() + 1, h, &mut rng);
        let bond_proj = Linear::new(&mut store, "bond_proj", ParamGroup::Body, layout.bond_width() + 1, h, &mut rng);
        let blocks = (0..config.blocks)
            .map(|k| {
                let p = format!("block{k}");
                Block {
                    angle_proj: Linear::new(
                        &mut store,
                        &format!("{p}.angle_proj"),
                        ParamGroup::Body,
                        layout.angle_width() + 1,
                        h,
                        &mut rng,
                    ),
                    bond_mlp: Mlp::new(&mut store, &format!("{p}.bond_mlp"), ParamGroup::Body, &[h, h, h], &mut rng),
                    bond_norm: Norm::new(&mut store, &format!("{p}.bond_norm"), h),
                    atom_mlp: Mlp::new(&mut store, &format!("{p}.atom_mlp"), ParamGroup::Body, &[h, h, h], &mut rng),
                    atom_norm: Norm::new(&mut store, &format!("{p}.atom_norm"), h),
                }
            })
            .collect();

        let gh = config.geometry_head_hidden;
        let mut rng = SplitMix64::derive(seed, &[INIT_GEOMETRY_HEADS]);
        let length_head = SlotMlp::new(&mut store, "head.length", ParamGroup::Head, 2, h, gh, 1, &mut rng);
        let angle_head = SlotMlp::new(&mut store, "head.angle", ParamGroup::Head, 3, h, gh, 1, &mut rng);
        let distance_head = SlotMlp::new(
            &mut store,
            "head.distance",
            ParamGroup::Head,
            2,
            h,
            gh,
            config.distance_bins,
            &mut rng,
        );

        let mut rng = SplitMix64::derive(seed, &[INIT_FINGERPRINT]);
        let fingerprint_head = (config.fingerprint_bits > 0).then(|| {
            Linear::new(
                &mut store,
                "head.fingerprint",
                ParamGroup::Head,
                h,
                config.fingerprint_bits,
                &mut rng,
            )
        });

        let mut rng = SplitMix64::derive(seed, &[INIT_DOWNSTREAM]);
        let dh = config.downstream_head_hidden;
        let downstream_head = (config.num_tasks > 0).then(|| {
            Mlp::new(
                &mut store,
                "head.downstream",
                ParamGroup::Head,
                &[h, dh, dh, config.num_tasks],
                &mut rng,
            )
        });

        Ok(GeoGnn {
            config,
            layout,
            params: store,
            atom_proj,
            bond_proj,
            blocks,
            length_head,
            angle_head,
            distance_head,
            fingerprint_head,
            downstream_head,
        })
    }

    /// Runs the K dual blocks and the mean readout. `train` enables dropout,
    /// drawing masks from `rng`.
    pub fn forward(
        &self,
        g: &mut Graph,
        enc: &EncodedGraph,
        graph: &DualGraph,
        train: bool,
        rng: &mut SplitMix64,
    ) -> Result<Embedding> {
        let store = &self.params;
        let (n, m) = (graph.num_atoms, graph.num_bonds());
        if enc.atom.rows() != n || enc.bond.rows() != m || enc.angle.rows() != graph.num_angles() {
            return Err(Error::shape(
                "forward",
                format!(
                    "encoded rows ({}, {}, {}) vs graph ({n}, {m}, {})",
                    enc.atom.rows(),
                    enc.bond.rows(),
                    enc.angle.rows(),
                    graph.num_angles()
                ),
            ));
        }
        let widths = (enc.atom.cols(), enc.bond.cols(), enc.angle.cols());
        let expect = (self.layout.atom_width(), self.layout.bond_width(), self.layout.angle_width());
        if widths != expect {
            return Err(Error::shape(
                "forward",
                format!("feature widths {widths:?}, model expects {expect:?}"),
            ));
        }

        // directed atom-bond edges: (target atom, source atom, bond)
        let mut a_dst = Vec::with_capacity(2 * m);
        let mut a_src = Vec::with_capacity(2 * m);
        let mut a_bond = Vec::with_capacity(2 * m);
        for (u, nbrs) in graph.atom_neighbors.iter().enumerate() {
            for &(v, b) in nbrs {
                a_dst.push(u);
                a_src.push(v);
                a_bond.push(b);
            }
        }
        // directed bond-angle edges: (target bond, source bond, angle)
        let mut b_dst = Vec::new();
        let mut b_src = Vec::new();
        let mut b_angle = Vec::new();
        for (b, nbrs) in graph.bond_neighbors.iter().enumerate() {
            for &(c, a) in nbrs {
                b_dst.push(b);
                b_src.push(c);
                b_angle.push(a);
            }
        }

        let x_atom = g.constant(with_mask_column(&enc.atom, &enc.atom_mask)?)?;
        let x_bond = g.constant(with_mask_column(&enc.bond, &enc.bond_mask)?)?;
        let x_angle = g.constant(with_mask_column(&enc.angle, &enc.angle_mask)?)?;

        let mut h_atom = self.atom_proj.apply(g, store, x_atom).map_err(tag_block(0))?;
        let mut h_bond = self.bond_proj.apply(g, store, x_bond).map_err(tag_block(0))?;

        for (k, block) in self.blocks.iter().enumerate() {
            let run = |g: &mut Graph, rng: &mut SplitMix64| -> Result<(NodeId, NodeId)> {
                let p_angle = block.angle_proj.apply(g, store, x_angle)?;
                let own = g.gather_rows(h_bond, &b_dst)?;
                let other = g.gather_rows(h_bond, &b_src)?;
                let ang = g.gather_rows(p_angle, &b_angle)?;
                let msg = g.add(own, other)?;
                let msg = g.add(msg, ang)?;
                let agg = g.segment_sum(msg, &b_dst, m)?;
                let new_bond = self.combine(g, &block.bond_mlp, &block.bond_norm, agg, h_bond, m, train, rng)?;

                let bond_src = if self.config.sequential_update { new_bond } else { h_bond };
                let own = g.gather_rows(h_atom, &a_dst)?;
                let other = g.gather_rows(h_atom, &a_src)?;
                let via = g.gather_rows(bond_src, &a_bond)?;
                let msg = g.add(own, other)?;
                let msg = g.add(msg, via)?;
                let agg = g.segment_sum(msg, &a_dst, n)?;
                let new_atom = self.combine(g, &block.atom_mlp, &block.atom_norm, agg, h_atom, n, train, rng)?;
                Ok((new_atom, new_bond))
            };
            (h_atom, h_bond) = run(g, rng).map_err(tag_block(k + 1))?;
        }

        let pooled = g.mean_rows(h_atom)?;
        Ok(Embedding {
            atoms: h_atom,
            bonds: h_bond,
            graph: pooled,
        })
    }

    /// MLP, layer norm, graph-size norm, residual, dropout.
    #[allow(clippy::too_many_arguments)]
    fn combine(
        &self,
        g: &mut Graph,
        mlp: &Mlp,
        norm: &Norm,
        agg: NodeId,
        prev: NodeId,
        count: usize,
        train: bool,
        rng: &mut SplitMix64,
    ) -> Result<NodeId> {
        let store = &self.params;
        let z = mlp.apply(g, store, agg)?;
        let z = norm.apply(g, store, z)?;
        let z = if count > 0 {
            g.scale(z, 1.0 / (count as f64).sqrt())?
        } else {
            z
        };
        let z = g.add(z, prev)?;
        g.dropout(z, self.config.dropout, train, rng)
    }

    /// Predicted bond lengths for atom pairs, `[pairs, 1]`.
    pub fn head_length(&self, g: &mut Graph, emb: &Embedding, pairs: &[[usize; 2]]) -> Result<NodeId> {
        let (u, v): (Vec<usize>, Vec<usize>) = pairs.iter().map(|p| (p[0], p[1])).unzip();
        self.length_head.apply(g, &self.params, emb.atoms, &[&u, &v])
    }

    /// Predicted angles for `(end_w, center_u, end_v)` triples, `[triples, 1]`.
    pub fn head_angle(&self, g: &mut Graph, emb: &Embedding, triples: &[[usize; 3]]) -> Result<NodeId> {
        let w: Vec<usize> = triples.iter().map(|t| t[0]).collect();
        let u: Vec<usize> = triples.iter().map(|t| t[1]).collect();
        let v: Vec<usize> = triples.iter().map(|t| t[2]).collect();
        self.angle_head.apply(g, &self.params, emb.atoms, &[&w, &u, &v])
    }

    /// Distance-bin logits for ordered atom pairs, `[pairs, C]`.
    pub fn head_distance(&self, g: &mut Graph, emb: &Embedding, pairs: &[[usize; 2]]) -> Result<NodeId> {
        let (u, v): (Vec<usize>, Vec<usize>) = pairs.iter().map(|p| (p[0], p[1])).unzip();
        self.distance_head.apply(g, &self.params, emb.atoms, &[&u, &v])
    }

    /// Fingerprint logits `[1, B]`.
    pub fn head_fingerprint(&self, g: &mut Graph, emb: &Embedding) -> Result<NodeId> {
        let head = self
            .fingerprint_head
            .ok_or_else(|| Error::Config("model has no fingerprint head (fingerprint_bits = 0)".into()))?;
        head.apply(g, &self.params, emb.graph)
    }

    /// Downstream task outputs `[1, T]`.
    pub fn head_downstream(&self, g: &mut Graph, emb: &Embedding) -> Result<NodeId> {
        let head = self
            .downstream_head
            .as_ref()
            .ok_or_else(|| Error::Config("model has no downstream head (num_tasks = 0)".into()))?;
        head.apply(g, &self.params, emb.graph)
    }

    /// Eval-mode graph vector `h_G`.
    pub fn embed(&self, enc: &EncodedGraph, graph: &DualGraph) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let emb = self.forward(&mut g, enc, graph, false, &mut SplitMix64::new(0))?;
        Ok(g.value(emb.graph).data().to_vec())
    }

    /// Eval-mode downstream outputs, one per task.
    pub fn predict(&self, enc: &EncodedGraph, graph: &DualGraph) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let emb = self.forward(&mut g, enc, graph, false, &mut SplitMix64::new(0))?;
        let out = self.head_downstream(&mut g, &emb)?;
        Ok(g.value(out).data().to_vec())
    }

    /// Whether `name` belongs to the message-passing body rather than a head.
    pub fn is_body_param(name: &str) -> bool {
        !name.starts_with("head.")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{encode, FeatureConfig};
    use crate::fixtures;
    use crate::mol::Molecule;

    fn small() -> ModelConfig {
        ModelConfig {
            blocks: 2,
            hidden: 8,
            dropout: 0.0,
            geometry_head_hidden: 16,
            downstream_head_hidden: 8,
            ..ModelConfig::default()
        }
    }

    fn embed(model: &GeoGnn, mol: &Molecule, cfg: &FeatureConfig) -> Vec<f64> {
        let dg = DualGraph::build(mol).unwrap();
        let enc = encode(&dg, mol, cfg).unwrap();
        model.embed(&enc, &dg).unwrap()
    }

    #[test]
    fn single_atom_runs() {
        let cfg = FeatureConfig::default();
        let model = GeoGnn::new(small(), cfg.layout(), 1, Precision::F64).unwrap();
        let h = embed(&model, &fixtures::single_atom(), &cfg);
        assert_eq!(h.len(), 8);
        assert!(h.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn cis_trans_differ_only_with_geometry() {
        let mut cfg = FeatureConfig::default();
        let model = GeoGnn::new(small(), cfg.layout(), 7, Precision::F64).unwrap();
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let a = embed(&model, &fixtures::cis_dichloroethene(), &cfg);
        let b = embed(&model, &fixtures::trans_dichloroethene(), &cfg);
        assert!(diff(&a, &b) > 1e-6);
        cfg.geometry = false;
        let a = embed(&model, &fixtures::cis_dichloroethene(), &cfg);
        let b = embed(&model, &fixtures::trans_dichloroethene(), &cfg);
        assert!(diff(&a, &b) < 1e-12);
    }

    #[test]
    fn default_distance_head_has_thirty_logits() {
        let cfg = FeatureConfig::default();
        let model = GeoGnn::new(ModelConfig::default(), cfg.layout(), 1, Precision::F64).unwrap();
        let m = fixtures::water();
        let dg = DualGraph::build(&m).unwrap();
        let enc = encode(&dg, &m, &cfg).unwrap();
        let mut g = Graph::new();
        let emb = model.forward(&mut g, &enc, &dg, false, &mut SplitMix64::new(0)).unwrap();
        let d = model.head_distance(&mut g, &emb, &[[0, 1]]).unwrap();
        assert_eq!(g.value(d).shape(), &[1, 30]);
    }

    #[test]
    fn downstream_width_matches_task_count() {
        let cfg = FeatureConfig::default();
        let model = GeoGnn::new(
            ModelConfig {
                num_tasks: 12,
                ..small()
            },
            cfg.layout(),
            1,
            Precision::F64,
        )
        .unwrap();
        let m = fixtures::methane();
        let dg = DualGraph::build(&m).unwrap();
        let enc = encode(&dg, &m, &cfg).unwrap();
        assert_eq!(model.predict(&enc, &dg).unwrap().len(), 12);
    }

    #[test]
    fn sequential_variant_differs() {
        let cfg = FeatureConfig::default();
        let a = GeoGnn::new(small(), cfg.layout(), 3, Precision::F64).unwrap();
        let b = GeoGnn::new(
            ModelConfig {
                sequential_update: true,
                ..small()
            },
            cfg.layout(),
            3,
            Precision::F64,
        )
        .unwrap();
        let m = fixtures::methanamine();
        assert_ne!(embed(&a, &m, &cfg), embed(&b, &m, &cfg));
    }

    #[test]
    fn dropout_only_in_train_mode() {
        let cfg = FeatureConfig::default();
        let model = GeoGnn::new(
            ModelConfig {
                dropout: 0.5,
                ..small()
            },
            cfg.layout(),
            3,
            Precision::F64,
        )
        .unwrap();
        let m = fixtures::methanamine();
        assert_eq!(embed(&model, &m, &cfg), embed(&model, &m, &cfg));
        let dg = DualGraph::build(&m).unwrap();
        let enc = encode(&dg, &m, &cfg).unwrap();
        let mut g = Graph::new();
        let e = model.forward(&mut g, &enc, &dg, true, &mut SplitMix64::new(5)).unwrap();
        assert_ne!(g.value(e.graph).data(), embed(&model, &m, &cfg).as_slice());
    }
}
