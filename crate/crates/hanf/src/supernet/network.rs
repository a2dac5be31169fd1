//! Cell-network construction and forward evaluation.
//!
//! A [`NetworkPlan`] is the immutable structure of a stacked-cell network:
//! stem, cells with their per-edge operations, and the classifier head.
//! Parameters live outside the plan as a flat `Vec<Tensor>` so they can be
//! cloned to clients, averaged, and rebound to a fresh tape each pass.
//! The same plan type covers the continuous supernet (softmax-mixed edges)
//! and the discrete evaluation network (fixed edges with optional path
//! dropout).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::init::{init_param, ParamKind};
use crate::diffcore::{ConvAttrs, NodeId, Tape, Tensor};
use crate::error::{HanfError, Result};

use super::arch::{edge_list, ArchParams};
use super::genotype::{Genotype, GenotypeEdge};
use super::primitive::{PrimitiveKind, CATALOG};

pub const BN_EPS: f64 = 1e-5;

/// Global network shape shared by both stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    pub cells: usize,
    pub nodes: usize,
    pub channels: usize,
    pub classes: usize,
    pub in_channels: usize,
    pub input_hw: (usize, usize),
}

/// Cells at 1/3 and 2/3 of the depth reduce spatial dimensions.
pub fn reduction_positions(cells: usize) -> (usize, usize) {
    (cells / 3, 2 * cells / 3)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Normal,
    Reduction,
}

#[derive(Debug, Clone)]
pub struct ParamMeta {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
}

/// Parameter indices for one instantiated primitive.
#[derive(Debug, Clone)]
pub enum PrimParams {
    /// ReLU-dw-pw-BN applied twice.
    SepConv { dw1: usize, pw1: usize, bn1s: usize, bn1b: usize, dw2: usize, pw2: usize, bn2s: usize, bn2b: usize },
    /// ReLU-dw(dilated)-pw-BN applied once.
    DilConv { dw: usize, pw: usize, bns: usize, bnb: usize },
    /// Strided 1x1 projection standing in for identity on reduction edges.
    Proj { w: usize },
    /// Pools, stride-1 identity, zero.
    None,
}

#[derive(Debug, Clone)]
pub struct PrimPlan {
    pub kind: PrimitiveKind,
    pub stride: usize,
    pub params: PrimParams,
}

#[derive(Debug, Clone)]
pub enum EdgeOps {
    /// All catalog primitives, softmax-mixed by an architecture row.
    Mixed(Vec<PrimPlan>),
    /// One retained primitive (evaluation network).
    Fixed(PrimPlan),
}

#[derive(Debug, Clone)]
pub struct EdgePlan {
    pub source: usize,
    pub target: usize,
    pub arch_row: usize,
    pub ops: EdgeOps,
}

/// ReLU-1x1 conv-BN projection used for cell input preprocessing.
#[derive(Debug, Clone)]
pub struct ProjPlan {
    pub w: usize,
    pub bns: usize,
    pub bnb: usize,
    pub stride: usize,
}

#[derive(Debug, Clone)]
pub struct CellPlan {
    pub kind: CellKind,
    pub pre0: ProjPlan,
    pub pre1: ProjPlan,
    pub edges: Vec<EdgePlan>,
}

#[derive(Debug, Clone)]
pub struct NetworkPlan {
    pub spec: NetworkSpec,
    pub params: Vec<ParamMeta>,
    stem_conv: usize,
    stem_bns: usize,
    stem_bnb: usize,
    pub cells: Vec<CellPlan>,
    classifier_w: usize,
    classifier_b: usize,
    /// Present for the supernet; the evaluation network has no arch.
    pub mixed: bool,
}

/// Per-pass leaf bindings for parameters and (optionally) architecture.
pub struct Binding {
    pub weights: Vec<NodeId>,
    pub arch: Option<ArchNodes>,
}

#[derive(Clone, Copy)]
pub struct ArchNodes {
    pub normal: NodeId,
    pub reduce: NodeId,
}

/// Path-dropout configuration for evaluation-network training passes.
pub struct Dropout<'r> {
    pub probability: f64,
    pub rng: &'r mut ChaCha8Rng,
}

struct PlanBuilder {
    params: Vec<ParamMeta>,
}

impl PlanBuilder {
    fn add(&mut self, name: String, kind: ParamKind, shape: Vec<usize>) -> usize {
        self.params.push(ParamMeta { name, kind, shape });
        self.params.len() - 1
    }

    fn proj(&mut self, prefix: &str, c_in: usize, c_out: usize, stride: usize) -> ProjPlan {
        ProjPlan {
            w: self.add(format!("{prefix}.w"), ParamKind::ConvWeight, vec![c_out, c_in, 1, 1]),
            bns: self.add(format!("{prefix}.bn.scale"), ParamKind::BnScale, vec![c_out]),
            bnb: self.add(format!("{prefix}.bn.shift"), ParamKind::BnShift, vec![c_out]),
            stride,
        }
    }

    fn primitive(&mut self, prefix: &str, kind: PrimitiveKind, channels: usize, stride: usize) -> PrimPlan {
        let c = channels;
        let name = kind.name();
        let params = match kind {
            PrimitiveKind::SepConv3x3 | PrimitiveKind::SepConv5x5 => {
                let k = kind.kernel().expect("conv kernel");
                PrimParams::SepConv {
                    dw1: self.add(format!("{prefix}.{name}.dw1"), ParamKind::ConvWeight, vec![c, 1, k, k]),
                    pw1: self.add(format!("{prefix}.{name}.pw1"), ParamKind::ConvWeight, vec![c, c, 1, 1]),
                    bn1s: self.add(format!("{prefix}.{name}.bn1.scale"), ParamKind::BnScale, vec![c]),
                    bn1b: self.add(format!("{prefix}.{name}.bn1.shift"), ParamKind::BnShift, vec![c]),
                    dw2: self.add(format!("{prefix}.{name}.dw2"), ParamKind::ConvWeight, vec![c, 1, k, k]),
                    pw2: self.add(format!("{prefix}.{name}.pw2"), ParamKind::ConvWeight, vec![c, c, 1, 1]),
                    bn2s: self.add(format!("{prefix}.{name}.bn2.scale"), ParamKind::BnScale, vec![c]),
                    bn2b: self.add(format!("{prefix}.{name}.bn2.shift"), ParamKind::BnShift, vec![c]),
                }
            }
            PrimitiveKind::DilConv3x3 | PrimitiveKind::DilConv5x5 => {
                let k = kind.kernel().expect("conv kernel");
                PrimParams::DilConv {
                    dw: self.add(format!("{prefix}.{name}.dw"), ParamKind::ConvWeight, vec![c, 1, k, k]),
                    pw: self.add(format!("{prefix}.{name}.pw"), ParamKind::ConvWeight, vec![c, c, 1, 1]),
                    bns: self.add(format!("{prefix}.{name}.bn.scale"), ParamKind::BnScale, vec![c]),
                    bnb: self.add(format!("{prefix}.{name}.bn.shift"), ParamKind::BnShift, vec![c]),
                }
            }
            PrimitiveKind::Identity if stride > 1 => PrimParams::Proj {
                w: self.add(format!("{prefix}.{name}.proj"), ParamKind::ConvWeight, vec![c, c, 1, 1]),
            },
            _ => PrimParams::None,
        };
        PrimPlan { kind, stride, params }
    }
}

fn validate_spec(spec: &NetworkSpec) -> Result<()> {
    if spec.cells < 2 {
        return Err(HanfError::InvalidArgument(format!(
            "network needs at least 2 cells, got {}",
            spec.cells
        )));
    }
    if spec.nodes < 3 {
        return Err(HanfError::InvalidArgument(format!(
            "cells need at least 3 nodes, got {}",
            spec.nodes
        )));
    }
    if spec.channels == 0 || spec.classes == 0 || spec.in_channels == 0 {
        return Err(HanfError::InvalidArgument(
            "channels, classes, and in_channels must be positive".into(),
        ));
    }
    Ok(())
}

/// Retained incoming edges per cell kind, or every edge with every
/// primitive for the supernet.
enum EdgeSource<'g> {
    AllMixed,
    FromGenotype(&'g Genotype),
}

fn build_plan(spec: NetworkSpec, edges_from: EdgeSource) -> Result<NetworkPlan> {
    validate_spec(&spec)?;
    if let EdgeSource::FromGenotype(g) = &edges_from {
        g.validate()?;
        if g.nodes != spec.nodes {
            return Err(HanfError::InvalidArgument(format!(
                "genotype has {} nodes, network spec expects {}",
                g.nodes, spec.nodes
            )));
        }
    }

    let mut b = PlanBuilder { params: Vec::new() };
    let stem_conv = b.add("stem.w".into(), ParamKind::ConvWeight, vec![spec.channels, spec.in_channels, 3, 3]);
    let stem_bns = b.add("stem.bn.scale".into(), ParamKind::BnScale, vec![spec.channels]);
    let stem_bnb = b.add("stem.bn.shift".into(), ParamKind::BnShift, vec![spec.channels]);

    let (red1, red2) = reduction_positions(spec.cells);
    let all_edges = edge_list(spec.nodes);
    let intermediate = spec.nodes - 2;

    let mut cells = Vec::with_capacity(spec.cells);
    // (channels, was_reduction) of the two preceding cell outputs
    let mut c_pp = spec.channels;
    let mut c_p = spec.channels;
    let mut prev_was_reduction = false;
    let mut width = spec.channels;

    for ci in 0..spec.cells {
        let is_reduction = ci == red1 || ci == red2;
        if is_reduction {
            width *= 2;
        }
        let kind = if is_reduction { CellKind::Reduction } else { CellKind::Normal };
        let prefix = format!("cell{ci}");
        // If the previous cell reduced, its predecessor's output is at the
        // higher resolution and must be strided down.
        let pre0 = b.proj(&format!("{prefix}.pre0"), c_pp, width, if prev_was_reduction { 2 } else { 1 });
        let pre1 = b.proj(&format!("{prefix}.pre1"), c_p, width, 1);

        let mut edges = Vec::new();
        match &edges_from {
            EdgeSource::AllMixed => {
                for (row, &(source, target)) in all_edges.iter().enumerate() {
                    let stride = if is_reduction && source < 2 { 2 } else { 1 };
                    let eprefix = format!("{prefix}.e{source}-{target}");
                    let ops = CATALOG
                        .iter()
                        .map(|&p| b.primitive(&eprefix, p, width, stride))
                        .collect();
                    edges.push(EdgePlan { source, target, arch_row: row, ops: EdgeOps::Mixed(ops) });
                }
            }
            EdgeSource::FromGenotype(g) => {
                let retained = match kind {
                    CellKind::Normal => &g.normal,
                    CellKind::Reduction => &g.reduce,
                };
                for &GenotypeEdge(op, source, target) in retained {
                    let stride = if is_reduction && source < 2 { 2 } else { 1 };
                    let row = all_edges.iter().position(|&e| e == (source, target)).expect("validated edge");
                    let eprefix = format!("{prefix}.e{source}-{target}");
                    let plan = b.primitive(&eprefix, op, width, stride);
                    edges.push(EdgePlan { source, target, arch_row: row, ops: EdgeOps::Fixed(plan) });
                }
            }
        }
        cells.push(CellPlan { kind, pre0, pre1, edges });

        c_pp = c_p;
        c_p = intermediate * width;
        prev_was_reduction = is_reduction;
    }

    let classifier_w = b.add("classifier.w".into(), ParamKind::LinearWeight, vec![spec.classes, c_p]);
    let classifier_b = b.add("classifier.b".into(), ParamKind::Bias, vec![spec.classes]);

    Ok(NetworkPlan {
        spec,
        params: b.params,
        stem_conv,
        stem_bns,
        stem_bnb,
        cells,
        classifier_w,
        classifier_b,
        mixed: matches!(edges_from, EdgeSource::AllMixed),
    })
}

/// Builds the continuous supernet: every edge mixes the full catalog,
/// architecture weights start at zero.
pub fn build_supernet(spec: NetworkSpec, seed: u64) -> Result<(NetworkPlan, Vec<Tensor>, ArchParams)> {
    let plan = build_plan(spec, EdgeSource::AllMixed)?;
    let params = plan.init_params(seed);
    let arch = ArchParams::zeros(spec.nodes);
    Ok((plan, params, arch))
}

/// Builds the discrete evaluation network for a genotype.
pub fn build_eval_network(genotype: &Genotype, spec: NetworkSpec, seed: u64) -> Result<(NetworkPlan, Vec<Tensor>)> {
    let plan = build_plan(spec, EdgeSource::FromGenotype(genotype))?;
    let params = plan.init_params(seed);
    Ok((plan, params))
}

impl NetworkPlan {
    /// Fresh parameters in declaration order, deterministic per seed.
    pub fn init_params(&self, seed: u64) -> Vec<Tensor> {
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.params
            .iter()
            .map(|m| init_param(m.kind, &m.shape, &mut rng))
            .collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|m| m.name == name)
    }

    /// Registers parameters (and arch, when given) as tape leaves. The two
    /// trainability flags let a pass request gradients for only the group
    /// it will update, which skips the other group's backward kernels.
    pub fn bind(
        &self,
        tape: &mut Tape,
        params: &[Tensor],
        arch: Option<&ArchParams>,
        train_weights: bool,
        train_arch: bool,
    ) -> Binding {
        let weights = params.iter().map(|p| tape.leaf(p.clone(), train_weights)).collect();
        let arch = arch.map(|a| ArchNodes {
            normal: tape.leaf(a.normal.clone(), train_arch),
            reduce: tape.leaf(a.reduce.clone(), train_arch),
        });
        Binding { weights, arch }
    }

    fn apply_primitive(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        plan: &PrimPlan,
        x: NodeId,
    ) -> Result<NodeId> {
        self.apply_primitive_inner(tape, binding, plan, x).map_err(|e| match e {
            HanfError::ShapeMismatch { op, detail } => HanfError::ShapeMismatch {
                op: format!("{} ({op})", plan.kind.name()),
                detail,
            },
            other => other,
        })
    }

    fn apply_primitive_inner(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        plan: &PrimPlan,
        x: NodeId,
    ) -> Result<NodeId> {
        let w = &binding.weights;
        match (&plan.params, plan.kind) {
            (PrimParams::SepConv { dw1, pw1, bn1s, bn1b, dw2, pw2, bn2s, bn2b }, kind) => {
                let k = kind.kernel().expect("conv kernel");
                let pad = (k - 1) / 2;
                let channels = tape.value(x).dim(1);
                let mut h = tape.relu(x);
                h = tape.conv2d(h, w[*dw1], ConvAttrs { stride: plan.stride, padding: pad, dilation: 1, groups: channels })?;
                h = tape.conv2d(h, w[*pw1], ConvAttrs::default())?;
                h = tape.batch_norm(h, w[*bn1s], w[*bn1b], BN_EPS)?;
                h = tape.relu(h);
                h = tape.conv2d(h, w[*dw2], ConvAttrs { stride: 1, padding: pad, dilation: 1, groups: channels })?;
                h = tape.conv2d(h, w[*pw2], ConvAttrs::default())?;
                tape.batch_norm(h, w[*bn2s], w[*bn2b], BN_EPS)
            }
            (PrimParams::DilConv { dw, pw, bns, bnb }, kind) => {
                let k = kind.kernel().expect("conv kernel");
                let pad = k - 1; // dilation 2 keeps spatial size at stride 1
                let channels = tape.value(x).dim(1);
                let mut h = tape.relu(x);
                h = tape.conv2d(h, w[*dw], ConvAttrs { stride: plan.stride, padding: pad, dilation: 2, groups: channels })?;
                h = tape.conv2d(h, w[*pw], ConvAttrs::default())?;
                tape.batch_norm(h, w[*bns], w[*bnb], BN_EPS)
            }
            (PrimParams::Proj { w: proj }, _) => {
                tape.conv2d(x, w[*proj], ConvAttrs { stride: plan.stride, padding: 0, dilation: 1, groups: 1 })
            }
            (PrimParams::None, PrimitiveKind::MaxPool3x3) => tape.max_pool(x, 3, plan.stride, 1),
            (PrimParams::None, PrimitiveKind::AvgPool3x3) => tape.avg_pool(x, 3, plan.stride, 1),
            (PrimParams::None, PrimitiveKind::Identity) => Ok(x),
            (PrimParams::None, PrimitiveKind::Zero) => {
                let v = tape.value(x);
                let (n, c, h, wd) = (v.dim(0), v.dim(1), v.dim(2), v.dim(3));
                let s = plan.stride;
                let out = Tensor::zeros(vec![n, c, h.div_ceil(s), wd.div_ceil(s)]);
                Ok(tape.constant(out))
            }
            (params, kind) => Err(HanfError::InvalidArgument(format!(
                "primitive {} has unexpected parameter layout {params:?}",
                kind.name()
            ))),
        }
    }

    fn apply_proj(&self, tape: &mut Tape, binding: &Binding, proj: &ProjPlan, x: NodeId) -> Result<NodeId> {
        let w = &binding.weights;
        let h = tape.relu(x);
        let h = tape.conv2d(h, w[proj.w], ConvAttrs { stride: proj.stride, padding: 0, dilation: 1, groups: 1 })?;
        tape.batch_norm(h, w[proj.bns], w[proj.bnb], BN_EPS)
    }

    fn mixed_edge(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        ops: &[PrimPlan],
        arch_matrix: NodeId,
        arch_row: usize,
        x: NodeId,
    ) -> Result<NodeId> {
        let row = tape.row_slice(arch_matrix, arch_row)?;
        let probs = tape.softmax(row);
        let mut acc: Option<NodeId> = None;
        for (pi, plan) in ops.iter().enumerate() {
            let y = self.apply_primitive(tape, binding, plan, x)?;
            let coeff = tape.index_scalar(probs, pi)?;
            let term = tape.mul_scalar(coeff, y)?;
            acc = Some(match acc {
                Some(a) => tape.add(a, term)?,
                None => term,
            });
        }
        Ok(acc.expect("catalog is non-empty"))
    }

    /// Forward pass to logits. `dropout` applies per-operation path dropout
    /// on fixed edges (evaluation-network training only).
    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        images: &Tensor,
        mut dropout: Option<Dropout<'_>>,
    ) -> Result<NodeId> {
        let w = &binding.weights;
        let x = tape.constant(images.clone());
        let mut h = tape.conv2d(x, w[self.stem_conv], ConvAttrs { stride: 1, padding: 1, dilation: 1, groups: 1 })?;
        h = tape.batch_norm(h, w[self.stem_bns], w[self.stem_bnb], BN_EPS)?;

        let mut prev_prev = h;
        let mut prev = h;
        for cell in &self.cells {
            let x0 = self.apply_proj(tape, binding, &cell.pre0, prev_prev)?;
            let x1 = self.apply_proj(tape, binding, &cell.pre1, prev)?;
            let mut nodes: Vec<NodeId> = vec![x0, x1];
            for target in 2..self.spec.nodes {
                let mut acc: Option<NodeId> = None;
                for edge in cell.edges.iter().filter(|e| e.target == target) {
                    let input = nodes[edge.source];
                    let value = match &edge.ops {
                        EdgeOps::Mixed(ops) => {
                            let arch = binding.arch.as_ref().expect("supernet forward needs arch");
                            let matrix = match cell.kind {
                                CellKind::Normal => arch.normal,
                                CellKind::Reduction => arch.reduce,
                            };
                            self.mixed_edge(tape, binding, ops, matrix, edge.arch_row, input)?
                        }
                        EdgeOps::Fixed(plan) => {
                            let y = self.apply_primitive(tape, binding, plan, input)?;
                            match dropout.as_mut() {
                                Some(d) if d.probability > 0.0 => {
                                    let keep = 1.0 - d.probability;
                                    let batch = tape.value(y).dim(0);
                                    let mask: Vec<f64> = (0..batch)
                                        .map(|_| if d.rng.gen::<f64>() < d.probability { 0.0 } else { 1.0 / keep })
                                        .collect();
                                    tape.mul_sample_mask(y, mask)?
                                }
                                _ => y,
                            }
                        }
                    };
                    acc = Some(match acc {
                        Some(a) => tape.add(a, value)?,
                        None => value,
                    });
                }
                // A node with no incoming retained edges cannot occur: the
                // genotype validator requires k >= 1 per node.
                nodes.push(acc.expect("every intermediate node has incoming edges"));
            }
            let out = tape.channel_concat(&nodes[2..])?;
            prev_prev = prev;
            prev = out;
        }

        let pooled = tape.global_avg_pool(prev)?;
        tape.linear(pooled, w[self.classifier_w], w[self.classifier_b])
    }

    /// Forward plus mean cross-entropy against `labels`.
    pub fn loss(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        images: &Tensor,
        labels: &[usize],
        dropout: Option<Dropout<'_>>,
    ) -> Result<(NodeId, NodeId)> {
        let logits = self.forward(tape, binding, images, dropout)?;
        let loss = tape.cross_entropy(logits, labels)?;
        Ok((loss, logits))
    }
}
