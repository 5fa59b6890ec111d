//! The inductive GNN encoder: learned attribute encoding, two stacked GNN
//! layers (neighbor pooling + self-connection + feedforward + L2
//! normalization), the suspicious-score prediction head, BCE training, and
//! the closed-form parameter count.
//!
//! Layer parameters carry two aggregation-weight variants: an f1 x f2 matrix
//! for inputs of initial-representation width and an f1 x f1 matrix for
//! hidden-width inputs. A layer's forward pass uses the variant matching its
//! input width and applies it with weights shared across the mean/max/sum
//! blocks of the aggregate (their elementwise sum). The unused variant gets
//! zero gradient. This makes the constructed encoder's parameter count equal
//! [`param_count`] exactly.

use crate::error::{Error, Result};
use crate::graph::{Graph, ATTR_COUNT};
use crate::optim::AdamSet;
use crate::tape::{Gradients, Tape, ValId};
use crate::tensor::{kernel, Real, Tensor, L2_NORM_EPS};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

/// The encoder always stacks two GNN layers.
pub const LAYER_COUNT: usize = 2;

/// Number of learned states per attribute: present / absent / masked.
pub const ATTR_STATES: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttrState {
    Present = 0,
    Absent = 1,
    Masked = 2,
}

pub fn slot_index(attr: usize, state: AttrState) -> usize {
    attr * ATTR_STATES + state as usize
}

fn state_for(value: u8, masked: bool) -> AttrState {
    if masked {
        AttrState::Masked
    } else if value == 1 {
        AttrState::Present
    } else {
        AttrState::Absent
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    /// Embedding width per attribute state.
    pub f: usize,
    /// Hidden/representation width.
    pub f1: usize,
    /// Width of the initial representations consumed by layer 1 and by every
    /// self-connection. 7f for attribute-encoded inputs.
    pub f2: usize,
    /// Decision threshold on the suspicious score.
    pub rho: f64,
}

impl EncoderConfig {
    /// Standard configuration where initial representations come from the
    /// attribute encoding, so f2 = 7f.
    pub fn attribute_based(f: usize, f1: usize) -> Self {
        EncoderConfig {
            f,
            f1,
            f2: ATTR_COUNT * f,
            rho: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.f == 0 || self.f1 == 0 || self.f2 == 0 {
            return Err(Error::config("encoder widths must be positive".to_string()));
        }
        if !(0.0 < self.rho && self.rho < 1.0) {
            return Err(Error::config(format!(
                "decision threshold must lie in (0,1), got {}",
                self.rho
            )));
        }
        Ok(())
    }
}

// ── Parameters ───────────────────────────────────────────────────────────

/// 7 attributes x 3 states of f-dimensional learned vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeTable<F> {
    f: usize,
    slots: Vec<Tensor<F>>,
}

impl<F: Real> AttributeTable<F> {
    pub fn init(f: usize, rng: &mut ChaCha8Rng) -> Self {
        let slots = (0..ATTR_COUNT * ATTR_STATES)
            .map(|_| sample_tensor(vec![f], 1.0, rng))
            .collect();
        AttributeTable { f, slots }
    }

    pub fn width(&self) -> usize {
        self.f
    }

    pub fn slot(&self, attr: usize, state: AttrState) -> &Tensor<F> {
        &self.slots[slot_index(attr, state)]
    }

    pub fn slot_mut(&mut self, attr: usize, state: AttrState) -> &mut Tensor<F> {
        &mut self.slots[slot_index(attr, state)]
    }

    /// Concatenation over attributes of the state vector selected by the
    /// attribute value, with `masked` positions forced to the masked state.
    pub fn encode(&self, attrs: &[u8; ATTR_COUNT], masked: &[usize]) -> Vec<F> {
        let mut out = Vec::with_capacity(ATTR_COUNT * self.f);
        for (attr, &value) in attrs.iter().enumerate() {
            let state = state_for(value, masked.contains(&attr));
            out.extend_from_slice(self.slot(attr, state).data());
        }
        out
    }

    /// Slot selection without materializing the vector (used when recording).
    pub fn slot_choices(attrs: &[u8; ATTR_COUNT], masked: &[usize]) -> [usize; ATTR_COUNT] {
        let mut out = [0usize; ATTR_COUNT];
        for (attr, &value) in attrs.iter().enumerate() {
            out[attr] = slot_index(attr, state_for(value, masked.contains(&attr)));
        }
        out
    }
}

/// Standalone attribute-encoding operation.
pub fn encode_attributes<F: Real>(
    table: &AttributeTable<F>,
    attrs: &[u8; ATTR_COUNT],
    masked: &[usize],
) -> Vec<F> {
    table.encode(attrs, masked)
}

/// One GNN layer's parameters. Both aggregation-weight variants are present
/// in every layer (see the module docs).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<F> {
    pub w_g_first: Tensor<F>,
    pub b_g_first: Tensor<F>,
    pub w_g_later: Tensor<F>,
    pub b_g_later: Tensor<F>,
    pub w_s: Tensor<F>,
    pub b_s: Tensor<F>,
    pub w_q: Tensor<F>,
    pub b_q: Tensor<F>,
}

impl<F: Real> LayerParams<F> {
    fn init(f1: usize, f2: usize, rng: &mut ChaCha8Rng) -> Self {
        LayerParams {
            w_g_first: sample_matrix(f1, f2, rng),
            b_g_first: Tensor::zeros(vec![f1]),
            w_g_later: sample_matrix(f1, f1, rng),
            b_g_later: Tensor::zeros(vec![f1]),
            w_s: sample_matrix(f1, f2, rng),
            b_s: Tensor::zeros(vec![f1]),
            w_q: sample_matrix(f1, 2 * f1, rng),
            b_q: Tensor::zeros(vec![f1]),
        }
    }
}

/// Suspicious-score head: three stacked affine maps under a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionHead<F> {
    pub w_p1: Tensor<F>,
    pub b_p1: Tensor<F>,
    pub w_p2: Tensor<F>,
    pub b_p2: Tensor<F>,
    pub w_p3: Tensor<F>,
    pub b_p3: Tensor<F>,
}

impl<F: Real> PredictionHead<F> {
    fn init(f1: usize, rng: &mut ChaCha8Rng) -> Self {
        PredictionHead {
            w_p1: sample_matrix(2 * f1, f1, rng),
            b_p1: Tensor::zeros(vec![2 * f1]),
            w_p2: sample_matrix(f1, 2 * f1, rng),
            b_p2: Tensor::zeros(vec![f1]),
            w_p3: sample_matrix(1, f1, rng),
            b_p3: Tensor::zeros(vec![1]),
        }
    }

    pub fn score(&self, h: &[F]) -> F {
        let f1 = h.len();
        let mut a1 = vec![F::zero(); 2 * f1];
        kernel::affine_into(self.w_p1.data(), 2 * f1, f1, self.b_p1.data(), h, &mut a1);
        let mut a2 = vec![F::zero(); f1];
        kernel::affine_into(self.w_p2.data(), f1, 2 * f1, self.b_p2.data(), &a1, &mut a2);
        let mut z = vec![F::zero(); 1];
        kernel::affine_into(self.w_p3.data(), 1, f1, self.b_p3.data(), &a2, &mut z);
        kernel::sigmoid_scalar(z[0])
    }
}

/// Weights ~ N(0, 1/fan_in), where fan_in is the input width.
fn sample_matrix<F: Real>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<F> {
    sample_tensor(vec![rows, cols], 1.0 / (cols as f64).sqrt(), rng)
}

fn sample_tensor<F: Real>(dims: Vec<usize>, std: f64, rng: &mut ChaCha8Rng) -> Tensor<F> {
    let len: usize = dims.iter().product();
    let normal = rand_distr::StandardNormal;
    let data = (0..len)
        .map(|_| {
            let z: f64 = normal.sample(rng);
            F::cast(z * std)
        })
        .collect();
    Tensor::new(dims, data).expect("sampled tensor is well-formed")
}

// ── The GNN core (table + stacked layers) ────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct GnnCore<F> {
    pub f1: usize,
    pub f2: usize,
    pub table: AttributeTable<F>,
    pub layers: Vec<LayerParams<F>>,
}

impl<F: Real> GnnCore<F> {
    pub fn init(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        let table = AttributeTable::init(config.f, rng);
        let layers = (0..LAYER_COUNT)
            .map(|_| LayerParams::init(config.f1, config.f2, rng))
            .collect();
        GnnCore {
            f1: config.f1,
            f2: config.f2,
            table,
            layers,
        }
    }

    /// Attribute-encoded initial representations for every node (unmasked).
    pub fn initial_reps(&self, graph: &Graph) -> Vec<Vec<F>> {
        (0..graph.node_count())
            .map(|i| self.table.encode(graph.attrs(i), &[]))
            .collect()
    }

    /// Run the stacked layers from the given initial representations.
    pub fn forward_from(&self, graph: &Graph, h0: &[Vec<F>]) -> Vec<Vec<F>> {
        let mut h_prev: Vec<Vec<F>> = h0.to_vec();
        for (t, layer) in self.layers.iter().enumerate() {
            let width_in = if t == 0 { self.f2 } else { self.f1 };
            let mut h_next = Vec::with_capacity(h_prev.len());
            for i in 0..graph.node_count() {
                let nbr_rows: Vec<&[F]> = graph
                    .neighbors(i)
                    .iter()
                    .map(|&j| h_prev[j as usize].as_slice())
                    .collect();
                h_next.push(gnn_layer_node(
                    layer,
                    t == 0,
                    &nbr_rows,
                    width_in,
                    &h0[i],
                    self.f1,
                    self.f2,
                ));
            }
            h_prev = h_next;
        }
        h_prev
    }

    pub fn forward(&self, graph: &Graph) -> Vec<Vec<F>> {
        let h0 = self.initial_reps(graph);
        self.forward_from(graph, &h0)
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for attr in 0..ATTR_COUNT {
            for (state, name) in [(AttrState::Present, "present"), (AttrState::Absent, "absent"), (AttrState::Masked, "masked")] {
                out.push((
                    format!("{prefix}table.a{attr}.{name}"),
                    &self.table.slots[slot_index(attr, state)],
                ));
            }
        }
        for (t, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}layer{t}.w_g_first"), &l.w_g_first));
            out.push((format!("{prefix}layer{t}.b_g_first"), &l.b_g_first));
            out.push((format!("{prefix}layer{t}.w_g_later"), &l.w_g_later));
            out.push((format!("{prefix}layer{t}.b_g_later"), &l.b_g_later));
            out.push((format!("{prefix}layer{t}.w_s"), &l.w_s));
            out.push((format!("{prefix}layer{t}.b_s"), &l.b_s));
            out.push((format!("{prefix}layer{t}.w_q"), &l.w_q));
            out.push((format!("{prefix}layer{t}.b_q"), &l.b_q));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out: Vec<&mut Tensor<F>> = self.table.slots.iter_mut().collect();
        for l in &mut self.layers {
            out.push(&mut l.w_g_first);
            out.push(&mut l.b_g_first);
            out.push(&mut l.w_g_later);
            out.push(&mut l.b_g_later);
            out.push(&mut l.w_s);
            out.push(&mut l.b_s);
            out.push(&mut l.w_q);
            out.push(&mut l.b_q);
        }
        out
    }

    /// Layer + table parameter total (the table is counted separately from
    /// the closed-form encoder size).
    pub fn layer_param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| {
                l.w_g_first.len()
                    + l.b_g_first.len()
                    + l.w_g_later.len()
                    + l.b_g_later.len()
                    + l.w_s.len()
                    + l.b_s.len()
                    + l.w_q.len()
                    + l.b_q.len()
            })
            .sum()
    }

    pub fn table_param_count(&self) -> usize {
        self.table.slots.iter().map(|s| s.len()).sum()
    }
}

/// mean ⊕ max ⊕ sum over neighbor rows, ascending node-id order, zero-filled
/// when the neighborhood is empty.
pub fn aggregate_neighbors<F: Real>(h_prev: &[Vec<F>], neighbors: &[u32], width: usize) -> Vec<F> {
    let mut out = vec![F::zero(); 3 * width];
    fill_pool_blocks(
        &neighbors
            .iter()
            .map(|&j| h_prev[j as usize].as_slice())
            .collect::<Vec<_>>(),
        width,
        &mut out,
    );
    out
}

fn fill_pool_blocks<F: Real>(rows: &[&[F]], width: usize, out: &mut [F]) {
    debug_assert_eq!(out.len(), 3 * width);
    if rows.is_empty() {
        return;
    }
    let k = F::cast(rows.len() as f64);
    for row in rows {
        for (j, v) in row.iter().enumerate() {
            out[2 * width + j] = out[2 * width + j] + *v;
        }
    }
    for j in 0..width {
        out[j] = out[2 * width + j] / k;
    }
    out[width..2 * width].copy_from_slice(rows[0]);
    for row in &rows[1..] {
        for (j, v) in row.iter().enumerate() {
            if *v > out[width + j] {
                out[width + j] = *v;
            }
        }
    }
}

/// One layer's output for one node, given gathered neighbor rows and the
/// node's initial representation.
pub(crate) fn gnn_layer_node<F: Real>(
    layer: &LayerParams<F>,
    use_first: bool,
    nbr_rows: &[&[F]],
    width_in: usize,
    h0_row: &[F],
    f1: usize,
    f2: usize,
) -> Vec<F> {
    let mut pooled = vec![F::zero(); 3 * width_in];
    fill_pool_blocks(nbr_rows, width_in, &mut pooled);
    let mut folded = vec![F::zero(); width_in];
    for j in 0..width_in {
        folded[j] = pooled[j] + pooled[width_in + j] + pooled[2 * width_in + j];
    }
    let (w_g, b_g) = if use_first {
        (&layer.w_g_first, &layer.b_g_first)
    } else {
        (&layer.w_g_later, &layer.b_g_later)
    };
    let mut g = vec![F::zero(); f1];
    kernel::affine_into(w_g.data(), f1, width_in, b_g.data(), &folded, &mut g);
    let mut s = vec![F::zero(); f1];
    kernel::affine_into(layer.w_s.data(), f1, f2, layer.b_s.data(), h0_row, &mut s);
    let mut e = Vec::with_capacity(2 * f1);
    e.extend_from_slice(&g);
    e.extend_from_slice(&s);
    kernel::relu_in_place(&mut e);
    let mut q = vec![F::zero(); f1];
    kernel::affine_into(layer.w_q.data(), f1, 2 * f1, layer.b_q.data(), &e, &mut q);
    kernel::relu_in_place(&mut q);
    kernel::l2_normalize_in_place(&mut q, F::cast(L2_NORM_EPS));
    q
}

/// Apply one GNN layer to every node: the spec-level layer operation.
pub fn gnn_layer<F: Real>(
    layer: &LayerParams<F>,
    use_first: bool,
    h_prev: &[Vec<F>],
    h0: &[Vec<F>],
    graph: &Graph,
    f1: usize,
    f2: usize,
) -> Vec<Vec<F>> {
    let width_in = if h_prev.is_empty() { 0 } else { h_prev[0].len() };
    (0..graph.node_count())
        .map(|i| {
            let nbr_rows: Vec<&[F]> = graph
                .neighbors(i)
                .iter()
                .map(|&j| h_prev[j as usize].as_slice())
                .collect();
            gnn_layer_node(layer, use_first, &nbr_rows, width_in, &h0[i], f1, f2)
        })
        .collect()
}

// ── The full encoder ─────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct IgEncoder<F> {
    pub config: EncoderConfig,
    pub core: GnnCore<F>,
    pub head: PredictionHead<F>,
}

impl<F: Real> IgEncoder<F> {
    pub fn init(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let core = GnnCore::init(config, rng);
        let head = PredictionHead::init(config.f1, rng);
        Ok(IgEncoder {
            config: config.clone(),
            core,
            head,
        })
    }

    /// Final representations and per-node suspicious scores.
    pub fn forward(&self, graph: &Graph) -> (Vec<Vec<F>>, Vec<F>) {
        let reps = self.core.forward(graph);
        let scores = reps.iter().map(|h| self.head.score(h)).collect();
        (reps, scores)
    }

    /// Trainable parameters excluding the attribute table; equals
    /// `param_count(LAYER_COUNT, f1, f2)` by construction.
    pub fn trainable_param_count(&self) -> usize {
        let head = self.head.w_p1.len()
            + self.head.b_p1.len()
            + self.head.w_p2.len()
            + self.head.b_p2.len()
            + self.head.w_p3.len()
            + self.head.b_p3.len();
        self.core.layer_param_count() + head
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor<F>)> {
        let mut out = self.core.named_tensors(prefix);
        out.push((format!("{prefix}head.w_p1"), &self.head.w_p1));
        out.push((format!("{prefix}head.b_p1"), &self.head.b_p1));
        out.push((format!("{prefix}head.w_p2"), &self.head.w_p2));
        out.push((format!("{prefix}head.b_p2"), &self.head.b_p2));
        out.push((format!("{prefix}head.w_p3"), &self.head.w_p3));
        out.push((format!("{prefix}head.b_p3"), &self.head.b_p3));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = self.core.tensors_mut();
        out.push(&mut self.head.w_p1);
        out.push(&mut self.head.b_p1);
        out.push(&mut self.head.w_p2);
        out.push(&mut self.head.b_p2);
        out.push(&mut self.head.w_p3);
        out.push(&mut self.head.b_p3);
        out
    }

    pub fn param_dims(&mut self) -> Vec<Vec<usize>> {
        self.tensors_mut().iter().map(|t| t.dims().to_vec()).collect()
    }

    pub fn flat_params(&self) -> Vec<F> {
        let mut out = Vec::new();
        for (_, t) in self.named_tensors("") {
            out.extend_from_slice(t.data());
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[F]) -> Result<()> {
        let mut offset = 0;
        for t in self.tensors_mut() {
            let len = t.len();
            if offset + len > flat.len() {
                return Err(Error::shape("flat parameter vector too short".to_string()));
            }
            t.data_mut().copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        if offset != flat.len() {
            return Err(Error::shape(format!(
                "flat parameter vector has {} entries, model needs {offset}",
                flat.len()
            )));
        }
        Ok(())
    }
}

/// Closed-form trainable parameter count of an l-layer encoder (attribute
/// table excluded): l*(3*f1 + 2*f2 + 4)*f1 for the layers plus
/// (4*f1 + 4)*f1 + 1 for the head.
pub fn param_count(l: usize, f1: usize, f2: usize) -> u64 {
    let (l, f1, f2) = (l as u64, f1 as u64, f2 as u64);
    l * (3 * f1 + 2 * f2 + 4) * f1 + (4 * f1 + 4) * f1 + 1
}

// ── Tape recording ───────────────────────────────────────────────────────

pub struct LayerIds {
    pub w_g_first: ValId,
    pub b_g_first: ValId,
    pub w_g_later: ValId,
    pub b_g_later: ValId,
    pub w_s: ValId,
    pub b_s: ValId,
    pub w_q: ValId,
    pub b_q: ValId,
}

pub struct CoreIds {
    pub table: Vec<ValId>,
    pub layers: Vec<LayerIds>,
    pub f1: usize,
    pub f2: usize,
}

pub struct HeadIds {
    pub w_p1: ValId,
    pub b_p1: ValId,
    pub w_p2: ValId,
    pub b_p2: ValId,
    pub w_p3: ValId,
    pub b_p3: ValId,
}

/// Register core parameters on the tape, in the canonical tensor order.
pub fn register_core<F: Real>(tape: &mut Tape<F>, core: &GnnCore<F>) -> CoreIds {
    let table = core.table.slots.iter().map(|s| tape.leaf(s.data())).collect();
    let layers = core
        .layers
        .iter()
        .map(|l| LayerIds {
            w_g_first: tape.leaf(l.w_g_first.data()),
            b_g_first: tape.leaf(l.b_g_first.data()),
            w_g_later: tape.leaf(l.w_g_later.data()),
            b_g_later: tape.leaf(l.b_g_later.data()),
            w_s: tape.leaf(l.w_s.data()),
            b_s: tape.leaf(l.b_s.data()),
            w_q: tape.leaf(l.w_q.data()),
            b_q: tape.leaf(l.b_q.data()),
        })
        .collect();
    CoreIds {
        table,
        layers,
        f1: core.f1,
        f2: core.f2,
    }
}

pub fn register_head<F: Real>(tape: &mut Tape<F>, head: &PredictionHead<F>) -> HeadIds {
    HeadIds {
        w_p1: tape.leaf(head.w_p1.data()),
        b_p1: tape.leaf(head.b_p1.data()),
        w_p2: tape.leaf(head.w_p2.data()),
        b_p2: tape.leaf(head.b_p2.data()),
        w_p3: tape.leaf(head.w_p3.data()),
        b_p3: tape.leaf(head.b_p3.data()),
    }
}

impl CoreIds {
    /// Ids in the same order as `GnnCore::tensors_mut`.
    pub fn flat(&self) -> Vec<ValId> {
        let mut out = self.table.clone();
        for l in &self.layers {
            out.extend_from_slice(&[
                l.w_g_first,
                l.b_g_first,
                l.w_g_later,
                l.b_g_later,
                l.w_s,
                l.b_s,
                l.w_q,
                l.b_q,
            ]);
        }
        out
    }
}

impl HeadIds {
    pub fn flat(&self) -> Vec<ValId> {
        vec![self.w_p1, self.b_p1, self.w_p2, self.b_p2, self.w_p3, self.b_p3]
    }
}

/// Record the attribute-encoded initial representation of one node.
pub fn record_encoded_attrs<F: Real>(
    tape: &mut Tape<F>,
    core_ids: &CoreIds,
    attrs: &[u8; ATTR_COUNT],
    masked: &[usize],
) -> ValId {
    let choices = AttributeTable::<F>::slot_choices(attrs, masked);
    let parts: Vec<ValId> = choices.iter().map(|&c| core_ids.table[c]).collect();
    tape.concat(&parts)
}

/// Record one layer's output for one node.
pub fn record_layer_node<F: Real>(
    tape: &mut Tape<F>,
    ids: &LayerIds,
    use_first: bool,
    nbr_ids: &[ValId],
    width_in: usize,
    h0_id: ValId,
    f1: usize,
    f2: usize,
) -> ValId {
    let pooled = tape.pool_triple(nbr_ids, width_in);
    let folded = tape.fold_thirds(pooled);
    let (w_g, b_g) = if use_first {
        (ids.w_g_first, ids.b_g_first)
    } else {
        (ids.w_g_later, ids.b_g_later)
    };
    let g = tape.affine(w_g, f1, width_in, b_g, folded);
    let s = tape.affine(ids.w_s, f1, f2, ids.b_s, h0_id);
    let gs = tape.concat(&[g, s]);
    let e = tape.relu(gs);
    let qa = tape.affine(ids.w_q, f1, 2 * f1, ids.b_q, e);
    let q = tape.relu(qa);
    tape.l2_normalize(q)
}

/// Record the stacked layers over the whole graph; returns final rep ids.
pub fn record_core_forward<F: Real>(
    tape: &mut Tape<F>,
    core_ids: &CoreIds,
    graph: &Graph,
    h0_ids: &[ValId],
) -> Vec<ValId> {
    let mut h_prev: Vec<ValId> = h0_ids.to_vec();
    for (t, layer_ids) in core_ids.layers.iter().enumerate() {
        let width_in = if t == 0 { core_ids.f2 } else { core_ids.f1 };
        let mut h_next = Vec::with_capacity(h_prev.len());
        for i in 0..graph.node_count() {
            let nbr_ids: Vec<ValId> = graph
                .neighbors(i)
                .iter()
                .map(|&j| h_prev[j as usize])
                .collect();
            h_next.push(record_layer_node(
                tape,
                layer_ids,
                t == 0,
                &nbr_ids,
                width_in,
                h0_ids[i],
                core_ids.f1,
                core_ids.f2,
            ));
        }
        h_prev = h_next;
    }
    h_prev
}

/// Record the prediction head on one representation; returns the sigmoid
/// probability id.
pub fn record_head_score<F: Real>(
    tape: &mut Tape<F>,
    head_ids: &HeadIds,
    h_id: ValId,
    f1: usize,
) -> ValId {
    let a1 = tape.affine(head_ids.w_p1, 2 * f1, f1, head_ids.b_p1, h_id);
    let a2 = tape.affine(head_ids.w_p2, f1, 2 * f1, head_ids.b_p2, a1);
    let z = tape.affine(head_ids.w_p3, 1, f1, head_ids.b_p3, a2);
    tape.sigmoid(z)
}

// ── Training ─────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct TrainOptions {
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Epochs without probe improvement tolerated before stopping at the
    /// best-probe snapshot. 1 reproduces stop-at-first-decrease.
    pub probe_patience: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            max_epochs: 200,
            learning_rate: 1e-3,
            probe_patience: 10,
        }
    }
}

/// Per-epoch model view handed to a training probe.
pub struct ProbeView<'a, F: Real> {
    pub reps: &'a [Vec<F>],
    /// Attribute vectors after pseudo-label replacement (attribute encoder
    /// training only).
    pub replaced_attrs: Option<&'a [[u8; ATTR_COUNT]]>,
    /// Per-node suspicious scores (supervised encoders only).
    pub scores: Option<&'a [F]>,
}

/// Evaluates model quality once per epoch; training stops at the epoch
/// before the returned value first decreases.
pub trait TrainProbe<F: Real> {
    fn evaluate(&mut self, epoch: usize, view: &ProbeView<'_, F>) -> Result<f64>;
}

pub struct TrainOutcome<M> {
    pub model: M,
    pub losses: Vec<f64>,
    pub epochs_run: usize,
    pub stopped_early: bool,
}

/// Tracks the best-probe snapshot; stops once the probe has gone
/// `patience` epochs without improving and hands the peak snapshot back.
pub(crate) struct EarlyStopper<M: Clone> {
    patience: usize,
    best: Option<(M, f64)>,
    since_best: usize,
}

impl<M: Clone> EarlyStopper<M> {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience: patience.max(1),
            best: None,
            since_best: 0,
        }
    }

    /// Feed one probe value; returns the model to keep when training should
    /// stop.
    pub fn check(&mut self, current: &M, value: f64) -> Option<M> {
        match &self.best {
            Some((_, best_value)) if value <= *best_value => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    return Some(self.best.as_ref().unwrap().0.clone());
                }
            }
            _ => {
                self.best = Some((current.clone(), value));
                self.since_best = 0;
            }
        }
        None
    }

    /// Best snapshot seen so far (max-epochs exit).
    pub fn into_best(self) -> Option<M> {
        self.best.map(|(m, _)| m)
    }
}

/// Supervised BCE training of the encoder over the labeled set.
pub fn ig_train<F: Real>(
    graph: &Graph,
    labeled: &[(u32, u8)],
    config: &EncoderConfig,
    opts: &TrainOptions,
    seed: u64,
    mut probe: Option<&mut dyn TrainProbe<F>>,
) -> Result<TrainOutcome<IgEncoder<F>>> {
    check_both_classes(labeled)?;
    let mut rng = crate::seed::stream_rng(seed, "ig-init");
    let mut model = IgEncoder::init(config, &mut rng)?;
    let dims = model.param_dims();
    let mut adam = AdamSet::new(&dims, opts.learning_rate);
    let mut stopper = EarlyStopper::new(opts.probe_patience);
    let mut losses = Vec::new();

    for epoch in 1..=opts.max_epochs {
        let loss = ig_epoch(&mut model, &mut adam, graph, labeled)?;
        losses.push(loss);
        if let Some(p) = probe.as_mut() {
            let (reps, scores) = model.forward(graph);
            let value = p.evaluate(
                epoch,
                &ProbeView {
                    reps: &reps,
                    replaced_attrs: None,
                    scores: Some(&scores),
                },
            )?;
            if let Some(kept) = stopper.check(&model, value) {
                return Ok(TrainOutcome {
                    model: kept,
                    losses,
                    epochs_run: epoch,
                    stopped_early: true,
                });
            }
        }
    }
    let epochs = opts.max_epochs;
    let model = stopper.into_best().unwrap_or(model);
    Ok(TrainOutcome {
        model,
        losses,
        epochs_run: epochs,
        stopped_early: false,
    })
}

pub(crate) fn check_both_classes(labeled: &[(u32, u8)]) -> Result<()> {
    let pos = labeled.iter().filter(|&&(_, y)| y == 1).count();
    if labeled.is_empty() || pos == 0 || pos == labeled.len() {
        return Err(Error::config(
            "training labels must contain at least one node of each class".to_string(),
        ));
    }
    Ok(())
}

fn ig_epoch<F: Real>(
    model: &mut IgEncoder<F>,
    adam: &mut AdamSet<F>,
    graph: &Graph,
    labeled: &[(u32, u8)],
) -> Result<f64> {
    let (loss, grads, flat_ids) = ig_loss_tape(model, graph, labeled)?;
    apply_grads(model.tensors_mut(), grads, &flat_ids, adam)
        .map(|_| loss)
}

fn ig_loss_tape<F: Real>(
    model: &IgEncoder<F>,
    graph: &Graph,
    labeled: &[(u32, u8)],
) -> Result<(f64, Gradients<F>, Vec<ValId>)> {
    let mut tape = Tape::new();
    let core_ids = register_core(&mut tape, &model.core);
    let head_ids = register_head(&mut tape, &model.head);
    let mut flat_ids = core_ids.flat();
    flat_ids.extend(head_ids.flat());

    let h0: Vec<ValId> = (0..graph.node_count())
        .map(|i| record_encoded_attrs(&mut tape, &core_ids, graph.attrs(i), &[]))
        .collect();
    let reps = record_core_forward(&mut tape, &core_ids, graph, &h0);
    let mut probs = Vec::with_capacity(labeled.len());
    let mut targets = Vec::with_capacity(labeled.len());
    for &(node, y) in labeled {
        probs.push(record_head_score(
            &mut tape,
            &head_ids,
            reps[node as usize],
            model.core.f1,
        ));
        targets.push(F::cast(y as f64));
    }
    let loss_id = tape.bce_mean(&probs, &targets);
    let loss = tape.value(loss_id)[0].as_f64();
    let grads = tape.backward(loss_id)?;
    Ok((loss, grads, flat_ids))
}

pub(crate) fn apply_grads<F: Real>(
    mut params: Vec<&mut Tensor<F>>,
    mut grads: Gradients<F>,
    flat_ids: &[ValId],
    adam: &mut AdamSet<F>,
) -> Result<()> {
    let grad_vecs: Vec<Vec<F>> = flat_ids.iter().map(|&id| grads.take(id)).collect();
    adam.step(&mut params, &grad_vecs)
}

/// Loss and flat analytic gradient of the supervised BCE objective at the
/// given flat parameter vector (gradient-check entry point).
pub fn ig_loss_and_grad<F: Real>(
    template: &IgEncoder<F>,
    graph: &Graph,
    labeled: &[(u32, u8)],
    flat: &[F],
) -> Result<(f64, Vec<F>)> {
    let mut model = template.clone();
    model.set_flat_params(flat)?;
    let (loss, mut grads, flat_ids) = ig_loss_tape(&model, graph, labeled)?;
    let mut out = Vec::with_capacity(flat.len());
    for &id in &flat_ids {
        out.extend_from_slice(&grads.take(id));
    }
    Ok((loss, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::tape::grad_check;
    use rand::Rng;
    use rand::SeedableRng;

    fn attrs_cycled(n: usize) -> Vec<[u8; ATTR_COUNT]> {
        (0..n)
            .map(|i| {
                let mut a = [0u8; ATTR_COUNT];
                for (d, slot) in a.iter_mut().enumerate() {
                    *slot = ((i + d) % 3 == 0) as u8;
                }
                a
            })
            .collect()
    }

    fn path_graph(n: usize) -> Graph {
        let edges: Vec<(u32, u32)> = (1..n as u32).map(|i| (i - 1, i)).collect();
        Graph::build(n, &edges, attrs_cycled(n), &[]).unwrap()
    }

    fn random_graph(n: usize, extra_edges: usize, seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut edges: Vec<(u32, u32)> = (1..n as u32)
            .map(|i| (i, rng.random_range(0..i)))
            .collect();
        for _ in 0..extra_edges {
            let u = rng.random_range(0..n as u32);
            let v = rng.random_range(0..n as u32);
            edges.push((u, v));
        }
        Graph::build(n, &edges, attrs_cycled(n), &[]).unwrap()
    }

    #[test]
    fn encode_attributes_selects_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let table = AttributeTable::<f64>::init(3, &mut rng);
        let zeros = table.encode(&[0; 7], &[]);
        let ones = table.encode(&[1; 7], &[]);
        for attr in 0..ATTR_COUNT {
            assert_eq!(
                &zeros[attr * 3..(attr + 1) * 3],
                table.slot(attr, AttrState::Absent).data()
            );
            assert_eq!(
                &ones[attr * 3..(attr + 1) * 3],
                table.slot(attr, AttrState::Present).data()
            );
        }
        let masked = table.encode(&[1; 7], &[1, 3]);
        for attr in 0..ATTR_COUNT {
            let expect = if attr == 1 || attr == 3 {
                table.slot(attr, AttrState::Masked)
            } else {
                table.slot(attr, AttrState::Present)
            };
            assert_eq!(&masked[attr * 3..(attr + 1) * 3], expect.data());
        }
    }

    #[test]
    fn aggregate_neighbors_examples() {
        let h = vec![vec![1.0f64, 0.0], vec![0.0, 1.0], vec![2.0, 3.0]];
        assert_eq!(
            aggregate_neighbors(&h, &[0, 1], 2),
            vec![0.5, 0.5, 1.0, 1.0, 1.0, 1.0]
        );
        assert_eq!(
            aggregate_neighbors(&h, &[2], 2),
            vec![2.0, 3.0, 2.0, 3.0, 2.0, 3.0]
        );
        assert_eq!(aggregate_neighbors(&h, &[], 2), vec![0.0; 6]);
    }

    #[test]
    fn zero_params_give_zero_layer_output() {
        let cfg = EncoderConfig::attribute_based(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut enc = IgEncoder::<f64>::init(&cfg, &mut rng).unwrap();
        for t in enc.tensors_mut() {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let g = path_graph(3);
        let reps = enc.core.forward(&g);
        assert!(reps.iter().all(|r| r.iter().all(|&v| v == 0.0)));
        // zero head weights score 0.5 everywhere
        let (_, scores) = enc.forward(&g);
        assert!(scores.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn isolated_node_uses_only_the_self_branch() {
        let cfg = EncoderConfig::attribute_based(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = IgEncoder::<f64>::init(&cfg, &mut rng).unwrap();
        // isolated node in a 3-node graph with one edge between the others
        let g = Graph::build(3, &[(1, 2)], attrs_cycled(3), &[]).unwrap();
        let reps = enc.core.forward(&g);
        // recompute node 0 by hand with a zero aggregate
        let h0 = enc.core.table.encode(g.attrs(0), &[]);
        let expect = gnn_layer_node(&enc.core.layers[0], true, &[], cfg.f2, &h0, cfg.f1, cfg.f2);
        let again =
            gnn_layer_node(&enc.core.layers[1], false, &[], cfg.f1, &h0, cfg.f1, cfg.f2);
        let _ = expect;
        assert_eq!(reps[0], again);
    }

    /// Straight-line f64 oracle: recompute the full forward pass directly
    /// from the layer equations, independent of the production code path.
    fn oracle_forward(enc: &IgEncoder<f64>, g: &Graph) -> (Vec<Vec<f64>>, Vec<f64>) {
        let f1 = enc.core.f1;
        let f2 = enc.core.f2;
        let n = g.node_count();
        let h0: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut v = Vec::new();
                for (attr, &a) in g.attrs(i).iter().enumerate() {
                    let state = if a == 1 { AttrState::Present } else { AttrState::Absent };
                    v.extend_from_slice(enc.core.table.slot(attr, state).data());
                }
                v
            })
            .collect();
        let matvec = |w: &Tensor<f64>, b: &Tensor<f64>, x: &[f64]| -> Vec<f64> {
            let rows = w.dims()[0];
            let cols = w.dims()[1];
            (0..rows)
                .map(|i| {
                    let mut acc = b.data()[i];
                    for j in 0..cols {
                        acc += w.data()[i * cols + j] * x[j];
                    }
                    acc
                })
                .collect()
        };
        let mut h = h0.clone();
        for (t, layer) in enc.core.layers.iter().enumerate() {
            let d = if t == 0 { f2 } else { f1 };
            let mut next = Vec::new();
            for i in 0..n {
                let nbrs = g.neighbors(i);
                let mut mean = vec![0.0; d];
                let mut mx = vec![f64::NEG_INFINITY; d];
                let mut sum = vec![0.0; d];
                for &j in nbrs {
                    for k in 0..d {
                        sum[k] += h[j as usize][k];
                        mx[k] = mx[k].max(h[j as usize][k]);
                    }
                }
                if nbrs.is_empty() {
                    mx = vec![0.0; d];
                } else {
                    for k in 0..d {
                        mean[k] = sum[k] / nbrs.len() as f64;
                    }
                }
                let folded: Vec<f64> = (0..d).map(|k| mean[k] + mx[k] + sum[k]).collect();
                let (wg, bg) = if t == 0 {
                    (&layer.w_g_first, &layer.b_g_first)
                } else {
                    (&layer.w_g_later, &layer.b_g_later)
                };
                let gv = matvec(wg, bg, &folded);
                let sv = matvec(&layer.w_s, &layer.b_s, &h0[i]);
                let e: Vec<f64> = gv
                    .iter()
                    .chain(sv.iter())
                    .map(|&v| if v > 0.0 { v } else { 0.0 })
                    .collect();
                let q: Vec<f64> = matvec(&layer.w_q, &layer.b_q, &e)
                    .into_iter()
                    .map(|v| if v > 0.0 { v } else { 0.0 })
                    .collect();
                let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
                let denom = if norm > L2_NORM_EPS { norm } else { L2_NORM_EPS };
                next.push(q.into_iter().map(|v| v / denom).collect());
            }
            h = next;
        }
        let scores = h
            .iter()
            .map(|hi| {
                let a1 = matvec(&enc.head.w_p1, &enc.head.b_p1, hi);
                let a2 = matvec(&enc.head.w_p2, &enc.head.b_p2, &a1);
                let z = matvec(&enc.head.w_p3, &enc.head.b_p3, &a2);
                1.0 / (1.0 + (-z[0]).exp())
            })
            .collect();
        (h, scores)
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        for (n, seed) in [(3usize, 1u64), (10, 7)] {
            let g = if n == 3 {
                path_graph(3)
            } else {
                random_graph(10, 6, seed)
            };
            let cfg = EncoderConfig::attribute_based(2, 4);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let enc = IgEncoder::<f64>::init(&cfg, &mut rng).unwrap();
            let (reps, scores) = enc.forward(&g);
            let (oracle_reps, oracle_scores) = oracle_forward(&enc, &g);
            for i in 0..g.node_count() {
                for k in 0..cfg.f1 {
                    assert!(
                        (reps[i][k] - oracle_reps[i][k]).abs() < 1e-6,
                        "rep mismatch at node {i} dim {k}"
                    );
                }
                assert!((scores[i] - oracle_scores[i]).abs() < 1e-6);
                assert!(0.0 < scores[i] && scores[i] < 1.0);
            }
        }
    }

    #[test]
    fn final_rep_norms_are_unit_or_zero() {
        let cfg = EncoderConfig::attribute_based(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let enc = IgEncoder::<f32>::init(&cfg, &mut rng).unwrap();
        let g = random_graph(20, 12, 5);
        let reps = enc.core.forward(&g);
        for r in reps {
            let norm = r.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!(
                norm == 0.0 || (norm - 1.0).abs() < 1e-5,
                "norm = {norm}"
            );
        }
    }

    #[test]
    fn edge_permutation_leaves_outputs_unchanged() {
        let cfg = EncoderConfig::attribute_based(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let enc = IgEncoder::<f32>::init(&cfg, &mut rng).unwrap();
        let edges = vec![(0u32, 1u32), (1, 2), (2, 3), (3, 0), (1, 3)];
        let mut reversed = edges.clone();
        reversed.reverse();
        let g1 = Graph::build(4, &edges, attrs_cycled(4), &[]).unwrap();
        let g2 = Graph::build(4, &reversed, attrs_cycled(4), &[]).unwrap();
        assert_eq!(enc.forward(&g1), enc.forward(&g2));
    }

    #[test]
    fn scoring_is_inductive_across_graphs() {
        let cfg = EncoderConfig::attribute_based(2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let enc = IgEncoder::<f32>::init(&cfg, &mut rng).unwrap();
        let a = random_graph(8, 4, 1);
        let before = enc.forward(&a);
        let b = random_graph(30, 20, 2);
        let _ = enc.forward(&b);
        let after = enc.forward(&a);
        assert_eq!(before, after);
    }

    #[test]
    fn param_count_closed_form() {
        assert_eq!(param_count(2, 32, 56), 17_793);
        assert_eq!(param_count(2, 1, 1), 27);
        assert_eq!(param_count(2, 128, 448), 394_753);
    }

    #[test]
    fn constructed_encoder_matches_closed_form_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (f, f1) in [(8usize, 32usize), (64, 128)] {
            let cfg = EncoderConfig::attribute_based(f, f1);
            let enc = IgEncoder::<f32>::init(&cfg, &mut rng).unwrap();
            assert_eq!(
                enc.trainable_param_count() as u64,
                param_count(LAYER_COUNT, cfg.f1, cfg.f2)
            );
        }
    }

    #[test]
    fn ig_train_reduces_loss_and_is_deterministic() {
        let g = {
            let edges = vec![(0u32, 1u32), (1, 2), (2, 3), (3, 4), (4, 5)];
            let mut attrs = attrs_cycled(6);
            attrs[0] = [1; 7];
            attrs[5] = [0; 7];
            Graph::build(6, &edges, attrs, &[]).unwrap()
        };
        let labeled = vec![(0u32, 1u8), (5, 0)];
        let cfg = EncoderConfig::attribute_based(2, 4);
        let opts = TrainOptions {
            max_epochs: 200,
            learning_rate: 1e-3,
            probe_patience: 10,
        };
        let run = ig_train::<f32>(&g, &labeled, &cfg, &opts, 11, None).unwrap();
        assert!(run.losses[run.losses.len() - 1] < run.losses[0]);

        let again = ig_train::<f32>(&g, &labeled, &cfg, &opts, 11, None).unwrap();
        assert_eq!(run.model.flat_params(), again.model.flat_params());

        // single-class label sets are rejected
        assert!(ig_train::<f32>(&g, &[(0, 1), (1, 1)], &cfg, &opts, 0, None).is_err());
    }

    #[test]
    fn ig_loss_gradient_passes_finite_difference_check() {
        let cfg = EncoderConfig::attribute_based(2, 4);
        for seed in 0..5u64 {
            let g = random_graph(10, 5, 100 + seed);
            let labeled: Vec<(u32, u8)> = (0..10).map(|i| (i as u32, (i % 2) as u8)).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let template = IgEncoder::<f64>::init(&cfg, &mut rng).unwrap();
            // Offset every coordinate so the check runs at a generic point:
            // zero-initialized biases put RELU kinks exactly at the origin.
            let mut flat = template.flat_params();
            let mut noise = ChaCha8Rng::seed_from_u64(777 + seed);
            for v in flat.iter_mut() {
                *v += noise.random_range(-0.1..0.1);
            }
            let err = grad_check(
                |p| ig_loss_and_grad(&template, &g, &labeled, p).map(|(l, _)| l),
                |p| ig_loss_and_grad(&template, &g, &labeled, p).map(|(_, g)| g),
                &flat,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: max rel err {err}");
        }
    }
}
