//! Self-supervised attribute encoder: pseudo-label selection from
//! boosted-tree importances, masked per-node prediction of the two selected
//! attributes (each target node sees its own pseudo-label slots masked while
//! every other node's view of it stays complete), the two-way prediction
//! head, the multi-label loss, and detection-time attribute replacement.

use crate::encoder::{
    record_encoded_attrs, record_layer_node, register_core, EarlyStopper, EncoderConfig, GnnCore,
    LayerIds, ProbeView, TrainOptions, TrainOutcome, TrainProbe,
};
use crate::error::{Error, Result};
use crate::gbdt::{gbdt_fit, gbdt_importance, GbdtConfig};
use crate::graph::{Graph, ATTR_COUNT};
use crate::optim::AdamSet;
use crate::seed::stream_rng;
use crate::tape::{Tape, ValId};
use crate::tensor::{kernel, Real, Tensor};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

/// The two attributes serving as pseudo labels, with the importance scores
/// that selected them.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabelSpec {
    pub idx_a: usize,
    pub idx_b: usize,
    pub importance: [f64; ATTR_COUNT],
}

/// Indices of the two largest scores; ties broken toward the lower index.
pub fn select_pseudo_labels(importance: &[f64; ATTR_COUNT]) -> Result<PseudoLabelSpec> {
    if importance.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::data(
            "importance scores must be finite and non-negative".to_string(),
        ));
    }
    let mut order: Vec<usize> = (0..ATTR_COUNT).collect();
    order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
    let (mut idx_a, mut idx_b) = (order[0], order[1]);
    if idx_a > idx_b {
        std::mem::swap(&mut idx_a, &mut idx_b);
    }
    Ok(PseudoLabelSpec {
        idx_a,
        idx_b,
        importance: *importance,
    })
}

/// Two-way prediction head: f1 -> f1/2 -> 2 under a sigmoid.
#[derive(Clone, Debug, PartialEq)]
pub struct SsaHeadParams<F> {
    pub w_r1: Tensor<F>,
    pub b_r1: Tensor<F>,
    pub w_r2: Tensor<F>,
    pub b_r2: Tensor<F>,
}

impl<F: Real> SsaHeadParams<F> {
    pub fn init(f1: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if f1 % 2 != 0 {
            return Err(Error::config(format!(
                "attribute-encoder head needs an even f1, got {f1}"
            )));
        }
        let half = f1 / 2;
        let normal = rand_distr::StandardNormal;
        let mut sample = |rows: usize, cols: usize| {
            let std = 1.0 / (cols as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| {
                    let z: f64 = normal.sample(rng);
                    F::cast(z * std)
                })
                .collect();
            Tensor::new(vec![rows, cols], data).expect("well-formed")
        };
        Ok(SsaHeadParams {
            w_r1: sample(half, f1),
            b_r1: Tensor::zeros(vec![half]),
            w_r2: sample(2, half),
            b_r2: Tensor::zeros(vec![2]),
        })
    }

    pub fn predict(&self, h: &[F]) -> [F; 2] {
        let f1 = h.len();
        let half = f1 / 2;
        let mut a1 = vec![F::zero(); half];
        kernel::affine_into(self.w_r1.data(), half, f1, self.b_r1.data(), h, &mut a1);
        let mut z = vec![F::zero(); 2];
        kernel::affine_into(self.w_r2.data(), 2, half, self.b_r2.data(), &a1, &mut z);
        [kernel::sigmoid_scalar(z[0]), kernel::sigmoid_scalar(z[1])]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsaEncoder<F> {
    pub core: GnnCore<F>,
    pub head: SsaHeadParams<F>,
}

impl<F: Real> SsaEncoder<F> {
    pub fn init(config: &EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let core = GnnCore::init(config, rng);
        let head = SsaHeadParams::init(config.f1, rng)?;
        Ok(SsaEncoder { core, head })
    }

    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor<F>)> {
        let mut out = self.core.named_tensors(prefix);
        out.push((format!("{prefix}head.w_r1"), &self.head.w_r1));
        out.push((format!("{prefix}head.b_r1"), &self.head.b_r1));
        out.push((format!("{prefix}head.w_r2"), &self.head.w_r2));
        out.push((format!("{prefix}head.b_r2"), &self.head.b_r2));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = self.core.tensors_mut();
        out.push(&mut self.head.w_r1);
        out.push(&mut self.head.b_r1);
        out.push(&mut self.head.w_r2);
        out.push(&mut self.head.b_r2);
        out
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
            return Err(Error::shape("flat parameter vector too long".to_string()));
        }
        Ok(())
    }
}

/// Pseudo-label probabilities for node `i` under the masked view where only
/// node i's two pseudo-label attribute slots are masked. Recomputes exactly
/// the l-hop receptive field of i; all other nodes' initial representations
/// are the shared unmasked ones.
pub fn ssa_forward_one<F: Real>(
    enc: &SsaEncoder<F>,
    graph: &Graph,
    spec: &PseudoLabelSpec,
    node: usize,
) -> Result<[F; 2]> {
    if node >= graph.node_count() {
        return Err(Error::data(format!(
            "node {node} out of range ({} nodes)",
            graph.node_count()
        )));
    }
    let h0 = enc.core.initial_reps(graph);
    Ok(masked_prediction(enc, graph, spec, node, &h0))
}

/// Pseudo-label probabilities for every node, sharing one unmasked h0 pass.
pub fn ssa_forward_all<F: Real>(
    enc: &SsaEncoder<F>,
    graph: &Graph,
    spec: &PseudoLabelSpec,
) -> Vec<[F; 2]> {
    let h0 = enc.core.initial_reps(graph);
    (0..graph.node_count())
        .map(|i| masked_prediction(enc, graph, spec, i, &h0))
        .collect()
}

fn masked_prediction<F: Real>(
    enc: &SsaEncoder<F>,
    graph: &Graph,
    spec: &PseudoLabelSpec,
    node: usize,
    h0_shared: &[Vec<F>],
) -> [F; 2] {
    let f1 = enc.core.f1;
    let f2 = enc.core.f2;
    let masked = [spec.idx_a, spec.idx_b];
    let h0_target = enc.core.table.encode(graph.attrs(node), &masked);
    let h0_of = |j: usize| -> &[F] {
        if j == node {
            &h0_target
        } else {
            &h0_shared[j]
        }
    };
    // Layer-1 outputs change only for the target and its direct neighbors.
    let mut h1_local: Vec<(u32, Vec<F>)> = Vec::with_capacity(1 + graph.degree(node));
    let layer1 = |j: usize| -> Vec<F> {
        let nbr_rows: Vec<&[F]> = graph.neighbors(j).iter().map(|&k| h0_of(k as usize)).collect();
        crate::encoder::gnn_layer_node(
            &enc.core.layers[0],
            true,
            &nbr_rows,
            f2,
            h0_of(j),
            f1,
            f2,
        )
    };
    h1_local.push((node as u32, layer1(node)));
    for &j in graph.neighbors(node) {
        h1_local.push((j, layer1(j as usize)));
    }
    let h1_of = |j: u32| -> &[F] {
        &h1_local.iter().find(|(k, _)| *k == j).expect("local row").1
    };
    let nbr_rows: Vec<&[F]> = graph.neighbors(node).iter().map(|&k| h1_of(k)).collect();
    let h2 = crate::encoder::gnn_layer_node(
        &enc.core.layers[1],
        false,
        &nbr_rows,
        f1,
        h0_of(node),
        f1,
        f2,
    );
    enc.head.predict(&h2)
}

/// Multi-label prediction loss:
/// -(1/2) sum_i sum_j [y ln r + (1-y) ln(1-r)], probabilities clamped.
pub fn gmml_loss<F: Real>(predictions: &[[F; 2]], targets: &[[u8; 2]]) -> Result<F> {
    if predictions.len() != targets.len() {
        return Err(Error::shape(format!(
            "gmml_loss: {} predictions vs {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let mut acc = F::zero();
    for (r, y) in predictions.iter().zip(targets) {
        for j in 0..2 {
            let rv = kernel::clamp_prob(r[j]);
            let yv = F::cast(y[j] as f64);
            acc = acc - (yv * rv.ln() + (F::one() - yv) * (F::one() - rv).ln());
        }
    }
    Ok(acc / F::cast(2.0))
}

/// Overwrite the two pseudo-label attributes with thresholded predictions
/// (1 when the prediction is at least r_hat).
pub fn replace_attributes<F: Real>(
    attrs: &[u8; ATTR_COUNT],
    spec: &PseudoLabelSpec,
    prediction: &[F; 2],
    r_hat: f64,
) -> [u8; ATTR_COUNT] {
    let mut out = *attrs;
    out[spec.idx_a] = (prediction[0].as_f64() >= r_hat) as u8;
    out[spec.idx_b] = (prediction[1].as_f64() >= r_hat) as u8;
    out
}

pub struct SsaTrainResult<F> {
    pub outcome: TrainOutcome<SsaEncoder<F>>,
    pub spec: PseudoLabelSpec,
}

/// Fit the importance model on (attributes, labels), pick the pseudo-label
/// pair, then train the encoder on the masked prediction task over all
/// nodes.
#[allow(clippy::too_many_arguments)]
pub fn train_ssa<F: Real>(
    graph: &Graph,
    labeled: &[(u32, u8)],
    importance_holdout: &[(u32, u8)],
    config: &EncoderConfig,
    gbdt_config: &GbdtConfig,
    opts: &TrainOptions,
    seed: u64,
    r_hat: f64,
    probe: Option<&mut dyn TrainProbe<F>>,
) -> Result<SsaTrainResult<F>> {
    crate::encoder::check_both_classes(labeled)?;
    let feature = |&(node, _): &(u32, u8)| -> Vec<f32> {
        graph.attrs(node as usize).iter().map(|&a| a as f32).collect()
    };
    let x: Vec<Vec<f32>> = labeled.iter().map(feature).collect();
    let y: Vec<u8> = labeled.iter().map(|&(_, y)| y).collect();
    let validation = if importance_holdout.is_empty() {
        None
    } else {
        Some((
            importance_holdout.iter().map(feature).collect::<Vec<_>>(),
            importance_holdout.iter().map(|&(_, y)| y).collect::<Vec<u8>>(),
        ))
    };
    let fit = gbdt_fit(
        &x,
        &y,
        gbdt_config,
        validation.as_ref().map(|(xv, yv)| (xv.as_slice(), yv.as_slice())),
        crate::seed::derive_seed(seed, "ssa-importance"),
    )?;
    let imp_vec = gbdt_importance(&fit.ensemble, gbdt_config.importance);
    let mut importance = [0.0f64; ATTR_COUNT];
    importance.copy_from_slice(&imp_vec);
    let spec = select_pseudo_labels(&importance)?;

    let outcome = train_ssa_gmml(graph, &spec, config, opts, seed, r_hat, probe)?;
    Ok(SsaTrainResult { outcome, spec })
}

/// The masked-prediction training loop with a fixed pseudo-label spec.
#[allow(clippy::too_many_arguments)]
pub fn train_ssa_gmml<F: Real>(
    graph: &Graph,
    spec: &PseudoLabelSpec,
    config: &EncoderConfig,
    opts: &TrainOptions,
    seed: u64,
    r_hat: f64,
    mut probe: Option<&mut dyn TrainProbe<F>>,
) -> Result<TrainOutcome<SsaEncoder<F>>> {
    let mut rng = stream_rng(seed, "ssa-init");
    let mut model = SsaEncoder::init(config, &mut rng)?;
    let dims: Vec<Vec<usize>> = model.tensors_mut().iter().map(|t| t.dims().to_vec()).collect();
    let mut adam = AdamSet::new(&dims, opts.learning_rate);
    let mut stopper = EarlyStopper::new(opts.probe_patience);
    let mut losses = Vec::new();

    for epoch in 1..=opts.max_epochs {
        let loss = ssa_epoch(&mut model, &mut adam, graph, spec)?;
        losses.push(loss);
        if let Some(p) = probe.as_mut() {
            let predictions = ssa_forward_all(&model, graph, spec);
            let replaced: Vec<[u8; ATTR_COUNT]> = (0..graph.node_count())
                .map(|i| replace_attributes(graph.attrs(i), spec, &predictions[i], r_hat))
                .collect();
            let reps: Vec<Vec<F>> = Vec::new();
            let value = p.evaluate(
                epoch,
                &ProbeView {
                    reps: &reps,
                    replaced_attrs: Some(&replaced),
                    scores: None,
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
    let model = stopper.into_best().unwrap_or(model);
    Ok(TrainOutcome {
        model,
        losses,
        epochs_run: opts.max_epochs,
        stopped_early: false,
    })
}

fn ssa_epoch<F: Real>(
    model: &mut SsaEncoder<F>,
    adam: &mut AdamSet<F>,
    graph: &Graph,
    spec: &PseudoLabelSpec,
) -> Result<f64> {
    let (loss, mut grads, flat_ids) = ssa_loss_tape(model, graph, spec)?;
    let grad_vecs: Vec<Vec<F>> = flat_ids.iter().map(|&id| grads.take(id)).collect();
    let mut params = model.tensors_mut();
    adam.step(&mut params, &grad_vecs)?;
    Ok(loss)
}

fn ssa_loss_tape<F: Real>(
    model: &SsaEncoder<F>,
    graph: &Graph,
    spec: &PseudoLabelSpec,
) -> Result<(f64, crate::tape::Gradients<F>, Vec<ValId>)> {
    let f1 = model.core.f1;
    let f2 = model.core.f2;
    let half = f1 / 2;
    let mut tape = Tape::new();
    let core_ids = register_core(&mut tape, &model.core);
    let w_r1 = tape.leaf(model.head.w_r1.data());
    let b_r1 = tape.leaf(model.head.b_r1.data());
    let w_r2 = tape.leaf(model.head.w_r2.data());
    let b_r2 = tape.leaf(model.head.b_r2.data());
    let mut flat_ids = core_ids.flat();
    flat_ids.extend_from_slice(&[w_r1, b_r1, w_r2, b_r2]);

    // Shared unmasked initial representations.
    let h0: Vec<ValId> = (0..graph.node_count())
        .map(|i| record_encoded_attrs(&mut tape, &core_ids, graph.attrs(i), &[]))
        .collect();
    let masked = [spec.idx_a, spec.idx_b];

    let mut preds = Vec::with_capacity(graph.node_count());
    let mut targets = Vec::with_capacity(graph.node_count());
    for node in 0..graph.node_count() {
        let h0_target = record_encoded_attrs(&mut tape, &core_ids, graph.attrs(node), &masked);
        let h0_of = |j: u32| -> ValId {
            if j as usize == node {
                h0_target
            } else {
                h0[j as usize]
            }
        };
        let record_l1 = |tape: &mut Tape<F>, j: usize, ids: &LayerIds| -> ValId {
            let nbr: Vec<ValId> = graph.neighbors(j).iter().map(|&k| h0_of(k)).collect();
            record_layer_node(tape, ids, true, &nbr, f2, h0_of(j as u32), f1, f2)
        };
        let mut h1_local: Vec<(u32, ValId)> = Vec::with_capacity(1 + graph.degree(node));
        h1_local.push((
            node as u32,
            record_l1(&mut tape, node, &core_ids.layers[0]),
        ));
        for &j in graph.neighbors(node) {
            h1_local.push((j, record_l1(&mut tape, j as usize, &core_ids.layers[0])));
        }
        let h1_of = |j: u32| -> ValId {
            h1_local.iter().find(|(k, _)| *k == j).expect("local row").1
        };
        let nbr1: Vec<ValId> = graph.neighbors(node).iter().map(|&k| h1_of(k)).collect();
        let h2 = record_layer_node(
            &mut tape,
            &core_ids.layers[1],
            false,
            &nbr1,
            f1,
            h0_of(node as u32),
            f1,
            f2,
        );
        let a1 = tape.affine(w_r1, half, f1, b_r1, h2);
        let z = tape.affine(w_r2, 2, half, b_r2, a1);
        preds.push(tape.sigmoid(z));
        let a = graph.attrs(node);
        targets.push((F::cast(a[spec.idx_a] as f64), F::cast(a[spec.idx_b] as f64)));
    }
    let loss_id = tape.gmml_loss(&preds, &targets);
    let loss = tape.value(loss_id)[0].as_f64();
    let grads = tape.backward(loss_id)?;
    Ok((loss, grads, flat_ids))
}

/// Loss and flat analytic gradient of the masked-prediction objective
/// (gradient-check entry point).
pub fn gmml_loss_and_grad<F: Real>(
    template: &SsaEncoder<F>,
    graph: &Graph,
    spec: &PseudoLabelSpec,
    flat: &[F],
) -> Result<(f64, Vec<F>)> {
    let mut model = template.clone();
    model.set_flat_params(flat)?;
    let (loss, mut grads, flat_ids) = ssa_loss_tape(&model, graph, spec)?;
    let mut out = Vec::with_capacity(flat.len());
    for &id in &flat_ids {
        out.extend_from_slice(&grads.take(id));
    }
    Ok((loss, out))
}
