//! Two-phase orchestration: pretrain the three self-supervised encoders with
//! boosted-tree probe early stopping, train the detection encoder on their
//! frozen outputs, checkpoint everything, and run the lightweight detection
//! pass (no parameter writes).

use crate::contrastive::{train_contrastive, ContrastMode, ContrastiveEncoder, ContrastiveTrainSpec};
use crate::encoder::{
    record_encoded_attrs, record_core_forward, record_head_score, register_core, register_head,
    EarlyStopper, EncoderConfig, IgEncoder, ProbeView, TrainOptions, TrainOutcome, TrainProbe,
};
use crate::error::{Error, Result};
use crate::gbdt::{gbdt_fit, GbdtConfig};
use crate::graph::{precompute_subgraphs, Graph, ATTR_COUNT};
use crate::optim::AdamSet;
use crate::seed::{derive_seed, stream_rng};
use crate::ssa::{
    replace_attributes, ssa_forward_all, train_ssa, PseudoLabelSpec, SsaEncoder,
};
use crate::tape::{Tape, ValId};
use crate::tensor::Real;
use rand::seq::SliceRandom;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Attribute embedding width in the representation-learning phase.
    pub f: usize,
    /// Hidden width of the pretrain encoders.
    pub f1: usize,
    /// Attribute embedding width of the detection encoder.
    pub f_det: usize,
    /// Hidden width of the detection encoder.
    pub f1_det: usize,
    /// Subgraph hop count.
    pub k: usize,
    /// Decision threshold on suspicious scores.
    pub rho: f64,
    /// Threshold for binarizing pseudo-label predictions.
    pub r_hat: f64,
    pub max_epochs: usize,
    /// Fraction of observed labels held out for the probes.
    pub probe_holdout: f64,
    /// Probe patience: epochs without improvement before stopping at the
    /// probe peak.
    pub probe_patience: usize,
    pub learning_rate: f64,
    /// Label-free mode: train only the self-supervised encoders.
    pub sgrl_sa: bool,
    pub seed: u64,
    /// Probe / importance model configuration.
    pub gbdt: GbdtConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            f: 8,
            f1: 32,
            f_det: 64,
            f1_det: 128,
            k: 1,
            rho: 0.5,
            r_hat: 0.5,
            max_epochs: 200,
            probe_holdout: 0.1,
            probe_patience: 10,
            learning_rate: 1e-3,
            sgrl_sa: false,
            seed: 0,
        gbdt: GbdtConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Width of the pretrain encoders' initial representations.
    pub fn f2(&self) -> usize {
        ATTR_COUNT * self.f
    }

    /// Width of the detection encoder's initial representations.
    pub fn f2_det(&self) -> usize {
        2 * self.f1 + ATTR_COUNT * self.f_det
    }

    pub fn validate(&self) -> Result<()> {
        if self.f == 0 || self.f1 == 0 || self.f_det == 0 || self.f1_det == 0 {
            return Err(Error::config("encoder widths must be positive".to_string()));
        }
        if self.f1 % 2 != 0 {
            return Err(Error::config(format!(
                "f1 must be even for the attribute-encoder head, got {}",
                self.f1
            )));
        }
        if self.k == 0 {
            return Err(Error::config("subgraph hop count k must be >= 1".to_string()));
        }
        for (name, v) in [("rho", self.rho), ("r_hat", self.r_hat)] {
            if !(0.0 < v && v < 1.0) {
                return Err(Error::config(format!("{name} must lie in (0,1), got {v}")));
            }
        }
        if !(0.0 < self.probe_holdout && self.probe_holdout < 0.5) {
            return Err(Error::config(format!(
                "probe_holdout must lie in (0, 0.5), got {}",
                self.probe_holdout
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("max_epochs must be >= 1".to_string()));
        }
        if self.probe_patience == 0 {
            return Err(Error::config("probe_patience must be >= 1".to_string()));
        }
        Ok(())
    }

    fn pretrain_encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            f: self.f,
            f1: self.f1,
            f2: self.f2(),
            rho: self.rho,
        }
    }

    fn detect_encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            f: self.f_det,
            f1: self.f1_det,
            f2: self.f2_det(),
            rho: self.rho,
        }
    }

    fn train_options(&self) -> TrainOptions {
        TrainOptions {
            max_epochs: self.max_epochs,
            learning_rate: self.learning_rate,
            probe_patience: self.probe_patience,
        }
    }
}

// ── Probe machinery ──────────────────────────────────────────────────────

/// Fixed stratified split of the observed labels: the holdout feeds the probe
/// gbdt's validation side only.
#[derive(Clone, Debug)]
pub struct ProbeSplit {
    pub train: Vec<(u32, u8)>,
    pub holdout: Vec<(u32, u8)>,
}

pub fn stratified_split(
    labeled: &[(u32, u8)],
    holdout_fraction: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<ProbeSplit> {
    let mut train = Vec::new();
    let mut holdout = Vec::new();
    for class in [1u8, 0u8] {
        let mut members: Vec<u32> = labeled
            .iter()
            .filter(|&&(_, y)| y == class)
            .map(|&(i, _)| i)
            .collect();
        if members.len() < 2 {
            return Err(Error::config(format!(
                "degenerate probe holdout: class {class} has {} labeled nodes, need >= 2",
                members.len()
            )));
        }
        members.shuffle(rng);
        let take = ((members.len() as f64 * holdout_fraction).round() as usize)
            .clamp(1, members.len() - 1);
        for (pos, &node) in members.iter().enumerate() {
            if pos < take {
                holdout.push((node, class));
            } else {
                train.push((node, class));
            }
        }
    }
    train.sort_unstable();
    holdout.sort_unstable();
    Ok(ProbeSplit { train, holdout })
}

/// What the probe model is fit on.
pub enum ProbeFeatures<'a> {
    /// Node representation concatenated with the raw attribute vector.
    RepsAndAttrs(&'a [Vec<f32>]),
    /// The attribute vector after pseudo-label replacement.
    ReplacedAttrs(&'a [[u8; ATTR_COUNT]]),
}

/// Fit the probe gbdt on the split's training rows and return its best
/// holdout AUC.
pub fn probe_auc(
    features: ProbeFeatures<'_>,
    graph: &Graph,
    split: &ProbeSplit,
    config: &GbdtConfig,
    seed: u64,
) -> Result<f64> {
    let row = |node: u32| -> Vec<f32> {
        match &features {
            ProbeFeatures::RepsAndAttrs(reps) => {
                let mut v = reps[node as usize].clone();
                v.extend(graph.attrs(node as usize).iter().map(|&a| a as f32));
                v
            }
            ProbeFeatures::ReplacedAttrs(replaced) => replaced[node as usize]
                .iter()
                .map(|&a| a as f32)
                .collect(),
        }
    };
    let xt: Vec<Vec<f32>> = split.train.iter().map(|&(n, _)| row(n)).collect();
    let yt: Vec<u8> = split.train.iter().map(|&(_, y)| y).collect();
    let xv: Vec<Vec<f32>> = split.holdout.iter().map(|&(n, _)| row(n)).collect();
    let yv: Vec<u8> = split.holdout.iter().map(|&(_, y)| y).collect();
    let fit = gbdt_fit(&xt, &yt, config, Some((&xv, &yv)), seed)?;
    fit.validation_auc
        .ok_or_else(|| Error::check("probe fit returned no validation AUC".to_string()))
}

/// Per-epoch probe wired into the training loops; records its history.
pub struct GbdtProbe<'a> {
    graph: &'a Graph,
    split: &'a ProbeSplit,
    config: &'a GbdtConfig,
    seed: u64,
    pub history: Vec<(usize, f64)>,
}

impl<'a> GbdtProbe<'a> {
    pub fn new(graph: &'a Graph, split: &'a ProbeSplit, config: &'a GbdtConfig, seed: u64) -> Self {
        GbdtProbe {
            graph,
            split,
            config,
            seed,
            history: Vec::new(),
        }
    }
}

impl<F: Real> TrainProbe<F> for GbdtProbe<'_> {
    fn evaluate(&mut self, epoch: usize, view: &ProbeView<'_, F>) -> Result<f64> {
        let auc = match view.replaced_attrs {
            Some(replaced) => probe_auc(
                ProbeFeatures::ReplacedAttrs(replaced),
                self.graph,
                self.split,
                self.config,
                self.seed,
            )?,
            None => {
                let reps32: Vec<Vec<f32>> = view
                    .reps
                    .iter()
                    .map(|r| r.iter().map(|&v| v.as_f64() as f32).collect())
                    .collect();
                probe_auc(
                    ProbeFeatures::RepsAndAttrs(&reps32),
                    self.graph,
                    self.split,
                    self.config,
                    self.seed,
                )?
            }
        };
        self.history.push((epoch, auc));
        Ok(auc)
    }
}

/// Probe for supervised encoders: AUC of the model's own suspicious scores
/// over the holdout labels.
pub struct ScoreAucProbe<'a> {
    holdout: &'a [(u32, u8)],
    pub history: Vec<(usize, f64)>,
}

impl<'a> ScoreAucProbe<'a> {
    pub fn new(holdout: &'a [(u32, u8)]) -> Self {
        ScoreAucProbe {
            holdout,
            history: Vec::new(),
        }
    }
}

impl<F: Real> TrainProbe<F> for ScoreAucProbe<'_> {
    fn evaluate(&mut self, epoch: usize, view: &ProbeView<'_, F>) -> Result<f64> {
        let scores = view
            .scores
            .ok_or_else(|| Error::check("score probe needs model scores".to_string()))?;
        let s: Vec<f64> = self.holdout.iter().map(|&(n, _)| scores[n as usize].as_f64()).collect();
        let y: Vec<u8> = self.holdout.iter().map(|&(_, y)| y).collect();
        let auc = crate::metrics::auc(&crate::metrics::ScoredLabels::new(s, y)?)?;
        self.history.push((epoch, auc));
        Ok(auc)
    }
}

// ── Detection encoder training ───────────────────────────────────────────

/// Frozen per-node inputs to the detection encoder: the structural context
/// (h_SSS ⊕ h_SS) and the replaced attribute vector.
pub struct DetectionInputs {
    pub context: Vec<Vec<f32>>,
    pub replaced: Vec<[u8; ATTR_COUNT]>,
}

pub fn frozen_detection_inputs(
    sss: &ContrastiveEncoder<f32>,
    ss: &ContrastiveEncoder<f32>,
    ssa: &SsaEncoder<f32>,
    pseudo: &PseudoLabelSpec,
    graph: &Graph,
    r_hat: f64,
) -> DetectionInputs {
    let sss_reps = sss.encoder.core.forward(graph);
    let ss_reps = ss.encoder.core.forward(graph);
    let predictions = ssa_forward_all(ssa, graph, pseudo);
    let context = (0..graph.node_count())
        .map(|i| {
            let mut v = sss_reps[i].clone();
            v.extend_from_slice(&ss_reps[i]);
            v
        })
        .collect();
    let replaced = (0..graph.node_count())
        .map(|i| replace_attributes(graph.attrs(i), pseudo, &predictions[i], r_hat))
        .collect();
    DetectionInputs { context, replaced }
}

fn train_detect_encoder(
    graph: &Graph,
    labeled: &[(u32, u8)],
    inputs: &DetectionInputs,
    config: &EncoderConfig,
    opts: &TrainOptions,
    seed: u64,
    mut probe: Option<&mut dyn TrainProbe<f32>>,
) -> Result<TrainOutcome<IgEncoder<f32>>> {
    crate::encoder::check_both_classes(labeled)?;
    let mut rng = stream_rng(seed, "detect-init");
    let mut model = IgEncoder::<f32>::init(config, &mut rng)?;
    let dims = model.param_dims();
    let mut adam = AdamSet::new(&dims, opts.learning_rate);
    let mut stopper = EarlyStopper::new(opts.probe_patience);
    let mut losses = Vec::new();

    for epoch in 1..=opts.max_epochs {
        let loss = detect_epoch(&mut model, &mut adam, graph, labeled, inputs)?;
        losses.push(loss);
        if let Some(p) = probe.as_mut() {
            let reps = detect_reps(&model, graph, inputs);
            let scores: Vec<f32> = reps.iter().map(|h| model.head.score(h)).collect();
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
    let model = stopper.into_best().unwrap_or(model);
    Ok(TrainOutcome {
        model,
        losses,
        epochs_run: opts.max_epochs,
        stopped_early: false,
    })
}

fn detect_initial_reps(
    model: &IgEncoder<f32>,
    graph: &Graph,
    inputs: &DetectionInputs,
) -> Vec<Vec<f32>> {
    (0..graph.node_count())
        .map(|i| {
            let mut v = inputs.context[i].clone();
            v.extend(model.core.table.encode(&inputs.replaced[i], &[]));
            v
        })
        .collect()
}

fn detect_reps(model: &IgEncoder<f32>, graph: &Graph, inputs: &DetectionInputs) -> Vec<Vec<f32>> {
    let h0 = detect_initial_reps(model, graph, inputs);
    model.core.forward_from(graph, &h0)
}

fn detect_epoch(
    model: &mut IgEncoder<f32>,
    adam: &mut AdamSet<f32>,
    graph: &Graph,
    labeled: &[(u32, u8)],
    inputs: &DetectionInputs,
) -> Result<f64> {
    let f1 = model.core.f1;
    let mut tape = Tape::new();
    let core_ids = register_core(&mut tape, &model.core);
    let head_ids = register_head(&mut tape, &model.head);
    let mut flat_ids = core_ids.flat();
    flat_ids.extend(head_ids.flat());

    let h0: Vec<ValId> = (0..graph.node_count())
        .map(|i| {
            let ctx = tape.leaf(&inputs.context[i]);
            let enc = record_encoded_attrs(&mut tape, &core_ids, &inputs.replaced[i], &[]);
            tape.concat(&[ctx, enc])
        })
        .collect();
    let reps = record_core_forward(&mut tape, &core_ids, graph, &h0);
    let mut probs = Vec::with_capacity(labeled.len());
    let mut targets = Vec::with_capacity(labeled.len());
    for &(node, y) in labeled {
        probs.push(record_head_score(&mut tape, &head_ids, reps[node as usize], f1));
        targets.push(y as f32);
    }
    let loss_id = tape.bce_mean(&probs, &targets);
    let loss = tape.value(loss_id)[0] as f64;
    let mut grads = tape.backward(loss_id)?;
    let grad_vecs: Vec<Vec<f32>> = flat_ids.iter().map(|&id| grads.take(id)).collect();
    let mut params = model.tensors_mut();
    adam.step(&mut params, &grad_vecs)?;
    Ok(loss)
}

// ── Bundle, pretrain, detect ─────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointBundle {
    pub config: PipelineConfig,
    pub sss: ContrastiveEncoder<f32>,
    pub ss: ContrastiveEncoder<f32>,
    pub ssa: SsaEncoder<f32>,
    pub pseudo: PseudoLabelSpec,
    pub detect: IgEncoder<f32>,
}

pub struct PretrainOutput {
    pub bundle: CheckpointBundle,
    /// (encoder name, per-epoch probe AUC history).
    pub probe_history: Vec<(String, Vec<(usize, f64)>)>,
    pub losses: Vec<(String, Vec<f64>)>,
}

/// Train the four encoders. The three self-supervised encoders stop at their
/// probe peaks; the detection encoder then trains on their frozen outputs.
pub fn pretrain(graph: &Graph, config: &PipelineConfig) -> Result<PretrainOutput> {
    config.validate()?;
    let index = precompute_subgraphs(graph, config.k)?;
    let enc_cfg = config.pretrain_encoder_config();
    let opts = config.train_options();
    let seed = config.seed;
    let labeled_all = graph.labeled_nodes();

    let mut probe_history = Vec::new();
    let mut losses = Vec::new();

    if config.sgrl_sa {
        // Label-free mode: no probes, fixed epoch budget, default pseudo
        // labels; the supervised encoder and detector stay at their seeded
        // initialization.
        let spec = ContrastiveTrainSpec {
            mode: ContrastMode::SelfSupervised,
            labeled: &[],
            positives: None,
        };
        let sss = train_contrastive::<f32>(&spec, graph, &index, &enc_cfg, &opts, derive_seed(seed, "sss"), None)?;
        losses.push(("sss".to_string(), sss.losses.clone()));
        let pseudo = PseudoLabelSpec {
            idx_a: 0,
            idx_b: 1,
            importance: [0.0; ATTR_COUNT],
        };
        let ssa = crate::ssa::train_ssa_gmml::<f32>(
            graph,
            &pseudo,
            &enc_cfg,
            &opts,
            derive_seed(seed, "ssa"),
            config.r_hat,
            None,
        )?;
        losses.push(("ssa".to_string(), ssa.losses.clone()));
        let ss = ContrastiveEncoder::init(&enc_cfg, &mut stream_rng(derive_seed(seed, "ss"), "contrastive-init"))?;
        let detect = IgEncoder::init(
            &config.detect_encoder_config(),
            &mut stream_rng(derive_seed(seed, "detect"), "detect-init"),
        )?;
        return Ok(PretrainOutput {
            bundle: CheckpointBundle {
                config: config.clone(),
                sss: sss.model,
                ss,
                ssa: ssa.model,
                pseudo,
                detect,
            },
            probe_history,
            losses,
        });
    }

    if labeled_all.is_empty() {
        return Err(Error::config(
            "no observed labels; supervised encoders need labels (or set sgrl_sa)".to_string(),
        ));
    }
    let split = stratified_split(
        &labeled_all,
        config.probe_holdout,
        &mut stream_rng(seed, "probe-split"),
    )?;

    // SSS
    let sss = {
        let mut probe = GbdtProbe::new(graph, &split, &config.gbdt, derive_seed(seed, "probe-sss"));
        let spec = ContrastiveTrainSpec {
            mode: ContrastMode::SelfSupervised,
            labeled: &[],
            positives: None,
        };
        let out = train_contrastive::<f32>(
            &spec,
            graph,
            &index,
            &enc_cfg,
            &opts,
            derive_seed(seed, "sss"),
            Some(&mut probe),
        )?;
        probe_history.push(("sss".to_string(), probe.history));
        losses.push(("sss".to_string(), out.losses.clone()));
        out.model
    };

    // SS
    let ss = {
        let mut probe = GbdtProbe::new(graph, &split, &config.gbdt, derive_seed(seed, "probe-ss"));
        let spec = ContrastiveTrainSpec {
            mode: ContrastMode::Supervised,
            labeled: &split.train,
            positives: None,
        };
        let out = train_contrastive::<f32>(
            &spec,
            graph,
            &index,
            &enc_cfg,
            &opts,
            derive_seed(seed, "ss"),
            Some(&mut probe),
        )?;
        probe_history.push(("ss".to_string(), probe.history));
        losses.push(("ss".to_string(), out.losses.clone()));
        out.model
    };

    // SSA
    let (ssa, pseudo) = {
        let mut probe = GbdtProbe::new(graph, &split, &config.gbdt, derive_seed(seed, "probe-ssa"));
        let result = train_ssa::<f32>(
            graph,
            &split.train,
            &split.holdout,
            &enc_cfg,
            &config.gbdt,
            &opts,
            derive_seed(seed, "ssa"),
            config.r_hat,
            Some(&mut probe),
        )?;
        probe_history.push(("ssa".to_string(), probe.history));
        losses.push(("ssa".to_string(), result.outcome.losses.clone()));
        (result.outcome.model, result.spec)
    };

    // Detection encoder on the frozen three.
    let inputs = frozen_detection_inputs(&sss, &ss, &ssa, &pseudo, graph, config.r_hat);
    let detect = {
        let mut probe = ScoreAucProbe::new(&split.holdout);
        let out = train_detect_encoder(
            graph,
            &split.train,
            &inputs,
            &config.detect_encoder_config(),
            &opts,
            derive_seed(seed, "detect"),
            Some(&mut probe),
        )?;
        probe_history.push(("detect".to_string(), probe.history));
        losses.push(("detect".to_string(), out.losses.clone()));
        out.model
    };

    Ok(PretrainOutput {
        bundle: CheckpointBundle {
            config: config.clone(),
            sss,
            ss,
            ssa,
            pseudo,
            detect,
        },
        probe_history,
        losses,
    })
}

/// The detection encoder's initial representation for node i:
/// h_SSS ⊕ h_SS ⊕ encoded replaced attributes. Always 2*f1 + 7*f_det wide.
pub fn build_detection_input(
    bundle: &CheckpointBundle,
    graph: &Graph,
    node: usize,
) -> Result<Vec<f32>> {
    if node >= graph.node_count() {
        return Err(Error::data(format!(
            "node {node} out of range ({} nodes)",
            graph.node_count()
        )));
    }
    let inputs = frozen_detection_inputs(
        &bundle.sss,
        &bundle.ss,
        &bundle.ssa,
        &bundle.pseudo,
        graph,
        bundle.config.r_hat,
    );
    let h0 = detect_initial_reps(&bundle.detect, graph, &inputs);
    debug_assert_eq!(h0[node].len(), bundle.config.f2_det());
    Ok(h0[node].clone())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreReport {
    pub scores: Vec<f32>,
    pub flags: Vec<bool>,
    pub threshold: f64,
}

impl ScoreReport {
    /// Metric summary against known labels (subset of nodes).
    pub fn evaluate(&self, truth: &[(u32, u8)]) -> Result<EvalSummary> {
        let scores: Vec<f64> = truth.iter().map(|&(n, _)| self.scores[n as usize] as f64).collect();
        let labels: Vec<u8> = truth.iter().map(|&(_, y)| y).collect();
        let scored = crate::metrics::ScoredLabels::new(scores, labels)?;
        Ok(EvalSummary {
            auc: crate::metrics::auc(&scored)?,
            ks: crate::metrics::ks(&scored)?,
            confusion: crate::metrics::confusion_metrics(&scored, self.threshold)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct EvalSummary {
    pub auc: f64,
    pub ks: f64,
    pub confusion: crate::metrics::ConfusionReport,
}

/// Score every node with the frozen bundle. Pure: no parameter writes.
pub fn detect(bundle: &CheckpointBundle, graph: &Graph) -> Result<ScoreReport> {
    bundle.config.validate()?;
    let inputs = frozen_detection_inputs(
        &bundle.sss,
        &bundle.ss,
        &bundle.ssa,
        &bundle.pseudo,
        graph,
        bundle.config.r_hat,
    );
    let expect = bundle.config.f2_det();
    if bundle.detect.core.f2 != expect {
        return Err(Error::shape(format!(
            "detection encoder expects {}-wide inputs, config implies {expect}",
            bundle.detect.core.f2
        )));
    }
    let reps = detect_reps(&bundle.detect, graph, &inputs);
    let scores: Vec<f32> = reps.iter().map(|h| bundle.detect.head.score(h)).collect();
    let flags = scores.iter().map(|&s| (s as f64) > bundle.config.rho).collect();
    Ok(ScoreReport {
        scores,
        flags,
        threshold: bundle.config.rho,
    })
}
