//! Gradient-boosted decision trees for binary logistic objectives, built from
//! scratch: Newton boosting with per-split gain
//! G_L^2/(H_L+l) + G_R^2/(H_R+l) - G^2/(H+l), exact greedy splits over
//! presorted features, row/column subsampling from a seeded stream, and
//! validation-AUC early stopping.
//!
//! Used for attribute importance ranking (pseudo-label selection) and as the
//! representation probe that early-stops encoder training.

use crate::error::{Error, Result};
use crate::metrics::{auc, ScoredLabels};
use crate::tensor::kernel::sigmoid_scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct GbdtConfig {
    pub learning_rate: f64,
    pub max_depth: usize,
    pub n_estimators: usize,
    pub subsample: f64,
    pub colsample_bytree: f64,
    pub early_stopping_rounds: usize,
    pub lambda: f64,
    pub importance: ImportanceKind,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            learning_rate: 0.2,
            max_depth: 4,
            n_estimators: 300,
            subsample: 0.9,
            colsample_bytree: 0.8,
            early_stopping_rounds: 50,
            lambda: 1.0,
            importance: ImportanceKind::Gain,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ImportanceKind {
    /// Total split gain per feature (default).
    Gain,
    /// Split count per feature.
    Frequency,
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Split {
        feature: u32,
        threshold: f32,
        left: u32,
        right: u32,
        gain: f64,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f32]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    at = if x[*feature as usize] < *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
            }
        }
    }

    fn depth_from(&self, at: usize) -> usize {
        match &self.nodes[at] {
            Node::Leaf { .. } => 0,
            Node::Split { left, right, .. } => {
                1 + self
                    .depth_from(*left as usize)
                    .max(self.depth_from(*right as usize))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeEnsemble {
    pub base_score: f64,
    trees: Vec<Tree>,
    n_features: usize,
}

impl TreeEnsemble {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn max_tree_depth(&self) -> usize {
        self.trees.iter().map(|t| t.depth_from(0)).max().unwrap_or(0)
    }

    fn margin(&self, x: &[f32]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

pub struct GbdtFit {
    pub ensemble: TreeEnsemble,
    /// Best holdout AUC when a validation set was supplied.
    pub validation_auc: Option<f64>,
    pub best_round: usize,
}

/// Fit on (X, y); when a validation set is given, stop after
/// `early_stopping_rounds` rounds without AUC improvement and truncate to the
/// best round.
pub fn gbdt_fit(
    x: &[Vec<f32>],
    y: &[u8],
    config: &GbdtConfig,
    validation: Option<(&[Vec<f32>], &[u8])>,
    seed: u64,
) -> Result<GbdtFit> {
    if x.is_empty() || x.len() != y.len() {
        return Err(Error::data(format!(
            "gbdt_fit: {} rows vs {} targets",
            x.len(),
            y.len()
        )));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::data("gbdt_fit: zero feature width".to_string()));
    }
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::data("gbdt_fit: ragged feature rows".to_string()));
    }
    let pos = y.iter().filter(|&&v| v == 1).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::data(
            "gbdt_fit: both classes must be present in y".to_string(),
        ));
    }
    if let Some((xv, yv)) = validation {
        if xv.len() != yv.len() || xv.iter().any(|r| r.len() != d) {
            return Err(Error::data("gbdt_fit: malformed validation set".to_string()));
        }
    }

    let n = x.len();
    // Column-major copy plus one global argsort per feature.
    let mut columns: Vec<Vec<f32>> = vec![vec![0.0; n]; d];
    for (r, row) in x.iter().enumerate() {
        for (f, &v) in row.iter().enumerate() {
            columns[f][r] = v;
        }
    }
    let sorted: Vec<Vec<u32>> = columns
        .iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..n as u32).collect();
            idx.sort_by(|&a, &b| {
                col[a as usize]
                    .total_cmp(&col[b as usize])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect();

    let neg = n - pos;
    let base_score = (pos as f64 / neg as f64).ln();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut margins = vec![base_score; n];
    let mut valid_margins: Vec<f64> = validation
        .map(|(xv, _)| vec![base_score; xv.len()])
        .unwrap_or_default();

    let mut trees: Vec<Tree> = Vec::new();
    let mut best_auc = f64::NEG_INFINITY;
    let mut best_round = 0usize;

    for round in 1..=config.n_estimators {
        let rows = sample_indices(n, config.subsample, &mut rng);
        let cols = sample_indices(d, config.colsample_bytree, &mut rng);

        let mut grad = vec![0.0f64; n];
        let mut hess = vec![0.0f64; n];
        for &r in &rows {
            let p = sigmoid_scalar(margins[r as usize]);
            grad[r as usize] = p - y[r as usize] as f64;
            hess[r as usize] = p * (1.0 - p);
        }

        let tree = build_tree(&columns, &sorted, &rows, &cols, &grad, &hess, config);
        for (r, m) in margins.iter_mut().enumerate() {
            *m += tree.predict(&x[r]);
        }
        if let Some((xv, yv)) = validation {
            for (r, m) in valid_margins.iter_mut().enumerate() {
                *m += tree.predict(&xv[r]);
            }
            trees.push(tree);
            let probs: Vec<f64> = valid_margins.iter().map(|&m| sigmoid_scalar(m)).collect();
            let a = auc(&ScoredLabels::new(probs, yv.to_vec())?)?;
            if a > best_auc {
                best_auc = a;
                best_round = round;
            } else if round - best_round >= config.early_stopping_rounds {
                break;
            }
        } else {
            trees.push(tree);
        }
    }

    let (validation_auc, best_round) = if validation.is_some() {
        trees.truncate(best_round);
        (Some(best_auc), best_round)
    } else {
        let rounds = trees.len();
        (None, rounds)
    };

    Ok(GbdtFit {
        ensemble: TreeEnsemble {
            base_score,
            trees,
            n_features: d,
        },
        validation_auc,
        best_round,
    })
}

/// sigmoid(base + sum of leaf values).
pub fn gbdt_predict(ensemble: &TreeEnsemble, x: &[f32]) -> Result<f64> {
    if x.len() != ensemble.n_features {
        return Err(Error::shape(format!(
            "gbdt_predict: ensemble expects {} features, got {}",
            ensemble.n_features,
            x.len()
        )));
    }
    Ok(sigmoid_scalar(ensemble.margin(x)))
}

/// Per-feature totals of split gain (or split counts under `Frequency`).
pub fn gbdt_importance(ensemble: &TreeEnsemble, kind: ImportanceKind) -> Vec<f64> {
    let mut acc = vec![0.0f64; ensemble.n_features];
    for tree in &ensemble.trees {
        for node in &tree.nodes {
            if let Node::Split { feature, gain, .. } = node {
                acc[*feature as usize] += match kind {
                    ImportanceKind::Gain => *gain,
                    ImportanceKind::Frequency => 1.0,
                };
            }
        }
    }
    acc
}

/// Without-replacement subsample of 0..n, in ascending order. A fraction of
/// 1.0 skips the RNG entirely so full-sample fits are seed-independent.
fn sample_indices(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Vec<u32> {
    if fraction >= 1.0 {
        return (0..n as u32).collect();
    }
    let k = ((n as f64 * fraction).round() as usize).clamp(1, n);
    let mut picked: Vec<u32> = rand::seq::index::sample(rng, n, k)
        .into_iter()
        .map(|i| i as u32)
        .collect();
    picked.sort_unstable();
    picked
}

struct ActiveNode {
    id: u32,
    g_sum: f64,
    h_sum: f64,
    count: usize,
}

#[derive(Clone)]
struct ScanState {
    g_left: f64,
    h_left: f64,
    count_left: usize,
    last_value: Option<f32>,
}

#[derive(Clone)]
struct Candidate {
    gain: f64,
    feature: u32,
    threshold: f32,
    g_left: f64,
    h_left: f64,
}

fn build_tree(
    columns: &[Vec<f32>],
    sorted: &[Vec<u32>],
    rows: &[u32],
    cols: &[u32],
    grad: &[f64],
    hess: &[f64],
    config: &GbdtConfig,
) -> Tree {
    let lam = config.lambda;
    let score = |g: f64, h: f64| g * g / (h + lam);

    let mut nodes: Vec<Node> = Vec::new();
    let mut slot_of_node: Vec<i32> = Vec::new();

    let mut in_sample = vec![false; columns[0].len()];
    let mut node_of_row: Vec<u32> = vec![u32::MAX; columns[0].len()];
    let (mut g0, mut h0) = (0.0, 0.0);
    for &r in rows {
        in_sample[r as usize] = true;
        node_of_row[r as usize] = 0;
        g0 += grad[r as usize];
        h0 += hess[r as usize];
    }
    nodes.push(Node::Leaf { value: 0.0 });
    slot_of_node.push(0);
    let mut active = vec![ActiveNode {
        id: 0,
        g_sum: g0,
        h_sum: h0,
        count: rows.len(),
    }];

    for _depth in 0..config.max_depth {
        if active.is_empty() {
            break;
        }
        let mut best: Vec<Option<Candidate>> = vec![None; active.len()];
        let mut scan: Vec<ScanState> = vec![
            ScanState {
                g_left: 0.0,
                h_left: 0.0,
                count_left: 0,
                last_value: None,
            };
            active.len()
        ];
        for &f in cols {
            for s in scan.iter_mut() {
                s.g_left = 0.0;
                s.h_left = 0.0;
                s.count_left = 0;
                s.last_value = None;
            }
            let col = &columns[f as usize];
            for &r in &sorted[f as usize] {
                let r = r as usize;
                if !in_sample[r] {
                    continue;
                }
                let node_id = node_of_row[r];
                let slot = slot_of_node[node_id as usize];
                if slot < 0 {
                    continue;
                }
                let slot = slot as usize;
                let v = col[r];
                let st = &mut scan[slot];
                if let Some(lv) = st.last_value {
                    if v > lv && st.count_left > 0 && st.count_left < active[slot].count {
                        let g_r = active[slot].g_sum - st.g_left;
                        let h_r = active[slot].h_sum - st.h_left;
                        let gain = score(st.g_left, st.h_left) + score(g_r, h_r)
                            - score(active[slot].g_sum, active[slot].h_sum);
                        let better = match &best[slot] {
                            None => gain > 0.0,
                            Some(c) => gain > c.gain,
                        };
                        if better {
                            best[slot] = Some(Candidate {
                                gain,
                                feature: f,
                                threshold: (lv + v) / 2.0,
                                g_left: st.g_left,
                                h_left: st.h_left,
                            });
                        }
                    }
                }
                st.g_left += grad[r];
                st.h_left += hess[r];
                st.count_left += 1;
                st.last_value = Some(v);
            }
        }

        // Materialize this level's splits and queue the children.
        let mut next_active: Vec<ActiveNode> = Vec::new();
        let mut split_info: Vec<Option<(u32, f32, u32, u32)>> = vec![None; active.len()];
        for (slot, cand) in best.iter().enumerate() {
            if let Some(c) = cand {
                let left_id = nodes.len() as u32;
                let right_id = left_id + 1;
                nodes.push(Node::Leaf { value: 0.0 });
                nodes.push(Node::Leaf { value: 0.0 });
                slot_of_node.push(next_active.len() as i32);
                next_active.push(ActiveNode {
                    id: left_id,
                    g_sum: c.g_left,
                    h_sum: c.h_left,
                    count: 0,
                });
                slot_of_node.push(next_active.len() as i32);
                next_active.push(ActiveNode {
                    id: right_id,
                    g_sum: active[slot].g_sum - c.g_left,
                    h_sum: active[slot].h_sum - c.h_left,
                    count: 0,
                });
                nodes[active[slot].id as usize] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left: left_id,
                    right: right_id,
                    gain: c.gain,
                };
                split_info[slot] = Some((c.feature, c.threshold, left_id, right_id));
            } else {
                // Finalize as leaf.
                let v = -config.learning_rate * active[slot].g_sum / (active[slot].h_sum + lam);
                nodes[active[slot].id as usize] = Node::Leaf { value: v };
                slot_of_node[active[slot].id as usize] = -1;
            }
        }
        if next_active.is_empty() {
            active.clear();
            break;
        }
        // Route rows to their child nodes.
        for &r in rows {
            let r = r as usize;
            let node_id = node_of_row[r];
            let slot = slot_of_node[node_id as usize];
            if slot < 0 {
                continue;
            }
            if let Some((feature, threshold, left, right)) = split_info[slot as usize] {
                let child = if columns[feature as usize][r] < threshold {
                    left
                } else {
                    right
                };
                node_of_row[r] = child;
            }
        }
        // Old split nodes no longer map to slots.
        for (slot, a) in active.iter().enumerate() {
            if split_info[slot].is_some() {
                slot_of_node[a.id as usize] = -1;
            }
        }
        for (slot, a) in next_active.iter_mut().enumerate() {
            slot_of_node[a.id as usize] = slot as i32;
        }
        for &r in rows {
            let r = r as usize;
            let slot = slot_of_node[node_of_row[r] as usize];
            if slot >= 0 {
                next_active[slot as usize].count += 1;
            }
        }
        active = next_active;
    }

    // Depth limit reached: finalize whatever is still active.
    for a in &active {
        let v = -config.learning_rate * a.g_sum / (a.h_sum + lam);
        nodes[a.id as usize] = Node::Leaf { value: v };
    }

    Tree { nodes }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn separable() -> (Vec<Vec<f32>>, Vec<u8>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            let label = (i % 2) as u8;
            x.push(vec![label as f32, (i as f32 * 0.37).sin()]);
            y.push(label);
        }
        (x, y)
    }

    fn plain_config() -> GbdtConfig {
        GbdtConfig {
            subsample: 1.0,
            colsample_bytree: 1.0,
            ..GbdtConfig::default()
        }
    }

    #[test]
    fn one_split_separates_perfectly() {
        let (x, y) = separable();
        let cfg = GbdtConfig {
            max_depth: 1,
            n_estimators: 1,
            ..plain_config()
        };
        let fit = gbdt_fit(&x, &y, &cfg, Some((&x, &y)), 0).unwrap();
        assert_eq!(fit.ensemble.n_trees(), 1);
        assert_eq!(fit.ensemble.max_tree_depth(), 1);
        for (row, &label) in x.iter().zip(&y) {
            let p = gbdt_predict(&fit.ensemble, row).unwrap();
            assert_eq!((p > 0.5) as u8, label, "row {row:?} -> {p}");
        }
        assert_eq!(fit.validation_auc, Some(1.0));
    }

    #[test]
    fn random_targets_give_chance_validation_auc() {
        use rand::Rng;
        let cfg = GbdtConfig {
            n_estimators: 50,
            ..GbdtConfig::default()
        };
        let mut aucs = Vec::new();
        for seed in 0..6u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let make = |rng: &mut ChaCha8Rng, n: usize| -> (Vec<Vec<f32>>, Vec<u8>) {
                let x = (0..n)
                    .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0f32)).collect())
                    .collect();
                let y = (0..n).map(|_| rng.random_range(0..2u32) as u8).collect();
                (x, y)
            };
            let (xt, yt) = make(&mut rng, 400);
            let (xv, yv) = make(&mut rng, 300);
            let fit = gbdt_fit(&xt, &yt, &cfg, Some((&xv, &yv)), seed).unwrap();
            aucs.push(fit.validation_auc.unwrap());
        }
        aucs.sort_by(f64::total_cmp);
        let median = aucs[aucs.len() / 2];
        assert!((median - 0.5).abs() <= 0.1, "median auc {median}, all {aucs:?}");
    }

    #[test]
    fn same_seed_gives_identical_ensembles() {
        let (x, y) = separable();
        let cfg = GbdtConfig {
            n_estimators: 10,
            ..GbdtConfig::default()
        };
        let a = gbdt_fit(&x, &y, &cfg, Some((&x, &y)), 42).unwrap();
        let b = gbdt_fit(&x, &y, &cfg, Some((&x, &y)), 42).unwrap();
        assert_eq!(a.ensemble, b.ensemble);
    }

    #[test]
    fn full_sampling_is_seed_independent() {
        let (x, y) = separable();
        let cfg = GbdtConfig {
            n_estimators: 10,
            ..plain_config()
        };
        let a = gbdt_fit(&x, &y, &cfg, Some((&x, &y)), 1).unwrap();
        let b = gbdt_fit(&x, &y, &cfg, Some((&x, &y)), 999).unwrap();
        assert_eq!(a.ensemble, b.ensemble);
    }

    #[test]
    fn empty_ensemble_predicts_base() {
        let ens = TreeEnsemble {
            base_score: 0.0,
            trees: vec![],
            n_features: 3,
        };
        assert_eq!(gbdt_predict(&ens, &[0.0, 1.0, 2.0]).unwrap(), 0.5);
        assert!(gbdt_predict(&ens, &[0.0]).is_err());
    }

    #[test]
    fn positive_leaf_tree_raises_probability() {
        let base = TreeEnsemble {
            base_score: 0.1,
            trees: vec![],
            n_features: 1,
        };
        let boosted = TreeEnsemble {
            base_score: 0.1,
            trees: vec![Tree {
                nodes: vec![Node::Leaf { value: 0.7 }],
            }],
            n_features: 1,
        };
        let x = [0.3f32];
        assert!(gbdt_predict(&boosted, &x).unwrap() > gbdt_predict(&base, &x).unwrap());
    }

    #[test]
    fn importance_concentrates_on_used_features() {
        let (x, y) = separable();
        let cfg = GbdtConfig {
            max_depth: 2,
            n_estimators: 5,
            ..plain_config()
        };
        let fit = gbdt_fit(&x, &y, &cfg, None, 0).unwrap();
        let imp = gbdt_importance(&fit.ensemble, ImportanceKind::Gain);
        assert!(imp[0] > 0.0);
        assert_eq!(imp[1], 0.0, "noise feature should never split: {imp:?}");
        assert!(imp.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn importance_recovers_planted_features() {
        use rand::Rng;
        let mut hits = 0;
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(7000 + seed);
            let n = 400;
            let mut x = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let label = rng.random_range(0..2u32) as u8;
                let mut row: Vec<f32> = (0..7)
                    .map(|_| (rng.random_range(0.0..1.0) < 0.3) as u8 as f32)
                    .collect();
                // Binary features 2 and 5 carry the label signal.
                let p = if label == 1 { 0.8 } else { 0.1 };
                row[2] = (rng.random_range(0.0..1.0) < p) as u8 as f32;
                row[5] = (rng.random_range(0.0..1.0) < p) as u8 as f32;
                x.push(row);
                y.push(label);
            }
            let fit = gbdt_fit(&x, &y, &GbdtConfig::default(), None, seed).unwrap();
            let imp = gbdt_importance(&fit.ensemble, ImportanceKind::Gain);
            let mut order: Vec<usize> = (0..7).collect();
            order.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]));
            let top2 = [order[0].min(order[1]), order[0].max(order[1])];
            if top2 == [2, 5] {
                hits += 1;
            }
        }
        assert!(hits >= 9, "planted features recovered in only {hits}/10 seeds");
    }

    #[test]
    fn single_class_and_zero_width_are_rejected() {
        let x = vec![vec![0.0f32], vec![1.0]];
        assert!(gbdt_fit(&x, &[1, 1], &GbdtConfig::default(), None, 0).is_err());
        let empty: Vec<Vec<f32>> = vec![vec![], vec![]];
        assert!(gbdt_fit(&empty, &[0, 1], &GbdtConfig::default(), None, 0).is_err());
    }

    #[test]
    fn depth_limit_is_respected() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f32>> = (0..200)
            .map(|_| (0..4).map(|_| rng.random_range(0.0..1.0f32)).collect())
            .collect();
        let y: Vec<u8> = (0..200).map(|_| rng.random_range(0..2u32) as u8).collect();
        let cfg = GbdtConfig {
            max_depth: 3,
            n_estimators: 5,
            ..plain_config()
        };
        let fit = gbdt_fit(&x, &y, &cfg, None, 0).unwrap();
        assert!(fit.ensemble.max_tree_depth() <= 3);
    }
}
