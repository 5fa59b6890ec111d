//! Reverse-mode gradient tape over the fixed operation set the encoders
//! compose, plus the finite-difference gradient checker.
//!
//! The tape records flat value buffers and replays recorded ops in reverse to
//! accumulate vector-Jacobian products. Forward evaluation calls the same
//! kernels as the pure tensor ops, so taped and pure forwards agree bit for
//! bit.

use crate::error::{Error, Result};
use crate::tensor::{kernel, Real, L2_NORM_EPS, PROB_CLAMP};

pub type ValId = usize;

#[derive(Clone, Debug)]
enum Op<F> {
    /// out = W x + b, W is rows x cols.
    Affine {
        w: ValId,
        b: ValId,
        x: ValId,
        out: ValId,
        rows: usize,
        cols: usize,
    },
    Relu {
        x: ValId,
        out: ValId,
    },
    Sigmoid {
        x: ValId,
        out: ValId,
    },
    L2Normalize {
        x: ValId,
        out: ValId,
    },
    Concat {
        parts: Vec<ValId>,
        out: ValId,
    },
    /// mean ⊕ max ⊕ sum over the given rows (all width `width`); zeros when
    /// there are no rows.
    PoolTriple {
        rows: Vec<ValId>,
        width: usize,
        out: ValId,
    },
    /// Fold a 3d vector into d by summing its three d-blocks.
    FoldThirds {
        x: ValId,
        out: ValId,
    },
    /// Average of the given rows (subgraph readout).
    MeanRows {
        rows: Vec<ValId>,
        out: ValId,
    },
    /// Mean binary cross entropy over scalar probabilities.
    BceMean {
        probs: Vec<ValId>,
        targets: Vec<F>,
        out: ValId,
    },
    /// -(1/N) sum [ln p_pos + ln(1 - p_neg)] over paired scalar probabilities.
    ContrastiveLoss {
        pos: Vec<ValId>,
        neg: Vec<ValId>,
        out: ValId,
    },
    /// -(1/2) sum_i sum_j [y ln r + (1-y) ln(1-r)] over length-2 predictions.
    GmmlLoss {
        preds: Vec<ValId>,
        targets: Vec<(F, F)>,
        out: ValId,
    },
}

pub struct Tape<F: Real> {
    vals: Vec<Vec<F>>,
    ops: Vec<Op<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            vals: Vec::new(),
            ops: Vec::new(),
        }
    }

    /// Register a leaf value (parameter or constant input).
    pub fn leaf(&mut self, data: &[F]) -> ValId {
        self.push_val(data.to_vec())
    }

    pub fn value(&self, id: ValId) -> &[F] {
        &self.vals[id]
    }

    pub fn len(&self, id: ValId) -> usize {
        self.vals[id].len()
    }

    fn push_val(&mut self, data: Vec<F>) -> ValId {
        self.vals.push(data);
        self.vals.len() - 1
    }

    pub fn affine(&mut self, w: ValId, rows: usize, cols: usize, b: ValId, x: ValId) -> ValId {
        assert_eq!(self.vals[w].len(), rows * cols, "affine weight size");
        assert_eq!(self.vals[b].len(), rows, "affine bias size");
        assert_eq!(self.vals[x].len(), cols, "affine input size");
        let mut out = vec![F::zero(); rows];
        kernel::affine_into(&self.vals[w], rows, cols, &self.vals[b], &self.vals[x], &mut out);
        let out = self.push_val(out);
        self.ops.push(Op::Affine { w, b, x, out, rows, cols });
        out
    }

    pub fn relu(&mut self, x: ValId) -> ValId {
        let mut out = self.vals[x].clone();
        kernel::relu_in_place(&mut out);
        let out = self.push_val(out);
        self.ops.push(Op::Relu { x, out });
        out
    }

    pub fn sigmoid(&mut self, x: ValId) -> ValId {
        let out = self.vals[x].iter().map(|&v| kernel::sigmoid_scalar(v)).collect();
        let out = self.push_val(out);
        self.ops.push(Op::Sigmoid { x, out });
        out
    }

    pub fn l2_normalize(&mut self, x: ValId) -> ValId {
        let mut out = self.vals[x].clone();
        kernel::l2_normalize_in_place(&mut out, F::cast(L2_NORM_EPS));
        let out = self.push_val(out);
        self.ops.push(Op::L2Normalize { x, out });
        out
    }

    pub fn concat(&mut self, parts: &[ValId]) -> ValId {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(&self.vals[p]);
        }
        let out = self.push_val(out);
        self.ops.push(Op::Concat {
            parts: parts.to_vec(),
            out,
        });
        out
    }

    pub fn pool_triple(&mut self, rows: &[ValId], width: usize) -> ValId {
        for &r in rows {
            assert_eq!(self.vals[r].len(), width, "pool_triple row width");
        }
        let mut out = vec![F::zero(); 3 * width];
        if !rows.is_empty() {
            let k = F::cast(rows.len() as f64);
            // sum block
            for &r in rows {
                for (j, v) in self.vals[r].iter().enumerate() {
                    out[2 * width + j] = out[2 * width + j] + *v;
                }
            }
            // mean block
            for j in 0..width {
                out[j] = out[2 * width + j] / k;
            }
            // max block
            out[width..2 * width].copy_from_slice(&self.vals[rows[0]]);
            for &r in &rows[1..] {
                for (j, v) in self.vals[r].iter().enumerate() {
                    if *v > out[width + j] {
                        out[width + j] = *v;
                    }
                }
            }
        }
        let out = self.push_val(out);
        self.ops.push(Op::PoolTriple {
            rows: rows.to_vec(),
            width,
            out,
        });
        out
    }

    pub fn fold_thirds(&mut self, x: ValId) -> ValId {
        let n = self.vals[x].len();
        assert_eq!(n % 3, 0, "fold_thirds input must have length 3d");
        let d = n / 3;
        let mut out = vec![F::zero(); d];
        for j in 0..d {
            out[j] = self.vals[x][j] + self.vals[x][d + j] + self.vals[x][2 * d + j];
        }
        let out = self.push_val(out);
        self.ops.push(Op::FoldThirds { x, out });
        out
    }

    pub fn mean_rows(&mut self, rows: &[ValId]) -> ValId {
        assert!(!rows.is_empty(), "mean_rows needs at least one row");
        let width = self.vals[rows[0]].len();
        let mut out = vec![F::zero(); width];
        for &r in rows {
            for (j, v) in self.vals[r].iter().enumerate() {
                out[j] = out[j] + *v;
            }
        }
        let k = F::cast(rows.len() as f64);
        for v in out.iter_mut() {
            *v = *v / k;
        }
        let out = self.push_val(out);
        self.ops.push(Op::MeanRows {
            rows: rows.to_vec(),
            out,
        });
        out
    }

    pub fn bce_mean(&mut self, probs: &[ValId], targets: &[F]) -> ValId {
        assert_eq!(probs.len(), targets.len());
        assert!(!probs.is_empty(), "bce_mean needs at least one term");
        let mut acc = F::zero();
        for (&p, &y) in probs.iter().zip(targets) {
            let pv = kernel::clamp_prob(self.vals[p][0]);
            acc = acc - (y * pv.ln() + (F::one() - y) * (F::one() - pv).ln());
        }
        let loss = acc / F::cast(probs.len() as f64);
        let out = self.push_val(vec![loss]);
        self.ops.push(Op::BceMean {
            probs: probs.to_vec(),
            targets: targets.to_vec(),
            out,
        });
        out
    }

    pub fn contrastive_loss(&mut self, pos: &[ValId], neg: &[ValId]) -> ValId {
        assert_eq!(pos.len(), neg.len());
        assert!(!pos.is_empty(), "contrastive_loss needs at least one pair");
        let mut acc = F::zero();
        for (&p, &n) in pos.iter().zip(neg) {
            let pv = kernel::clamp_prob(self.vals[p][0]);
            let nv = kernel::clamp_prob(self.vals[n][0]);
            acc = acc - (pv.ln() + (F::one() - nv).ln());
        }
        let loss = acc / F::cast(pos.len() as f64);
        let out = self.push_val(vec![loss]);
        self.ops.push(Op::ContrastiveLoss {
            pos: pos.to_vec(),
            neg: neg.to_vec(),
            out,
        });
        out
    }

    pub fn gmml_loss(&mut self, preds: &[ValId], targets: &[(F, F)]) -> ValId {
        assert_eq!(preds.len(), targets.len());
        let mut acc = F::zero();
        for (&r, &(y0, y1)) in preds.iter().zip(targets) {
            assert_eq!(self.vals[r].len(), 2, "gmml predictions are length 2");
            for (j, &y) in [y0, y1].iter().enumerate() {
                let rv = kernel::clamp_prob(self.vals[r][j]);
                acc = acc - (y * rv.ln() + (F::one() - y) * (F::one() - rv).ln());
            }
        }
        let loss = acc / F::cast(2.0);
        let out = self.push_val(vec![loss]);
        self.ops.push(Op::GmmlLoss {
            preds: preds.to_vec(),
            targets: targets.to_vec(),
            out,
        });
        out
    }

    /// Reverse sweep. Seeds d(loss)=1 and returns per-value gradients.
    pub fn backward(self, loss: ValId) -> Result<Gradients<F>> {
        if self.vals[loss].len() != 1 {
            return Err(Error::shape("backward expects a scalar loss".to_string()));
        }
        if !self.vals[loss][0].is_finite() {
            return Err(Error::check("loss is non-finite"));
        }
        let mut grads: Vec<Vec<F>> = self.vals.iter().map(|v| vec![F::zero(); v.len()]).collect();
        grads[loss][0] = F::one();

        let vals = &self.vals;
        for op in self.ops.iter().rev() {
            match op {
                Op::Affine { w, b, x, out, rows, cols } => {
                    let dout = std::mem::take(&mut grads[*out]);
                    {
                        let gb = &mut grads[*b];
                        for i in 0..*rows {
                            gb[i] = gb[i] + dout[i];
                        }
                    }
                    {
                        let gw = &mut grads[*w];
                        let xv = &vals[*x];
                        for i in 0..*rows {
                            let di = dout[i];
                            if di != F::zero() {
                                let grow = &mut gw[i * cols..(i + 1) * cols];
                                for (g, xv) in grow.iter_mut().zip(xv.iter()) {
                                    *g = *g + di * *xv;
                                }
                            }
                        }
                    }
                    {
                        let wv = &vals[*w];
                        let gx = &mut grads[*x];
                        for i in 0..*rows {
                            let di = dout[i];
                            if di != F::zero() {
                                let wrow = &wv[i * cols..(i + 1) * cols];
                                for (g, wij) in gx.iter_mut().zip(wrow.iter()) {
                                    *g = *g + di * *wij;
                                }
                            }
                        }
                    }
                    grads[*out] = dout;
                }
                Op::Relu { x, out } => {
                    let dout = std::mem::take(&mut grads[*out]);
                    let xv = &vals[*x];
                    let gx = &mut grads[*x];
                    for j in 0..dout.len() {
                        if xv[j] > F::zero() {
                            gx[j] = gx[j] + dout[j];
                        }
                    }
                    grads[*out] = dout;
                }
                Op::Sigmoid { x, out } => {
                    let dout = std::mem::take(&mut grads[*out]);
                    let yv = &vals[*out];
                    let gx = &mut grads[*x];
                    for j in 0..dout.len() {
                        gx[j] = gx[j] + dout[j] * yv[j] * (F::one() - yv[j]);
                    }
                    grads[*out] = dout;
                }
                Op::L2Normalize { x, out } => {
                    let dout = std::mem::take(&mut grads[*out]);
                    let xv = &vals[*x];
                    let yv = &vals[*out];
                    let n = kernel::norm2(xv);
                    let eps = F::cast(L2_NORM_EPS);
                    let gx = &mut grads[*x];
                    if n > eps {
                        // d x = (d out - y (y . d out)) / ||x||
                        let mut dot = F::zero();
                        for j in 0..dout.len() {
                            dot = dot + yv[j] * dout[j];
                        }
                        for j in 0..dout.len() {
                            gx[j] = gx[j] + (dout[j] - yv[j] * dot) / n;
                        }
                    } else {
                        for j in 0..dout.len() {
                            gx[j] = gx[j] + dout[j] / eps;
                        }
                    }
                    grads[*out] = dout;
                }
                Op::Concat { parts, out } => {
                    let dout = std::mem::take(&mut grads[*out]);
                    let mut offset = 0;
                    for &p in parts {
                        let len = vals[p].len();
                        let gp = &mut grads[p];
                        for j in 0..len {
                            gp[j] = gp[j] + dout[offset + j];
                        }
                        offset += len;
                    }
                    grads[*out] = dout;
                }
                Op::PoolTriple { rows, width, out } => {
                    let dout = std::mem::take(&mut grads[*out]);
                    if !rows.is_empty() {
                        let d = *width;
                        let k = F::cast(rows.len() as f64);
                        // Mean and sum blocks spread to every row.
                        for &r in rows {
                            let gr = &mut grads[r];
                            for j in 0..d {
                                gr[j] = gr[j] + dout[j] / k + dout[2 * d + j];
                            }
                        }
                        // Max block routes to the first argmax row per dim.
                        for j in 0..d {
                            let mut best = 0usize;
                            let mut best_v = vals[rows[0]][j];
                            for (idx, &r) in rows.iter().enumerate().skip(1) {
                                if vals[r][j] > best_v {
                                    best_v = vals[r][j];
                                    best = idx;
                                }
                            }
                            let gr = &mut grads[rows[best]];
                            gr[j] = gr[j] + dout[d + j];
                        }
                    }
                    grads[*out] = dout;
                }
                Op::FoldThirds { x, out } => {
                    let dout = std::mem::take(&mut grads[*out]);
                    let d = dout.len();
                    let gx = &mut grads[*x];
                    for j in 0..d {
                        gx[j] = gx[j] + dout[j];
                        gx[d + j] = gx[d + j] + dout[j];
                        gx[2 * d + j] = gx[2 * d + j] + dout[j];
                    }
                    grads[*out] = dout;
                }
                Op::MeanRows { rows, out } => {
                    let dout = std::mem::take(&mut grads[*out]);
                    let k = F::cast(rows.len() as f64);
                    for &r in rows {
                        let gr = &mut grads[r];
                        for j in 0..dout.len() {
                            gr[j] = gr[j] + dout[j] / k;
                        }
                    }
                    grads[*out] = dout;
                }
                Op::BceMean { probs, targets, out } => {
                    let dl = grads[*out][0];
                    if dl != F::zero() {
                        let scale = dl / F::cast(probs.len() as f64);
                        for (&p, &y) in probs.iter().zip(targets) {
                            let raw = vals[p][0];
                            let pv = kernel::clamp_prob(raw);
                            if raw == pv {
                                let g = scale * (pv - y) / (pv * (F::one() - pv));
                                grads[p][0] = grads[p][0] + g;
                            }
                            // Clamped terms are locally constant: no gradient.
                        }
                    }
                }
                Op::ContrastiveLoss { pos, neg, out } => {
                    let dl = grads[*out][0];
                    if dl != F::zero() {
                        let scale = dl / F::cast(pos.len() as f64);
                        for &p in pos {
                            let raw = vals[p][0];
                            let pv = kernel::clamp_prob(raw);
                            if raw == pv {
                                grads[p][0] = grads[p][0] - scale / pv;
                            }
                        }
                        for &n in neg {
                            let raw = vals[n][0];
                            let nv = kernel::clamp_prob(raw);
                            if raw == nv {
                                grads[n][0] = grads[n][0] + scale / (F::one() - nv);
                            }
                        }
                    }
                }
                Op::GmmlLoss { preds, targets, out } => {
                    let dl = grads[*out][0];
                    if dl != F::zero() {
                        let half = dl / F::cast(2.0);
                        for (&r, &(y0, y1)) in preds.iter().zip(targets) {
                            for (j, &y) in [y0, y1].iter().enumerate() {
                                let raw = vals[r][j];
                                let rv = kernel::clamp_prob(raw);
                                if raw == rv {
                                    let g = half * (rv - y) / (rv * (F::one() - rv));
                                    grads[r][j] = grads[r][j] + g;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

pub struct Gradients<F> {
    grads: Vec<Vec<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn grad(&self, id: ValId) -> &[F] {
        &self.grads[id]
    }

    pub fn take(&mut self, id: ValId) -> Vec<F> {
        std::mem::take(&mut self.grads[id])
    }
}

/// Maximum relative error between an analytic gradient and a central
/// finite-difference probe, per coordinate:
/// |analytic - fd| / max(1, |analytic|).
///
/// Both closures evaluate in f64. `eps_fd` must lie in [1e-5, 1e-3].
pub fn grad_check(
    mut loss: impl FnMut(&[f64]) -> Result<f64>,
    mut analytic: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    params: &[f64],
    eps_fd: f64,
) -> Result<f64> {
    if !(1e-5..=1e-3).contains(&eps_fd) {
        return Err(Error::config(format!(
            "grad_check eps_fd {eps_fd} outside [1e-5, 1e-3]"
        )));
    }
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(Error::check(format!("loss is non-finite at base point: {base}")));
    }
    let grad = analytic(params)?;
    if grad.len() != params.len() {
        return Err(Error::shape(format!(
            "analytic gradient has {} entries for {} parameters",
            grad.len(),
            params.len()
        )));
    }
    let mut probe = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        probe[k] = params[k] + eps_fd;
        let up = loss(&probe)?;
        probe[k] = params[k] - eps_fd;
        let down = loss(&probe)?;
        probe[k] = params[k];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::check("loss is non-finite at a probe point"));
        }
        let fd = (up - down) / (2.0 * eps_fd);
        let err = (grad[k] - fd).abs() / 1.0f64.max(grad[k].abs());
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}

pub fn prob_clamp_bounds() -> (f64, f64) {
    (PROB_CLAMP, 1.0 - PROB_CLAMP)
}
