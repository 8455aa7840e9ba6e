//! Block-level training objectives and their gradients with respect to the
//! block's goodness scores.
//!
//! Every loss here is a batch mean. Gradient vectors are per example and
//! already include the `1/B` factor of the mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::goodness::Sharpness;
use crate::numerics::{log_sigmoid, sigmoid, softplus};

fn check_pair(op: &'static str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dims(op, a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::Domain(format!("{op}: empty batch")));
    }
    Ok(())
}

/// Value of a batch loss together with its per-example gradients in the
/// two arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrad {
    pub value: f64,
    pub d_first: Vec<f64>,
    pub d_second: Vec<f64>,
}

/// `mean softplus(-alpha (a - b))`.
pub fn sep_loss(a: &[f64], b: &[f64], alpha: f64) -> Result<f64> {
    sep_loss_grad(a, b, alpha).map(|g| g.value)
}

pub fn sep_loss_grad(a: &[f64], b: &[f64], alpha: f64) -> Result<PairGrad> {
    check_pair("sep_loss", a, b)?;
    let alpha = Sharpness::new(alpha)?;
    let n = a.len() as f64;
    let mut value = 0.0;
    let mut d_first = Vec::with_capacity(a.len());
    for (&x, &y) in a.iter().zip(b) {
        value += alpha.barrier(x - y);
        d_first.push(alpha.deriv(x - y) / n);
    }
    let d_second = d_first.iter().map(|v| -v).collect();
    Ok(PairGrad {
        value: value / n,
        d_first,
        d_second,
    })
}

/// `mean softplus(theta - g+) + mean softplus(g- - theta)`.
pub fn margin_loss(g_pos: &[f64], g_neg: &[f64], theta: f64) -> Result<f64> {
    margin_loss_grad(g_pos, g_neg, theta).map(|g| g.value)
}

pub fn margin_loss_grad(g_pos: &[f64], g_neg: &[f64], theta: f64) -> Result<PairGrad> {
    if g_pos.is_empty() || g_neg.is_empty() {
        return Err(Error::Domain("margin_loss: empty batch".into()));
    }
    let np = g_pos.len() as f64;
    let nn = g_neg.len() as f64;
    let pos: f64 = g_pos.iter().map(|&g| softplus(theta - g)).sum::<f64>() / np;
    let neg: f64 = g_neg.iter().map(|&g| softplus(g - theta)).sum::<f64>() / nn;
    Ok(PairGrad {
        value: pos + neg,
        d_first: g_pos.iter().map(|&g| -sigmoid(theta - g) / np).collect(),
        d_second: g_neg.iter().map(|&g| sigmoid(g - theta) / nn).collect(),
    })
}

/// `(1 - eta) sep(G+, G_nl) + eta sep(G+, G_ni)`.
pub fn block_cumulative_loss(g_pos: &[f64], g_nl: &[f64], g_ni: &[f64], eta: f64, alpha: f64) -> Result<f64> {
    check_eta(eta)?;
    let nl = sep_loss(g_pos, g_nl, alpha)?;
    let ni = sep_loss(g_pos, g_ni, alpha)?;
    Ok((1.0 - eta) * nl + eta * ni)
}

fn check_eta(eta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&eta) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("eta must lie in [0, 1], got {eta}")))
    }
}

/// Residual weights from detached upstream margins: raw `sigma(-beta P)`,
/// mean-normalised, clipped to `[w_min, w_max]`, then re-normalised so the
/// batch mean is exactly one.
pub fn residual_weights(p_prev: &[f64], beta: f64, w_min: f64, w_max: f64) -> Result<Vec<f64>> {
    if p_prev.is_empty() {
        return Err(Error::Domain("residual_weights: empty batch".into()));
    }
    let beta = Sharpness::new(beta)?.get();
    if !(w_min > 0.0 && w_min <= 1.0 && w_max >= 1.0) {
        return Err(Error::Parameter(format!(
            "residual weight clip needs 0 < w_min <= 1 <= w_max, got ({w_min}, {w_max})"
        )));
    }
    // log-space so sigma(-beta P) underflowing for large P cannot zero the mean
    let logs: Vec<f64> = p_prev.iter().map(|&p| log_sigmoid(-beta * p)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_mean = top + (logs.iter().map(|l| (l - top).exp()).sum::<f64>() / logs.len() as f64).ln();
    let clipped: Vec<f64> = logs.iter().map(|l| (l - log_mean).exp().clamp(w_min, w_max)).collect();
    let mean_clipped = clipped.iter().sum::<f64>() / clipped.len() as f64;
    Ok(clipped.into_iter().map(|u| u / mean_clipped).collect())
}

/// `lambda0 (1 + rho d / (L - 1))`.
pub fn depth_scaled_lambda(d: usize, blocks: usize, lambda0: f64, rho: f64) -> Result<f64> {
    if blocks < 2 {
        return Err(Error::Parameter(format!("depth scaling needs at least 2 blocks, got {blocks}")));
    }
    if d >= blocks {
        return Err(Error::Parameter(format!("block index {d} out of range for {blocks} blocks")));
    }
    Ok(lambda0 * (1.0 + rho * d as f64 / (blocks - 1) as f64))
}

/// Weighted barrier on current-block margins, blended across the two
/// negative streams. Weights are constants.
pub fn current_block_loss(
    m_nl: &[f64],
    m_ni: &[f64],
    w_nl: &[f64],
    w_ni: &[f64],
    eta: f64,
    beta: f64,
) -> Result<f64> {
    current_block_loss_grad(m_nl, m_ni, w_nl, w_ni, eta, beta).map(|g| g.value)
}

/// Returns the loss and its gradient in `m_nl` (`d_first`) and `m_ni`
/// (`d_second`).
pub fn current_block_loss_grad(
    m_nl: &[f64],
    m_ni: &[f64],
    w_nl: &[f64],
    w_ni: &[f64],
    eta: f64,
    beta: f64,
) -> Result<PairGrad> {
    check_pair("current_block_loss", m_nl, w_nl)?;
    check_pair("current_block_loss", m_ni, w_ni)?;
    check_eta(eta)?;
    let beta = Sharpness::new(beta)?;
    let weighted = |m: &[f64], w: &[f64], coef: f64| {
        let n = m.len() as f64;
        let value = m.iter().zip(w).map(|(&m, &w)| w * beta.barrier(m)).sum::<f64>() / n;
        let grad = m.iter().zip(w).map(|(&m, &w)| coef * w * beta.deriv(m) / n).collect::<Vec<_>>();
        (value, grad)
    };
    let (v_nl, d_first) = weighted(m_nl, w_nl, 1.0 - eta);
    let (v_ni, d_second) = weighted(m_ni, w_ni, eta);
    Ok(PairGrad {
        value: (1.0 - eta) * v_nl + eta * v_ni,
        d_first,
        d_second,
    })
}

/// Cumulative scores of one stream at the current and previous depth.
#[derive(Debug, Clone, Copy)]
pub struct DepthPair<'a> {
    pub current: &'a [f64],
    pub previous: &'a [f64],
}

/// Gradient of [`depth_order_loss`] for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthPairGrad {
    pub d_current: Vec<f64>,
    pub d_previous: Vec<f64>,
}

/// Penalises positive cumulative scores that fail to grow by `delta_pos`
/// and negative cumulative scores that fail to shrink by `delta_neg`.
/// Zero at block 0 (callers pass `None`).
pub fn depth_order_loss(
    pos: Option<DepthPair<'_>>,
    negatives: &[DepthPair<'_>],
    delta_pos: f64,
    delta_neg: f64,
) -> Result<f64> {
    depth_order_loss_grad(pos, negatives, delta_pos, delta_neg).map(|(v, _, _)| v)
}

pub fn depth_order_loss_grad(
    pos: Option<DepthPair<'_>>,
    negatives: &[DepthPair<'_>],
    delta_pos: f64,
    delta_neg: f64,
) -> Result<(f64, Option<DepthPairGrad>, Vec<DepthPairGrad>)> {
    let Some(pos) = pos else {
        return Ok((0.0, None, Vec::new()));
    };
    check_pair("depth_order_loss", pos.current, pos.previous)?;
    let n = pos.current.len() as f64;
    let mut value = 0.0;
    let mut pg = DepthPairGrad {
        d_current: Vec::with_capacity(pos.current.len()),
        d_previous: Vec::with_capacity(pos.current.len()),
    };
    for (&c, &p) in pos.current.iter().zip(pos.previous) {
        let u = delta_pos - (c - p);
        value += softplus(u) / n;
        let s = sigmoid(u) / n;
        pg.d_current.push(-s);
        pg.d_previous.push(s);
    }
    let mut neg_grads = Vec::with_capacity(negatives.len());
    for neg in negatives {
        check_pair("depth_order_loss", neg.current, neg.previous)?;
        let n = neg.current.len() as f64;
        let mut g = DepthPairGrad {
            d_current: Vec::with_capacity(neg.current.len()),
            d_previous: Vec::with_capacity(neg.current.len()),
        };
        for (&c, &p) in neg.current.iter().zip(neg.previous) {
            let u = delta_neg - (p - c);
            value += softplus(u) / n;
            let s = sigmoid(u) / n;
            g.d_current.push(s);
            g.d_previous.push(-s);
        }
        neg_grads.push(g);
    }
    Ok((value, Some(pg), neg_grads))
}

/// Missing-gradient compensated loss for one stream.
#[derive(Debug, Clone, PartialEq)]
pub struct MgcOutput {
    pub loss: f64,
    /// Stop-gradient coefficients `[c_d - s(M)/(s(m)+eps)]_+`.
    pub lambda: Vec<f64>,
    /// Gradient of the batch-mean loss in each current margin.
    pub d_margin: Vec<f64>,
    /// Gradient in each upstream margin (through `M` only; `lambda` is
    /// held constant).
    pub d_upstream: Vec<f64>,
}

pub fn mgc_loss(m: &[f64], p_prev: &[f64], gamma: f64, beta: f64, c_d: f64, eps: f64) -> Result<MgcOutput> {
    check_pair("mgc_loss", m, p_prev)?;
    if !(c_d >= 1.0) || !(eps >= 0.0) {
        return Err(Error::Parameter(format!("mgc needs c_d >= 1 and eps >= 0, got ({c_d}, {eps})")));
    }
    let b = Sharpness::new(beta)?;
    let n = m.len() as f64;
    let mut out = MgcOutput {
        loss: 0.0,
        lambda: Vec::with_capacity(m.len()),
        d_margin: Vec::with_capacity(m.len()),
        d_upstream: Vec::with_capacity(m.len()),
    };
    for (&mi, &pi) in m.iter().zip(p_prev) {
        let big_m = mi + gamma * pi;
        let s_big = sigmoid(-beta * big_m);
        let s_m = sigmoid(-beta * mi);
        let lambda = (c_d - s_big / (s_m + eps)).max(0.0);
        out.loss += (b.barrier(big_m) + lambda * b.barrier(mi)) / n;
        out.d_margin.push((b.deriv(big_m) + lambda * b.deriv(mi)) / n);
        out.d_upstream.push(gamma * b.deriv(big_m) / n);
        out.lambda.push(lambda);
    }
    Ok(out)
}

/// Coefficients of the per-block objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Weight of the current-block energy margin loss.
    pub lambda_aspect: f64,
    pub lambda_block: f64,
    pub lambda0: f64,
    pub rho: f64,
    pub lambda_depth: f64,
    /// Wrong-image share of the wrong-label / wrong-image blend.
    pub eta: f64,
    pub delta_pos: f64,
    pub delta_neg: f64,
    pub beta: f64,
    pub alpha: f64,
    pub theta: f64,
    pub w_min: f64,
    pub w_max: f64,
    /// `c_d = 1 + mgc_rho d / (L - 1)`.
    pub mgc_rho: f64,
    pub mgc_eps: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_aspect: 1.0,
            lambda_block: 1.0,
            lambda0: 0.25,
            rho: 3.0,
            lambda_depth: 0.0,
            eta: 0.5,
            delta_pos: 0.1,
            delta_neg: 0.1,
            beta: 4.0,
            alpha: 4.0,
            theta: 1.0,
            w_min: 0.1,
            w_max: 10.0,
            mgc_rho: 0.0,
            mgc_eps: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        check_eta(self.eta)?;
        Sharpness::new(self.beta)?;
        Sharpness::new(self.alpha)?;
        if !(self.w_min > 0.0 && self.w_min <= 1.0 && self.w_max >= 1.0) {
            return Err(Error::Parameter("need 0 < w_min <= 1 <= w_max".into()));
        }
        for (name, v) in [
            ("lambda0", self.lambda0),
            ("rho", self.rho),
            ("delta_pos", self.delta_pos),
            ("delta_neg", self.delta_neg),
            ("mgc_rho", self.mgc_rho),
            ("mgc_eps", self.mgc_eps),
        ] {
            if !(v >= 0.0) {
                return Err(Error::Parameter(format!("{name} must be non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// `lambda_curr(d)`; a single-block network uses `lambda0` unscaled.
    pub fn lambda_curr(&self, d: usize, blocks: usize) -> Result<f64> {
        if blocks < 2 {
            return Ok(self.lambda0);
        }
        depth_scaled_lambda(d, blocks, self.lambda0, self.rho)
    }

    pub fn mgc_target(&self, d: usize, blocks: usize) -> f64 {
        if blocks < 2 {
            1.0
        } else {
            1.0 + self.mgc_rho * d as f64 / (blocks - 1) as f64
        }
    }
}

/// One value per example for each of the three streams.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamScores {
    pub pos: Vec<f64>,
    pub wrong_label: Vec<f64>,
    pub wrong_image: Vec<f64>,
}

impl StreamScores {
    pub fn zeros(n: usize) -> Self {
        StreamScores {
            pos: vec![0.0; n],
            wrong_label: vec![0.0; n],
            wrong_image: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    fn check(&self, n: usize) -> Result<()> {
        if self.pos.len() != n || self.wrong_label.len() != n || self.wrong_image.len() != n {
            return Err(Error::dims("StreamScores", n, self.wrong_label.len()));
        }
        Ok(())
    }
}

/// Everything the block-`d` objective sees. Upstream quantities are
/// detached summaries of blocks `0..d`.
#[derive(Debug, Clone, Copy)]
pub struct BlockLossInputs<'a> {
    /// Current-block goodness `g^(d)`.
    pub current: &'a StreamScores,
    /// `sum_{j<d} g^(j)`; zeros at block 0.
    pub upstream_sum: &'a StreamScores,
    /// `g^(d-1)`; `None` at block 0.
    pub previous: Option<&'a StreamScores>,
    /// Effective history weight.
    pub gamma: f64,
    pub depth: usize,
    pub blocks: usize,
}

impl BlockLossInputs<'_> {
    fn validate(&self) -> Result<usize> {
        let n = self.current.len();
        if n == 0 {
            return Err(Error::Domain("block loss on an empty batch".into()));
        }
        self.current.check(n)?;
        self.upstream_sum.check(n)?;
        if let Some(p) = self.previous {
            p.check(n)?;
        }
        if (self.depth == 0) != self.previous.is_none() {
            return Err(Error::Parameter("previous-block scores are required exactly when depth > 0".into()));
        }
        Ok(n)
    }

    /// `g + gamma * sum_{j<d} g^(j)` per stream.
    pub fn cumulative(&self) -> StreamScores {
        let mix = |g: &[f64], u: &[f64]| g.iter().zip(u).map(|(g, u)| g + self.gamma * u).collect();
        StreamScores {
            pos: mix(&self.current.pos, &self.upstream_sum.pos),
            wrong_label: mix(&self.current.wrong_label, &self.upstream_sum.wrong_label),
            wrong_image: mix(&self.current.wrong_image, &self.upstream_sum.wrong_image),
        }
    }

    /// Cumulative scores one block up: `g^(d-1) + gamma * sum_{j<d-1} g^(j)`.
    pub fn previous_cumulative(&self) -> Option<StreamScores> {
        let prev = self.previous?;
        let mix = |last: &[f64], u: &[f64]| {
            last.iter().zip(u).map(|(l, u)| l + self.gamma * (u - l)).collect()
        };
        Some(StreamScores {
            pos: mix(&prev.pos, &self.upstream_sum.pos),
            wrong_label: mix(&prev.wrong_label, &self.upstream_sum.wrong_label),
            wrong_image: mix(&prev.wrong_image, &self.upstream_sum.wrong_image),
        })
    }

    pub fn current_margins(&self) -> (Vec<f64>, Vec<f64>) {
        let c = self.current;
        (diff(&c.pos, &c.wrong_label), diff(&c.pos, &c.wrong_image))
    }

    pub fn upstream_margins(&self) -> (Vec<f64>, Vec<f64>) {
        let u = self.upstream_sum;
        (diff(&u.pos, &u.wrong_label), diff(&u.pos, &u.wrong_image))
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| a - b).collect()
}

/// Split of a two-stream term into its wrong-label and wrong-image parts
/// (each unblended).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StreamSplit {
    pub wrong_label: f64,
    pub wrong_image: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BlockLossBreakdown {
    pub total: f64,
    pub aspect: f64,
    pub block_cumulative: f64,
    pub current_block: f64,
    pub depth_order: f64,
    pub mgc: f64,
    /// Depth-scaled coefficient applied to `current_block`.
    pub lambda_curr: f64,
    pub aspect_streams: StreamSplit,
    pub block_streams: StreamSplit,
    pub current_streams: StreamSplit,
    pub mgc_streams: StreamSplit,
}

impl BlockLossBreakdown {
    /// Weighted contributions in the order aspect, block, current, depth, mgc.
    pub fn contributions(&self, w: &LossWeights) -> [f64; 5] {
        [
            w.lambda_aspect * self.aspect,
            w.lambda_block * self.block_cumulative,
            self.lambda_curr * self.current_block,
            w.lambda_depth * self.depth_order,
            self.mgc,
        ]
    }
}

/// Gradient of the block objective. `current` is what drives the block's
/// own update. The upstream parts are the derivatives the objective would
/// send into earlier blocks if their summaries were not detached; they are
/// only consumed by the locality negative control.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLossGrad {
    pub current: StreamScores,
    pub upstream_sum: StreamScores,
    pub previous: StreamScores,
}

pub fn total_block_loss(inputs: &BlockLossInputs<'_>, weights: &LossWeights, mgc_enabled: bool) -> Result<BlockLossBreakdown> {
    total_block_loss_grad(inputs, weights, mgc_enabled).map(|(b, _)| b)
}

pub fn total_block_loss_grad(
    inputs: &BlockLossInputs<'_>,
    weights: &LossWeights,
    mgc_enabled: bool,
) -> Result<(BlockLossBreakdown, BlockLossGrad)> {
    let n = inputs.validate()?;
    weights.validate()?;
    let eta = weights.eta;
    let (w_nl_blend, w_ni_blend) = (1.0 - eta, eta);
    let cur = inputs.current;
    let mut grad = BlockLossGrad {
        current: StreamScores::zeros(n),
        upstream_sum: StreamScores::zeros(n),
        previous: StreamScores::zeros(n),
    };
    let mut out = BlockLossBreakdown {
        lambda_curr: weights.lambda_curr(inputs.depth, inputs.blocks)?,
        ..Default::default()
    };

    // energy margin loss on current goodness
    let a_nl = margin_loss_grad(&cur.pos, &cur.wrong_label, weights.theta)?;
    let a_ni = margin_loss_grad(&cur.pos, &cur.wrong_image, weights.theta)?;
    out.aspect_streams = StreamSplit {
        wrong_label: a_nl.value,
        wrong_image: a_ni.value,
    };
    out.aspect = w_nl_blend * a_nl.value + w_ni_blend * a_ni.value;
    let c = weights.lambda_aspect;
    for i in 0..n {
        grad.current.pos[i] += c * (w_nl_blend * a_nl.d_first[i] + w_ni_blend * a_ni.d_first[i]);
        grad.current.wrong_label[i] += c * w_nl_blend * a_nl.d_second[i];
        grad.current.wrong_image[i] += c * w_ni_blend * a_ni.d_second[i];
    }

    // block-cumulative discrimination on gamma-mixed scores
    let cum = inputs.cumulative();
    let b_nl = sep_loss_grad(&cum.pos, &cum.wrong_label, weights.alpha)?;
    let b_ni = sep_loss_grad(&cum.pos, &cum.wrong_image, weights.alpha)?;
    out.block_streams = StreamSplit {
        wrong_label: b_nl.value,
        wrong_image: b_ni.value,
    };
    out.block_cumulative = w_nl_blend * b_nl.value + w_ni_blend * b_ni.value;
    let c = weights.lambda_block;
    let gamma = inputs.gamma;
    for i in 0..n {
        let dp = c * (w_nl_blend * b_nl.d_first[i] + w_ni_blend * b_ni.d_first[i]);
        let dnl = c * w_nl_blend * b_nl.d_second[i];
        let dni = c * w_ni_blend * b_ni.d_second[i];
        grad.current.pos[i] += dp;
        grad.current.wrong_label[i] += dnl;
        grad.current.wrong_image[i] += dni;
        grad.upstream_sum.pos[i] += gamma * dp;
        grad.upstream_sum.wrong_label[i] += gamma * dnl;
        grad.upstream_sum.wrong_image[i] += gamma * dni;
    }

    // depth-scaled current-block residual loss
    let (m_nl, m_ni) = inputs.current_margins();
    let (p_nl, p_ni) = inputs.upstream_margins();
    let w_nl = residual_weights(&p_nl, weights.beta, weights.w_min, weights.w_max)?;
    let w_ni = residual_weights(&p_ni, weights.beta, weights.w_min, weights.w_max)?;
    let curr = current_block_loss_grad(&m_nl, &m_ni, &w_nl, &w_ni, eta, weights.beta)?;
    let beta = Sharpness::new(weights.beta)?;
    let mean_barrier = |m: &[f64], w: &[f64]| m.iter().zip(w).map(|(&m, &w)| w * beta.barrier(m)).sum::<f64>() / n as f64;
    out.current_streams = StreamSplit {
        wrong_label: mean_barrier(&m_nl, &w_nl),
        wrong_image: mean_barrier(&m_ni, &w_ni),
    };
    out.current_block = curr.value;
    let c = out.lambda_curr;
    for i in 0..n {
        let dnl = c * curr.d_first[i];
        let dni = c * curr.d_second[i];
        grad.current.pos[i] += dnl + dni;
        grad.current.wrong_label[i] -= dnl;
        grad.current.wrong_image[i] -= dni;
    }

    // depth-order loss on gamma-mixed cumulative scores
    if let Some(prev) = inputs.previous_cumulative() {
        let (value, pg, ng) = depth_order_loss_grad(
            Some(DepthPair {
                current: &cum.pos,
                previous: &prev.pos,
            }),
            &[
                DepthPair {
                    current: &cum.wrong_label,
                    previous: &prev.wrong_label,
                },
                DepthPair {
                    current: &cum.wrong_image,
                    previous: &prev.wrong_image,
                },
            ],
            weights.delta_pos,
            weights.delta_neg,
        )?;
        out.depth_order = value;
        let c = weights.lambda_depth;
        let pg = pg.expect("depth-order gradient present when previous scores exist");
        let streams = [(&pg, 0usize), (&ng[0], 1), (&ng[1], 2)];
        for (g, s) in streams {
            let (cur_g, up_g, prev_g) = match s {
                0 => (&mut grad.current.pos, &mut grad.upstream_sum.pos, &mut grad.previous.pos),
                1 => (
                    &mut grad.current.wrong_label,
                    &mut grad.upstream_sum.wrong_label,
                    &mut grad.previous.wrong_label,
                ),
                _ => (
                    &mut grad.current.wrong_image,
                    &mut grad.upstream_sum.wrong_image,
                    &mut grad.previous.wrong_image,
                ),
            };
            for i in 0..n {
                // G = g + gamma U ; G_prev = last + gamma (U - last)
                cur_g[i] += c * g.d_current[i];
                up_g[i] += c * gamma * (g.d_current[i] + g.d_previous[i]);
                prev_g[i] += c * (1.0 - gamma) * g.d_previous[i];
            }
        }
    }

    if mgc_enabled {
        let c_d = weights.mgc_target(inputs.depth, inputs.blocks);
        let nl = mgc_loss(&m_nl, &p_nl, gamma, weights.beta, c_d, weights.mgc_eps)?;
        let ni = mgc_loss(&m_ni, &p_ni, gamma, weights.beta, c_d, weights.mgc_eps)?;
        out.mgc_streams = StreamSplit {
            wrong_label: nl.loss,
            wrong_image: ni.loss,
        };
        out.mgc = w_nl_blend * nl.loss + w_ni_blend * ni.loss;
        for i in 0..n {
            let dnl = w_nl_blend * nl.d_margin[i];
            let dni = w_ni_blend * ni.d_margin[i];
            grad.current.pos[i] += dnl + dni;
            grad.current.wrong_label[i] -= dnl;
            grad.current.wrong_image[i] -= dni;
            let unl = w_nl_blend * nl.d_upstream[i];
            let uni = w_ni_blend * ni.d_upstream[i];
            grad.upstream_sum.pos[i] += unl + uni;
            grad.upstream_sum.wrong_label[i] -= unl;
            grad.upstream_sum.wrong_image[i] -= uni;
        }
    }

    out.total = out.contributions(weights).iter().sum();
    if !out.total.is_finite() {
        return Err(Error::Numeric {
            block: inputs.depth,
            what: "block loss".into(),
        });
    }
    Ok((out, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_grad;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::LN_2;

    #[test]
    fn sep_loss_examples() {
        let v = sep_loss(&[0.3, -1.0], &[0.3, -1.0], 4.0).unwrap();
        assert!((v - LN_2).abs() < 1e-15);
        assert!(sep_loss(&[500.0], &[0.0], 4.0).unwrap() < 1e-300);
        assert!((sep_loss(&[1.0], &[0.0], 4.0).unwrap() - 0.018_149_927_917_809_74).abs() < 1e-16);
        assert!(matches!(sep_loss(&[1.0], &[0.0, 1.0], 4.0), Err(Error::Dimension { .. })));
    }

    #[test]
    fn margin_loss_examples() {
        assert!((margin_loss(&[1.0], &[1.0], 1.0).unwrap() - 2.0 * LN_2).abs() < 1e-15);
        assert!(margin_loss(&[100.0], &[-100.0], 1.0).unwrap() < 1e-40);
        // 2 softplus(-1), mpmath
        assert!((margin_loss(&[2.0], &[0.0], 1.0).unwrap() - 0.626_523_375_036_445_7).abs() < 1e-15);
        assert!(margin_loss(&[], &[1.0], 1.0).is_err());
    }

    #[test]
    fn block_cumulative_blend() {
        let gp = [1.0, 0.2];
        let nl = [0.0, 0.5];
        let ni = [2.0, -1.0];
        let a = sep_loss(&gp, &nl, 4.0).unwrap();
        let b = sep_loss(&gp, &ni, 4.0).unwrap();
        assert_eq!(block_cumulative_loss(&gp, &nl, &ni, 0.0, 4.0).unwrap(), a);
        assert_eq!(block_cumulative_loss(&gp, &nl, &ni, 1.0, 4.0).unwrap(), b);
        assert!((block_cumulative_loss(&gp, &nl, &nl, 0.5, 4.0).unwrap() - a).abs() < 1e-15);
        assert!(block_cumulative_loss(&gp, &nl, &ni, 1.5, 4.0).is_err());
    }

    #[test]
    fn residual_weight_examples() {
        let w = residual_weights(&[0.7; 5], 4.0, 0.1, 10.0).unwrap();
        assert!(w.iter().all(|&v| v == 1.0));
        // direct three-step evaluation for P = (0, 10), beta = 4, clip (0.1, 10)
        let a = [0.5, 1.0 / (1.0 + 40f64.exp())];
        let abar = (a[0] + a[1]) / 2.0;
        let u = [(a[0] / abar).clamp(0.1, 10.0), (a[1] / abar).clamp(0.1, 10.0)];
        let ubar = (u[0] + u[1]) / 2.0;
        let want = [u[0] / ubar, u[1] / ubar];
        let w = residual_weights(&[0.0, 10.0], 4.0, 0.1, 10.0).unwrap();
        assert!((w[0] - want[0]).abs() < 1e-12 && (w[1] - want[1]).abs() < 1e-12);
        assert!(w[0] > w[1]);
        assert!(((w[0] + w[1]) / 2.0 - 1.0).abs() < 1e-12);
        assert!(residual_weights(&[], 4.0, 0.1, 10.0).is_err());
        assert!(residual_weights(&[1.0], 4.0, 2.0, 10.0).is_err());
    }

    #[test]
    fn residual_weights_survive_extreme_margins() {
        let w = residual_weights(&[300.0, 400.0, 500.0], 4.0, 0.1, 10.0).unwrap();
        assert!(w.iter().all(|v| v.is_finite()));
        assert!((w.iter().sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn depth_schedule() {
        let got: Vec<f64> = (0..4).map(|d| depth_scaled_lambda(d, 4, 0.25, 3.0).unwrap()).collect();
        assert_eq!(got, vec![0.25, 0.50, 0.75, 1.00]);
        assert_eq!(depth_scaled_lambda(2, 5, 0.4, 0.0).unwrap(), 0.4);
        assert_eq!(depth_scaled_lambda(5, 6, 0.5, 2.0).unwrap(), 1.5);
        assert!(depth_scaled_lambda(0, 1, 0.25, 3.0).is_err());
    }

    #[test]
    fn current_block_examples() {
        let m = [0.4, -0.3, 1.2];
        let ones = [1.0; 3];
        let v = current_block_loss(&m, &m, &ones, &ones, 0.0, 4.0).unwrap();
        let want = m.iter().map(|&x| softplus(-4.0 * x)).sum::<f64>() / 3.0;
        assert!((v - want).abs() < 1e-15);
        assert!(current_block_loss(&[400.0], &[400.0], &[1.0], &[1.0], 0.3, 4.0).unwrap() < 1e-300);
        let v = current_block_loss(&[0.0], &[5.0], &[1.0], &[1.0], 0.0, 4.0).unwrap();
        assert!((v - LN_2).abs() < 1e-15);
    }

    #[test]
    fn depth_order_examples() {
        let cur = [1.1];
        let prev = [1.0];
        let ncur = [0.9];
        let nprev = [1.0];
        let pair = |c, p| DepthPair { current: c, previous: p };
        let v = depth_order_loss(Some(pair(&cur, &prev)), &[pair(&ncur, &nprev)], 0.1, 0.1).unwrap();
        assert!((v - 2.0 * LN_2).abs() < 1e-12);
        let v = depth_order_loss(Some(pair(&[100.0], &[0.0])), &[pair(&[-100.0], &[0.0])], 0.1, 0.1).unwrap();
        assert!(v < 1e-40);
        // positive increment falls short of delta by exactly one unit
        let v = depth_order_loss(Some(pair(&[0.1], &[1.1])), &[], 0.0, 0.0).unwrap();
        assert!((v - 1.313_261_687_518_222_8).abs() < 1e-15);
        assert_eq!(depth_order_loss(None, &[], 0.1, 0.1).unwrap(), 0.0);
    }

    #[test]
    fn mgc_examples() {
        let out = mgc_loss(&[0.5, -0.2], &[1.0, 3.0], 0.0, 4.0, 1.0, 0.0).unwrap();
        assert!(out.lambda.iter().all(|&l| l.abs() < 1e-15));
        let plain = sep_loss(&[0.5, -0.2], &[0.0, 0.0], 4.0).unwrap();
        assert!((out.loss - plain).abs() < 1e-15);

        let out = mgc_loss(&[1.0], &[2.0], 0.7, 4.0, 1.0, 0.0).unwrap();
        assert!((out.d_margin[0].abs() - 0.071_944_839_848_366_23).abs() < 1e-15);
        let lam = out.lambda[0];
        let fd = finite_diff_grad(
            |m| {
                let big = m[0] + 0.7 * 2.0;
                softplus(-4.0 * big) + lam * softplus(-4.0 * m[0])
            },
            &[1.0],
            1e-4,
        )[0];
        assert!((fd.abs() - 0.071_944_839_848_366_23).abs() / 0.0719 < 1e-4);

        let out = mgc_loss(&[0.5], &[-3.0], 1.0, 4.0, 1.0, 0.0).unwrap();
        assert!(crate::goodness::attenuation_ratio(0.5, -3.0, 1.0, 4.0) > 1.0);
        assert_eq!(out.lambda[0], 0.0);
    }

    fn random_scores(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> StreamScores {
        let mut v = || (0..n).map(|_| rng.random_range(-scale..scale)).collect::<Vec<_>>();
        StreamScores {
            pos: v(),
            wrong_label: v(),
            wrong_image: v(),
        }
    }

    fn flatten(s: &StreamScores) -> Vec<f64> {
        [s.pos.clone(), s.wrong_label.clone(), s.wrong_image.clone()].concat()
    }

    fn unflatten(v: &[f64], n: usize) -> StreamScores {
        StreamScores {
            pos: v[..n].to_vec(),
            wrong_label: v[n..2 * n].to_vec(),
            wrong_image: v[2 * n..].to_vec(),
        }
    }

    fn all_on() -> LossWeights {
        LossWeights {
            lambda_depth: 0.6,
            mgc_rho: 0.5,
            mgc_eps: 1e-6,
            eta: 0.3,
            ..LossWeights::default()
        }
    }

    #[test]
    fn total_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 5;
        for depth in 0..3 {
            let cur = random_scores(&mut rng, n, 2.0);
            let up = if depth == 0 { StreamScores::zeros(n) } else { random_scores(&mut rng, n, 3.0) };
            let prev = random_scores(&mut rng, n, 2.0);
            let weights = all_on();
            let inputs = BlockLossInputs {
                current: &cur,
                upstream_sum: &up,
                previous: (depth > 0).then_some(&prev),
                gamma: 0.7,
                depth,
                blocks: 4,
            };
            let (_, grad) = total_block_loss_grad(&inputs, &weights, true).unwrap();
            // the mgc coefficient is stop-gradient in the current margin, so a
            // plain finite difference only applies with mgc off
            let (_, grad_nomgc) = total_block_loss_grad(&inputs, &weights, false).unwrap();
            let fd_nomgc = finite_diff_grad(
                |v| {
                    let c = unflatten(v, n);
                    let inp = BlockLossInputs { current: &c, ..inputs };
                    total_block_loss(&inp, &weights, false).unwrap().total
                },
                &flatten(&cur),
                1e-5,
            );
            let rep = crate::numerics::GradCheckReport::compare(&flatten(&grad_nomgc.current), &fd_nomgc, 1e-8).unwrap();
            assert!(rep.passes(1e-4), "depth {depth}: {rep:?}");
            assert_ne!(grad.current, grad_nomgc.current);
        }
    }

    #[test]
    fn upstream_gradient_matches_finite_differences() {
        // with the residual-weight and mgc terms off every upstream path is live
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 4;
        let cur = random_scores(&mut rng, n, 2.0);
        let up = random_scores(&mut rng, n, 3.0);
        let prev = random_scores(&mut rng, n, 2.0);
        let weights = LossWeights {
            lambda0: 0.0,
            lambda_depth: 0.8,
            ..LossWeights::default()
        };
        let base = BlockLossInputs {
            current: &cur,
            upstream_sum: &up,
            previous: Some(&prev),
            gamma: 0.6,
            depth: 2,
            blocks: 4,
        };
        let (_, grad) = total_block_loss_grad(&base, &weights, false).unwrap();
        let fd_up = finite_diff_grad(
            |v| {
                let u = unflatten(v, n);
                total_block_loss(&BlockLossInputs { upstream_sum: &u, ..base }, &weights, false).unwrap().total
            },
            &flatten(&up),
            1e-5,
        );
        let rep = crate::numerics::GradCheckReport::compare(&flatten(&grad.upstream_sum), &fd_up, 1e-8).unwrap();
        assert!(rep.passes(1e-4), "{rep:?}");
        let fd_prev = finite_diff_grad(
            |v| {
                let p = unflatten(v, n);
                total_block_loss(&BlockLossInputs { previous: Some(&p), ..base }, &weights, false).unwrap().total
            },
            &flatten(&prev),
            1e-5,
        );
        let rep = crate::numerics::GradCheckReport::compare(&flatten(&grad.previous), &fd_prev, 1e-8).unwrap();
        assert!(rep.passes(1e-4), "{rep:?}");
    }

    #[test]
    fn breakdown_sums_and_isolates_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 6;
        let cur = random_scores(&mut rng, n, 2.0);
        let up = random_scores(&mut rng, n, 2.0);
        let prev = random_scores(&mut rng, n, 2.0);
        let inputs = BlockLossInputs {
            current: &cur,
            upstream_sum: &up,
            previous: Some(&prev),
            gamma: 0.7,
            depth: 3,
            blocks: 4,
        };
        let w = all_on();
        let b = total_block_loss(&inputs, &w, true).unwrap();
        assert!((b.contributions(&w).iter().sum::<f64>() - b.total).abs() < 1e-12);
        assert_eq!(b.lambda_curr, 1.0);

        let only_block = LossWeights {
            lambda_aspect: 0.0,
            lambda_block: 2.0,
            lambda0: 0.0,
            lambda_depth: 0.0,
            ..w
        };
        let b = total_block_loss(&inputs, &only_block, false).unwrap();
        assert!((b.total - 2.0 * b.block_cumulative).abs() < 1e-15);

        let fair = LossWeights::default();
        let b = total_block_loss(&inputs, &fair, false).unwrap();
        assert_eq!(b.lambda_curr, 1.0);
    }

    #[test]
    fn block_term_equals_barrier_of_cumulative_margin() {
        // with alpha = beta, sep(G+, G-) is the barrier of M = m + gamma P
        let cur = StreamScores {
            pos: vec![1.3],
            wrong_label: vec![0.2],
            wrong_image: vec![0.2],
        };
        let up = StreamScores {
            pos: vec![2.0],
            wrong_label: vec![0.5],
            wrong_image: vec![0.5],
        };
        let prev = StreamScores::zeros(1);
        let inputs = BlockLossInputs {
            current: &cur,
            upstream_sum: &up,
            previous: Some(&prev),
            gamma: 0.7,
            depth: 1,
            blocks: 4,
        };
        let b = total_block_loss(&inputs, &LossWeights::default(), false).unwrap();
        let m = 1.1;
        let p = 1.5;
        let want = softplus(-4.0 * crate::goodness::cumulative_margin(m, p, 0.7));
        assert!((b.block_cumulative - want).abs() < 1e-15);
    }
}
