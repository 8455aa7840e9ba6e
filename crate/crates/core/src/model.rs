//! Label-conditioned dense blocks with energy goodness, hand-derived
//! reverse-mode gradients and an exponential-moving-average teacher.
//!
//! One block computes
//!
//! ```text
//! z = x + E[y]              (label injection, optional past block 0)
//! h = relu(z W1 + b1)
//! g = mean_k h_k^2 - offset (energy goodness)
//! out = l2norm(h W2 + b2)   (tokens for the next block)
//! ```

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::StreamScores;
use crate::numerics::{affine_forward, l2_normalize_rows, l2_normalize_rows_with_norms, Matrix};

/// Row norms below this are not rescaled.
pub const NORM_EPS: f64 = 1e-6;

/// Shape and initialisation of a [`Network`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub blocks: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    /// Constant subtracted from every block's energy.
    pub goodness_offset: f64,
    /// Inject the label at every block rather than only at block 0.
    pub label_every_block: bool,
    /// L2-normalise raw inputs before block 0.
    pub normalize_input: bool,
    pub init_scale: f64,
    /// Multiplier on the initial label-embedding scale.
    pub label_init_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            blocks: 4,
            hidden_dim: 64,
            output_dim: 32,
            goodness_offset: 1.0,
            label_every_block: true,
            normalize_input: true,
            init_scale: 1.0,
            label_init_scale: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::Parameter("model needs at least one block and non-zero widths".into()));
        }
        if !(self.init_scale > 0.0 && self.label_init_scale >= 0.0) {
            return Err(Error::Parameter("init scales must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    /// `input_dim x hidden_dim`
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `hidden_dim x output_dim`
    pub w2: Matrix,
    pub b2: Vec<f64>,
    /// `classes x input_dim`
    pub label_embed: Matrix,
    pub inject_label: bool,
    pub goodness_offset: f64,
}

impl BlockParams {
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        classes: usize,
        inject_label: bool,
        goodness_offset: f64,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        BlockParams {
            w1: Matrix::random_normal(input_dim, hidden_dim, scale * (2.0 / input_dim as f64).sqrt(), rng),
            b1: vec![0.0; hidden_dim],
            w2: Matrix::random_normal(hidden_dim, output_dim, scale / (hidden_dim as f64).sqrt(), rng),
            b2: vec![0.0; output_dim],
            label_embed: Matrix::random_normal(classes, input_dim, 1.0 / (input_dim as f64).sqrt(), rng),
            inject_label,
            goodness_offset,
        }
    }

    pub fn zeros_like(&self) -> Self {
        BlockParams {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; self.b2.len()],
            label_embed: Matrix::zeros(self.label_embed.rows(), self.label_embed.cols()),
            inject_label: self.inject_label,
            goodness_offset: self.goodness_offset,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn classes(&self) -> usize {
        self.label_embed.rows()
    }

    /// Parameter tensors in storage order: W1, b1, W2, b2, label table.
    pub fn tensors(&self) -> [&[f64]; 5] {
        [
            self.w1.as_slice(),
            &self.b1,
            self.w2.as_slice(),
            &self.b2,
            self.label_embed.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            self.w1.as_mut_slice(),
            &mut self.b1,
            self.w2.as_mut_slice(),
            &mut self.b2,
            self.label_embed.as_mut_slice(),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::dims("BlockParams::set_flat", self.param_count(), flat.len()));
        }
        let mut off = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &BlockParams) -> bool {
        self.w1.shape() == other.w1.shape()
            && self.w2.shape() == other.w2.shape()
            && self.label_embed.shape() == other.label_embed.shape()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Gradient of one scalar loss with respect to one block's parameters.
pub type BlockGradients = BlockParams;

/// Intermediate values of one block forward pass, kept for backprop.
#[derive(Debug, Clone)]
pub struct BlockForward {
    pub labels: Vec<usize>,
    /// Block input after label injection.
    pub injected: Matrix,
    pub hidden: Matrix,
    pub pre_norm: Matrix,
    pub row_divisors: Vec<f64>,
    pub output: Matrix,
    pub goodness: Vec<f64>,
}

pub fn block_forward(params: &BlockParams, tokens: &Matrix, labels: &[usize]) -> Result<BlockForward> {
    if tokens.cols() != params.input_dim() {
        return Err(Error::dims("block_forward", tokens.shape_str(), params.w1.shape_str()));
    }
    if tokens.rows() != labels.len() {
        return Err(Error::dims("block_forward labels", tokens.rows(), labels.len()));
    }
    let classes = params.classes();
    let mut injected = tokens.clone();
    for (r, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        if params.inject_label {
            for (v, e) in injected.row_mut(r).iter_mut().zip(params.label_embed.row(y)) {
                *v += e;
            }
        }
    }
    let mut hidden = affine_forward(&injected, &params.w1, &params.b1)?;
    hidden.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
    let width = params.hidden_dim() as f64;
    let goodness = (0..hidden.rows())
        .map(|r| hidden.row(r).iter().map(|v| v * v).sum::<f64>() / width - params.goodness_offset)
        .collect();
    let pre_norm = affine_forward(&hidden, &params.w2, &params.b2)?;
    let (output, row_divisors) = l2_normalize_rows_with_norms(&pre_norm, NORM_EPS);
    Ok(BlockForward {
        labels: labels.to_vec(),
        injected,
        hidden,
        pre_norm,
        row_divisors,
        output,
        goodness,
    })
}

/// Reverse pass through one block. `d_goodness` is the loss gradient in each
/// example's goodness; `d_output` the gradient in the normalised output
/// tokens (absent when the output does not reach the loss). Returns the
/// parameter gradient and the gradient in the block's input tokens.
pub fn block_backward(
    params: &BlockParams,
    fwd: &BlockForward,
    d_goodness: &[f64],
    d_output: Option<&Matrix>,
) -> Result<(BlockGradients, Matrix)> {
    let rows = fwd.hidden.rows();
    if d_goodness.len() != rows {
        return Err(Error::dims("block_backward", rows, d_goodness.len()));
    }
    let mut grads = params.zeros_like();
    let width = params.hidden_dim() as f64;
    let mut d_hidden = fwd.hidden.clone();
    for r in 0..rows {
        let s = 2.0 * d_goodness[r] / width;
        d_hidden.row_mut(r).iter_mut().for_each(|v| *v *= s);
    }
    if let Some(d_out) = d_output {
        if d_out.shape() != fwd.output.shape() {
            return Err(Error::dims("block_backward d_output", fwd.output.shape_str(), d_out.shape_str()));
        }
        let mut d_pre = Matrix::zeros(rows, params.output_dim());
        for r in 0..rows {
            let n = fwd.output.row(r);
            let dn = d_out.row(r);
            let div = fwd.row_divisors[r];
            let dst = d_pre.row_mut(r);
            if div > NORM_EPS {
                let proj: f64 = n.iter().zip(dn).map(|(a, b)| a * b).sum();
                for ((o, &nv), &dv) in dst.iter_mut().zip(n).zip(dn) {
                    *o = (dv - nv * proj) / div;
                }
            } else {
                for (o, &dv) in dst.iter_mut().zip(dn) {
                    *o = dv / div;
                }
            }
        }
        grads.w2 = fwd.hidden.t_matmul(&d_pre)?;
        grads.b2 = d_pre.sum_rows();
        d_hidden.add_in_place(&d_pre.matmul_t(&params.w2)?)?;
    }
    // relu gate
    for (d, &h) in d_hidden.as_mut_slice().iter_mut().zip(fwd.hidden.as_slice()) {
        if h <= 0.0 {
            *d = 0.0;
        }
    }
    grads.w1 = fwd.injected.t_matmul(&d_hidden)?;
    grads.b1 = d_hidden.sum_rows();
    let d_input = d_hidden.matmul_t(&params.w1)?;
    if params.inject_label {
        for (r, &y) in fwd.labels.iter().enumerate() {
            for (e, d) in grads.label_embed.row_mut(y).iter_mut().zip(d_input.row(r)) {
                *e += d;
            }
        }
    }
    Ok((grads, d_input))
}

/// Adds `src` into `dst` tensor by tensor.
pub fn accumulate(dst: &mut BlockParams, src: &BlockParams) {
    for (d, s) in dst.tensors_mut().into_iter().zip(src.tensors()) {
        for (a, b) in d.iter_mut().zip(s) {
            *a += b;
        }
    }
}

/// Inputs of the three streams entering one block. Every matrix is a
/// detached copy: nothing upstream receives gradient through it.
#[derive(Debug, Clone, Copy)]
pub struct StreamInputs<'a> {
    pub pos: (&'a Matrix, &'a [usize]),
    pub wrong_label: (&'a Matrix, &'a [usize]),
    pub wrong_image: (&'a Matrix, &'a [usize]),
}

/// Forward caches for the three streams at one block.
#[derive(Debug, Clone)]
pub struct StreamForwards {
    pub pos: BlockForward,
    pub wrong_label: BlockForward,
    pub wrong_image: BlockForward,
}

impl StreamForwards {
    pub fn goodness(&self) -> StreamScores {
        StreamScores {
            pos: self.pos.goodness.clone(),
            wrong_label: self.wrong_label.goodness.clone(),
            wrong_image: self.wrong_image.goodness.clone(),
        }
    }
}

pub fn stream_forward(params: &BlockParams, inputs: StreamInputs<'_>) -> Result<StreamForwards> {
    Ok(StreamForwards {
        pos: block_forward(params, inputs.pos.0, inputs.pos.1)?,
        wrong_label: block_forward(params, inputs.wrong_label.0, inputs.wrong_label.1)?,
        wrong_image: block_forward(params, inputs.wrong_image.0, inputs.wrong_image.1)?,
    })
}

/// Gradient of a goodness-level loss with respect to one block's parameters.
/// `loss` maps the block's three goodness vectors to the scalar loss and its
/// gradient in those vectors. Returns the loss, the parameter gradient and
/// the input-token gradients of the three streams (which a detached caller
/// simply drops).
pub fn block_gradients<F>(params: &BlockParams, fwd: &StreamForwards, loss: F) -> Result<(f64, BlockGradients, [Matrix; 3])>
where
    F: FnOnce(&StreamScores) -> Result<(f64, StreamScores)>,
{
    let (value, dg) = loss(&fwd.goodness())?;
    if !value.is_finite() {
        return Err(Error::Numeric {
            block: usize::MAX,
            what: "non-finite loss".into(),
        });
    }
    let (mut grads, d_pos) = block_backward(params, &fwd.pos, &dg.pos, None)?;
    let (g_nl, d_nl) = block_backward(params, &fwd.wrong_label, &dg.wrong_label, None)?;
    let (g_ni, d_ni) = block_backward(params, &fwd.wrong_image, &dg.wrong_image, None)?;
    accumulate(&mut grads, &g_nl);
    accumulate(&mut grads, &g_ni);
    Ok((value, grads, [d_pos, d_nl, d_ni]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub blocks: Vec<BlockParams>,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub classes: usize,
    pub normalize_input: bool,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, input_dim: usize, classes: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if classes < 2 || input_dim == 0 {
            return Err(Error::Parameter(format!("need >= 2 classes and non-empty inputs, got {classes}, {input_dim}")));
        }
        let blocks = (0..cfg.blocks)
            .map(|d| {
                let in_dim = if d == 0 { input_dim } else { cfg.output_dim };
                let mut b = BlockParams::init(
                    in_dim,
                    cfg.hidden_dim,
                    cfg.output_dim,
                    classes,
                    d == 0 || cfg.label_every_block,
                    cfg.goodness_offset,
                    cfg.init_scale,
                    rng,
                );
                b.label_embed.scale_in_place(cfg.label_init_scale);
                b
            })
            .collect();
        Ok(Network {
            blocks,
            input_dim,
            hidden_dim: cfg.hidden_dim,
            output_dim: cfg.output_dim,
            classes,
            normalize_input: cfg.normalize_input,
        })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn same_shape(&self, other: &Network) -> bool {
        self.depth() == other.depth() && self.blocks.iter().zip(&other.blocks).all(|(a, b)| a.same_shape(b))
    }

    /// Raw inputs as seen by block 0.
    pub fn prepare_input(&self, image: &Matrix) -> Result<Matrix> {
        if image.cols() != self.input_dim {
            return Err(Error::dims("network input", image.cols(), self.input_dim));
        }
        Ok(if self.normalize_input {
            l2_normalize_rows(image, NORM_EPS)
        } else {
            image.clone()
        })
    }

    /// Runs every block, each consuming the previous block's normalised
    /// output as a constant. Returns the forward cache of every block.
    pub fn forward_cached(&self, image: &Matrix, labels: &[usize]) -> Result<Vec<BlockForward>> {
        self.forward_prefix(image, labels, self.depth())
    }

    /// Forward caches of blocks `0..upto`.
    pub fn forward_prefix(&self, image: &Matrix, labels: &[usize], upto: usize) -> Result<Vec<BlockForward>> {
        let mut tokens = self.prepare_input(image)?;
        let mut out = Vec::with_capacity(upto);
        for block in self.blocks.iter().take(upto) {
            let fwd = block_forward(block, &tokens, labels)?;
            tokens = fwd.output.clone();
            out.push(fwd);
        }
        Ok(out)
    }
}

/// Per-block goodness `g^(0..L-1)`, each of length `image.rows()`.
pub fn network_forward(net: &Network, image: &Matrix, labels: &[usize]) -> Result<Vec<Vec<f64>>> {
    Ok(net.forward_cached(image, labels)?.into_iter().map(|f| f.goodness).collect())
}

/// Goodness of every (example, class) pair at every block:
/// `table[d][i * classes + y]`.
pub fn class_goodness_table(net: &Network, image: &Matrix) -> Result<Vec<Vec<f64>>> {
    let n = image.rows();
    let c = net.classes;
    let mut table = vec![vec![0.0; n * c]; net.depth()];
    for y in 0..c {
        let labels = vec![y; n];
        for (d, g) in network_forward(net, image, &labels)?.into_iter().enumerate() {
            for (i, v) in g.into_iter().enumerate() {
                table[d][i * c + y] = v;
            }
        }
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmaTeacher {
    pub shadow: Network,
    pub decay: f64,
}

impl EmaTeacher {
    pub fn new(live: &Network, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::Parameter(format!("EMA decay must lie in [0, 1], got {decay}")));
        }
        Ok(EmaTeacher {
            shadow: live.clone(),
            decay,
        })
    }

    /// `shadow <- decay * shadow + (1 - decay) * live`.
    pub fn update(&mut self, live: &Network) -> Result<()> {
        ema_update(self, live)
    }
}

pub fn ema_update(teacher: &mut EmaTeacher, live: &Network) -> Result<()> {
    if !teacher.shadow.same_shape(live) {
        return Err(Error::dims("ema_update", teacher.shadow.depth(), live.depth()));
    }
    let decay = teacher.decay;
    for (s, l) in teacher.shadow.blocks.iter_mut().zip(&live.blocks) {
        for (st, lt) in s.tensors_mut().into_iter().zip(l.tensors()) {
            for (a, &b) in st.iter_mut().zip(lt) {
                *a = decay * *a + (1.0 - decay) * b;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_grad, GradCheckReport};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_block(rng: &mut ChaCha8Rng, inject: bool) -> BlockParams {
        BlockParams::init(4, 4, 4, 3, inject, 0.5, 1.0, rng)
    }

    #[test]
    fn zero_weights_give_minus_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = small_block(&mut rng, true);
        p.w1 = Matrix::zeros(4, 4);
        let x = Matrix::random_normal(3, 4, 1.0, &mut rng);
        let f = block_forward(&p, &x, &[0, 1, 2]).unwrap();
        assert!(f.goodness.iter().all(|&g| g == -0.5));
    }

    #[test]
    fn label_changes_goodness() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = small_block(&mut rng, true);
        let x = Matrix::random_normal(1, 4, 1.0, &mut rng);
        let a = block_forward(&p, &x, &[0]).unwrap().goodness[0];
        let b = block_forward(&p, &x, &[1]).unwrap().goodness[0];
        assert_ne!(a, b);
        assert!(matches!(block_forward(&p, &x, &[3]), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn goodness_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = small_block(&mut rng, true);
        let x = Matrix::random_normal(2, 4, 1.0, &mut rng);
        let labels = [2, 0];
        let f = block_forward(&p, &x, &labels).unwrap();
        for i in 0..2 {
            let mut acc = 0.0;
            for k in 0..4 {
                let mut a = p.b1[k];
                for j in 0..4 {
                    a += (x.get(i, j) + p.label_embed.get(labels[i], j)) * p.w1.get(j, k);
                }
                acc += a.max(0.0).powi(2);
            }
            assert!((f.goodness[i] - (acc / 4.0 - 0.5)).abs() < 1e-14);
        }
        for r in 0..2 {
            let norm: f64 = f.output.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for inject in [true, false] {
            let p = small_block(&mut rng, inject);
            let x = Matrix::random_normal(3, 4, 1.0, &mut rng);
            let labels = [1, 2, 1];
            let dg = [0.3, -1.2, 0.7];
            let dout = Matrix::random_normal(3, 4, 1.0, &mut rng);
            let scalar = |p: &BlockParams, x: &Matrix| {
                let f = block_forward(p, x, &labels).unwrap();
                let a: f64 = f.goodness.iter().zip(&dg).map(|(g, w)| g * w).sum();
                let b: f64 = f.output.as_slice().iter().zip(dout.as_slice()).map(|(o, w)| o * w).sum();
                a + b
            };
            let fwd = block_forward(&p, &x, &labels).unwrap();
            let (grads, d_in) = block_backward(&p, &fwd, &dg, Some(&dout)).unwrap();
            let fd = finite_diff_grad(
                |flat| {
                    let mut q = p.clone();
                    q.set_flat(flat).unwrap();
                    scalar(&q, &x)
                },
                &p.to_flat(),
                1e-5,
            );
            let rep = GradCheckReport::compare(&grads.to_flat(), &fd, 1e-8).unwrap();
            assert!(rep.passes(1e-4), "{rep:?}");
            let fd_x = finite_diff_grad(
                |flat| scalar(&p, &Matrix::from_vec(3, 4, flat.to_vec()).unwrap()),
                x.as_slice(),
                1e-5,
            );
            let rep = GradCheckReport::compare(d_in.as_slice(), &fd_x, 1e-8).unwrap();
            assert!(rep.passes(1e-4), "{rep:?}");
        }
    }

    #[test]
    fn network_forward_is_causal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = ModelConfig {
            blocks: 3,
            hidden_dim: 6,
            output_dim: 5,
            ..ModelConfig::default()
        };
        let net = Network::new(&cfg, 4, 3, &mut rng).unwrap();
        let x = Matrix::random_normal(2, 4, 1.0, &mut rng);
        let g = network_forward(&net, &x, &[0, 2]).unwrap();
        let mut swapped = net.clone();
        swapped.blocks.swap(1, 2);
        let h = network_forward(&swapped, &x, &[0, 2]).unwrap();
        assert_eq!(g[0], h[0]);

        let one = Network {
            blocks: vec![net.blocks[0].clone()],
            ..net.clone()
        };
        let g1 = network_forward(&one, &x, &[0, 2]).unwrap();
        let direct = block_forward(&net.blocks[0], &net.prepare_input(&x).unwrap(), &[0, 2]).unwrap();
        assert_eq!(g1[0], direct.goodness);
    }

    #[test]
    fn two_block_hand_trace() {
        // 2x2 weights, identity-like maps, C = 2, no input normalisation
        let block = |w1: [f64; 4], w2: [f64; 4], e: [f64; 4]| BlockParams {
            w1: Matrix::from_vec(2, 2, w1.to_vec()).unwrap(),
            b1: vec![0.0, 0.0],
            w2: Matrix::from_vec(2, 2, w2.to_vec()).unwrap(),
            b2: vec![0.0, 0.0],
            label_embed: Matrix::from_vec(2, 2, e.to_vec()).unwrap(),
            inject_label: true,
            goodness_offset: 0.0,
        };
        let net = Network {
            blocks: vec![
                block([1.0, 0.0, 0.0, 1.0], [0.0, 1.0, 1.0, 0.0], [1.0, 0.0, 0.0, 1.0]),
                block([2.0, 0.0, 0.0, -1.0], [1.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 0.0]),
            ],
            input_dim: 2,
            hidden_dim: 2,
            output_dim: 2,
            classes: 2,
            normalize_input: false,
        };
        let x = Matrix::from_vec(1, 2, vec![3.0, 4.0]).unwrap();
        // label 0: z = (4, 4), h = (4, 4), g0 = 16; out = norm((4, 4)) = (s, s)
        // block 1: h = relu((2s, -s)) = (2s, 0), g1 = 4 s^2 / 2 = 1
        let g = network_forward(&net, &x, &[0]).unwrap();
        assert!((g[0][0] - 16.0).abs() < 1e-12);
        assert!((g[1][0] - 1.0).abs() < 1e-12);
        // label 1: z = (3, 5), h = (3, 5), g0 = 17; out = (5, 3)/sqrt(34)
        // block 1: h = (10/sqrt34, 0), g1 = 100 / 34 / 2
        let g = network_forward(&net, &x, &[1]).unwrap();
        assert!((g[0][0] - 17.0).abs() < 1e-12);
        assert!((g[1][0] - 50.0 / 34.0).abs() < 1e-12);
        let cum0 = 16.0 + 1.0;
        let cum1 = 17.0 + 50.0 / 34.0;
        assert!(cum1 > cum0);
    }

    #[test]
    fn ema_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = ModelConfig {
            blocks: 2,
            hidden_dim: 3,
            output_dim: 3,
            ..ModelConfig::default()
        };
        let live = Network::new(&cfg, 3, 2, &mut rng).unwrap();
        let other = Network::new(&cfg, 3, 2, &mut rng).unwrap();

        let mut t = EmaTeacher::new(&other, 1.0).unwrap();
        t.update(&live).unwrap();
        assert_eq!(t.shadow, other);

        let mut t = EmaTeacher::new(&other, 0.0).unwrap();
        t.update(&live).unwrap();
        assert_eq!(t.shadow, live);

        let mut zero = live.clone();
        for b in &mut zero.blocks {
            for t in b.tensors_mut() {
                t.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut constant = zero.clone();
        for b in &mut constant.blocks {
            for t in b.tensors_mut() {
                t.iter_mut().for_each(|v| *v = 2.0);
            }
        }
        let mut t = EmaTeacher::new(&zero, 0.5).unwrap();
        t.update(&constant).unwrap();
        t.update(&constant).unwrap();
        assert!(t.shadow.blocks[1].w1.as_slice().iter().all(|&v| v == 1.5));

        let bigger = Network::new(&ModelConfig { blocks: 3, ..cfg }, 3, 2, &mut rng).unwrap();
        assert!(t.update(&bigger).is_err());
    }
}
