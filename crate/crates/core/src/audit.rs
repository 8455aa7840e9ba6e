//! Numerical audit of the closed-form results the training objective relies
//! on. Every check draws its own random cases from a fixed seed and compares
//! the library against an independent evaluation.

use std::fmt;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::{redistribution_check, stability_bound_check, GoodnessTable, PredictionSet};
use crate::error::Result;
use crate::goodness::{attenuation_bounds, attenuation_ratio, barrier_deriv, cumulative_margin};
use crate::losses::{depth_scaled_lambda, mgc_loss, residual_weights};
use crate::model::{block_backward, block_forward, BlockParams};
use crate::numerics::{finite_diff_grad, sigmoid, softplus, GradCheckReport, Matrix};

pub const DEFAULT_SEED: u64 = 0x5eed_a0d1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {} ({:.1} ms)", self.name, self.detail, self.elapsed.as_secs_f64() * 1e3)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub checks: Vec<CheckOutcome>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for AuditReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(f, "{c}")?;
        }
        let bad = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{} checks, {} failed", self.checks.len(), bad)
    }
}

fn timed<F>(name: &'static str, body: F) -> Result<CheckOutcome>
where
    F: FnOnce() -> Result<(bool, String)>,
{
    let start = Instant::now();
    let (passed, detail) = body()?;
    Ok(CheckOutcome {
        name,
        passed,
        detail,
        elapsed: start.elapsed(),
    })
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Parameter gradients of `softplus(-beta (m + shift))` for a one-example
/// block, where `m` is the block's positive-minus-wrong-label margin.
struct MarginProbe {
    params: BlockParams,
    x: Matrix,
    y: usize,
    y_neg: usize,
}

impl MarginProbe {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let (inp, hid, out) = (rng.random_range(1..=4), rng.random_range(1..=4), rng.random_range(1..=4));
        let classes = rng.random_range(2..=4);
        let offset = rng.random_range(-1.0..1.0);
        let params = BlockParams::init(inp, hid, out, classes, true, offset, rng.random_range(0.5..2.0), rng);
        let x = Matrix::random_normal(1, inp, 1.0, rng);
        let y = rng.random_range(0..classes);
        let y_neg = (y + rng.random_range(1..classes)) % classes;
        MarginProbe { params, x, y, y_neg }
    }

    fn margin_of(&self, params: &BlockParams) -> Result<f64> {
        let pos = block_forward(params, &self.x, &[self.y])?;
        let neg = block_forward(params, &self.x, &[self.y_neg])?;
        Ok(pos.goodness[0] - neg.goodness[0])
    }

    fn loss_at(&self, flat: &[f64], shift: f64, beta: f64) -> f64 {
        let mut p = self.params.clone();
        p.set_flat(flat).expect("same shape");
        let m = self.margin_of(&p).expect("valid probe");
        softplus(-beta * (m + shift))
    }

    fn grad(&self, shift: f64, beta: f64) -> Result<(f64, Vec<f64>)> {
        let pos = block_forward(&self.params, &self.x, &[self.y])?;
        let neg = block_forward(&self.params, &self.x, &[self.y_neg])?;
        let m = pos.goodness[0] - neg.goodness[0];
        let dl = barrier_deriv(m + shift, beta);
        let (mut g, _) = block_backward(&self.params, &pos, &[dl], None)?;
        let (gn, _) = block_backward(&self.params, &neg, &[-dl], None)?;
        crate::model::accumulate(&mut g, &gn);
        Ok((m, g.to_flat()))
    }
}

/// Gradient of the cumulative barrier equals the attenuation ratio times the
/// gradient of the local barrier, for every parameter of random small blocks.
pub fn attenuation_identity(trials: usize, seed: u64) -> Result<CheckOutcome> {
    timed("attenuation identity", || {
        let mut rng = stream(seed, 1);
        let (mut worst_analytic, mut worst_fd) = (0.0f64, 0.0f64);
        for _ in 0..trials {
            let probe = MarginProbe::random(&mut rng);
            let p = rng.random_range(-2.0..8.0);
            let gamma = rng.random_range(0.0..1.0);
            let beta = rng.random_range(1.0..8.0);
            let (m, local) = probe.grad(0.0, beta)?;
            let (_, cumulative) = probe.grad(gamma * p, beta)?;
            let r = attenuation_ratio(m, p, gamma, beta);
            let scaled: Vec<f64> = local.iter().map(|g| r * g).collect();
            let scale = cumulative.iter().fold(0.0f64, |a, g| a.max(g.abs()));
            let analytic = GradCheckReport::compare(&cumulative, &scaled, 1e-300)?;
            let flat = probe.params.to_flat();
            let fd = finite_diff_grad(|th| probe.loss_at(th, gamma * p, beta), &flat, 1e-6);
            let numeric = GradCheckReport::compare(&scaled, &fd, 1e-6 * scale.max(1e-300))?;
            worst_analytic = worst_analytic.max(analytic.max_rel_err);
            worst_fd = worst_fd.max(numeric.max_rel_err);
        }
        Ok((
            worst_analytic <= 1e-10 && worst_fd <= 1e-4,
            format!("{trials} blocks, max rel err {worst_analytic:.2e} analytic, {worst_fd:.2e} vs finite differences"),
        ))
    })
}

/// `e^{-beta gamma P} <= R <= min(1, 2 e^{-beta gamma P})` in the regime
/// `m, P >= 0`, and `R` agrees with the direct derivative ratio.
pub fn sandwich_bounds(draws: usize, seed: u64) -> Result<CheckOutcome> {
    timed("attenuation sandwich", || {
        let mut rng = stream(seed, 2);
        let mut violations = 0usize;
        let mut worst_def = 0.0f64;
        for _ in 0..draws {
            let m = rng.random_range(0.0..=5.0);
            let p = rng.random_range(0.0..=8.0);
            let gamma = rng.random_range(0.0..=1.0);
            let beta = rng.random_range(1.0..=8.0);
            let r = attenuation_ratio(m, p, gamma, beta);
            let (lo, hi) = attenuation_bounds(m, p, gamma, beta)?;
            if !(lo <= r && r <= hi) {
                violations += 1;
            }
            let direct = barrier_deriv(cumulative_margin(m, p, gamma), beta) / barrier_deriv(m, beta);
            worst_def = worst_def.max((r - direct).abs() / direct);
        }
        Ok((
            violations == 0 && worst_def <= 1e-12,
            format!("{draws} draws, {violations} violations, ratio definition rel err {worst_def:.2e}"),
        ))
    })
}

/// Attenuation at two reported operating points.
pub fn reported_ratios() -> Result<CheckOutcome> {
    timed("reported attenuation ratios", || {
        let cases = [((2.36, 1.76, 0.7, 4.0), 7.2e-3), ((1.08, 1.74, 1.0, 4.0), 9.7e-4)];
        let mut ok = true;
        let mut parts = vec![];
        for ((m, p, g, b), want) in cases {
            let r = attenuation_ratio(m, p, g, b);
            let rel = (r - want).abs() / want;
            ok &= rel <= 0.05;
            parts.push(format!("R({m}, {p}, {g}, {b}) = {r:.3e} vs {want:.1e} ({:.1}%)", rel * 100.0));
        }
        Ok((ok, parts.join("; ")))
    })
}

pub fn lambda_schedule() -> Result<CheckOutcome> {
    timed("depth-scaled schedule", || {
        let got: Vec<f64> = (0..4).map(|d| depth_scaled_lambda(d, 4, 0.25, 3.0)).collect::<Result<_>>()?;
        Ok((got == [0.25, 0.5, 0.75, 1.0], format!("lambda0=0.25 rho=3 L=4 -> {got:?}")))
    })
}

/// Mean one, monotone in the upstream margin while unclipped, and bounded
/// below by `w_min / w_max`.
pub fn weight_lemma(batches: usize, seed: u64) -> Result<CheckOutcome> {
    timed("residual weights", || {
        let mut rng = stream(seed, 3);
        let (mut worst_mean, mut order_fail, mut floor_fail, mut strict_pairs) = (0.0f64, 0usize, 0usize, 0usize);
        for _ in 0..batches {
            let n = rng.random_range(2..=64);
            let beta = rng.random_range(1.0..=8.0);
            let w_min = rng.random_range(0.05..=1.0);
            let w_max = rng.random_range(1.0..=12.0);
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..=8.0)).collect();
            let w = residual_weights(&p, beta, w_min, w_max)?;
            let mean = w.iter().sum::<f64>() / n as f64;
            worst_mean = worst_mean.max((mean - 1.0).abs());
            if w.iter().any(|&v| v < w_min / w_max) {
                floor_fail += 1;
            }
            // independent clip status from the raw sigmoids
            let raw: Vec<f64> = p.iter().map(|&pi| sigmoid(-beta * pi)).collect();
            let raw_mean = raw.iter().sum::<f64>() / n as f64;
            let mut free: Vec<usize> = (0..n)
                .filter(|&i| {
                    let u = raw[i] / raw_mean;
                    u > w_min && u < w_max
                })
                .collect();
            free.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
            for pair in free.windows(2) {
                let (i, j) = (pair[0], pair[1]);
                if p[i] == p[j] {
                    continue;
                }
                // strictness is only observable when the raw weights differ
                // by more than rounding
                let distinct = (raw[i] - raw[j]) / raw[i] > 1e-12;
                let holds = if distinct { w[i] > w[j] } else { w[i] >= w[j] };
                strict_pairs += distinct as usize;
                order_fail += !holds as usize;
            }
        }
        Ok((
            worst_mean <= 1e-12 && order_fail == 0 && floor_fail == 0,
            format!(
                "{batches} batches, max |mean-1| {worst_mean:.2e}, {order_fail} ordering failures over {strict_pairs} strict pairs, {floor_fail} floor failures"
            ),
        ))
    })
}

/// `|dJ/dm| >= lambda_curr w beta / 2` for unresolved examples, where
/// `J = l(M) + lambda_curr w l(m)`.
pub fn gradient_floor(draws: usize, seed: u64) -> Result<CheckOutcome> {
    timed("gradient floor", || {
        let mut rng = stream(seed, 4);
        let mut violations = 0usize;
        let mut tightest = f64::INFINITY;
        for k in 0..draws {
            let blocks = rng.random_range(2..=8);
            let d = rng.random_range(0..blocks);
            let lambda = depth_scaled_lambda(d, blocks, rng.random_range(0.01..=1.0), rng.random_range(0.0..=4.0))?;
            let beta = rng.random_range(1.0..=8.0);
            let gamma = rng.random_range(0.0..=1.0);
            let m = if k % 10 == 0 { 0.0 } else { rng.random_range(-5.0..=0.0) };
            let batch: Vec<f64> = (0..8)
                .map(|i| if i == 0 && k % 7 == 0 { 100.0 } else { rng.random_range(0.0..=100.0) })
                .collect();
            let w = residual_weights(&batch, beta, 0.1, 10.0)?[0];
            let big_m = cumulative_margin(m, batch[0], gamma);
            let slope = (barrier_deriv(big_m, beta) + lambda * w * barrier_deriv(m, beta)).abs();
            let floor = lambda * w * beta / 2.0;
            tightest = tightest.min(slope / floor);
            if slope < floor * (1.0 - 1e-12) {
                violations += 1;
            }
        }
        Ok((
            violations == 0,
            format!("{draws} draws, {violations} violations, tightest slope/floor {tightest:.6}"),
        ))
    })
}

/// With `gamma P >= 0`, `eps = 0`, `c_d = 1` the compensated margin slope is
/// exactly the local one; when `R > c_d` the coefficient clips to zero.
pub fn mgc_recovery(draws: usize, seed: u64) -> Result<CheckOutcome> {
    timed("compensated loss recovery", || {
        let mut rng = stream(seed, 5);
        let mut worst = 0.0f64;
        for _ in 0..draws {
            let m = rng.random_range(-5.0..=5.0);
            let p = rng.random_range(0.0..=8.0);
            let gamma = rng.random_range(0.0..=1.0);
            let beta = rng.random_range(1.0..=8.0);
            let out = mgc_loss(&[m], &[p], gamma, beta, 1.0, 0.0)?;
            let want = beta * sigmoid(-beta * m);
            worst = worst.max((out.d_margin[0].abs() - want).abs() / want);
        }
        let (mut clip_draws, mut clip_fail) = (0usize, 0usize);
        for _ in 0..draws {
            let m = rng.random_range(-5.0..=5.0);
            let p = rng.random_range(-8.0..0.0);
            let gamma = rng.random_range(0.01..=1.0);
            let beta = rng.random_range(1.0..=8.0);
            let c_d = rng.random_range(1.0..=2.0);
            let r = attenuation_ratio(m, p, gamma, beta);
            if r <= c_d * (1.0 + 1e-9) {
                continue;
            }
            clip_draws += 1;
            let out = mgc_loss(&[m], &[p], gamma, beta, c_d, 0.0)?;
            clip_fail += (out.lambda[0] != 0.0) as usize;
        }
        Ok((
            worst <= 1e-10 && clip_draws > 0 && clip_fail == 0,
            format!("{draws} draws, slope rel err {worst:.2e}; clip engaged on {}/{clip_draws} draws with R > c_d", clip_draws - clip_fail),
        ))
    })
}

/// Whether the positive scores grow by at least `delta_pos` and the negative
/// ones shrink by at least `delta_neg` at every depth.
pub fn increments_hold(pos: &[f64], neg: &[f64], delta_pos: f64, delta_neg: f64) -> bool {
    pos.len() == neg.len()
        && pos.windows(2).all(|w| w[1] - w[0] >= delta_pos)
        && neg.windows(2).all(|w| w[0] - w[1] >= delta_neg)
}

/// Sequences satisfying the per-depth increments separate by at least
/// `d (delta_pos + delta_neg)` after `d` steps. Values are dyadic so every
/// comparison is exact.
pub fn depth_order_telescoping(trials: usize, seed: u64) -> Result<CheckOutcome> {
    timed("depth-order telescoping", || {
        let mut rng = stream(seed, 6);
        let q = |k: i64| k as f64 / 1024.0;
        let (mut checked, mut fail, mut rejected) = (0usize, 0usize, 0usize);
        for _ in 0..trials {
            let depth = rng.random_range(2..=12);
            let dp = q(rng.random_range(0..=512));
            let dn = q(rng.random_range(0..=512));
            let mut pos = vec![q(rng.random_range(-4096..=4096))];
            let mut neg = vec![q(rng.random_range(-4096..=4096))];
            for _ in 1..depth {
                pos.push(pos.last().unwrap() + dp + q(rng.random_range(0..=1024)));
                neg.push(neg.last().unwrap() - dn - q(rng.random_range(0..=1024)));
            }
            if !increments_hold(&pos, &neg, dp, dn) {
                fail += 1;
                continue;
            }
            for d in 1..depth {
                checked += 1;
                if pos[d] - neg[d] - (pos[0] - neg[0]) < d as f64 * (dp + dn) {
                    fail += 1;
                }
            }
            // breaking one step must be detected
            let at = rng.random_range(1..depth);
            let mut broken = pos.clone();
            broken[at] = broken[at - 1] + dp - q(1);
            rejected += !increments_hold(&broken, &neg, dp, dn) as usize;
        }
        Ok((
            fail == 0 && rejected == trials,
            format!("{trials} sequences, {checked} depth gaps, {fail} failures, {rejected} broken sequences rejected"),
        ))
    })
}

/// Zero-sum moves of goodness between two depths leave every cumulative
/// score and prediction unchanged.
pub fn redistribution(trials: usize, seed: u64) -> Result<CheckOutcome> {
    timed("redistribution invariance", || {
        let mut rng = stream(seed, 7);
        let (mut worst, mut flipped, mut worst_shift) = (0.0f64, 0usize, 0.0f64);
        for _ in 0..trials {
            let blocks = rng.random_range(2..=6);
            let classes = rng.random_range(2..=10);
            let n = rng.random_range(1..=20);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let data: Vec<f64> = (0..blocks * n * classes).map(|_| rng.random_range(-3.0..3.0)).collect();
            let table = GoodnessTable::new(blocks, classes, labels, data)?;
            let a = rng.random_range(0..blocks);
            let b = (a + rng.random_range(1..blocks)) % blocks;
            let qv: Vec<f64> = (0..n * classes).map(|_| rng.random_range(-2.0..2.0)).collect();
            let rep = redistribution_check(&table, a, b, &qv)?;
            worst = worst.max(rep.max_score_change);
            worst_shift = worst_shift.max(rep.max_margin_shift_error);
            flipped += !rep.predictions_unchanged as usize;
        }
        Ok((
            worst <= 1e-12 && flipped == 0,
            format!("{trials} perturbations, max score change {worst:.2e}, {flipped} prediction changes, margin shift err {worst_shift:.2e}"),
        ))
    })
}

/// Union bound on prediction flips between a score set and a perturbed
/// copy, plus the accuracy-gap bound.
pub fn prediction_stability(trials: usize, seed: u64) -> Result<CheckOutcome> {
    timed("prediction stability", || {
        let mut rng = stream(seed, 8);
        let mut failed = 0usize;
        let mut points = 0usize;
        for _ in 0..trials {
            let classes = rng.random_range(2..=10);
            let n = rng.random_range(50..=300);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..classes)).collect();
            let a: Vec<f64> = (0..n * classes).map(|_| rng.random_range(-2.0..2.0)).collect();
            let noise = 10f64.powf(rng.random_range(-3.0..1.0));
            let b: Vec<f64> = a.iter().map(|v| v + noise * rng.random_range(-1.0..1.0)).collect();
            let pa = PredictionSet::new(a, classes, labels.clone())?;
            let pb = PredictionSet::new(b, classes, labels)?;
            let grid: Vec<f64> = (0..50).map(|k| 2.0 * noise * k as f64 / 49.0).collect();
            let rep = stability_bound_check(&pa, &pb, &grid)?;
            points += rep.points.len();
            failed += !rep.passed() as usize;
        }
        Ok((failed == 0, format!("{trials} pairs, {points} grid points, {failed} failing pairs")))
    })
}

/// Case counts used by [`run_all`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AuditSizes {
    pub identity_blocks: usize,
    pub sandwich_draws: usize,
    pub weight_batches: usize,
    pub floor_draws: usize,
    pub mgc_draws: usize,
    pub telescoping: usize,
    pub redistribution: usize,
    pub stability: usize,
}

impl Default for AuditSizes {
    fn default() -> Self {
        AuditSizes {
            identity_blocks: 100,
            sandwich_draws: 100_000,
            weight_batches: 10_000,
            floor_draws: 100_000,
            mgc_draws: 100_000,
            telescoping: 1000,
            redistribution: 1000,
            stability: 100,
        }
    }
}

pub fn run_all(sizes: AuditSizes, seed: u64) -> Result<AuditReport> {
    Ok(AuditReport {
        checks: vec![
            attenuation_identity(sizes.identity_blocks, seed)?,
            sandwich_bounds(sizes.sandwich_draws, seed)?,
            reported_ratios()?,
            lambda_schedule()?,
            weight_lemma(sizes.weight_batches, seed)?,
            gradient_floor(sizes.floor_draws, seed)?,
            mgc_recovery(sizes.mgc_draws, seed)?,
            depth_order_telescoping(sizes.telescoping, seed)?,
            redistribution(sizes.redistribution, seed)?,
            prediction_stability(sizes.stability, seed)?,
        ],
    })
}
