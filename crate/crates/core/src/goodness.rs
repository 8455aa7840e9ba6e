//! Scalar calculus of the cumulative-goodness objective: margins, the
//! softplus barrier and its derivative, the attenuation ratio with its
//! sandwich bounds, the free-riding index and the hardness gate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, softplus};

/// `M = m + gamma * P`. Callers must treat `p_prev` as a constant.
#[inline]
pub fn cumulative_margin(m: f64, p_prev: f64, gamma: f64) -> f64 {
    m + gamma * p_prev
}

/// Validated barrier sharpness (`beta > 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sharpness(f64);

impl Sharpness {
    pub fn new(beta: f64) -> Result<Self> {
        if beta > 0.0 && beta.is_finite() {
            Ok(Sharpness(beta))
        } else {
            Err(Error::Parameter(format!("barrier sharpness must be positive, got {beta}")))
        }
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }

    /// `softplus(-beta * u)`.
    #[inline]
    pub fn barrier(self, u: f64) -> f64 {
        softplus(-self.0 * u)
    }

    /// `-beta * sigmoid(-beta * u)`; strictly negative for finite `u`.
    #[inline]
    pub fn deriv(self, u: f64) -> f64 {
        -self.0 * sigmoid(-self.0 * u)
    }
}

/// `log(1 + e^{-beta u})`.
pub fn barrier(u: f64, beta: f64) -> Result<f64> {
    Ok(Sharpness::new(beta)?.barrier(u))
}

/// Derivative of [`barrier`] in `u`. `beta` must be positive.
#[inline]
pub fn barrier_deriv(u: f64, beta: f64) -> f64 {
    debug_assert!(beta > 0.0);
    -beta * sigmoid(-beta * u)
}

/// `(1 + e^{beta m}) / (1 + e^{beta (m + gamma P)})`, evaluated as the
/// exponential of a difference of softplus terms so that arguments up to
/// ~1e3 stay finite.
#[inline]
pub fn attenuation_ratio(m: f64, p: f64, gamma: f64, beta: f64) -> f64 {
    let a = beta * m;
    let b = beta * cumulative_margin(m, p, gamma);
    // keep the linear part exact when both arguments sit on the positive branch
    let linear = if a >= 0.0 && b >= 0.0 {
        -beta * gamma * p
    } else {
        a.max(0.0) - b.max(0.0)
    };
    (linear + (-a.abs()).exp().ln_1p() - (-b.abs()).exp().ln_1p()).exp()
}

/// Sandwich `(e^{-beta gamma P}, min(1, 2 e^{-beta gamma P}))` valid for
/// `m >= 0`, `P >= 0`, `gamma >= 0`.
pub fn attenuation_bounds(m: f64, p: f64, gamma: f64, beta: f64) -> Result<(f64, f64)> {
    if m < 0.0 || p < 0.0 || gamma < 0.0 {
        return Err(Error::Regime(format!(
            "attenuation bounds need m >= 0, P >= 0, gamma >= 0 (m={m}, P={p}, gamma={gamma})"
        )));
    }
    let lower = (-beta * gamma * p).exp();
    Ok((lower, (2.0 * lower).min(1.0)))
}

/// Which negative hypothesis a margin was measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NegativeStream {
    /// True image, mismatched label.
    WrongLabel,
    /// Shuffled image, true label.
    WrongImage,
}

/// Margins of one negative stream at one block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamTrace {
    /// Current-block margin `m^(d)` per example.
    pub margin: Vec<f64>,
    /// Accumulated upstream margin `P^(d-1)` per example.
    pub upstream: Vec<f64>,
}

impl StreamTrace {
    pub fn len(&self) -> usize {
        self.margin.len()
    }

    pub fn is_empty(&self) -> bool {
        self.margin.is_empty()
    }

    /// Per-example attenuation ratios at history weight `gamma`.
    pub fn ratios(&self, gamma: f64, beta: f64) -> Vec<f64> {
        self.margin
            .iter()
            .zip(&self.upstream)
            .map(|(&m, &p)| attenuation_ratio(m, p, gamma, beta))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockTrace {
    /// History weight actually applied at this block (after gating).
    pub gamma: f64,
    /// Positive-stream current-block goodness per example.
    pub pos_goodness: Vec<f64>,
    pub wrong_label: StreamTrace,
    pub wrong_image: StreamTrace,
}

impl BlockTrace {
    pub fn stream(&self, s: NegativeStream) -> &StreamTrace {
        match s {
            NegativeStream::WrongLabel => &self.wrong_label,
            NegativeStream::WrongImage => &self.wrong_image,
        }
    }
}

/// Per-example, per-block current and accumulated margins for both
/// negative streams.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarginTrace {
    pub blocks: Vec<BlockTrace>,
}

impl MarginTrace {
    /// Builds a trace from current-block quantities, filling the upstream
    /// sums as running prefix sums so `P^(0) = 0` and
    /// `P^(d) = P^(d-1) + m^(d)` hold by construction.
    pub fn from_current(
        gammas: &[f64],
        pos_goodness: Vec<Vec<f64>>,
        wrong_label: Vec<Vec<f64>>,
        wrong_image: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let depth = gammas.len();
        if pos_goodness.len() != depth || wrong_label.len() != depth || wrong_image.len() != depth {
            return Err(Error::dims("MarginTrace::from_current", depth, pos_goodness.len()));
        }
        let n = pos_goodness.first().map_or(0, Vec::len);
        let mut acc_nl = vec![0.0; n];
        let mut acc_ni = vec![0.0; n];
        let mut blocks = Vec::with_capacity(depth);
        for (((gamma, g), nl), ni) in gammas.iter().zip(pos_goodness).zip(wrong_label).zip(wrong_image) {
            if g.len() != n || nl.len() != n || ni.len() != n {
                return Err(Error::dims("MarginTrace::from_current", n, nl.len()));
            }
            let block = BlockTrace {
                gamma: *gamma,
                pos_goodness: g,
                wrong_label: StreamTrace {
                    upstream: acc_nl.clone(),
                    margin: nl,
                },
                wrong_image: StreamTrace {
                    upstream: acc_ni.clone(),
                    margin: ni,
                },
            };
            for i in 0..n {
                acc_nl[i] += block.wrong_label.margin[i];
                acc_ni[i] += block.wrong_image.margin[i];
            }
            blocks.push(block);
        }
        Ok(MarginTrace { blocks })
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn examples(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.pos_goodness.len())
    }

    /// Concatenates traces of equal depth along the example axis.
    pub fn concat(traces: &[MarginTrace]) -> Result<MarginTrace> {
        let Some(first) = traces.first() else {
            return Ok(MarginTrace::default());
        };
        let depth = first.depth();
        let mut out = MarginTrace {
            blocks: vec![BlockTrace::default(); depth],
        };
        for t in traces {
            if t.depth() != depth {
                return Err(Error::dims("MarginTrace::concat", depth, t.depth()));
            }
            for (dst, src) in out.blocks.iter_mut().zip(&t.blocks) {
                dst.gamma = src.gamma;
                dst.pos_goodness.extend_from_slice(&src.pos_goodness);
                dst.wrong_label.margin.extend_from_slice(&src.wrong_label.margin);
                dst.wrong_label.upstream.extend_from_slice(&src.wrong_label.upstream);
                dst.wrong_image.margin.extend_from_slice(&src.wrong_image.margin);
                dst.wrong_image.upstream.extend_from_slice(&src.wrong_image.upstream);
            }
        }
        Ok(out)
    }

    /// Checks the prefix-sum invariant to the given absolute tolerance.
    pub fn check_invariants(&self, tol: f64) -> bool {
        let n = self.examples();
        [NegativeStream::WrongLabel, NegativeStream::WrongImage].iter().all(|&s| {
            let mut acc = vec![0.0; n];
            self.blocks.iter().all(|b| {
                let st = b.stream(s);
                let ok = st.upstream.iter().zip(&acc).all(|(p, a)| (p - a).abs() <= tol);
                for (a, m) in acc.iter_mut().zip(&st.margin) {
                    *a += m;
                }
                ok
            })
        })
    }
}

/// Mean over examples of `1 - min(1, R)`; lies in `[0, 1)`.
pub fn free_riding_index(trace: &StreamTrace, gamma: f64, beta: f64) -> Result<f64> {
    if trace.is_empty() {
        return Err(Error::Domain("free-riding index of an empty example set".into()));
    }
    let total: f64 = trace
        .margin
        .iter()
        .zip(&trace.upstream)
        .map(|(&m, &p)| 1.0 - attenuation_ratio(m, p, gamma, beta).min(1.0))
        .sum();
    Ok(total / trace.len() as f64)
}

/// Summary of attenuation at one block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttenuationStats {
    pub mean_ratio: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub free_riding: f64,
    /// Fraction of examples with `P^(d-1) >= 0`.
    pub frac_separated: f64,
}

impl AttenuationStats {
    pub fn from_stream(trace: &StreamTrace, gamma: f64, beta: f64) -> Result<Self> {
        if trace.is_empty() {
            return Err(Error::Domain("attenuation stats of an empty example set".into()));
        }
        let ratios = trace.ratios(gamma, beta);
        let n = ratios.len() as f64;
        Ok(AttenuationStats {
            mean_ratio: ratios.iter().sum::<f64>() / n,
            min_ratio: ratios.iter().copied().fold(f64::INFINITY, f64::min),
            max_ratio: ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            free_riding: ratios.iter().map(|r| 1.0 - r.min(1.0)).sum::<f64>() / n,
            frac_separated: trace.upstream.iter().filter(|&&p| p >= 0.0).count() as f64 / n,
        })
    }
}

/// How the history weight is gated by already-accumulated goodness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateMode {
    #[default]
    Off,
    Cumulative,
    Prev,
}

impl GateMode {
    pub fn name(self) -> &'static str {
        match self {
            GateMode::Off => "off",
            GateMode::Cumulative => "cumulative",
            GateMode::Prev => "prev",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateConfig {
    pub mode: GateMode,
    pub kappa: f64,
    pub tau: f64,
    /// Base history weight `gamma_0`.
    pub gamma0: f64,
    /// In cumulative mode, gate on the gamma-mixed cumulative goodness
    /// instead of the plain sum of upstream goodness.
    pub mixed_cumulative: bool,
}

impl Default for GateConfig {
    fn default() -> Self {
        GateConfig {
            mode: GateMode::Off,
            kappa: 2.0,
            tau: 1.0,
            gamma0: 0.7,
            mixed_cumulative: false,
        }
    }
}

impl GateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma0) {
            return Err(Error::Parameter(format!("gamma0 must lie in [0, 1], got {}", self.gamma0)));
        }
        if !(self.tau >= 0.0) {
            return Err(Error::Parameter(format!("tau must be non-negative, got {}", self.tau)));
        }
        Ok(())
    }
}

/// `gamma_0 * sigma(tau (kappa - g))` with `g` picked by the gate mode.
pub fn effective_gamma(gate: &GateConfig, g_cumulative: f64, g_prev: f64) -> f64 {
    let g = match gate.mode {
        GateMode::Off => return gate.gamma0,
        GateMode::Cumulative => g_cumulative,
        GateMode::Prev => g_prev,
    };
    gate.gamma0 * sigmoid(gate.tau * (gate.kappa - g))
}
