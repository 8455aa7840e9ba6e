use crate::error::{Error, Result};
use crate::model::BlockParams;

/// Bias-corrected Adam moments for one block. Each block owns exactly one
/// instance, shaped like that block alone.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    pub fn for_block(block: &BlockParams) -> Self {
        let zeros: Vec<Vec<f64>> = block.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        OptimizerState {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    fn matches(&self, block: &BlockParams) -> bool {
        block
            .tensors()
            .iter()
            .zip(&self.first)
            .all(|(t, m)| t.len() == m.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamSettings {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Multiplier on `lr` for the label embedding.
    pub label_lr_scale: f64,
}

pub fn adam_step(state: &mut OptimizerState, params: &mut BlockParams, grads: &BlockParams, hp: AdamSettings) -> Result<()> {
    if !params.same_shape(grads) || !state.matches(params) {
        return Err(Error::dims("adam_step", params.param_count(), grads.param_count()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let label_tensor = params.tensors().len() - 1;
    for (k, (((p, g), m), v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first.iter_mut())
        .zip(state.second.iter_mut())
        .enumerate()
    {
        let lr = if k == label_tensor { hp.lr * hp.label_lr_scale } else { hp.lr };
        for i in 0..p.len() {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const HP: AdamSettings = AdamSettings {
        lr: 0.01,
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        label_lr_scale: 1.0,
    };

    fn block() -> BlockParams {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        BlockParams::init(3, 4, 2, 3, true, 1.0, 1.0, &mut rng)
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = block();
        let before = p.clone();
        let mut st = OptimizerState::for_block(&p);
        let g = p.zeros_like();
        for _ in 0..5 {
            adam_step(&mut st, &mut p, &g, HP).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let mut p = block();
        let mut st = OptimizerState::for_block(&p);
        let mut g = p.zeros_like();
        g.b1.iter_mut().for_each(|v| *v = 0.37);
        let mut last = p.b1[0];
        for _ in 0..2000 {
            adam_step(&mut st, &mut p, &g, HP).unwrap();
            let step = last - p.b1[0];
            last = p.b1[0];
            assert!(step > 0.0 && step <= HP.lr * 1.0001);
        }
        let mut q = p.clone();
        adam_step(&mut st, &mut q, &g, HP).unwrap();
        assert!(((p.b1[0] - q.b1[0]) - HP.lr).abs() < 1e-6);
    }

    #[test]
    fn first_step_matches_reference() {
        // ten-line reference Adam on a flat vector
        fn reference(p: &mut [f64], g: &[f64], hp: AdamSettings) {
            for (p, &g) in p.iter_mut().zip(g) {
                let m = (1.0 - hp.beta1) * g;
                let v = (1.0 - hp.beta2) * g * g;
                let m_hat = m / (1.0 - hp.beta1);
                let v_hat = v / (1.0 - hp.beta2);
                *p -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
            }
        }
        let mut p = block();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut g = p.zeros_like();
        let noise = BlockParams::init(3, 4, 2, 3, true, 1.0, 1.0, &mut rng);
        g.set_flat(&noise.to_flat()).unwrap();
        let mut flat = p.to_flat();
        reference(&mut flat, &g.to_flat(), HP);
        let mut st = OptimizerState::for_block(&p);
        adam_step(&mut st, &mut p, &g, HP).unwrap();
        for (a, b) in p.to_flat().iter().zip(&flat) {
            assert!((a - b).abs() < 1e-15);
        }
        // closed form of the first step: -lr g / (|g| + eps)
        let g0 = g.w1.as_slice()[0];
        let moved = block().w1.as_slice()[0] - p.w1.as_slice()[0];
        assert!((moved - HP.lr * g0 / (g0.abs() + HP.eps)).abs() < 1e-15);
    }

    #[test]
    fn zero_label_scale_freezes_embedding_only() {
        let mut p = block();
        let before = p.clone();
        let mut st = OptimizerState::for_block(&p);
        let mut g = p.zeros_like();
        g.set_flat(&vec![0.5; p.param_count()]).unwrap();
        let hp = AdamSettings {
            label_lr_scale: 0.0,
            ..HP
        };
        adam_step(&mut st, &mut p, &g, hp).unwrap();
        assert_eq!(p.label_embed, before.label_embed);
        assert_ne!(p.w1, before.w1);
        assert_ne!(p.b1, before.b1);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = block();
        let mut st = OptimizerState::for_block(&p);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let other = BlockParams::init(5, 4, 2, 3, true, 1.0, 1.0, &mut rng);
        assert!(adam_step(&mut st, &mut p, &other, HP).is_err());
    }
}
