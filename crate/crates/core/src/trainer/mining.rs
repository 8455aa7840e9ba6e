use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{network_forward, Network};
use crate::numerics::Matrix;

use super::registry::NegativeScorer;

/// `k` labels drawn uniformly with replacement from the classes other than
/// `true_label`.
pub fn draw_candidates<R: Rng + ?Sized>(true_label: usize, classes: usize, k: usize, rng: &mut R) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::Parameter(format!("mining needs at least 2 classes, got {classes}")));
    }
    if true_label >= classes {
        return Err(Error::LabelOutOfRange {
            label: true_label,
            classes,
        });
    }
    Ok((0..k)
        .map(|_| {
            let r = rng.random_range(0..classes - 1);
            if r >= true_label {
                r + 1
            } else {
                r
            }
        })
        .collect())
}

/// Linear ramp from `k_first` at epoch 0 to `k_last` at the final epoch.
pub fn hnm_ramp(epoch: usize, total_epochs: usize, k_first: usize, k_last: usize) -> usize {
    let (lo, hi) = (k_first.min(k_last), k_first.max(k_last));
    if total_epochs <= 1 {
        return k_first;
    }
    let t = epoch as f64 / (total_epochs - 1) as f64;
    let k = (k_first as f64 + t * (k_last as f64 - k_first as f64)).round();
    (k.max(0.0) as usize).clamp(lo, hi)
}

/// Uniform cyclic permutation (Sattolo); no index maps to itself.
pub fn derangement<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::Domain(format!("cannot derange {n} example(s)")));
    }
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..i);
        p.swap(i, j);
    }
    Ok(p)
}

/// Hardest wrong label for every row of `x`: `k` candidates per example,
/// scored by the teacher, first maximum wins.
pub fn mine_batch<R: Rng + ?Sized>(
    x: &Matrix,
    labels: &[usize],
    k: usize,
    teacher: &Network,
    scorer: &dyn NegativeScorer,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::Parameter("k must be at least 1".into()));
    }
    if x.rows() != labels.len() {
        return Err(Error::dims("mine_batch", x.rows(), labels.len()));
    }
    let c = teacher.classes;
    let cands: Vec<Vec<usize>> = labels
        .iter()
        .map(|&y| draw_candidates(y, c, k, rng))
        .collect::<Result<_>>()?;
    if k == 1 {
        return Ok(cands.into_iter().map(|v| v[0]).collect());
    }
    let n = labels.len();
    let per_block_scores = |lab: &[usize]| -> Result<Vec<f64>> {
        let g = network_forward(teacher, x, lab)?;
        Ok((0..n)
            .map(|i| scorer.score(&g.iter().map(|b| b[i]).collect::<Vec<_>>()))
            .collect())
    };
    // with few classes it is cheaper to score each class once
    let score = |j: usize| -> Result<Vec<f64>> {
        let lab: Vec<usize> = cands.iter().map(|v| v[j]).collect();
        per_block_scores(&lab)
    };
    let lookup: Option<Vec<Vec<f64>>> = if c <= k {
        Some((0..c).map(|y| per_block_scores(&vec![y; n])).collect::<Result<_>>()?)
    } else {
        None
    };
    let mut best = vec![f64::NEG_INFINITY; n];
    let mut pick = vec![0; n];
    for j in 0..k {
        let s = match &lookup {
            Some(t) => cands.iter().enumerate().map(|(i, v)| t[v[j]][i]).collect(),
            None => score(j)?,
        };
        for i in 0..n {
            if j == 0 || s[i] > best[i] {
                best[i] = s[i];
                pick[i] = cands[i][j];
            }
        }
    }
    Ok(pick)
}

/// Single-example form of [`mine_batch`].
pub fn hard_negative_mine<R: Rng + ?Sized>(
    image: &[f64],
    true_label: usize,
    k: usize,
    teacher: &Network,
    scorer: &dyn NegativeScorer,
    rng: &mut R,
) -> Result<usize> {
    let x = Matrix::from_vec(1, image.len(), image.to_vec())?;
    Ok(mine_batch(&x, &[true_label], k, teacher, scorer, rng)?[0])
}

/// Fraction of the `C - 1` wrong labels hit by `k` draws, averaged over trials.
pub fn empirical_coverage<R: Rng + ?Sized>(classes: usize, k: usize, trials: usize, rng: &mut R) -> Result<f64> {
    let mut hit = vec![false; classes];
    let mut total = 0usize;
    for t in 0..trials {
        hit.iter_mut().for_each(|h| *h = false);
        let y = t % classes;
        for c in draw_candidates(y, classes, k, rng)? {
            hit[c] = true;
        }
        total += hit.iter().filter(|&&h| h).count();
    }
    Ok(total as f64 / (trials * (classes - 1)) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::trainer::registry::scorer_by_name;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(classes: usize) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = ModelConfig {
            blocks: 2,
            hidden_dim: 8,
            output_dim: 4,
            ..ModelConfig::default()
        };
        Network::new(&cfg, 5, classes, &mut rng).unwrap()
    }

    #[test]
    fn candidates_exclude_true_label() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for y in 0..5 {
            let c = draw_candidates(y, 5, 200, &mut rng).unwrap();
            assert!(c.iter().all(|&v| v != y && v < 5));
            for other in (0..5).filter(|&o| o != y) {
                assert!(c.contains(&other));
            }
        }
        assert!(draw_candidates(0, 1, 3, &mut rng).is_err());
    }

    #[test]
    fn ramp_endpoints_and_midpoint() {
        assert_eq!(hnm_ramp(0, 9, 8, 16), 8);
        assert_eq!(hnm_ramp(8, 9, 8, 16), 16);
        assert_eq!(hnm_ramp(4, 9, 8, 16), 12);
        assert_eq!(hnm_ramp(20, 9, 8, 16), 16);
        assert_eq!(hnm_ramp(0, 1, 8, 16), 8);
    }

    #[test]
    fn derangement_has_no_fixed_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 2..40 {
            let p = derangement(n, &mut rng).unwrap();
            let mut seen = vec![false; n];
            for (i, &j) in p.iter().enumerate() {
                assert_ne!(i, j);
                seen[j] = true;
            }
            assert!(seen.iter().all(|&s| s));
        }
        assert!(derangement(1, &mut rng).is_err());
    }

    #[test]
    fn k_one_returns_the_drawn_candidate() {
        let teacher = net(6);
        let scorer = scorer_by_name("summed").unwrap();
        let img = [0.3, -0.2, 0.9, 0.1, 0.0];
        for seed in 0..20 {
            let mut a = ChaCha8Rng::seed_from_u64(seed);
            let mut b = ChaCha8Rng::seed_from_u64(seed);
            let got = hard_negative_mine(&img, 2, 1, &teacher, scorer.as_ref(), &mut a).unwrap();
            assert_eq!(got, draw_candidates(2, 6, 1, &mut b).unwrap()[0]);
        }
    }

    #[test]
    fn constant_teacher_returns_first_draw() {
        let mut teacher = net(6);
        for b in &mut teacher.blocks {
            b.label_embed = Matrix::zeros(b.label_embed.rows(), b.label_embed.cols());
        }
        let scorer = scorer_by_name("summed").unwrap();
        let img = [0.3, -0.2, 0.9, 0.1, 0.0];
        for seed in 0..20 {
            let mut a = ChaCha8Rng::seed_from_u64(seed);
            let mut b = ChaCha8Rng::seed_from_u64(seed);
            let got = hard_negative_mine(&img, 4, 5, &teacher, scorer.as_ref(), &mut a).unwrap();
            assert_eq!(got, draw_candidates(4, 6, 5, &mut b).unwrap()[0]);
        }
    }

    #[test]
    fn mined_label_maximises_teacher_score_among_candidates() {
        let teacher = net(4);
        let scorer = scorer_by_name("summed").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Matrix::random_normal(16, 5, 1.0, &mut rng);
        let y: Vec<usize> = (0..16).map(|i| i % 4).collect();
        // k = 8 > C takes the per-class lookup path; k = 2 the direct path
        for k in [2, 8] {
            let mut a = ChaCha8Rng::seed_from_u64(k as u64);
            let mut b = ChaCha8Rng::seed_from_u64(k as u64);
            let picks = mine_batch(&x, &y, k, &teacher, scorer.as_ref(), &mut a).unwrap();
            for i in 0..16 {
                let cands = draw_candidates(y[i], 4, k, &mut b).unwrap();
                let s = |c: usize| -> f64 {
                    network_forward(&teacher, &x.select_rows(&[i]), &[c]).unwrap().iter().map(|g| g[0]).sum()
                };
                let best = cands.iter().map(|&c| s(c)).fold(f64::NEG_INFINITY, f64::max);
                assert!(cands.contains(&picks[i]));
                assert!((s(picks[i]) - best).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coverage_close_to_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cov = empirical_coverage(10, 8, 20_000, &mut rng).unwrap();
        let p = 1.0 - (8.0f64 / 9.0).powi(8);
        assert!((cov - p).abs() < 0.01, "{cov} vs {p}");
    }
}
