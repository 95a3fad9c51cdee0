//! Global-best particle swarm with constriction coefficients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub seed: u64,
    /// Uniform draws the starting swarm is picked from: the best
    /// `particles` of them. Values at or below `particles` start from
    /// plain uniform positions.
    pub init_samples: usize,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self { particles: 1000, iterations: 300, inertia: 0.729, cognitive: 1.49445, social: 1.49445, seed: 0, init_samples: 100_000 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult<const D: usize> {
    pub best: [f64; D],
    pub score: f64,
    /// Best score among the initial particles.
    pub initial_best: f64,
    pub evaluations: usize,
}

fn score(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// Minimizes `f` over the box `bounds`. Random draws come from one seeded
/// stream in particle order and evaluations are reduced by particle index,
/// so results are bitwise reproducible regardless of thread count.
pub fn pso_minimize<const D: usize>(
    f: impl Fn(&[f64; D]) -> f64 + Sync,
    bounds: &[(f64, f64); D],
    cfg: &PsoConfig,
) -> PsoResult<D> {
    let n = cfg.particles.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let range: [f64; D] = std::array::from_fn(|k| bounds[k].1 - bounds[k].0);
    let draws = cfg.init_samples.max(n);
    let mut pos: Vec<[f64; D]> = (0..draws)
        .map(|_| std::array::from_fn(|k| bounds[k].0 + rng.random::<f64>() * range[k]))
        .collect();
    let mut evaluations = 0;
    let mut own_score: Vec<f64> = Vec::new();
    if draws > n {
        let scores: Vec<f64> = pos.par_iter().map(|x| score(f(x))).collect();
        evaluations += draws;
        let mut order: Vec<usize> = (0..draws).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
        order.truncate(n);
        pos = order.iter().map(|&i| pos[i]).collect();
        own_score = order.iter().map(|&i| scores[i]).collect();
    }
    let mut vel: Vec<[f64; D]> = pos
        .iter()
        .map(|x| std::array::from_fn(|k| (bounds[k].0 + rng.random::<f64>() * range[k] - x[k]) * 0.5))
        .collect();
    let mut own_best = pos.clone();
    if own_score.is_empty() {
        own_score = pos.par_iter().map(|x| score(f(x))).collect();
        evaluations += n;
    }
    let mut g = 0;
    for i in 1..n {
        if own_score[i] < own_score[g] {
            g = i;
        }
    }
    let initial_best = own_score[g];
    let (mut best, mut best_score) = (own_best[g], own_score[g]);

    for _ in 0..cfg.iterations {
        for i in 0..n {
            for k in 0..D {
                let (r1, r2): (f64, f64) = (rng.random(), rng.random());
                let v = cfg.inertia * vel[i][k]
                    + cfg.cognitive * r1 * (own_best[i][k] - pos[i][k])
                    + cfg.social * r2 * (best[k] - pos[i][k]);
                let v = v.clamp(-range[k], range[k]);
                let x = pos[i][k] + v;
                if x < bounds[k].0 || x > bounds[k].1 {
                    pos[i][k] = x.clamp(bounds[k].0, bounds[k].1);
                    vel[i][k] = 0.0;
                } else {
                    pos[i][k] = x;
                    vel[i][k] = v;
                }
            }
        }
        let scores: Vec<f64> = pos.par_iter().map(|x| score(f(x))).collect();
        evaluations += n;
        for i in 0..n {
            if scores[i] < own_score[i] {
                own_score[i] = scores[i];
                own_best[i] = pos[i];
                if scores[i] < best_score {
                    best_score = scores[i];
                    best = pos[i];
                }
            }
        }
    }
    PsoResult { best, score: best_score, initial_best, evaluations }
}
