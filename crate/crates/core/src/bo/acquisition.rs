use rand::Rng;

use crate::numeric::{std_normal_cdf, std_normal_pdf};

/// Posterior standard deviations below this fraction of the prior standard
/// deviation count as zero.
const SIGMA_FLOOR: f64 = 1e-6;

/// Expected improvement below `f_best` for a Gaussian `N(mu, var)`:
/// `σ [γ Φ(γ) + φ(γ)]` with `γ = (f_best − μ) / σ`.
pub fn ei_from_moments(mu: f64, var: f64, f_best: f64, prior_var: f64) -> f64 {
    let sigma = var.max(0.0).sqrt();
    if sigma <= SIGMA_FLOOR * prior_var.max(0.0).sqrt() || sigma == 0.0 {
        return 0.0;
    }
    let g = (f_best - mu) / sigma;
    (sigma * (g * std_normal_cdf(g) + std_normal_pdf(g))).max(0.0)
}

const PRIMES: [u64; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * f;
        i /= base;
        f *= inv;
    }
    out
}

/// `count` points of a Halton sequence in `[0,1)^dim`, randomized by one
/// uniform shift per coordinate (modulo 1).
pub fn halton_points<R: Rng + ?Sized>(count: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    assert!(dim <= PRIMES.len(), "Halton candidates support up to {} dimensions", PRIMES.len());
    let shift: Vec<f64> = (0..dim).map(|_| rng.random()).collect();
    (1..=count as u64)
        .map(|i| {
            (0..dim)
                .map(|j| (radical_inverse(i, PRIMES[j]) + shift[j]).fract())
                .collect()
        })
        .collect()
}

/// Compass search maximizing `f` over the unit cube from `start`.
///
/// Each poll tries `± step` along every coordinate and moves to the first
/// improvement; a poll without improvement halves the step. Stops after
/// `max_evals` evaluations of `f` or once the step is below `1e-7`.
pub fn pattern_search(
    mut f: impl FnMut(&[f64]) -> f64,
    start: Vec<f64>,
    start_value: f64,
    initial_step: f64,
    max_evals: usize,
) -> (Vec<f64>, f64) {
    let mut x = start;
    let mut fx = start_value;
    let mut step = initial_step;
    let mut evals = 0;
    'outer: while evals < max_evals && step >= 1e-7 {
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let moved = (x[i] + dir * step).clamp(0.0, 1.0);
                if moved == x[i] {
                    continue;
                }
                if evals >= max_evals {
                    break 'outer;
                }
                let mut y = x.clone();
                y[i] = moved;
                let fy = f(&y);
                evals += 1;
                if fy > fx {
                    x = y;
                    fx = fy;
                    continue 'outer;
                }
            }
        }
        step *= 0.5;
    }
    (x, fx)
}
