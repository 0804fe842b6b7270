//! Derivative-free simplex minimizer used by the error-operator fit and the
//! Knill-Laflamme code-word search.
//!
//! The objectives are low-dimensional (<= ~20 parameters) and can be
//! non-smooth at phase degeneracies, so a Nelder-Mead simplex with random
//! restarts is a better fit than gradient methods.

use rand::Rng;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_iters: usize,
    /// Convergence tolerance on the spread of simplex function values.
    pub f_tol: f64,
    /// Initial simplex edge length.
    pub scale: f64,
    /// Shrink-and-restart rounds from the best point after convergence.
    pub polish_rounds: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            f_tol: 1e-12,
            scale: 0.1,
            polish_rounds: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

fn centroid(simplex: &[Vec<f64>], skip: usize) -> Vec<f64> {
    let n = simplex[0].len();
    let mut c = vec![0.0; n];
    let count = simplex.len() - 1;
    for (i, v) in simplex.iter().enumerate() {
        if i == skip {
            continue;
        }
        for (cj, vj) in c.iter_mut().zip(v) {
            *cj += vj;
        }
    }
    for cj in &mut c {
        *cj /= count as f64;
    }
    c
}

fn blend(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}

/// One Nelder-Mead run from a given start point.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> NelderMeadResult {
    let mut best = single_run(f, x0, opts.scale, opts);
    let mut scale = opts.scale;
    for _ in 0..opts.polish_rounds {
        scale *= 0.1;
        let next = single_run(f, &best.x, scale, opts);
        let evals = best.evals + next.evals;
        if next.f < best.f {
            best = next;
        }
        best.evals = evals;
    }
    best
}

fn single_run<F: FnMut(&[f64]) -> f64>(
    f: &mut F,
    x0: &[f64],
    scale: f64,
    opts: &NelderMeadOptions,
) -> NelderMeadResult {
    let n = x0.len();
    assert!(n >= 1, "need at least one parameter");
    // Adaptive coefficients (Gao & Han) behave better for larger n.
    let nf = n as f64;
    let alpha = 1.0;
    let beta = 1.0 + 2.0 / nf;
    let gamma = 0.75 - 1.0 / (2.0 * nf);
    let delta = 1.0 - 1.0 / nf;

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        let step = if v[i].abs() > 1e-8 {
            scale * v[i].abs()
        } else {
            scale
        };
        v[i] += step;
        simplex.push(v);
    }
    let mut fvals: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut evals = n + 1;
    let mut converged = false;

    for _ in 0..opts.max_iters {
        // Order: best first.
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).expect("non-NaN objective"));
        let (lo, hi, second_hi) = (order[0], order[n], order[n - 1]);
        if (fvals[hi] - fvals[lo]).abs() <= opts.f_tol * (1.0 + fvals[lo].abs()) {
            converged = true;
            break;
        }

        let cen = centroid(&simplex, hi);
        let xr = blend(&cen, &simplex[hi], -alpha);
        let fr = f(&xr);
        evals += 1;

        if fr < fvals[lo] {
            let xe = blend(&cen, &simplex[hi], -beta);
            let fe = f(&xe);
            evals += 1;
            if fe < fr {
                simplex[hi] = xe;
                fvals[hi] = fe;
            } else {
                simplex[hi] = xr;
                fvals[hi] = fr;
            }
        } else if fr < fvals[second_hi] {
            simplex[hi] = xr;
            fvals[hi] = fr;
        } else {
            let (xc, fc) = if fr < fvals[hi] {
                let xc = blend(&cen, &simplex[hi], -gamma);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = blend(&cen, &simplex[hi], gamma);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < fvals[hi].min(fr) {
                simplex[hi] = xc;
                fvals[hi] = fc;
            } else {
                // Shrink toward the best vertex.
                let best = simplex[lo].clone();
                for (i, v) in simplex.iter_mut().enumerate() {
                    if i == lo {
                        continue;
                    }
                    *v = blend(&best, v, delta);
                    fvals[i] = f(v);
                    evals += 1;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..=n).collect();
    order.sort_by(|&a, &b| fvals[a].partial_cmp(&fvals[b]).expect("non-NaN objective"));
    NelderMeadResult {
        x: simplex[order[0]].clone(),
        f: fvals[order[0]],
        evals,
        converged,
    }
}

/// Minimizes from a deterministic start plus `restarts - 1` randomly
/// perturbed starts, returning the overall best.
pub fn minimize_with_restarts<F, R>(
    mut f: F,
    x0: &[f64],
    restarts: usize,
    perturbation: f64,
    rng: &mut R,
    opts: &NelderMeadOptions,
) -> NelderMeadResult
where
    F: FnMut(&[f64]) -> f64,
    R: Rng,
{
    let mut best = nelder_mead(&mut f, x0, opts);
    for _ in 1..restarts.max(1) {
        let start: Vec<f64> = x0
            .iter()
            .map(|&x| x + rng.gen_range(-perturbation..perturbation))
            .collect();
        let run = nelder_mead(&mut f, &start, opts);
        let evals = best.evals + run.evals;
        if run.f < best.f {
            best = run;
        }
        best.evals = evals;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn quadratic_bowl() {
        let mut f = |x: &[f64]| x.iter().map(|v| (v - 1.5) * (v - 1.5)).sum::<f64>();
        let res = nelder_mead(&mut f, &[0.0; 6], &NelderMeadOptions::default());
        for v in &res.x {
            assert!((v - 1.5).abs() < 1e-6, "x = {:?}", res.x);
        }
        assert!(res.f < 1e-11);
    }

    #[test]
    fn rosenbrock_with_restarts() {
        let f = |x: &[f64]| {
            (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        };
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        let opts = NelderMeadOptions {
            max_iters: 50_000,
            ..Default::default()
        };
        let res = minimize_with_restarts(f, &[-1.0, 1.0], 8, 0.5, &mut rng, &opts);
        assert!((res.x[0] - 1.0).abs() < 1e-5 && (res.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn nonsmooth_abs_sum() {
        let mut f = |x: &[f64]| x.iter().map(|v| (v - 0.25).abs()).sum::<f64>();
        let res = nelder_mead(&mut f, &[1.0, -1.0, 0.0], &NelderMeadOptions::default());
        assert!(res.f < 1e-7);
    }
}
