//! Deterministic Nelder-Mead simplex minimizer.
//!
//! Used for maximum-likelihood kernel hyperparameters; objectives are cheap
//! and low-dimensional, so a derivative-free simplex search with multiple
//! restarts is sufficient and easy to keep reproducible under a seed.

/// Standard reflection/expansion/contraction coefficients.
const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_iters: usize,
    /// Stop when the simplex function-value spread falls below this.
    pub f_tol: f64,
    /// Initial simplex step per coordinate.
    pub initial_step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            f_tol: 1e-10,
            initial_step: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NelderMeadResult {
    pub x_min: Vec<f64>,
    pub f_min: f64,
    pub iters: usize,
    pub converged: bool,
}

/// Minimize `f` starting from `x0`. Non-finite objective values are treated
/// as infinitely bad, which keeps the simplex inside the feasible region.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &NelderMeadOptions,
) -> NelderMeadResult {
    let n = x0.len();
    assert!(n > 0, "cannot optimize a zero-dimensional objective");
    let clean = |v: f64| if v.is_finite() { v } else { f64::INFINITY };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += opts.initial_step;
        simplex.push(x);
    }
    let mut values: Vec<f64> = simplex.iter().map(|x| clean(f(x))).collect();

    let mut iters = 0;
    let mut converged = false;
    while iters < opts.max_iters {
        iters += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];

        let spread = values[worst] - values[best];
        if spread.is_finite() && spread < opts.f_tol {
            converged = true;
            break;
        }

        // centroid of all but the worst vertex
        let mut centroid = vec![0.0; n];
        for (idx, x) in simplex.iter().enumerate() {
            if idx == worst {
                continue;
            }
            for (c, xi) in centroid.iter_mut().zip(x) {
                *c += xi / n as f64;
            }
        }

        let blend = |from: &[f64], coeff: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(from)
                .map(|(&c, &w)| c + coeff * (c - w))
                .collect()
        };

        let reflected = blend(&simplex[worst], ALPHA);
        let f_reflected = clean(f(&reflected));

        if f_reflected < values[best] {
            let expanded = blend(&simplex[worst], GAMMA);
            let f_expanded = clean(f(&expanded));
            if f_expanded < f_reflected {
                simplex[worst] = expanded;
                values[worst] = f_expanded;
            } else {
                simplex[worst] = reflected;
                values[worst] = f_reflected;
            }
        } else if f_reflected < values[second_worst] {
            simplex[worst] = reflected;
            values[worst] = f_reflected;
        } else {
            let contracted = blend(&simplex[worst], -RHO);
            let f_contracted = clean(f(&contracted));
            if f_contracted < values[worst] {
                simplex[worst] = contracted;
                values[worst] = f_contracted;
            } else {
                // shrink toward the best vertex
                let best_x = simplex[best].clone();
                for idx in 0..=n {
                    if idx == best {
                        continue;
                    }
                    for (xi, bi) in simplex[idx].iter_mut().zip(&best_x) {
                        *xi = bi + SIGMA * (*xi - bi);
                    }
                    values[idx] = clean(f(&simplex[idx]));
                }
            }
        }
    }

    let mut best = 0;
    for i in 1..=n {
        if values[i] < values[best] {
            best = i;
        }
    }
    NelderMeadResult {
        x_min: simplex[best].clone(),
        f_min: values[best],
        iters,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimizes_quadratic_bowl() {
        let res = nelder_mead(
            |x| (x[0] - 1.5).powi(2) + 2.0 * (x[1] + 0.5).powi(2),
            &[0.0, 0.0],
            &NelderMeadOptions::default(),
        );
        assert!(res.converged);
        assert!((res.x_min[0] - 1.5).abs() < 1e-4);
        assert!((res.x_min[1] + 0.5).abs() < 1e-4);
    }

    #[test]
    fn rosenbrock_two_dim() {
        let res = nelder_mead(
            |x| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2),
            &[-1.2, 1.0],
            &NelderMeadOptions {
                max_iters: 5000,
                ..Default::default()
            },
        );
        assert!((res.x_min[0] - 1.0).abs() < 1e-3, "{:?}", res.x_min);
        assert!((res.x_min[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn survives_infinite_regions() {
        // objective undefined left of x = 0
        let res = nelder_mead(
            |x| {
                if x[0] <= 0.0 {
                    f64::NAN
                } else {
                    (x[0].ln()).powi(2)
                }
            },
            &[3.0],
            &NelderMeadOptions::default(),
        );
        assert!((res.x_min[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn deterministic_given_start() {
        let run = || {
            nelder_mead(
                |x| x[0].powi(2) + x[1].powi(2) + (x[0] * x[1]).sin(),
                &[2.0, -1.0],
                &NelderMeadOptions::default(),
            )
        };
        let a = run();
        let b = run();
        assert_eq!(a.x_min, b.x_min);
        assert_eq!(a.f_min, b.f_min);
    }
}
