//! Squared-exponential kernels, covariance assembly, jittered Cholesky,
//! whitened latent transforms and noise-free Gaussian conditioning.
//!
//! Kernel inputs are raw ages and calendar years; lengthscales are therefore
//! in natural units (years of age, calendar years).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Diagonal jitter ladder tried in order during factorization.
pub const JITTER_LADDER: [f64; 8] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4];

/// A kernel input: an age, a year, or both.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GpInput {
    Age(f64),
    Year(f64),
    AgeYear(f64, f64),
}

/// Squared-exponential kernel over age, year, or the separable product of
/// both axes. All hyperparameters are strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    SqExpAge {
        process_variance: f64,
        lengthscale_age: f64,
    },
    SqExpYear {
        process_variance: f64,
        lengthscale_year: f64,
    },
    SqExp2D {
        process_variance: f64,
        lengthscale_age: f64,
        lengthscale_year: f64,
    },
}

impl KernelSpec {
    pub fn sq_exp_age(process_variance: f64, lengthscale_age: f64) -> Result<Self> {
        check_positive("process variance", process_variance)?;
        check_positive("age lengthscale", lengthscale_age)?;
        Ok(Self::SqExpAge {
            process_variance,
            lengthscale_age,
        })
    }

    pub fn sq_exp_year(process_variance: f64, lengthscale_year: f64) -> Result<Self> {
        check_positive("process variance", process_variance)?;
        check_positive("year lengthscale", lengthscale_year)?;
        Ok(Self::SqExpYear {
            process_variance,
            lengthscale_year,
        })
    }

    pub fn sq_exp_2d(
        process_variance: f64,
        lengthscale_age: f64,
        lengthscale_year: f64,
    ) -> Result<Self> {
        check_positive("process variance", process_variance)?;
        check_positive("age lengthscale", lengthscale_age)?;
        check_positive("year lengthscale", lengthscale_year)?;
        Ok(Self::SqExp2D {
            process_variance,
            lengthscale_age,
            lengthscale_year,
        })
    }

    pub fn process_variance(&self) -> f64 {
        match *self {
            Self::SqExpAge {
                process_variance, ..
            }
            | Self::SqExpYear {
                process_variance, ..
            }
            | Self::SqExp2D {
                process_variance, ..
            } => process_variance,
        }
    }
}

fn check_positive(what: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Data(format!("{what} must be positive and finite, got {v}")))
    }
}

fn sq_exp(delta: f64, lengthscale: f64) -> f64 {
    (-delta * delta / (2.0 * lengthscale * lengthscale)).exp()
}

/// Evaluate the kernel at a pair of inputs. Panics if an input's
/// dimensionality does not match the kernel variant; that is a programming
/// error, not a data error.
pub fn kernel_eval(kernel: &KernelSpec, a: GpInput, b: GpInput) -> f64 {
    match (*kernel, a, b) {
        (
            KernelSpec::SqExpAge {
                process_variance,
                lengthscale_age,
            },
            GpInput::Age(xa),
            GpInput::Age(xb),
        ) => process_variance * sq_exp(xa - xb, lengthscale_age),
        (
            KernelSpec::SqExpYear {
                process_variance,
                lengthscale_year,
            },
            GpInput::Year(ta),
            GpInput::Year(tb),
        ) => process_variance * sq_exp(ta - tb, lengthscale_year),
        (
            KernelSpec::SqExp2D {
                process_variance,
                lengthscale_age,
                lengthscale_year,
            },
            GpInput::AgeYear(xa, ta),
            GpInput::AgeYear(xb, tb),
        ) => {
            process_variance * sq_exp(xa - xb, lengthscale_age) * sq_exp(ta - tb, lengthscale_year)
        }
        _ => panic!("kernel input dimensionality does not match variant"),
    }
}

/// Dense covariance matrix over a point list; diagonal equals the process
/// variance everywhere.
pub fn build_covariance(kernel: &KernelSpec, points: &[GpInput]) -> DMatrix<f64> {
    let n = points.len();
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        cov[(i, i)] = kernel.process_variance();
        for j in 0..i {
            let v = kernel_eval(kernel, points[i], points[j]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    cov
}

fn cross_covariance(kernel: &KernelSpec, rows: &[GpInput], cols: &[GpInput]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        kernel_eval(kernel, rows[i], cols[j])
    })
}

/// Lower-triangular Cholesky factor together with the diagonal jitter that
/// was needed to obtain it.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    chol: Cholesky<f64, Dyn>,
    jitter_used: f64,
}

impl CholeskyFactor {
    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn jitter_used(&self) -> f64 {
        self.jitter_used
    }

    pub fn dim(&self) -> usize {
        self.chol.l_dirty().nrows()
    }

    /// Solve (L L^T) x = b.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    /// Solve L w = b by forward substitution.
    pub fn solve_lower(&self, b: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let n = l.nrows();
        let mut w = DVector::zeros(n);
        for i in 0..n {
            let mut acc = b[i];
            for j in 0..i {
                acc -= l[(i, j)] * w[j];
            }
            w[i] = acc / l[(i, i)];
        }
        w
    }

    /// L z, without forming the dense factor.
    pub fn mul_lower(&self, z: &DVector<f64>) -> DVector<f64> {
        let l = self.chol.l_dirty();
        let n = l.nrows();
        let mut out = DVector::zeros(n);
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += l[(i, j)] * z[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self
            .chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|d| d.ln())
            .sum::<f64>()
    }
}

/// Factorize a symmetric matrix, escalating diagonal jitter through
/// [`JITTER_LADDER`] until the factorization succeeds.
pub fn cholesky_with_jitter(matrix: &DMatrix<f64>) -> Result<CholeskyFactor> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::Data("matrix must be square".into()));
    }
    let max_abs = matrix.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..i {
            if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-10 * max_abs {
                return Err(Error::Data(format!(
                    "matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    for &jitter in JITTER_LADDER.iter() {
        let mut m = matrix.clone();
        if jitter > 0.0 {
            for i in 0..n {
                m[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(m) {
            // guard against factorization of a wildly indefinite input
            if chol.l_dirty().diagonal().iter().all(|&d| d > 0.0) {
                return Ok(CholeskyFactor {
                    chol,
                    jitter_used: jitter,
                });
            }
        }
    }
    Err(Error::NotPositiveDefinite {
        max_jitter: *JITTER_LADDER.last().unwrap(),
    })
}

/// Non-centered transform: mean + L z. With standard-normal z the output is
/// distributed as N(mean, L L^T).
pub fn whiten_transform(
    mean: &DVector<f64>,
    chol: &CholeskyFactor,
    z: &DVector<f64>,
) -> DVector<f64> {
    assert_eq!(mean.len(), chol.dim(), "mean dimension mismatch");
    assert_eq!(z.len(), chol.dim(), "latent dimension mismatch");
    mean + chol.mul_lower(z)
}

/// Noise-free GP conditioning at test points.
///
/// With no training points the prior mean and covariance are returned.
pub fn gp_condition<F: Fn(GpInput) -> f64>(
    kernel: &KernelSpec,
    prior_mean_fn: F,
    train_points: &[GpInput],
    train_values: &DVector<f64>,
    test_points: &[GpInput],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    assert_eq!(
        train_points.len(),
        train_values.len(),
        "training point/value length mismatch"
    );
    let prior_mean =
        DVector::from_fn(test_points.len(), |i, _| prior_mean_fn(test_points[i]));
    let prior_cov = build_covariance(kernel, test_points);
    if train_points.is_empty() {
        return Ok((prior_mean, prior_cov));
    }
    let train_mean = DVector::from_fn(train_points.len(), |i, _| prior_mean_fn(train_points[i]));
    let residual = train_values - train_mean;
    let k_train = build_covariance(kernel, train_points);
    let chol = cholesky_with_jitter(&k_train)?;
    let k_cross = cross_covariance(kernel, test_points, train_points);

    let alpha = chol.solve(&residual);
    let mean = prior_mean + &k_cross * alpha;

    let solved = chol.solve_matrix(&k_cross.transpose());
    let mut cov = prior_cov - &k_cross * solved;
    // enforce exact symmetry lost to rounding
    for i in 0..cov.nrows() {
        for j in 0..i {
            let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    Ok((mean, cov))
}

/// Exact Gaussian log marginal likelihood of `values` under
/// N(mean, C + noise_variance * I).
pub fn gp_log_marginal_likelihood<F: Fn(GpInput) -> f64>(
    kernel: &KernelSpec,
    noise_variance: f64,
    mean_fn: F,
    points: &[GpInput],
    values: &DVector<f64>,
) -> Result<f64> {
    assert_eq!(points.len(), values.len(), "point/value length mismatch");
    if noise_variance < 0.0 {
        return Err(Error::Data("noise variance must be non-negative".into()));
    }
    let n = points.len();
    let mut cov = build_covariance(kernel, points);
    for i in 0..n {
        cov[(i, i)] += noise_variance;
    }
    let chol = cholesky_with_jitter(&cov)?;
    let mean = DVector::from_fn(n, |i, _| mean_fn(points[i]));
    let residual = values - mean;
    let alpha = chol.solve(&residual);
    Ok(-0.5 * residual.dot(&alpha)
        - 0.5 * chol.log_det()
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}
