//! Count likelihood, truncated-normal priors and the AR(1) deflator process.
//!
//! The negative binomial is parameterized by its mean `mu` and an
//! overdispersion factor `omega` so that `Var = mu * (1 + omega)`; `omega = 0`
//! is the Poisson limit.

use rand::Rng;
use rand_distr::Distribution;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

/// Overdispersion below this evaluates through the Poisson branch; the
/// gamma-function form loses precision as `r = mu/omega` blows up.
pub const POISSON_OMEGA_THRESHOLD: f64 = 1e-8;

/// Sanity cap on counts entering pmf evaluation.
const MAX_COUNT: u64 = 1_000_000_000;

const MIN_MEAN: f64 = 1e-300;

/// Mean/overdispersion parameters of a negative binomial count distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegBinParams {
    pub mean: f64,
    pub overdispersion: f64,
}

impl NegBinParams {
    pub fn new(mean: f64, overdispersion: f64) -> Result<Self> {
        if !(mean.is_finite() && mean > 0.0) {
            return Err(Error::Data(format!("negbin mean must be positive, got {mean}")));
        }
        if !(overdispersion.is_finite() && overdispersion >= 0.0) {
            return Err(Error::Data(format!(
                "negbin overdispersion must be non-negative, got {overdispersion}"
            )));
        }
        Ok(Self {
            mean,
            overdispersion,
        })
    }

    pub fn variance(&self) -> f64 {
        self.mean * (1.0 + self.overdispersion)
    }
}

fn poisson_logpmf(d: u64, mu: f64) -> f64 {
    let df = d as f64;
    let term = if d == 0 { 0.0 } else { df * mu.ln() };
    -mu + term - ln_gamma(df + 1.0)
}

/// Log pmf of the negative binomial in mean/overdispersion form.
///
/// Size is `r = mu/omega` and success probability `1/(1+omega)`, so the
/// success probability is shared by all cells with a common `omega`.
pub fn negbin_logpmf(d: u64, p: NegBinParams) -> f64 {
    let d = d.min(MAX_COUNT);
    let mu = p.mean.max(MIN_MEAN);
    let omega = p.overdispersion;
    if omega < POISSON_OMEGA_THRESHOLD {
        return poisson_logpmf(d, mu);
    }
    let r = mu / omega;
    let df = d as f64;
    // log C(d+r-1, d) + r log p + d log(1-p), p = 1/(1+omega)
    let log1p_omega = omega.ln_1p();
    ln_gamma(df + r) - ln_gamma(r) - ln_gamma(df + 1.0) - r * log1p_omega
        + df * (omega.ln() - log1p_omega)
}

/// Draw a count via the gamma-Poisson mixture; exact Poisson when `omega`
/// is below the threshold. Deterministic under a seeded rng.
pub fn negbin_sample<R: Rng + ?Sized>(p: NegBinParams, rng: &mut R) -> u64 {
    let mu = p.mean.max(MIN_MEAN);
    let omega = p.overdispersion;
    let lambda = if omega < POISSON_OMEGA_THRESHOLD {
        mu
    } else {
        // shape mu/omega, scale omega => mean mu, Var(lambda) = mu*omega
        let gamma = rand_distr::Gamma::new(mu / omega, omega).expect("valid gamma params");
        gamma.sample(rng)
    };
    if lambda < 1e-12 {
        return 0;
    }
    let pois = rand_distr::Poisson::new(lambda).expect("valid poisson rate");
    pois.sample(rng) as u64
}

/// Normal prior restricted to an interval; bounds may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncNormalPrior {
    pub center: f64,
    pub scale: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncNormalPrior {
    pub fn new(center: f64, scale: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Data(format!("prior scale must be positive, got {scale}")));
        }
        if !(lower < upper) {
            return Err(Error::Data(format!(
                "prior bounds must satisfy lower < upper, got [{lower}, {upper}]"
            )));
        }
        let prior = Self {
            center,
            scale,
            lower,
            upper,
        };
        if prior.interval_mass() <= 0.0 {
            return Err(Error::Data(
                "truncation interval carries no normal mass".into(),
            ));
        }
        Ok(prior)
    }

    pub fn untruncated(center: f64, scale: f64) -> Self {
        Self::new(center, scale, f64::NEG_INFINITY, f64::INFINITY).expect("valid")
    }

    pub fn positive(center: f64, scale: f64) -> Self {
        Self::new(center, scale, 0.0, f64::INFINITY).expect("valid")
    }

    pub fn unit_interval(center: f64, scale: f64) -> Self {
        Self::new(center, scale, 0.0, 1.0).expect("valid")
    }

    fn std_normal() -> Normal {
        Normal::new(0.0, 1.0).expect("standard normal")
    }

    fn interval_mass(&self) -> f64 {
        let n = Self::std_normal();
        let lo = if self.lower.is_finite() {
            n.cdf((self.lower - self.center) / self.scale)
        } else {
            0.0
        };
        let hi = if self.upper.is_finite() {
            n.cdf((self.upper - self.center) / self.scale)
        } else {
            1.0
        };
        hi - lo
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lower && x < self.upper
    }

    /// Mean of the prior restricted to `(lo, hi)` intersected with its own
    /// support (closed-form truncated-normal mean).
    pub fn mean_on(&self, lo: f64, hi: f64) -> f64 {
        let n = Self::std_normal();
        let a = (lo.max(self.lower) - self.center) / self.scale;
        let b = (hi.min(self.upper) - self.center) / self.scale;
        let pdf = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let cdf = |z: f64| {
            if z.is_infinite() {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                n.cdf(z)
            }
        };
        let phi_a = if a.is_finite() { pdf(a) } else { 0.0 };
        let phi_b = if b.is_finite() { pdf(b) } else { 0.0 };
        self.center + self.scale * (phi_a - phi_b) / (cdf(b) - cdf(a))
    }
}

/// Log density of a truncated normal; negative infinity outside the support.
pub fn truncnormal_logpdf(x: f64, prior: &TruncNormalPrior) -> f64 {
    if !prior.contains(x) {
        return f64::NEG_INFINITY;
    }
    let z = (x - prior.center) / prior.scale;
    let log_norm = -0.5 * z * z
        - prior.scale.ln()
        - 0.5 * (2.0 * std::f64::consts::PI).ln();
    log_norm - prior.interval_mass().ln()
}

/// Inverse-CDF sampler; output is strictly inside the support.
pub fn truncnormal_sample<R: Rng + ?Sized>(prior: &TruncNormalPrior, rng: &mut R) -> f64 {
    let n = TruncNormalPrior::std_normal();
    let lo = if prior.lower.is_finite() {
        n.cdf((prior.lower - prior.center) / prior.scale)
    } else {
        0.0
    };
    let hi = if prior.upper.is_finite() {
        n.cdf((prior.upper - prior.center) / prior.scale)
    } else {
        1.0
    };
    loop {
        let u: f64 = rng.random();
        let p = lo + u * (hi - lo);
        if p <= 0.0 || p >= 1.0 {
            continue;
        }
        let x = prior.center + prior.scale * n.inverse_cdf(p);
        if prior.contains(x) {
            return x;
        }
    }
}

/// AR(1) process over deflators with a fixed unconditional mean of -0.5 and
/// unconditional variance 0.25.
///
/// The level is tied to the slope, `mu = -0.5 (1 - rho)`, and the innovation
/// variance is `0.25 (1 - rho^2)`, so the process is stationary at
/// `N(-0.5, 0.25)` regardless of `rho`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ar1DeflatorProcess {
    rho: f64,
}

impl Ar1DeflatorProcess {
    pub const INITIAL_CENTER: f64 = -0.5;
    pub const INITIAL_SD: f64 = 0.5;

    pub fn new(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Data(format!("rho must lie in (0, 1), got {rho}")));
        }
        Ok(Self { rho })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn level_mu(&self) -> f64 {
        -0.5 * (1.0 - self.rho)
    }

    pub fn innovation_variance(&self) -> f64 {
        0.25 * (1.0 - self.rho * self.rho)
    }

    pub fn innovation_sd(&self) -> f64 {
        self.innovation_variance().sqrt()
    }
}

pub fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
}

/// Joint log density of an ordered deflator vector under the AR(1) law.
pub fn ar1_logdensity(theta: &[f64], proc: &Ar1DeflatorProcess) -> f64 {
    assert!(!theta.is_empty(), "theta vector must be non-empty");
    let mut lp = normal_logpdf(
        theta[0],
        Ar1DeflatorProcess::INITIAL_CENTER,
        Ar1DeflatorProcess::INITIAL_SD,
    );
    let sd = proc.innovation_sd();
    for w in theta.windows(2) {
        lp += normal_logpdf(w[1], proc.level_mu() + proc.rho() * w[0], sd);
    }
    lp
}

/// Stationary mean and variance implied by the conditional law.
pub fn ar1_stationary_moments(_proc: &Ar1DeflatorProcess) -> (f64, f64) {
    (-0.5, 0.25)
}
