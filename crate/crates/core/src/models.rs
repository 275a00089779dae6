//! The nine mortality models: deflator structure, priors, likelihood,
//! posterior, simulation and forecasting.
//!
//! Deflator models express fund log-mortality as `theta + log m_ref`; the
//! single-population models (GP-S1, GP-S2) model the log-mortality surface
//! `psi` directly with a parametric linear mean. All stochastic models share
//! a negative binomial count likelihood with common overdispersion `omega`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::Distribution;

use crate::data::{AgeYearGrid, FundDataset, ReferenceTable};
use crate::error::{Error, Result};
use crate::gp::{
    build_covariance, cholesky_with_jitter, gp_condition, CholeskyFactor, GpInput, KernelSpec,
};
use crate::reference_prep::{PriorMeanCalibration, CALIBRATION_AGE_PIVOT};
use crate::seed::{derive_seed, DOMAIN_PREDICT};
use crate::stats::{
    ar1_logdensity, negbin_logpmf, negbin_sample, truncnormal_logpdf, Ar1DeflatorProcess,
    NegBinParams, TruncNormalPrior,
};

const LN_2PI: f64 = 1.8378770664093453;

/// Model identifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelId {
    Fd0,
    Fd1,
    AdFe,
    AdAr,
    AdGp,
    TdAr,
    TdGp,
    GpS1,
    GpS2,
}

impl ModelId {
    pub const ALL: [ModelId; 9] = [
        ModelId::Fd0,
        ModelId::Fd1,
        ModelId::AdFe,
        ModelId::AdAr,
        ModelId::AdGp,
        ModelId::TdAr,
        ModelId::TdGp,
        ModelId::GpS1,
        ModelId::GpS2,
    ];

    /// Deflator models sit on top of a reference table; the GP-S models do not.
    pub fn uses_reference(&self) -> bool {
        !matches!(self, ModelId::GpS1 | ModelId::GpS2)
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelId::Fd0 => "FD-0",
            ModelId::Fd1 => "FD-1",
            ModelId::AdFe => "AD-FE",
            ModelId::AdAr => "AD-AR",
            ModelId::AdGp => "AD-GP",
            ModelId::TdAr => "TD-AR",
            ModelId::TdGp => "TD-GP",
            ModelId::GpS1 => "GP-S1",
            ModelId::GpS2 => "GP-S2",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FD-0" | "FD0" => Ok(ModelId::Fd0),
            "FD-1" | "FD1" => Ok(ModelId::Fd1),
            "AD-FE" | "ADFE" => Ok(ModelId::AdFe),
            "AD-AR" | "ADAR" => Ok(ModelId::AdAr),
            "AD-GP" | "ADGP" => Ok(ModelId::AdGp),
            "TD-AR" | "TDAR" => Ok(ModelId::TdAr),
            "TD-GP" | "TDGP" => Ok(ModelId::TdGp),
            "GP-S1" | "GPS1" => Ok(ModelId::GpS1),
            "GP-S2" | "GPS2" => Ok(ModelId::GpS2),
            other => Err(Error::ModelSpec(format!("unknown model id `{other}`"))),
        }
    }
}

/// A model bound to a fitting grid, with its full prior catalog.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub id: ModelId,
    pub reference_label: Option<String>,
    pub grid: AgeYearGrid,
    pub prior_catalog: BTreeMap<String, TruncNormalPrior>,
    pub calibration: Option<PriorMeanCalibration>,
}

impl ModelSpec {
    pub fn new(
        id: ModelId,
        grid: AgeYearGrid,
        reference_label: Option<String>,
        calibration: Option<PriorMeanCalibration>,
    ) -> Result<Self> {
        if id.uses_reference() {
            if reference_label.is_none() {
                return Err(Error::ModelSpec(format!(
                    "{id} requires a reference population label"
                )));
            }
            if calibration.is_some() {
                return Err(Error::ModelSpec(format!(
                    "{id} does not take a prior-mean calibration"
                )));
            }
        } else {
            if reference_label.is_some() {
                return Err(Error::ModelSpec(format!(
                    "{id} models the fund directly; a reference is forbidden"
                )));
            }
            if calibration.is_none() {
                return Err(Error::ModelSpec(format!(
                    "{id} requires a prior-mean calibration"
                )));
            }
            if id == ModelId::GpS2
                && calibration.as_ref().unwrap().beta_yr_mean.is_none()
            {
                return Err(Error::ModelSpec(
                    "GP-S2 calibration must include a year trend".into(),
                ));
            }
        }
        let prior_catalog = build_prior_catalog(id, calibration.as_ref());
        Ok(Self {
            id,
            reference_label,
            grid,
            prior_catalog,
            calibration,
        })
    }

    /// Dimension of the latent vector block, if the model has one.
    pub fn latent_dim(&self) -> usize {
        match self.id {
            ModelId::Fd0 | ModelId::Fd1 => 0,
            ModelId::AdFe | ModelId::AdAr => self.grid.n_ages(),
            ModelId::TdAr => self.grid.n_years(),
            ModelId::AdGp | ModelId::GpS1 => self.grid.n_ages(),
            ModelId::TdGp => self.grid.n_years(),
            ModelId::GpS2 => self.grid.n_cells(),
        }
    }

    pub fn year_pivot(&self) -> f64 {
        self.grid.years()[0] as f64
    }
}

fn build_prior_catalog(
    id: ModelId,
    calibration: Option<&PriorMeanCalibration>,
) -> BTreeMap<String, TruncNormalPrior> {
    let mut cat = BTreeMap::new();
    let theta = TruncNormalPrior::untruncated(-0.5, 0.5);
    let omega = TruncNormalPrior::positive(0.0, 1.0);
    let rho = TruncNormalPrior::unit_interval(1.0, 1.0);
    let sigma2 = TruncNormalPrior::positive(0.5, 0.5);
    let phi = TruncNormalPrior::positive(4.0, 4.0);
    match id {
        ModelId::Fd0 => {}
        ModelId::Fd1 => {
            cat.insert("theta".into(), theta);
            cat.insert("omega".into(), omega);
        }
        ModelId::AdFe => {
            cat.insert("theta".into(), theta);
            cat.insert("omega".into(), omega);
        }
        ModelId::AdAr | ModelId::TdAr => {
            cat.insert("theta_init".into(), theta);
            cat.insert("rho".into(), rho);
            cat.insert("omega".into(), omega);
        }
        ModelId::AdGp => {
            cat.insert("sigma2".into(), sigma2);
            cat.insert("phi_ag".into(), phi);
            cat.insert("omega".into(), omega);
        }
        ModelId::TdGp => {
            cat.insert("sigma2".into(), sigma2);
            cat.insert("phi_yr".into(), phi);
            cat.insert("omega".into(), omega);
        }
        ModelId::GpS1 => {
            let calib = calibration.expect("validated");
            cat.insert(
                "beta0".into(),
                TruncNormalPrior::untruncated(calib.beta0_mean, 1.0),
            );
            cat.insert(
                "beta_ag".into(),
                TruncNormalPrior::untruncated(calib.beta_ag_mean, 0.1),
            );
            cat.insert("sigma2".into(), sigma2);
            cat.insert("phi_ag".into(), phi);
            cat.insert("omega".into(), omega);
        }
        ModelId::GpS2 => {
            let calib = calibration.expect("validated");
            cat.insert(
                "beta0".into(),
                TruncNormalPrior::untruncated(calib.beta0_mean, 1.0),
            );
            cat.insert(
                "beta_ag".into(),
                TruncNormalPrior::untruncated(calib.beta_ag_mean, 0.1),
            );
            cat.insert(
                "beta_yr".into(),
                TruncNormalPrior::untruncated(calib.beta_yr_mean.expect("validated"), 0.1),
            );
            cat.insert("sigma2".into(), sigma2);
            cat.insert("phi_ag".into(), phi);
            cat.insert("phi_yr".into(), phi);
            cat.insert("omega".into(), omega);
        }
    }
    cat
}

/// One point in parameter space. Only the blocks demanded by the model are
/// present; GP latents are stored whitened and materialized at evaluation
/// time.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterVector {
    pub scalar_theta: Option<f64>,
    pub theta_by_age: Option<DVector<f64>>,
    pub theta_by_year: Option<DVector<f64>>,
    pub z_latents: Option<DVector<f64>>,
    pub omega: Option<f64>,
    pub rho: Option<f64>,
    pub sigma2: Option<f64>,
    pub phi_ag: Option<f64>,
    pub phi_yr: Option<f64>,
    pub beta0: Option<f64>,
    pub beta_ag: Option<f64>,
    pub beta_yr: Option<f64>,
}

impl ParameterVector {
    /// Check that exactly the blocks demanded by the model are present and
    /// that every bound constraint holds.
    pub fn validate_for(&self, spec: &ModelSpec) -> Result<()> {
        let id = spec.id;
        let expect = |ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::ModelSpec(format!("{id}: parameter block mismatch: {what}")))
            }
        };
        let needs_omega = id != ModelId::Fd0;
        expect(self.omega.is_some() == needs_omega, "omega")?;
        expect(self.scalar_theta.is_some() == (id == ModelId::Fd1), "theta")?;
        expect(
            self.theta_by_age.is_some() == matches!(id, ModelId::AdFe | ModelId::AdAr),
            "theta_by_age",
        )?;
        expect(self.theta_by_year.is_some() == (id == ModelId::TdAr), "theta_by_year")?;
        expect(
            self.z_latents.is_some()
                == matches!(id, ModelId::AdGp | ModelId::TdGp | ModelId::GpS1 | ModelId::GpS2),
            "z_latents",
        )?;
        expect(
            self.rho.is_some() == matches!(id, ModelId::AdAr | ModelId::TdAr),
            "rho",
        )?;
        expect(
            self.sigma2.is_some()
                == matches!(id, ModelId::AdGp | ModelId::TdGp | ModelId::GpS1 | ModelId::GpS2),
            "sigma2",
        )?;
        expect(
            self.phi_ag.is_some()
                == matches!(id, ModelId::AdGp | ModelId::GpS1 | ModelId::GpS2),
            "phi_ag",
        )?;
        expect(
            self.phi_yr.is_some() == matches!(id, ModelId::TdGp | ModelId::GpS2),
            "phi_yr",
        )?;
        expect(
            self.beta0.is_some() == matches!(id, ModelId::GpS1 | ModelId::GpS2),
            "beta0",
        )?;
        expect(
            self.beta_ag.is_some() == matches!(id, ModelId::GpS1 | ModelId::GpS2),
            "beta_ag",
        )?;
        expect(self.beta_yr.is_some() == (id == ModelId::GpS2), "beta_yr")?;

        if let Some(v) = &self.theta_by_age {
            expect(v.len() == spec.grid.n_ages(), "theta_by_age length")?;
        }
        if let Some(v) = &self.theta_by_year {
            expect(v.len() == spec.grid.n_years(), "theta_by_year length")?;
        }
        if let Some(v) = &self.z_latents {
            expect(v.len() == spec.latent_dim(), "latent length")?;
        }

        let bound = |ok: bool, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::ModelSpec(format!("{id}: bound violated: {what}")))
            }
        };
        if let Some(w) = self.omega {
            bound(w.is_finite() && w >= 0.0, "omega >= 0")?;
        }
        if let Some(r) = self.rho {
            bound(r > 0.0 && r < 1.0, "rho in (0,1)")?;
        }
        if let Some(s) = self.sigma2 {
            bound(s.is_finite() && s > 0.0, "sigma2 > 0")?;
        }
        for (phi, name) in [(self.phi_ag, "phi_ag > 0"), (self.phi_yr, "phi_yr > 0")] {
            if let Some(p) = phi {
                bound(p.is_finite() && p > 0.0, name)?;
            }
        }
        Ok(())
    }

    /// Stable (name, value) flattening used for serialization and
    /// diagnostics. Latent vectors are labeled by their grid coordinate.
    pub fn flatten(&self, spec: &ModelSpec) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        if let Some(v) = self.scalar_theta {
            out.push(("theta".to_string(), v));
        }
        for (name, v) in [
            ("omega", self.omega),
            ("rho", self.rho),
            ("sigma2", self.sigma2),
            ("phi_ag", self.phi_ag),
            ("phi_yr", self.phi_yr),
            ("beta0", self.beta0),
            ("beta_ag", self.beta_ag),
            ("beta_yr", self.beta_yr),
        ] {
            if let Some(v) = v {
                out.push((name.to_string(), v));
            }
        }
        if let Some(v) = &self.theta_by_age {
            for (i, &age) in spec.grid.ages().iter().enumerate() {
                out.push((format!("theta[{age}]"), v[i]));
            }
        }
        if let Some(v) = &self.theta_by_year {
            for (j, &year) in spec.grid.years().iter().enumerate() {
                out.push((format!("theta[{year}]"), v[j]));
            }
        }
        if let Some(v) = &self.z_latents {
            for i in 0..v.len() {
                out.push((format!("z[{i}]"), v[i]));
            }
        }
        out
    }

    /// Rebuild a vector from flattened (name, value) pairs.
    pub fn from_named(spec: &ModelSpec, named: &BTreeMap<String, f64>) -> Result<Self> {
        let mut pv = ParameterVector::default();
        let mut theta_age = vec![f64::NAN; spec.grid.n_ages()];
        let mut theta_year = vec![f64::NAN; spec.grid.n_years()];
        let mut z = vec![f64::NAN; spec.latent_dim()];
        let (mut saw_age, mut saw_year, mut saw_z) = (false, false, false);
        for (name, &value) in named {
            match name.as_str() {
                "theta" => pv.scalar_theta = Some(value),
                "omega" => pv.omega = Some(value),
                "rho" => pv.rho = Some(value),
                "sigma2" => pv.sigma2 = Some(value),
                "phi_ag" => pv.phi_ag = Some(value),
                "phi_yr" => pv.phi_yr = Some(value),
                "beta0" => pv.beta0 = Some(value),
                "beta_ag" => pv.beta_ag = Some(value),
                "beta_yr" => pv.beta_yr = Some(value),
                other => {
                    let inner = other
                        .strip_prefix("theta[")
                        .or_else(|| other.strip_prefix("z["))
                        .and_then(|s| s.strip_suffix(']'))
                        .ok_or_else(|| Error::UnknownParameter(other.to_string()))?;
                    let idx: i64 = inner
                        .parse()
                        .map_err(|_| Error::UnknownParameter(other.to_string()))?;
                    if other.starts_with("z[") {
                        let i = idx as usize;
                        if i >= z.len() {
                            return Err(Error::UnknownParameter(other.to_string()));
                        }
                        z[i] = value;
                        saw_z = true;
                    } else if let Some(i) = spec.grid.age_index(idx as i32) {
                        theta_age[i] = value;
                        saw_age = true;
                    } else if let Some(j) = spec.grid.year_index(idx as i32) {
                        theta_year[j] = value;
                        saw_year = true;
                    } else {
                        return Err(Error::UnknownParameter(other.to_string()));
                    }
                }
            }
        }
        if saw_age {
            pv.theta_by_age = Some(DVector::from_vec(theta_age));
        }
        if saw_year {
            pv.theta_by_year = Some(DVector::from_vec(theta_year));
        }
        if saw_z {
            pv.z_latents = Some(DVector::from_vec(z));
        }
        pv.validate_for(spec)?;
        if let Some(v) = &pv.theta_by_age {
            if v.iter().any(|x| x.is_nan()) {
                return Err(Error::Data("incomplete theta_by_age block".into()));
            }
        }
        if let Some(v) = &pv.theta_by_year {
            if v.iter().any(|x| x.is_nan()) {
                return Err(Error::Data("incomplete theta_by_year block".into()));
            }
        }
        if let Some(v) = &pv.z_latents {
            if v.iter().any(|x| x.is_nan()) {
                return Err(Error::Data("incomplete latent block".into()));
            }
        }
        Ok(pv)
    }
}

/// Grid of fund log-rates plus, for deflator models, the deflator field
/// satisfying `log_rate = deflator + log m_ref` exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct MortalitySurface {
    pub grid: AgeYearGrid,
    pub log_rates: DMatrix<f64>,
    pub deflators: Option<DMatrix<f64>>,
}

/// One-entry cache for the latent covariance Cholesky. Hyperparameter
/// updates invalidate it; latent-only updates reuse it. One cache per chain,
/// never shared.
#[derive(Debug, Default)]
pub struct GpCholCache {
    key: Option<(u64, u64, u64)>,
    factor: Option<CholeskyFactor>,
}

impl GpCholCache {
    fn key_of(sigma2: f64, phi_ag: f64, phi_yr: f64) -> (u64, u64, u64) {
        (sigma2.to_bits(), phi_ag.to_bits(), phi_yr.to_bits())
    }

    fn get_or_build<F: FnOnce() -> Result<CholeskyFactor>>(
        &mut self,
        sigma2: f64,
        phi_ag: f64,
        phi_yr: f64,
        build: F,
    ) -> Result<&CholeskyFactor> {
        let key = Self::key_of(sigma2, phi_ag, phi_yr);
        if self.key != Some(key) || self.factor.is_none() {
            self.factor = Some(build()?);
            self.key = Some(key);
        }
        Ok(self.factor.as_ref().unwrap())
    }
}

pub(crate) fn latent_points(spec: &ModelSpec) -> Vec<GpInput> {
    match spec.id {
        ModelId::AdGp | ModelId::GpS1 => spec
            .grid
            .ages()
            .iter()
            .map(|&a| GpInput::Age(a as f64))
            .collect(),
        ModelId::TdGp => spec
            .grid
            .years()
            .iter()
            .map(|&y| GpInput::Year(y as f64))
            .collect(),
        ModelId::GpS2 => spec
            .grid
            .cells()
            .map(|(a, y)| GpInput::AgeYear(a as f64, y as f64))
            .collect(),
        _ => Vec::new(),
    }
}

fn latent_kernel(spec: &ModelSpec, params: &ParameterVector) -> Result<KernelSpec> {
    let sigma2 = params.sigma2.expect("validated");
    match spec.id {
        ModelId::AdGp | ModelId::GpS1 => {
            KernelSpec::sq_exp_age(sigma2, params.phi_ag.expect("validated"))
        }
        ModelId::TdGp => KernelSpec::sq_exp_year(sigma2, params.phi_yr.expect("validated")),
        ModelId::GpS2 => KernelSpec::sq_exp_2d(
            sigma2,
            params.phi_ag.expect("validated"),
            params.phi_yr.expect("validated"),
        ),
        _ => unreachable!("no latent kernel for {}", spec.id),
    }
}

pub(crate) fn latent_chol<'c>(
    spec: &ModelSpec,
    params: &ParameterVector,
    cache: &'c mut GpCholCache,
) -> Result<&'c CholeskyFactor> {
    let kernel = latent_kernel(spec, params)?;
    cache.get_or_build(
        params.sigma2.unwrap_or(0.0),
        params.phi_ag.unwrap_or(0.0),
        params.phi_yr.unwrap_or(0.0),
        || cholesky_with_jitter(&build_covariance(&kernel, &latent_points(spec))),
    )
}

/// GP-S mean surfaces: `beta0 + beta_ag (x - 60) [+ beta_yr (t - t0)]`.
fn gp_s_mean(spec: &ModelSpec, params: &ParameterVector, age: f64, year: f64) -> f64 {
    let mut m = params.beta0.expect("validated")
        + params.beta_ag.expect("validated") * (age - CALIBRATION_AGE_PIVOT as f64);
    if spec.id == ModelId::GpS2 {
        m += params.beta_yr.expect("validated") * (year - spec.year_pivot());
    }
    m
}

/// Materialize the per-cell effect: the deflator `theta_{x,t}` for reference
/// models (zero for FD-0), or the log-rate surface `psi` for GP-S models.
pub fn materialize_effect(
    spec: &ModelSpec,
    params: &ParameterVector,
    cache: &mut GpCholCache,
) -> Result<DMatrix<f64>> {
    let (na, ny) = (spec.grid.n_ages(), spec.grid.n_years());
    let broadcast_age = |v: &DVector<f64>| DMatrix::from_fn(na, ny, |i, _| v[i]);
    let broadcast_year = |v: &DVector<f64>| DMatrix::from_fn(na, ny, |_, j| v[j]);
    match spec.id {
        ModelId::Fd0 => Ok(DMatrix::zeros(na, ny)),
        ModelId::Fd1 => Ok(DMatrix::from_element(
            na,
            ny,
            params.scalar_theta.expect("validated"),
        )),
        ModelId::AdFe | ModelId::AdAr => {
            Ok(broadcast_age(params.theta_by_age.as_ref().expect("validated")))
        }
        ModelId::TdAr => Ok(broadcast_year(
            params.theta_by_year.as_ref().expect("validated"),
        )),
        ModelId::AdGp | ModelId::TdGp => {
            let chol = latent_chol(spec, params, cache)?;
            let z = params.z_latents.as_ref().expect("validated");
            let theta = DVector::from_element(z.len(), -0.5) + chol.mul_lower(z);
            if spec.id == ModelId::AdGp {
                Ok(broadcast_age(&theta))
            } else {
                Ok(broadcast_year(&theta))
            }
        }
        ModelId::GpS1 => {
            let chol = latent_chol(spec, params, cache)?;
            let z = params.z_latents.as_ref().expect("validated");
            let mean = DVector::from_fn(na, |i, _| {
                gp_s_mean(spec, params, spec.grid.ages()[i] as f64, spec.year_pivot())
            });
            let psi = mean + chol.mul_lower(z);
            Ok(broadcast_age(&psi))
        }
        ModelId::GpS2 => {
            let chol = latent_chol(spec, params, cache)?;
            let z = params.z_latents.as_ref().expect("validated");
            let lz = chol.mul_lower(z);
            let mut out = DMatrix::zeros(na, ny);
            let mut idx = 0;
            for i in 0..na {
                for j in 0..ny {
                    let mean = gp_s_mean(
                        spec,
                        params,
                        spec.grid.ages()[i] as f64,
                        spec.grid.years()[j] as f64,
                    );
                    out[(i, j)] = mean + lz[idx];
                    idx += 1;
                }
            }
            Ok(out)
        }
    }
}

fn require_reference<'a>(
    spec: &ModelSpec,
    reference: Option<&'a ReferenceTable>,
) -> Result<Option<&'a ReferenceTable>> {
    if spec.id.uses_reference() {
        let r = reference.ok_or_else(|| {
            Error::ModelSpec(format!("{} requires a reference table", spec.id))
        })?;
        r.covers(&spec.grid)?;
        Ok(Some(r))
    } else {
        Ok(None)
    }
}

/// Per-cell additive offsets entering the intensity: `log m_ref + log E` for
/// deflator models, `log E` for GP-S. Zero-exposure cells get `-inf`, which
/// excludes them from the likelihood.
pub fn likelihood_offsets(
    spec: &ModelSpec,
    data: &FundDataset,
    reference: Option<&ReferenceTable>,
) -> Result<DMatrix<f64>> {
    if *data.grid() != spec.grid {
        return Err(Error::GridMismatch(
            "fund grid differs from model grid".into(),
        ));
    }
    let reference = require_reference(spec, reference)?;
    let (na, ny) = (spec.grid.n_ages(), spec.grid.n_years());
    let mut out = DMatrix::zeros(na, ny);
    for (i, &age) in spec.grid.ages().iter().enumerate() {
        for (j, &year) in spec.grid.years().iter().enumerate() {
            let e = data.exposures()[(i, j)];
            out[(i, j)] = if e > 0.0 {
                let mut v = e.ln();
                if let Some(r) = reference {
                    v += r.rate_at(age, year).unwrap().ln();
                }
                v
            } else {
                f64::NEG_INFINITY
            };
        }
    }
    Ok(out)
}

/// Log intensity (expected deaths) per cell; `-inf` marks skipped
/// zero-exposure cells.
pub fn log_intensity(
    spec: &ModelSpec,
    params: &ParameterVector,
    reference: Option<&ReferenceTable>,
    data: &FundDataset,
) -> Result<DMatrix<f64>> {
    params.validate_for(spec)?;
    let offsets = likelihood_offsets(spec, data, reference)?;
    let mut cache = GpCholCache::default();
    let effect = materialize_effect(spec, params, &mut cache)?;
    Ok(effect + offsets)
}

/// Joint log prior of a parameter vector; `-inf` when any bound is violated.
pub fn log_prior(spec: &ModelSpec, params: &ParameterVector) -> f64 {
    if params.validate_for(spec).is_err() {
        return f64::NEG_INFINITY;
    }
    let cat = &spec.prior_catalog;
    let term = |name: &str, value: Option<f64>| -> f64 {
        match value {
            Some(v) => truncnormal_logpdf(v, &cat[name]),
            None => 0.0,
        }
    };
    let mut lp = 0.0;
    macro_rules! add {
        ($name:expr, $value:expr) => {
            lp += term($name, $value);
        };
    }
    match spec.id {
        ModelId::Fd0 => {}
        ModelId::Fd1 => {
            add!("theta", params.scalar_theta);
            add!("omega", params.omega);
        }
        ModelId::AdFe => {
            let prior = &cat["theta"];
            for &t in params.theta_by_age.as_ref().expect("validated").iter() {
                lp += truncnormal_logpdf(t, prior);
            }
            add!("omega", params.omega);
        }
        ModelId::AdAr | ModelId::TdAr => {
            let rho = params.rho.expect("validated");
            match Ar1DeflatorProcess::new(rho) {
                Ok(proc) => {
                    let theta = if spec.id == ModelId::AdAr {
                        params.theta_by_age.as_ref().expect("validated")
                    } else {
                        params.theta_by_year.as_ref().expect("validated")
                    };
                    lp += ar1_logdensity(theta.as_slice(), &proc);
                }
                Err(_) => return f64::NEG_INFINITY,
            }
            add!("rho", params.rho);
            add!("omega", params.omega);
        }
        ModelId::AdGp | ModelId::TdGp | ModelId::GpS1 | ModelId::GpS2 => {
            let z = params.z_latents.as_ref().expect("validated");
            lp += -0.5 * z.dot(z) - 0.5 * z.len() as f64 * LN_2PI;
            add!("omega", params.omega);
            add!("sigma2", params.sigma2);
            if spec.id != ModelId::TdGp {
                add!("phi_ag", params.phi_ag);
            }
            if matches!(spec.id, ModelId::TdGp | ModelId::GpS2) {
                add!("phi_yr", params.phi_yr);
            }
            add!("beta0", params.beta0);
            add!("beta_ag", params.beta_ag);
            add!("beta_yr", params.beta_yr);
        }
    }
    lp
}

/// Negative binomial log likelihood summed over cells with positive exposure.
pub fn log_likelihood(
    spec: &ModelSpec,
    params: &ParameterVector,
    data: &FundDataset,
    reference: Option<&ReferenceTable>,
) -> Result<f64> {
    params.validate_for(spec)?;
    let offsets = likelihood_offsets(spec, data, reference)?;
    let mut cache = GpCholCache::default();
    log_likelihood_with_offsets(spec, params, data, &offsets, &mut cache)
}

/// Fast path used by the sampler: offsets precomputed, Cholesky cached.
pub fn log_likelihood_with_offsets(
    spec: &ModelSpec,
    params: &ParameterVector,
    data: &FundDataset,
    offsets: &DMatrix<f64>,
    cache: &mut GpCholCache,
) -> Result<f64> {
    let effect = materialize_effect(spec, params, cache)?;
    let omega = params.omega.unwrap_or(0.0);
    let mut ll = 0.0;
    for i in 0..spec.grid.n_ages() {
        for j in 0..spec.grid.n_years() {
            let off = offsets[(i, j)];
            if off == f64::NEG_INFINITY {
                continue;
            }
            let mu = (effect[(i, j)] + off).exp();
            let p = NegBinParams {
                mean: mu,
                overdispersion: omega,
            };
            ll += negbin_logpmf(data.deaths()[(i, j)], p);
        }
    }
    Ok(ll)
}

/// Log posterior: prior plus likelihood, with `-inf` short-circuiting.
pub fn log_posterior(
    spec: &ModelSpec,
    params: &ParameterVector,
    data: &FundDataset,
    reference: Option<&ReferenceTable>,
) -> Result<f64> {
    let lp = log_prior(spec, params);
    if lp == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(lp + log_likelihood(spec, params, data, reference)?)
}

/// Materialized deflator and log-rate surface. GP-S models need a comparison
/// reference to express their fitted surface as a deflator.
pub fn deflator_surface(
    spec: &ModelSpec,
    params: &ParameterVector,
    reference: Option<&ReferenceTable>,
) -> Result<MortalitySurface> {
    params.validate_for(spec)?;
    let mut cache = GpCholCache::default();
    let effect = materialize_effect(spec, params, &mut cache)?;
    let reference = if spec.id.uses_reference() {
        Some(require_reference(spec, reference)?.unwrap())
    } else {
        match reference {
            Some(r) => {
                r.covers(&spec.grid)?;
                Some(r)
            }
            None => {
                return Err(Error::ModelSpec(format!(
                    "{}: a comparison reference is required to express deflators",
                    spec.id
                )))
            }
        }
    };
    let r = reference.unwrap();
    let log_ref = DMatrix::from_fn(spec.grid.n_ages(), spec.grid.n_years(), |i, j| {
        r.rate_at(spec.grid.ages()[i], spec.grid.years()[j])
            .unwrap()
            .ln()
    });
    let (log_rates, deflators) = if spec.id.uses_reference() {
        let log_rates = &effect + &log_ref;
        (log_rates, effect)
    } else {
        let deflators = &effect - &log_ref;
        (effect, deflators)
    };
    Ok(MortalitySurface {
        grid: spec.grid.clone(),
        log_rates,
        deflators: Some(deflators),
    })
}

/// Draw an integer death count per cell from the model at fixed parameters.
/// Zero-exposure cells produce zero deaths.
pub fn simulate_fund<R: Rng + ?Sized>(
    spec: &ModelSpec,
    params: &ParameterVector,
    exposures: &DMatrix<f64>,
    reference: Option<&ReferenceTable>,
    rng: &mut R,
) -> Result<FundDataset> {
    params.validate_for(spec)?;
    let zero_deaths = DMatrix::from_element(spec.grid.n_ages(), spec.grid.n_years(), 0u64);
    let skeleton = FundDataset::new(spec.grid.clone(), exposures.clone(), zero_deaths)?;
    let intensity = log_intensity(spec, params, reference, &skeleton)?;
    let omega = params.omega.unwrap_or(0.0);
    let mut deaths = DMatrix::from_element(spec.grid.n_ages(), spec.grid.n_years(), 0u64);
    for i in 0..spec.grid.n_ages() {
        for j in 0..spec.grid.n_years() {
            let li = intensity[(i, j)];
            if li == f64::NEG_INFINITY {
                continue;
            }
            if !li.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite intensity at cell ({i}, {j})"
                )));
            }
            let p = NegBinParams {
                mean: li.exp(),
                overdispersion: omega,
            };
            deaths[(i, j)] = negbin_sample(p, rng);
        }
    }
    FundDataset::new(spec.grid.clone(), exposures.clone(), deaths)
}

/// Per-draw log-rate curves over the model's ages for a target year.
///
/// Age-structured models reuse their deflators against the target-year
/// reference column. TD-AR extends the chain with fresh innovations; TD-GP
/// and GP-S2 extend by GP conditioning on the year axis. Draw `s` uses an
/// rng derived from `(seed, s)`, so output is independent of evaluation
/// order.
pub fn predict_mortality(
    spec: &ModelSpec,
    draws: &[ParameterVector],
    target_year: i32,
    ref_future: Option<&ReferenceTable>,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    if draws.is_empty() {
        return Err(Error::InsufficientData("no posterior draws".into()));
    }
    let ages = spec.grid.ages();
    let na = ages.len();
    let log_ref_col: Option<DVector<f64>> = if spec.id.uses_reference() {
        let r = ref_future.ok_or_else(|| {
            Error::ModelSpec(format!(
                "{} prediction requires a reference covering year {target_year}",
                spec.id
            ))
        })?;
        let mut col = DVector::zeros(na);
        for (i, &age) in ages.iter().enumerate() {
            let rate = r.rate_at(age, target_year).ok_or_else(|| {
                Error::GridMismatch(format!(
                    "future reference missing age {age}, year {target_year}"
                ))
            })?;
            col[i] = rate.ln();
        }
        Some(col)
    } else {
        None
    };
    let in_sample_year = spec.grid.year_index(target_year);
    if in_sample_year.is_none() && target_year < *spec.grid.years().last().unwrap() {
        return Err(Error::Data(format!(
            "target year {target_year} lies before the training span"
        )));
    }

    let mut cache = GpCholCache::default();
    let mut curves = Vec::with_capacity(draws.len());
    for (s, params) in draws.iter().enumerate() {
        params.validate_for(spec)?;
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, DOMAIN_PREDICT, s as u64));
        let effect = materialize_effect(spec, params, &mut cache)?;
        let curve = match spec.id {
            // age-structured and constant deflators carry over unchanged
            ModelId::Fd0 | ModelId::Fd1 | ModelId::AdFe | ModelId::AdAr | ModelId::AdGp => {
                let theta = effect.column(0).clone_owned();
                theta + log_ref_col.as_ref().unwrap()
            }
            ModelId::TdAr => {
                let theta_t = match in_sample_year {
                    Some(j) => effect[(0, j)],
                    None => {
                        let proc = Ar1DeflatorProcess::new(params.rho.expect("validated"))?;
                        let mut t = effect[(0, spec.grid.n_years() - 1)];
                        let last = *spec.grid.years().last().unwrap();
                        let normal = rand_distr::StandardNormal;
                        for _ in last..target_year {
                            let eps: f64 = Distribution::sample(&normal, &mut rng);
                            t = proc.level_mu()
                                + proc.rho() * t
                                + proc.innovation_sd() * eps;
                        }
                        t
                    }
                };
                DVector::from_element(na, theta_t) + log_ref_col.as_ref().unwrap()
            }
            ModelId::TdGp => {
                let theta_t = match in_sample_year {
                    Some(j) => effect[(0, j)],
                    None => {
                        let kernel = latent_kernel(spec, params)?;
                        let train: Vec<GpInput> = spec
                            .grid
                            .years()
                            .iter()
                            .map(|&y| GpInput::Year(y as f64))
                            .collect();
                        let values =
                            DVector::from_fn(spec.grid.n_years(), |j, _| effect[(0, j)]);
                        let (m, v) = gp_condition(
                            &kernel,
                            |_| -0.5,
                            &train,
                            &values,
                            &[GpInput::Year(target_year as f64)],
                        )?;
                        let sd = v[(0, 0)].max(0.0).sqrt();
                        let eps: f64 =
                            Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                        m[0] + sd * eps
                    }
                };
                DVector::from_element(na, theta_t) + log_ref_col.as_ref().unwrap()
            }
            ModelId::GpS1 => effect.column(0).clone_owned(),
            ModelId::GpS2 => match in_sample_year {
                Some(j) => effect.column(j).clone_owned(),
                None => {
                    let kernel = latent_kernel(spec, params)?;
                    let train = latent_points(spec);
                    let values = DVector::from_fn(spec.grid.n_cells(), |idx, _| {
                        effect[(idx / spec.grid.n_years(), idx % spec.grid.n_years())]
                    });
                    let test: Vec<GpInput> = ages
                        .iter()
                        .map(|&a| GpInput::AgeYear(a as f64, target_year as f64))
                        .collect();
                    let (m, cov) = gp_condition(
                        &kernel,
                        |p| match p {
                            GpInput::AgeYear(a, t) => gp_s_mean(spec, params, a, t),
                            _ => unreachable!(),
                        },
                        &train,
                        &values,
                        &test,
                    )?;
                    let chol = cholesky_with_jitter(&cov)?;
                    let normal = rand_distr::StandardNormal;
                    let z = DVector::from_fn(na, |_, _| {
                        Distribution::sample(&normal, &mut rng)
                    });
                    m + chol.mul_lower(&z)
                }
            },
        };
        curves.push(curve);
    }
    Ok(curves)
}
