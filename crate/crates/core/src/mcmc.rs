//! Posterior sampling via adaptive random-walk Metropolis in blocks.
//!
//! Scalar hyperparameters each form their own block, proposed on an
//! unconstrained scale (log for positive parameters, logit for `rho`).
//! Latent vectors are proposed jointly with a scaled identity proposal;
//! AR/fixed-effect deflator vectors additionally get a constant-shift move
//! that targets the slowly-mixing common level. Proposal scales adapt toward
//! the target acceptance rate during burn-in only and are frozen afterwards.
//!
//! Chains draw their rng streams from `(seed, chain index)`, so chains are
//! independent of scheduling and adding chains never perturbs existing ones.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::data::{FundDataset, ReferenceTable};
use crate::error::{Error, Result};
use crate::models::{
    likelihood_offsets, log_likelihood_with_offsets, log_posterior, log_prior, GpCholCache,
    ModelId, ModelSpec, ParameterVector,
};
use crate::parallel::run_indexed;
use crate::seed::{derive_seed, DOMAIN_CHAIN};
use crate::stats::truncnormal_sample;

/// Sampler configuration. Defaults follow the reference protocol: 3 chains
/// of 10,000 iterations, 2,000 burn-in, thinning 20, for 1,200 retained
/// draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub target_acceptance: f64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            chains: 3,
            iterations: 10_000,
            burn_in: 2_000,
            thin: 20,
            seed: 0,
            target_acceptance: 0.30,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(Error::Mcmc("chains must be positive".into()));
        }
        if self.thin == 0 {
            return Err(Error::Mcmc("thin must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Mcmc(format!(
                "burn_in {} must be below iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Mcmc("target acceptance must lie in (0,1)".into()));
        }
        if self.retained_per_chain() == 0 {
            return Err(Error::Mcmc("no draws retained after burn-in/thinning".into()));
        }
        Ok(())
    }

    pub fn retained_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    pub fn total_retained(&self) -> usize {
        self.chains * self.retained_per_chain()
    }
}

/// One retained draw with its chain and iteration provenance.
#[derive(Debug, Clone)]
pub struct Draw {
    pub chain: usize,
    pub iteration: usize,
    pub params: ParameterVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamDiagnostics {
    /// Split-chain potential scale reduction; `None` when the parameter has
    /// zero variance everywhere (undefined).
    pub rhat: Option<f64>,
    pub ess: f64,
}

/// Retained samples with provenance and convergence diagnostics.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub spec: ModelSpec,
    pub draws: Vec<Draw>,
    pub diagnostics: BTreeMap<String, ParamDiagnostics>,
    pub diagnostics_error: Option<String>,
    /// Per chain, per proposal block acceptance rates over the whole run.
    pub acceptance_by_chain: Vec<Vec<f64>>,
}

impl PosteriorDraws {
    pub fn spec_id(&self) -> ModelId {
        self.spec.id
    }

    pub fn params(&self) -> Vec<ParameterVector> {
        self.draws.iter().map(|d| d.params.clone()).collect()
    }

    /// Names of every scalar series, in the stable flattening order.
    pub fn param_names(&self) -> Vec<String> {
        match self.draws.first() {
            Some(d) => d.params.flatten(&self.spec).into_iter().map(|(n, _)| n).collect(),
            None => Vec::new(),
        }
    }

    /// Pooled series for a parameter selector, in draw order.
    pub fn series(&self, selector: &str) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.draws.len());
        for d in &self.draws {
            let flat = d.params.flatten(&self.spec);
            match flat.iter().find(|(n, _)| n == selector) {
                Some((_, v)) => out.push(*v),
                None => return Err(Error::UnknownParameter(selector.to_string())),
            }
        }
        Ok(out)
    }

    /// Long-format serialization: `chain,iter,param,value`.
    pub fn to_long_csv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::from("chain,iter,param,value\n");
        for d in &self.draws {
            for (name, value) in d.params.flatten(&self.spec) {
                let _ = writeln!(out, "{},{},{},{}", d.chain, d.iteration, name, value);
            }
        }
        out
    }

    /// Rebuild draws from the long format; diagnostics are not recomputed.
    pub fn from_long_csv(spec: &ModelSpec, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some("chain,iter,param,value") => {}
            _ => return Err(Error::Data("draws csv header mismatch".into())),
        }
        let mut grouped: BTreeMap<(usize, usize), BTreeMap<String, f64>> = BTreeMap::new();
        for (idx, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.splitn(4, ',').collect();
            if fields.len() != 4 {
                return Err(Error::Data(format!("draws csv line {}: bad field count", idx + 2)));
            }
            let chain: usize = fields[0]
                .parse()
                .map_err(|_| Error::Data(format!("draws csv line {}: bad chain", idx + 2)))?;
            let iter: usize = fields[1]
                .parse()
                .map_err(|_| Error::Data(format!("draws csv line {}: bad iter", idx + 2)))?;
            let value: f64 = fields[3]
                .parse()
                .map_err(|_| Error::Data(format!("draws csv line {}: bad value", idx + 2)))?;
            grouped
                .entry((chain, iter))
                .or_default()
                .insert(fields[2].to_string(), value);
        }
        let mut draws = Vec::with_capacity(grouped.len());
        for ((chain, iteration), named) in grouped {
            draws.push(Draw {
                chain,
                iteration,
                params: ParameterVector::from_named(spec, &named)?,
            });
        }
        Ok(Self {
            spec: spec.clone(),
            draws,
            diagnostics: BTreeMap::new(),
            diagnostics_error: Some("diagnostics not recomputed from csv".into()),
            acceptance_by_chain: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Transform {
    Identity,
    Log,
    Logit,
}

impl Transform {
    fn constrain(&self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Logit => 1.0 / (1.0 + (-u).exp()),
        }
    }

    fn unconstrain(&self, v: f64) -> f64 {
        match self {
            Transform::Identity => v,
            Transform::Log => v.ln(),
            Transform::Logit => (v / (1.0 - v)).ln(),
        }
    }

    fn log_jacobian(&self, u: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => u,
            Transform::Logit => {
                let softplus = |x: f64| {
                    if x > 30.0 {
                        x
                    } else {
                        x.exp().ln_1p()
                    }
                };
                -(softplus(u) + softplus(-u))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ScalarDef {
    name: &'static str,
    transform: Transform,
}

const fn sdef(name: &'static str, transform: Transform) -> ScalarDef {
    ScalarDef { name, transform }
}

fn scalar_defs(id: ModelId) -> &'static [ScalarDef] {
    use Transform::*;
    const FD1: [ScalarDef; 2] = [sdef("theta", Identity), sdef("omega", Log)];
    const ADFE: [ScalarDef; 1] = [sdef("omega", Log)];
    const AR: [ScalarDef; 2] = [sdef("rho", Logit), sdef("omega", Log)];
    const ADGP: [ScalarDef; 3] = [sdef("sigma2", Log), sdef("phi_ag", Log), sdef("omega", Log)];
    const TDGP: [ScalarDef; 3] = [sdef("sigma2", Log), sdef("phi_yr", Log), sdef("omega", Log)];
    const GPS1: [ScalarDef; 5] = [
        sdef("beta0", Identity),
        sdef("beta_ag", Identity),
        sdef("sigma2", Log),
        sdef("phi_ag", Log),
        sdef("omega", Log),
    ];
    const GPS2: [ScalarDef; 7] = [
        sdef("beta0", Identity),
        sdef("beta_ag", Identity),
        sdef("beta_yr", Identity),
        sdef("sigma2", Log),
        sdef("phi_ag", Log),
        sdef("phi_yr", Log),
        sdef("omega", Log),
    ];
    match id {
        ModelId::Fd0 => &[],
        ModelId::Fd1 => &FD1,
        ModelId::AdFe => &ADFE,
        ModelId::AdAr | ModelId::TdAr => &AR,
        ModelId::AdGp => &ADGP,
        ModelId::TdGp => &TDGP,
        ModelId::GpS1 => &GPS1,
        ModelId::GpS2 => &GPS2,
    }
}

/// Latent vectors for fixed-effect and AR deflators live directly in theta
/// space; GP latents are whitened.
fn latent_is_theta_space(id: ModelId) -> bool {
    matches!(id, ModelId::AdFe | ModelId::AdAr | ModelId::TdAr)
}

#[derive(Debug, Clone)]
struct ChainState {
    latent: DVector<f64>,
    scalars: Vec<f64>,
}

fn params_from_state(spec: &ModelSpec, state: &ChainState) -> ParameterVector {
    let mut pv = ParameterVector::default();
    for (def, &u) in scalar_defs(spec.id).iter().zip(&state.scalars) {
        let v = def.transform.constrain(u);
        match def.name {
            "theta" => pv.scalar_theta = Some(v),
            "omega" => pv.omega = Some(v),
            "rho" => pv.rho = Some(v),
            "sigma2" => pv.sigma2 = Some(v),
            "phi_ag" => pv.phi_ag = Some(v),
            "phi_yr" => pv.phi_yr = Some(v),
            "beta0" => pv.beta0 = Some(v),
            "beta_ag" => pv.beta_ag = Some(v),
            "beta_yr" => pv.beta_yr = Some(v),
            other => unreachable!("unknown scalar {other}"),
        }
    }
    if spec.latent_dim() > 0 {
        let latent = state.latent.clone();
        match spec.id {
            ModelId::AdFe | ModelId::AdAr => pv.theta_by_age = Some(latent),
            ModelId::TdAr => pv.theta_by_year = Some(latent),
            _ => pv.z_latents = Some(latent),
        }
    }
    pv
}

fn state_from_params(spec: &ModelSpec, params: &ParameterVector) -> ChainState {
    let scalars = scalar_defs(spec.id)
        .iter()
        .map(|def| {
            let v = match def.name {
                "theta" => params.scalar_theta,
                "omega" => params.omega,
                "rho" => params.rho,
                "sigma2" => params.sigma2,
                "phi_ag" => params.phi_ag,
                "phi_yr" => params.phi_yr,
                "beta0" => params.beta0,
                "beta_ag" => params.beta_ag,
                "beta_yr" => params.beta_yr,
                other => unreachable!("unknown scalar {other}"),
            }
            .expect("parameter present for model");
            def.transform.unconstrain(v)
        })
        .collect();
    let latent = match spec.id {
        ModelId::AdFe | ModelId::AdAr => params.theta_by_age.clone().expect("theta"),
        ModelId::TdAr => params.theta_by_year.clone().expect("theta"),
        _ if spec.latent_dim() > 0 => params.z_latents.clone().expect("latents"),
        _ => DVector::zeros(0),
    };
    ChainState { latent, scalars }
}

fn log_jacobian_total(spec: &ModelSpec, state: &ChainState) -> f64 {
    scalar_defs(spec.id)
        .iter()
        .zip(&state.scalars)
        .map(|(def, &u)| def.transform.log_jacobian(u))
        .sum()
}

/// Draw a starting point from the priors; whitened latents start standard
/// normal and AR vectors are forward-simulated from their process.
pub fn initialize_chain<R: Rng + ?Sized>(
    spec: &ModelSpec,
    data: &FundDataset,
    reference: Option<&ReferenceTable>,
    rng: &mut R,
) -> Result<ParameterVector> {
    const MAX_RETRIES: usize = 100;
    for _ in 0..MAX_RETRIES {
        let params = draw_from_priors(spec, rng);
        let lp = log_posterior(spec, &params, data, reference)?;
        if lp.is_finite() {
            return Ok(params);
        }
    }
    Err(Error::Mcmc(format!(
        "{}: no finite posterior after {MAX_RETRIES} initialization attempts",
        spec.id
    )))
}

fn draw_from_priors<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> ParameterVector {
    let mut pv = ParameterVector::default();
    let cat = &spec.prior_catalog;
    let normal = rand_distr::StandardNormal;
    for def in scalar_defs(spec.id) {
        let v = truncnormal_sample(&cat[def.name], rng);
        match def.name {
            "theta" => pv.scalar_theta = Some(v),
            "omega" => pv.omega = Some(v),
            "rho" => pv.rho = Some(v),
            "sigma2" => pv.sigma2 = Some(v),
            "phi_ag" => pv.phi_ag = Some(v),
            "phi_yr" => pv.phi_yr = Some(v),
            "beta0" => pv.beta0 = Some(v),
            "beta_ag" => pv.beta_ag = Some(v),
            "beta_yr" => pv.beta_yr = Some(v),
            other => unreachable!("unknown scalar {other}"),
        }
    }
    let dim = spec.latent_dim();
    if dim > 0 {
        match spec.id {
            ModelId::AdFe => {
                let prior = &cat["theta"];
                pv.theta_by_age =
                    Some(DVector::from_fn(dim, |_, _| truncnormal_sample(prior, rng)));
            }
            ModelId::AdAr | ModelId::TdAr => {
                let rho = pv.rho.expect("sampled above");
                let proc = crate::stats::Ar1DeflatorProcess::new(rho).expect("rho in (0,1)");
                let mut theta = DVector::zeros(dim);
                let first: f64 = Distribution::sample(&normal, rng);
                theta[0] = -0.5 + 0.5 * first;
                for i in 1..dim {
                    let eps: f64 = Distribution::sample(&normal, rng);
                    theta[i] =
                        proc.level_mu() + proc.rho() * theta[i - 1] + proc.innovation_sd() * eps;
                }
                if spec.id == ModelId::AdAr {
                    pv.theta_by_age = Some(theta);
                } else {
                    pv.theta_by_year = Some(theta);
                }
            }
            _ => {
                pv.z_latents = Some(DVector::from_fn(dim, |_, _| {
                    Distribution::sample(&normal, rng)
                }));
            }
        }
    }
    pv
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BlockKind {
    LatentJoint,
    LatentShift,
    LatentSite(usize),
    Scalar(usize),
    /// Coupled move for GP-S mean coefficients: shift the coefficient and
    /// compensate the whitened latents so the materialized surface is
    /// unchanged. Travels the prior ridge the likelihood cannot see.
    MeanRidge(usize),
}

pub(crate) struct ChainRun {
    pub(crate) retained: Vec<(usize, ParameterVector)>,
    // read by the adaptation-freeze test
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) scales_at_burnin: Vec<f64>,
    #[cfg_attr(not(test), allow(dead_code))]
    pub(crate) scales_final: Vec<f64>,
    pub(crate) acceptance_rates: Vec<f64>,
}

fn chain_blocks(spec: &ModelSpec) -> Vec<BlockKind> {
    let mut blocks = Vec::new();
    if spec.latent_dim() > 0 {
        blocks.push(BlockKind::LatentJoint);
        if latent_is_theta_space(spec.id) {
            // single-site scans keep AR-coupled deflator vectors mixing
            blocks.push(BlockKind::LatentShift);
            for i in 0..spec.latent_dim() {
                blocks.push(BlockKind::LatentSite(i));
            }
        }
    }
    for (i, def) in scalar_defs(spec.id).iter().enumerate() {
        blocks.push(BlockKind::Scalar(i));
        if def.name.starts_with("beta") {
            blocks.push(BlockKind::MeanRidge(i));
        }
    }
    blocks
}

/// Direction of the mean-coefficient ridge at the latent points.
fn ridge_profile(spec: &ModelSpec, name: &str) -> DVector<f64> {
    let pts = crate::models::latent_points(spec);
    DVector::from_fn(pts.len(), |i, _| match (name, pts[i]) {
        ("beta0", _) => 1.0,
        ("beta_ag", crate::gp::GpInput::Age(a)) => a - 60.0,
        ("beta_ag", crate::gp::GpInput::AgeYear(a, _)) => a - 60.0,
        ("beta_yr", crate::gp::GpInput::AgeYear(_, t)) => t - spec.year_pivot(),
        _ => unreachable!("no ridge profile for {name}"),
    })
}

fn target_value(
    spec: &ModelSpec,
    state: &ChainState,
    data: &FundDataset,
    offsets: &nalgebra::DMatrix<f64>,
    cache: &mut GpCholCache,
) -> f64 {
    let params = params_from_state(spec, state);
    let lp = log_prior(spec, &params);
    if lp == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let jac = log_jacobian_total(spec, state);
    match log_likelihood_with_offsets(spec, &params, data, offsets, cache) {
        Ok(ll) if ll.is_finite() => lp + jac + ll,
        _ => f64::NEG_INFINITY,
    }
}

fn run_chain(
    spec: &ModelSpec,
    data: &FundDataset,
    reference: Option<&ReferenceTable>,
    offsets: &nalgebra::DMatrix<f64>,
    config: &McmcConfig,
    chain_idx: usize,
) -> Result<ChainRun> {
    let mut rng =
        ChaCha12Rng::seed_from_u64(derive_seed(config.seed, DOMAIN_CHAIN, chain_idx as u64));
    let init = initialize_chain(spec, data, reference, &mut rng)?;
    let mut state = state_from_params(spec, &init);
    let mut cache = GpCholCache::default();
    let mut current = target_value(spec, &state, data, offsets, &mut cache);
    if current == f64::NEG_INFINITY {
        return Err(Error::Mcmc("initial state has non-finite target".into()));
    }

    let blocks = chain_blocks(spec);
    let n_blocks = blocks.len();
    let mut log_scales: Vec<f64> = blocks
        .iter()
        .map(|b| match b {
            BlockKind::LatentJoint => (0.1f64).ln(),
            BlockKind::LatentShift => (0.1f64).ln(),
            BlockKind::LatentSite(_) => (0.25f64).ln(),
            BlockKind::Scalar(_) => (0.25f64).ln(),
            BlockKind::MeanRidge(_) => (0.25f64).ln(),
        })
        .collect();
    let mut accept_counts = vec![0usize; n_blocks];
    let mut proposal_counts = vec![0usize; n_blocks];
    let mut scales_at_burnin = Vec::new();
    let normal = rand_distr::StandardNormal;

    // single-site moves touch one age row (AD) or year column (TD); their
    // likelihood change is computed on the affected cells only
    let site_is_row = matches!(spec.id, ModelId::AdFe | ModelId::AdAr);
    let omega_slot = scalar_defs(spec.id).iter().position(|d| d.name == "omega");
    let site_ll = |site: usize, theta: f64, state: &ChainState| -> f64 {
        let omega = omega_slot
            .map(|k| scalar_defs(spec.id)[k].transform.constrain(state.scalars[k]))
            .unwrap_or(0.0);
        let mut acc = 0.0;
        let (na, ny) = (spec.grid.n_ages(), spec.grid.n_years());
        let cells: Box<dyn Iterator<Item = (usize, usize)>> = if site_is_row {
            Box::new((0..ny).map(move |j| (site, j)))
        } else {
            Box::new((0..na).map(move |i| (i, site)))
        };
        for (i, j) in cells {
            let off = offsets[(i, j)];
            if off == f64::NEG_INFINITY {
                continue;
            }
            acc += crate::stats::negbin_logpmf(
                data.deaths()[(i, j)],
                crate::stats::NegBinParams {
                    mean: (theta + off).exp(),
                    overdispersion: omega,
                },
            );
        }
        acc
    };

    let mut retained = Vec::with_capacity(config.retained_per_chain());
    for iteration in 1..=config.iterations {
        for (b, block) in blocks.iter().enumerate() {
            let scale = log_scales[b].exp();
            let mut proposal = state.clone();
            let proposed = match block {
                BlockKind::LatentJoint => {
                    for v in proposal.latent.iter_mut() {
                        let eps: f64 = Distribution::sample(&normal, &mut rng);
                        *v += scale * eps;
                    }
                    target_value(spec, &proposal, data, offsets, &mut cache)
                }
                BlockKind::LatentShift => {
                    let eps: f64 = Distribution::sample(&normal, &mut rng);
                    let shift = scale * eps;
                    for v in proposal.latent.iter_mut() {
                        *v += shift;
                    }
                    target_value(spec, &proposal, data, offsets, &mut cache)
                }
                BlockKind::LatentSite(i) => {
                    let eps: f64 = Distribution::sample(&normal, &mut rng);
                    let old = state.latent[*i];
                    proposal.latent[*i] = old + scale * eps;
                    let dprior = log_prior(spec, &params_from_state(spec, &proposal))
                        - log_prior(spec, &params_from_state(spec, &state));
                    if dprior == f64::NEG_INFINITY {
                        f64::NEG_INFINITY
                    } else {
                        let dll = site_ll(*i, proposal.latent[*i], &state)
                            - site_ll(*i, old, &state);
                        current + dprior + dll
                    }
                }
                BlockKind::Scalar(i) => {
                    let eps: f64 = Distribution::sample(&normal, &mut rng);
                    proposal.scalars[*i] += scale * eps;
                    target_value(spec, &proposal, data, offsets, &mut cache)
                }
                BlockKind::MeanRidge(i) => {
                    let eps: f64 = Distribution::sample(&normal, &mut rng);
                    let delta = scale * eps;
                    let name = scalar_defs(spec.id)[*i].name;
                    let params = params_from_state(spec, &state);
                    match crate::models::latent_chol(spec, &params, &mut cache) {
                        Ok(chol) => {
                            let w = chol.solve_lower(&ridge_profile(spec, name));
                            proposal.scalars[*i] += delta;
                            proposal.latent -= w * delta;
                            target_value(spec, &proposal, data, offsets, &mut cache)
                        }
                        Err(_) => f64::NEG_INFINITY,
                    }
                }
            };
            let log_alpha = proposed - current;
            let alpha = if log_alpha >= 0.0 {
                1.0
            } else {
                log_alpha.exp()
            };
            proposal_counts[b] += 1;
            let u: f64 = rng.random();
            if u < alpha {
                state = proposal;
                current = proposed;
                accept_counts[b] += 1;
            }
            if iteration <= config.burn_in {
                // Robbins-Monro step toward the target acceptance rate
                let gamma = (iteration as f64 + 10.0).powf(-0.6);
                log_scales[b] += gamma * (alpha - config.target_acceptance);
                log_scales[b] = log_scales[b].clamp((1e-8f64).ln(), (1e3f64).ln());
            }
        }
        if iteration == config.burn_in {
            scales_at_burnin = log_scales.clone();
        }
        if iteration > config.burn_in && (iteration - config.burn_in) % config.thin == 0 {
            retained.push((iteration, params_from_state(spec, &state)));
        }
    }
    Ok(ChainRun {
        retained,
        scales_at_burnin,
        scales_final: log_scales,
        acceptance_rates: accept_counts
            .iter()
            .zip(&proposal_counts)
            .map(|(&a, &p)| a as f64 / p.max(1) as f64)
            .collect(),
    })
}

/// Run the sampler with one worker per chain.
pub fn run_mcmc(
    spec: &ModelSpec,
    data: &FundDataset,
    reference: Option<&ReferenceTable>,
    config: &McmcConfig,
) -> Result<PosteriorDraws> {
    run_mcmc_with_threads(spec, data, reference, config, config.chains)
}

/// Run the sampler with an explicit worker-thread cap. Results are bitwise
/// identical for any cap.
pub fn run_mcmc_with_threads(
    spec: &ModelSpec,
    data: &FundDataset,
    reference: Option<&ReferenceTable>,
    config: &McmcConfig,
    threads: usize,
) -> Result<PosteriorDraws> {
    config.validate()?;
    if spec.id.uses_reference() {
        // surface coverage problems before spawning chains
        likelihood_offsets(spec, data, reference)?;
    }
    let offsets = likelihood_offsets(spec, data, reference)?;
    let runs: Vec<Result<ChainRun>> = run_indexed(config.chains, threads, |chain_idx| {
        run_chain(spec, data, reference, &offsets, config, chain_idx)
    });
    let mut draws = Vec::with_capacity(config.total_retained());
    let mut acceptance_by_chain = Vec::with_capacity(config.chains);
    for (chain_idx, run) in runs.into_iter().enumerate() {
        let run = run?;
        acceptance_by_chain.push(run.acceptance_rates);
        for (iteration, params) in run.retained {
            params.validate_for(spec)?;
            draws.push(Draw {
                chain: chain_idx,
                iteration,
                params,
            });
        }
    }
    let mut out = PosteriorDraws {
        spec: spec.clone(),
        draws,
        diagnostics: BTreeMap::new(),
        diagnostics_error: None,
        acceptance_by_chain,
    };
    match compute_diagnostics(&out) {
        Ok(d) => out.diagnostics = d,
        Err(e) => out.diagnostics_error = Some(format!("{e}")),
    }
    Ok(out)
}

/// Split-chain R-hat and effective sample size for every scalar series.
pub fn compute_diagnostics(
    draws: &PosteriorDraws,
) -> Result<BTreeMap<String, ParamDiagnostics>> {
    let mut by_chain: BTreeMap<usize, Vec<&ParameterVector>> = BTreeMap::new();
    for d in &draws.draws {
        by_chain.entry(d.chain).or_default().push(&d.params);
    }
    if by_chain.len() < 2 {
        return Err(Error::InsufficientData(
            "diagnostics need at least 2 chains".into(),
        ));
    }
    let min_len = by_chain.values().map(|v| v.len()).min().unwrap_or(0);
    if min_len < 50 {
        return Err(Error::InsufficientData(format!(
            "diagnostics need at least 50 retained draws per chain, got {min_len}"
        )));
    }
    let names = draws.param_names();
    let mut out = BTreeMap::new();
    for name in names {
        let chains: Vec<Vec<f64>> = by_chain
            .values()
            .map(|params| {
                params
                    .iter()
                    .map(|p| {
                        p.flatten(&draws.spec)
                            .into_iter()
                            .find(|(n, _)| n == &name)
                            .map(|(_, v)| v)
                            .expect("uniform parameter layout")
                    })
                    .collect()
            })
            .collect();
        let rhat = split_rhat(&chains);
        let ess = effective_sample_size(&chains);
        out.insert(name, ParamDiagnostics { rhat, ess });
    }
    Ok(out)
}

/// Split-chain potential scale reduction factor. Each chain is halved, so
/// within-chain drift inflates the estimate.
pub fn split_rhat(chains: &[Vec<f64>]) -> Option<f64> {
    let mut halves: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let n = c.len() / 2;
        if n == 0 {
            return None;
        }
        halves.push(&c[..n]);
        halves.push(&c[n..2 * n]);
    }
    let m = halves.len() as f64;
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves
        .iter()
        .map(|h| h.iter().sum::<f64>() / h.len() as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = if halves[0].len() < 2 {
        0.0
    } else {
        n / (m - 1.0) * means.iter().map(|&mu| (mu - grand).powi(2)).sum::<f64>()
    };
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, &mu)| {
            h.iter().map(|&x| (x - mu).powi(2)).sum::<f64>() / (h.len() as f64 - 1.0)
        })
        .sum::<f64>()
        / m;
    if w == 0.0 {
        if b == 0.0 {
            return None; // zero variance everywhere: undefined
        }
        return Some(f64::INFINITY);
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    Some((var_plus / w).sqrt())
}

/// Sum over chains of the Geyer initial-positive-sequence ESS.
pub fn effective_sample_size(chains: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut cap = 0.0;
    for chain in chains {
        let n = chain.len();
        cap += n as f64;
        if n < 4 {
            total += 1.0;
            continue;
        }
        let mean = chain.iter().sum::<f64>() / n as f64;
        let gamma = |t: usize| -> f64 {
            (0..n - t)
                .map(|i| (chain[i] - mean) * (chain[i + t] - mean))
                .sum::<f64>()
                / n as f64
        };
        let g0 = gamma(0);
        if g0 == 0.0 {
            total += 1.0;
            continue;
        }
        let mut tau = 1.0;
        let mut prev_pair = f64::INFINITY;
        let mut t = 1;
        while t + 1 < n {
            let pair = (gamma(t) + gamma(t + 1)) / g0;
            if pair <= 0.0 {
                break;
            }
            let pair = pair.min(prev_pair); // enforce monotone decay
            tau += 2.0 * pair;
            prev_pair = pair;
            t += 2;
        }
        total += (n as f64 / tau).min(n as f64).max(1.0);
    }
    total.min(cap)
}

/// Posterior mean with equal-tailed 50% and 90% credible intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub mean: f64,
    pub lo50: f64,
    pub hi50: f64,
    pub lo90: f64,
    pub hi90: f64,
}

/// Linear-interpolation quantile on order statistics (the widely used
/// "type 7" rule: h = (n-1)p).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn posterior_summary(draws: &PosteriorDraws, selector: &str) -> Result<ParamSummary> {
    let mut series = draws.series(selector)?;
    if series.is_empty() {
        return Err(Error::InsufficientData("no draws".into()));
    }
    let mean = series.iter().sum::<f64>() / series.len() as f64;
    series.sort_by(|a, b| a.partial_cmp(b).unwrap());
    Ok(ParamSummary {
        mean,
        lo50: quantile(&series, 0.25),
        hi50: quantile(&series, 0.75),
        lo90: quantile(&series, 0.05),
        hi90: quantile(&series, 0.95),
    })
}

/// Monte Carlo standard error of the posterior mean, from the ESS.
pub fn mcse_mean(draws: &PosteriorDraws, selector: &str) -> Result<f64> {
    let series = draws.series(selector)?;
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let ess = match draws.diagnostics.get(selector) {
        Some(d) => d.ess,
        None => {
            let mut by_chain: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
            for d in &draws.draws {
                let flat = d.params.flatten(&draws.spec);
                let v = flat
                    .iter()
                    .find(|(nm, _)| nm == selector)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| Error::UnknownParameter(selector.to_string()))?;
                by_chain.entry(d.chain).or_default().push(v);
            }
            let chains: Vec<Vec<f64>> = by_chain.into_values().collect();
            effective_sample_size(&chains)
        }
    };
    Ok((var / ess.max(1.0)).sqrt())
}

/// Quadrature grid for the FD-1 validation oracle.
#[derive(Debug, Clone, Copy)]
pub struct Fd1GridSpec {
    pub theta_lo: f64,
    pub theta_hi: f64,
    pub omega_lo: f64,
    pub omega_hi: f64,
    pub n_theta: usize,
    pub n_omega: usize,
}

impl Default for Fd1GridSpec {
    fn default() -> Self {
        Self {
            theta_lo: -3.0,
            theta_hi: 1.0,
            omega_lo: 0.0,
            omega_hi: 3.0,
            n_theta: 201,
            n_omega: 201,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Fd1GridPosterior {
    pub mean_theta: f64,
    pub mean_omega: f64,
    pub log_normalizer: f64,
    pub edge_mass_fraction: f64,
}

/// Trapezoidal quadrature of the FD-1 posterior over a bounded (theta, omega)
/// box, an independent check on the sampler.
pub fn grid_posterior_fd1(
    spec: &ModelSpec,
    data: &FundDataset,
    reference: Option<&ReferenceTable>,
    grid: &Fd1GridSpec,
) -> Result<Fd1GridPosterior> {
    if spec.id != ModelId::Fd1 {
        return Err(Error::ModelSpec("quadrature oracle is FD-1 only".into()));
    }
    if grid.n_theta < 200 || grid.n_omega < 200 {
        return Err(Error::Data("quadrature grid needs at least 200 nodes per axis".into()));
    }
    let offsets = likelihood_offsets(spec, data, reference)?;
    let h_theta = (grid.theta_hi - grid.theta_lo) / (grid.n_theta - 1) as f64;
    let h_omega = (grid.omega_hi - grid.omega_lo) / (grid.n_omega - 1) as f64;
    let mut cache = GpCholCache::default();

    let mut log_values = vec![f64::NEG_INFINITY; grid.n_theta * grid.n_omega];
    let mut max_lp = f64::NEG_INFINITY;
    for i in 0..grid.n_theta {
        let theta = grid.theta_lo + i as f64 * h_theta;
        for j in 0..grid.n_omega {
            let mut omega = grid.omega_lo + j as f64 * h_omega;
            if omega == 0.0 {
                // open-interval prior: evaluate the right limit at the boundary
                omega = 1e-12;
            }
            let params = ParameterVector {
                scalar_theta: Some(theta),
                omega: Some(omega),
                ..Default::default()
            };
            let lp = log_prior(spec, &params);
            let lp = if lp == f64::NEG_INFINITY {
                lp
            } else {
                lp + log_likelihood_with_offsets(spec, &params, data, &offsets, &mut cache)?
            };
            log_values[i * grid.n_omega + j] = lp;
            if lp > max_lp {
                max_lp = lp;
            }
        }
    }
    if !max_lp.is_finite() {
        return Err(Error::Data("posterior is degenerate on the whole grid".into()));
    }

    let weight = |idx: usize, n: usize| if idx == 0 || idx == n - 1 { 0.5 } else { 1.0 };
    let (mut z, mut sum_theta, mut sum_omega) = (0.0, 0.0, 0.0);
    // per-edge masses: theta_lo, theta_hi, omega_lo, omega_hi
    let mut edges = [0.0f64; 4];
    for i in 0..grid.n_theta {
        let theta = grid.theta_lo + i as f64 * h_theta;
        for j in 0..grid.n_omega {
            let omega = grid.omega_lo + j as f64 * h_omega;
            let q = weight(i, grid.n_theta)
                * weight(j, grid.n_omega)
                * (log_values[i * grid.n_omega + j] - max_lp).exp();
            z += q;
            sum_theta += q * theta;
            sum_omega += q * omega;
            if i == 0 {
                edges[0] += q;
            }
            if i == grid.n_theta - 1 {
                edges[1] += q;
            }
            if j == 0 {
                edges[2] += q;
            }
            if j == grid.n_omega - 1 {
                edges[3] += q;
            }
        }
    }
    // omega_lo == 0 coincides with the prior's own support boundary; mass
    // sitting there is not escaping the box
    if grid.omega_lo == 0.0 {
        edges[2] = 0.0;
    }
    let edge_mass_fraction = edges.iter().fold(0.0f64, |m, &e| m.max(e)) / z;
    if edge_mass_fraction > 1e-4 {
        return Err(Error::Data(format!(
            "quadrature grid too small: edge mass fraction {edge_mass_fraction:.2e}"
        )));
    }
    Ok(Fd1GridPosterior {
        mean_theta: sum_theta / z,
        mean_omega: sum_omega / z,
        log_normalizer: max_lp + (z * h_theta * h_omega).ln(),
        edge_mass_fraction,
    })
}
