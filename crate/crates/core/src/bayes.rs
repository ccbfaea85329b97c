//! Two-step posterior sampling for the population mean.
//!
//! The sampler treats the design-weighted slope estimate as data: the
//! working likelihood is the asymptotic normal law `N(beta1_hat, V11)`,
//! combined with a flat, Laplace, or horseshoe prior on the slopes. Each
//! sweep draws a slope vector from its conditional posterior, then draws
//! the population mean from `N(regression estimate, variance estimate)`
//! evaluated at that slope vector. Under the flat prior the slope draws
//! are independent; the shrinkage priors run a Gibbs chain over the usual
//! scale-mixture representations:
//!
//! * Laplace: `beta_k | tau_k ~ N(0, tau_k^2)`, `tau_k^2 ~ Exp(lambda^2/2)`,
//!   `lambda^2 ~ Gamma(a, b)`; the local scales update through an
//!   inverse-Gaussian draw for `1/tau_k^2` with mean `lambda / |beta_k|`
//!   and shape `lambda^2`.
//! * Horseshoe: `beta_k | u_k ~ N(0, lambda^2 u_k^2)` with half-Cauchy
//!   `u_k` and `lambda`, expanded with inverse-gamma auxiliaries
//!   `xi_k` and `gamma`.
//!
//! Credible intervals are equal-tailed empirical quantiles with linear
//! interpolation between order statistics.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, InverseGaussian, Normal};
use serde::{Deserialize, Serialize};

use crate::error::SvyError;
use crate::regfit::RegressionFit;
use crate::survey::{greg_mean, variance_e, AuxTotals, Sample};
use crate::Result;

/// Floor applied to |beta| in local-scale updates to avoid division by zero.
const BETA_FLOOR: f64 = 1e-12;
/// Clamp for rate/scale parameters of the auxiliary draws.
const RATE_MIN: f64 = 1e-300;
const RATE_MAX: f64 = 1e300;

/// Prior on the slope block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PriorSpec {
    Flat,
    /// Laplace (double-exponential) slopes with a Gamma(a, b) prior on the
    /// squared rate.
    Laplace { a: f64, b: f64 },
    Horseshoe,
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if let PriorSpec::Laplace { a, b } = self {
            if !(a.is_finite() && *a > 0.0 && b.is_finite() && *b > 0.0) {
                return Err(SvyError::invalid("Laplace hyperparameters must be positive"));
            }
        }
        Ok(())
    }
}

/// Chain settings; `seed` drives every draw of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub n_draws: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub thin: usize,
}

impl McmcConfig {
    pub fn new(n_draws: usize, burn_in: usize, seed: u64) -> Self {
        Self { n_draws, burn_in, seed, thin: 1 }
    }

    fn validate(&self) -> Result<()> {
        if self.n_draws == 0 {
            return Err(SvyError::invalid("need at least one retained draw"));
        }
        if self.thin == 0 {
            return Err(SvyError::invalid("thinning interval must be at least 1"));
        }
        Ok(())
    }
}

/// Current state of a shrinkage chain. `scale2` holds the Laplace local
/// variances `tau_k^2` or the horseshoe local scales `u_k^2`; `xi` and
/// `gamma_aux` are the horseshoe auxiliaries (unused by the Laplace chain).
#[derive(Debug, Clone)]
pub struct McmcState {
    pub beta: DVector<f64>,
    pub lambda2: f64,
    pub scale2: DVector<f64>,
    pub xi: DVector<f64>,
    pub gamma_aux: f64,
}

impl McmcState {
    /// Laplace chain start: slopes at the estimate, unit local scales,
    /// rate at its prior mean.
    pub fn init_laplace(beta: DVector<f64>, a: f64, b: f64) -> Self {
        let p = beta.len();
        Self {
            beta,
            lambda2: a / b,
            scale2: DVector::from_element(p, 1.0),
            xi: DVector::zeros(0),
            gamma_aux: 1.0,
        }
    }

    /// Horseshoe chain start: unit scales everywhere.
    pub fn init_horseshoe(beta: DVector<f64>) -> Self {
        let p = beta.len();
        Self {
            beta,
            lambda2: 1.0,
            scale2: DVector::from_element(p, 1.0),
            xi: DVector::from_element(p, 1.0),
            gamma_aux: 1.0,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let ok = self.beta.iter().all(|v| v.is_finite())
            && self.lambda2.is_finite()
            && self.lambda2 > 0.0
            && self.scale2.iter().all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(SvyError::Numerical("MCMC state left the positive finite region".into()))
        }
    }
}

/// Retained draws of a posterior run.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    /// One row per retained draw.
    pub beta: DMatrix<f64>,
    /// Global shrinkage draws (`lambda`, not squared); empty for flat runs.
    pub lambda: Vec<f64>,
    pub ybar: Vec<f64>,
    pub config: McmcConfig,
}

impl PosteriorDraws {
    fn validate(self) -> Result<Self> {
        if self.beta.nrows() != self.ybar.len() {
            return Err(SvyError::dim("draw matrices disagree on the number of draws"));
        }
        if self.beta.iter().any(|v| !v.is_finite())
            || self.ybar.iter().any(|v| !v.is_finite())
            || self.lambda.iter().any(|v| !v.is_finite())
        {
            return Err(SvyError::Numerical("posterior draws contain non-finite values".into()));
        }
        Ok(self)
    }
}

// ---------------------------------------------------------------------------
// Normal working likelihood
// ---------------------------------------------------------------------------

/// Jittered normal summary `(center, cov)` of an estimator, with the
/// precision pieces the conditional draws need. The first `flat_len`
/// coordinates are treated as unpenalized when a shrinkage prior applies
/// to the rest (used by the nonlinear chain, where the intercept stays flat).
#[derive(Debug, Clone)]
pub(crate) struct NormalApprox {
    pub center: DVector<f64>,
    pub prec: DMatrix<f64>,
    pub prec_center: DVector<f64>,
    cov_l: DMatrix<f64>,
    pub flat_len: usize,
    #[allow(dead_code)]
    pub jitter: f64,
}

impl NormalApprox {
    /// Apply the jitter policy and precompute factors. A ridge of
    /// `1e-8 * mean diagonal scale` is added when the smallest eigenvalue
    /// falls below `1e-10` of that scale; an absolute `1e-12` handles the
    /// all-zero matrix.
    pub(crate) fn new(center: DVector<f64>, cov: DMatrix<f64>, flat_len: usize) -> Result<Self> {
        let dim = center.len();
        if cov.nrows() != dim || cov.ncols() != dim {
            return Err(SvyError::dim("covariance does not match the estimate dimension"));
        }
        let mut cov = cov;
        let scale = cov.trace() / dim as f64;
        let eig = cov.clone().symmetric_eigen();
        let min_eig = eig.eigenvalues.min();
        let mut jitter = 0.0;
        if scale <= 0.0 {
            jitter = 1e-12;
        } else if min_eig < 1e-10 * scale {
            jitter = 1e-8 * scale;
        }
        if jitter > 0.0 {
            for d in 0..dim {
                cov[(d, d)] += jitter;
            }
        }
        let chol = nalgebra::Cholesky::new(cov.clone()).ok_or_else(|| {
            SvyError::Numerical("covariance is not positive definite after jitter".into())
        })?;
        let prec = chol.inverse();
        let prec_center = &prec * &center;
        Ok(Self { center, prec, prec_center, cov_l: chol.l(), flat_len, jitter })
    }

    pub(crate) fn from_fit(fit: &RegressionFit) -> Result<Self> {
        Self::new(fit.beta1.clone(), fit.vbeta11(), 0)
    }

    pub(crate) fn dim(&self) -> usize {
        self.center.len()
    }

    pub(crate) fn shrunk_len(&self) -> usize {
        self.dim() - self.flat_len
    }

    /// Independent draw from `N(center, cov)`.
    pub(crate) fn draw_flat(&self, rng: &mut ChaCha8Rng) -> DVector<f64> {
        let z = standard_normal_vector(self.dim(), rng);
        &self.center + &self.cov_l * z
    }

    /// Draw from the conditional `N(A^{-1} P c, A^{-1})` with
    /// `A = P + diag(0_flat, prior_prec)`.
    pub(crate) fn draw_conditional(
        &self,
        prior_prec: &[f64],
        rng: &mut ChaCha8Rng,
    ) -> Result<DVector<f64>> {
        debug_assert_eq!(prior_prec.len(), self.shrunk_len());
        let mut a = self.prec.clone();
        for (k, &q) in prior_prec.iter().enumerate() {
            let d = self.flat_len + k;
            a[(d, d)] += q;
        }
        let chol = nalgebra::Cholesky::new(a).ok_or_else(|| {
            SvyError::Numerical("conditional precision is not positive definite".into())
        })?;
        let mean = chol.solve(&self.prec_center);
        let z = standard_normal_vector(self.dim(), rng);
        // x = mean + L^{-T} z has covariance A^{-1}.
        let l = chol.l();
        let shift = l
            .tr_solve_lower_triangular(&z)
            .ok_or_else(|| SvyError::Numerical("triangular solve failed".into()))?;
        Ok(mean + shift)
    }
}

fn standard_normal_vector(dim: usize, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    DVector::from_fn(dim, |_, _| normal.sample(rng))
}

// ---------------------------------------------------------------------------
// Conditional updates
// ---------------------------------------------------------------------------

fn clamp_rate(r: f64) -> f64 {
    r.clamp(RATE_MIN, RATE_MAX)
}

fn draw_inv_gamma(shape: f64, rate: f64, rng: &mut ChaCha8Rng) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / clamp_rate(rate))
        .map_err(|e| SvyError::Numerical(format!("gamma draw failed: {e}")))?
        .sample(rng);
    Ok((1.0 / g).clamp(RATE_MIN, RATE_MAX))
}

/// Local-scale update of the Laplace chain: `1/tau_k^2` is inverse-Gaussian
/// with mean `sqrt(lambda^2 / beta_k^2)` and shape `lambda^2`.
pub(crate) fn update_scales_laplace(
    state: &mut McmcState,
    shrunk: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let lambda = state.lambda2.sqrt();
    for (k, &bk) in shrunk.iter().enumerate() {
        let mag = bk.abs().max(BETA_FLOOR);
        let mean = lambda / mag;
        let ig = InverseGaussian::new(mean, state.lambda2)
            .map_err(|e| SvyError::Numerical(format!("inverse-Gaussian draw failed: {e}")))?;
        let inv_tau2: f64 = ig.sample(rng);
        state.scale2[k] = (1.0 / inv_tau2).clamp(RATE_MIN, RATE_MAX);
    }
    Ok(())
}

/// Rate update of the Laplace chain:
/// `lambda^2 ~ Gamma(a + p, b + sum tau^2 / 2)`.
pub(crate) fn update_lambda2_laplace(
    state: &mut McmcState,
    a: f64,
    b: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let p = state.scale2.len() as f64;
    let rate = b + 0.5 * state.scale2.sum();
    let g = Gamma::new(a + p, 1.0 / clamp_rate(rate))
        .map_err(|e| SvyError::Numerical(format!("gamma draw failed: {e}")))?;
    state.lambda2 = g.sample(rng).clamp(RATE_MIN, RATE_MAX);
    Ok(())
}

/// Local-scale and auxiliary updates of the horseshoe chain:
/// `u_k^2 ~ InvGamma(1, 1/xi_k + beta_k^2 / (2 lambda^2))` and
/// `xi_k ~ InvGamma(1, 1 + 1/u_k^2)`.
pub(crate) fn update_scales_horseshoe(
    state: &mut McmcState,
    shrunk: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    for (k, &bk) in shrunk.iter().enumerate() {
        let rate = 1.0 / state.xi[k] + bk * bk / (2.0 * state.lambda2);
        state.scale2[k] = draw_inv_gamma(1.0, rate, rng)?;
        state.xi[k] = draw_inv_gamma(1.0, 1.0 + 1.0 / state.scale2[k], rng)?;
    }
    Ok(())
}

/// Global-scale update of the horseshoe chain:
/// `lambda^2 ~ InvGamma((p+1)/2, 1/gamma + sum beta_k^2/u_k^2 / 2)` and
/// `gamma ~ InvGamma(1, 1 + 1/lambda^2)`.
pub(crate) fn update_lambda2_horseshoe(
    state: &mut McmcState,
    shrunk: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let p = shrunk.len() as f64;
    let mut rate = 1.0 / state.gamma_aux;
    for (k, &bk) in shrunk.iter().enumerate() {
        rate += 0.5 * bk * bk / state.scale2[k];
    }
    state.lambda2 = draw_inv_gamma(0.5 * (p + 1.0), rate, rng)?;
    state.gamma_aux = draw_inv_gamma(1.0, 1.0 + 1.0 / state.lambda2, rng)?;
    Ok(())
}

fn step_laplace(
    state: &mut McmcState,
    approx: &NormalApprox,
    a: f64,
    b: f64,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let prior_prec: Vec<f64> = state.scale2.iter().map(|&t2| 1.0 / t2).collect();
    state.beta = approx.draw_conditional(&prior_prec, rng)?;
    let shrunk: Vec<f64> = state.beta.iter().skip(approx.flat_len).copied().collect();
    update_scales_laplace(state, &shrunk, rng)?;
    update_lambda2_laplace(state, a, b, rng)?;
    state.check_finite()
}

fn step_horseshoe(
    state: &mut McmcState,
    approx: &NormalApprox,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let prior_prec: Vec<f64> = state
        .scale2
        .iter()
        .map(|&u2| 1.0 / clamp_rate(state.lambda2 * u2))
        .collect();
    state.beta = approx.draw_conditional(&prior_prec, rng)?;
    let shrunk: Vec<f64> = state.beta.iter().skip(approx.flat_len).copied().collect();
    update_scales_horseshoe(state, &shrunk, rng)?;
    update_lambda2_horseshoe(state, &shrunk, rng)?;
    state.check_finite()
}

// ---------------------------------------------------------------------------
// Public operations
// ---------------------------------------------------------------------------

/// One independent draw of the slopes under the flat prior,
/// `N(beta1_hat, V11)`; deterministic for a fixed seed.
pub fn sample_beta_flat(fit: &RegressionFit, seed: u64) -> Result<DVector<f64>> {
    let approx = NormalApprox::from_fit(fit)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(approx.draw_flat(&mut rng))
}

/// One full Laplace sweep, updating slopes, local scales, and the squared
/// rate in that order.
pub fn gibbs_step_laplace(
    state: &mut McmcState,
    fit: &RegressionFit,
    prior: &PriorSpec,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let (a, b) = match prior {
        PriorSpec::Laplace { a, b } => (*a, *b),
        _ => return Err(SvyError::invalid("Laplace sweep requires a Laplace prior")),
    };
    prior.validate()?;
    let approx = NormalApprox::from_fit(fit)?;
    step_laplace(state, &approx, a, b, rng)
}

/// One full horseshoe sweep in the order slopes, local scales, local
/// auxiliaries, global scale, global auxiliary.
pub fn gibbs_step_horseshoe(
    state: &mut McmcState,
    fit: &RegressionFit,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let approx = NormalApprox::from_fit(fit)?;
    step_horseshoe(state, &approx, rng)
}

/// One draw of the population mean given slopes:
/// `N(regression estimate, variance estimate)` evaluated at `beta1`.
pub fn sample_ybar(
    sample: &Sample,
    aux: &AuxTotals,
    beta1: &DVector<f64>,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_ybar_with(sample, aux, beta1, &mut rng)
}

pub(crate) fn sample_ybar_with(
    sample: &Sample,
    aux: &AuxTotals,
    beta1: &DVector<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mean = greg_mean(sample, aux, beta1)?;
    let var = variance_e(sample, beta1)?;
    let normal = Normal::new(mean, var.sqrt())
        .map_err(|e| SvyError::Numerical(format!("normal draw failed: {e}")))?;
    Ok(normal.sample(rng))
}

/// Generic two-step loop shared by the linear and nonlinear chains: slope
/// draws from `approx` under `prior`, mean draws from `draw_ybar` at the
/// current slopes.
pub(crate) fn run_two_step<F>(
    approx: &NormalApprox,
    prior: &PriorSpec,
    config: &McmcConfig,
    mut draw_ybar: F,
) -> Result<PosteriorDraws>
where
    F: FnMut(&DVector<f64>, &mut ChaCha8Rng) -> Result<f64>,
{
    config.validate()?;
    prior.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = approx.dim();
    let total = config.burn_in + config.n_draws * config.thin;
    let mut beta_rows = DMatrix::zeros(config.n_draws, dim);
    let mut lambda = Vec::new();
    let mut ybar = Vec::with_capacity(config.n_draws);

    let mut state = match prior {
        PriorSpec::Flat => None,
        PriorSpec::Laplace { a, b } => {
            Some(McmcState::init_laplace(DVector::zeros(approx.shrunk_len()), *a, *b))
        }
        PriorSpec::Horseshoe => {
            Some(McmcState::init_horseshoe(DVector::zeros(approx.shrunk_len())))
        }
    };
    // The chain state tracks the full coefficient vector; start it at the
    // estimate.
    if let Some(st) = state.as_mut() {
        st.beta = approx.center.clone();
    }

    let mut retained = 0usize;
    for sweep in 0..total {
        let beta = match (prior, state.as_mut()) {
            (PriorSpec::Flat, _) => approx.draw_flat(&mut rng),
            (PriorSpec::Laplace { a, b }, Some(st)) => {
                step_laplace(st, approx, *a, *b, &mut rng)?;
                st.beta.clone()
            }
            (PriorSpec::Horseshoe, Some(st)) => {
                step_horseshoe(st, approx, &mut rng)?;
                st.beta.clone()
            }
            _ => unreachable!(),
        };
        if sweep >= config.burn_in
            && (sweep - config.burn_in) % config.thin == 0
            && retained < config.n_draws
        {
            beta_rows.row_mut(retained).copy_from(&beta.transpose());
            if let Some(st) = state.as_ref() {
                lambda.push(st.lambda2.sqrt());
            }
            ybar.push(draw_ybar(&beta, &mut rng)?);
            retained += 1;
        }
    }
    PosteriorDraws { beta: beta_rows, lambda, ybar, config: *config }.validate()
}

/// Full posterior run for the linear regression estimator: fits the
/// design-weighted regression, then alternates slope and mean draws for
/// `burn_in + n_draws * thin` sweeps.
pub fn run_posterior(
    sample: &Sample,
    aux: &AuxTotals,
    prior: &PriorSpec,
    config: &McmcConfig,
) -> Result<PosteriorDraws> {
    let fit = crate::regfit::fit_wls(sample)?;
    let approx = NormalApprox::from_fit(&fit)?;
    run_two_step(&approx, prior, config, |beta, rng| {
        sample_ybar_with(sample, aux, beta, rng)
    })
}

/// Joint posterior for several domain means under a working model with one
/// intercept per domain and shared slopes. The design regresses `y` on a
/// global intercept, baseline-coded domain indicators, and the auxiliary
/// columns; the prior is flat on the intercept block and applies shrinkage
/// to the auxiliary slopes only. Each retained sweep draws every domain
/// mean from its conditional normal law via the domain regression
/// estimator and variance.
pub fn run_posterior_domains(
    sample: &Sample,
    domains: &[(i64, crate::survey::DomainAux)],
    prior: &PriorSpec,
    config: &McmcConfig,
) -> Result<Vec<(i64, PosteriorDraws)>> {
    config.validate()?;
    prior.validate()?;
    let labels = sample
        .domain()
        .ok_or_else(|| SvyError::invalid("sample carries no domain labels"))?
        .to_vec();
    let q = domains.len();
    if q == 0 {
        return Err(SvyError::invalid("at least one domain is required"));
    }
    let mut position = std::collections::HashMap::new();
    for (h, (id, _)) in domains.iter().enumerate() {
        if position.insert(*id, h).is_some() {
            return Err(SvyError::invalid(format!("duplicate domain id {id}")));
        }
    }
    let n = sample.n();
    let p = sample.n_aux();
    let mut z = DMatrix::zeros(n, q - 1 + p);
    for i in 0..n {
        let h = *position
            .get(&labels[i])
            .ok_or_else(|| SvyError::invalid(format!("unit in unlisted domain {}", labels[i])))?;
        if h > 0 {
            z[(i, h - 1)] = 1.0;
        }
        for c in 0..p {
            z[(i, q - 1 + c)] = sample.x()[(i, c)];
        }
    }
    let fit = crate::regfit::fit_wls_design(sample, &z)?;
    let approx = NormalApprox::new(fit.coefficients(), fit.vbeta.clone(), q)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let total = config.burn_in + config.n_draws * config.thin;
    let dim = approx.dim();
    let mut beta_rows = DMatrix::zeros(config.n_draws, dim);
    let mut lambda = Vec::new();
    let mut ybar: Vec<Vec<f64>> = vec![Vec::with_capacity(config.n_draws); q];
    let mut state = match prior {
        PriorSpec::Flat => None,
        PriorSpec::Laplace { a, b } => {
            Some(McmcState::init_laplace(DVector::zeros(approx.shrunk_len()), *a, *b))
        }
        PriorSpec::Horseshoe => {
            Some(McmcState::init_horseshoe(DVector::zeros(approx.shrunk_len())))
        }
    };
    if let Some(st) = state.as_mut() {
        st.beta = approx.center.clone();
    }

    let mut retained = 0usize;
    for sweep in 0..total {
        let coef = match (prior, state.as_mut()) {
            (PriorSpec::Flat, _) => approx.draw_flat(&mut rng),
            (PriorSpec::Laplace { a, b }, Some(st)) => {
                step_laplace(st, &approx, *a, *b, &mut rng)?;
                st.beta.clone()
            }
            (PriorSpec::Horseshoe, Some(st)) => {
                step_horseshoe(st, &approx, &mut rng)?;
                st.beta.clone()
            }
            _ => unreachable!(),
        };
        if sweep >= config.burn_in
            && (sweep - config.burn_in) % config.thin == 0
            && retained < config.n_draws
        {
            beta_rows.row_mut(retained).copy_from(&coef.transpose());
            if let Some(st) = state.as_ref() {
                lambda.push(st.lambda2.sqrt());
            }
            let slopes = coef.rows(q, p).into_owned();
            for (h, (id, aux)) in domains.iter().enumerate() {
                let b0_h = coef[0] + if h > 0 { coef[h] } else { 0.0 };
                let (est, var) = crate::survey::domain_greg(sample, *id, aux, b0_h, &slopes)?;
                let normal = Normal::new(est, var.sqrt())
                    .map_err(|e| SvyError::Numerical(format!("normal draw failed: {e}")))?;
                ybar[h].push(normal.sample(&mut rng));
            }
            retained += 1;
        }
    }

    domains
        .iter()
        .enumerate()
        .map(|(h, (id, _))| {
            let draws = PosteriorDraws {
                beta: beta_rows.clone(),
                lambda: lambda.clone(),
                ybar: std::mem::take(&mut ybar[h]),
                config: *config,
            }
            .validate()?;
            Ok((*id, draws))
        })
        .collect()
}

/// Posterior mean and equal-tailed credible interval of the population
/// mean. Quantiles interpolate linearly between order statistics
/// (`h = (m - 1) q` on the sorted draws).
pub fn summarize(draws: &PosteriorDraws, level: f64) -> Result<(f64, f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(SvyError::invalid("interval level must lie in (0, 1)"));
    }
    let m = draws.ybar.len();
    if m < 100 {
        return Err(SvyError::TooFewObservations(format!(
            "interval summaries need at least 100 draws, got {m}"
        )));
    }
    let point = draws.ybar.iter().sum::<f64>() / m as f64;
    let mut sorted = draws.ybar.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite draws"));
    let alpha = 1.0 - level;
    let lower = quantile_sorted(&sorted, alpha / 2.0);
    let upper = quantile_sorted(&sorted, 1.0 - alpha / 2.0);
    Ok((point, lower, upper))
}

/// Linear-interpolation quantile on pre-sorted values.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = (m as f64 - 1.0) * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(m - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}
