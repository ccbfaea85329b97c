//! Monte Carlo replication engine.
//!
//! A study fixes one synthetic population, then redraws the sample design
//! `reps` times; every requested method produces a point estimate and a
//! 95% interval per replication, and the table reports RMSE, bias,
//! coverage, and average length against the fixed population mean.
//! Replications run in parallel; every replication derives its own seed
//! from the master seed and its index, so results do not depend on
//! scheduling or thread count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bayes::{run_posterior, summarize, McmcConfig, PriorSpec};
use crate::error::SvyError;
use crate::glm::{model_assisted_mean, run_posterior_glm, solve_ee, variance_e_m, Logistic};
use crate::regfit::{
    cv_select_lambda, expand_selection, fit_penalized, fit_wls, forward_select, lambda_grid,
    PenaltyFamily, PenaltySpec,
};
use crate::survey::{
    draw_sample, greg_mean, ht_mean, ht_variance, variance_e, AuxTotals, DesignSpec,
    FinitePopulation,
};
use crate::Result;

const Z_95: f64 = 1.959963984540054;

/// Study variable family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Linear,
    Logistic,
}

/// Sampling design of the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    /// Simple random sampling without replacement (design A).
    Srs,
    /// Probability-proportional-to-size sampling (design B).
    Pps,
}

/// Estimation methods a study can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "GREG")]
    Greg,
    #[serde(rename = "GREG-L")]
    GregL,
    #[serde(rename = "GREG-R")]
    GregR,
    #[serde(rename = "GREG-V")]
    GregV,
    #[serde(rename = "AB")]
    Ab,
    #[serde(rename = "ABL")]
    Abl,
    #[serde(rename = "ABH")]
    Abh,
    #[serde(rename = "HT")]
    Ht,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Greg => "GREG",
            Method::GregL => "GREG-L",
            Method::GregR => "GREG-R",
            Method::GregV => "GREG-V",
            Method::Ab => "AB",
            Method::Abl => "ABL",
            Method::Abh => "ABH",
            Method::Ht => "HT",
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        Ok(match name {
            "GREG" => Method::Greg,
            "GREG-L" => Method::GregL,
            "GREG-R" => Method::GregR,
            "GREG-V" => Method::GregV,
            "AB" => Method::Ab,
            "ABL" => Method::Abl,
            "ABH" => Method::Abh,
            "HT" => Method::Ht,
            other => {
                return Err(SvyError::invalid(format!("unknown method tag '{other}'")));
            }
        })
    }
}

/// Full study description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub design: DesignKind,
    /// Population size N.
    pub n_population: usize,
    /// Number of generated auxiliary columns.
    pub p_star: usize,
    /// Number of observed auxiliary columns (first `p` of `p_star`).
    pub p: usize,
    /// Sample size per replication.
    pub n_sample: usize,
    /// Autoregressive correlation of the auxiliary columns.
    pub rho: f64,
    /// Intercept of the generating model (0 for linear, -1 for logistic by
    /// convention).
    pub beta0: f64,
    /// Residual standard deviation of the linear generating model.
    pub eps_sd: f64,
    /// Override for the generating slopes (defaults to the sparse pattern
    /// 1, -0.5, 1, -0.5 at positions 1, 4, 7, 10).
    pub slopes: Option<Vec<f64>>,
    /// Exponential sizes use the rate convention when true (mean 1/rate).
    pub exp_is_rate: bool,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub mcmc: McmcConfig,
    pub seed: u64,
}

impl ScenarioConfig {
    /// Desk-scale defaults for a linear SRS study.
    pub fn linear_defaults(p: usize, seed: u64) -> Self {
        Self {
            kind: ScenarioKind::Linear,
            design: DesignKind::Srs,
            n_population: 10_000,
            p_star: 50,
            p,
            n_sample: 300,
            rho: 0.2,
            beta0: 0.0,
            eps_sd: 2.0,
            slopes: None,
            exp_is_rate: true,
            reps: 200,
            methods: vec![Method::Greg, Method::GregL, Method::Ab, Method::Abh, Method::Ht],
            mcmc: McmcConfig { n_draws: 2000, burn_in: 200, seed: 0, thin: 1 },
            seed,
        }
    }

    /// Desk-scale defaults for a logistic SRS study.
    pub fn logistic_defaults(p: usize, seed: u64) -> Self {
        let mut cfg = Self::linear_defaults(p, seed);
        cfg.kind = ScenarioKind::Logistic;
        cfg.beta0 = -1.0;
        cfg.methods = vec![Method::Greg, Method::Ab, Method::Ht];
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.p > self.p_star {
            return Err(SvyError::invalid(format!(
                "observed columns p={} must satisfy 1 <= p <= p_star={}",
                self.p, self.p_star
            )));
        }
        if self.n_sample == 0 || self.n_sample > self.n_population {
            return Err(SvyError::invalid("sample size must satisfy 1 <= n <= N"));
        }
        if self.methods.is_empty() {
            return Err(SvyError::invalid("at least one method is required"));
        }
        if self.reps == 0 {
            return Err(SvyError::invalid("at least one replication is required"));
        }
        if !(self.rho.abs() < 1.0) {
            return Err(SvyError::invalid("autoregressive correlation must lie in (-1, 1)"));
        }
        if !(self.eps_sd > 0.0) && self.kind == ScenarioKind::Linear {
            return Err(SvyError::invalid("residual standard deviation must be positive"));
        }
        if self.kind == ScenarioKind::Logistic {
            let bad: Vec<&str> = self
                .methods
                .iter()
                .filter(|m| matches!(m, Method::GregL | Method::GregR | Method::GregV))
                .map(|m| m.name())
                .collect();
            if !bad.is_empty() {
                return Err(SvyError::invalid(format!(
                    "penalized/selected frequentist methods are linear-only: {}",
                    bad.join(", ")
                )));
            }
        }
        Ok(())
    }

    fn generating_slopes(&self) -> Result<DVector<f64>> {
        match &self.slopes {
            Some(v) => {
                if v.len() != self.p_star {
                    return Err(SvyError::dim("slope override must have p_star entries"));
                }
                Ok(DVector::from_row_slice(v))
            }
            None => Ok(default_slopes(self.p_star)),
        }
    }
}

/// Sparse generating slopes: 1, -0.5, 1, -0.5 at 1-based positions
/// 1, 4, 7, 10 (truncated when fewer columns are generated).
pub fn default_slopes(p_star: usize) -> DVector<f64> {
    let mut beta = DVector::zeros(p_star);
    for (pos, value) in [(1usize, 1.0), (4, -0.5), (7, 1.0), (10, -0.5)] {
        if pos <= p_star {
            beta[pos - 1] = value;
        }
    }
    beta
}

/// Deterministic per-task seed derivation (splitmix-style mixing of the
/// master seed and a task index).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Auxiliary rows from a stationary AR(1) process with mean 1 and marginal
/// variance 2, so that `cov(x_j, x_k) = 2 rho^{|j-k|}`.
fn generate_aux(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig) -> DMatrix<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = cfg.n_population;
    let p = cfg.p_star;
    let rho = cfg.rho;
    let innov = (1.0 - rho * rho).sqrt();
    let scale = 2.0f64.sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut c = normal.sample(rng);
        x[(i, 0)] = 1.0 + scale * c;
        for j in 1..p {
            c = rho * c + innov * normal.sample(rng);
            x[(i, j)] = 1.0 + scale * c;
        }
    }
    x
}

/// Synthetic linear population: Gaussian AR(1) auxiliaries and
/// `y = beta0 + x' slopes + eps` with `eps ~ N(0, eps_sd^2)`.
pub fn gen_population_linear(cfg: &ScenarioConfig, seed: u64) -> Result<FinitePopulation> {
    let slopes = cfg.generating_slopes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = generate_aux(&mut rng, cfg);
    let normal = Normal::new(0.0, cfg.eps_sd).map_err(|e| {
        SvyError::invalid(format!("invalid residual standard deviation: {e}"))
    })?;
    let y: Vec<f64> = (0..cfg.n_population)
        .map(|i| cfg.beta0 + x.row(i).transpose().dot(&slopes) + normal.sample(&mut rng))
        .collect();
    FinitePopulation::new(y, x, None, None)
}

/// Synthetic binary population: Bernoulli responses with logistic success
/// probabilities `logit p = beta0 + x' slopes`.
pub fn gen_population_logistic(cfg: &ScenarioConfig, seed: u64) -> Result<FinitePopulation> {
    let slopes = cfg.generating_slopes()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = generate_aux(&mut rng, cfg);
    let y: Vec<f64> = (0..cfg.n_population)
        .map(|i| {
            let eta = cfg.beta0 + x.row(i).transpose().dot(&slopes);
            let prob = 1.0 / (1.0 + (-eta).exp());
            if rng.random::<f64>() < prob {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    FinitePopulation::new(y, x, None, None)
}

pub(crate) fn linear_size_transform(y: f64, e: f64) -> f64 {
    (1.0 + (y + e).abs()).ln().max(1.0)
}

pub(crate) fn logistic_size_transform(y: f64, e: f64) -> f64 {
    (1.0 + 0.5 * y + e).ln().max(0.5)
}

/// Size measures for the unequal-probability design: a log transform of a
/// noisy copy of the response, floored away from zero. The exponential
/// noise uses the rate convention by default (`Exp(2)` has mean 1/2).
pub fn pps_size_measure(
    pop: &FinitePopulation,
    cfg: &ScenarioConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rate, transform): (f64, fn(f64, f64) -> f64) = match cfg.kind {
        ScenarioKind::Linear => (2.0, linear_size_transform),
        ScenarioKind::Logistic => (3.0, logistic_size_transform),
    };
    let rate = if cfg.exp_is_rate { rate } else { 1.0 / rate };
    let exp = Exp::new(rate).map_err(|e| SvyError::invalid(format!("bad rate: {e}")))?;
    Ok(pop
        .y()
        .iter()
        .map(|&y| transform(y, exp.sample(&mut rng)))
        .collect())
}

/// Point estimate and 95% interval of one method on one sample.
type MethodOutcome = std::result::Result<(f64, f64, f64), String>;

/// Aggregated metrics for one method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub rmse: f64,
    pub bias: f64,
    /// Coverage probability of the nominal 95% interval, as a proportion.
    pub cp: f64,
    /// Average interval length.
    pub al: f64,
    pub reps_used: usize,
    pub failures: usize,
}

/// Study result: per-method metrics against the fixed population mean.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MethodMetrics>,
    pub reps: usize,
    pub ybar_true: f64,
    pub runtime_secs: f64,
}

impl MetricsTable {
    pub fn row(&self, method: Method) -> Option<&MethodMetrics> {
        self.rows.iter().find(|r| r.method == method.name())
    }

    /// Display table following the times-100 reporting convention.
    pub fn display_x100(&self) -> String {
        let mut out = String::from(
            "all values multiplied by 100\nmethod,rmse,bias,cp,al,failures\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.4},{:.4},{:.4},{:.4},{}\n",
                r.method,
                100.0 * r.rmse,
                100.0 * r.bias,
                100.0 * r.cp,
                100.0 * r.al,
                r.failures
            ));
        }
        out
    }
}

struct RepContext<'a> {
    cfg: &'a ScenarioConfig,
    pop: &'a FinitePopulation,
    aux: &'a AuxTotals,
    design: DesignSpec,
}

fn wald(est: f64, var: f64) -> (f64, f64, f64) {
    let half = Z_95 * var.max(0.0).sqrt();
    (est, est - half, est + half)
}

fn run_linear_rep(ctx: &RepContext, rep: usize) -> Vec<(Method, MethodOutcome)> {
    let cfg = ctx.cfg;
    let rep_seed = derive_seed(cfg.seed, rep as u64);
    let sample = match draw_sample(ctx.pop, &ctx.design, rep_seed) {
        Ok(s) => s,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&m| (m, Err(format!("sampling: {e}"))))
                .collect();
        }
    };

    let mut fit = None;
    let mut fit_err: Option<String> = None;
    let need_fit = |fit: &mut Option<crate::regfit::RegressionFit>,
                        fit_err: &mut Option<String>| {
        if fit.is_none() && fit_err.is_none() {
            match fit_wls(&sample) {
                Ok(f) => *fit = Some(f),
                Err(e) => *fit_err = Some(e.to_string()),
            }
        }
    };
    let mut lasso_lambda: Option<std::result::Result<f64, String>> = None;
    let need_lambda = |lasso_lambda: &mut Option<std::result::Result<f64, String>>| {
        if lasso_lambda.is_none() {
            let grid = lambda_grid(&sample, 100);
            *lasso_lambda = Some(
                cv_select_lambda(
                    &sample,
                    PenaltyFamily::Lasso,
                    10,
                    &grid,
                    derive_seed(rep_seed, 1),
                )
                .map_err(|e| e.to_string()),
            );
        }
    };

    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let outcome: MethodOutcome = match method {
            Method::Ht => {
                let est = ht_mean(&sample);
                ht_variance(&sample)
                    .map(|v| wald(est, v))
                    .map_err(|e| e.to_string())
            }
            Method::Greg => {
                need_fit(&mut fit, &mut fit_err);
                match (&fit, &fit_err) {
                    (Some(f), _) => greg_mean(&sample, ctx.aux, &f.beta1)
                        .and_then(|est| variance_e(&sample, &f.beta1).map(|v| wald(est, v)))
                        .map_err(|e| e.to_string()),
                    (_, Some(e)) => Err(e.clone()),
                    _ => unreachable!(),
                }
            }
            Method::GregL => {
                need_lambda(&mut lasso_lambda);
                match lasso_lambda.as_ref().unwrap() {
                    Ok(lambda) => {
                        fit_penalized(&sample, &PenaltySpec::Lasso { lambda: *lambda })
                            .and_then(|coef| {
                                let b1 = coef.rows(1, cfg.p).into_owned();
                                let est = greg_mean(&sample, ctx.aux, &b1)?;
                                let v = variance_e(&sample, &b1)?;
                                Ok(wald(est, v))
                            })
                            .map_err(|e| e.to_string())
                    }
                    Err(e) => Err(e.clone()),
                }
            }
            Method::GregR => {
                let grid = lambda_grid(&sample, 100);
                cv_select_lambda(
                    &sample,
                    PenaltyFamily::Ridge,
                    10,
                    &grid,
                    derive_seed(rep_seed, 5),
                )
                .and_then(|lambda| fit_penalized(&sample, &PenaltySpec::Ridge { lambda }))
                .and_then(|coef| {
                    let b1 = coef.rows(1, cfg.p).into_owned();
                    let est = greg_mean(&sample, ctx.aux, &b1)?;
                    let v = variance_e(&sample, &b1)?;
                    Ok(wald(est, v))
                })
                .map_err(|e| e.to_string())
            }
            Method::GregV => forward_select(&sample)
                .and_then(|(selected, f)| {
                    let b1 = expand_selection(cfg.p, &selected, &f.beta1);
                    let est = greg_mean(&sample, ctx.aux, &b1)?;
                    let v = variance_e(&sample, &b1)?;
                    Ok(wald(est, v))
                })
                .map_err(|e| e.to_string()),
            Method::Ab => {
                let mcmc = McmcConfig {
                    seed: derive_seed(rep_seed, 2),
                    ..cfg.mcmc
                };
                run_posterior(&sample, ctx.aux, &PriorSpec::Flat, &mcmc)
                    .and_then(|d| summarize(&d, 0.95))
                    .map_err(|e| e.to_string())
            }
            Method::Abl => {
                need_lambda(&mut lasso_lambda);
                match lasso_lambda.as_ref().unwrap() {
                    Ok(lambda) => {
                        let prior = PriorSpec::Laplace { a: lambda * lambda, b: 1.0 };
                        let mcmc = McmcConfig {
                            seed: derive_seed(rep_seed, 3),
                            ..cfg.mcmc
                        };
                        run_posterior(&sample, ctx.aux, &prior, &mcmc)
                            .and_then(|d| summarize(&d, 0.95))
                            .map_err(|e| e.to_string())
                    }
                    Err(e) => Err(e.clone()),
                }
            }
            Method::Abh => {
                let mcmc = McmcConfig {
                    seed: derive_seed(rep_seed, 4),
                    ..cfg.mcmc
                };
                run_posterior(&sample, ctx.aux, &PriorSpec::Horseshoe, &mcmc)
                    .and_then(|d| summarize(&d, 0.95))
                    .map_err(|e| e.to_string())
            }
        };
        out.push((method, outcome));
    }
    out
}

fn run_logistic_rep(ctx: &RepContext, rep: usize) -> Vec<(Method, MethodOutcome)> {
    let cfg = ctx.cfg;
    let rep_seed = derive_seed(cfg.seed, rep as u64);
    let sample = match draw_sample(ctx.pop, &ctx.design, rep_seed) {
        Ok(s) => s,
        Err(e) => {
            return cfg
                .methods
                .iter()
                .map(|&m| (m, Err(format!("sampling: {e}"))))
                .collect();
        }
    };
    let pop_x = ctx.pop.x();

    let mut glm_fit = None;
    let mut glm_err: Option<String> = None;
    let need_glm = |glm_fit: &mut Option<crate::glm::GlmFit>,
                        glm_err: &mut Option<String>| {
        if glm_fit.is_none() && glm_err.is_none() {
            match solve_ee(&sample, &Logistic, None) {
                Ok(f) if f.converged => *glm_fit = Some(f),
                Ok(f) => {
                    *glm_err =
                        Some(format!("estimating equation stalled at norm {}", f.score_norm))
                }
                Err(e) => *glm_err = Some(e.to_string()),
            }
        }
    };

    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let outcome: MethodOutcome = match method {
            Method::Ht => {
                let est = ht_mean(&sample);
                ht_variance(&sample)
                    .map(|v| wald(est, v))
                    .map_err(|e| e.to_string())
            }
            Method::Greg => {
                need_glm(&mut glm_fit, &mut glm_err);
                match (&glm_fit, &glm_err) {
                    (Some(f), _) => model_assisted_mean(pop_x, &sample, &Logistic, &f.beta)
                        .and_then(|est| {
                            variance_e_m(&sample, &Logistic, &f.beta).map(|v| wald(est, v))
                        })
                        .map_err(|e| e.to_string()),
                    (_, Some(e)) => Err(e.clone()),
                    _ => unreachable!(),
                }
            }
            Method::Ab => {
                let mcmc = McmcConfig { seed: derive_seed(rep_seed, 2), ..cfg.mcmc };
                run_posterior_glm(&sample, pop_x, &Logistic, &PriorSpec::Flat, &mcmc)
                    .and_then(|d| summarize(&d, 0.95))
                    .map_err(|e| e.to_string())
            }
            Method::Abl => {
                // The rate scale comes from a working linear lasso fit, the
                // same cross-validated choice the linear track uses.
                let grid = lambda_grid(&sample, 100);
                cv_select_lambda(
                    &sample,
                    PenaltyFamily::Lasso,
                    10,
                    &grid,
                    derive_seed(rep_seed, 1),
                )
                .and_then(|lambda| {
                    let prior = PriorSpec::Laplace { a: lambda * lambda, b: 1.0 };
                    let mcmc = McmcConfig { seed: derive_seed(rep_seed, 3), ..cfg.mcmc };
                    run_posterior_glm(&sample, pop_x, &Logistic, &prior, &mcmc)
                })
                .and_then(|d| summarize(&d, 0.95))
                .map_err(|e| e.to_string())
            }
            Method::Abh => {
                let mcmc = McmcConfig { seed: derive_seed(rep_seed, 4), ..cfg.mcmc };
                run_posterior_glm(&sample, pop_x, &Logistic, &PriorSpec::Horseshoe, &mcmc)
                    .and_then(|d| summarize(&d, 0.95))
                    .map_err(|e| e.to_string())
            }
            Method::GregL | Method::GregR | Method::GregV => {
                Err("linear-only method in a logistic study".to_string())
            }
        };
        out.push((method, outcome));
    }
    out
}

/// Run the full study: generate the population once, replicate the design,
/// and aggregate. Failures are counted per method and excluded from the
/// aggregates.
pub fn run_study(cfg: &ScenarioConfig) -> Result<MetricsTable> {
    cfg.validate()?;
    let started = std::time::Instant::now();

    let pop_full = match cfg.kind {
        ScenarioKind::Linear => gen_population_linear(cfg, cfg.seed)?,
        ScenarioKind::Logistic => gen_population_logistic(cfg, cfg.seed)?,
    };
    let ybar_true = pop_full.mean_y();
    let mut pop_obs = pop_full.restrict_aux(cfg.p)?;
    let design = match cfg.design {
        DesignKind::Srs => DesignSpec::srs(cfg.n_sample),
        DesignKind::Pps => {
            let z = pps_size_measure(&pop_full, cfg, derive_seed(cfg.seed, u64::MAX - 1))?;
            pop_obs.set_size_measure(z)?;
            DesignSpec::pps(cfg.n_sample)
        }
    };
    let aux = AuxTotals::from_means(pop_obs.mean_x());
    let ctx = RepContext { cfg, pop: &pop_obs, aux: &aux, design };

    let per_rep: Vec<Vec<(Method, MethodOutcome)>> = (0..cfg.reps)
        .into_par_iter()
        .map(|rep| match cfg.kind {
            ScenarioKind::Linear => run_linear_rep(&ctx, rep),
            ScenarioKind::Logistic => run_logistic_rep(&ctx, rep),
        })
        .collect();

    let mut rows = Vec::with_capacity(cfg.methods.len());
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let mut estimates = Vec::with_capacity(cfg.reps);
        let mut covered = 0usize;
        let mut length_sum = 0.0;
        let mut failures = 0usize;
        for rep in per_rep.iter() {
            match &rep[mi].1 {
                Ok((est, lo, hi)) => {
                    estimates.push(*est);
                    if *lo <= ybar_true && ybar_true <= *hi {
                        covered += 1;
                    }
                    length_sum += hi - lo;
                }
                Err(_) => failures += 1,
            }
        }
        let used = estimates.len();
        if used == 0 {
            return Err(SvyError::Numerical(format!(
                "method {} failed in every replication",
                method.name()
            )));
        }
        let mean_est = estimates.iter().sum::<f64>() / used as f64;
        let bias = mean_est - ybar_true;
        let mse = estimates
            .iter()
            .map(|&e| (e - ybar_true) * (e - ybar_true))
            .sum::<f64>()
            / used as f64;
        let var = estimates
            .iter()
            .map(|&e| (e - mean_est) * (e - mean_est))
            .sum::<f64>()
            / used as f64;
        debug_assert!(
            (mse - (bias * bias + var)).abs() <= 1e-10 * mse.max(1e-300),
            "mse decomposition violated: {mse} vs {}",
            bias * bias + var
        );
        rows.push(MethodMetrics {
            method: method.name().to_string(),
            rmse: mse.sqrt(),
            bias,
            cp: covered as f64 / used as f64,
            al: length_sum / used as f64,
            reps_used: used,
            failures,
        });
    }

    Ok(MetricsTable {
        rows,
        reps: cfg.reps,
        ybar_true,
        runtime_secs: started.elapsed().as_secs_f64(),
    })
}
