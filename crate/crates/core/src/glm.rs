//! Nonlinear model-assisted estimation.
//!
//! A working model supplies a mean function `m(x; beta)` (with `beta[0]`
//! acting as the intercept for the shipped logistic instance), a variance
//! function `a(m)`, the estimating-equation weight `h = dm/dbeta / a(m)`,
//! and the mean gradient. The slope estimate solves the design-weighted
//! estimating equation `sum_A (y_i - m_i) h_i / pi_i = 0` by Newton steps
//! with step halving; its covariance is the usual sandwich with the
//! pairwise quadratic form in the middle. The difference estimator adds a
//! population-level model total to the inverse-probability residual sum,
//! and the posterior loop mirrors the linear one with shrinkage applied to
//! the non-intercept block only.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Normal};

use crate::bayes::{run_two_step, McmcConfig, NormalApprox, PosteriorDraws, PriorSpec};
use crate::error::SvyError;
use crate::survey::{design_quad_matrix, design_quad_scalar, Sample};
use crate::Result;

const EE_TOL: f64 = 1e-8;
const EE_MAX_ITER: usize = 100;
const MAX_HALVINGS: usize = 30;
const DIVERGENCE_NORM: f64 = 1e3;
const PROB_CLAMP: f64 = 1e-12;

/// Working model for the study variable given auxiliaries. `beta` has
/// length `p + 1`; the leading coordinate is the intercept.
pub trait WorkingModel: Sync {
    /// Mean `m(x; beta)` for a raw (unaugmented) covariate row.
    fn mean(&self, x: &[f64], beta: &DVector<f64>) -> f64;
    /// Variance function `a(m)`.
    fn variance(&self, m: f64) -> f64;
    /// Estimating-equation weight `h(x; beta) = (dm/dbeta) / a(m)`.
    fn weight(&self, x: &[f64], beta: &DVector<f64>, m: f64) -> DVector<f64>;
    /// Mean gradient `dm/dbeta`.
    fn mean_grad(&self, x: &[f64], beta: &DVector<f64>, m: f64) -> DVector<f64>;

    /// Means for every row of a matrix; overridable for batch evaluation.
    fn mean_batch(&self, x: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
        let mut row = vec![0.0; x.ncols()];
        DVector::from_fn(x.nrows(), |i, _| {
            for (c, v) in row.iter_mut().enumerate() {
                *v = x[(i, c)];
            }
            self.mean(&row, beta)
        })
    }
}

/// Logistic working model: `m = exp(eta) / (1 + exp(eta))` with
/// `eta = beta[0] + x' beta[1..]`, `a(m) = m (1 - m)`, weight `h = (1, x)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Logistic;

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn augmented(x: &[f64]) -> DVector<f64> {
    let mut v = DVector::zeros(x.len() + 1);
    v[0] = 1.0;
    for (j, &xv) in x.iter().enumerate() {
        v[j + 1] = xv;
    }
    v
}

impl WorkingModel for Logistic {
    fn mean(&self, x: &[f64], beta: &DVector<f64>) -> f64 {
        let mut eta = beta[0];
        for (j, &xv) in x.iter().enumerate() {
            eta += xv * beta[j + 1];
        }
        sigmoid(eta)
    }

    fn variance(&self, m: f64) -> f64 {
        m * (1.0 - m)
    }

    fn weight(&self, x: &[f64], _beta: &DVector<f64>, _m: f64) -> DVector<f64> {
        // dm/dbeta = m(1-m) (1, x) and a(m) = m(1-m) cancel exactly.
        augmented(x)
    }

    fn mean_grad(&self, x: &[f64], _beta: &DVector<f64>, m: f64) -> DVector<f64> {
        augmented(x) * (m * (1.0 - m))
    }

    fn mean_batch(&self, x: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
        let slopes = beta.rows(1, beta.len() - 1).into_owned();
        let mut eta = x * slopes;
        eta.add_scalar_mut(beta[0]);
        eta.map(sigmoid)
    }
}

/// Estimating-equation fit with its sandwich covariance.
#[derive(Debug, Clone)]
pub struct GlmFit {
    /// `(p + 1)`-vector with the intercept first.
    pub beta: DVector<f64>,
    pub vbeta: DMatrix<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Sup-norm of the estimating equation at the returned coefficients.
    pub score_norm: f64,
    /// Number of mean evaluations clamped into `(1e-12, 1 - 1e-12)`.
    pub clamp_events: usize,
}

struct EvalCache {
    means: Vec<f64>,
    clamped: usize,
}

fn eval_means(
    sample: &Sample,
    model: &dyn WorkingModel,
    beta: &DVector<f64>,
    row: &mut Vec<f64>,
) -> EvalCache {
    let n = sample.n();
    let mut means = Vec::with_capacity(n);
    let mut clamped = 0usize;
    for i in 0..n {
        for (c, v) in row.iter_mut().enumerate() {
            *v = sample.x()[(i, c)];
        }
        let raw = model.mean(row, beta);
        let m = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        if m != raw {
            clamped += 1;
        }
        means.push(m);
    }
    EvalCache { means, clamped }
}

fn score(
    sample: &Sample,
    model: &dyn WorkingModel,
    beta: &DVector<f64>,
    means: &[f64],
    row: &mut Vec<f64>,
) -> DVector<f64> {
    let dim = beta.len();
    let mut u = DVector::zeros(dim);
    for i in 0..sample.n() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = sample.x()[(i, c)];
        }
        let h = model.weight(row, beta, means[i]);
        u.axpy((sample.y()[i] - means[i]) / sample.pi()[i], &h, 1.0);
    }
    u
}

/// Quasi-information matrix `sum_A h_i (dm_i)' / pi_i`.
fn information(
    sample: &Sample,
    model: &dyn WorkingModel,
    beta: &DVector<f64>,
    means: &[f64],
    row: &mut Vec<f64>,
) -> DMatrix<f64> {
    let dim = beta.len();
    let mut m = DMatrix::zeros(dim, dim);
    for i in 0..sample.n() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = sample.x()[(i, c)];
        }
        let h = model.weight(row, beta, means[i]);
        let g = model.mean_grad(row, beta, means[i]);
        m += (&h * g.transpose()) / sample.pi()[i];
    }
    m
}

/// Default start: zero slopes with the intercept at the logit of the
/// design-weighted response mean.
pub fn initial_beta(sample: &Sample) -> DVector<f64> {
    let w = sample.weights();
    let mean = (sample.y().dot(&w) / w.sum()).clamp(1e-6, 1.0 - 1e-6);
    let mut beta = DVector::zeros(sample.n_aux() + 1);
    beta[0] = (mean / (1.0 - mean)).ln();
    beta
}

/// Solve the design-weighted estimating equation by Newton iterations with
/// step halving. `init` defaults to [`initial_beta`]. The returned fit
/// carries the sandwich covariance evaluated at the final coefficients.
pub fn solve_ee(
    sample: &Sample,
    model: &dyn WorkingModel,
    init: Option<&DVector<f64>>,
) -> Result<GlmFit> {
    let n = sample.n();
    let dim = sample.n_aux() + 1;
    if n <= dim {
        return Err(SvyError::TooFewObservations(format!(
            "need more than {dim} observations for {dim} coefficients"
        )));
    }
    let mut beta = match init {
        Some(b) => {
            if b.len() != dim {
                return Err(SvyError::dim("initial coefficients have the wrong length"));
            }
            b.clone()
        }
        None => initial_beta(sample),
    };
    let mut row = vec![0.0; sample.n_aux()];
    let mut clamp_events = 0usize;
    let mut cache = eval_means(sample, model, &beta, &mut row);
    clamp_events += cache.clamped;
    let mut u = score(sample, model, &beta, &cache.means, &mut row);
    let mut u_norm = u.amax();
    let mut converged = u_norm <= EE_TOL;
    let mut iterations = 0usize;

    while !converged && iterations < EE_MAX_ITER {
        iterations += 1;
        let mut info = information(sample, model, &beta, &cache.means, &mut row);
        let delta = match info.clone().lu().solve(&u) {
            Some(d) => d,
            None => {
                let jitter = 1e-10 * info.trace() / dim as f64;
                for d in 0..dim {
                    info[(d, d)] += jitter;
                }
                info.lu().solve(&u).ok_or_else(|| {
                    SvyError::Numerical("singular quasi-information matrix".into())
                })?
            }
        };
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            let candidate = &beta + &delta * step;
            let cand_cache = eval_means(sample, model, &candidate, &mut row);
            let cand_u = score(sample, model, &candidate, &cand_cache.means, &mut row);
            let cand_norm = cand_u.amax();
            if cand_norm < u_norm || cand_norm <= EE_TOL {
                beta = candidate;
                clamp_events += cand_cache.clamped;
                cache = cand_cache;
                u = cand_u;
                u_norm = cand_norm;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(SvyError::NonConvergence(
                "estimating-equation step halving stalled".into(),
            ));
        }
        if beta.norm() > DIVERGENCE_NORM {
            return Err(SvyError::NonConvergence(
                "coefficients diverged; data may be separated".into(),
            ));
        }
        converged = u_norm <= EE_TOL;
    }

    // Sandwich at the final coefficients.
    let info = information(sample, model, &beta, &cache.means, &mut row);
    let mut score_rows = DMatrix::zeros(n, dim);
    for i in 0..n {
        for (c, v) in row.iter_mut().enumerate() {
            *v = sample.x()[(i, c)];
        }
        let h = model.weight(&row, &beta, cache.means[i]);
        let e = sample.y()[i] - cache.means[i];
        for c in 0..dim {
            score_rows[(i, c)] = e * h[c];
        }
    }
    let ctx = sample.pair_ctx();
    let middle = design_quad_matrix(&ctx, sample.pi().as_slice(), &score_rows)?;
    let inv = info
        .lu()
        .try_inverse()
        .ok_or_else(|| SvyError::Numerical("singular quasi-information matrix".into()))?;
    let vbeta = &inv * middle * inv.transpose();

    Ok(GlmFit { beta, vbeta, converged, iterations, score_norm: u_norm, clamp_events })
}

/// Difference estimator of the population mean: the population-average
/// model prediction plus the inverse-probability mean of sample residuals.
pub fn model_assisted_mean(
    pop_x: &DMatrix<f64>,
    sample: &Sample,
    model: &dyn WorkingModel,
    beta: &DVector<f64>,
) -> Result<f64> {
    if pop_x.ncols() != sample.n_aux() {
        return Err(SvyError::dim("population matrix width does not match the sample"));
    }
    if beta.len() != sample.n_aux() + 1 {
        return Err(SvyError::dim("coefficient length must be p + 1"));
    }
    let pop_n = sample.pop_n();
    if pop_x.nrows() != pop_n {
        return Err(SvyError::dim(format!(
            "population matrix has {} rows for population size {}",
            pop_x.nrows(),
            pop_n
        )));
    }
    let pop_means = model.mean_batch(pop_x, beta);
    let sample_means = model.mean_batch(sample.x(), beta);
    let mut total = pop_means.sum();
    for i in 0..sample.n() {
        total += (sample.y()[i] - sample_means[i]) / sample.pi()[i];
    }
    Ok(total / pop_n as f64)
}

/// Design-based variance estimator of the difference estimator: the
/// pairwise quadratic form over raw residuals `y_i - m(x_i; beta)`.
pub fn variance_e_m(
    sample: &Sample,
    model: &dyn WorkingModel,
    beta: &DVector<f64>,
) -> Result<f64> {
    if beta.len() != sample.n_aux() + 1 {
        return Err(SvyError::dim("coefficient length must be p + 1"));
    }
    if sample.n() < 2 {
        return Err(SvyError::TooFewObservations(
            "variance estimation needs at least two sampled units".into(),
        ));
    }
    let means = model.mean_batch(sample.x(), beta);
    let resid: Vec<f64> = sample
        .y()
        .iter()
        .zip(means.iter())
        .map(|(&y, &m)| y - m)
        .collect();
    let ctx = sample.pair_ctx();
    let q = design_quad_scalar(&ctx, sample.pi().as_slice(), &resid)?;
    let v = q / (sample.pop_n() as f64).powi(2);
    if v < 0.0 && v > -1e-12 {
        return Ok(0.0);
    }
    if v < 0.0 {
        return Err(SvyError::Numerical("variance quadratic form is negative".into()));
    }
    Ok(v)
}

/// Two-step posterior for the nonlinear estimator: coefficient draws from
/// the normal working likelihood around the estimating-equation solution
/// (shrinkage on the non-intercept block only), mean draws from the
/// difference estimator's normal law at each coefficient draw.
pub fn run_posterior_glm(
    sample: &Sample,
    pop_x: &DMatrix<f64>,
    model: &dyn WorkingModel,
    prior: &PriorSpec,
    config: &McmcConfig,
) -> Result<PosteriorDraws> {
    let fit = solve_ee(sample, model, None)?;
    if !fit.converged {
        return Err(SvyError::NonConvergence(
            "estimating equation did not converge before posterior sampling".into(),
        ));
    }
    let approx = NormalApprox::new(fit.beta.clone(), fit.vbeta.clone(), 1)?;
    run_two_step(&approx, prior, config, |beta, rng| {
        let mean = model_assisted_mean(pop_x, sample, model, beta)?;
        let var = variance_e_m(sample, model, beta)?;
        let normal = Normal::new(mean, var.sqrt())
            .map_err(|e| SvyError::Numerical(format!("normal draw failed: {e}")))?;
        Ok(normal.sample(rng))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survey::{
        draw_sample, variance_e_with, DesignSpec, FinitePopulation, PairwisePolicy,
        ResidualConvention, Sample, SamplingScheme,
    };
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::Normal as NormalDist;

    fn make_sample(y: &[f64], x: DMatrix<f64>, pi: &[f64], pop_n: usize) -> Sample {
        let n = y.len();
        Sample::new(
            (0..n).collect(),
            DVector::from_row_slice(y),
            x,
            DVector::from_row_slice(pi),
            None,
            DesignSpec {
                scheme: SamplingScheme::Srs,
                n,
                pairwise: PairwisePolicy::IndependenceProduct,
            },
            pop_n,
        )
        .unwrap()
    }

    fn logistic_sample(n: usize, p: usize, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = NormalDist::new(0.0, 1.0).unwrap();
        let x = DMatrix::from_fn(n, p, |_, _| normal.sample(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let eta = -0.5 + x[(i, 0)] - 0.5 * x[(i, p.min(2) - 1)];
                if rng.random::<f64>() < sigmoid(eta) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let pi: Vec<f64> = (0..n).map(|_| 0.1 + 0.5 * rng.random::<f64>()).collect();
        make_sample(&y, x, &pi, n * 20)
    }

    #[test]
    fn intercept_only_fit_is_the_logit_of_the_weighted_mean() {
        // Weighted response mean 0.25 -> intercept -ln 3.
        let y = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let pi = [0.5; 8];
        let s = make_sample(&y, DMatrix::zeros(8, 0), &pi, 80);
        let fit = solve_ee(&s, &Logistic, None).unwrap();
        assert!(fit.converged);
        assert_abs_diff_eq!(fit.beta[0], -(3.0f64.ln()), epsilon = 1e-10);
    }

    #[test]
    fn score_vanishes_at_the_solution() {
        let s = logistic_sample(500, 3, 99);
        let fit = solve_ee(&s, &Logistic, None).unwrap();
        assert!(fit.converged, "no convergence: score norm {}", fit.score_norm);
        assert!(fit.score_norm <= 1e-8);
        // Recompute the score independently.
        let mut u = DVector::zeros(4);
        for i in 0..s.n() {
            let xrow: Vec<f64> = (0..3).map(|c| s.x()[(i, c)]).collect();
            let m = Logistic.mean(&xrow, &fit.beta);
            let h = augmented(&xrow);
            u.axpy((s.y()[i] - m) / s.pi()[i], &h, 1.0);
        }
        assert!(u.amax() <= 1e-8, "independent score norm {}", u.amax());
    }

    /// Independent iteratively-reweighted oracle for the equal-weight case.
    #[test]
    fn equal_weight_fit_matches_independent_irls() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let normal = NormalDist::new(0.0, 1.0).unwrap();
        let n = 80;
        let x = DMatrix::from_fn(n, 2, |_, _| normal.sample(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let eta = 0.3 + 0.8 * x[(i, 0)] - 1.1 * x[(i, 1)];
                if rng.random::<f64>() < sigmoid(eta) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let s = make_sample(&y, x.clone(), &[0.4; 80], 800);
        let fit = solve_ee(&s, &Logistic, None).unwrap();
        assert!(fit.converged);

        // IRLS oracle: beta <- (Xa' V Xa)^{-1} Xa' V z with working response z.
        let mut aug = DMatrix::zeros(n, 3);
        for i in 0..n {
            aug[(i, 0)] = 1.0;
            aug[(i, 1)] = x[(i, 0)];
            aug[(i, 2)] = x[(i, 1)];
        }
        let mut beta = DVector::zeros(3);
        for _ in 0..200 {
            let eta = &aug * &beta;
            let m: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
            let mut mtx = DMatrix::zeros(3, 3);
            let mut rhs = DVector::zeros(3);
            for i in 0..n {
                let v = (m[i] * (1.0 - m[i])).max(1e-12);
                let z = eta[i] + (y[i] - m[i]) / v;
                let xi = aug.row(i).transpose();
                mtx += v * &xi * xi.transpose();
                rhs += v * z * xi;
            }
            beta = mtx.lu().solve(&rhs).unwrap();
        }
        for j in 0..3 {
            assert_abs_diff_eq!(fit.beta[j], beta[j], epsilon = 1e-6);
        }
    }

    /// Analytic quasi-information against central finite differences of the
    /// estimating equation.
    #[test]
    fn information_matches_finite_differences() {
        for seed in [1u64, 12, 31] {
            let s = logistic_sample(60, 2, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
            let normal = NormalDist::new(0.0, 0.5).unwrap();
            let beta = DVector::from_fn(3, |_, _| normal.sample(&mut rng));
            let mut row = vec![0.0; 2];
            let cache = eval_means(&s, &Logistic, &beta, &mut row);
            let info = information(&s, &Logistic, &beta, &cache.means, &mut row);
            // dU/dbeta = -information; probe column by column.
            let h = 1e-6;
            for j in 0..3 {
                let mut up = beta.clone();
                up[j] += h;
                let mut dn = beta.clone();
                dn[j] -= h;
                let cache_up = eval_means(&s, &Logistic, &up, &mut row);
                let u_up = score(&s, &Logistic, &up, &cache_up.means, &mut row);
                let cache_dn = eval_means(&s, &Logistic, &dn, &mut row);
                let u_dn = score(&s, &Logistic, &dn, &cache_dn.means, &mut row);
                let fd = (u_up - u_dn) / (2.0 * h);
                for r in 0..3 {
                    let analytic = -info[(r, j)];
                    let scale = analytic.abs().max(1.0);
                    assert!(
                        (fd[r] - analytic).abs() <= 1e-5 * scale,
                        "entry ({r},{j}): fd {} vs analytic {}",
                        fd[r],
                        analytic
                    );
                }
            }
        }
    }

    #[test]
    fn separation_is_detected() {
        // Perfectly separated data on a small covariate scale: the fitted
        // slope must blow up, tripping the divergence guard.
        let n = 30;
        let x = DMatrix::from_fn(n, 1, |i, _| (i as f64 - 14.5) / 100.0);
        let y: Vec<f64> = (0..n).map(|i| if i >= 15 { 1.0 } else { 0.0 }).collect();
        let s = make_sample(&y, x, &[0.5; 30], 300);
        assert!(matches!(
            solve_ee(&s, &Logistic, None),
            Err(SvyError::NonConvergence(_))
        ));
    }

    #[test]
    fn extreme_linear_predictors_are_clamped_and_counted() {
        let mut x = DMatrix::zeros(40, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = NormalDist::new(0.0, 1.0).unwrap();
        for i in 0..40 {
            x[(i, 0)] = normal.sample(&mut rng);
        }
        x[(0, 0)] = 60.0; // eta far beyond the clamp under any slope near 2
        let y: Vec<f64> = (0..40)
            .map(|i| {
                let eta = 2.0 * x[(i, 0)];
                if i == 0 || rng.random::<f64>() < sigmoid(eta) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let s = make_sample(&y, x, &[0.5; 40], 400);
        if let Ok(fit) = solve_ee(&s, &Logistic, None) {
            assert!(fit.clamp_events > 0, "expected clamped mean evaluations");
        }
    }

    #[test]
    fn model_assisted_mean_is_exact_at_census_for_any_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let normal = NormalDist::new(0.0, 1.0).unwrap();
        let n = 50;
        let x = DMatrix::from_fn(n, 2, |_, _| normal.sample(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < 0.4 { 1.0 } else { 0.0 })
            .collect();
        let pop = FinitePopulation::new(y.clone(), x.clone(), None, None).unwrap();
        let census = Sample::census(&pop, PairwisePolicy::ExactSrs);
        let truth = pop.mean_y();
        for _ in 0..10 {
            let beta = DVector::from_fn(3, |_, _| normal.sample(&mut rng));
            let est = model_assisted_mean(&x, &census, &Logistic, &beta).unwrap();
            assert_abs_diff_eq!(est, truth, epsilon = 1e-12);
        }
    }

    #[test]
    fn model_assisted_mean_splits_into_prediction_plus_residual_term() {
        // Zero slopes make the model constant: estimate = c + HT residual mean.
        let s = logistic_sample(40, 2, 3);
        let pop_x = DMatrix::zeros(s.pop_n(), 2);
        let beta = DVector::from_row_slice(&[0.7, 0.0, 0.0]);
        let c = sigmoid(0.7);
        let est = model_assisted_mean(&pop_x, &s, &Logistic, &beta).unwrap();
        let ht_resid: f64 = s
            .y()
            .iter()
            .zip(s.pi().iter())
            .map(|(&y, &p)| (y - c) / p)
            .sum::<f64>()
            / s.pop_n() as f64;
        assert_abs_diff_eq!(est, c + ht_resid, epsilon = 1e-12);
    }

    #[test]
    fn identity_model_reduces_to_the_linear_machinery() {
        struct Identity;
        impl WorkingModel for Identity {
            fn mean(&self, x: &[f64], beta: &DVector<f64>) -> f64 {
                let mut eta = beta[0];
                for (j, &v) in x.iter().enumerate() {
                    eta += v * beta[j + 1];
                }
                eta
            }
            fn variance(&self, _m: f64) -> f64 {
                1.0
            }
            fn weight(&self, x: &[f64], _b: &DVector<f64>, _m: f64) -> DVector<f64> {
                augmented(x)
            }
            fn mean_grad(&self, x: &[f64], _b: &DVector<f64>, _m: f64) -> DVector<f64> {
                augmented(x)
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let normal = NormalDist::new(0.0, 1.0).unwrap();
        let pop_n = 120;
        let pop_x = DMatrix::from_fn(pop_n, 1, |_, _| normal.sample(&mut rng));
        let beta = DVector::from_row_slice(&[0.4, 1.3]);
        let n = 12;
        let idx: Vec<usize> = (0..n).map(|k| k * 10).collect();
        let x = DMatrix::from_fn(n, 1, |r, _| pop_x[(idx[r], 0)]);
        let y: Vec<f64> = (0..n).map(|r| 0.4 + 1.3 * x[(r, 0)]).collect();
        let s = Sample::new(
            idx,
            DVector::from_vec(y),
            x,
            DVector::from_element(n, 0.1),
            None,
            DesignSpec { scheme: SamplingScheme::Srs, n, pairwise: PairwisePolicy::ExactSrs },
            pop_n,
        )
        .unwrap();
        // Zero residuals: the estimate is the population prediction mean.
        let est = model_assisted_mean(&pop_x, &s, &Identity, &beta).unwrap();
        let expect =
            (0..pop_n).map(|i| 0.4 + 1.3 * pop_x[(i, 0)]).sum::<f64>() / pop_n as f64;
        assert_abs_diff_eq!(est, expect, epsilon = 1e-12);

        // Raw-residual variance agrees with the linear estimator once the
        // intercept moves into the response.
        let mut rng2 = ChaCha8Rng::seed_from_u64(9);
        let noisy: Vec<f64> = (0..n)
            .map(|r| 0.4 + 1.3 * s.x()[(r, 0)] + normal.sample(&mut rng2))
            .collect();
        let s_noisy = Sample::new(
            s.indices().to_vec(),
            DVector::from_vec(noisy.clone()),
            s.x().clone(),
            s.pi().clone(),
            None,
            *s.design(),
            s.pop_n(),
        )
        .unwrap();
        let vm = variance_e_m(&s_noisy, &Identity, &beta).unwrap();
        let shifted = Sample::new(
            s.indices().to_vec(),
            s_noisy.y().map(|v| v - 0.4),
            s.x().clone(),
            s.pi().clone(),
            None,
            *s.design(),
            s.pop_n(),
        )
        .unwrap();
        let vlin = variance_e_with(
            &shifted,
            &DVector::from_row_slice(&[1.3]),
            ResidualConvention::Raw,
        )
        .unwrap();
        assert_abs_diff_eq!(vm, vlin, epsilon = 1e-12);
    }

    #[test]
    fn variance_e_m_zero_residuals_and_srs_closed_form() {
        // y exactly at the model mean gives zero variance.
        let x = DMatrix::from_row_slice(3, 1, &[0.5, -0.2, 1.0]);
        let beta = DVector::from_row_slice(&[0.1, 0.7]);
        let y: Vec<f64> = (0..3).map(|i| Logistic.mean(&[x[(i, 0)]], &beta)).collect();
        let s = make_sample(&y, x, &[0.5; 3], 6);
        assert_abs_diff_eq!(
            variance_e_m(&s, &Logistic, &beta).unwrap(),
            0.0,
            epsilon = 1e-18
        );

        // SRS closed form on N = 6, n = 3 binary data.
        let x = DMatrix::from_row_slice(3, 1, &[0.4, -1.0, 0.3]);
        let y = [1.0, 0.0, 1.0];
        let n = 3;
        let s = Sample::new(
            (0..n).collect(),
            DVector::from_row_slice(&y),
            x.clone(),
            DVector::from_element(n, 0.5),
            None,
            DesignSpec { scheme: SamplingScheme::Srs, n, pairwise: PairwisePolicy::ExactSrs },
            6,
        )
        .unwrap();
        let v = variance_e_m(&s, &Logistic, &beta).unwrap();
        let resid: Vec<f64> = (0..3)
            .map(|i| y[i] - Logistic.mean(&[x[(i, 0)]], &beta))
            .collect();
        let mean = resid.iter().sum::<f64>() / 3.0;
        let s2 = resid.iter().map(|&e| (e - mean) * (e - mean)).sum::<f64>() / 2.0;
        let closed = (1.0 - 0.5) * s2 / 3.0;
        assert_abs_diff_eq!(v, closed, epsilon = 1e-12);
    }

    fn logistic_population(pop_n: usize, p: usize, seed: u64) -> FinitePopulation {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = NormalDist::new(0.0, 1.0).unwrap();
        let x = DMatrix::from_fn(pop_n, p, |_, _| normal.sample(&mut rng));
        let y: Vec<f64> = (0..pop_n)
            .map(|i| {
                let eta = -0.5 + x[(i, 0)] - 0.5 * x[(i, 1)];
                if rng.random::<f64>() < sigmoid(eta) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        FinitePopulation::new(y, x, None, None).unwrap()
    }

    #[test]
    fn posterior_glm_shapes_and_determinism() {
        let pop = logistic_population(2000, 2, 21);
        let s = draw_sample(&pop, &DesignSpec::srs(150), 5).unwrap();
        let cfg = McmcConfig { n_draws: 1, burn_in: 0, seed: 3, thin: 1 };
        let d = run_posterior_glm(&s, pop.x(), &Logistic, &PriorSpec::Flat, &cfg).unwrap();
        assert_eq!(d.beta.nrows(), 1);
        assert_eq!(d.beta.ncols(), 3);
        assert_eq!(d.ybar.len(), 1);

        let cfg = McmcConfig { n_draws: 40, burn_in: 10, seed: 8, thin: 1 };
        for prior in [
            PriorSpec::Flat,
            PriorSpec::Laplace { a: 1.0, b: 1.0 },
            PriorSpec::Horseshoe,
        ] {
            let d1 = run_posterior_glm(&s, pop.x(), &Logistic, &prior, &cfg).unwrap();
            let d2 = run_posterior_glm(&s, pop.x(), &Logistic, &prior, &cfg).unwrap();
            assert_eq!(d1.beta, d2.beta);
            assert_eq!(d1.ybar, d2.ybar);
        }
    }

    #[test]
    fn posterior_glm_flat_centers_on_the_plugin_estimate() {
        let pop = logistic_population(5000, 2, 33);
        let s = draw_sample(&pop, &DesignSpec::srs(800), 11).unwrap();
        let fit = solve_ee(&s, &Logistic, None).unwrap();
        let point = model_assisted_mean(pop.x(), &s, &Logistic, &fit.beta).unwrap();
        let sd = variance_e_m(&s, &Logistic, &fit.beta).unwrap().sqrt();
        let cfg = McmcConfig { n_draws: 2000, burn_in: 200, seed: 17, thin: 1 };
        let d = run_posterior_glm(&s, pop.x(), &Logistic, &PriorSpec::Flat, &cfg).unwrap();
        let mean = d.ybar.iter().sum::<f64>() / d.ybar.len() as f64;
        assert!(
            (mean - point).abs() <= 0.5 * sd,
            "posterior mean {mean} vs estimate {point} (sd {sd})"
        );
    }
}
