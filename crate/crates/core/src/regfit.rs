//! Design-weighted regression: plain least squares with a sandwich
//! covariance, penalized variants via coordinate descent, cross-validation
//! for the penalty level, and greedy forward selection.
//!
//! The weighted loss is `sum_A pi_i^{-1} (y_i - b0 - x_i' b1)^2`. Penalties
//! act on the slope block only; the intercept is never penalized.
//!
//! Penalty scaling convention: predictors are internally centered and
//! scaled to unit design-weighted variance before penalization, and
//! coefficients are mapped back to the original scale. Equivalently, in
//! original units the lasso penalty is `lambda * sum_j s_j |b1_j|` with
//! `s_j` the weighted standard deviation of column `j`, and the univariate
//! soft-threshold constant is `lambda / 2` on the standardized scale (the
//! loss carries no 1/2 factor). The adaptive lasso penalty
//! `lambda * sum_j |b1_j| / |pilot_j|` is scale-free and is applied in
//! original units directly.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SvyError;
use crate::survey::{design_quad_matrix, Sample};
use crate::Result;

const WLS_RANK_TOL: f64 = 1e-10;
const WLS_JITTER: f64 = 1e-10;
const CD_MAX_SWEEPS: usize = 10_000;
const CD_COEF_TOL: f64 = 1e-10;
const CD_KKT_TOL: f64 = 1e-9;

/// Design-weighted least-squares fit with its sandwich covariance.
#[derive(Debug, Clone)]
pub struct RegressionFit {
    pub beta0: f64,
    pub beta1: DVector<f64>,
    /// (p+1) x (p+1) sandwich covariance of (b0, b1); entry (0,0) is the
    /// intercept block.
    pub vbeta: DMatrix<f64>,
    pub residuals: DVector<f64>,
    /// Ridge added to the normal matrix when it was near-singular (0 if none).
    pub jitter: f64,
}

impl RegressionFit {
    /// Slope block of the sandwich covariance.
    pub fn vbeta11(&self) -> DMatrix<f64> {
        let p = self.beta1.len();
        self.vbeta.view((1, 1), (p, p)).into_owned()
    }

    pub fn coefficients(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.beta1.len() + 1);
        out[0] = self.beta0;
        out.rows_mut(1, self.beta1.len()).copy_from(&self.beta1);
        out
    }
}

/// Penalty applied to the slope block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PenaltySpec {
    None,
    Ridge { lambda: f64 },
    Lasso { lambda: f64 },
    AdaptiveLasso { lambda: f64, pilot: Vec<f64> },
    ElasticNet { lambda1: f64, lambda2: f64 },
}

impl PenaltySpec {
    fn validate(&self, p: usize) -> Result<()> {
        let ok = |l: f64| l.is_finite() && l >= 0.0;
        match self {
            PenaltySpec::None => Ok(()),
            PenaltySpec::Ridge { lambda } | PenaltySpec::Lasso { lambda } => {
                if ok(*lambda) {
                    Ok(())
                } else {
                    Err(SvyError::invalid("penalty level must be finite and nonnegative"))
                }
            }
            PenaltySpec::AdaptiveLasso { lambda, pilot } => {
                if !ok(*lambda) {
                    return Err(SvyError::invalid("penalty level must be finite and nonnegative"));
                }
                if pilot.len() != p {
                    return Err(SvyError::dim(
                        "adaptive-lasso pilot must have one entry per column",
                    ));
                }
                if pilot.iter().any(|&v| v == 0.0 || !v.is_finite()) {
                    return Err(SvyError::invalid("adaptive-lasso pilot entries must be nonzero"));
                }
                Ok(())
            }
            PenaltySpec::ElasticNet { lambda1, lambda2 } => {
                if ok(*lambda1) && ok(*lambda2) {
                    Ok(())
                } else {
                    Err(SvyError::invalid("penalty levels must be finite and nonnegative"))
                }
            }
        }
    }
}

/// Penalty family used when cross-validating a single level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PenaltyFamily {
    Lasso,
    Ridge,
    AdaptiveLasso,
    /// Elastic net with a fixed split: `lambda1 = (1 - l2_share) * lambda`,
    /// `lambda2 = l2_share * lambda`.
    ElasticNet { l2_share: f64 },
}

/// Held-out loss used by cross-validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CvLoss {
    /// Design-weighted squared error (default).
    PiWeighted,
    Unweighted,
}

// ---------------------------------------------------------------------------
// Weighted least squares
// ---------------------------------------------------------------------------

/// Fit the design-weighted least-squares regression of `y` on an intercept
/// and the sample's auxiliary columns, with the sandwich covariance
/// evaluated under the sample's pairwise policy.
pub fn fit_wls(sample: &Sample) -> Result<RegressionFit> {
    fit_wls_design(sample, sample.x())
}

pub(crate) fn fit_wls_design(sample: &Sample, x: &DMatrix<f64>) -> Result<RegressionFit> {
    let n = sample.n();
    let p = x.ncols();
    if n <= p + 1 {
        return Err(SvyError::TooFewObservations(format!(
            "need more than {} observations to fit {} coefficients",
            p + 1,
            p + 1
        )));
    }
    let w = sample.weights();
    let mut aug = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        aug[(i, 0)] = 1.0;
    }
    aug.view_mut((0, 1), (n, p)).copy_from(x);

    // Normal matrix and right-hand side.
    let mut m = DMatrix::zeros(p + 1, p + 1);
    let mut rhs = DVector::zeros(p + 1);
    for i in 0..n {
        let row = aug.row(i).transpose();
        m.syger(w[i], &row, &row, 1.0);
        rhs.axpy(w[i] * sample.y()[i], &row, 1.0);
    }
    for r in 0..=p {
        for c in (r + 1)..=p {
            m[(r, c)] = m[(c, r)];
        }
    }

    let svd = m.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin < smax * WLS_RANK_TOL {
        return Err(SvyError::RankDeficient);
    }

    let mut jitter = 0.0;
    let chol = match nalgebra::Cholesky::new(m.clone()) {
        Some(c) => c,
        None => {
            jitter = WLS_JITTER * m.trace() / (p + 1) as f64;
            let mut mj = m.clone();
            for d in 0..=p {
                mj[(d, d)] += jitter;
            }
            nalgebra::Cholesky::new(mj).ok_or(SvyError::RankDeficient)?
        }
    };
    let beta = chol.solve(&rhs);
    let fitted = &aug * &beta;
    let residuals = sample.y() - fitted;

    // Middle term of the sandwich: pairwise quadratic form over rows
    // e_i * xaug_i.
    let mut score_rows = DMatrix::zeros(n, p + 1);
    for i in 0..n {
        for c in 0..=p {
            score_rows[(i, c)] = residuals[i] * aug[(i, c)];
        }
    }
    let ctx = sample.pair_ctx();
    let middle = design_quad_matrix(&ctx, sample.pi().as_slice(), &score_rows)?;
    let minv = chol.inverse();
    let mut vbeta = &minv * middle * &minv;
    symmetrize(&mut vbeta);

    Ok(RegressionFit {
        beta0: beta[0],
        beta1: beta.rows(1, p).into_owned(),
        vbeta,
        residuals,
        jitter,
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let q = m.nrows();
    for r in 0..q {
        for c in (r + 1)..q {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

/// Slope estimate through the centered normal equations
/// `{sum w (x - xbar_w)(x - xbar_w)'}^{-1} sum w (x - xbar_w) y`; agrees
/// with the intercept-augmented solve and is kept as the second algebraic
/// route for tests.
#[allow(dead_code)]
pub(crate) fn beta1_centered(sample: &Sample) -> Result<DVector<f64>> {
    let n = sample.n();
    let p = sample.n_aux();
    let w = sample.weights();
    let sum_w: f64 = w.iter().sum();
    let mut xbar = DVector::zeros(p);
    for i in 0..n {
        xbar.axpy(w[i] / sum_w, &sample.x().row(i).transpose(), 1.0);
    }
    let mut m = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for i in 0..n {
        let xc = sample.x().row(i).transpose() - &xbar;
        m.syger(w[i], &xc, &xc, 1.0);
        rhs.axpy(w[i] * sample.y()[i], &xc, 1.0);
    }
    for r in 0..p {
        for c in (r + 1)..p {
            m[(r, c)] = m[(c, r)];
        }
    }
    nalgebra::Cholesky::new(m)
        .map(|c| c.solve(&rhs))
        .ok_or(SvyError::RankDeficient)
}

// ---------------------------------------------------------------------------
// Penalized fits
// ---------------------------------------------------------------------------

/// Centered and standardized working data for coordinate descent.
pub(crate) struct StandardizedProblem {
    pub(crate) u: DMatrix<f64>,
    pub(crate) y_c: DVector<f64>,
    pub(crate) w: DVector<f64>,
    sum_w: f64,
    pub(crate) scale: DVector<f64>,
    xbar: DVector<f64>,
    ybar: f64,
    active: Vec<bool>,
}

impl StandardizedProblem {
    pub(crate) fn new(sample: &Sample) -> Self {
        let n = sample.n();
        let p = sample.n_aux();
        let w = sample.weights();
        let sum_w: f64 = w.iter().sum();
        let mut xbar = DVector::zeros(p);
        for i in 0..n {
            xbar.axpy(w[i] / sum_w, &sample.x().row(i).transpose(), 1.0);
        }
        let ybar = sample
            .y()
            .iter()
            .zip(w.iter())
            .map(|(&y, &wi)| wi * y)
            .sum::<f64>()
            / sum_w;
        let mut scale = DVector::zeros(p);
        for j in 0..p {
            let mut s2 = 0.0;
            for i in 0..n {
                let d = sample.x()[(i, j)] - xbar[j];
                s2 += w[i] * d * d;
            }
            scale[j] = (s2 / sum_w).sqrt();
        }
        let active: Vec<bool> = scale.iter().map(|&s| s > 0.0).collect();
        let mut u = DMatrix::zeros(n, p);
        for j in 0..p {
            if !active[j] {
                continue;
            }
            for i in 0..n {
                u[(i, j)] = (sample.x()[(i, j)] - xbar[j]) / scale[j];
            }
        }
        let y_c = DVector::from_iterator(n, sample.y().iter().map(|&y| y - ybar));
        Self { u, y_c, w, sum_w, scale, xbar, ybar, active }
    }

    fn p(&self) -> usize {
        self.scale.len()
    }

    /// Per-coordinate (soft-threshold, denominator shift) pair on the
    /// standardized scale.
    fn coordinate_terms(&self, penalty: &PenaltySpec, j: usize) -> (f64, f64) {
        match penalty {
            PenaltySpec::None => (0.0, 0.0),
            PenaltySpec::Ridge { lambda } => (0.0, *lambda),
            PenaltySpec::Lasso { lambda } => (lambda / 2.0, 0.0),
            PenaltySpec::ElasticNet { lambda1, lambda2 } => (lambda1 / 2.0, *lambda2),
            PenaltySpec::AdaptiveLasso { lambda, pilot } => {
                (lambda / (2.0 * self.scale[j] * pilot[j].abs()), 0.0)
            }
        }
    }

    fn penalty_value(&self, penalty: &PenaltySpec, b: &DVector<f64>) -> f64 {
        (0..self.p())
            .filter(|&j| self.active[j])
            .map(|j| {
                let (thresh, shift) = self.coordinate_terms(penalty, j);
                2.0 * thresh * b[j].abs() + shift * b[j] * b[j]
            })
            .sum()
    }

    /// Cyclic coordinate descent on the standardized scale, warm-startable.
    /// Convergence requires both a small coefficient change and a small
    /// stationarity (subgradient) residual.
    pub(crate) fn solve(
        &self,
        penalty: &PenaltySpec,
        warm: Option<&DVector<f64>>,
    ) -> Result<DVector<f64>> {
        let n = self.u.nrows();
        let p = self.p();
        let mut b = warm.cloned().unwrap_or_else(|| DVector::zeros(p));
        let mut r = self.y_c.clone();
        for j in 0..p {
            if b[j] != 0.0 {
                for i in 0..n {
                    r[i] -= self.u[(i, j)] * b[j];
                }
            }
        }
        let mut prev_obj = self.weighted_sse(&r) + self.penalty_value(penalty, &b);
        for _sweep in 0..CD_MAX_SWEEPS {
            let mut max_delta: f64 = 0.0;
            for j in 0..p {
                if !self.active[j] {
                    continue;
                }
                let (thresh, shift) = self.coordinate_terms(penalty, j);
                let mut grad = 0.0;
                for i in 0..n {
                    grad += self.w[i] * self.u[(i, j)] * r[i];
                }
                let rho = grad + self.sum_w * b[j];
                let new = soft_threshold(rho, thresh) / (self.sum_w + shift);
                let delta = new - b[j];
                if delta != 0.0 {
                    for i in 0..n {
                        r[i] -= self.u[(i, j)] * delta;
                    }
                    b[j] = new;
                    max_delta = max_delta.max(delta.abs());
                }
            }
            let obj = self.weighted_sse(&r) + self.penalty_value(penalty, &b);
            debug_assert!(
                obj <= prev_obj * (1.0 + 1e-10) + 1e-12,
                "coordinate descent objective increased: {prev_obj} -> {obj}"
            );
            prev_obj = obj;
            if max_delta <= CD_COEF_TOL && self.kkt_residual(penalty, &b, &r) <= CD_KKT_TOL {
                return Ok(b);
            }
        }
        Err(SvyError::NonConvergence(format!(
            "coordinate descent did not converge in {CD_MAX_SWEEPS} sweeps"
        )))
    }

    fn weighted_sse(&self, r: &DVector<f64>) -> f64 {
        r.iter().zip(self.w.iter()).map(|(&ri, &wi)| wi * ri * ri).sum()
    }

    /// Largest per-coordinate violation of the stationarity conditions on
    /// the standardized scale.
    pub(crate) fn kkt_residual(
        &self,
        penalty: &PenaltySpec,
        b: &DVector<f64>,
        r: &DVector<f64>,
    ) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.p() {
            if !self.active[j] {
                continue;
            }
            let (thresh, shift) = self.coordinate_terms(penalty, j);
            let mut grad = 0.0;
            for i in 0..self.u.nrows() {
                grad += self.w[i] * self.u[(i, j)] * r[i];
            }
            let g = 2.0 * grad; // negative gradient of the weighted SSE
            let viol = if b[j] != 0.0 {
                (g - 2.0 * shift * b[j] - 2.0 * thresh * b[j].signum()).abs()
            } else {
                (g.abs() - 2.0 * thresh).max(0.0)
            };
            worst = worst.max(viol);
        }
        worst
    }

    /// Map standardized coefficients back to the original scale, restoring
    /// the unpenalized intercept.
    pub(crate) fn to_original(&self, b: &DVector<f64>) -> DVector<f64> {
        let p = self.p();
        let mut out = DVector::zeros(p + 1);
        let mut b0 = self.ybar;
        for j in 0..p {
            let beta_j = if self.active[j] { b[j] / self.scale[j] } else { 0.0 };
            out[j + 1] = beta_j;
            b0 -= beta_j * self.xbar[j];
        }
        out[0] = b0;
        out
    }

    /// Smallest penalty level that zeroes every slope for the lasso family.
    fn lambda_max(&self) -> f64 {
        let mut best: f64 = 0.0;
        for j in 0..self.p() {
            if !self.active[j] {
                continue;
            }
            let mut grad = 0.0;
            for i in 0..self.u.nrows() {
                grad += self.w[i] * self.u[(i, j)] * self.y_c[i];
            }
            best = best.max(2.0 * grad.abs());
        }
        best
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return z;
    }
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Minimize the penalized design-weighted loss; returns `(b0, b1)` as a
/// `(p+1)`-vector on the original scale.
pub fn fit_penalized(sample: &Sample, penalty: &PenaltySpec) -> Result<DVector<f64>> {
    penalty.validate(sample.n_aux())?;
    if sample.n() < 2 {
        return Err(SvyError::TooFewObservations(
            "penalized fit needs at least two observations".into(),
        ));
    }
    let prob = StandardizedProblem::new(sample);
    let b = prob.solve(penalty, None)?;
    Ok(prob.to_original(&b))
}

/// Default penalty path: `n_points` log-spaced levels from the smallest
/// all-zero level down to `1e-4` times it, sorted descending.
pub fn lambda_grid(sample: &Sample, n_points: usize) -> Vec<f64> {
    let prob = StandardizedProblem::new(sample);
    let lmax = prob.lambda_max().max(1e-12);
    if n_points <= 1 {
        return vec![lmax];
    }
    let lmin = lmax * 1e-4;
    let step = (lmax.ln() - lmin.ln()) / (n_points - 1) as f64;
    (0..n_points).map(|k| (lmax.ln() - k as f64 * step).exp()).collect()
}

fn family_penalty(
    family: PenaltyFamily,
    lambda: f64,
    pilot: Option<&DVector<f64>>,
) -> Result<PenaltySpec> {
    Ok(match family {
        PenaltyFamily::Lasso => PenaltySpec::Lasso { lambda },
        PenaltyFamily::Ridge => PenaltySpec::Ridge { lambda },
        PenaltyFamily::ElasticNet { l2_share } => {
            if !(0.0..=1.0).contains(&l2_share) {
                return Err(SvyError::invalid("elastic-net l2 share must lie in [0, 1]"));
            }
            PenaltySpec::ElasticNet {
                lambda1: (1.0 - l2_share) * lambda,
                lambda2: l2_share * lambda,
            }
        }
        PenaltyFamily::AdaptiveLasso => {
            let pilot = pilot.ok_or_else(|| {
                SvyError::invalid("adaptive lasso requires a pilot fit on the training folds")
            })?;
            PenaltySpec::AdaptiveLasso {
                lambda,
                pilot: pilot
                    .iter()
                    .map(|&v| if v.abs() < 1e-8 { 1e-8 } else { v })
                    .collect(),
            }
        }
    })
}

/// K-fold cross-validation over a descending penalty grid, minimizing the
/// design-weighted held-out squared error by default. Ties break toward the
/// larger level; deterministic for a fixed seed.
pub fn cv_select_lambda(
    sample: &Sample,
    family: PenaltyFamily,
    folds: usize,
    grid: &[f64],
    seed: u64,
) -> Result<f64> {
    cv_select_lambda_with(sample, family, folds, grid, seed, CvLoss::PiWeighted)
}

/// [`cv_select_lambda`] with an explicit held-out loss.
pub fn cv_select_lambda_with(
    sample: &Sample,
    family: PenaltyFamily,
    folds: usize,
    grid: &[f64],
    seed: u64,
    loss: CvLoss,
) -> Result<f64> {
    if folds < 2 {
        return Err(SvyError::invalid("cross-validation needs at least two folds"));
    }
    if grid.is_empty() {
        return Err(SvyError::invalid("penalty grid must be nonempty"));
    }
    if grid.windows(2).any(|w| w[0] < w[1]) {
        return Err(SvyError::invalid("penalty grid must be sorted descending"));
    }
    let n = sample.n();
    if n / folds < 2 {
        return Err(SvyError::TooFewObservations(format!(
            "{folds}-fold split of {n} observations leaves folds with fewer than 2"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut fold_of = vec![0usize; n];
    for (rank, &pos) in order.iter().enumerate() {
        fold_of[pos] = rank % folds;
    }

    let mut total_err = vec![0.0f64; grid.len()];
    for fold in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != fold).collect();
        let held: Vec<usize> = (0..n).filter(|&i| fold_of[i] == fold).collect();
        let train_sample = sample.subset(&train)?;
        let prob = StandardizedProblem::new(&train_sample);
        let pilot = if matches!(family, PenaltyFamily::AdaptiveLasso) {
            Some(fit_wls(&train_sample)?.beta1)
        } else {
            None
        };
        let mut warm: Option<DVector<f64>> = None;
        for (g, &lambda) in grid.iter().enumerate() {
            let penalty = family_penalty(family, lambda, pilot.as_ref())?;
            let b = prob.solve(&penalty, warm.as_ref())?;
            let coef = prob.to_original(&b);
            let mut err = 0.0;
            let mut norm = 0.0;
            for &i in &held {
                let mut pred = coef[0];
                for j in 0..sample.n_aux() {
                    pred += coef[j + 1] * sample.x()[(i, j)];
                }
                let d = sample.y()[i] - pred;
                let wi = match loss {
                    CvLoss::PiWeighted => 1.0 / sample.pi()[i],
                    CvLoss::Unweighted => 1.0,
                };
                err += wi * d * d;
                norm += wi;
            }
            total_err[g] += err / norm;
            warm = Some(b);
        }
    }

    let mut best = 0usize;
    for g in 1..grid.len() {
        if total_err[g] < total_err[best] {
            best = g;
        }
    }
    Ok(grid[best])
}

/// Greedy forward selection maximizing the design-weighted adjusted
/// coefficient of determination; stops when no single addition improves it.
/// Returns the selected column indices and the least-squares fit on them.
pub fn forward_select(sample: &Sample) -> Result<(Vec<usize>, RegressionFit)> {
    let n = sample.n();
    if n <= 2 {
        return Err(SvyError::TooFewObservations(
            "forward selection needs more than two observations".into(),
        ));
    }
    let p = sample.n_aux();
    let w = sample.weights();
    let sum_w: f64 = w.iter().sum();
    let ybar = sample
        .y()
        .iter()
        .zip(w.iter())
        .map(|(&y, &wi)| wi * y)
        .sum::<f64>()
        / sum_w;
    let sst: f64 = sample
        .y()
        .iter()
        .zip(w.iter())
        .map(|(&y, &wi)| wi * (y - ybar) * (y - ybar))
        .sum();

    let adjusted = |sse: f64, k: usize| -> f64 {
        if sst <= 0.0 {
            return 0.0;
        }
        let r2 = 1.0 - sse / sst;
        1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n as f64 - k as f64 - 1.0)
    };

    let mut selected: Vec<usize> = Vec::new();
    let mut current_adj = 0.0; // null model
    loop {
        if n <= selected.len() + 2 {
            break;
        }
        let mut best: Option<(usize, f64)> = None;
        for j in 0..p {
            if selected.contains(&j) {
                continue;
            }
            let mut cols = selected.clone();
            cols.push(j);
            let x = columns(sample.x(), &cols);
            let fit = match fit_wls_design(sample, &x) {
                Ok(f) => f,
                Err(SvyError::RankDeficient) => continue,
                Err(e) => return Err(e),
            };
            let sse: f64 = fit
                .residuals
                .iter()
                .zip(w.iter())
                .map(|(&r, &wi)| wi * r * r)
                .sum();
            let adj = adjusted(sse, cols.len());
            if best.map_or(true, |(_, a)| adj > a) {
                best = Some((j, adj));
            }
        }
        match best {
            Some((j, adj)) if adj > current_adj => {
                selected.push(j);
                current_adj = adj;
            }
            _ => break,
        }
    }
    selected.sort_unstable();
    let fit = fit_wls_design(sample, &columns(sample.x(), &selected))?;
    Ok((selected, fit))
}

fn columns(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(x.nrows(), cols.len());
    for (c, &j) in cols.iter().enumerate() {
        out.column_mut(c).copy_from(&x.column(j));
    }
    out
}

/// Expand a fit on selected columns into a full-length slope vector with
/// zeros elsewhere.
pub fn expand_selection(p: usize, selected: &[usize], beta1: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(p);
    for (k, &j) in selected.iter().enumerate() {
        out[j] = beta1[k];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::survey::{DesignSpec, PairwisePolicy, Sample, SamplingScheme};
    use approx::assert_abs_diff_eq;
    use rand_distr::Distribution;

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

    fn random_sample(n: usize, p: usize, seed: u64, noise: f64) -> (Sample, DVector<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let x = DMatrix::from_fn(n, p, |_, _| normal.sample(&mut rng));
        let mut beta = DVector::zeros(p);
        for j in 0..p.min(3) {
            beta[j] = (j as f64 + 1.0) * if j % 2 == 0 { 1.0 } else { -1.0 };
        }
        let y: Vec<f64> = (0..n)
            .map(|i| 0.5 + x.row(i).transpose().dot(&beta) + noise * normal.sample(&mut rng))
            .collect();
        let pi: Vec<f64> = (0..n).map(|_| 0.1 + 0.8 * rng.random::<f64>()).collect();
        (make_sample(&y, x, &pi, n * 10), beta)
    }

    #[test]
    fn orthonormal_centered_design_gives_componentwise_slopes() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0]);
        let y = [2.0, 0.5, -0.5, 1.0];
        let s = make_sample(&y, x.clone(), &[0.25; 4], 16);
        let fit = fit_wls(&s).unwrap();
        for j in 0..2 {
            let expect = (0..4).map(|i| x[(i, j)] * y[i]).sum::<f64>() / 4.0;
            assert_abs_diff_eq!(fit.beta1[j], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn exact_linear_data_fits_exactly_with_zero_sandwich() {
        let x = DMatrix::from_row_slice(5, 1, &[0.0, 1.0, 2.0, 3.0, 4.0]);
        let y: Vec<f64> = (0..5).map(|i| 2.0 + 3.0 * i as f64).collect();
        let s = make_sample(&y, x, &[0.4, 0.3, 0.5, 0.2, 0.25], 50);
        let fit = fit_wls(&s).unwrap();
        assert_abs_diff_eq!(fit.beta0, 2.0, epsilon = 1e-10);
        assert_abs_diff_eq!(fit.beta1[0], 3.0, epsilon = 1e-10);
        assert!(fit.residuals.iter().all(|&r| r.abs() < 1e-10));
        assert!(fit.vbeta.iter().all(|&v| v.abs() < 1e-18));
    }

    #[test]
    fn unequal_weight_toy_matches_direct_normal_equation_solve() {
        let (s, _) = random_sample(6, 2, 42, 0.7);
        let fit = fit_wls(&s).unwrap();

        // Independent route: assemble and LU-solve the augmented system.
        let n = 6;
        let mut m = DMatrix::zeros(3, 3);
        let mut rhs = DVector::zeros(3);
        for i in 0..n {
            let xi = DVector::from_row_slice(&[1.0, s.x()[(i, 0)], s.x()[(i, 1)]]);
            let w = 1.0 / s.pi()[i];
            m += w * &xi * xi.transpose();
            rhs += w * s.y()[i] * xi;
        }
        let direct = m.lu().solve(&rhs).unwrap();
        assert_abs_diff_eq!(fit.beta0, direct[0], epsilon = 1e-10);
        assert_abs_diff_eq!(fit.beta1[0], direct[1], epsilon = 1e-10);
        assert_abs_diff_eq!(fit.beta1[1], direct[2], epsilon = 1e-10);
    }

    #[test]
    fn centered_and_augmented_routes_agree() {
        for seed in [1u64, 2, 3, 9] {
            let (s, _) = random_sample(40, 4, seed, 1.0);
            let fit = fit_wls(&s).unwrap();
            let centered = beta1_centered(&s).unwrap();
            for j in 0..4 {
                assert_abs_diff_eq!(fit.beta1[j], centered[j], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn census_sandwich_vanishes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let n = 30;
        let x = DMatrix::from_fn(n, 2, |_, _| normal.sample(&mut rng));
        let y: Vec<f64> = (0..n)
            .map(|i| x[(i, 0)] - x[(i, 1)] + normal.sample(&mut rng))
            .collect();
        let pop = crate::survey::FinitePopulation::new(y, x, None, None).unwrap();
        let s = Sample::census(&pop, PairwisePolicy::ExactSrs);
        let fit = fit_wls(&s).unwrap();
        assert!(fit.vbeta.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn rank_deficient_design_is_rejected() {
        let mut x = DMatrix::zeros(10, 2);
        for i in 0..10 {
            x[(i, 0)] = i as f64;
            x[(i, 1)] = 2.0 * i as f64; // exact collinearity
        }
        let y: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let s = make_sample(&y, x, &[0.5; 10], 100);
        assert!(matches!(fit_wls(&s), Err(SvyError::RankDeficient)));
    }

    #[test]
    fn too_few_observations_is_rejected() {
        let (s, _) = random_sample(5, 4, 11, 1.0);
        assert!(matches!(fit_wls(&s), Err(SvyError::TooFewObservations(_))));
    }

    #[test]
    fn huge_lasso_penalty_collapses_to_the_weighted_mean() {
        let (s, _) = random_sample(30, 3, 5, 1.0);
        let coef = fit_penalized(&s, &PenaltySpec::Lasso { lambda: 1e9 }).unwrap();
        for j in 1..=3 {
            assert_abs_diff_eq!(coef[j], 0.0, epsilon = 0.0);
        }
        let w = s.weights();
        let hajek = s.y().dot(&w) / w.sum();
        assert_abs_diff_eq!(coef[0], hajek, epsilon = 1e-12);
    }

    #[test]
    fn zero_penalty_reproduces_least_squares() {
        let (s, _) = random_sample(40, 4, 13, 0.9);
        let fit = fit_wls(&s).unwrap();
        for penalty in [PenaltySpec::None, PenaltySpec::Lasso { lambda: 0.0 }] {
            let coef = fit_penalized(&s, &penalty).unwrap();
            assert_abs_diff_eq!(coef[0], fit.beta0, epsilon = 1e-8);
            for j in 0..4 {
                assert_abs_diff_eq!(coef[j + 1], fit.beta1[j], epsilon = 1e-8);
            }
        }
    }

    /// Closed-form ridge oracle on standardized columns:
    /// `(U' W U + lambda I)^{-1} U' W y_c`, mapped back through the scales.
    #[test]
    fn ridge_matches_its_closed_form() {
        let (s, _) = random_sample(25, 2, 21, 0.6);
        let lambda = 3.7;
        let coef = fit_penalized(&s, &PenaltySpec::Ridge { lambda }).unwrap();

        let prob = StandardizedProblem::new(&s);
        let mut m = DMatrix::zeros(2, 2);
        let mut rhs = DVector::zeros(2);
        for i in 0..s.n() {
            let ui = prob.u.row(i).transpose();
            m += prob.w[i] * &ui * ui.transpose();
            rhs += prob.w[i] * prob.y_c[i] * ui;
        }
        m[(0, 0)] += lambda;
        m[(1, 1)] += lambda;
        let b = m.lu().solve(&rhs).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(coef[j + 1], b[j] / prob.scale[j], epsilon = 1e-8);
        }
    }

    /// Univariate soft-threshold oracle. With a column prescaled to unit
    /// weighted variance the standardized and original scales coincide and
    /// the solution is `S(sum w x~ y~, lambda/2) / sum w x~^2` exactly.
    #[test]
    fn lasso_univariate_matches_soft_threshold_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let n = 12;
        let raw: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let pi: Vec<f64> = (0..n).map(|_| 0.2 + 0.6 * rng.random::<f64>()).collect();
        let w: Vec<f64> = pi.iter().map(|&p| 1.0 / p).collect();
        let sum_w: f64 = w.iter().sum();
        let xbar = raw.iter().zip(&w).map(|(&x, &wi)| wi * x).sum::<f64>() / sum_w;
        let sd = (raw
            .iter()
            .zip(&w)
            .map(|(&x, &wi)| wi * (x - xbar) * (x - xbar))
            .sum::<f64>()
            / sum_w)
            .sqrt();
        let x: Vec<f64> = raw.iter().map(|&v| (v - xbar) / sd + 0.3).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|&xi| 1.2 * xi + 0.4 * normal.sample(&mut rng))
            .collect();
        let s = make_sample(&y, DMatrix::from_column_slice(n, 1, &x), &pi, 200);

        for &lambda in &[0.1, 1.0, 5.0, 40.0] {
            let coef = fit_penalized(&s, &PenaltySpec::Lasso { lambda }).unwrap();
            // Weighted-centered data for the closed form.
            let xb = x.iter().zip(&w).map(|(&v, &wi)| wi * v).sum::<f64>() / sum_w;
            let yb = y.iter().zip(&w).map(|(&v, &wi)| wi * v).sum::<f64>() / sum_w;
            let sxy: f64 = x
                .iter()
                .zip(&y)
                .zip(&w)
                .map(|((&xi, &yi), &wi)| wi * (xi - xb) * (yi - yb))
                .sum();
            let sxx: f64 = x
                .iter()
                .zip(&w)
                .map(|(&xi, &wi)| wi * (xi - xb) * (xi - xb))
                .sum();
            // Column has unit weighted variance, so sxx = sum_w and the
            // plain formula applies.
            assert_abs_diff_eq!(sxx, sum_w, epsilon = 1e-8);
            let expect = soft_threshold(sxy, lambda / 2.0) / sxx;
            assert_abs_diff_eq!(coef[1], expect, epsilon = 1e-10);
        }
    }

    /// Same oracle on an unscaled column: the documented convention makes
    /// the effective threshold `s * lambda / 2` in original units.
    #[test]
    fn lasso_univariate_threshold_carries_the_scale_factor() {
        let x = [0.5, 2.0, 3.5, 5.0, 7.5, 9.0];
        let y = [1.0, 2.4, 4.1, 5.2, 8.3, 9.1];
        let pi = [0.5, 0.25, 0.4, 0.5, 0.2, 0.4];
        let s = make_sample(&y, DMatrix::from_column_slice(6, 1, &x), &pi, 60);
        let w: Vec<f64> = pi.iter().map(|&p| 1.0 / p).collect();
        let sum_w: f64 = w.iter().sum();
        let xb = x.iter().zip(&w).map(|(&v, &wi)| wi * v).sum::<f64>() / sum_w;
        let yb = y.iter().zip(&w).map(|(&v, &wi)| wi * v).sum::<f64>() / sum_w;
        let sxy: f64 = (0..6).map(|i| w[i] * (x[i] - xb) * (y[i] - yb)).sum();
        let sxx: f64 = (0..6).map(|i| w[i] * (x[i] - xb) * (x[i] - xb)).sum();
        let sd = (sxx / sum_w).sqrt();
        for &lambda in &[0.5, 4.0, 20.0] {
            let coef = fit_penalized(&s, &PenaltySpec::Lasso { lambda }).unwrap();
            let expect = soft_threshold(sxy, sd * lambda / 2.0) / sxx;
            assert_abs_diff_eq!(coef[1], expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn lasso_kkt_certificate_holds_on_random_instances() {
        for seed in [4u64, 8, 15, 16] {
            let (s, _) = random_sample(60, 8, seed, 1.2);
            let prob = StandardizedProblem::new(&s);
            for &lambda in &[0.05, 0.5, 5.0] {
                let penalty = PenaltySpec::Lasso { lambda };
                let b = prob.solve(&penalty, None).unwrap();
                let mut r = prob.y_c.clone();
                for j in 0..8 {
                    for i in 0..s.n() {
                        r[i] -= prob.u[(i, j)] * b[j];
                    }
                }
                assert!(prob.kkt_residual(&penalty, &b, &r) <= 1e-8);
            }
        }
    }

    #[test]
    fn lasso_norm_is_nonincreasing_along_the_grid() {
        let (s, _) = random_sample(80, 10, 51, 1.0);
        let grid = lambda_grid(&s, 40);
        // Nonincreasing in lambda: along the descending grid the norm grows.
        let mut prev = -1.0f64;
        for &lambda in &grid {
            let coef = fit_penalized(&s, &PenaltySpec::Lasso { lambda }).unwrap();
            let l1: f64 = coef.rows(1, 10).iter().map(|v| v.abs()).sum();
            assert!(
                l1 + 1e-9 >= prev,
                "l1 norm fell as lambda shrank: {prev} -> {l1}"
            );
            prev = l1;
        }
    }

    #[test]
    fn adaptive_lasso_and_elastic_net_solve_cleanly() {
        let (s, _) = random_sample(50, 5, 70, 1.0);
        let pilot = fit_wls(&s).unwrap().beta1;
        let coef = fit_penalized(
            &s,
            &PenaltySpec::AdaptiveLasso {
                lambda: 2.0,
                pilot: pilot.iter().copied().collect(),
            },
        )
        .unwrap();
        assert_eq!(coef.len(), 6);
        let coef =
            fit_penalized(&s, &PenaltySpec::ElasticNet { lambda1: 1.0, lambda2: 2.0 }).unwrap();
        assert_eq!(coef.len(), 6);
        assert!(matches!(
            fit_penalized(
                &s,
                &PenaltySpec::AdaptiveLasso { lambda: 1.0, pilot: vec![0.0; 5] }
            ),
            Err(SvyError::Invalid(_))
        ));
    }

    #[test]
    fn penalized_accepts_collinear_columns_when_regularized() {
        let mut x = DMatrix::zeros(20, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..20 {
            x[(i, 0)] = rng.random::<f64>();
            x[(i, 1)] = x[(i, 0)];
        }
        let y: Vec<f64> = (0..20).map(|i| x[(i, 0)] * 2.0).collect();
        let s = make_sample(&y, x, &[0.5; 20], 200);
        let coef = fit_penalized(&s, &PenaltySpec::Ridge { lambda: 1.0 }).unwrap();
        assert!(coef.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn cv_returns_the_single_grid_value() {
        let (s, _) = random_sample(40, 3, 19, 1.0);
        let l = cv_select_lambda(&s, PenaltyFamily::Lasso, 5, &[0.37], 7).unwrap();
        assert_abs_diff_eq!(l, 0.37, epsilon = 0.0);
    }

    #[test]
    fn cv_prefers_heavy_shrinkage_on_pure_noise() {
        let mut hits = 0;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
            let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
            let n = 200;
            let p = 8;
            let x = DMatrix::from_fn(n, p, |_, _| normal.sample(&mut rng));
            let y: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            let pi = vec![0.3; n];
            let s = make_sample(&y, x, &pi, 2000);
            let grid = lambda_grid(&s, 30);
            let chosen = cv_select_lambda(&s, PenaltyFamily::Lasso, 5, &grid, seed).unwrap();
            if chosen == grid[0] {
                hits += 1;
            }
        }
        assert!(hits >= 40, "grid maximum chosen only {hits}/50 times");
    }

    #[test]
    fn cv_prefers_light_shrinkage_on_strong_signal() {
        let mut hits = 0;
        for seed in 0..50u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
            let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
            let n = 200;
            let p = 8;
            let x = DMatrix::from_fn(n, p, |_, _| normal.sample(&mut rng));
            let y: Vec<f64> = (0..n)
                .map(|i| {
                    3.0 * x[(i, 0)] - 2.0 * x[(i, 1)] + 1.5 * x[(i, 2)]
                        + 0.01 * normal.sample(&mut rng)
                })
                .collect();
            let pi = vec![0.3; n];
            let s = make_sample(&y, x, &pi, 2000);
            let grid = lambda_grid(&s, 30);
            let chosen = cv_select_lambda(&s, PenaltyFamily::Lasso, 5, &grid, seed).unwrap();
            let mid = grid[grid.len() / 2];
            if chosen < mid {
                hits += 1;
            }
        }
        assert!(hits >= 40, "lower-half level chosen only {hits}/50 times");
    }

    #[test]
    fn cv_rejects_bad_grids_and_small_folds() {
        let (s, _) = random_sample(30, 2, 23, 1.0);
        assert!(cv_select_lambda(&s, PenaltyFamily::Lasso, 1, &[1.0], 0).is_err());
        assert!(cv_select_lambda(&s, PenaltyFamily::Lasso, 5, &[], 0).is_err());
        assert!(cv_select_lambda(&s, PenaltyFamily::Lasso, 5, &[0.1, 1.0], 0).is_err());
        assert!(cv_select_lambda(&s, PenaltyFamily::Lasso, 20, &[1.0], 0).is_err());
    }

    #[test]
    fn forward_select_finds_the_single_active_column() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let n = 60;
        let p = 6;
        let x = DMatrix::from_fn(n, p, |_, _| normal.sample(&mut rng));
        let y: Vec<f64> = (0..n).map(|i| 2.0 * x[(i, 3)]).collect();
        let s = make_sample(&y, x, &vec![0.4; n], 600);
        let (selected, fit) = forward_select(&s).unwrap();
        assert_eq!(selected, vec![3]);
        assert_abs_diff_eq!(fit.beta1[0], 2.0, epsilon = 1e-8);
    }

    #[test]
    fn forward_select_on_noise_never_loses_to_the_null_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
        let n = 200;
        let p = 10;
        let x = DMatrix::from_fn(n, p, |_, _| normal.sample(&mut rng));
        let y: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
        let s = make_sample(&y, x, &vec![0.3; n], 2000);
        let (selected, fit) = forward_select(&s).unwrap();
        assert!(selected.len() < p, "noise selection kept every column");
        // Adjusted R-squared of the returned fit is at least the null value;
        // that is the stopping-rule guarantee.
        let w = s.weights();
        let ybar = s.y().dot(&w) / w.sum();
        let sst: f64 = s
            .y()
            .iter()
            .zip(w.iter())
            .map(|(&v, &wi)| wi * (v - ybar) * (v - ybar))
            .sum();
        let sse: f64 = fit
            .residuals
            .iter()
            .zip(w.iter())
            .map(|(&r, &wi)| wi * r * r)
            .sum();
        let k = selected.len() as f64;
        let adj = 1.0 - (sse / sst) * (n as f64 - 1.0) / (n as f64 - k - 1.0);
        assert!(adj >= -1e-12);
    }

    #[test]
    fn expand_selection_places_slopes_at_their_columns() {
        let b = DVector::from_row_slice(&[1.5, -2.0]);
        let full = expand_selection(5, &[1, 4], &b);
        assert_eq!(full.as_slice(), &[0.0, 1.5, 0.0, 0.0, -2.0]);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(24))]
        /// The weighted objective is homogeneous in the weights, so
        /// rescaling every inclusion probability leaves the fit unchanged.
        #[test]
        fn prop_fit_invariant_to_weight_rescaling(seed in 0u64..2000, c in 0.05f64..1.0) {
            let (s, _) = random_sample(20, 2, seed, 1.0);
            let fit = fit_wls(&s).unwrap();
            let scaled = Sample::new(
                s.indices().to_vec(),
                s.y().clone(),
                s.x().clone(),
                s.pi() * c,
                None,
                *s.design(),
                s.pop_n(),
            ).unwrap();
            let fit2 = fit_wls(&scaled).unwrap();
            proptest::prop_assert!((fit.beta0 - fit2.beta0).abs() < 1e-8);
            proptest::prop_assert!((fit.beta1[0] - fit2.beta1[0]).abs() < 1e-8);
            proptest::prop_assert!((fit.beta1[1] - fit2.beta1[1]).abs() < 1e-8);
        }
    }
}
