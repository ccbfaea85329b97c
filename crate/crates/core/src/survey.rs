//! Finite populations, sampling designs, and design-based estimators.
//!
//! A [`FinitePopulation`] holds unit-level data `(y_i, x_i)` for `N` units.
//! A [`Sample`] is a set of drawn units together with their first-order
//! inclusion probabilities and a policy for approximating joint inclusion
//! probabilities. Point estimators (Horvitz-Thompson, Hajek, regression)
//! and their design-based variance estimators are plain functions of a
//! sample; all randomness enters through explicit seeds.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::SvyError;
use crate::Result;

/// Unit-level data for the whole universe of `N` units.
#[derive(Debug, Clone)]
pub struct FinitePopulation {
    y: Vec<f64>,
    /// N x p auxiliary matrix, no intercept column.
    x: DMatrix<f64>,
    domain: Option<Vec<i64>>,
    size_measure: Option<Vec<f64>>,
}

impl FinitePopulation {
    pub fn new(
        y: Vec<f64>,
        x: DMatrix<f64>,
        domain: Option<Vec<i64>>,
        size_measure: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(SvyError::invalid("population must contain at least one unit"));
        }
        if x.nrows() != n {
            return Err(SvyError::dim(format!(
                "auxiliary matrix has {} rows for {} units",
                x.nrows(),
                n
            )));
        }
        if let Some(d) = &domain {
            if d.len() != n {
                return Err(SvyError::dim("domain labels must cover every unit"));
            }
        }
        if let Some(z) = &size_measure {
            if z.len() != n {
                return Err(SvyError::dim("size measures must cover every unit"));
            }
            if z.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(SvyError::invalid("size measures must be strictly positive"));
            }
        }
        Ok(Self { y, x, domain, size_measure })
    }

    pub fn n_units(&self) -> usize {
        self.y.len()
    }

    pub fn n_aux(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn domain(&self) -> Option<&[i64]> {
        self.domain.as_deref()
    }

    pub fn size_measure(&self) -> Option<&[f64]> {
        self.size_measure.as_deref()
    }

    pub fn set_size_measure(&mut self, z: Vec<f64>) -> Result<()> {
        if z.len() != self.n_units() {
            return Err(SvyError::dim("size measures must cover every unit"));
        }
        if z.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(SvyError::invalid("size measures must be strictly positive"));
        }
        self.size_measure = Some(z);
        Ok(())
    }

    /// True population mean of the study variable.
    pub fn mean_y(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.y.len() as f64
    }

    /// Population means of the auxiliary columns.
    pub fn mean_x(&self) -> DVector<f64> {
        let n = self.n_units() as f64;
        DVector::from_iterator(self.n_aux(), self.x.column_iter().map(|c| c.sum() / n))
    }

    /// Same population restricted to the first `p` auxiliary columns.
    pub fn restrict_aux(&self, p: usize) -> Result<Self> {
        if p > self.n_aux() {
            return Err(SvyError::dim(format!(
                "cannot keep {} of {} auxiliary columns",
                p,
                self.n_aux()
            )));
        }
        Ok(Self {
            y: self.y.clone(),
            x: self.x.columns(0, p).into_owned(),
            domain: self.domain.clone(),
            size_measure: self.size_measure.clone(),
        })
    }
}

/// How units are selected.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SamplingScheme {
    /// Simple random sampling without replacement.
    Srs,
    /// Fixed-size probability-proportional-to-size sampling, implemented as
    /// systematic selection on a randomly permuted unit order with
    /// `pi_i = n z_i / sum(z)` and iterative capping at 1.
    Pps,
}

/// How joint inclusion probabilities are evaluated in variance estimators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairwisePolicy {
    /// Exact SRSWOR pair probability `n(n-1) / (N(N-1))`.
    ExactSrs,
    /// Product approximation `pi_i * pi_j` (off-diagonal design covariance
    /// terms vanish).
    IndependenceProduct,
}

/// Sampling design: scheme, target size, and pairwise policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub scheme: SamplingScheme,
    pub n: usize,
    pub pairwise: PairwisePolicy,
}

impl DesignSpec {
    pub fn srs(n: usize) -> Self {
        Self { scheme: SamplingScheme::Srs, n, pairwise: PairwisePolicy::ExactSrs }
    }

    pub fn pps(n: usize) -> Self {
        Self {
            scheme: SamplingScheme::Pps,
            n,
            pairwise: PairwisePolicy::IndependenceProduct,
        }
    }
}

/// Drawn units with observed data and first-order inclusion probabilities.
#[derive(Debug, Clone)]
pub struct Sample {
    indices: Vec<usize>,
    y: DVector<f64>,
    x: DMatrix<f64>,
    pi: DVector<f64>,
    domain: Option<Vec<i64>>,
    design: DesignSpec,
    pop_n: usize,
}

impl Sample {
    pub fn new(
        indices: Vec<usize>,
        y: DVector<f64>,
        x: DMatrix<f64>,
        pi: DVector<f64>,
        domain: Option<Vec<i64>>,
        design: DesignSpec,
        pop_n: usize,
    ) -> Result<Self> {
        let n = indices.len();
        if n == 0 {
            return Err(SvyError::invalid("sample must contain at least one unit"));
        }
        if y.len() != n || x.nrows() != n || pi.len() != n {
            return Err(SvyError::dim("sample vectors and matrix must share the row count"));
        }
        if let Some(d) = &domain {
            if d.len() != n {
                return Err(SvyError::dim("sample domain labels must cover every unit"));
            }
        }
        if pi.iter().any(|&p| !(p > 0.0 && p <= 1.0)) {
            return Err(SvyError::invalid("inclusion probabilities must lie in (0, 1]"));
        }
        let mut seen = indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(SvyError::invalid("sample indices must be distinct"));
        }
        if seen.last().copied().unwrap_or(0) >= pop_n {
            return Err(SvyError::invalid("sample index outside the population"));
        }
        Ok(Self { indices, y, x, pi, domain, design, pop_n })
    }

    pub fn n(&self) -> usize {
        self.indices.len()
    }

    pub fn n_aux(&self) -> usize {
        self.x.ncols()
    }

    pub fn pop_n(&self) -> usize {
        self.pop_n
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn pi(&self) -> &DVector<f64> {
        &self.pi
    }

    pub fn domain(&self) -> Option<&[i64]> {
        self.domain.as_deref()
    }

    pub fn design(&self) -> &DesignSpec {
        &self.design
    }

    /// Design weights `1 / pi_i`.
    pub fn weights(&self) -> DVector<f64> {
        self.pi.map(|p| 1.0 / p)
    }

    /// Sub-sample holding the given positions (domain slices, CV folds).
    /// The pairwise context (design size, population size) is inherited
    /// from the full sample.
    pub fn subset(&self, positions: &[usize]) -> Result<Sample> {
        if positions.is_empty() {
            return Err(SvyError::invalid("subset must keep at least one unit"));
        }
        let mut idx = Vec::with_capacity(positions.len());
        let mut y = Vec::with_capacity(positions.len());
        let mut pi = Vec::with_capacity(positions.len());
        let mut x = DMatrix::zeros(positions.len(), self.n_aux());
        let mut dom = self.domain.as_ref().map(|_| Vec::with_capacity(positions.len()));
        for (row, &pos) in positions.iter().enumerate() {
            if pos >= self.n() {
                return Err(SvyError::invalid("subset position out of range"));
            }
            idx.push(self.indices[pos]);
            y.push(self.y[pos]);
            pi.push(self.pi[pos]);
            x.row_mut(row).copy_from(&self.x.row(pos));
            if let (Some(d), Some(src)) = (dom.as_mut(), self.domain.as_ref()) {
                d.push(src[pos]);
            }
        }
        Sample::new(
            idx,
            DVector::from_vec(y),
            x,
            DVector::from_vec(pi),
            dom,
            self.design,
            self.pop_n,
        )
    }

    pub(crate) fn pair_ctx(&self) -> PairCtx {
        PairCtx {
            policy: self.design.pairwise,
            sample_n: self.design.n,
            pop_n: self.pop_n,
        }
    }

    /// Census sample: the full population with `pi_i = 1`.
    pub fn census(pop: &FinitePopulation, pairwise: PairwisePolicy) -> Self {
        let n = pop.n_units();
        Sample {
            indices: (0..n).collect(),
            y: DVector::from_vec(pop.y.clone()),
            x: pop.x.clone(),
            pi: DVector::from_element(n, 1.0),
            domain: pop.domain.clone(),
            design: DesignSpec { scheme: SamplingScheme::Srs, n, pairwise },
            pop_n: n,
        }
    }
}

/// Known auxiliary population means, plus the unit-level population matrix
/// when a nonlinear working model needs it.
#[derive(Debug, Clone)]
pub struct AuxTotals {
    pub xbar: DVector<f64>,
    pub pop_x: Option<DMatrix<f64>>,
}

impl AuxTotals {
    pub fn from_means(xbar: DVector<f64>) -> Self {
        Self { xbar, pop_x: None }
    }

    pub fn from_population(pop: &FinitePopulation) -> Self {
        Self { xbar: pop.mean_x(), pop_x: Some(pop.x.clone()) }
    }
}

/// Per-domain auxiliary information: domain size and domain means.
#[derive(Debug, Clone)]
pub struct DomainAux {
    pub n_units: usize,
    pub xbar: DVector<f64>,
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

/// Fixed-size PPS inclusion probabilities `n z_i / sum(z)` with iterative
/// capping at 1: certainty units are removed and the remaining target size
/// is redistributed proportionally until no probability exceeds 1.
pub fn pps_inclusion_probabilities(z: &[f64], n: usize) -> Result<Vec<f64>> {
    let pop_n = z.len();
    if n == 0 || n > pop_n {
        return Err(SvyError::SampleTooLarge { n, pop_n });
    }
    if z.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(SvyError::invalid("size measures must be strictly positive"));
    }
    let mut capped = vec![false; pop_n];
    let mut pi = vec![0.0; pop_n];
    let mut n_capped = 0usize;
    for _round in 0..=pop_n {
        let remaining = n - n_capped;
        if remaining == 0 {
            break;
        }
        let sum_z: f64 = z
            .iter()
            .zip(&capped)
            .filter(|(_, &c)| !c)
            .map(|(&v, _)| v)
            .sum();
        let factor = remaining as f64 / sum_z;
        let mut newly_capped = 0usize;
        for i in 0..pop_n {
            if capped[i] {
                continue;
            }
            if z[i] * factor >= 1.0 {
                capped[i] = true;
                newly_capped += 1;
            }
        }
        if newly_capped == 0 {
            for i in 0..pop_n {
                if !capped[i] {
                    pi[i] = z[i] * factor;
                }
            }
            for (i, &c) in capped.iter().enumerate() {
                if c {
                    pi[i] = 1.0;
                }
            }
            return Ok(pi);
        }
        n_capped += newly_capped;
    }
    if n_capped == n {
        for (i, &c) in capped.iter().enumerate() {
            pi[i] = if c { 1.0 } else { 0.0 };
        }
        if n == pop_n {
            return Ok(pi);
        }
        // All mass went to certainty units; the rest cannot be selected.
        return Err(SvyError::NonConvergence(
            "PPS capping left no probability mass for non-certainty units".into(),
        ));
    }
    Err(SvyError::NonConvergence("PPS capping did not stabilize".into()))
}

/// Draw a sample from the population under the given design. Deterministic
/// for a fixed seed.
pub fn draw_sample(pop: &FinitePopulation, design: &DesignSpec, seed: u64) -> Result<Sample> {
    let pop_n = pop.n_units();
    let n = design.n;
    if n == 0 || n > pop_n {
        return Err(SvyError::SampleTooLarge { n, pop_n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (indices, pi) = match design.scheme {
        SamplingScheme::Srs => {
            let mut order: Vec<usize> = (0..pop_n).collect();
            // Partial Fisher-Yates: the first n slots form the sample.
            for i in 0..n {
                let j = rng.random_range(i..pop_n);
                order.swap(i, j);
            }
            let mut idx = order[..n].to_vec();
            idx.sort_unstable();
            let p = n as f64 / pop_n as f64;
            (idx, vec![p; n])
        }
        SamplingScheme::Pps => {
            let z = pop
                .size_measure()
                .ok_or_else(|| SvyError::invalid("PPS design requires size measures"))?;
            let pi_all = pps_inclusion_probabilities(z, n)?;
            let mut order: Vec<usize> = (0..pop_n).collect();
            order.shuffle(&mut rng);
            // Systematic selection along the permuted order. The cumulative
            // probabilities are pinned to total exactly n so that the n unit
            // grid points u, u+1, ..., u+n-1 hit n distinct intervals.
            let mut cum = Vec::with_capacity(pop_n);
            let mut acc = 0.0;
            for &unit in &order {
                acc += pi_all[unit];
                cum.push(acc);
            }
            let total = acc;
            let scale = n as f64 / total;
            for c in cum.iter_mut() {
                *c *= scale;
            }
            if let Some(last) = cum.last_mut() {
                *last = n as f64;
            }
            let u: f64 = rng.random::<f64>();
            let mut idx = Vec::with_capacity(n);
            let mut pos = 0usize;
            for k in 0..n {
                let target = u + k as f64;
                while cum[pos] <= target {
                    pos += 1;
                }
                idx.push(order[pos]);
                pos += 1;
            }
            idx.sort_unstable();
            let pi = idx.iter().map(|&i| pi_all[i]).collect();
            (idx, pi)
        }
    };
    let p = pop.n_aux();
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    for (row, &i) in indices.iter().enumerate() {
        y[row] = pop.y[i];
        x.row_mut(row).copy_from(&pop.x.row(i));
    }
    let domain = pop
        .domain
        .as_ref()
        .map(|d| indices.iter().map(|&i| d[i]).collect());
    Sample::new(indices, y, x, DVector::from_vec(pi), domain, *design, pop_n)
}

/// Joint inclusion probability of sample positions `i` and `j` under the
/// sample's pairwise policy; the diagonal follows the convention
/// `pi_ii = pi_i`.
pub fn pairwise_probability(sample: &Sample, i: usize, j: usize) -> Result<f64> {
    let n = sample.n();
    if i >= n || j >= n {
        return Err(SvyError::invalid(format!(
            "pair index ({i}, {j}) outside sample of size {n}"
        )));
    }
    if i == j {
        return Ok(sample.pi[i]);
    }
    match sample.design.pairwise {
        PairwisePolicy::ExactSrs => {
            let ns = sample.design.n as f64;
            let np = sample.pop_n as f64;
            Ok(ns * (ns - 1.0) / (np * (np - 1.0)))
        }
        PairwisePolicy::IndependenceProduct => Ok(sample.pi[i] * sample.pi[j]),
    }
}

// ---------------------------------------------------------------------------
// Design-based quadratic forms
// ---------------------------------------------------------------------------

/// Pairwise-probability context carried from the full sample; used when the
/// summation runs over a subset (domains) so pair probabilities still refer
/// to the original design.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PairCtx {
    pub policy: PairwisePolicy,
    pub sample_n: usize,
    pub pop_n: usize,
}

impl PairCtx {
    fn exact_srs_pair(&self) -> Result<f64> {
        let ns = self.sample_n as f64;
        let np = self.pop_n as f64;
        let pair = ns * (ns - 1.0) / (np * (np - 1.0));
        if pair <= 0.0 {
            return Err(SvyError::Numerical(
                "joint inclusion probability is zero for a sampled pair".into(),
            ));
        }
        Ok(pair)
    }
}

/// `sum_ij (Delta_ij / pi_ij) (a_i / pi_i) (a_j / pi_j)` with the diagonal
/// convention `Delta_ii = pi_i (1 - pi_i)`, `pi_ii = pi_i`.
///
/// Both policies admit exact closed forms: under the product approximation
/// all off-diagonal terms vanish, and under the exact SRSWOR pair
/// probability the off-diagonal block collapses to rank-one corrections.
pub(crate) fn design_quad_scalar(ctx: &PairCtx, pi: &[f64], a: &[f64]) -> Result<f64> {
    debug_assert_eq!(pi.len(), a.len());
    let diag: f64 = pi
        .iter()
        .zip(a)
        .map(|(&p, &v)| (1.0 - p) * (v / p) * (v / p))
        .sum();
    match ctx.policy {
        PairwisePolicy::IndependenceProduct => Ok(diag),
        PairwisePolicy::ExactSrs => {
            let pair = ctx.exact_srs_pair()?;
            let mut s1 = 0.0; // sum of h_i
            let mut s2 = 0.0; // sum of h_i^2
            let mut t1 = 0.0; // sum of pi_i h_i
            let mut t2 = 0.0; // sum of (pi_i h_i)^2 / 1  -> pi_i^2 h_i^2
            for (&p, &v) in pi.iter().zip(a) {
                let h = v / p;
                s1 += h;
                s2 += h * h;
                t1 += p * h;
                t2 += p * p * h * h;
            }
            Ok(diag + (s1 * s1 - s2) - (t1 * t1 - t2) / pair)
        }
    }
}

/// Matrix analogue of [`design_quad_scalar`]: rows `u_i` enter as
/// `sum_ij (Delta_ij / pi_ij) (u_i / pi_i) (u_j / pi_j)^t`.
pub(crate) fn design_quad_matrix(
    ctx: &PairCtx,
    pi: &[f64],
    rows: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    debug_assert_eq!(pi.len(), rows.nrows());
    let q = rows.ncols();
    let mut diag = DMatrix::zeros(q, q);
    let mut h = DVector::zeros(q);
    let mut s1 = DVector::zeros(q);
    let mut s2 = DMatrix::zeros(q, q);
    let mut t1 = DVector::zeros(q);
    let mut t2 = DMatrix::zeros(q, q);
    for (i, &p) in pi.iter().enumerate() {
        for c in 0..q {
            h[c] = rows[(i, c)] / p;
        }
        diag.syger(1.0 - p, &h, &h, 1.0);
        if ctx.policy == PairwisePolicy::ExactSrs {
            s1 += &h;
            s2.syger(1.0, &h, &h, 1.0);
            t1.axpy(p, &h, 1.0);
            t2.syger(p * p, &h, &h, 1.0);
        }
    }
    let mut out = match ctx.policy {
        PairwisePolicy::IndependenceProduct => diag,
        PairwisePolicy::ExactSrs => {
            let pair = ctx.exact_srs_pair()?;
            let mut out = diag;
            out.syger(1.0, &s1, &s1, 1.0);
            out -= &s2;
            out.syger(-1.0 / pair, &t1, &t1, 1.0);
            out += t2 / pair;
            out
        }
    };
    // syger fills the lower triangle; mirror it.
    for r in 0..q {
        for c in (r + 1)..q {
            out[(r, c)] = out[(c, r)];
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Point estimators
// ---------------------------------------------------------------------------

/// Inverse-probability estimator of the population mean,
/// `N^{-1} sum_A y_i / pi_i`.
pub fn ht_mean(sample: &Sample) -> f64 {
    let s: f64 = sample
        .y
        .iter()
        .zip(sample.pi.iter())
        .map(|(&y, &p)| y / p)
        .sum();
    s / sample.pop_n as f64
}

/// Weighted mean with estimated size `Nhat = sum_A 1/pi_i` in the
/// denominator; invariant to rescaling all inclusion probabilities.
pub fn hajek_mean(sample: &Sample) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&y, &p) in sample.y.iter().zip(sample.pi.iter()) {
        num += y / p;
        den += 1.0 / p;
    }
    num / den
}

/// Regression estimator of the mean at a fixed slope vector:
/// `xbar' beta1 + Nhat^{-1} sum_A (y_i - x_i' beta1) / pi_i`.
pub fn greg_mean(sample: &Sample, aux: &AuxTotals, beta1: &DVector<f64>) -> Result<f64> {
    let p = sample.n_aux();
    if beta1.len() != p || aux.xbar.len() != p {
        return Err(SvyError::dim(format!(
            "slope/total dimension must be {p} (got {} and {})",
            beta1.len(),
            aux.xbar.len()
        )));
    }
    let fitted = sample.x() * beta1;
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..sample.n() {
        let w = 1.0 / sample.pi[i];
        num += w * (sample.y[i] - fitted[i]);
        den += w;
    }
    Ok(aux.xbar.dot(beta1) + num / den)
}

/// Residual convention used by the regression-variance estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResidualConvention {
    /// `e_i = y_i - b0 - x_i' beta1` with `b0` the Hajek mean of
    /// `y_i - x_i' beta1`; matches the intercept carried by the regression
    /// estimator. Default.
    InterceptAbsorbed,
    /// `e_i = y_i - x_i' beta1` as written.
    Raw,
}

fn regression_residuals(
    sample: &Sample,
    beta1: &DVector<f64>,
    convention: ResidualConvention,
) -> Result<Vec<f64>> {
    if beta1.len() != sample.n_aux() {
        return Err(SvyError::dim("slope dimension does not match the sample"));
    }
    let fitted = sample.x() * beta1;
    let mut e: Vec<f64> = sample
        .y
        .iter()
        .zip(fitted.iter())
        .map(|(&y, &f)| y - f)
        .collect();
    if convention == ResidualConvention::InterceptAbsorbed {
        let mut num = 0.0;
        let mut den = 0.0;
        for (&ei, &p) in e.iter().zip(sample.pi.iter()) {
            num += ei / p;
            den += 1.0 / p;
        }
        let b0 = num / den;
        for ei in e.iter_mut() {
            *ei -= b0;
        }
    }
    Ok(e)
}

fn require_variance_sample(sample: &Sample) -> Result<()> {
    if sample.n() < 2 {
        return Err(SvyError::TooFewObservations(
            "variance estimation needs at least two sampled units".into(),
        ));
    }
    Ok(())
}

/// Design-based variance estimator of the regression estimator at a fixed
/// slope vector, using the intercept-absorbed residual convention.
pub fn variance_e(sample: &Sample, beta1: &DVector<f64>) -> Result<f64> {
    variance_e_with(sample, beta1, ResidualConvention::InterceptAbsorbed)
}

/// [`variance_e`] with an explicit residual convention.
pub fn variance_e_with(
    sample: &Sample,
    beta1: &DVector<f64>,
    convention: ResidualConvention,
) -> Result<f64> {
    require_variance_sample(sample)?;
    let e = regression_residuals(sample, beta1, convention)?;
    let ctx = sample.pair_ctx();
    let q = design_quad_scalar(&ctx, sample.pi.as_slice(), &e)?;
    let n2 = (sample.pop_n as f64) * (sample.pop_n as f64);
    Ok(clamp_variance(q / n2, &e, sample)?)
}

/// Variance estimator for the inverse-probability mean: the same quadratic
/// form evaluated at residuals centered on the Hajek mean, so a constant
/// study variable yields zero and SRS reduces to `(1 - f) s^2 / n`.
pub fn ht_variance(sample: &Sample) -> Result<f64> {
    require_variance_sample(sample)?;
    let center = hajek_mean(sample);
    let e: Vec<f64> = sample.y.iter().map(|&y| y - center).collect();
    let ctx = sample.pair_ctx();
    let q = design_quad_scalar(&ctx, sample.pi.as_slice(), &e)?;
    let n2 = (sample.pop_n as f64) * (sample.pop_n as f64);
    Ok(clamp_variance(q / n2, &e, sample)?)
}

/// Clamp tiny negative values caused by floating-point cancellation; a
/// genuinely negative quadratic form signals an invalid pairwise policy.
fn clamp_variance(v: f64, residuals: &[f64], sample: &Sample) -> Result<f64> {
    if v >= 0.0 {
        return Ok(v);
    }
    let scale: f64 = residuals
        .iter()
        .zip(sample.pi.iter())
        .map(|(&e, &p)| (e / p) * (e / p))
        .sum::<f64>()
        / (sample.pop_n as f64).powi(2);
    if v > -1e-10 * scale.max(f64::MIN_POSITIVE) {
        Ok(0.0)
    } else {
        Err(SvyError::Numerical(format!(
            "variance quadratic form is negative ({v:e}); pairwise policy inconsistent with design"
        )))
    }
}

/// Domain regression estimator and its variance for one domain.
///
/// The estimate is `b0_h + xbar_h' beta1 + N_h^{-1} sum_{A_h} (y_i - b0_h -
/// x_i' beta1)/pi_i`; the variance is the pairwise quadratic form restricted
/// to the domain's sampled units with `1/N_h^2` scaling. Pair probabilities
/// refer to the full design.
pub fn domain_greg(
    sample: &Sample,
    domain_id: i64,
    aux: &DomainAux,
    beta0_h: f64,
    beta1: &DVector<f64>,
) -> Result<(f64, f64)> {
    let labels = sample
        .domain()
        .ok_or_else(|| SvyError::invalid("sample carries no domain labels"))?;
    if beta1.len() != sample.n_aux() || aux.xbar.len() != sample.n_aux() {
        return Err(SvyError::dim("slope/domain-total dimension does not match the sample"));
    }
    if aux.n_units == 0 {
        return Err(SvyError::invalid(format!("domain {domain_id} has unknown or zero size")));
    }
    let positions: Vec<usize> = labels
        .iter()
        .enumerate()
        .filter(|(_, &d)| d == domain_id)
        .map(|(i, _)| i)
        .collect();
    if positions.is_empty() {
        return Err(SvyError::invalid(format!("domain {domain_id} has no sampled units")));
    }
    if positions.len() < 2 {
        return Err(SvyError::TooFewObservations(format!(
            "domain {domain_id} needs at least two sampled units for variance estimation"
        )));
    }
    let nh = aux.n_units as f64;
    let fitted = sample.x() * beta1;
    let mut resid = Vec::with_capacity(positions.len());
    let mut pi = Vec::with_capacity(positions.len());
    let mut ht_resid = 0.0;
    for &pos in &positions {
        let e = sample.y[pos] - beta0_h - fitted[pos];
        resid.push(e);
        pi.push(sample.pi[pos]);
        ht_resid += e / sample.pi[pos];
    }
    let estimate = beta0_h + aux.xbar.dot(beta1) + ht_resid / nh;
    let ctx = sample.pair_ctx();
    let q = design_quad_scalar(&ctx, &pi, &resid)?;
    let variance = q / (nh * nh);
    let variance = if variance < 0.0 && variance > -1e-12 { 0.0 } else { variance };
    if variance < 0.0 {
        return Err(SvyError::Numerical(
            "domain variance quadratic form is negative".into(),
        ));
    }
    Ok((estimate, variance))
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    /// Brute-force reference for the pairwise quadratic form; kept free of
    /// the closed-form shortcuts used by the implementation.
    pub fn quad_scalar_bruteforce(sample: &Sample, subset: &[usize], a: &[f64]) -> f64 {
        let mut total = 0.0;
        for (r, &i) in subset.iter().enumerate() {
            for (c, &j) in subset.iter().enumerate() {
                let pi_i = sample.pi()[i];
                let pi_j = sample.pi()[j];
                let pij = pairwise_probability(sample, i, j).unwrap();
                let delta = if i == j { pi_i * (1.0 - pi_i) } else { pij - pi_i * pi_j };
                total += delta / pij * (a[r] / pi_i) * (a[c] / pi_j);
            }
        }
        total
    }

    pub fn toy_sample(y: &[f64], pi: &[f64], policy: PairwisePolicy, pop_n: usize) -> Sample {
        let n = y.len();
        Sample::new(
            (0..n).collect(),
            DVector::from_row_slice(y),
            DMatrix::zeros(n, 0),
            DVector::from_row_slice(pi),
            None,
            DesignSpec { scheme: SamplingScheme::Srs, n, pairwise: policy },
            pop_n,
        )
        .unwrap()
    }
}
