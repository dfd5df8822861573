//! Closed-form multivariate Gaussian quantities used as ground truth:
//! conditional moments, sampling, log-densities and entropies.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NcError, Result};
use crate::masking::MaskPair;
use crate::numeric::linalg::{cholesky_solve, cholesky_spd, logdet_from_cholesky, solve_spd_matrix};
use crate::numeric::DenseMatrix;
use crate::rng::{stream, Stream};

/// Symmetry tolerance accepted for covariance matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GaussianRepr", into = "GaussianRepr")]
pub struct GaussianParams {
    mu: Vec<f64>,
    sigma: DenseMatrix,
    chol: DenseMatrix,
}

#[derive(Serialize, Deserialize)]
struct GaussianRepr {
    mean: Vec<f64>,
    /// Row-major covariance.
    cov: Vec<f64>,
}

impl TryFrom<GaussianRepr> for GaussianParams {
    type Error = NcError;
    fn try_from(r: GaussianRepr) -> Result<Self> {
        let d = r.mean.len();
        GaussianParams::new(r.mean, DenseMatrix::from_vec(d, d, r.cov)?)
    }
}

impl From<GaussianParams> for GaussianRepr {
    fn from(g: GaussianParams) -> Self {
        GaussianRepr {
            mean: g.mu,
            cov: g.sigma.into_data(),
        }
    }
}

impl GaussianParams {
    pub fn new(mu: Vec<f64>, sigma: DenseMatrix) -> Result<Self> {
        let d = mu.len();
        if sigma.rows() != d || sigma.cols() != d {
            return Err(NcError::Shape(format!(
                "covariance is {}x{}, mean has length {d}",
                sigma.rows(),
                sigma.cols()
            )));
        }
        if !sigma.is_finite() || mu.iter().any(|v| !v.is_finite()) {
            return Err(NcError::NonFinite {
                block: "gaussian parameters".into(),
            });
        }
        if !sigma.is_symmetric(SYMMETRY_TOL) {
            return Err(NcError::Config("covariance is not symmetric".into()));
        }
        let chol = cholesky_spd(&sigma)?;
        Ok(Self { mu, sigma, chol })
    }

    /// Mean `(2, 4, 6)` with covariance `[[1, ρ, ρ²], [ρ, 1, 0], [ρ², 0, 1]]`.
    pub fn rho_family(mean: Vec<f64>, rho: f64) -> Result<Self> {
        if mean.len() != 3 {
            return Err(NcError::Config("the rho covariance is three-dimensional".into()));
        }
        let r2 = rho * rho;
        let sigma = DenseMatrix::from_rows(&[[1.0, rho, r2], [rho, 1.0, 0.0], [r2, 0.0, 1.0]])?;
        Self::new(mean, sigma)
    }

    /// The three-dimensional benchmark Gaussian (`ρ = 0.5`).
    pub fn benchmark() -> Self {
        Self::rho_family(vec![2.0, 4.0, 6.0], 0.5).expect("benchmark covariance is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mu
    }

    pub fn cov(&self) -> &DenseMatrix {
        &self.sigma
    }

    pub fn cholesky(&self) -> &DenseMatrix {
        &self.chol
    }

    /// Per-coordinate standard deviations.
    pub fn std_devs(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.sigma.get(i, i).sqrt()).collect()
    }

    /// Marginal over the listed coordinates.
    pub fn marginal(&self, idx: &[usize]) -> Result<GaussianParams> {
        GaussianParams::new(idx.iter().map(|&i| self.mu[i]).collect(), self.sigma.select(idx, idx))
    }
}

/// Conditional law of the requested block given the available block.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalMoments {
    pub mu_cond: Vec<f64>,
    pub sigma_cond: DenseMatrix,
    /// Ascending original indices of the requested coordinates.
    pub requested_idx: Vec<usize>,
    /// Ascending original indices of the available coordinates.
    pub available_idx: Vec<usize>,
}

fn check_mask_dim(g: &GaussianParams, mask: &MaskPair) -> Result<()> {
    if mask.dim() != g.dim() {
        return Err(NcError::Shape(format!(
            "mask dimension {} vs gaussian dimension {}",
            mask.dim(),
            g.dim()
        )));
    }
    Ok(())
}

/// Conditional covariance `Σ_rr − Σ_ra Σ_aa⁻¹ Σ_ar`, independent of `x_a`.
fn conditional_cov(g: &GaussianParams, r_idx: &[usize], a_idx: &[usize]) -> Result<DenseMatrix> {
    let s_rr = g.sigma.select(r_idx, r_idx);
    if a_idx.is_empty() || r_idx.is_empty() {
        return Ok(s_rr);
    }
    let s_aa = g.sigma.select(a_idx, a_idx);
    let s_ar = g.sigma.select(a_idx, r_idx);
    let solved = solve_spd_matrix(&s_aa, &s_ar)
        .map_err(|e| NcError::DegenerateConditioning(format!("Σ_aa: {e}")))?;
    let reduction = s_ar.transpose().matmul(&solved)?;
    let mut out = s_rr.sub(&reduction)?;
    // symmetrise rounding noise
    for i in 0..out.rows() {
        for j in 0..i {
            let m = 0.5 * (out.get(i, j) + out.get(j, i));
            out.set(i, j, m);
            out.set(j, i, m);
        }
    }
    Ok(out)
}

/// `μ_{r|a} = μ_r + Σ_ra Σ_aa⁻¹ (x_a − μ_a)`, `Σ_{r|a} = Σ_rr − Σ_ra Σ_aa⁻¹ Σ_ar`.
///
/// `x_available` lists the values at the available coordinates in ascending
/// index order. With nothing available the marginal of `r` is returned.
pub fn conditional_moments(g: &GaussianParams, mask: &MaskPair, x_available: &[f64]) -> Result<ConditionalMoments> {
    check_mask_dim(g, mask)?;
    let a_idx = mask.available_idx();
    let r_idx = mask.requested_idx();
    if x_available.len() != a_idx.len() {
        return Err(NcError::Shape(format!(
            "{} available values for {} available coordinates",
            x_available.len(),
            a_idx.len()
        )));
    }
    if x_available.iter().any(|v| !v.is_finite()) {
        return Err(NcError::NonFinite {
            block: "available values".into(),
        });
    }
    let mut mu_cond: Vec<f64> = r_idx.iter().map(|&i| g.mu[i]).collect();
    if !a_idx.is_empty() && !r_idx.is_empty() {
        let s_aa = g.sigma.select(&a_idx, &a_idx);
        let l = cholesky_spd(&s_aa).map_err(|e| NcError::DegenerateConditioning(format!("Σ_aa: {e}")))?;
        let centred: Vec<f64> = a_idx.iter().zip(x_available).map(|(&i, &x)| x - g.mu[i]).collect();
        let w = cholesky_solve(&l, &centred)?;
        let s_ra = g.sigma.select(&r_idx, &a_idx);
        for (m, shift) in mu_cond.iter_mut().zip(s_ra.matvec(&w)?) {
            *m += shift;
        }
    }
    let sigma_cond = conditional_cov(g, &r_idx, &a_idx)?;
    if !r_idx.is_empty() {
        cholesky_spd(&sigma_cond).map_err(|e| NcError::DegenerateConditioning(format!("Σ_{{r|a}}: {e}")))?;
    }
    Ok(ConditionalMoments {
        mu_cond,
        sigma_cond,
        requested_idx: r_idx,
        available_idx: a_idx,
    })
}

fn sample_mvn<R: Rng + ?Sized>(mu: &[f64], chol: &DenseMatrix, n: usize, rng: &mut R) -> DenseMatrix {
    let d = mu.len();
    let mut out = DenseMatrix::zeros(n, d);
    let mut z = vec![0.0; d];
    for i in 0..n {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        let row = out.row_mut(i);
        for j in 0..d {
            let mut s = mu[j];
            for k in 0..=j {
                s += chol.get(j, k) * z[k];
            }
            row[j] = s;
        }
    }
    out
}

/// `n` joint draws `μ + L z` from an explicit generator.
pub fn sample_joint_with<R: Rng + ?Sized>(g: &GaussianParams, n: usize, rng: &mut R) -> DenseMatrix {
    sample_mvn(&g.mu, &g.chol, n, rng)
}

/// `n × d` joint sample, deterministic in `seed`.
pub fn sample_joint(g: &GaussianParams, n: usize, seed: u64) -> Result<DenseMatrix> {
    if n == 0 {
        return Err(NcError::Config("sample size must be at least 1".into()));
    }
    Ok(sample_joint_with(g, n, &mut stream(seed, Stream::Data)))
}

/// `n × |r|` draws from the exact conditional, using an explicit generator.
pub fn sample_conditional_with<R: Rng + ?Sized>(
    g: &GaussianParams,
    mask: &MaskPair,
    x_available: &[f64],
    n: usize,
    rng: &mut R,
) -> Result<DenseMatrix> {
    let cm = conditional_moments(g, mask, x_available)?;
    if cm.requested_idx.is_empty() {
        return Ok(DenseMatrix::zeros(n, 0));
    }
    let chol = cholesky_spd(&cm.sigma_cond).map_err(|e| NcError::DegenerateConditioning(e.to_string()))?;
    Ok(sample_mvn(&cm.mu_cond, &chol, n, rng))
}

pub fn sample_conditional(
    g: &GaussianParams,
    mask: &MaskPair,
    x_available: &[f64],
    n: usize,
    seed: u64,
) -> Result<DenseMatrix> {
    sample_conditional_with(g, mask, x_available, n, &mut stream(seed, Stream::Eval))
}

fn mvn_log_density(mu: &[f64], chol: &DenseMatrix, x: &[f64]) -> Result<f64> {
    if x.len() != mu.len() {
        return Err(NcError::Shape(format!("point has length {}, expected {}", x.len(), mu.len())));
    }
    let d = mu.len() as f64;
    let mut centred: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    crate::numeric::linalg::forward_substitute(chol, &mut centred);
    let quad: f64 = centred.iter().map(|v| v * v).sum();
    Ok(-0.5 * (d * (2.0 * PI).ln() + logdet_from_cholesky(chol) + quad))
}

pub fn log_density_joint(g: &GaussianParams, x: &[f64]) -> Result<f64> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NcError::NonFinite { block: "density point".into() });
    }
    mvn_log_density(&g.mu, &g.chol, x)
}

/// `log p(x_r | x_a)`; both value lists are in ascending index order.
pub fn log_density_conditional(
    g: &GaussianParams,
    mask: &MaskPair,
    x_available: &[f64],
    x_requested: &[f64],
) -> Result<f64> {
    let cm = conditional_moments(g, mask, x_available)?;
    if cm.requested_idx.is_empty() {
        return Ok(0.0);
    }
    let chol = cholesky_spd(&cm.sigma_cond)?;
    mvn_log_density(&cm.mu_cond, &chol, x_requested)
}

fn entropy_of_cov(sigma: &DenseMatrix) -> Result<f64> {
    let d = sigma.rows() as f64;
    if sigma.rows() == 0 {
        return Ok(0.0);
    }
    Ok(0.5 * d * (1.0 + (2.0 * PI).ln()) + 0.5 * crate::numeric::logdet_spd(sigma)?)
}

/// `h = (d/2)(1 + log 2π) + ½ log|Σ|`
pub fn differential_entropy(g: &GaussianParams) -> Result<f64> {
    Ok(0.5 * g.dim() as f64 * (1.0 + (2.0 * PI).ln()) + 0.5 * logdet_from_cholesky(&g.chol))
}

/// `h(X_r | X_a)`; zero when nothing is requested.
pub fn conditional_entropy(g: &GaussianParams, mask: &MaskPair) -> Result<f64> {
    check_mask_dim(g, mask)?;
    let cov = conditional_cov(g, &mask.requested_idx(), &mask.available_idx())?;
    entropy_of_cov(&cov)
}

/// `I(X_a; X_r) = h(X_r) − h(X_r | X_a)`
pub fn mutual_information(g: &GaussianParams, mask: &MaskPair) -> Result<f64> {
    check_mask_dim(g, mask)?;
    let r_idx = mask.requested_idx();
    let h_r = entropy_of_cov(&g.sigma.select(&r_idx, &r_idx))?;
    Ok(h_r - conditional_entropy(g, mask)?)
}

/// `tr Σ_{r|a}`: the smallest expected squared error any predictor of `X_r`
/// from `X_a` can reach.
pub fn mse_lower_bound(g: &GaussianParams, mask: &MaskPair) -> Result<f64> {
    check_mask_dim(g, mask)?;
    Ok(conditional_cov(g, &mask.requested_idx(), &mask.available_idx())?.trace())
}
