//! Evaluation protocols: Monte-Carlo conditional moments, error norms,
//! two-sample statistics, the benchmark table protocols and the joint and
//! reconstruction checks.
//!
//! Every protocol takes any [`ConditionalGenerator`], so the exact Gaussian
//! sampler can stand in for a trained model to measure the Monte-Carlo noise
//! floor of the pipeline. Conditioning points are evaluated in parallel with
//! one random substream per point and reduced in index order, so results do
//! not depend on the thread count.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NcError, Result};
use crate::gaussian::{conditional_moments, sample_conditional_with, ConditionalMoments, GaussianParams};
use crate::masking::{enumerate_mask_pairs, MaskPair};
use crate::model::{ConditioningMode, NcGenerator};
use crate::numeric::DenseMatrix;
use crate::rng::{substream, NcRng, Stream};
use crate::training::{train, TrainConfig};

/// Sample mean and unbiased (`1/(n−1)`) covariance of the rows of `x`.
pub fn mean_and_cov(x: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    let (n, d) = (x.rows(), x.cols());
    if n < 2 {
        return Err(NcError::Size(format!("covariance needs at least 2 rows, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut cov = DenseMatrix::zeros(d, d);
    let mut c = vec![0.0; d];
    for row in x.iter_rows() {
        for ((ci, v), m) in c.iter_mut().zip(row).zip(&mean) {
            *ci = v - m;
        }
        for i in 0..d {
            for j in 0..=i {
                let v = cov.get(i, j) + c[i] * c[j];
                cov.set(i, j, v);
            }
        }
    }
    let denom = (n - 1) as f64;
    for i in 0..d {
        for j in 0..=i {
            let v = cov.get(i, j) / denom;
            cov.set(i, j, v);
            cov.set(j, i, v);
        }
    }
    Ok((mean, cov))
}

/// Anything that can draw full-length vectors given `(x, mask)`. Only the
/// requested coordinates of the output are evaluated.
pub trait ConditionalGenerator: Sync {
    fn dim(&self) -> usize;
    /// `n × d` draws. `x` is a full-length data vector; coordinates outside
    /// `mask.available()` must not influence the result.
    fn sample(&self, x: &[f64], mask: &MaskPair, n: usize, rng: &mut NcRng) -> Result<DenseMatrix>;
}

impl ConditionalGenerator for NcGenerator {
    fn dim(&self) -> usize {
        self.d
    }

    fn sample(&self, x: &[f64], mask: &MaskPair, n: usize, rng: &mut NcRng) -> Result<DenseMatrix> {
        let data = (0..n * self.z_dim).map(|_| rng.sample(StandardNormal)).collect();
        let z = DenseMatrix::from_vec(n, self.z_dim, data)?;
        self.generate_many(x, mask, &z)
    }
}

fn available_values(x: &[f64], mask: &MaskPair) -> Vec<f64> {
    mask.available_idx().iter().map(|&i| x[i]).collect()
}

/// Exact conditional sampler. Available coordinates are copied from `x`,
/// the rest are zero.
#[derive(Debug, Clone)]
pub struct OracleGenerator {
    pub gaussian: GaussianParams,
}

impl ConditionalGenerator for OracleGenerator {
    fn dim(&self) -> usize {
        self.gaussian.dim()
    }

    fn sample(&self, x: &[f64], mask: &MaskPair, n: usize, rng: &mut NcRng) -> Result<DenseMatrix> {
        let draws = sample_conditional_with(&self.gaussian, mask, &available_values(x, mask), n, rng)?;
        let r_idx = mask.requested_idx();
        let mut out = DenseMatrix::zeros(n, self.dim());
        for i in 0..n {
            let row = out.row_mut(i);
            for (j, &b) in mask.available().iter().enumerate() {
                if b {
                    row[j] = x[j];
                }
            }
            for (k, &j) in r_idx.iter().enumerate() {
                row[j] = draws.get(i, k);
            }
        }
        Ok(out)
    }
}

/// Emits the exact conditional mean for every draw.
#[derive(Debug, Clone)]
pub struct ConditionalMeanGenerator {
    pub gaussian: GaussianParams,
}

impl ConditionalGenerator for ConditionalMeanGenerator {
    fn dim(&self) -> usize {
        self.gaussian.dim()
    }

    fn sample(&self, x: &[f64], mask: &MaskPair, n: usize, _rng: &mut NcRng) -> Result<DenseMatrix> {
        let cm = conditional_moments(&self.gaussian, mask, &available_values(x, mask))?;
        let mut row = vec![0.0; self.dim()];
        for (k, &j) in cm.requested_idx.iter().enumerate() {
            row[j] = cm.mu_cond[k];
        }
        let mut out = DenseMatrix::zeros(n, self.dim());
        for i in 0..n {
            out.row_mut(i).copy_from_slice(&row);
        }
        Ok(out)
    }
}

/// Returns the same vector for every input.
#[derive(Debug, Clone)]
pub struct ConstantGenerator {
    pub value: Vec<f64>,
}

impl ConditionalGenerator for ConstantGenerator {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn sample(&self, _x: &[f64], _mask: &MaskPair, n: usize, _rng: &mut NcRng) -> Result<DenseMatrix> {
        let mut out = DenseMatrix::zeros(n, self.dim());
        for i in 0..n {
            out.row_mut(i).copy_from_slice(&self.value);
        }
        Ok(out)
    }
}

fn full_vector(d: usize, mask: &MaskPair, x_available: &[f64]) -> Result<Vec<f64>> {
    let a_idx = mask.available_idx();
    if a_idx.len() != x_available.len() {
        return shape_err(format!(
            "{} available values for {} available coordinates",
            x_available.len(),
            a_idx.len()
        ));
    }
    let mut x = vec![0.0; d];
    for (&i, &v) in a_idx.iter().zip(x_available) {
        x[i] = v;
    }
    Ok(x)
}

fn requested_block(samples: &DenseMatrix, mask: &MaskPair) -> DenseMatrix {
    let rows: Vec<usize> = (0..samples.rows()).collect();
    samples.select(&rows, &mask.requested_idx())
}

/// Sample moments of the requested coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mu_hat: Vec<f64>,
    pub sigma_hat: DenseMatrix,
    /// All draws were identical; `sigma_hat` is then exactly zero.
    pub degenerate: bool,
}

fn check_generator(gen: &dyn ConditionalGenerator, mask: &MaskPair) -> Result<()> {
    if gen.dim() != mask.dim() {
        return shape_err(format!("generator dimension {} vs mask dimension {}", gen.dim(), mask.dim()));
    }
    Ok(())
}

fn estimate_with(
    gen: &dyn ConditionalGenerator,
    mask: &MaskPair,
    x_available: &[f64],
    n: usize,
    rng: &mut NcRng,
) -> Result<MomentEstimate> {
    if n < 2 {
        return Err(NcError::Size(format!("moment estimation needs n ≥ 2, got {n}")));
    }
    check_generator(gen, mask)?;
    let x = full_vector(gen.dim(), mask, x_available)?;
    let block = requested_block(&gen.sample(&x, mask, n, rng)?, mask);
    if !block.is_finite() {
        return Err(NcError::NonFinite {
            block: "generated samples".into(),
        });
    }
    let degenerate = block.iter_rows().all(|r| r == block.row(0));
    let (mu_hat, mut sigma_hat) = mean_and_cov(&block)?;
    if degenerate {
        sigma_hat = DenseMatrix::zeros(block.cols(), block.cols());
    }
    Ok(MomentEstimate {
        mu_hat,
        sigma_hat,
        degenerate,
    })
}

/// Draws `n` samples at `x_available` and returns the mean and unbiased
/// covariance of the requested coordinates.
pub fn estimate_conditional_moments(
    gen: &dyn ConditionalGenerator,
    mask: &MaskPair,
    x_available: &[f64],
    n: usize,
    seed: u64,
) -> Result<MomentEstimate> {
    estimate_with(gen, mask, x_available, n, &mut substream(seed, Stream::Eval, 0))
}

/// `‖[μ̂ − μ_{r|a}, vec(Σ̂ − Σ_{r|a})]‖₂` with the full row-major matrix
/// vectorisation, so an off-diagonal error counts twice.
pub fn param_error_norm(est: &MomentEstimate, truth: &ConditionalMoments) -> Result<f64> {
    let k = truth.mu_cond.len();
    if est.mu_hat.len() != k || est.sigma_hat.rows() != k || est.sigma_hat.cols() != k {
        return shape_err(format!("estimate has {} coordinates, truth {k}", est.mu_hat.len()));
    }
    let mu: f64 = est.mu_hat.iter().zip(&truth.mu_cond).map(|(a, b)| (a - b).powi(2)).sum();
    let cov: f64 = est
        .sigma_hat
        .data()
        .iter()
        .zip(truth.sigma_cond.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((mu + cov).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub points_per_dim: usize,
    pub half_width_sigmas: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points_per_dim: 20,
            half_width_sigmas: 3.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.points_per_dim < 2 {
            return Err(NcError::Config("grid needs at least 2 points per coordinate".into()));
        }
        if !(self.half_width_sigmas > 0.0) {
            return Err(NcError::Config("grid half width must be positive".into()));
        }
        Ok(())
    }
}

/// Cartesian product over available coordinates of `points_per_dim`
/// equispaced values in `[μ_i − wσ_i, μ_i + wσ_i]`. The first available
/// coordinate varies slowest. With nothing available the grid is one empty
/// conditioning vector.
pub fn conditioning_grid(g: &GaussianParams, mask: &MaskPair, grid: &GridSpec) -> Result<Vec<Vec<f64>>> {
    grid.validate()?;
    if mask.dim() != g.dim() {
        return shape_err(format!("mask dimension {} vs gaussian dimension {}", mask.dim(), g.dim()));
    }
    let sd = g.std_devs();
    let axes: Vec<Vec<f64>> = mask
        .available_idx()
        .iter()
        .map(|&i| {
            let lo = g.mean()[i] - grid.half_width_sigmas * sd[i];
            let step = 2.0 * grid.half_width_sigmas * sd[i] / (grid.points_per_dim - 1) as f64;
            (0..grid.points_per_dim).map(|k| lo + step * k as f64).collect()
        })
        .collect();
    let mut points = vec![Vec::new()];
    for axis in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    /// Median pairwise distance over the pooled sample.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdResult {
    /// Unbiased estimate; `None` when either sample has fewer than 2 rows.
    pub u_stat: Option<f64>,
    pub v_stat: f64,
    pub bandwidth: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn pooled(x: &DenseMatrix, y: &DenseMatrix) -> Result<DenseMatrix> {
    if x.cols() != y.cols() {
        return shape_err(format!("samples have {} and {} columns", x.cols(), y.cols()));
    }
    if x.rows() == 0 || y.rows() == 0 {
        return Err(NcError::Size("two-sample statistics need non-empty samples".into()));
    }
    let mut data = x.data().to_vec();
    data.extend_from_slice(y.data());
    DenseMatrix::from_vec(x.rows() + y.rows(), x.cols(), data)
}

/// Median of the pairwise distances between distinct rows of `z`.
pub fn median_pairwise_distance(z: &DenseMatrix) -> f64 {
    let n = z.rows();
    let mut d: Vec<f64> = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in 0..i {
            d.push(sq_dist(z.row(i), z.row(j)).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    }
}

fn resolve_bandwidth(z: &DenseMatrix, bandwidth: Bandwidth) -> Result<f64> {
    let h = match bandwidth {
        Bandwidth::Auto => median_pairwise_distance(z),
        Bandwidth::Fixed(h) => h,
    };
    if !(h > 0.0) || !h.is_finite() {
        return Err(NcError::Bandwidth(format!("kernel bandwidth {h} is not positive")));
    }
    Ok(h)
}

fn kernel_matrix(z: &DenseMatrix, h: f64) -> Vec<f64> {
    let n = z.rows();
    let c = -0.5 / (h * h);
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let v = (c * sq_dist(z.row(i), z.row(j))).exp();
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Pooled-kernel MMD where `idx[..m]` is the first sample.
fn mmd_from_kernel(k: &[f64], n_total: usize, idx: &[usize], m: usize) -> (Option<f64>, f64) {
    let n = idx.len() - m;
    let (xs, ys) = idx.split_at(m);
    let block = |a: &[usize], b: &[usize]| -> (f64, f64) {
        let mut all = 0.0;
        let mut diag = 0.0;
        for &i in a {
            for &j in b {
                let v = k[i * n_total + j];
                all += v;
                if i == j {
                    diag += v;
                }
            }
        }
        (all, diag)
    };
    let (kxx, dx) = block(xs, xs);
    let (kyy, dy) = block(ys, ys);
    let (kxy, _) = block(xs, ys);
    let (mf, nf) = (m as f64, n as f64);
    let v = kxx / (mf * mf) + kyy / (nf * nf) - 2.0 * kxy / (mf * nf);
    let u = (m >= 2 && n >= 2)
        .then(|| (kxx - dx) / (mf * (mf - 1.0)) + (kyy - dy) / (nf * (nf - 1.0)) - 2.0 * kxy / (mf * nf));
    (u, v)
}

/// Gaussian-kernel MMD² between the rows of `x` and `y`,
/// `k(x, y) = exp(−‖x − y‖² / (2h²))`.
pub fn mmd_statistic(x: &DenseMatrix, y: &DenseMatrix, bandwidth: Bandwidth) -> Result<MmdResult> {
    let z = pooled(x, y)?;
    let h = resolve_bandwidth(&z, bandwidth)?;
    let k = kernel_matrix(&z, h);
    let idx: Vec<usize> = (0..z.rows()).collect();
    let (u_stat, v_stat) = mmd_from_kernel(&k, z.rows(), &idx, x.rows());
    Ok(MmdResult {
        u_stat,
        v_stat,
        bandwidth: h,
    })
}

/// Standard deviation of the MMD U-statistic under random relabelling of
/// the pooled sample, at the bandwidth chosen for the unpermuted data.
pub fn mmd_permutation_std(
    x: &DenseMatrix,
    y: &DenseMatrix,
    bandwidth: Bandwidth,
    permutations: usize,
    seed: u64,
) -> Result<f64> {
    if x.rows() < 2 || y.rows() < 2 || permutations < 2 {
        return Err(NcError::Size("permutation null needs ≥ 2 rows per sample and ≥ 2 permutations".into()));
    }
    let z = pooled(x, y)?;
    let h = resolve_bandwidth(&z, bandwidth)?;
    let k = kernel_matrix(&z, h);
    let mut rng = substream(seed, Stream::Eval, 0);
    let mut idx: Vec<usize> = (0..z.rows()).collect();
    let stats: Vec<f64> = (0..permutations)
        .map(|_| {
            idx.shuffle(&mut rng);
            mmd_from_kernel(&k, z.rows(), &idx, x.rows()).0.expect("sizes checked")
        })
        .collect();
    let m = stats.iter().sum::<f64>() / stats.len() as f64;
    let var = stats.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (stats.len() - 1) as f64;
    Ok(var.sqrt())
}

/// `2·E‖x − y‖ − E‖x − x′‖ − E‖y − y′‖` with V-statistic means.
pub fn energy_statistic(x: &DenseMatrix, y: &DenseMatrix) -> Result<f64> {
    pooled(x, y)?;
    let mean_dist = |a: &DenseMatrix, b: &DenseMatrix| -> f64 {
        let mut s = 0.0;
        for ra in a.iter_rows() {
            for rb in b.iter_rows() {
                s += sq_dist(ra, rb).sqrt();
            }
        }
        s / (a.rows() * b.rows()) as f64
    };
    Ok(2.0 * mean_dist(x, y) - mean_dist(x, x) - mean_dist(y, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    ParamError,
    MmdU,
    MmdV,
    Energy,
    Mse,
    JointMeanErr,
    JointCovErr,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::ParamError => "param_error",
            Metric::MmdU => "mmd_u",
            Metric::MmdV => "mmd_v",
            Metric::Energy => "energy",
            Metric::Mse => "mse",
            Metric::JointMeanErr => "joint_mean_err",
            Metric::JointCovErr => "joint_cov_err",
        }
    }
}

/// One report line. Aggregate rows carry no seed. For grid-protocol rows
/// `n_samples` counts conditioning points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub a: String,
    pub r: String,
    pub metric: Metric,
    pub value: f64,
    pub n_samples: usize,
    pub seed: Option<u64>,
    pub protocol: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

pub const CSV_HEADER: &str = "a,r,metric,value,n_samples,seed,protocol";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl EvalReport {
    fn push(&mut self, mask: &MaskPair, metric: Metric, value: f64, n_samples: usize, seed: Option<u64>, protocol: &str) -> Result<()> {
        if !value.is_finite() {
            return Err(NcError::NonFinite {
                block: format!("{} for {mask}", metric.name()),
            });
        }
        self.rows.push(ReportRow {
            a: mask.a_bits(),
            r: mask.r_bits(),
            metric,
            value,
            n_samples,
            seed,
            protocol: protocol.to_string(),
        });
        Ok(())
    }

    pub fn extend(&mut self, other: EvalReport) {
        self.rows.extend(other.rows);
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            let seed = row.seed.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                csv_field(&row.a),
                csv_field(&row.r),
                row.metric.name(),
                row.value,
                row.n_samples,
                seed,
                csv_field(&row.protocol)
            );
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| NcError::Parse(e.to_string()))
    }

    /// Rows matching the given filters.
    pub fn find<'a>(&'a self, protocol: &'a str, metric: Metric) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows
            .iter()
            .filter(move |r| r.protocol == protocol && r.metric == metric)
    }

    pub fn value(&self, protocol: &str, metric: Metric, mask: &MaskPair, seed: Option<u64>) -> Option<f64> {
        let (a, r) = (mask.a_bits(), mask.r_bits());
        self.find(protocol, metric)
            .find(|row| row.a == a && row.r == r && row.seed == seed)
            .map(|row| row.value)
    }
}

/// Benchmark rows `(a, r, MM error, AT error)` with reference errors.
pub const TABLE1_ROWS: [(&str, &str, f64, f64); 12] = [
    ("100", "001", 0.09, 0.11),
    ("100", "010", 0.10, 0.08),
    ("100", "011", 0.67, 0.13),
    ("010", "001", 0.16, 0.08),
    ("010", "100", 0.20, 0.05),
    ("010", "101", 0.28, 0.14),
    ("001", "010", 0.13, 0.11),
    ("001", "100", 0.08, 0.09),
    ("001", "110", 0.29, 0.17),
    ("101", "010", 0.22, 0.13),
    ("110", "001", 0.15, 0.08),
    ("011", "100", 0.27, 0.07),
];

/// Reference ablation means keyed by (generator masks, discriminator masks).
pub const TABLE2_CELLS: [((bool, bool), f64); 4] = [
    ((false, false), 0.12),
    ((true, false), 0.17),
    ((false, true), 0.15),
    ((true, true), 0.07),
];

pub fn table1_masks() -> Vec<MaskPair> {
    TABLE1_ROWS
        .iter()
        .map(|(a, r, _, _)| MaskPair::from_bits(a, r).expect("valid table row"))
        .collect()
}

pub const PROTOCOL_TABLE1: &str = "table1";
pub const PROTOCOL_TABLE1_MEAN: &str = "table1-mean";
pub const PROTOCOL_GRID: &str = "grid";
pub const PROTOCOL_JOINT: &str = "joint";
pub const PROTOCOL_BOUND: &str = "bound";
pub const PROTOCOL_BOUND_LOWER: &str = "bound-lower";

/// Sample sizes shared by the grid-based protocols.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub grid: GridSpec,
    /// Generator draws per conditioning point for moment estimation.
    pub n: usize,
    /// Draws per conditioning point and per side for MMD and energy.
    pub stat_n: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            n: 10_000,
            stat_n: 256,
        }
    }
}

fn check_benchmark_dim(g: &GaussianParams) -> Result<()> {
    if g.dim() != 3 {
        return Err(NcError::Config(format!(
            "benchmark rows are defined for d = 3, gaussian has d = {}",
            g.dim()
        )));
    }
    Ok(())
}

fn point_stream(seed: u64, row: usize, point: usize) -> NcRng {
    substream(seed, Stream::Eval, ((row as u64) << 24) | point as u64)
}

/// Mean over the conditioning grid of the parameter error at each point.
pub fn grid_param_error(
    gen: &dyn ConditionalGenerator,
    g: &GaussianParams,
    mask: &MaskPair,
    opts: &EvalOptions,
    seed: u64,
    row: usize,
) -> Result<f64> {
    check_generator(gen, mask)?;
    let grid = conditioning_grid(g, mask, &opts.grid)?;
    let errors = grid
        .par_iter()
        .enumerate()
        .map(|(p, xa)| {
            let est = estimate_with(gen, mask, xa, opts.n, &mut point_stream(seed, row, p))?;
            param_error_norm(&est, &conditional_moments(g, mask, xa)?)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Grid-averaged parameter error on the twelve benchmark rows for each
/// `(seed, generator)` pair, followed by the across-seed means.
pub fn table1_protocol(
    gens: &[(u64, &dyn ConditionalGenerator)],
    g: &GaussianParams,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    check_benchmark_dim(g)?;
    if gens.is_empty() {
        return Err(NcError::Config("at least one seed is required".into()));
    }
    let masks = table1_masks();
    let mut report = EvalReport::default();
    let mut sums = vec![0.0; masks.len()];
    for &(seed, gen) in gens {
        for (row, mask) in masks.iter().enumerate() {
            let err = grid_param_error(gen, g, mask, opts, seed, row)?;
            sums[row] += err;
            report.push(mask, Metric::ParamError, err, opts.n, Some(seed), PROTOCOL_TABLE1)?;
        }
    }
    for (mask, s) in masks.iter().zip(&sums) {
        report.push(mask, Metric::ParamError, s / gens.len() as f64, opts.n, None, PROTOCOL_TABLE1_MEAN)?;
    }
    Ok(report)
}

/// Per-mask summary of the grid protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub mask: MaskPair,
    pub count: usize,
    pub mmd_u: f64,
    pub mmd_v: f64,
    pub energy: f64,
}

/// Two-sample statistics between generated and exact conditional samples
/// at every grid point of each benchmark row, averaged over the grid.
pub fn grid_protocol(
    gen: &dyn ConditionalGenerator,
    g: &GaussianParams,
    opts: &EvalOptions,
    seed: u64,
) -> Result<(EvalReport, Vec<GridSummary>)> {
    check_benchmark_dim(g)?;
    let oracle = OracleGenerator { gaussian: g.clone() };
    let mut report = EvalReport::default();
    let mut summaries = Vec::new();
    for (row, mask) in table1_masks().iter().enumerate() {
        check_generator(gen, mask)?;
        let grid = conditioning_grid(g, mask, &opts.grid)?;
        let stats = grid
            .par_iter()
            .enumerate()
            .map(|(p, xa)| {
                let x = full_vector(g.dim(), mask, xa)?;
                let mut rng = point_stream(seed, row, p);
                let fake = requested_block(&gen.sample(&x, mask, opts.stat_n, &mut rng)?, mask);
                let real = requested_block(&oracle.sample(&x, mask, opts.stat_n, &mut rng)?, mask);
                let mmd = mmd_statistic(&fake, &real, Bandwidth::Auto)?;
                let u = mmd
                    .u_stat
                    .ok_or_else(|| NcError::Size("grid statistics need stat_n ≥ 2".into()))?;
                Ok((u, mmd.v_stat, energy_statistic(&fake, &real)?))
            })
            .collect::<Result<Vec<(f64, f64, f64)>>>()?;
        let count = stats.len();
        let mean = |f: fn(&(f64, f64, f64)) -> f64| stats.iter().map(f).sum::<f64>() / count as f64;
        let s = GridSummary {
            mask: mask.clone(),
            count,
            mmd_u: mean(|t| t.0),
            mmd_v: mean(|t| t.1),
            energy: mean(|t| t.2),
        };
        report.push(mask, Metric::MmdU, s.mmd_u, count, Some(seed), PROTOCOL_GRID)?;
        report.push(mask, Metric::MmdV, s.mmd_v, count, Some(seed), PROTOCOL_GRID)?;
        report.push(mask, Metric::Energy, s.energy, count, Some(seed), PROTOCOL_GRID)?;
        summaries.push(s);
    }
    Ok((report, summaries))
}

/// Mean benchmark error of one ablation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationCell {
    pub mode: ConditioningMode,
    /// `(seed, mean error over the twelve rows)`.
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
}

pub fn ablation_protocol_name(mode: ConditioningMode) -> String {
    let f = |on: bool| if on { "ar" } else { "none" };
    format!("ablation:nc={}:disc={}", f(mode.generator_masks), f(mode.discriminator_masks))
}

/// Builds the ablation report from already trained generators, one list of
/// `(seed, generator)` per conditioning cell.
pub fn ablation_from_generators(
    cells: &[(ConditioningMode, Vec<(u64, &dyn ConditionalGenerator)>)],
    g: &GaussianParams,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<AblationCell>)> {
    let mut report = EvalReport::default();
    let mut out = Vec::new();
    for (mode, gens) in cells {
        let t1 = table1_protocol(gens, g, opts)?;
        let name = ablation_protocol_name(*mode);
        let per_seed: Vec<(u64, f64)> = gens
            .iter()
            .map(|&(seed, _)| {
                let v: Vec<f64> = t1
                    .find(PROTOCOL_TABLE1, Metric::ParamError)
                    .filter(|r| r.seed == Some(seed))
                    .map(|r| r.value)
                    .collect();
                (seed, v.iter().sum::<f64>() / v.len() as f64)
            })
            .collect();
        let mean = per_seed.iter().map(|p| p.1).sum::<f64>() / per_seed.len() as f64;
        for row in t1.find(PROTOCOL_TABLE1_MEAN, Metric::ParamError) {
            report.rows.push(ReportRow {
                protocol: name.clone(),
                ..row.clone()
            });
        }
        for &(seed, v) in &per_seed {
            report.rows.push(ReportRow {
                a: "*".into(),
                r: "*".into(),
                metric: Metric::ParamError,
                value: v,
                n_samples: opts.n,
                seed: Some(seed),
                protocol: name.clone(),
            });
        }
        report.rows.push(ReportRow {
            a: "*".into(),
            r: "*".into(),
            metric: Metric::ParamError,
            value: mean,
            n_samples: opts.n,
            seed: None,
            protocol: name,
        });
        out.push(AblationCell {
            mode: *mode,
            per_seed,
            mean,
        });
    }
    Ok((report, out))
}

/// Trains one adversarial model per seed for each of the four conditioning
/// cells and evaluates them with the benchmark protocol.
pub fn ablation_suite(
    base: &TrainConfig,
    dataset: &DenseMatrix,
    seeds: &[u64],
    g: &GaussianParams,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<AblationCell>)> {
    let mut trained: Vec<(ConditioningMode, Vec<(u64, NcGenerator)>)> = Vec::new();
    for mode in ConditioningMode::all() {
        let mut gens = Vec::new();
        for &seed in seeds {
            let cfg = TrainConfig {
                conditioning: mode,
                seed,
                ..base.clone()
            };
            gens.push((seed, train(cfg, dataset)?.generator));
        }
        trained.push((mode, gens));
    }
    let cells: Vec<(ConditioningMode, Vec<(u64, &dyn ConditionalGenerator)>)> = trained
        .iter()
        .map(|(m, gs)| (*m, gs.iter().map(|(s, gen)| (*s, gen as &dyn ConditionalGenerator)).collect()))
        .collect();
    ablation_from_generators(&cells, g, opts)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointEval {
    pub mean_err: f64,
    pub cov_err: f64,
}

/// `n` draws under the joint mask `(a = 0, r = 1)`: distance of the sample
/// mean to `μ` and Frobenius distance of the sample covariance to `Σ`.
pub fn joint_sampling_eval(gen: &dyn ConditionalGenerator, g: &GaussianParams, n: usize, seed: u64) -> Result<JointEval> {
    let mask = MaskPair::joint(g.dim());
    check_generator(gen, &mask)?;
    let samples = gen.sample(&vec![0.0; g.dim()], &mask, n, &mut substream(seed, Stream::Eval, 0))?;
    let (m, c) = mean_and_cov(&samples)?;
    let mean_err = m.iter().zip(g.mean()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    Ok(JointEval {
        mean_err,
        cov_err: c.sub(g.cov())?.frobenius_norm(),
    })
}

pub fn joint_report(eval: &JointEval, d: usize, n: usize, seed: u64) -> Result<EvalReport> {
    let mask = MaskPair::joint(d);
    let mut report = EvalReport::default();
    report.push(&mask, Metric::JointMeanErr, eval.mean_err, n, Some(seed), PROTOCOL_JOINT)?;
    report.push(&mask, Metric::JointCovErr, eval.cov_err, n, Some(seed), PROTOCOL_JOINT)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionRow {
    pub mask: MaskPair,
    /// Mean over data rows and noise draws of `‖x̂_r − x_r‖²`.
    pub mse: f64,
    /// `trace(Σ_{r|a})`.
    pub bound: f64,
}

/// Reconstruction error on every complementary mask pair (`a ∪ r` is all
/// coordinates, `r` non-empty) against the conditional-mean lower bound.
pub fn reconstruction_check(
    gen: &dyn ConditionalGenerator,
    g: &GaussianParams,
    dataset: &DenseMatrix,
    z_draws: usize,
    seed: u64,
) -> Result<Vec<ReconstructionRow>> {
    if dataset.cols() != g.dim() || dataset.rows() == 0 {
        return shape_err("dataset must be non-empty with the gaussian's dimension");
    }
    if z_draws == 0 {
        return Err(NcError::Size("at least one noise draw per row is required".into()));
    }
    let masks: Vec<MaskPair> = enumerate_mask_pairs(g.dim())?
        .into_iter()
        .filter(|m| m.is_complementary() && !m.requests_nothing())
        .collect();
    masks
        .iter()
        .enumerate()
        .map(|(k, mask)| {
            check_generator(gen, mask)?;
            let r_idx = mask.requested_idx();
            let per_row = (0..dataset.rows())
                .into_par_iter()
                .map(|i| {
                    let x = dataset.row(i);
                    let mut rng = point_stream(seed, k, i);
                    let s = gen.sample(x, mask, z_draws, &mut rng)?;
                    Ok(s.iter_rows()
                        .map(|row| r_idx.iter().map(|&j| (row[j] - x[j]).powi(2)).sum::<f64>())
                        .sum::<f64>())
                })
                .collect::<Result<Vec<f64>>>()?;
            let mse = per_row.iter().sum::<f64>() / (dataset.rows() * z_draws) as f64;
            let bound = crate::gaussian::mse_lower_bound(g, mask)?;
            Ok(ReconstructionRow {
                mask: mask.clone(),
                mse,
                bound,
            })
        })
        .collect()
}

pub fn reconstruction_report(rows: &[ReconstructionRow], n_samples: usize, seed: u64) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for row in rows {
        report.push(&row.mask, Metric::Mse, row.mse, n_samples, Some(seed), PROTOCOL_BOUND)?;
        report.push(&row.mask, Metric::Mse, row.bound, n_samples, None, PROTOCOL_BOUND_LOWER)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::sample_joint;

    fn bench() -> GaussianParams {
        GaussianParams::benchmark()
    }

    #[test]
    fn mean_cov_hand_example() {
        let x = DenseMatrix::from_rows(&[[1.0, 2.0], [3.0, 6.0]]).unwrap();
        let (m, c) = mean_and_cov(&x).unwrap();
        assert_eq!(m, vec![2.0, 4.0]);
        assert_eq!(c.data(), &[2.0, 4.0, 4.0, 8.0]);
        assert!(mean_and_cov(&DenseMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn param_error_examples() {
        let truth = ConditionalMoments {
            mu_cond: vec![1.0, 2.0],
            sigma_cond: DenseMatrix::identity(2),
            requested_idx: vec![0, 1],
            available_idx: vec![],
        };
        let mut est = MomentEstimate {
            mu_hat: vec![1.0, 2.0],
            sigma_hat: DenseMatrix::identity(2),
            degenerate: false,
        };
        assert_eq!(param_error_norm(&est, &truth).unwrap(), 0.0);
        est.mu_hat = vec![1.3, 2.4];
        assert!((param_error_norm(&est, &truth).unwrap() - 0.5).abs() < 1e-12);
        est.mu_hat = vec![1.0, 2.0];
        est.sigma_hat.set(0, 1, 1.0 + 0.0 + 0.1);
        est.sigma_hat.set(1, 0, 0.1);
        est.sigma_hat.set(0, 1, 0.1);
        assert!((param_error_norm(&est, &truth).unwrap() - (2.0f64 * 0.01).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_generator_degenerate() {
        let gen = ConstantGenerator {
            value: vec![1.0, 2.0, 3.0],
        };
        let m = MaskPair::from_bits("100", "011").unwrap();
        let est = estimate_conditional_moments(&gen, &m, &[2.0], 10, 1).unwrap();
        assert!(est.degenerate);
        assert_eq!(est.mu_hat, vec![2.0, 3.0]);
        assert!(est.sigma_hat.data().iter().all(|&v| v == 0.0));
        assert!(estimate_conditional_moments(&gen, &m, &[2.0], 1, 1).is_err());
    }

    #[test]
    fn oracle_estimates_are_seeded() {
        let gen = OracleGenerator { gaussian: bench() };
        let m = MaskPair::from_bits("010", "101").unwrap();
        let a = estimate_conditional_moments(&gen, &m, &[4.5], 500, 3).unwrap();
        let b = estimate_conditional_moments(&gen, &m, &[4.5], 500, 3).unwrap();
        let c = estimate_conditional_moments(&gen, &m, &[4.5], 500, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn grid_shapes() {
        let g = bench();
        let spec = GridSpec::default();
        let one = conditioning_grid(&g, &MaskPair::from_bits("100", "011").unwrap(), &spec).unwrap();
        assert_eq!(one.len(), 20);
        assert!((one[0][0] + 1.0).abs() < 1e-12 && (one[19][0] - 5.0).abs() < 1e-12);
        let two = conditioning_grid(&g, &MaskPair::from_bits("101", "010").unwrap(), &spec).unwrap();
        assert_eq!(two.len(), 400);
        assert_eq!(two[1], vec![-1.0, 3.0 + 6.0 / 19.0]);
        let none = conditioning_grid(&g, &MaskPair::joint(3), &spec).unwrap();
        assert_eq!(none, vec![Vec::<f64>::new()]);
        assert!(conditioning_grid(&g, &MaskPair::joint(3), &GridSpec { points_per_dim: 1, ..spec }).is_err());
    }

    #[test]
    fn mmd_identities() {
        let x = DenseMatrix::from_rows(&[[0.0, 1.0], [2.0, 0.5], [1.0, -1.0]]).unwrap();
        let r = mmd_statistic(&x, &x, Bandwidth::Auto).unwrap();
        assert!(r.v_stat.abs() < 1e-15);
        let single = DenseMatrix::zeros(1, 1);
        assert!(matches!(mmd_statistic(&single, &single, Bandwidth::Auto), Err(NcError::Bandwidth(_))));
        let fixed = mmd_statistic(&single, &single, Bandwidth::Fixed(1.0)).unwrap();
        assert_eq!(fixed.v_stat, 0.0);
        assert!(fixed.u_stat.is_none());
    }

    #[test]
    fn mmd_two_point_hand_value() {
        // X = {0}, Y = {1}, h = 1: v = 1 + 1 − 2e^{−1/2}
        let x = DenseMatrix::from_rows(&[[0.0]]).unwrap();
        let y = DenseMatrix::from_rows(&[[1.0]]).unwrap();
        let r = mmd_statistic(&x, &y, Bandwidth::Auto).unwrap();
        assert_eq!(r.bandwidth, 1.0);
        assert!((r.v_stat - (2.0 - 2.0 * (-0.5f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn energy_examples() {
        let x = DenseMatrix::from_rows(&[[0.0]]).unwrap();
        let y = DenseMatrix::from_rows(&[[1.0]]).unwrap();
        assert_eq!(energy_statistic(&x, &y).unwrap(), 2.0);
        let z = sample_joint(&bench(), 40, 1).unwrap();
        assert_eq!(energy_statistic(&z, &z).unwrap(), 0.0);
    }

    #[test]
    fn csv_layout() {
        let mut rep = EvalReport::default();
        let m = MaskPair::from_bits("100", "011").unwrap();
        rep.push(&m, Metric::ParamError, 0.25, 10, Some(3), "table1").unwrap();
        rep.push(&m, Metric::ParamError, 0.5, 10, None, "a,b").unwrap();
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "100,011,param_error,0.25,10,3,table1");
        assert_eq!(lines[2], "100,011,param_error,0.5,10,,\"a,b\"");
        let back: EvalReport = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(back, rep);
        assert!(rep.push(&m, Metric::Mse, f64::NAN, 1, None, "x").is_err());
    }

    #[test]
    fn constant_joint_errors() {
        let g = bench();
        let gen = ConstantGenerator {
            value: vec![1.0, 1.0, 1.0],
        };
        let e = joint_sampling_eval(&gen, &g, 50, 1).unwrap();
        assert!((e.mean_err - (1.0f64 + 9.0 + 25.0).sqrt()).abs() < 1e-12);
        assert!((e.cov_err - g.cov().frobenius_norm()).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_masks_and_bounds() {
        let g = bench();
        let data = sample_joint(&g, 50, 1).unwrap();
        let gen = ConditionalMeanGenerator { gaussian: g.clone() };
        let rows = reconstruction_check(&gen, &g, &data, 1, 2).unwrap();
        assert_eq!(rows.len(), 7);
        assert!(rows.iter().all(|r| r.mask.is_complementary()));
        let joint = rows.iter().find(|r| r.mask.is_joint()).unwrap();
        assert!((joint.bound - 3.0).abs() < 1e-12);
    }

    #[test]
    fn table_rows_have_requested_counts() {
        let masks = table1_masks();
        assert_eq!(masks.len(), 12);
        assert_eq!(masks.iter().filter(|m| m.available_idx().len() == 2).count(), 3);
    }
}
