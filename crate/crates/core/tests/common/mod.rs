//! Finite-difference gradient checks shared by the gradient tests and the
//! acceptance suite. Each check returns the worst per-component error
//! `|analytic − numeric| / max(|analytic|, |numeric|, 1)` over all cases.
#![allow(dead_code)]

use nc_core::masking::{sample_mask_pair, MaskDistributionSpec, MaskPair};
use nc_core::model::{assemble_generator_input, ConditioningMode, NcDiscriminator, NcGenerator, Normalizer};
use nc_core::numeric::{DenseMatrix, MlpGrads, MlpParams};
use nc_core::training::{discriminator_loss, moment_matching_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const FD_STEP: f64 = 1e-5;
/// Cases with a hidden pre-activation closer than this to zero are redrawn,
/// since the finite-difference stencil would straddle a ReLU kink.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn component_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

fn worst(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| component_error(a, n))
        .fold(0.0, f64::max)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

pub fn random_mlp(dims: &[usize], rng: &mut ChaCha8Rng) -> MlpParams {
    let mut p = MlpParams::he_init(dims, rng).unwrap();
    for layer in p.layers_mut() {
        layer.bias.iter_mut().for_each(|b| *b = 0.3 * rng.sample::<f64, _>(StandardNormal));
    }
    p
}

pub fn near_kink(p: &MlpParams, x: &DenseMatrix) -> bool {
    let cache = p.forward_batch(x).unwrap();
    let hidden = cache.pre.len() - 1;
    cache.pre[..hidden]
        .iter()
        .any(|m| m.data().iter().any(|v| v.abs() < KINK_MARGIN))
}

/// Central differences of `f` over every parameter of `p`, in block order.
pub fn numeric_param_grad(p: &MlpParams, mut f: impl FnMut(&MlpParams) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut q = p.clone();
    let n_blocks = q.blocks().len();
    for b in 0..n_blocks {
        let len = q.blocks()[b].len();
        for i in 0..len {
            let orig = q.blocks()[b][i];
            q.blocks_mut()[b][i] = orig + FD_STEP;
            let up = f(&q);
            q.blocks_mut()[b][i] = orig - FD_STEP;
            let down = f(&q);
            q.blocks_mut()[b][i] = orig;
            out.push((up - down) / (2.0 * FD_STEP));
        }
    }
    out
}

fn random_dims(rng: &mut ChaCha8Rng, out: Option<usize>) -> Vec<usize> {
    let depth = rng.random_range(1..=3);
    let mut dims = vec![rng.random_range(1..=16)];
    for _ in 0..depth {
        dims.push(rng.random_range(1..=16));
    }
    dims.push(out.unwrap_or_else(|| rng.random_range(1..=16)));
    dims
}

/// Reverse-mode parameter and input gradients of `Σ ⟨g, f(x)⟩`.
pub fn check_mlp_backward(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_err: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let dims = random_dims(&mut rng, None);
        let p = random_mlp(&dims, &mut rng);
        let batch = rng.random_range(1..=4);
        let x = random_matrix(batch, dims[0], &mut rng);
        if near_kink(&p, &x) {
            continue;
        }
        let og = random_matrix(batch, *dims.last().unwrap(), &mut rng);
        let objective = |q: &MlpParams, x: &DenseMatrix| -> f64 {
            let y = q.predict_batch(x).unwrap();
            y.data().iter().zip(og.data()).map(|(a, b)| a * b).sum()
        };
        let cache = p.forward_batch(&x).unwrap();
        let (grads, input_grad) = p.backward_batch(&cache, &og).unwrap();
        let numeric = numeric_param_grad(&p, |q| objective(q, &x));
        worst_err = worst_err.max(worst(&grads.flatten(), &numeric));

        let mut xin = x.clone();
        let mut num_in = Vec::new();
        for i in 0..xin.data().len() {
            let orig = xin.data()[i];
            xin.data_mut()[i] = orig + FD_STEP;
            let up = objective(&p, &xin);
            xin.data_mut()[i] = orig - FD_STEP;
            let down = objective(&p, &xin);
            xin.data_mut()[i] = orig;
            num_in.push((up - down) / (2.0 * FD_STEP));
        }
        worst_err = worst_err.max(worst(input_grad.data(), &num_in));
        done += 1;
    }
    worst_err
}

/// Parameter gradient of the weighted squared input-gradient norm.
pub fn check_input_grad_penalty(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_err: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let dims = random_dims(&mut rng, Some(1));
        let p = random_mlp(&dims, &mut rng);
        let batch = rng.random_range(1..=4);
        let x = random_matrix(batch, dims[0], &mut rng);
        if near_kink(&p, &x) {
            continue;
        }
        let w: Vec<f64> = (0..batch).map(|_| rng.random_range(0.1..2.0)).collect();
        let (_, grads) = p.input_grad_sq_norm_batch(&x, &w).unwrap();
        let numeric = numeric_param_grad(&p, |q| {
            let (v, _) = q.input_grad_sq_norm_batch(&x, &w).unwrap();
            v.iter().zip(&w).map(|(a, b)| a * b).sum()
        });
        worst_err = worst_err.max(worst(&grads.flatten(), &numeric));
        done += 1;
    }
    worst_err
}

fn grads_of(g: &MlpGrads) -> Vec<f64> {
    g.flatten()
}

/// Full discriminator objective including the gradient penalty.
pub fn check_discriminator_loss(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_err: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let d = rng.random_range(1..=3);
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=8)).collect();
        let dims: Vec<usize> = std::iter::once(4 * d).chain(hidden).chain(std::iter::once(1)).collect();
        let disc = NcDiscriminator::from_parts(random_mlp(&dims, &mut rng), d, true).unwrap();
        let batch = rng.random_range(1..=5);
        let real = random_matrix(batch, 4 * d, &mut rng);
        let fake = random_matrix(batch, 4 * d, &mut rng);
        if near_kink(&disc.mlp, &real) || near_kink(&disc.mlp, &fake) {
            continue;
        }
        let gamma = if done % 4 == 0 { 0.0 } else { rng.random_range(0.1..2.0) };
        let out = discriminator_loss(&disc, &real, &fake, gamma).unwrap();
        let numeric = numeric_param_grad(&disc.mlp, |q| {
            let dq = NcDiscriminator::from_parts(q.clone(), d, true).unwrap();
            discriminator_loss(&dq, &real, &fake, gamma).unwrap().loss
        });
        worst_err = worst_err.max(worst(&grads_of(&out.grads), &numeric));
        done += 1;
    }
    worst_err
}

/// Moment-matching loss through a small generator.
pub fn check_moment_matching_loss(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_err: f64 = 0.0;
    let mut done = 0;
    while done < cases {
        let d = rng.random_range(1..=3);
        let z_dim = rng.random_range(1..=3);
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=8)).collect();
        let gen = NcGenerator::init(d, z_dim, &hidden, true, Normalizer::identity(d), &mut rng).unwrap();
        let mut gen = gen;
        for layer in gen.mlp.layers_mut() {
            layer.bias.iter_mut().for_each(|b| *b = 0.3 * rng.sample::<f64, _>(StandardNormal));
        }
        let mask: MaskPair = sample_mask_pair(&MaskDistributionSpec::bernoulli(0.5, 0.5), d, &mut rng).unwrap();
        let batch = rng.random_range(2..=6);
        let x = random_matrix(batch, d, &mut rng);
        let z = random_matrix(batch, z_dim, &mut rng);
        let mut assembled = DenseMatrix::zeros(batch, 3 * d + z_dim);
        for i in 0..batch {
            let row = assemble_generator_input(x.row(i), &mask, z.row(i), ConditioningMode::default()).unwrap();
            assembled.row_mut(i).copy_from_slice(&row);
        }
        if near_kink(&gen.mlp, &assembled) {
            continue;
        }
        let out = moment_matching_loss(&gen, &x, &mask, &z).unwrap();
        let numeric = numeric_param_grad(&gen.mlp, |q| {
            let mut gq = gen.clone();
            gq.mlp = q.clone();
            moment_matching_loss(&gq, &x, &mask, &z).unwrap().loss
        });
        worst_err = worst_err.max(worst(&grads_of(&out.grads), &numeric));
        done += 1;
    }
    worst_err
}
