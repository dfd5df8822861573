//! The mask-conditioned generator and its discriminator.
//!
//! Generator input layout (`3d + z_dim` wide): `[x·a | a | r | z]`.
//! Discriminator input layout (`4d` wide): `[first slot | x·a | a | r]`, where
//! the first slot is `x·r` for data rows and the (optionally masked) generated
//! vector for fake rows. Disabling mask conditioning zeroes the `a` and `r`
//! slots but keeps their width, so every ablation shares one architecture.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NcError, Result};
use crate::masking::MaskPair;
use crate::numeric::{DenseMatrix, ForwardCache, MlpParams};

/// Whether each network sees the mask slots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditioningMode {
    pub generator_masks: bool,
    pub discriminator_masks: bool,
}

impl Default for ConditioningMode {
    fn default() -> Self {
        Self {
            generator_masks: true,
            discriminator_masks: true,
        }
    }
}

impl ConditioningMode {
    pub fn all() -> [ConditioningMode; 4] {
        [
            (false, false),
            (true, false),
            (false, true),
            (true, true),
        ]
        .map(|(g, d)| ConditioningMode {
            generator_masks: g,
            discriminator_masks: d,
        })
    }

    /// Label in the `generator/discriminator` layout, `∅` for unconditioned.
    pub fn label(&self) -> String {
        let f = |on: bool| if on { "(a,r)" } else { "∅" };
        format!("nc={} disc={}", f(self.generator_masks), f(self.discriminator_masks))
    }
}

/// Per-coordinate affine map between data space and the space the networks
/// operate in: `model = (data − shift) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(d: usize) -> Self {
        Self {
            shift: vec![0.0; d],
            scale: vec![1.0; d],
        }
    }

    /// Column means and standard deviations of `data`.
    pub fn fit(data: &DenseMatrix) -> Result<Self> {
        let (mean, cov) = crate::evaluation::mean_and_cov(data)?;
        let scale = (0..data.cols())
            .map(|j| {
                let s = cov.get(j, j).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { shift: mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn to_model(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn to_data(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.shift.iter().zip(&self.scale))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn matrix_to_model(&self, x: &DenseMatrix) -> DenseMatrix {
        self.map_rows(x, |row| self.to_model(row))
    }

    pub fn matrix_to_data(&self, x: &DenseMatrix) -> DenseMatrix {
        self.map_rows(x, |row| self.to_data(row))
    }

    fn map_rows(&self, x: &DenseMatrix, f: impl Fn(&[f64]) -> Vec<f64>) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            out.row_mut(i).copy_from_slice(&f(x.row(i)));
        }
        out
    }
}

fn check_len(name: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return shape_err(format!("{name} has length {got}, expected {want}"));
    }
    Ok(())
}

fn write_masked(dst: &mut [f64], x: &[f64], m: &[bool]) {
    for ((o, &v), &b) in dst.iter_mut().zip(x).zip(m) {
        *o = if b { v } else { 0.0 };
    }
}

fn write_bits(dst: &mut [f64], m: &[bool], on: bool) {
    for (o, &b) in dst.iter_mut().zip(m) {
        *o = if on && b { 1.0 } else { 0.0 };
    }
}

/// `[x·a, a, r, z]`, with `a` and `r` zeroed when `generator_masks` is off.
pub fn assemble_generator_input(x: &[f64], mask: &MaskPair, z: &[f64], mode: ConditioningMode) -> Result<Vec<f64>> {
    let d = mask.dim();
    check_len("x", x.len(), d)?;
    let mut out = vec![0.0; 3 * d + z.len()];
    fill_generator_row(&mut out, x, mask, z, mode.generator_masks);
    Ok(out)
}

fn fill_generator_row(out: &mut [f64], x: &[f64], mask: &MaskPair, z: &[f64], masks_on: bool) {
    let d = mask.dim();
    write_masked(&mut out[..d], x, mask.available());
    write_bits(&mut out[d..2 * d], mask.available(), masks_on);
    write_bits(&mut out[2 * d..3 * d], mask.requested(), masks_on);
    out[3 * d..].copy_from_slice(z);
}

/// `[first_slot, x·a, a, r]`, with `a` and `r` zeroed when
/// `discriminator_masks` is off.
pub fn assemble_discriminator_input(
    first_slot: &[f64],
    x: &[f64],
    mask: &MaskPair,
    mode: ConditioningMode,
) -> Result<Vec<f64>> {
    let d = mask.dim();
    check_len("first slot", first_slot.len(), d)?;
    check_len("x", x.len(), d)?;
    let mut out = vec![0.0; 4 * d];
    fill_discriminator_row(&mut out, first_slot, x, mask, mode.discriminator_masks);
    Ok(out)
}

fn fill_discriminator_row(out: &mut [f64], first: &[f64], x: &[f64], mask: &MaskPair, masks_on: bool) {
    let d = mask.dim();
    out[..d].copy_from_slice(first);
    write_masked(&mut out[d..2 * d], x, mask.available());
    write_bits(&mut out[2 * d..3 * d], mask.available(), masks_on);
    write_bits(&mut out[3 * d..4 * d], mask.requested(), masks_on);
}

/// Generator network plus the data normalisation it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcGenerator {
    pub mlp: MlpParams,
    pub d: usize,
    pub z_dim: usize,
    pub condition_on_masks: bool,
    /// Leading layers forming the encoder; their output is the latent code.
    pub encoder_depth: usize,
    pub normalizer: Normalizer,
}

impl NcGenerator {
    pub fn from_parts(
        mlp: MlpParams,
        d: usize,
        z_dim: usize,
        condition_on_masks: bool,
        encoder_depth: usize,
        normalizer: Normalizer,
    ) -> Result<Self> {
        if mlp.in_dim() != 3 * d + z_dim {
            return shape_err(format!(
                "generator in-dim {} should be 3d + z_dim = {}",
                mlp.in_dim(),
                3 * d + z_dim
            ));
        }
        check_len("generator output", mlp.out_dim(), d)?;
        check_len("normalizer", normalizer.dim(), d)?;
        if encoder_depth >= mlp.depth() {
            return Err(NcError::Config(format!(
                "encoder depth {encoder_depth} must be below the layer count {}",
                mlp.depth()
            )));
        }
        Ok(Self {
            mlp,
            d,
            z_dim,
            condition_on_masks,
            encoder_depth,
            normalizer,
        })
    }

    /// He-initialised generator with the given hidden widths.
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        z_dim: usize,
        hidden: &[usize],
        condition_on_masks: bool,
        normalizer: Normalizer,
        rng: &mut R,
    ) -> Result<Self> {
        let dims: Vec<usize> = std::iter::once(3 * d + z_dim)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(d))
            .collect();
        let encoder_depth = hidden.len().min(2);
        Self::from_parts(MlpParams::he_init(&dims, rng)?, d, z_dim, condition_on_masks, encoder_depth, normalizer)
    }

    pub fn input_dim(&self) -> usize {
        3 * self.d + self.z_dim
    }

    fn mode(&self) -> ConditioningMode {
        ConditioningMode {
            generator_masks: self.condition_on_masks,
            discriminator_masks: true,
        }
    }

    /// Assembles a batch in model space: one row per example.
    pub(crate) fn assemble_batch(&self, x_model: &DenseMatrix, masks: &[MaskPair], z: &DenseMatrix) -> Result<DenseMatrix> {
        if x_model.rows() != masks.len() || z.rows() != masks.len() {
            return shape_err("batch rows, masks and noise rows must agree");
        }
        check_len("noise row", z.cols(), self.z_dim)?;
        check_len("x row", x_model.cols(), self.d)?;
        let mut out = DenseMatrix::zeros(masks.len(), self.input_dim());
        for (i, m) in masks.iter().enumerate() {
            check_len("mask", m.dim(), self.d)?;
            fill_generator_row(out.row_mut(i), x_model.row(i), m, z.row(i), self.condition_on_masks);
        }
        Ok(out)
    }

    /// Model-space forward pass over a batch, keeping the cache for training.
    pub(crate) fn forward_model(&self, x_model: &DenseMatrix, masks: &[MaskPair], z: &DenseMatrix) -> Result<ForwardCache> {
        let input = self.assemble_batch(x_model, masks, z)?;
        self.mlp.forward_batch(&input)
    }

    /// `x̂ = NC(x·a, a, r, z)` in data space.
    pub fn generate(&self, x: &[f64], mask: &MaskPair, z: &[f64]) -> Result<Vec<f64>> {
        check_len("x", x.len(), self.d)?;
        check_len("z", z.len(), self.z_dim)?;
        let xm = self.normalizer.to_model(x);
        let input = assemble_generator_input(&xm, mask, z, self.mode())?;
        let out = self.mlp.predict_batch(&DenseMatrix::from_vec(1, input.len(), input)?)?;
        Ok(self.normalizer.to_data(out.row(0)))
    }

    /// One generated row per noise row, all for the same `(x, mask)`.
    pub fn generate_many(&self, x: &[f64], mask: &MaskPair, z: &DenseMatrix) -> Result<DenseMatrix> {
        check_len("x", x.len(), self.d)?;
        check_len("noise row", z.cols(), self.z_dim)?;
        check_len("mask", mask.dim(), self.d)?;
        let xm = self.normalizer.to_model(x);
        let mut input = DenseMatrix::zeros(z.rows(), self.input_dim());
        for i in 0..z.rows() {
            fill_generator_row(input.row_mut(i), &xm, mask, z.row(i), self.condition_on_masks);
        }
        let out = self.mlp.predict_batch(&input)?;
        Ok(self.normalizer.matrix_to_data(&out))
    }

    /// Encoder activations for `(x·a, a, r)` with zero noise.
    pub fn embed(&self, x: &[f64], mask: &MaskPair) -> Result<Vec<f64>> {
        check_len("x", x.len(), self.d)?;
        let xm = self.normalizer.to_model(x);
        let z = vec![0.0; self.z_dim];
        let input = assemble_generator_input(&xm, mask, &z, self.mode())?;
        let h = self
            .mlp
            .predict_prefix(&DenseMatrix::from_vec(1, input.len(), input)?, self.encoder_depth)?;
        Ok(h.into_data())
    }

    pub fn embedding_dim(&self) -> usize {
        self.mlp.layers()[self.encoder_depth - 1].out_dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcDiscriminator {
    pub mlp: MlpParams,
    pub d: usize,
    pub condition_on_masks: bool,
}

impl NcDiscriminator {
    pub fn from_parts(mlp: MlpParams, d: usize, condition_on_masks: bool) -> Result<Self> {
        check_len("discriminator input", mlp.in_dim(), 4 * d)?;
        if mlp.out_dim() != 1 {
            return Err(NcError::Contract(format!(
                "discriminator must output one logit, has {}",
                mlp.out_dim()
            )));
        }
        Ok(Self {
            mlp,
            d,
            condition_on_masks,
        })
    }

    pub fn init<R: Rng + ?Sized>(d: usize, hidden: &[usize], condition_on_masks: bool, rng: &mut R) -> Result<Self> {
        let dims: Vec<usize> = std::iter::once(4 * d)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        Self::from_parts(MlpParams::he_init(&dims, rng)?, d, condition_on_masks)
    }

    /// Builds a batch of assembled inputs from first-slot rows.
    pub(crate) fn assemble_batch(&self, first: &DenseMatrix, x_model: &DenseMatrix, masks: &[MaskPair]) -> Result<DenseMatrix> {
        if first.rows() != masks.len() || x_model.rows() != masks.len() {
            return shape_err("batch rows and masks must agree");
        }
        check_len("first slot", first.cols(), self.d)?;
        let mut out = DenseMatrix::zeros(masks.len(), 4 * self.d);
        for (i, m) in masks.iter().enumerate() {
            fill_discriminator_row(out.row_mut(i), first.row(i), x_model.row(i), m, self.condition_on_masks);
        }
        Ok(out)
    }

    /// Raw logit for one assembled input.
    pub fn score(&self, assembled: &[f64]) -> Result<f64> {
        let out = self
            .mlp
            .predict_batch(&DenseMatrix::from_vec(1, assembled.len(), assembled.to_vec())?)?;
        Ok(out.get(0, 0))
    }
}
