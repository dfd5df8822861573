//! Adversarial and moment-matching training of the conditioner.
//!
//! One adversarial step performs `d_steps_per_g` discriminator updates then
//! one generator update. Every update draws a fresh minibatch (with
//! replacement) from the fixed training set, one mask pair and one noise
//! vector per example. The discriminator minimises binary cross-entropy plus
//! `γ/2` times the mean squared input-gradient norm over real and fake rows;
//! the generator minimises the non-saturating loss `−E log σ(D(fake))`.
//! After each generator update the encoder layers are projected so that
//! their spectral norm does not exceed one.

use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, NcError, Result};
use crate::masking::{sample_mask_pair, MaskDistributionSpec, MaskPair};
use crate::model::{ConditioningMode, NcDiscriminator, NcGenerator, Normalizer};
use crate::numeric::{one_sided_sn_project, sigma_max, AdamState, DenseMatrix, MlpGrads};
use crate::rng::{stream, NcRng, Stream};

/// Log arguments are clamped below at this value.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    Adversarial,
    MomentMatching,
}

impl std::str::FromStr for TrainMode {
    type Err = NcError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adversarial" => Ok(TrainMode::Adversarial),
            "moment-matching" => Ok(TrainMode::MomentMatching),
            other => Err(NcError::Config(format!("unknown training mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Gradient-penalty coefficient γ.
    pub gp_coeff: f64,
    pub sn_enabled: bool,
    /// Minimum warm-started power iterations per projection.
    pub sn_iters: usize,
    pub d_steps_per_g: usize,
    pub mask_spec: MaskDistributionSpec,
    /// Multiply generated vectors by `r` before scoring them.
    pub mask_fake_output: bool,
    pub mode: TrainMode,
    pub conditioning: ConditioningMode,
    pub z_dim: usize,
    pub hidden: Vec<usize>,
    /// Train on per-coordinate standardised data.
    pub standardize: bool,
    pub seed: u64,
    /// Record one trace row every this many steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch: 512,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            gp_coeff: 1.0,
            sn_enabled: true,
            sn_iters: 1,
            d_steps_per_g: 1,
            mask_spec: MaskDistributionSpec::gaussian_experiment(),
            mask_fake_output: true,
            mode: TrainMode::Adversarial,
            conditioning: ConditioningMode::default(),
            z_dim: 3,
            hidden: vec![64, 64],
            standardize: true,
            seed: 0,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch < 1 {
            return Err(NcError::Config("batch must be at least 1".into()));
        }
        if self.mode == TrainMode::MomentMatching && self.batch < 2 {
            return Err(NcError::Config("moment matching needs batch ≥ 2".into()));
        }
        if !(self.lr > 0.0) {
            return Err(NcError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.gp_coeff >= 0.0) {
            return Err(NcError::Config(format!("gradient penalty {} must be ≥ 0", self.gp_coeff)));
        }
        if self.d_steps_per_g < 1 || self.log_every < 1 || self.sn_iters < 1 {
            return Err(NcError::Config(
                "d_steps_per_g, log_every and sn_iters must be at least 1".into(),
            ));
        }
        if self.hidden.is_empty() {
            return Err(NcError::Config("at least one hidden layer is required".into()));
        }
        self.mask_spec.validate()
    }
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub step: usize,
    pub d_loss: Option<f64>,
    pub g_loss: f64,
    pub gp_value: Option<f64>,
    /// Spectral norm of each generator layer after the step (encoder layers
    /// after projection).
    pub sigma_max: Vec<f64>,
    pub logit_real_mean: Option<f64>,
    pub logit_real_std: Option<f64>,
    pub logit_fake_mean: Option<f64>,
    pub logit_fake_std: Option<f64>,
}

/// `−log max(σ(l), LOG_CLAMP)` and its derivative in `l`.
fn neg_log_sigmoid(l: f64) -> (f64, f64) {
    let value = if l > 0.0 {
        (-l).exp().ln_1p()
    } else {
        -l + l.exp().ln_1p()
    };
    let cap = -LOG_CLAMP.ln();
    if value >= cap {
        return (cap, 0.0);
    }
    let sig = 1.0 / (1.0 + (-l).exp());
    (value, sig - 1.0)
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len().max(1) as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

fn check_logits(logits: &DenseMatrix, what: &str) -> Result<()> {
    if let Some(i) = logits.data().iter().position(|v| !v.is_finite()) {
        return Err(NcError::NonFinite {
            block: format!("{what} logit at batch index {i}"),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DiscriminatorLoss {
    pub loss: f64,
    pub grads: MlpGrads,
    /// `½ (mean ‖∇‖² on real rows + mean ‖∇‖² on fake rows)`, before γ.
    pub gp_value: f64,
    pub logits_real: Vec<f64>,
    pub logits_fake: Vec<f64>,
}

/// `−mean log σ(D(real)) − mean log(1 − σ(D(fake))) + (γ/2)(E‖∇D(real)‖² + E‖∇D(fake)‖²)`
/// with the penalty gradients taken with respect to the full assembled input.
pub fn discriminator_loss(
    disc: &NcDiscriminator,
    real_inputs: &DenseMatrix,
    fake_inputs: &DenseMatrix,
    gp_coeff: f64,
) -> Result<DiscriminatorLoss> {
    if real_inputs.rows() != fake_inputs.rows() || real_inputs.rows() == 0 {
        return shape_err("real and fake batches must be non-empty and equally sized");
    }
    let n = real_inputs.rows();
    let inv_n = 1.0 / n as f64;
    let cache_real = disc.mlp.forward_batch(real_inputs)?;
    let cache_fake = disc.mlp.forward_batch(fake_inputs)?;
    check_logits(cache_real.output(), "real")?;
    check_logits(cache_fake.output(), "fake")?;

    let mut loss = 0.0;
    let mut g_real = DenseMatrix::zeros(n, 1);
    let mut g_fake = DenseMatrix::zeros(n, 1);
    for i in 0..n {
        let (v, d) = neg_log_sigmoid(cache_real.output().get(i, 0));
        loss += v * inv_n;
        g_real.set(i, 0, d * inv_n);
        // −log(1 − σ(l)) = −log σ(−l)
        let (v, d) = neg_log_sigmoid(-cache_fake.output().get(i, 0));
        loss += v * inv_n;
        g_fake.set(i, 0, -d * inv_n);
    }
    let (mut grads, _) = disc.mlp.backward_batch(&cache_real, &g_real)?;
    let (gf, _) = disc.mlp.backward_batch(&cache_fake, &g_fake)?;
    grads.add_scaled(1.0, &gf);

    let mut gp_value = 0.0;
    if gp_coeff > 0.0 {
        let w = vec![0.5 * gp_coeff * inv_n; n];
        let (vr, gr) = disc.mlp.input_grad_sq_norm_from_cache(&cache_real, &w)?;
        let (vf, gfp) = disc.mlp.input_grad_sq_norm_from_cache(&cache_fake, &w)?;
        gp_value = 0.5 * (vr.iter().sum::<f64>() + vf.iter().sum::<f64>()) * inv_n;
        grads.add_scaled(1.0, &gr);
        grads.add_scaled(1.0, &gfp);
        loss += gp_coeff * gp_value;
    }
    if !loss.is_finite() {
        return Err(NcError::NonFinite {
            block: "discriminator loss".into(),
        });
    }
    Ok(DiscriminatorLoss {
        loss,
        grads,
        gp_value,
        logits_real: cache_real.output().data().to_vec(),
        logits_fake: cache_fake.output().data().to_vec(),
    })
}

#[derive(Debug, Clone)]
pub struct GeneratorLoss {
    pub loss: f64,
    /// Gradient with respect to the generated vectors (`batch × d`).
    pub grad_generated: DenseMatrix,
    pub logits_fake: Vec<f64>,
}

/// Non-saturating loss `−mean log σ(D(fake))`. Gradients flow only through
/// the first input slot; with `mask_fake_output` they are zeroed where `r = 0`.
pub fn generator_loss(
    disc: &NcDiscriminator,
    fake_inputs: &DenseMatrix,
    masks: &[MaskPair],
    mask_fake_output: bool,
) -> Result<GeneratorLoss> {
    let n = fake_inputs.rows();
    if n == 0 || masks.len() != n {
        return shape_err("one mask per fake row required");
    }
    let d = disc.d;
    let inv_n = 1.0 / n as f64;
    let cache = disc.mlp.forward_batch(fake_inputs)?;
    check_logits(cache.output(), "fake")?;
    let mut loss = 0.0;
    let mut g = DenseMatrix::zeros(n, 1);
    for i in 0..n {
        let (v, dl) = neg_log_sigmoid(cache.output().get(i, 0));
        loss += v * inv_n;
        g.set(i, 0, dl * inv_n);
    }
    let input_grad = disc.mlp.input_gradient_batch(&cache, &g)?;
    let mut grad_generated = DenseMatrix::zeros(n, d);
    for (i, m) in masks.iter().enumerate() {
        let src = &input_grad.row(i)[..d];
        let dst = grad_generated.row_mut(i);
        for ((o, &s), &keep) in dst.iter_mut().zip(src).zip(m.requested()) {
            *o = if mask_fake_output && !keep { 0.0 } else { s };
        }
    }
    if !loss.is_finite() {
        return Err(NcError::NonFinite {
            block: "generator loss".into(),
        });
    }
    Ok(GeneratorLoss {
        loss,
        grad_generated,
        logits_fake: cache.output().data().to_vec(),
    })
}

/// Moment discrepancy between `y_i = [x_i·r, x_i·a]` and
/// `ŷ_i = [x̂_i·r, x_i·a]`: squared mean difference plus squared Frobenius
/// covariance difference (unbiased covariances). Returns the loss and its
/// gradient with respect to the generated rows.
pub fn moment_matching_objective(
    generated: &DenseMatrix,
    x: &DenseMatrix,
    mask: &MaskPair,
) -> Result<(f64, DenseMatrix)> {
    let n = generated.rows();
    if n < 2 {
        return Err(NcError::Config("moment matching needs at least two rows".into()));
    }
    let d = mask.dim();
    if x.rows() != n || x.cols() != d || generated.cols() != d {
        return shape_err("generated and data batches must both be n × d");
    }
    let k = 2 * d;
    let mut y = DenseMatrix::zeros(n, k);
    let mut yh = DenseMatrix::zeros(n, k);
    for i in 0..n {
        let (xr, xg) = (x.row(i), generated.row(i));
        for j in 0..d {
            let r = mask.requested()[j];
            let a = mask.available()[j];
            y.set(i, j, if r { xr[j] } else { 0.0 });
            yh.set(i, j, if r { xg[j] } else { 0.0 });
            let av = if a { xr[j] } else { 0.0 };
            y.set(i, d + j, av);
            yh.set(i, d + j, av);
        }
    }
    let (m_y, c_y) = crate::evaluation::mean_and_cov(&y)?;
    let (m_h, c_h) = crate::evaluation::mean_and_cov(&yh)?;
    let dm: Vec<f64> = m_h.iter().zip(&m_y).map(|(a, b)| a - b).collect();
    let dc = c_h.sub(&c_y)?;
    let loss = dm.iter().map(|v| v * v).sum::<f64>() + dc.data().iter().map(|v| v * v).sum::<f64>();

    // ∂/∂ŷ_i = 2 dm / n + (4 / (n−1)) dC (ŷ_i − m̂)
    let mut grad = DenseMatrix::zeros(n, d);
    let c_scale = 4.0 / (n as f64 - 1.0);
    let mut centred = vec![0.0; k];
    for i in 0..n {
        for (c, (v, m)) in centred.iter_mut().zip(yh.row(i).iter().zip(&m_h)) {
            *c = v - m;
        }
        let row = grad.row_mut(i);
        for j in 0..d {
            if !mask.requested()[j] {
                continue;
            }
            let cov_term: f64 = (0..k).map(|l| dc.get(j, l) * centred[l]).sum();
            row[j] = 2.0 * dm[j] / n as f64 + c_scale * cov_term;
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct MomentMatchingLoss {
    pub loss: f64,
    pub grads: MlpGrads,
}

/// Moment-matching loss of the generator on a batch that shares one mask pair.
/// `x` is in the generator's model space.
pub fn moment_matching_loss(
    gen: &NcGenerator,
    x: &DenseMatrix,
    mask: &MaskPair,
    z: &DenseMatrix,
) -> Result<MomentMatchingLoss> {
    let masks = vec![mask.clone(); x.rows()];
    let cache = gen.forward_model(x, &masks, z)?;
    let (loss, grad_out) = moment_matching_objective(cache.output(), x, mask)?;
    let (grads, _) = gen.mlp.backward_batch(&cache, &grad_out)?;
    Ok(MomentMatchingLoss { loss, grads })
}

fn noise_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DenseMatrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    DenseMatrix::from_vec(rows, cols, data).expect("sized")
}

fn masked_rows(x: &DenseMatrix, masks: &[MaskPair]) -> DenseMatrix {
    let mut out = DenseMatrix::zeros(x.rows(), x.cols());
    for (i, m) in masks.iter().enumerate() {
        for ((o, &v), &keep) in out.row_mut(i).iter_mut().zip(x.row(i)).zip(m.requested()) {
            *o = if keep { v } else { 0.0 };
        }
    }
    out
}

/// Mutable training state; advance it with [`TrainState::step`].
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub generator: NcGenerator,
    pub discriminator: Option<NcDiscriminator>,
    gen_adam: AdamState,
    disc_adam: Option<AdamState>,
    data: DenseMatrix,
    batch_rng: NcRng,
    mask_rng: NcRng,
    noise_rng: NcRng,
    step: usize,
}

impl TrainState {
    /// Initialises both networks from `config.seed`. `dataset` is in data
    /// space, one example per row.
    pub fn new(config: TrainConfig, dataset: &DenseMatrix) -> Result<Self> {
        config.validate()?;
        if dataset.rows() == 0 {
            return Err(NcError::Config("training set is empty".into()));
        }
        let d = dataset.cols();
        if d < 1 {
            return Err(NcError::Config("dataset rows have no coordinates".into()));
        }
        if let MaskDistributionSpec {
            kind: crate::masking::MaskKind::FixedList { pairs },
            ..
        } = &config.mask_spec
        {
            if pairs.iter().any(|m| m.dim() != d) {
                return Err(NcError::Config(format!("mask list does not match data dimension {d}")));
            }
        }
        let normalizer = if config.standardize {
            Normalizer::fit(dataset)?
        } else {
            Normalizer::identity(d)
        };
        let data = normalizer.matrix_to_model(dataset);
        let mut init_rng = stream(config.seed, Stream::Init);
        let generator = NcGenerator::init(
            d,
            config.z_dim,
            &config.hidden,
            config.conditioning.generator_masks,
            normalizer,
            &mut init_rng,
        )?;
        let discriminator = match config.mode {
            TrainMode::Adversarial => Some(NcDiscriminator::init(
                d,
                &config.hidden,
                config.conditioning.discriminator_masks,
                &mut init_rng,
            )?),
            TrainMode::MomentMatching => None,
        };
        let gen_adam = AdamState::for_params(&generator.mlp, config.lr, config.beta1, config.beta2, config.adam_eps);
        let disc_adam = discriminator
            .as_ref()
            .map(|dn| AdamState::for_params(&dn.mlp, config.lr, config.beta1, config.beta2, config.adam_eps));
        Ok(Self {
            batch_rng: stream(config.seed, Stream::Batch),
            mask_rng: stream(config.seed, Stream::Masks),
            noise_rng: stream(config.seed, Stream::Noise),
            config,
            generator,
            discriminator,
            gen_adam,
            disc_adam,
            data,
            step: 0,
        })
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Training rows in model space.
    pub fn model_data(&self) -> &DenseMatrix {
        &self.data
    }

    fn draw_batch(&mut self) -> Result<(DenseMatrix, Vec<MaskPair>, DenseMatrix)> {
        let (b, d) = (self.config.batch, self.data.cols());
        let mut x = DenseMatrix::zeros(b, d);
        for i in 0..b {
            let k = self.batch_rng.random_range(0..self.data.rows());
            x.row_mut(i).copy_from_slice(self.data.row(k));
        }
        let masks = match self.config.mode {
            TrainMode::Adversarial => (0..b)
                .map(|_| sample_mask_pair(&self.config.mask_spec, d, &mut self.mask_rng))
                .collect::<Result<Vec<_>>>()?,
            TrainMode::MomentMatching => {
                vec![sample_mask_pair(&self.config.mask_spec, d, &mut self.mask_rng)?; b]
            }
        };
        let z = noise_matrix(b, self.config.z_dim, &mut self.noise_rng);
        Ok((x, masks, z))
    }

    fn fake_first_slot(&self, generated: &DenseMatrix, masks: &[MaskPair]) -> DenseMatrix {
        if self.config.mask_fake_output {
            masked_rows(generated, masks)
        } else {
            generated.clone()
        }
    }

    fn discriminator_update(&mut self) -> Result<DiscriminatorLoss> {
        let (x, masks, z) = self.draw_batch()?;
        let gen_in = self.generator.assemble_batch(&x, &masks, &z)?;
        let generated = self.generator.mlp.predict_batch(&gen_in)?;
        let disc = self.discriminator.as_ref().expect("adversarial mode");
        let real_in = disc.assemble_batch(&masked_rows(&x, &masks), &x, &masks)?;
        let fake_in = disc.assemble_batch(&self.fake_first_slot(&generated, &masks), &x, &masks)?;
        let out = discriminator_loss(disc, &real_in, &fake_in, self.config.gp_coeff)?;
        let disc = self.discriminator.as_mut().expect("adversarial mode");
        self.disc_adam
            .as_mut()
            .expect("adversarial mode")
            .step(&mut disc.mlp, &out.grads)?;
        Ok(out)
    }

    fn generator_update(&mut self) -> Result<f64> {
        let (x, masks, z) = self.draw_batch()?;
        let (loss, grads) = match self.config.mode {
            TrainMode::Adversarial => {
                let cache = self.generator.forward_model(&x, &masks, &z)?;
                let disc = self.discriminator.as_ref().expect("adversarial mode");
                let fake_in = disc.assemble_batch(&self.fake_first_slot(cache.output(), &masks), &x, &masks)?;
                let gl = generator_loss(disc, &fake_in, &masks, self.config.mask_fake_output)?;
                let (grads, _) = self.generator.mlp.backward_batch(&cache, &gl.grad_generated)?;
                (gl.loss, grads)
            }
            TrainMode::MomentMatching => {
                let mm = moment_matching_loss(&self.generator, &x, &masks[0], &z)?;
                (mm.loss, mm.grads)
            }
        };
        self.gen_adam.step(&mut self.generator.mlp, &grads)?;
        Ok(loss)
    }

    /// Projects encoder layers (when enabled) and reports every layer's
    /// spectral norm afterwards.
    fn regularize(&mut self) -> Result<Vec<f64>> {
        let enc = self.generator.encoder_depth;
        let iters = self.config.sn_iters;
        let sn = self.config.sn_enabled;
        let mlp = &mut self.generator.mlp;
        let mut sigmas = Vec::with_capacity(mlp.depth());
        for k in 0..mlp.depth() {
            let state = mlp.sn_state()[k].clone();
            let weight = &mlp.layers()[k].weight;
            if sn && k < enc {
                let proj = one_sided_sn_project(weight, &state, iters)?;
                sigmas.push(proj.sigma.min(1.0));
                mlp.layers_mut()[k].weight = proj.weight;
                mlp.sn_state_mut()[k] = proj.state;
            } else {
                let est = sigma_max(weight, &state, iters)?;
                sigmas.push(est.sigma);
                mlp.sn_state_mut()[k] = est.state;
            }
        }
        Ok(sigmas)
    }

    /// Applies the encoder projection once without training, so a freshly
    /// initialised generator already satisfies the spectral constraint.
    pub fn project_now(&mut self) -> Result<Vec<f64>> {
        self.regularize()
    }

    /// One full training step. Returns the trace row for this step.
    pub fn step(&mut self) -> Result<TraceRecord> {
        let step = self.step;
        self.step_inner().map_err(|e| NcError::AtStep {
            step,
            source: Box::new(e),
        })
    }

    fn step_inner(&mut self) -> Result<TraceRecord> {
        let mut last_d: Option<DiscriminatorLoss> = None;
        if self.config.mode == TrainMode::Adversarial {
            for _ in 0..self.config.d_steps_per_g {
                last_d = Some(self.discriminator_update()?);
            }
        }
        let g_loss = self.generator_update()?;
        let sigma_max = self.regularize()?;
        let record = TraceRecord {
            step: self.step,
            d_loss: last_d.as_ref().map(|d| d.loss),
            g_loss,
            gp_value: last_d.as_ref().map(|d| d.gp_value),
            sigma_max,
            logit_real_mean: last_d.as_ref().map(|d| mean_std(&d.logits_real).0),
            logit_real_std: last_d.as_ref().map(|d| mean_std(&d.logits_real).1),
            logit_fake_mean: last_d.as_ref().map(|d| mean_std(&d.logits_fake).0),
            logit_fake_std: last_d.as_ref().map(|d| mean_std(&d.logits_fake).1),
        };
        self.step += 1;
        Ok(record)
    }

    pub fn into_outcome(self, trace: Vec<TraceRecord>) -> TrainOutcome {
        TrainOutcome {
            generator: self.generator,
            discriminator: self.discriminator,
            trace,
            config: self.config,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub generator: NcGenerator,
    pub discriminator: Option<NcDiscriminator>,
    pub trace: Vec<TraceRecord>,
    pub config: TrainConfig,
}

/// Runs `config.steps` steps; trace rows are also written as JSON lines to
/// `trace_sink` when given.
pub fn train_with_sink(
    config: TrainConfig,
    dataset: &DenseMatrix,
    mut trace_sink: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    let mut state = TrainState::new(config, dataset)?;
    let mut trace = Vec::new();
    for _ in 0..state.config.steps {
        let rec = state.step()?;
        if rec.step % state.config.log_every == 0 {
            if let Some(sink) = trace_sink.as_deref_mut() {
                let line = serde_json::to_string(&rec).map_err(|e| NcError::Parse(e.to_string()))?;
                writeln!(sink, "{line}")?;
            }
            trace.push(rec);
        }
    }
    Ok(state.into_outcome(trace))
}

pub fn train(config: TrainConfig, dataset: &DenseMatrix) -> Result<TrainOutcome> {
    train_with_sink(config, dataset, None)
}

/// Trace summary: standard deviation of fake logits over the last tenth of
/// logged steps (a flat discriminator has zero spread).
pub fn late_fake_logit_spread(trace: &[TraceRecord]) -> Option<f64> {
    let tail = (trace.len() / 10).max(1);
    let vals: Vec<f64> = trace[trace.len().saturating_sub(tail)..]
        .iter()
        .filter_map(|r| r.logit_fake_std)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}
