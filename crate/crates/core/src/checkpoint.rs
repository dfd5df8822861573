//! JSON persistence for trained models, run configuration files and datasets.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{NcError, Result};
use crate::evaluation::{EvalOptions, GridSpec};
use crate::gaussian::GaussianParams;
use crate::model::{NcDiscriminator, NcGenerator};
use crate::numeric::{DenseMatrix, Layer, MlpParams};
use crate::training::{TrainConfig, TrainState};

pub const CHECKPOINT_VERSION: u32 = 1;

fn parse_err(e: serde_json::Error) -> NcError {
    NcError::Parse(e.to_string())
}

/// Saved generator, optional discriminator and the configuration that
/// produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub generator: NcGenerator,
    pub discriminator: Option<NcDiscriminator>,
    /// Completed training steps; the random streams resume from this count.
    pub rng_counter: u64,
    /// Distribution the training data came from, when known.
    #[serde(default)]
    pub gaussian: Option<GaussianSpec>,
}

fn revalidate_mlp(mlp: &MlpParams, what: &str) -> Result<MlpParams> {
    let mut layers = Vec::with_capacity(mlp.depth());
    for (k, l) in mlp.layers().iter().enumerate() {
        let w = &l.weight;
        let weight = DenseMatrix::from_vec(w.rows(), w.cols(), w.data().to_vec())
            .map_err(|e| NcError::Parse(format!("{what} layer {k}: {e}")))?;
        if !weight.is_finite() || l.bias.iter().any(|b| !b.is_finite()) {
            return Err(NcError::Parse(format!("{what} layer {k} has non-finite parameters")));
        }
        layers.push(Layer {
            weight,
            bias: l.bias.clone(),
        });
    }
    MlpParams::with_sn_state(layers, mlp.sn_state().to_vec()).map_err(|e| NcError::Parse(format!("{what}: {e}")))
}

impl Checkpoint {
    pub fn from_outcome(outcome: &crate::training::TrainOutcome) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            config: outcome.config.clone(),
            generator: outcome.generator.clone(),
            discriminator: outcome.discriminator.clone(),
            rng_counter: outcome.config.steps as u64,
            gaussian: None,
        }
    }

    pub fn from_state(state: &TrainState) -> Self {
        Self {
            format_version: CHECKPOINT_VERSION,
            config: state.config.clone(),
            generator: state.generator.clone(),
            discriminator: state.discriminator.clone(),
            rng_counter: state.steps_done() as u64,
            gaussian: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(parse_err)
    }

    /// Parses and validates a checkpoint. The version is checked before the
    /// body so that newer layouts fail with an explicit version error.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(parse_err)?;
        let found = value
            .get("format_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| NcError::Parse("missing format_version".into()))?;
        if found != CHECKPOINT_VERSION as u64 {
            return Err(NcError::UnsupportedVersion {
                found: found.min(u32::MAX as u64) as u32,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: Checkpoint = serde_json::from_value(value).map_err(parse_err)?;
        let g = &ck.generator;
        let generator = NcGenerator::from_parts(
            revalidate_mlp(&g.mlp, "generator")?,
            g.d,
            g.z_dim,
            g.condition_on_masks,
            g.encoder_depth,
            g.normalizer.clone(),
        )?;
        let discriminator = match &ck.discriminator {
            Some(dn) => Some(NcDiscriminator::from_parts(
                revalidate_mlp(&dn.mlp, "discriminator")?,
                dn.d,
                dn.condition_on_masks,
            )?),
            None => None,
        };
        if let Some(dn) = &discriminator {
            if dn.d != generator.d {
                return Err(NcError::Parse("generator and discriminator dimensions differ".into()));
            }
        }
        Ok(Self {
            generator,
            discriminator,
            ..ck
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Gaussian section of a run file: a mean plus exactly one of a row-major
/// covariance or the `ρ` of the benchmark family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    pub mean: Vec<f64>,
    #[serde(default)]
    pub cov: Option<Vec<f64>>,
    #[serde(default)]
    pub rho: Option<f64>,
}

impl GaussianSpec {
    /// A covariance that is not SPD is reported as a configuration error,
    /// since it comes from user input.
    pub fn to_params(&self) -> Result<GaussianParams> {
        let params = match (&self.cov, self.rho) {
            (Some(cov), None) => {
                let d = self.mean.len();
                if cov.len() != d * d {
                    return Err(NcError::Config(format!(
                        "covariance has {} entries, expected {} for d = {d}",
                        cov.len(),
                        d * d
                    )));
                }
                GaussianParams::new(self.mean.clone(), DenseMatrix::from_vec(d, d, cov.clone())?)
            }
            (None, Some(rho)) => GaussianParams::rho_family(self.mean.clone(), rho),
            _ => Err(NcError::Config("give exactly one of cov or rho".into())),
        };
        params.map_err(|e| match e {
            NcError::NotSpd { .. } | NcError::NonFinite { .. } => NcError::Config(format!("invalid gaussian: {e}")),
            other => other,
        })
    }
}

impl Default for GaussianSpec {
    fn default() -> Self {
        Self {
            mean: vec![2.0, 4.0, 6.0],
            cov: None,
            rho: Some(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub protocol: String,
    pub grid: GridSpec,
    pub n: usize,
    pub stat_n: usize,
    pub seeds: Vec<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        let o = EvalOptions::default();
        Self {
            protocol: "table1".into(),
            grid: o.grid,
            n: o.n,
            stat_n: o.stat_n,
            seeds: vec![1, 2, 3],
        }
    }
}

impl EvalSection {
    pub fn options(&self) -> EvalOptions {
        EvalOptions {
            grid: self.grid,
            n: self.n,
            stat_n: self.stat_n,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoSection {
    pub data_path: Option<PathBuf>,
    pub ckpt_path: Option<PathBuf>,
    pub report_path: Option<PathBuf>,
    pub trace_path: Option<PathBuf>,
}

impl IoSection {
    fn validate(&self) -> Result<()> {
        for p in [&self.data_path, &self.ckpt_path, &self.report_path, &self.trace_path]
            .into_iter()
            .flatten()
        {
            if p.as_os_str().is_empty() || p.file_name().is_none() {
                return Err(NcError::Config(format!("path {p:?} does not name a file")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfigFile {
    pub gaussian: GaussianSpec,
    pub train: TrainConfig,
    pub eval: EvalSection,
    pub io: IoSection,
}

impl RunConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfigFile = serde_json::from_str(text).map_err(|e| NcError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.gaussian.to_params()?;
        self.train.validate()?;
        self.eval.grid.validate()?;
        self.io.validate()
    }
}

/// On-disk dataset: `n` rows of width `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFile {
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub rows: Vec<Vec<f64>>,
}

impl DatasetFile {
    pub fn from_matrix(x: &DenseMatrix, seed: u64) -> Self {
        Self {
            d: x.cols(),
            n: x.rows(),
            seed,
            rows: x.iter_rows().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn to_matrix(&self) -> Result<DenseMatrix> {
        if self.rows.len() != self.n || self.rows.iter().any(|r| r.len() != self.d) {
            return Err(NcError::Parse(format!("dataset does not hold {} rows of width {}", self.n, self.d)));
        }
        if self.n == 0 {
            return Ok(DenseMatrix::zeros(0, self.d));
        }
        DenseMatrix::from_rows(&self.rows)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(parse_err)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(parse_err)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::sample_joint;
    use crate::training::train;

    fn small_outcome() -> crate::training::TrainOutcome {
        let data = sample_joint(&GaussianParams::benchmark(), 64, 1).unwrap();
        let cfg = TrainConfig {
            steps: 2,
            batch: 8,
            hidden: vec![6, 5],
            ..TrainConfig::default()
        };
        train(cfg, &data).unwrap()
    }

    #[test]
    fn roundtrip_is_exact() {
        let out = small_outcome();
        let ck = Checkpoint::from_outcome(&out);
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn version_and_truncation_errors() {
        let ck = Checkpoint::from_outcome(&small_outcome());
        let text = ck.to_json().unwrap();
        let bumped = text.replacen("\"format_version\": 1", "\"format_version\": 7", 1);
        assert!(matches!(
            Checkpoint::from_json(&bumped),
            Err(NcError::UnsupportedVersion { found: 7, expected: 1 })
        ));
        assert!(matches!(Checkpoint::from_json(&text[..text.len() / 2]), Err(NcError::Parse(_))));
    }

    #[test]
    fn corrupt_layer_rejected() {
        let ck = Checkpoint::from_outcome(&small_outcome());
        let mut v: serde_json::Value = serde_json::from_str(&ck.to_json().unwrap()).unwrap();
        v["generator"]["mlp"]["layers"][0]["weight"]["rows"] = serde_json::json!(99);
        assert!(Checkpoint::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn gaussian_spec_forms() {
        let rho = GaussianSpec::default().to_params().unwrap();
        let cov = GaussianSpec {
            mean: vec![2.0, 4.0, 6.0],
            cov: Some(vec![1.0, 0.5, 0.25, 0.5, 1.0, 0.0, 0.25, 0.0, 1.0]),
            rho: None,
        }
        .to_params()
        .unwrap();
        assert_eq!(rho, cov);
        let both = GaussianSpec {
            rho: Some(0.5),
            ..GaussianSpec {
                mean: vec![0.0],
                cov: Some(vec![1.0]),
                rho: None,
            }
        };
        assert!(matches!(both.to_params(), Err(NcError::Config(_))));
    }

    #[test]
    fn run_file_defaults() {
        let cfg = RunConfigFile::from_json(r#"{"train": {"steps": 10}}"#).unwrap();
        assert_eq!(cfg.train.steps, 10);
        assert_eq!(cfg.eval.seeds, vec![1, 2, 3]);
        assert!(RunConfigFile::from_json(r#"{"io": {"data_path": ""}}"#).is_err());
    }

    #[test]
    fn dataset_roundtrip() {
        let x = sample_joint(&GaussianParams::benchmark(), 5, 2).unwrap();
        let f = DatasetFile::from_matrix(&x, 2);
        let back = DatasetFile::from_json(&f.to_json().unwrap()).unwrap();
        assert_eq!(back.to_matrix().unwrap(), x);
        let bad = DatasetFile { n: 6, ..f };
        assert!(bad.to_matrix().is_err());
    }
}
