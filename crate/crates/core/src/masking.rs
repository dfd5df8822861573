//! Available/requested mask pairs: construction, sampling and enumeration.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{NcError, Result};

/// Redraw budget before a mask distribution is declared unusable.
pub const MAX_MASK_REJECTIONS: usize = 1000;
/// Largest dimension accepted by [`enumerate_mask_pairs`].
pub const MAX_ENUMERATION_DIM: usize = 20;

/// A pair of disjoint binary masks: `a` marks observed coordinates, `r` the
/// coordinates to generate.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MaskPair {
    a: Vec<bool>,
    r: Vec<bool>,
}

pub fn bits_to_string(bits: &[bool]) -> String {
    bits.iter().map(|&b| if b { '1' } else { '0' }).collect()
}

pub fn parse_bits(s: &str) -> Result<Vec<bool>> {
    s.chars()
        .map(|c| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(NcError::Mask(format!("invalid mask character {other:?} in {s:?}"))),
        })
        .collect()
}

impl MaskPair {
    /// Accepts only already-disjoint masks of equal length.
    pub fn new(a: Vec<bool>, r: Vec<bool>) -> Result<Self> {
        if a.len() != r.len() {
            return Err(NcError::Mask(format!(
                "mask lengths differ: a has {}, r has {}",
                a.len(),
                r.len()
            )));
        }
        if let Some(i) = a.iter().zip(&r).position(|(&x, &y)| x && y) {
            return Err(NcError::Mask(format!("coordinate {i} is both available and requested")));
        }
        Ok(Self { a, r })
    }

    pub fn from_bits(a: &str, r: &str) -> Result<Self> {
        Self::new(parse_bits(a)?, parse_bits(r)?)
    }

    /// Nothing available, everything requested.
    pub fn joint(d: usize) -> Self {
        Self {
            a: vec![false; d],
            r: vec![true; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn available(&self) -> &[bool] {
        &self.a
    }

    pub fn requested(&self) -> &[bool] {
        &self.r
    }

    pub fn a_f64(&self) -> Vec<f64> {
        self.a.iter().map(|&b| b as u8 as f64).collect()
    }

    pub fn r_f64(&self) -> Vec<f64> {
        self.r.iter().map(|&b| b as u8 as f64).collect()
    }

    /// Ascending indices with `a_i = 1`.
    pub fn available_idx(&self) -> Vec<usize> {
        (0..self.a.len()).filter(|&i| self.a[i]).collect()
    }

    /// Ascending indices with `r_i = 1`.
    pub fn requested_idx(&self) -> Vec<usize> {
        (0..self.r.len()).filter(|&i| self.r[i]).collect()
    }

    pub fn a_bits(&self) -> String {
        bits_to_string(&self.a)
    }

    pub fn r_bits(&self) -> String {
        bits_to_string(&self.r)
    }

    pub fn requests_nothing(&self) -> bool {
        !self.r.iter().any(|&b| b)
    }

    pub fn has_no_available(&self) -> bool {
        !self.a.iter().any(|&b| b)
    }

    pub fn is_joint(&self) -> bool {
        self.has_no_available() && self.r.iter().all(|&b| b)
    }

    /// Every coordinate is either available or requested.
    pub fn is_complementary(&self) -> bool {
        self.a.iter().zip(&self.r).all(|(&x, &y)| x || y)
    }

    /// Training masks must request at least one coordinate.
    pub fn validate_for_training(&self) -> Result<()> {
        if self.requests_nothing() {
            return Err(NcError::Mask(format!(
                "mask a={} requests no coordinates",
                self.a_bits()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for MaskPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "a={}, r={}", self.a_bits(), self.r_bits())
    }
}

#[derive(Serialize, Deserialize)]
struct MaskPairRepr {
    a: String,
    r: String,
}

impl Serialize for MaskPair {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        MaskPairRepr {
            a: self.a_bits(),
            r: self.r_bits(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MaskPair {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = MaskPairRepr::deserialize(d)?;
        MaskPair::from_bits(&repr.a, &repr.r).map_err(serde::de::Error::custom)
    }
}

/// Drops requested coordinates that are also available.
pub fn resolve_overlap(a: &[bool], r: &[bool]) -> Result<MaskPair> {
    if a.len() != r.len() {
        return Err(NcError::Mask(format!(
            "mask lengths differ: a has {}, r has {}",
            a.len(),
            r.len()
        )));
    }
    let resolved = a.iter().zip(r).map(|(&ai, &ri)| ri && !ai).collect();
    Ok(MaskPair {
        a: a.to_vec(),
        r: resolved,
    })
}

/// `x_i · m_i`
pub fn apply_mask(x: &[f64], m: &[bool]) -> Vec<f64> {
    x.iter().zip(m).map(|(&v, &b)| if b { v } else { 0.0 }).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum MaskKind {
    /// Independent `a_i ~ Bern(p_a)`, `r_i ~ Bern(p_r)`, then overlap
    /// resolution and rejection of empty requests.
    Bernoulli { p_a: f64, p_r: f64 },
    /// Uniform over all valid pairs of the dimension.
    EnumerateUniform,
    /// Uniform over an explicit list.
    FixedList { pairs: Vec<MaskPair> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskDistributionSpec {
    pub kind: MaskKind,
    /// When false, draws with no available coordinate are redrawn.
    #[serde(default = "default_true")]
    pub allow_empty_available: bool,
    /// Probability of emitting the joint mask `(a=0, r=1)` instead of a draw.
    #[serde(default)]
    pub include_joint_mask: f64,
    /// Redraw whenever the underlying distribution itself yields the joint
    /// mask, so it is only ever seen through `include_joint_mask`.
    #[serde(default)]
    pub exclude_joint_from_draws: bool,
}

fn default_true() -> bool {
    true
}

impl MaskDistributionSpec {
    pub fn bernoulli(p_a: f64, p_r: f64) -> Self {
        Self {
            kind: MaskKind::Bernoulli { p_a, p_r },
            allow_empty_available: true,
            include_joint_mask: 0.0,
            exclude_joint_from_draws: false,
        }
    }

    /// Symmetric Bernoulli(0.5) masks that never present the joint mask.
    pub fn gaussian_experiment() -> Self {
        Self {
            exclude_joint_from_draws: true,
            ..Self::bernoulli(0.5, 0.5)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs: Vec<(&str, f64)> = match &self.kind {
            MaskKind::Bernoulli { p_a, p_r } => vec![("p_a", *p_a), ("p_r", *p_r)],
            MaskKind::FixedList { pairs } if pairs.is_empty() => {
                return Err(NcError::Config("fixed mask list is empty".into()))
            }
            _ => vec![],
        };
        for (name, p) in probs
            .into_iter()
            .chain(std::iter::once(("include_joint_mask", self.include_joint_mask)))
        {
            if !(0.0..=1.0).contains(&p) {
                return Err(NcError::Config(format!("{name} = {p} is outside [0, 1]")));
            }
        }
        Ok(())
    }

    fn accepts(&self, m: &MaskPair) -> bool {
        !(m.requests_nothing()
            || (!self.allow_empty_available && m.has_no_available())
            || (self.exclude_joint_from_draws && m.is_joint()))
    }
}

/// Draws one valid training mask pair.
pub fn sample_mask_pair<R: Rng + ?Sized>(spec: &MaskDistributionSpec, d: usize, rng: &mut R) -> Result<MaskPair> {
    if d < 1 {
        return Err(NcError::Config("mask dimension must be at least 1".into()));
    }
    spec.validate()?;
    if spec.include_joint_mask > 0.0 && rng.random::<f64>() < spec.include_joint_mask {
        return Ok(MaskPair::joint(d));
    }
    let enumerated = match spec.kind {
        MaskKind::EnumerateUniform => Some(enumerate_mask_pairs(d)?),
        _ => None,
    };
    for _ in 0..MAX_MASK_REJECTIONS {
        let candidate = match &spec.kind {
            MaskKind::Bernoulli { p_a, p_r } => {
                let a: Vec<bool> = (0..d).map(|_| rng.random::<f64>() < *p_a).collect();
                let r: Vec<bool> = (0..d).map(|_| rng.random::<f64>() < *p_r).collect();
                resolve_overlap(&a, &r)?
            }
            MaskKind::EnumerateUniform => {
                let all = enumerated.as_ref().expect("enumerated above");
                all[rng.random_range(0..all.len())].clone()
            }
            MaskKind::FixedList { pairs } => {
                let m = &pairs[rng.random_range(0..pairs.len())];
                if m.dim() != d {
                    return Err(NcError::Config(format!(
                        "fixed mask {m} has dimension {}, expected {d}",
                        m.dim()
                    )));
                }
                m.clone()
            }
        };
        if spec.accepts(&candidate) {
            return Ok(candidate);
        }
    }
    Err(NcError::Config(format!(
        "no valid mask pair after {MAX_MASK_REJECTIONS} draws; the mask distribution almost never requests a coordinate"
    )))
}

/// Every disjoint pair with a non-empty request, sorted by `(a, r)` bitstrings.
/// There are `3^d − 2^d` of them.
pub fn enumerate_mask_pairs(d: usize) -> Result<Vec<MaskPair>> {
    if d > MAX_ENUMERATION_DIM {
        return Err(NcError::Size(format!(
            "cannot enumerate masks for d = {d} (limit {MAX_ENUMERATION_DIM})"
        )));
    }
    let bits = |code: u32| -> Vec<bool> { (0..d).map(|i| code >> (d - 1 - i) & 1 == 1).collect() };
    let full = 1u32 << d;
    let mut out = Vec::with_capacity(3usize.pow(d as u32) - (1usize << d));
    for a in 0..full {
        for r in 1..full {
            if a & r == 0 {
                out.push(MaskPair { a: bits(a), r: bits(r) });
            }
        }
    }
    Ok(out)
}
