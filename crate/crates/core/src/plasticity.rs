//! Bi-level intrinsic plasticity.
//!
//! The outer level picks, once per task family, which property groups
//! (dendritic decay, somatic decay, threshold) come from the trainable bank
//! and which stay at their frozen defaults. The inner level is the masked
//! optimizer update applied after every training iteration.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradients::{AdamState, GradientSet, ParamGroup};
use crate::seed::{self, Stream};
use crate::snn::{IntrinsicProperties, NetworkConfig};
use crate::tasks::TaskFamily;

/// Learnability of the three property groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct LearningMask {
    pub tau_d: bool,
    pub tau_s: bool,
    pub theta: bool,
}

impl LearningMask {
    pub const ALL: LearningMask = LearningMask::new(true, true, true);
    pub const NONE: LearningMask = LearningMask::new(false, false, false);

    pub const fn new(tau_d: bool, tau_s: bool, theta: bool) -> Self {
        Self { tau_d, tau_s, theta }
    }

    /// Accepts a 3-element binary vector (`[m1, m2, m3]`).
    pub fn from_bits(bits: &[u8]) -> Result<Self> {
        match bits {
            [a, b, c] if bits.iter().all(|&x| x <= 1) => Ok(Self::new(*a == 1, *b == 1, *c == 1)),
            _ => Err(Error::InvalidArgument(format!(
                "learning mask must be three binary entries, got {bits:?}"
            ))),
        }
    }

    pub fn bits(self) -> [u8; 3] {
        [self.tau_d as u8, self.tau_s as u8, self.theta as u8]
    }

    /// All eight masks, in binary counting order `000, 001, ..., 111`.
    pub fn all_masks() -> Vec<LearningMask> {
        (0u8..8)
            .map(|k| Self::new(k & 4 != 0, k & 2 != 0, k & 1 != 0))
            .collect()
    }

    pub fn allows(self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::TauD => self.tau_d,
            ParamGroup::TauS => self.tau_s,
            ParamGroup::Theta => self.theta,
            ParamGroup::WIn | ParamGroup::WRec | ParamGroup::WOut => true,
        }
    }
}

impl TryFrom<Vec<u8>> for LearningMask {
    type Error = Error;
    fn try_from(v: Vec<u8>) -> Result<Self> {
        Self::from_bits(&v)
    }
}

impl From<LearningMask> for Vec<u8> {
    fn from(m: LearningMask) -> Self {
        m.bits().to_vec()
    }
}

impl fmt::Display for LearningMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [a, b, c] = self.bits();
        write!(f, "{a}{b}{c}")
    }
}

impl FromStr for LearningMask {
    type Err = Error;

    /// Parses `"110"`, `"1,1,0"` or `"[1,1,0]"`.
    fn from_str(s: &str) -> Result<Self> {
        let digits: Vec<u8> = s
            .chars()
            .filter(|c| !matches!(c, '[' | ']' | ',' | ' '))
            .map(|c| match c {
                '0' => Ok(0),
                '1' => Ok(1),
                other => Err(Error::InvalidArgument(format!("bad mask character `{other}` in `{s}`"))),
            })
            .collect::<Result<_>>()?;
        Self::from_bits(&digits)
    }
}

pub fn mask_for_family(family: TaskFamily) -> LearningMask {
    match family {
        TaskFamily::Dms => LearningMask::new(true, false, false),
        TaskFamily::CdDms => LearningMask::new(true, false, true),
        TaskFamily::GngDr2 => LearningMask::new(true, true, false),
        TaskFamily::GngDr4 => LearningMask::new(true, true, true),
    }
}

/// Frozen defaults: `tau_d = 0`, `tau_s ~ U(0.9, 0.999)` (seeded), `theta = 1`.
pub fn default_fixed_bank(cfg: &NetworkConfig) -> IntrinsicProperties {
    let n = cfg.n_neurons;
    let mut rng = seed::rng(cfg.rng_seed, Stream::FixedBank, &[]);
    let slow = Uniform::new(0.9, 0.999).expect("valid range");
    IntrinsicProperties {
        n_dendrites: cfg.n_dendrites,
        tau_d: vec![0.0; n * cfg.n_dendrites],
        tau_s: (0..n).map(|_| slow.sample(&mut rng)).collect(),
        theta: vec![1.0; n],
    }
}

/// Trainable bank initial values: decays `U(0.9, 0.999)`, thresholds `1 + U(-0.05, 0.05)`.
pub fn default_learnable_bank(cfg: &NetworkConfig) -> IntrinsicProperties {
    let n = cfg.n_neurons;
    let mut rng = seed::rng(cfg.rng_seed, Stream::LearnableBank, &[]);
    let slow = Uniform::new(0.9, 0.999).expect("valid range");
    let jitter = Uniform::new_inclusive(-0.05, 0.05).expect("valid range");
    IntrinsicProperties {
        n_dendrites: cfg.n_dendrites,
        tau_d: (0..n * cfg.n_dendrites).map(|_| slow.sample(&mut rng)).collect(),
        tau_s: (0..n).map(|_| slow.sample(&mut rng)).collect(),
        theta: (0..n).map(|_| 1.0 + jitter.sample(&mut rng)).collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateProperties {
    pub learnable_bank: IntrinsicProperties,
    fixed_bank: IntrinsicProperties,
}

impl CandidateProperties {
    pub fn new(learnable_bank: IntrinsicProperties, fixed_bank: IntrinsicProperties) -> Result<Self> {
        if learnable_bank.n_dendrites != fixed_bank.n_dendrites
            || learnable_bank.tau_d.len() != fixed_bank.tau_d.len()
            || learnable_bank.tau_s.len() != fixed_bank.tau_s.len()
            || learnable_bank.theta.len() != fixed_bank.theta.len()
        {
            return Err(Error::InvalidArgument("candidate banks have different layouts".into()));
        }
        for bank in [&learnable_bank, &fixed_bank] {
            if bank.tau_d.iter().chain(&bank.tau_s).any(|t| !(0.0..=1.0).contains(t)) {
                return Err(Error::InvalidArgument("decay factors must lie in [0, 1]".into()));
            }
            if bank.theta.iter().any(|t| !t.is_finite()) {
                return Err(Error::InvalidArgument("thresholds must be finite".into()));
            }
        }
        Ok(Self {
            learnable_bank,
            fixed_bank,
        })
    }

    pub fn defaults(cfg: &NetworkConfig) -> Self {
        Self::new(default_learnable_bank(cfg), default_fixed_bank(cfg)).expect("default banks are consistent")
    }

    pub fn fixed_bank(&self) -> &IntrinsicProperties {
        &self.fixed_bank
    }
}

/// The per-group selection of candidate banks in force for a whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfiguredProperties {
    pub props: IntrinsicProperties,
    pub mask: LearningMask,
    pub provenance: String,
}

pub fn configure(candidates: &CandidateProperties, mask: LearningMask, provenance: &str) -> ConfiguredProperties {
    let pick = |learnable: bool, l: &Vec<f64>, f: &Vec<f64>| if learnable { l.clone() } else { f.clone() };
    let (l, f) = (&candidates.learnable_bank, &candidates.fixed_bank);
    ConfiguredProperties {
        props: IntrinsicProperties {
            n_dendrites: l.n_dendrites,
            tau_d: pick(mask.tau_d, &l.tau_d, &f.tau_d),
            tau_s: pick(mask.tau_s, &l.tau_s, &f.tau_s),
            theta: pick(mask.theta, &l.theta, &f.theta),
        },
        mask,
        provenance: provenance.to_string(),
    }
}

/// Applies the optimizer to the learnable property groups only and projects
/// decay factors back onto `[0, 1]`. Fixed groups are left bit-identical.
///
/// The optimizer's step counter is not advanced here; callers that update
/// weights and properties together go through [`AdamState::step`].
pub fn apply_update(configured: &mut ConfiguredProperties, grads: &GradientSet, opt: &mut AdamState) -> Result<()> {
    let props = &mut configured.props;
    if grads.d_tau_d.len() != props.tau_d.len()
        || grads.d_tau_s.len() != props.tau_s.len()
        || grads.d_theta.len() != props.theta.len()
    {
        return Err(Error::shape(
            "gradient/property layout",
            format!("{}/{}/{}", props.tau_d.len(), props.tau_s.len(), props.theta.len()),
            format!("{}/{}/{}", grads.d_tau_d.len(), grads.d_tau_s.len(), grads.d_theta.len()),
        ));
    }
    let mask = configured.mask;
    if mask.tau_d {
        opt.update_group(ParamGroup::TauD, &mut props.tau_d, &grads.d_tau_d)?;
        clamp_unit(&mut props.tau_d);
    }
    if mask.tau_s {
        opt.update_group(ParamGroup::TauS, &mut props.tau_s, &grads.d_tau_s)?;
        clamp_unit(&mut props.tau_s);
    }
    if mask.theta {
        opt.update_group(ParamGroup::Theta, &mut props.theta, &grads.d_theta)?;
    }
    Ok(())
}

fn clamp_unit(xs: &mut [f64]) {
    for x in xs {
        *x = x.clamp(0.0, 1.0);
    }
}
