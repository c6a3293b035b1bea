//! Counter-based noise: every deviate is a pure function of
//! `(trial seed, key)`, so two controllers replaying the same trial see the
//! same delivery and observation shocks no matter what budgets they issue or
//! in what order the draws happen.

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

/// What a deviate is used for. Part of the key, so streams never alias.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Purpose {
    Delivery,
    Observation,
    ThetaAmplitude,
    ThetaRate,
    AlphaDrift,
    BudgetScale,
    PfInit,
    PfPropagate,
    PfResample,
    PfJitter,
    Bootstrap,
    TrialSeed,
}

impl Purpose {
    fn tag(self) -> u64 {
        self as u64 + 1
    }
}

/// Address of a single deviate.
///
/// `week` is signed: historical weeks are numbered `≤ 0` and evaluation
/// weeks `1..=W`, so evaluation shocks can never leak into history.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NoiseKey {
    pub week: i64,
    pub day: u32,
    pub purpose: Purpose,
    pub index: u32,
}

impl NoiseKey {
    pub fn new(week: i64, day: u32, purpose: Purpose) -> Self {
        Self {
            week,
            day,
            purpose,
            index: 0,
        }
    }

    pub fn indexed(week: i64, day: u32, purpose: Purpose, index: u32) -> Self {
        Self {
            week,
            day,
            purpose,
            index,
        }
    }
}

/// Deterministic keyed source of standard normal and uniform deviates.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    seed: u64,
    log: Option<Arc<Mutex<Vec<NoiseKey>>>>,
}

#[inline]
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Maps 53 high bits to `(0, 1]`.
#[inline]
fn unit_open_closed(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 1.0) / (1u64 << 53) as f64
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self { seed, log: None }
    }

    /// Same stream, but every key drawn is appended to a shared log.
    pub fn with_log(seed: u64) -> Self {
        Self {
            seed,
            log: Some(Arc::new(Mutex::new(Vec::new()))),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A stream over an independent seed derived from this one and `salt`.
    pub fn derive(&self, salt: u64) -> NoiseStream {
        NoiseStream::new(splitmix(self.seed ^ splitmix(salt.wrapping_add(0xA5A5_A5A5))))
    }

    /// Keys drawn so far (only when created with [`NoiseStream::with_log`]).
    pub fn drained_log(&self) -> Vec<NoiseKey> {
        self.log
            .as_ref()
            .map(|l| std::mem::take(&mut *l.lock().expect("noise log poisoned")))
            .unwrap_or_default()
    }

    fn hash(&self, key: NoiseKey) -> u64 {
        if let Some(log) = &self.log {
            log.lock().expect("noise log poisoned").push(key);
        }
        let mut h = splitmix(self.seed);
        h = splitmix(h ^ key.purpose.tag().wrapping_mul(0xD6E8_FEB8_6659_FD93));
        h = splitmix(h ^ (key.week as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        h = splitmix(h ^ u64::from(key.day).wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
        splitmix(h ^ u64::from(key.index).wrapping_mul(0x1656_67B1_9E37_79F9))
    }

    /// Uniform deviate on `(0, 1]`.
    pub fn uniform(&self, key: NoiseKey) -> f64 {
        unit_open_closed(self.hash(key))
    }

    /// Standard normal deviate (Box–Muller on two keyed uniforms).
    pub fn normal(&self, key: NoiseKey) -> f64 {
        let h = self.hash(key);
        let u1 = unit_open_closed(splitmix(h));
        let u2 = unit_open_closed(splitmix(h ^ 0x5851_F42D_4C95_7F2D));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Raw 64-bit value, used to derive per-trial seeds.
    pub fn bits(&self, key: NoiseKey) -> u64 {
        self.hash(key)
    }
}
