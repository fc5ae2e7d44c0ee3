//! Mixing proportion sampling.
//!
//! `alpha = round(10 (x + 1)) / 20` with `x ~ Beta(5, 2)`, i.e. a value on
//! the 0.05 grid, restricted to the half-open interval (0.5, 1.0]. A draw
//! landing on exactly 0.50 is discarded and redrawn.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub const BETA_A: f64 = 5.0;
pub const BETA_B: f64 = 2.0;

/// Majority-class proportion, stored exactly as a count of twentieths
/// (11..=20, i.e. 0.55..=1.00).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Alpha(u8);

impl Alpha {
    pub const MIN_TWENTIETHS: u8 = 11;
    pub const MAX_TWENTIETHS: u8 = 20;

    pub fn from_twentieths(n: u8) -> Option<Self> {
        (Self::MIN_TWENTIETHS..=Self::MAX_TWENTIETHS)
            .contains(&n)
            .then_some(Self(n))
    }

    /// Accepts values on the 0.05 grid within (0.5, 1.0].
    pub fn from_f64(value: f64) -> Option<Self> {
        let n = (value * 20.0).round();
        if (value * 20.0 - n).abs() > 1e-6 || !(0.0..=255.0).contains(&n) {
            return None;
        }
        Self::from_twentieths(n as u8)
    }

    pub fn twentieths(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 20.0
    }

    /// `floor(100 * alpha)`, exact on the grid.
    pub fn majority_percent(self) -> u32 {
        u32::from(self.0) * 5
    }

    pub fn minority_percent(self) -> u32 {
        100 - self.majority_percent()
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.value())
    }
}

impl Serialize for Alpha {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for Alpha {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Self::from_f64(v).ok_or_else(|| serde::de::Error::custom(format!("invalid alpha {v}")))
    }
}

/// Grid index `round(10 (x + 1))` for a Beta draw `x`, rounding half away
/// from zero. 10 means alpha = 0.50.
pub fn twentieths_from_draw(x: f64) -> u8 {
    (10.0 * (x + 1.0)).round() as u8
}

/// Draws one alpha, redrawing whenever the grid value is 0.50.
pub fn sample_alpha<R: Rng + ?Sized>(rng: &mut R) -> Alpha {
    let beta = Beta::new(BETA_A, BETA_B).expect("valid beta parameters");
    loop {
        if let Some(alpha) = Alpha::from_twentieths(twentieths_from_draw(beta.sample(rng))) {
            return alpha;
        }
    }
}

/// Seeded alpha generator.
#[derive(Debug, Clone)]
pub struct AlphaSampler {
    rng: ChaCha8Rng,
}

impl AlphaSampler {
    pub fn seeded(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn sample_alpha(&mut self) -> Alpha {
        sample_alpha(&mut self.rng)
    }
}

impl Iterator for AlphaSampler {
    type Item = Alpha;

    fn next(&mut self) -> Option<Alpha> {
        Some(self.sample_alpha())
    }
}
