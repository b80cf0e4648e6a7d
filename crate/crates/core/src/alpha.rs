//! The divergence order α, an extended real selecting one member of the
//! Rényi family (and of the matching VR bound).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Values within this distance of 1 are treated as α = 1 (the KL branch).
pub const ALPHA_ONE_TOLERANCE: f64 = 1e-9;

/// An order α ∈ {-∞} ∪ ℝ ∪ {+∞}; never NaN.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct AlphaSetting(f64);

/// Total classification of an [`AlphaSetting`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaKind {
    NegInf,
    /// Finite and not (numerically) one.
    Finite(f64),
    One,
    PosInf,
}

impl AlphaSetting {
    pub const NEG_INF: AlphaSetting = AlphaSetting(f64::NEG_INFINITY);
    pub const POS_INF: AlphaSetting = AlphaSetting(f64::INFINITY);
    pub const ONE: AlphaSetting = AlphaSetting(1.0);
    pub const ZERO: AlphaSetting = AlphaSetting(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() {
            return Err(Error::InvalidAlpha("alpha must not be NaN".into()));
        }
        Ok(Self(value))
    }

    /// Panics on NaN. Intended for literals.
    pub fn of(value: f64) -> Self {
        Self::new(value).expect("alpha must not be NaN")
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn kind(self) -> AlphaKind {
        let a = self.0;
        if a == f64::NEG_INFINITY {
            AlphaKind::NegInf
        } else if a == f64::INFINITY {
            AlphaKind::PosInf
        } else if (a - 1.0).abs() <= ALPHA_ONE_TOLERANCE {
            AlphaKind::One
        } else {
            AlphaKind::Finite(a)
        }
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }
}

impl From<AlphaSetting> for f64 {
    fn from(a: AlphaSetting) -> f64 {
        a.0
    }
}

impl fmt::Display for AlphaSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            x if x == f64::INFINITY => f.write_str("inf"),
            x if x == f64::NEG_INFINITY => f.write_str("-inf"),
            x => write!(f, "{x}"),
        }
    }
}

impl FromStr for AlphaSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        let v = match t.as_str() {
            "inf" | "+inf" | "infinity" | "+infinity" => f64::INFINITY,
            "-inf" | "-infinity" => f64::NEG_INFINITY,
            _ => t
                .parse::<f64>()
                .map_err(|e| Error::InvalidAlpha(format!("cannot parse {s:?}: {e}")))?,
        };
        Self::new(v)
    }
}

// JSON has no infinities, so ±∞ travel as the strings "inf" / "-inf".
impl Serialize for AlphaSetting {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            serializer.serialize_f64(self.0)
        } else {
            serializer.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for AlphaSetting {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) => AlphaSetting::new(v).map_err(serde::de::Error::custom),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}
