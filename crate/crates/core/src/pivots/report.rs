//! Report types shared by every pivot.

use serde::{Deserialize, Serialize};

use crate::queries::Feature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Tg,
    PluginRandomized,
    BootNonrand,
    BootWild,
    BootWeighted,
    McConditional,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Tg => "tg",
            Method::PluginRandomized => "plugin-randomized",
            Method::BootNonrand => "boot-nonrand",
            Method::BootWild => "boot-wild",
            Method::BootWeighted => "boot-weighted",
            Method::McConditional => "mc-conditional",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        [
            Method::Tg,
            Method::PluginRandomized,
            Method::BootNonrand,
            Method::BootWild,
            Method::BootWeighted,
            Method::McConditional,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| crate::Error::invalid(format!("unknown pivot method '{s}'")))
    }
}

/// A pivot value with its Monte Carlo error, if it was sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotEstimate {
    pub value: f64,
    pub mc_se: Option<f64>,
    pub warning: Option<String>,
}

impl PivotEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value: value.clamp(0.0, 1.0),
            mc_se: None,
            warning: None,
        }
    }

    pub fn sampled(value: f64, mc_se: f64) -> Self {
        Self {
            value: value.clamp(0.0, 1.0),
            mc_se: Some(mc_se),
            warning: None,
        }
    }
}

/// Two-sided p-value 2·min(P, 1 − P).
pub fn two_sided(pivot: f64) -> f64 {
    (2.0 * pivot.min(1.0 - pivot)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PivotReport {
    pub target: String,
    pub method: Method,
    pub pivot: f64,
    pub pvalue: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_se: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl PivotReport {
    pub fn new(target: impl Into<String>, method: Method, estimate: PivotEstimate) -> Self {
        let pivot = estimate.value.clamp(0.0, 1.0);
        Self {
            target: target.into(),
            method,
            pivot,
            pvalue: two_sided(pivot),
            mc_se: estimate.mc_se,
            warning: estimate.warning,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalReport {
    pub target: String,
    pub level: f64,
    #[serde(with = "extended_real")]
    pub lower: f64,
    #[serde(with = "extended_real")]
    pub upper: f64,
    pub grid_points: usize,
    pub grid_step: f64,
}

/// One inferred target as stored in the session file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceRecord {
    pub stage: u32,
    pub target: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature: Option<Feature>,
    pub method: Method,
    pub estimate: f64,
    pub null_value: f64,
    pub pivot: f64,
    pub pvalue: f64,
    pub level: f64,
    #[serde(with = "extended_real")]
    pub lower: f64,
    #[serde(with = "extended_real")]
    pub upper: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_se: Option<f64>,
    pub seed: u64,
}

/// JSON has no infinities: finite values are numbers, ±∞ the strings
/// "inf" and "-inf".
pub mod extended_real {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else if *v < 0.0 {
            s.serialize_str("-inf")
        } else {
            s.serialize_str("nan")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(de::Error::custom(format!(
                    "expected a number or ±inf, got '{other}'"
                ))),
            },
        }
    }
}
