use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Subjective first-impression attributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttributeKind {
    Trustworthiness,
    Dominance,
    Attractiveness,
}

impl AttributeKind {
    pub const ALL: [AttributeKind; 3] =
        [Self::Trustworthiness, Self::Dominance, Self::Attractiveness];

    pub fn tag(self) -> &'static str {
        match self {
            Self::Trustworthiness => "trustworthiness",
            Self::Dominance => "dominance",
            Self::Attractiveness => "attractiveness",
        }
    }

    /// Column suffix in dataset files (`score_trust`, ...).
    pub fn short(self) -> &'static str {
        match self {
            Self::Trustworthiness => "trust",
            Self::Dominance => "dom",
            Self::Attractiveness => "attr",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AttributeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for AttributeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let lower = s.to_ascii_lowercase();
        Self::ALL
            .into_iter()
            .find(|a| a.tag() == lower || a.short() == lower)
            .ok_or_else(|| Error::UnknownAttribute(s.to_string()))
    }
}
