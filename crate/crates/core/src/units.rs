use serde::{Deserialize, Serialize};

/// Length unit carried by reconstructed geometry.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    /// Up-to-scale reconstruction units.
    #[default]
    Arbitrary,
    Cm,
}

impl Units {
    pub fn as_str(&self) -> &'static str {
        match self {
            Units::Arbitrary => "arbitrary",
            Units::Cm => "cm",
        }
    }
}
