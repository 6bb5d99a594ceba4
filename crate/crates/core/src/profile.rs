use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::crypto::DhGroup;

/// Key-size profile for a deployment or a test run.
///
/// `Full` uses the 2048-bit MODP group and 2048-bit RSA. `Test` uses the
/// 1024-bit MODP group and 1024-bit RSA, which keeps CI runs fast. Profiles
/// are always chosen explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamProfile {
    Full,
    #[default]
    Test,
}

impl ParamProfile {
    pub fn dh_group(self) -> DhGroup {
        match self {
            ParamProfile::Full => DhGroup::modp2048(),
            ParamProfile::Test => DhGroup::modp1024(),
        }
    }

    pub fn rsa_bits(self) -> usize {
        match self {
            ParamProfile::Full => 2048,
            ParamProfile::Test => 1024,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ParamProfile::Full => "full",
            ParamProfile::Test => "test",
        }
    }
}

impl fmt::Display for ParamProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(ParamProfile::Full),
            "test" => Ok(ParamProfile::Test),
            other => Err(format!("unknown parameter profile `{other}` (expected full|test)")),
        }
    }
}
