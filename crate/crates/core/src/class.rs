use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Contact class predicted by the classifier and carried by dataset labels.
///
/// The discriminant is the class index used by logits, confusion matrices,
/// and label tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactClass {
    Leaf = 0,
    Twig = 1,
    Trunk = 2,
    Ambient = 3,
}

pub const N_CLASSES: usize = 4;

impl ContactClass {
    pub const ALL: [ContactClass; N_CLASSES] = [
        ContactClass::Leaf,
        ContactClass::Twig,
        ContactClass::Trunk,
        ContactClass::Ambient,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContactClass::Leaf => "leaf",
            ContactClass::Twig => "twig",
            ContactClass::Trunk => "trunk",
            ContactClass::Ambient => "ambient",
        }
    }

    /// True for leaf, twig and trunk.
    pub fn is_contact(self) -> bool {
        self != ContactClass::Ambient
    }
}

impl fmt::Display for ContactClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ContactClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "leaf" => Ok(ContactClass::Leaf),
            "twig" => Ok(ContactClass::Twig),
            "trunk" => Ok(ContactClass::Trunk),
            "ambient" => Ok(ContactClass::Ambient),
            other => Err(Error::param("class", format!("unknown class `{other}`"))),
        }
    }
}
