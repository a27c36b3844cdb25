use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// One of the three regressed affect dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Activation,
    Valence,
    Dominance,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Activation, Task::Valence, Task::Dominance];

    /// Long name used in CSV headers.
    pub fn name(self) -> &'static str {
        match self {
            Task::Activation => "activation",
            Task::Valence => "valence",
            Task::Dominance => "dominance",
        }
    }

    /// Short name used in parameter names and table headers.
    pub fn short(self) -> &'static str {
        match self {
            Task::Activation => "act",
            Task::Valence => "val",
            Task::Dominance => "dom",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == s || t.short() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown task `{s}`")))
    }
}
