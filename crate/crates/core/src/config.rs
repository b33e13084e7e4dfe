//! TOML configuration covering training and evaluation.
//!
//! Every field has a default, so a file only needs the values it changes:
//!
//! ```toml
//! [train]
//! envs = 16
//! schedule = { mode = "fixed", level = 0.1, mass = 0.5 }
//!
//! [eval]
//! episodes = 200
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::eval::EvalConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::TaskSchedule;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn partial_file_overrides_only_named_fields() {
        let c = Config::from_toml(
            "[train]\nenvs = 16\nschedule = { mode = \"fixed\", level = 0.1, mass = 0.5 }\n[train.ppo]\nclip = 0.1\n",
        )
        .unwrap();
        assert_eq!(c.train.envs, 16);
        assert_eq!(c.train.ppo.clip, 0.1);
        assert_eq!(c.train.ppo.gamma, 0.996);
        assert_eq!(c.train.schedule, TaskSchedule::Fixed { level: 0.1, mass: Some(0.5) });
        assert_eq!(c.eval, EvalConfig::default());
    }

    #[test]
    fn round_trips_through_text() {
        let c = Config::default();
        assert_eq!(Config::from_toml(&c.to_toml().unwrap()).unwrap(), c);
    }

    #[test]
    fn unknown_types_are_rejected() {
        assert!(Config::from_toml("[train]\nenvs = \"many\"\n").is_err());
    }
}
