//! Versioned TOML experiment configs.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KimuraError, Result};
use crate::experiments::{Experiment, GridSpec, SchemeSpec, Setup};
use crate::families::{InitialData, OperatorFamily};
use crate::measure::hex_digest;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Default bundle directory; `--out` overrides.
    #[serde(default)]
    pub output: Option<String>,
    pub operator: OperatorFamily,
    pub grid: GridSpec,
    pub scheme: SchemeSpec,
    #[serde(default = "profile")]
    pub initial: InitialData,
    #[serde(default = "bessel")]
    pub initial_alt: InitialData,
    /// Whether a failed operator validation aborts the run.
    #[serde(default = "yes")]
    pub validate_operator: bool,
    #[serde(default)]
    pub experiments: Vec<Experiment>,
}

fn profile() -> InitialData {
    InitialData::Profile { tilt: 0.0 }
}

fn bessel() -> InitialData {
    InitialData::BesselMode
}

fn yes() -> bool {
    true
}

fn config_error(path: impl Into<String>, message: impl Into<String>) -> KimuraError {
    KimuraError::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parse and validate; errors carry the dotted path of the bad field.
    pub fn from_toml(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| config_error("", e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            config_error(
                if path == "." { String::new() } else { path },
                e.into_inner().message().to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error("", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_error(
                "schema_version",
                format!(
                    "unsupported version {} (expected {SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        if self.grid.cells < 2 {
            return Err(config_error("grid.cells", "need at least 2 cells"));
        }
        if let Some(k) = self.grid.refinements.iter().position(|&c| c < 2) {
            return Err(config_error(
                format!("grid.refinements[{k}]"),
                "need at least 2 cells",
            ));
        }
        let s = &self.scheme;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(config_error("scheme.dt", "must be positive"));
        }
        if !(s.t_end > 0.0 && s.t_end.is_finite()) {
            return Err(config_error("scheme.t_end", "must be positive"));
        }
        if s.save_every == 0 {
            return Err(config_error("scheme.save_every", "must be at least 1"));
        }
        for (k, e) in self.experiments.iter().enumerate() {
            if let Err((field, msg)) = e.validate() {
                return Err(config_error(format!("experiments[{k}].{field}"), msg));
            }
        }
        self.operator
            .build()
            .map_err(|e| config_error("operator", e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex_digest(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    pub fn setup(&self) -> Setup {
        Setup {
            operator: self.operator.clone(),
            grid: self.grid.clone(),
            scheme: self.scheme.clone(),
            initial: self.initial.clone(),
            initial_alt: self.initial_alt.clone(),
        }
    }

    /// Replace the refinement series by `[cells, 2 cells]`.
    pub fn override_grid(&mut self, cells: usize) -> Result<()> {
        if cells < 2 {
            return Err(config_error(
                "grid.cells",
                "override needs at least 2 cells",
            ));
        }
        self.grid.cells = cells;
        self.grid.refinements = vec![cells, 2 * cells];
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
schema_version = 1
name = "zero-weight"
seed = 7

[operator]
family = "model"
n = 1
n0 = 1

[grid]
cells = 32
refinements = [32, 64]

[scheme]
dt = 0.01
t_end = 0.5

[[experiments]]
kind = "boundary-harnack"
t = 0.3
r = 0.2
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.experiments.len(), 1);
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let mut b = a.clone();
        b.seed = 8;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    fn error_path(text: &str) -> String {
        match ExperimentConfig::from_toml(text).unwrap_err() {
            KimuraError::Config { path, .. } => path,
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn errors_name_the_field() {
        assert_eq!(
            error_path(&SAMPLE.replace("r = 0.2", "r = -0.2")),
            "experiments[0].r"
        );
        assert_eq!(
            error_path(&SAMPLE.replace("cells = 32", "cells = \"many\"")),
            "grid.cells"
        );
        assert_eq!(
            error_path(&SAMPLE.replace("schema_version = 1", "schema_version = 9")),
            "schema_version"
        );
        assert!(
            error_path(&SAMPLE.replace("t = 0.3", "t = 0.3\nradius = 2"))
                .starts_with("experiments")
        );
    }

    #[test]
    fn empty_experiment_list_is_valid() {
        let text = SAMPLE.split("[[experiments]]").next().unwrap();
        assert!(ExperimentConfig::from_toml(text)
            .unwrap()
            .experiments
            .is_empty());
    }
}
