//! Layered configuration: built-in defaults, overridden by a TOML file,
//! overridden by command-line flags. Unknown keys are errors at every level,
//! and the resolved document is hashed so artifacts can state exactly which
//! configuration produced them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datagen::DatagenConfig;
use crate::error::{Error, Result};
use crate::model::PoseNetworkConfig;
use crate::train::TrainConfig;

/// Every tunable of the pipeline in one document. Each section is the
/// owning module's config type, so file keys and API fields never diverge.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlobalConfig {
    pub datagen: DatagenConfig,
    pub model: PoseNetworkConfig,
    pub train: TrainConfig,
}

impl GlobalConfig {
    /// Parses a TOML file over the defaults. Typos and unknown keys are
    /// rejected, not ignored.
    pub fn load(path: &Path) -> Result<GlobalConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GlobalConfig::parse(&text).map_err(|e| match e {
            Error::Invalid(msg) => Error::format(path, msg),
            other => other,
        })
    }

    /// Parses TOML text over the defaults.
    pub fn parse(text: &str) -> Result<GlobalConfig> {
        toml::from_str(text).map_err(|e| Error::invalid(e.to_string()))
    }

    /// Cross-section validation on top of each section's own checks.
    pub fn validate(&self) -> Result<()> {
        self.datagen.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.shape_mode != self.train.shape_mode {
            return Err(Error::invalid(format!(
                "model.shape_mode is {} but train.shape_mode is {}",
                self.model.shape_mode, self.train.shape_mode
            )));
        }
        Ok(())
    }

    /// The resolved document as TOML, suitable for `load`/`parse`.
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    /// Hex SHA-256 of the canonical (JSON) serialization of the resolved
    /// config. Echoed into every artifact this config produces.
    pub fn sha256(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes to JSON");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ShapeMode;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = GlobalConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        let back = GlobalConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.sha256(), cfg.sha256());
    }

    #[test]
    fn default_document_matches_the_golden_dump() {
        let golden = include_str!("../tests/golden/default_config.toml");
        assert_eq!(
            GlobalConfig::default().to_toml(),
            golden,
            "default config drifted from tests/golden/default_config.toml; \
             if the change is intended, regenerate the golden file"
        );
    }

    #[test]
    fn defaults_pin_the_stated_hyperparameters() {
        let cfg = GlobalConfig::default();
        assert_eq!(cfg.train.batch_size, 16);
        assert_eq!(cfg.model.head_hidden, vec![800, 400, 200]);
        let counts = cfg.model.binning.counts();
        assert_eq!(counts, [24, 12, 24]);
        assert_eq!(cfg.model.head_output_dim(), 2 * (24 + 12 + 24));
        assert_eq!(cfg.datagen.views_per_shape, 20);
        assert_eq!(cfg.datagen.n_azi, 6);
        assert_eq!(cfg.datagen.elevations_deg, vec![0.0, 30.0]);
        assert_eq!(cfg.model.view_count, 12);
        let augment = cfg.train.augment.expect("augmentation on by default");
        assert_eq!(augment.azimuth_max_deg, 45.0);
        let schedule: Vec<(f64, usize)> =
            cfg.train.schedule.iter().map(|p| (p.lr, p.epochs)).collect();
        assert_eq!(schedule, vec![(1e-4, 100), (1e-5, 100)]);
    }

    #[test]
    fn unknown_keys_are_rejected_at_every_level() {
        for text in [
            "nonsense = 1",
            "[trian]\nbatch_size = 16",
            "[train]\nbatch_sizes = 16",
            "[model]\nconv_channel = [16]",
            "[datagen]\n[datagen.pose]\nazimuth_deg = [0.0, 1.0]",
            "[train]\n[train.augment]\nflip_probability = 0.5",
        ] {
            assert!(
                GlobalConfig::parse(text).is_err(),
                "unknown key should be rejected: {text:?}"
            );
        }
    }

    #[test]
    fn file_values_override_defaults_and_change_the_hash() {
        let text = "
            [train]
            batch_size = 4
            seed = 9

            [[train.schedule]]
            lr = 1e-3
            epochs = 30

            [[train.schedule]]
            lr = 1e-4
            epochs = 30

            [model]
            shape_mode = \"multi_view\"

            [datagen]
            views_per_shape = 3

            [datagen.split]
            mode = \"novel-shape\"
            holdout = [\"l_shape\"]
            val_frac = 0.25
        ";
        let cfg = GlobalConfig::parse(text).unwrap();
        assert_eq!(cfg.train.batch_size, 4);
        assert_eq!(cfg.train.schedule.len(), 2);
        assert_eq!(cfg.train.schedule[0].lr, 1e-3);
        assert_eq!(cfg.model.shape_mode, ShapeMode::MultiView);
        assert_eq!(cfg.datagen.views_per_shape, 3);
        // Untouched sections keep their defaults.
        assert_eq!(cfg.model.conv_channels, vec![16, 32, 64, 128]);
        assert_ne!(cfg.sha256(), GlobalConfig::default().sha256());
        assert_eq!(cfg.sha256().len(), 64);

        // The overridden file now disagrees with train.shape_mode.
        assert!(cfg.validate().is_err());
        let mut fixed = cfg;
        fixed.train.shape_mode = ShapeMode::MultiView;
        fixed.validate().unwrap();
    }

    #[test]
    fn load_reports_the_offending_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        fs::write(&path, "[train]\nbatch_size = \"many\"").unwrap();
        let err = GlobalConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("bad.toml"), "got: {err}");
        assert!(GlobalConfig::load(&dir.path().join("missing.toml")).is_err());
    }
}
