use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{Split, SplitRatios};
use crate::imagery::AugmentConfig;
use crate::metrics::CoverageDenominator;
use crate::nn::{NetConfig, TrainConfig};
use crate::pairs::PairConfig;
use crate::synth::WorldConfig;
use crate::tilefetch::FetchConfig;
use crate::trees::{ForestConfig, GbtConfig};
use crate::{Error, Result};

/// Existing parcels (and optionally tiles) to use instead of a synthetic world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputConfig {
    pub parcels: PathBuf,
    /// Directory laid out as `<kind>/<parcel_id>.png`.
    #[serde(default)]
    pub tiles: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepConfig {
    pub net: NetConfig,
    pub train: TrainConfig,
    /// Tile variants per parcel: the original plus `variants - 1` augmented copies.
    pub variants: usize,
}

impl Default for DeepConfig {
    fn default() -> Self {
        Self {
            net: NetConfig {
                frozen_blocks: 4,
                ..NetConfig::default()
            },
            train: TrainConfig {
                max_pairs_per_epoch: Some(8192),
                ..TrainConfig::default()
            },
            variants: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelsConfig {
    pub forest: ForestConfig,
    /// Forest fit on the small network's latent vectors.
    pub latent_forest: ForestConfig,
    pub gbt: GbtConfig,
    pub dl_small: DeepConfig,
    pub dl_large: DeepConfig,
    pub augment: AugmentConfig,
}

impl Default for ModelsConfig {
    fn default() -> Self {
        let forest = ForestConfig {
            n_trees: 100,
            ..ForestConfig::default()
        };
        Self {
            latent_forest: forest.clone(),
            forest,
            gbt: GbtConfig::default(),
            dl_small: DeepConfig::default(),
            dl_large: DeepConfig {
                net: NetConfig {
                    image_side: 128,
                    frozen_blocks: 4,
                    ..NetConfig::default()
                },
                variants: 1,
                ..DeepConfig::default()
            },
            augment: AugmentConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Number of pair features kept by importance; all when absent.
    pub n_keep: Option<usize>,
    /// Forest used only to rank features.
    pub forest: ForestConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_keep: None,
            forest: ForestConfig {
                n_trees: 50,
                ..ForestConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub theta_points: usize,
    pub coverage_denominator: CoverageDenominator,
    /// MAPE cap for the headline coverage figure.
    pub max_mape: f64,
    /// Coverage floor for the headline MAPE figure.
    pub min_coverage: f64,
    /// Splits whose parcels are valued.
    pub targets: Vec<Split>,
    /// Threshold for the per-parcel valuation table and `predict`.
    pub theta: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            theta_points: 101,
            coverage_denominator: CoverageDenominator::Evaluated,
            max_mape: 20.0,
            min_coverage: 50.0,
            targets: vec![Split::Test],
            theta: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every stage derives its own seed from it.
    pub seed: u64,
    pub out_dir: PathBuf,
    pub input: Option<InputConfig>,
    pub world: WorldConfig,
    pub split: SplitRatios,
    pub pairs: PairConfig,
    pub features: FeatureConfig,
    pub models: ModelsConfig,
    pub ensemble_trials: usize,
    pub eval: EvalConfig,
    pub fetch: FetchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            out_dir: PathBuf::from("runs"),
            input: None,
            world: WorldConfig::default(),
            split: SplitRatios::default(),
            pairs: PairConfig::default(),
            features: FeatureConfig::default(),
            models: ModelsConfig::default(),
            ensemble_trials: 500,
            eval: EvalConfig::default(),
            fetch: FetchConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML, then applies `key.path=value` overrides. Values are read as
    /// TOML when possible and as plain strings otherwise.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return toml::from_str(text).map_err(|e| Error::Config(e.to_string()));
        }
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::deserialize(toml::Value::Table(table)).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads the file at `path`; relative input paths are resolved against its directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text, overrides)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.out_dir);
        if let Some(input) = &mut cfg.input {
            rebase(&mut input.parcels);
            if let Some(t) = &mut input.tiles {
                rebase(t);
            }
        }
        rebase(&mut cfg.fetch.cache_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| Error::Config(format!("{name}: {}", strip_prefix(&e)));
        if self.input.is_none() {
            self.world.validate().map_err(|e| field("world", e))?;
        }
        if !(self.pairs.radius_km > 0.0) || !(self.pairs.tau > 0.0) {
            return Err(Error::Config(
                "pairs: radius_km and tau must be positive".into(),
            ));
        }
        for (name, d) in [
            ("models.dl_small", &self.models.dl_small),
            ("models.dl_large", &self.models.dl_large),
        ] {
            d.net.validate().map_err(|e| field(name, e))?;
            d.train.validate().map_err(|e| field(name, e))?;
            if d.variants == 0 {
                return Err(Error::Config(format!("{name}.variants must be at least 1")));
            }
        }
        self.models
            .augment
            .validate()
            .map_err(|e| field("models.augment", e))?;
        if self.eval.theta_points == 0 {
            return Err(Error::Config("eval.theta_points must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.theta) {
            return Err(Error::Config("eval.theta must be in [0, 1]".into()));
        }
        if self.eval.targets.is_empty() || self.eval.targets.contains(&Split::Train) {
            return Err(Error::Config(
                "eval.targets must list val and/or test".into(),
            ));
        }
        Ok(())
    }

    /// Hex digest of everything except the seed and output directory.
    pub fn hash(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Some(m) = v.as_object_mut() {
            m.remove("seed");
            m.remove("out_dir");
        }
        let text = serde_json::to_string(&v)?;
        Ok(format!("{:012x}", fnv1a(text.as_bytes()) >> 16))
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) | Error::InvalidInput(m) => m.clone(),
        other => other.to_string(),
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| Error::Config(format!("empty override key in {spec:?}")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(RunConfig::from_toml("", &[]).unwrap(), RunConfig::default());
    }

    #[test]
    fn overrides_apply_with_types() {
        let cfg = RunConfig::from_toml(
            "seed = 1\n[world]\nn_parcels = 10\n",
            &[
                "world.n_parcels=300".into(),
                "pairs.tau = 0.3".into(),
                "out_dir=/tmp/x".into(),
                "eval.targets=[\"val\", \"test\"]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.world.n_parcels, 300);
        assert_eq!(cfg.pairs.tau, 0.3);
        assert_eq!(cfg.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.eval.targets, vec![Split::Val, Split::Test]);
        assert_eq!(cfg.seed, 1);
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let e = RunConfig::from_toml("seed = 1\n[pairs]\nradius = 3\n", &[])
            .unwrap_err()
            .to_string();
        assert!(e.contains("line 3") && e.contains("radius"), "{e}");
        let e = RunConfig::from_toml("", &["models.dl_small.net.widthz=1".into()])
            .unwrap_err()
            .to_string();
        assert!(e.contains("widthz"), "{e}");
        assert!(RunConfig::from_toml("", &["noequals".into()]).is_err());
        let bad = RunConfig {
            eval: EvalConfig {
                theta: 2.0,
                ..Default::default()
            },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn hash_ignores_seed_and_out_dir() {
        let a = RunConfig::default();
        let b = RunConfig {
            seed: 9,
            out_dir: "elsewhere".into(),
            ..a.clone()
        };
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        let c = RunConfig {
            ensemble_trials: 7,
            ..a.clone()
        };
        assert_ne!(a.hash().unwrap(), c.hash().unwrap());
        assert_eq!(a.hash().unwrap().len(), 12);
    }

    #[test]
    fn load_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "out_dir = \"out\"\n[input]\nparcels = \"p.csv\"\n").unwrap();
        let cfg = RunConfig::load(&path, &[]).unwrap();
        assert_eq!(cfg.out_dir, dir.path().join("out"));
        assert_eq!(cfg.input.unwrap().parcels, dir.path().join("p.csv"));
    }
}
