//! End-to-end orchestration. Every stage reads its inputs from and writes its
//! outputs to one run directory, `<out_dir>/run-<config hash>-seed<seed>/`.

mod config;
mod scores;
mod stages;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

pub use config::{DeepConfig, EvalConfig, FeatureConfig, InputConfig, ModelsConfig, RunConfig};
pub use scores::ScoreTable;
pub use stages::{
    build_pairs, evaluate, fetch_tiles, generate, predict, train, tune_ensemble, EvalSummary,
    GenerateSummary, ModelAuc, PairsSummary, TrainSummary,
};

use crate::data::{load_parcels, Dataset, SplitAssignment};
use crate::imagery::{Tile, TileKind, TileStore};
use crate::{Error, Result};

pub const CONFIG_FILE: &str = "config.json";
pub const PARCELS_FILE: &str = "parcels.csv";
pub const SPLIT_FILE: &str = "split.csv";
pub const TILES_DIR: &str = "tiles";
pub const PAIRS_FILE: &str = "pairs.csv";
pub const FEATURES_FILE: &str = "features.json";
pub const SCORES_FILE: &str = "scores.csv";
pub const GBT_FILE: &str = "gbt_predictions.csv";
pub const TRAINING_FILE: &str = "training.json";
pub const ENSEMBLE_FILE: &str = "ensemble.json";
pub const MODELS_DIR: &str = "models";
pub const REPORTS_DIR: &str = "reports";

/// A resolved configuration bound to its run directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub dir: PathBuf,
}

impl Run {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let dir = config
            .out_dir
            .join(format!("run-{}-seed{}", config.hash()?, config.seed));
        Ok(Self { config, dir })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    /// The artifact path, or an error naming the command that produces it.
    pub fn require(&self, rel: &str, prerequisite: &'static str) -> Result<PathBuf> {
        let p = self.path(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact {
                path: p,
                prerequisite,
            })
        }
    }

    pub fn seed(&self, stream: u64) -> u64 {
        crate::derive_seed(self.config.seed, stream)
    }

    pub(crate) fn dataset(&self) -> Result<Dataset> {
        load_parcels(self.require(PARCELS_FILE, "landval generate")?)
    }

    pub(crate) fn split(&self) -> Result<SplitAssignment> {
        let p = self.require(SPLIT_FILE, "landval generate")?;
        SplitAssignment::read(BufReader::new(File::open(p)?))
    }

    /// Tiles written into the run take precedence over an input tile directory.
    pub(crate) fn tile_stores(&self) -> Vec<TileStore> {
        let mut stores = vec![TileStore::new(self.path(TILES_DIR))];
        if let Some(t) = self.config.input.as_ref().and_then(|i| i.tiles.clone()) {
            stores.push(TileStore::new(t));
        }
        stores
    }
}

pub(crate) fn load_tile(stores: &[TileStore], kind: TileKind, id: &str) -> Result<Option<Tile>> {
    for s in stores {
        if let Some(t) = s.load(kind, id)? {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}
