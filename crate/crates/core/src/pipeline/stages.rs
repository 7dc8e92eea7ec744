use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::BufReader;

use serde::{Deserialize, Serialize};

use super::{create, load_tile, write_json, Run, ScoreTable};
use super::{
    CONFIG_FILE, ENSEMBLE_FILE, FEATURES_FILE, GBT_FILE, MODELS_DIR, PAIRS_FILE, PARCELS_FILE,
    REPORTS_DIR, SCORES_FILE, SPLIT_FILE, TILES_DIR, TRAINING_FILE,
};
use crate::data::{save_parcels, temporal_split, Dataset, LandParcel, Split};
use crate::ensemble::{combine, tune_weights, EnsembleSpec, TuneOutcome};
use crate::geo::SpatialIndex;
use crate::imagery::{augment, color_stats, TileKind, TileStore};
use crate::metrics::{
    coverage_mape_curve, per_province_report, roc_curve, theta_grid, write_curve_csv,
    write_province_csv, write_roc_csv,
};
use crate::nn::{
    predict as nn_predict, tile_tensor, train as nn_train, PairExample, SimilarityNet,
    TileFeatures, TrainReport,
};
use crate::pairs::{
    self, pairs_matrix, read_pairs, select_features, write_pairs, FeatureKind, FeatureSchema,
    ImageStats, ImageTable, PairRecord,
};
use crate::synth::generate_world;
use crate::tilefetch::{Clock, TileFetcher, Transport};
use crate::trees::{fit_ensemble, fit_gbt_regressor, EnsembleKind, ForestConfig, Matrix};
use crate::valuation::{
    value_parcel, write_results_csv, Candidates, ScoredNeighbor, ValuationResult,
};
use crate::{par_map, Error, Result};

// Seed streams, one per consumer of randomness.
const WORLD: u64 = 1;
const SPLIT: u64 = 2;
const SELECT: u64 = 3;
const FOREST: u64 = 4;
const FOREST_NO_IMAGE: u64 = 5;
const LATENT_FOREST: u64 = 6;
const DL_SMALL: u64 = 7;
const DL_LARGE: u64 = 8;
const AUGMENT: u64 = 9;
const ENSEMBLE: u64 = 10;

/// Score columns beyond the five ensemble members.
pub const EXTRA_TREES_NO_IMAGE: &str = "extra_trees_no_image";
pub const RANDOM_FOREST_NO_IMAGE: &str = "random_forest_no_image";
pub const ENSEMBLE_COLUMN: &str = "ensemble";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub synthetic: bool,
    pub n_parcels: usize,
    pub n_provinces: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

/// Writes the parcel table, tiles (synthetic worlds only) and the temporal split.
pub fn generate(run: &Run) -> Result<GenerateSummary> {
    std::fs::create_dir_all(&run.dir)?;
    write_json(&run.path(CONFIG_FILE), &run.config)?;
    let ds = match &run.config.input {
        Some(input) => {
            let ds = crate::data::load_parcels(&input.parcels)?;
            save_parcels(&ds, run.path(PARCELS_FILE))?;
            ds
        }
        None => {
            let mut cfg = run.config.world.clone();
            cfg.seed = run.seed(WORLD);
            let world = generate_world(&cfg)?;
            world.save(&run.dir)?;
            world.dataset
        }
    };
    let split = temporal_split(&ds, run.config.split, run.seed(SPLIT))?;
    split.write(create(&run.path(SPLIT_FILE))?)?;
    Ok(GenerateSummary {
        synthetic: run.config.input.is_none(),
        n_parcels: ds.len(),
        n_provinces: ds.schema().provinces.len(),
        n_train: split.count(Split::Train),
        n_val: split.count(Split::Val),
        n_test: split.count(Split::Test),
    })
}

/// Downloads (or reads from cache) every configured tile kind for every parcel
/// and stores it in the run's tile directory. Returns the number of tiles stored.
pub fn fetch_tiles<T: Transport, C: Clock>(run: &Run, transport: T, clock: C) -> Result<usize> {
    let ds = run.dataset()?;
    let fetcher = TileFetcher::new(run.config.fetch.clone(), transport, clock)?;
    let store = TileStore::new(run.path(TILES_DIR));
    let mut n = 0;
    for p in ds.parcels() {
        for &kind in &run.config.fetch.kinds {
            store.save(&fetcher.fetch_tile(p, kind)?)?;
            n += 1;
        }
    }
    Ok(n)
}

fn image_table(run: &Run, ds: &Dataset) -> Result<ImageTable> {
    let stores = run.tile_stores();
    let stats = par_map(ds.len(), |i| -> Result<ImageStats> {
        let id = &ds.parcels()[i].id;
        let get = |k| Ok::<_, Error>(load_tile(&stores, k, id)?.map(|t| color_stats(&t)));
        Ok(ImageStats {
            satellite: get(TileKind::Satellite)?,
            segmented: get(TileKind::Segmented)?,
        })
    });
    ds.parcels()
        .iter()
        .zip(stats)
        .map(|(p, s)| Ok((p.id.clone(), s?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsSummary {
    pub n_pairs: BTreeMap<String, usize>,
    pub positive_share: f64,
    pub n_features: usize,
    pub selected: Vec<String>,
    pub parcels_with_tiles: usize,
}

/// Builds labeled pairs with differenced features and ranks features on the
/// training pairs.
pub fn build_pairs(run: &Run) -> Result<PairsSummary> {
    let ds = run.dataset()?;
    let split = run.split()?;
    let images = image_table(run, &ds)?;
    let schema = FeatureSchema::for_dataset(&ds);
    let idx = SpatialIndex::build(&ds, run.config.pairs.radius_km);
    let pairs = pairs::build_pairs(&idx, &split, &images, &schema, &run.config.pairs)?;
    let train: Vec<&PairRecord> = pairs.iter().filter(|p| p.split == Split::Train).collect();
    let n_keep = run.config.features.n_keep.unwrap_or(schema.width());
    let forest = ForestConfig {
        seed: run.seed(SELECT),
        ..run.config.features.forest.clone()
    };
    let schema = select_features(&train, &schema, n_keep, &forest)?;
    write_pairs(&pairs, &schema, create(&run.path(PAIRS_FILE))?)?;
    std::fs::write(run.path(FEATURES_FILE), schema.to_json()? + "\n")?;
    let mut n_pairs = BTreeMap::new();
    for s in Split::ALL {
        n_pairs.insert(s.to_string(), pairs.iter().filter(|p| p.split == s).count());
    }
    Ok(PairsSummary {
        n_pairs,
        positive_share: pairs.iter().filter(|p| p.label).count() as f64 / pairs.len().max(1) as f64,
        n_features: schema.width(),
        selected: schema
            .selected_names()
            .into_iter()
            .map(str::to_string)
            .collect(),
        parcels_with_tiles: images
            .values()
            .filter(|s| s.satellite.is_some() || s.segmented.is_some())
            .count(),
    })
}

struct PairData {
    pairs: Vec<PairRecord>,
    schema: FeatureSchema,
}

fn load_pairs(run: &Run) -> Result<PairData> {
    let path = run.require(PAIRS_FILE, "landval build-pairs")?;
    let (pairs, names) = read_pairs(BufReader::new(File::open(path)?))?;
    let schema = FeatureSchema::from_json(&std::fs::read_to_string(
        run.require(FEATURES_FILE, "landval build-pairs")?,
    )?)?;
    if names != schema.names {
        return Err(Error::invalid(
            "pair columns do not match the saved feature schema",
        ));
    }
    Ok(PairData { pairs, schema })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub n_train_pairs: usize,
    /// Validation AUC per score column.
    pub val_auc: BTreeMap<String, Option<f64>>,
    pub dl_small: TrainReport,
    pub dl_large: TrainReport,
}

fn fit_and_score(
    kind: EnsembleKind,
    x_all: &Matrix,
    train_rows: &[usize],
    labels: &[bool],
    cfg: &ForestConfig,
) -> Result<(crate::trees::TreeEnsemble, Vec<f64>)> {
    let x_train = Matrix::from_rows(&train_rows.iter().map(|&r| x_all.row(r)).collect::<Vec<_>>())?;
    let y: Vec<bool> = train_rows.iter().map(|&r| labels[r]).collect();
    let model = fit_ensemble(kind, &x_train, &y, cfg)?;
    let scores = model.predict_matrix(x_all)?;
    Ok((model, scores))
}

/// Category indices per parcel in schema order, for the embedding tables.
fn category_codes(ds: &Dataset) -> Vec<Vec<u32>> {
    let fields = &ds.schema().categorical;
    ds.parcels()
        .iter()
        .map(|p| {
            fields
                .iter()
                .map(|f| f.index_of(&p.categorical[&f.name]).unwrap_or(f.vocab.len()) as u32)
                .collect()
        })
        .collect()
}

fn pair_examples(ds: &Dataset, data: &PairData) -> Vec<PairExample> {
    let codes = category_codes(ds);
    let index: HashMap<&str, usize> = ds
        .parcels()
        .iter()
        .enumerate()
        .map(|(i, p)| (p.id.as_str(), i))
        .collect();
    data.pairs
        .iter()
        .map(|p| {
            let a = index[p.primary_id.as_str()];
            let b = index[p.neighbor_id.as_str()];
            PairExample {
                primary: a,
                neighbor: b,
                cat_primary: codes[a].clone(),
                cat_neighbor: codes[b].clone(),
                cont: p.masked(&data.schema.mask),
                label: p.label,
            }
        })
        .collect()
}

/// Tower inputs for every parcel: variant 0 is the stored tile, later variants
/// are augmented copies. When the tower is frozen the embeddings are computed
/// here once.
fn tile_features(
    run: &Run,
    ds: &Dataset,
    net: &SimilarityNet,
    variants: usize,
    aug_stream: u64,
) -> Result<TileFeatures> {
    let stores = run.tile_stores();
    let side = net.config.image_side;
    let frozen = net.config.tower_frozen();
    let aug_seed = run.seed(aug_stream);
    let rows = par_map(ds.len(), |i| -> Result<Vec<f64>> {
        let id = &ds.parcels()[i].id;
        let sat = load_tile(&stores, TileKind::Satellite, id)?;
        let seg = load_tile(&stores, TileKind::Segmented, id)?;
        let mut out = Vec::new();
        for v in 0..variants {
            let t = match (&sat, &seg) {
                (Some(a), Some(b)) if v == 0 => tile_tensor(a, b, side)?,
                (Some(a), Some(b)) => {
                    let s = crate::derive_seed(aug_seed, (i * variants + v) as u64);
                    let cfg = &run.config.models.augment;
                    tile_tensor(&augment(a, cfg, s)?, &augment(b, cfg, s)?, side)?
                }
                _ => vec![0.0; net.tile_len()],
            };
            if frozen {
                out.extend(net.embed_tile(&t)?);
            } else {
                out.extend(t);
            }
        }
        Ok(out)
    });
    let data: Vec<f64> = rows.into_iter().collect::<Result<Vec<_>>>()?.concat();
    Ok(if frozen {
        TileFeatures::Embeddings {
            dim: net.config.embedding_width(),
            n_variants: variants,
            data,
        }
    } else {
        TileFeatures::Pixels {
            len: net.tile_len(),
            n_variants: variants,
            data,
        }
    })
}

/// Parcel-level regression features: location, attributes, category codes and
/// tile color statistics (zero with a flag when missing).
fn parcel_matrix(ds: &Dataset, images: &ImageTable) -> Result<Matrix> {
    let codes = category_codes(ds);
    let rows: Vec<Vec<f64>> = ds
        .parcels()
        .iter()
        .zip(&codes)
        .map(|(p, c)| {
            let mut r = vec![p.lat, p.lon];
            r.extend(ds.schema().continuous.iter().map(|k| p.continuous[k]));
            r.extend(c.iter().map(|&v| v as f64));
            let img = images.get(&p.id).copied().unwrap_or_default();
            for kind in TileKind::ALL {
                match img.get(kind) {
                    Some(s) => r.extend([s.greenness, s.blueness, s.darkness, 0.0]),
                    None => r.extend([0.0, 0.0, 0.0, 1.0]),
                }
            }
            r
        })
        .collect();
    Matrix::from_rows(&rows)
}

fn train_deep(
    run: &Run,
    ds: &Dataset,
    examples: &[PairExample],
    rows: (&[usize], &[usize]),
    which: &super::DeepConfig,
    stream: u64,
) -> Result<(SimilarityNet, TrainReport, Vec<f64>, Matrix)> {
    let vocab: Vec<usize> = ds
        .schema()
        .categorical
        .iter()
        .map(|f| f.vocab.len())
        .collect();
    let n_cont = examples.first().map_or(0, |e| e.cont.len());
    let mut net = SimilarityNet::new(which.net.clone(), &vocab, n_cont, run.seed(stream))?;
    let tiles = tile_features(run, ds, &net, which.variants, AUGMENT ^ stream)?;
    let pick = |r: &[usize]| r.iter().map(|&i| examples[i].clone()).collect::<Vec<_>>();
    let cfg = crate::nn::TrainConfig {
        seed: run.seed(stream ^ 0x5EED),
        ..which.train.clone()
    };
    let report = nn_train(&mut net, &pick(rows.0), &pick(rows.1), &tiles, &cfg)?;
    let (scores, latent) = nn_predict(&net, examples, &tiles)?;
    Ok((net, report, scores, latent))
}

/// Fits every model and scores every pair: the five ensemble members, tree
/// models without image features, and the parcel-level regression baseline.
pub fn train(run: &Run) -> Result<TrainSummary> {
    let ds = run.dataset()?;
    let split = run.split()?;
    let data = load_pairs(run)?;
    let models = &run.config.models;
    let all_rows: Vec<usize> = (0..data.pairs.len()).collect();
    let train_rows: Vec<usize> = all_rows
        .iter()
        .copied()
        .filter(|&i| data.pairs[i].split == Split::Train)
        .collect();
    let val_rows: Vec<usize> = all_rows
        .iter()
        .copied()
        .filter(|&i| data.pairs[i].split == Split::Val)
        .collect();
    let labels: Vec<bool> = data.pairs.iter().map(|p| p.label).collect();
    let refs: Vec<&PairRecord> = data.pairs.iter().collect();
    let models_dir = run.path(MODELS_DIR);
    std::fs::create_dir_all(&models_dir)?;
    let mut columns: BTreeMap<String, Vec<f64>> = BTreeMap::new();

    let forest = ForestConfig {
        seed: run.seed(FOREST),
        ..models.forest.clone()
    };
    let x = pairs_matrix(&refs, &data.schema.mask);
    for (kind, name) in [
        (EnsembleKind::ExtraTrees, "extra_trees"),
        (EnsembleKind::RandomForest, "random_forest"),
    ] {
        let (m, s) = fit_and_score(kind, &x, &train_rows, &labels, &forest)?;
        m.save(&models_dir.join(format!("{name}.json")))?;
        columns.insert(name.to_string(), s);
    }
    let no_image = data.schema.mask_without(FeatureKind::ColorDiff);
    let x_plain = pairs_matrix(&refs, &no_image);
    let forest_plain = ForestConfig {
        seed: run.seed(FOREST_NO_IMAGE),
        ..models.forest.clone()
    };
    for (kind, name) in [
        (EnsembleKind::ExtraTrees, EXTRA_TREES_NO_IMAGE),
        (EnsembleKind::RandomForest, RANDOM_FOREST_NO_IMAGE),
    ] {
        let (m, s) = fit_and_score(kind, &x_plain, &train_rows, &labels, &forest_plain)?;
        m.save(&models_dir.join(format!("{name}.json")))?;
        columns.insert(name.to_string(), s);
    }

    let examples = pair_examples(&ds, &data);
    let (small, small_report, s, latent) = train_deep(
        run,
        &ds,
        &examples,
        (&train_rows, &val_rows),
        &models.dl_small,
        DL_SMALL,
    )?;
    small.save(&models_dir.join("dl_small.json"))?;
    columns.insert("dl_small".into(), s);
    let latent_cfg = ForestConfig {
        seed: run.seed(LATENT_FOREST),
        ..models.latent_forest.clone()
    };
    let (m, s) = fit_and_score(
        EnsembleKind::RandomForest,
        &latent,
        &train_rows,
        &labels,
        &latent_cfg,
    )?;
    m.save(&models_dir.join("rf_on_latent.json"))?;
    columns.insert("rf_on_latent".into(), s);
    drop(latent);
    let (large, large_report, s, _) = train_deep(
        run,
        &ds,
        &examples,
        (&train_rows, &val_rows),
        &models.dl_large,
        DL_LARGE,
    )?;
    large.save(&models_dir.join("dl_large.json"))?;
    columns.insert("dl_large".into(), s);

    // Parcel-level regression baseline.
    let images = image_table(run, &ds)?;
    let px = parcel_matrix(&ds, &images)?;
    let train_parcels: Vec<usize> = (0..ds.len())
        .filter(|&i| split.get(&ds.parcels()[i].id) == Some(Split::Train))
        .collect();
    let x_train = Matrix::from_rows(&train_parcels.iter().map(|&i| px.row(i)).collect::<Vec<_>>())?;
    let y: Vec<f64> = train_parcels
        .iter()
        .map(|&i| ds.parcels()[i].price)
        .collect();
    let gbt = fit_gbt_regressor(&x_train, &y, &models.gbt)?;
    gbt.save(&models_dir.join("gbt.json"))?;
    let mut w = csv::Writer::from_writer(create(&run.path(GBT_FILE))?);
    w.write_record(["parcel_id", "split", "actual_price", "predicted_price"])?;
    for (i, p) in ds.parcels().iter().enumerate() {
        let s = split.get(&p.id).map_or(String::new(), |s| s.to_string());
        w.write_record([
            p.id.clone(),
            s,
            p.price.to_string(),
            gbt.predict(px.row(i))?.to_string(),
        ])?;
    }
    w.flush()?;

    let table = ScoreTable {
        primary_id: data.pairs.iter().map(|p| p.primary_id.clone()).collect(),
        neighbor_id: data.pairs.iter().map(|p| p.neighbor_id.clone()).collect(),
        split: data.pairs.iter().map(|p| p.split).collect(),
        label: labels,
        columns: columns.keys().cloned().collect(),
        values: columns.into_values().collect(),
    };
    table.write(create(&run.path(SCORES_FILE))?)?;
    let val_auc = table
        .columns
        .iter()
        .zip(&table.values)
        .map(|(c, v)| (c.clone(), table.auc_of(v, Split::Val)))
        .collect();
    let summary = TrainSummary {
        n_train_pairs: train_rows.len(),
        val_auc,
        dl_small: small_report,
        dl_large: large_report,
    };
    write_json(&run.path(TRAINING_FILE), &summary)?;
    Ok(summary)
}

fn load_scores(run: &Run) -> Result<ScoreTable> {
    ScoreTable::read(BufReader::new(File::open(
        run.require(SCORES_FILE, "landval train")?,
    )?))
}

/// Searches ensemble weights on the validation pairs.
pub fn tune_ensemble(run: &Run) -> Result<TuneOutcome> {
    let table = load_scores(run)?;
    let rows = table.rows_in(Split::Val);
    let members = table.members(&rows)?;
    let labels: Vec<bool> = rows.iter().map(|&r| table.label[r]).collect();
    let out = tune_weights(
        &members,
        &labels,
        run.config.ensemble_trials,
        run.seed(ENSEMBLE),
    )?;
    out.spec.save(&run.path(ENSEMBLE_FILE))?;
    Ok(out)
}

fn ensemble_scores(run: &Run, table: &ScoreTable) -> Result<(EnsembleSpec, Vec<f64>)> {
    let spec = EnsembleSpec::load(&run.require(ENSEMBLE_FILE, "landval tune-ensemble")?)?;
    let all: Vec<usize> = (0..table.len()).collect();
    let scores = table
        .members(&all)?
        .iter()
        .map(|m| combine(&spec, m))
        .collect::<Result<Vec<_>>>()?;
    Ok((spec, scores))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAuc {
    pub model: String,
    pub val_auc: Option<f64>,
    pub test_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub models: Vec<ModelAuc>,
    pub weights: BTreeMap<String, f64>,
    pub n_evaluated: usize,
    /// Largest coverage whose MAPE stays within the configured cap.
    pub coverage_at_max_mape: Option<f64>,
    /// MAPE at the strictest threshold still reaching the coverage floor.
    pub mape_at_min_coverage: Option<f64>,
    pub regression_mape: Option<f64>,
    pub coverage_at_theta: f64,
    pub mape_at_theta: Option<f64>,
}

fn gbt_mape(run: &Run, targets: &[Split]) -> Result<Option<f64>> {
    let mut rdr = csv::Reader::from_reader(BufReader::new(File::open(
        run.require(GBT_FILE, "landval train")?,
    )?));
    let mut errs = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let Ok(split) = rec[1].parse::<Split>() else {
            continue;
        };
        if !targets.contains(&split) {
            continue;
        }
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::invalid(format!("bad number {s:?} in {GBT_FILE}")))
        };
        let (actual, pred) = (parse(&rec[2])?, parse(&rec[3])?);
        errs.push((pred - actual).abs() / actual);
    }
    Ok((!errs.is_empty()).then(|| 100.0 * errs.iter().sum::<f64>() / errs.len() as f64))
}

/// Writes the report set under `reports/` and returns the headline numbers.
pub fn evaluate(run: &Run) -> Result<EvalSummary> {
    let ds = run.dataset()?;
    let split = run.split()?;
    let table = load_scores(run)?;
    let (spec, ens) = ensemble_scores(run, &table)?;
    let eval = &run.config.eval;
    let reports = run.path(REPORTS_DIR);
    std::fs::create_dir_all(reports.join("curves"))?;

    let mut models: Vec<ModelAuc> = table
        .columns
        .iter()
        .zip(&table.values)
        .map(|(c, v)| ModelAuc {
            model: c.clone(),
            val_auc: table.auc_of(v, Split::Val),
            test_auc: table.auc_of(v, Split::Test),
        })
        .collect();
    models.push(ModelAuc {
        model: ENSEMBLE_COLUMN.into(),
        val_auc: table.auc_of(&ens, Split::Val),
        test_auc: table.auc_of(&ens, Split::Test),
    });
    let mut w = csv::Writer::from_writer(create(&reports.join("model_auc.csv"))?);
    w.write_record(["model", "val_auc", "test_auc"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for m in &models {
        w.write_record([m.model.clone(), opt(m.val_auc), opt(m.test_auc)])?;
    }
    w.flush()?;

    let test_rows = table.rows_in(Split::Test);
    if let Ok(roc) = roc_curve(
        &test_rows.iter().map(|&r| ens[r]).collect::<Vec<_>>(),
        &test_rows
            .iter()
            .map(|&r| table.label[r])
            .collect::<Vec<_>>(),
    ) {
        write_roc_csv(&roc, create(&reports.join("roc_ensemble_test.csv"))?)?;
    }

    let grid = theta_grid(eval.theta_points);
    let mut columns: Vec<(&str, &[f64])> = table
        .columns
        .iter()
        .map(String::as_str)
        .zip(table.values.iter().map(Vec::as_slice))
        .collect();
    columns.push((ENSEMBLE_COLUMN, &ens));
    let mut headline = None;
    for (name, scores) in columns {
        let pairs = table.scored_pairs(scores);
        let cands = Candidates::new(&ds, &split, &pairs, &eval.targets)?;
        let curve = coverage_mape_curve(&cands, &grid, eval.coverage_denominator)?;
        write_curve_csv(
            &curve,
            create(&reports.join("curves").join(format!("{name}.csv")))?,
        )?;
        if name == ENSEMBLE_COLUMN {
            let provinces = per_province_report(
                &cands,
                &ds.schema().provinces,
                &grid,
                eval.coverage_denominator,
            )?;
            write_province_csv(&provinces, create(&reports.join("provinces.csv"))?)?;
            let results = cands.value(eval.theta)?;
            write_results_csv(&results, create(&reports.join("valuations.csv"))?)?;
            headline = Some((curve, results));
        }
    }
    let (curve, results) = headline.expect("ensemble column is always evaluated");
    std::fs::copy(
        reports.join("curves").join("ensemble.csv"),
        reports.join("coverage_mape.csv"),
    )?;

    let summary = EvalSummary {
        models,
        weights: spec.weights.clone(),
        n_evaluated: results.len(),
        coverage_at_max_mape: curve.coverage_at_mape(eval.max_mape),
        mape_at_min_coverage: curve.mape_at_coverage(eval.min_coverage),
        regression_mape: gbt_mape(run, &eval.targets)?,
        coverage_at_theta: crate::metrics::coverage_pct_with(&results, eval.coverage_denominator),
        mape_at_theta: crate::metrics::mape(&results).ok(),
    };
    write_json(&reports.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Values one parcel from the ensemble scores of its train-split neighbors.
pub fn predict(run: &Run, parcel_id: &str, theta: Option<f64>) -> Result<ValuationResult> {
    let ds = run.dataset()?;
    let split = run.split()?;
    let table = load_scores(run)?;
    let (_, ens) = ensemble_scores(run, &table)?;
    let p: &LandParcel = ds
        .get(parcel_id)
        .ok_or_else(|| Error::invalid(format!("unknown parcel id {parcel_id:?}")))?;
    let neighbors: Vec<ScoredNeighbor> = (0..table.len())
        .filter(|&i| {
            table.primary_id[i] == parcel_id
                && split.get(&table.neighbor_id[i]) == Some(Split::Train)
        })
        .map(|i| {
            let q = ds
                .get(&table.neighbor_id[i])
                .expect("pairs reference dataset parcels");
            ScoredNeighbor {
                id: q.id.clone(),
                price: q.price,
                score: ens[i],
            }
        })
        .collect();
    value_parcel(p, &neighbors, theta.unwrap_or(run.config.eval.theta))
}
