//! Parcel records, CSV ingestion, and the per-province temporal split.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{seeded_rng, Error, Result};

/// Columns every parcel CSV starts with, in order.
pub const FIXED_COLUMNS: [&str; 6] = ["id", "lat", "lon", "price", "appraisal_date", "province"];
/// Header prefix marking a categorical attribute column.
pub const CATEGORICAL_PREFIX: &str = "cat_";
const DATE_FORMAT: &str = "%Y-%m-%d";

/// One appraised land parcel. Price is in THB per square wa, excluding buildings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandParcel {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
    pub price: f64,
    pub appraisal_date: NaiveDate,
    pub province: String,
    pub continuous: BTreeMap<String, f64>,
    pub categorical: BTreeMap<String, String>,
}

impl LandParcel {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if !(self.price.is_finite() && self.price > 0.0) {
            return Err(format!("price must be positive, got {}", self.price));
        }
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(format!("latitude {} out of range [-90, 90]", self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(format!("longitude {} out of range [-180, 180]", self.lon));
        }
        if let Some((k, v)) = self.continuous.iter().find(|(_, v)| !v.is_finite()) {
            return Err(format!("attribute {k} is not finite: {v}"));
        }
        Ok(())
    }

    pub fn location(&self) -> (f64, f64) {
        (self.lat, self.lon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalField {
    pub name: String,
    /// Sorted distinct values.
    pub vocab: Vec<String>,
}

impl CategoricalField {
    pub fn index_of(&self, value: &str) -> Option<usize> {
        self.vocab.binary_search_by(|v| v.as_str().cmp(value)).ok()
    }
}

/// Attribute layout shared by every parcel of a dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Schema {
    pub continuous: Vec<String>,
    pub categorical: Vec<CategoricalField>,
    pub provinces: Vec<String>,
}

impl Schema {
    pub fn categorical_names(&self) -> impl Iterator<Item = &str> {
        self.categorical.iter().map(|c| c.name.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    parcels: Vec<LandParcel>,
    schema: Schema,
    by_id: HashMap<String, usize>,
}

impl Dataset {
    /// Builds a dataset, checking id uniqueness and a common attribute layout.
    /// Attribute order follows `continuous` / `categorical` as given.
    pub fn new(
        parcels: Vec<LandParcel>,
        continuous: Vec<String>,
        categorical: Vec<String>,
    ) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(parcels.len());
        let cont_set: BTreeSet<&str> = continuous.iter().map(String::as_str).collect();
        let cat_set: BTreeSet<&str> = categorical.iter().map(String::as_str).collect();
        let mut vocabs: Vec<BTreeSet<String>> = vec![BTreeSet::new(); categorical.len()];
        let mut provinces = BTreeSet::new();

        for (i, p) in parcels.iter().enumerate() {
            p.validate()
                .map_err(|e| Error::invalid(format!("parcel {}: {e}", p.id)))?;
            if by_id.insert(p.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate parcel id {}", p.id)));
            }
            let keys: BTreeSet<&str> = p.continuous.keys().map(String::as_str).collect();
            if keys != cont_set {
                return Err(Error::invalid(format!(
                    "parcel {} has continuous attributes {:?}, expected {:?}",
                    p.id, keys, cont_set
                )));
            }
            let keys: BTreeSet<&str> = p.categorical.keys().map(String::as_str).collect();
            if keys != cat_set {
                return Err(Error::invalid(format!(
                    "parcel {} has categorical attributes {:?}, expected {:?}",
                    p.id, keys, cat_set
                )));
            }
            for (vocab, name) in vocabs.iter_mut().zip(&categorical) {
                vocab.insert(p.categorical[name].clone());
            }
            provinces.insert(p.province.clone());
        }

        let schema = Schema {
            continuous,
            categorical: categorical
                .into_iter()
                .zip(vocabs)
                .map(|(name, vocab)| CategoricalField {
                    name,
                    vocab: vocab.into_iter().collect(),
                })
                .collect(),
            provinces: provinces.into_iter().collect(),
        };
        Ok(Self {
            parcels,
            schema,
            by_id,
        })
    }

    /// Builds a dataset whose attribute names are taken from the first parcel (sorted).
    pub fn from_parcels(parcels: Vec<LandParcel>) -> Result<Self> {
        let (cont, cat) = match parcels.first() {
            Some(p) => (
                p.continuous.keys().cloned().collect(),
                p.categorical.keys().cloned().collect(),
            ),
            None => (Vec::new(), Vec::new()),
        };
        Self::new(parcels, cont, cat)
    }

    pub fn parcels(&self) -> &[LandParcel] {
        &self.parcels
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.parcels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parcels.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LandParcel> {
        self.by_id.get(id).map(|&i| &self.parcels[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Parcels grouped by province, in province order.
    pub fn by_province(&self) -> BTreeMap<&str, Vec<&LandParcel>> {
        let mut out: BTreeMap<&str, Vec<&LandParcel>> = BTreeMap::new();
        for p in &self.parcels {
            out.entry(p.province.as_str()).or_default().push(p);
        }
        out
    }
}

/// Reads a parcel CSV. Columns after the fixed six are continuous unless prefixed `cat_`.
pub fn load_parcels(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_parcels(file, &path.display().to_string())
}

pub fn read_parcels<R: Read>(reader: R, source: &str) -> Result<Dataset> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    for (i, want) in FIXED_COLUMNS.iter().enumerate() {
        match header.get(i) {
            Some(h) if h == *want => {}
            Some(h) => {
                return Err(parse_err(
                    1,
                    format!(
                        "expected column {want:?} at position {}, found {h:?}",
                        i + 1
                    ),
                ))
            }
            None => return Err(parse_err(1, format!("missing column {want:?}"))),
        }
    }
    let mut continuous = Vec::new();
    let mut categorical = Vec::new();
    // (column index, is categorical, attribute name)
    let mut attr_cols = Vec::new();
    for (i, h) in header.iter().enumerate().skip(FIXED_COLUMNS.len()) {
        if let Some(name) = h.strip_prefix(CATEGORICAL_PREFIX) {
            categorical.push(name.to_string());
            attr_cols.push((i, true, name.to_string()));
        } else {
            continuous.push(h.to_string());
            attr_cols.push((i, false, h.to_string()));
        }
    }

    let mut parcels = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row + 2;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.len() != header.len() {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", header.len(), record.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            f64::from_str(&record[i]).map_err(|_| {
                parse_err(
                    line,
                    format!(
                        "column {:?}: cannot parse {:?} as a number",
                        &header[i], &record[i]
                    ),
                )
            })
        };
        let date = NaiveDate::parse_from_str(&record[4], DATE_FORMAT).map_err(|_| {
            parse_err(
                line,
                format!("appraisal_date {:?} is not YYYY-MM-DD", &record[4]),
            )
        })?;
        let mut parcel = LandParcel {
            id: record[0].to_string(),
            lat: num(1)?,
            lon: num(2)?,
            price: num(3)?,
            appraisal_date: date,
            province: record[5].to_string(),
            continuous: BTreeMap::new(),
            categorical: BTreeMap::new(),
        };
        for (i, is_cat, name) in &attr_cols {
            if *is_cat {
                parcel
                    .categorical
                    .insert(name.clone(), record[*i].to_string());
            } else {
                parcel.continuous.insert(name.clone(), num(*i)?);
            }
        }
        parcel.validate().map_err(|m| parse_err(line, m))?;
        parcels.push(parcel);
    }
    Dataset::new(parcels, continuous, categorical).map_err(|e| match e {
        Error::InvalidInput(m) => parse_err(0, m),
        other => other,
    })
}

pub fn write_parcels<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let schema = ds.schema();
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(schema.continuous.iter().cloned());
    header.extend(
        schema
            .categorical_names()
            .map(|n| format!("{CATEGORICAL_PREFIX}{n}")),
    );
    w.write_record(&header)?;
    for p in ds.parcels() {
        let mut rec = vec![
            p.id.clone(),
            p.lat.to_string(),
            p.lon.to_string(),
            p.price.to_string(),
            p.appraisal_date.format(DATE_FORMAT).to_string(),
            p.province.clone(),
        ];
        rec.extend(
            schema
                .continuous
                .iter()
                .map(|n| p.continuous[n].to_string()),
        );
        rec.extend(schema.categorical_names().map(|n| p.categorical[n].clone()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_parcels(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_parcels(ds, std::io::BufWriter::new(file))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            val: 0.1,
            test: 0.1,
        }
    }
}

/// Parcel id to split. Total over the dataset it was built from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SplitAssignment {
    map: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, id: &str) -> Option<Split> {
        self.map.get(id).copied()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Split)> {
        self.map.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn count(&self, split: Split) -> usize {
        self.map.values().filter(|s| **s == split).count()
    }

    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.iter()
            .filter(|(_, s)| *s == split)
            .map(|(id, _)| id)
            .collect()
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["parcel_id", "split"])?;
        for (id, s) in self.iter() {
            w.write_record([id, s.as_str()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut map = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec?;
            map.insert(rec[0].to_string(), rec[1].parse()?);
        }
        Ok(Self { map })
    }
}

impl FromIterator<(String, Split)> for SplitAssignment {
    fn from_iter<T: IntoIterator<Item = (String, Split)>>(iter: T) -> Self {
        Self {
            map: iter.into_iter().collect(),
        }
    }
}

/// Smallest province size for which the split is defined.
pub const MIN_PROVINCE_PARCELS: usize = 10;

/// Per province: the earliest `ratios.train` share by appraisal date (ties broken by id)
/// goes to train; the remainder is shuffled with `seed` and divided between val and test.
pub fn temporal_split(ds: &Dataset, ratios: SplitRatios, seed: u64) -> Result<SplitAssignment> {
    let SplitRatios { train, val, test } = ratios;
    if [train, val, test].iter().any(|r| !(0.0..=1.0).contains(r))
        || (train + val + test - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(format!(
            "split ratios must be in [0,1] and sum to 1, got ({train}, {val}, {test})"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut map = BTreeMap::new();
    for (province, mut members) in ds.by_province() {
        let n = members.len();
        if n < MIN_PROVINCE_PARCELS {
            return Err(Error::invalid(format!(
                "province {province:?} has {n} parcels; at least {MIN_PROVINCE_PARCELS} are needed to split"
            )));
        }
        members.sort_by(|a, b| {
            a.appraisal_date
                .cmp(&b.appraisal_date)
                .then_with(|| a.id.cmp(&b.id))
        });
        let n_train = ((n as f64 * train).round() as usize).min(n);
        let mut held: Vec<&LandParcel> = members[n_train..].to_vec();
        let n_val = ((n as f64 * val).round() as usize).min(held.len());
        held.shuffle(&mut rng);
        for p in &members[..n_train] {
            map.insert(p.id.clone(), Split::Train);
        }
        for (i, p) in held.iter().enumerate() {
            let s = if i < n_val { Split::Val } else { Split::Test };
            map.insert(p.id.clone(), s);
        }
    }
    Ok(SplitAssignment { map })
}
