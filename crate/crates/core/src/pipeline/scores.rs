use std::io::{Read, Write};

use crate::data::Split;
use crate::ensemble::{MEMBERS, N_MEMBERS};
use crate::metrics::auc;
use crate::valuation::ScoredPair;
use crate::{Error, Result};

/// Per-pair similarity scores from every trained model, one column per model.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub primary_id: Vec<String>,
    pub neighbor_id: Vec<String>,
    pub split: Vec<Split>,
    pub label: Vec<bool>,
    pub columns: Vec<String>,
    /// `values[c][row]`.
    pub values: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.label.len()
    }

    pub fn is_empty(&self) -> bool {
        self.label.is_empty()
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.columns
            .iter()
            .position(|c| c == name)
            .map(|i| self.values[i].as_slice())
            .ok_or_else(|| Error::invalid(format!("score table has no column {name:?}")))
    }

    pub fn rows_in(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.split[i] == split)
            .collect()
    }

    /// The five ensemble member scores of each requested row.
    pub fn members(&self, rows: &[usize]) -> Result<Vec<[f64; N_MEMBERS]>> {
        let cols: Vec<&[f64]> = MEMBERS
            .iter()
            .map(|m| self.column(m))
            .collect::<Result<_>>()?;
        Ok(rows
            .iter()
            .map(|&r| std::array::from_fn(|k| cols[k][r]))
            .collect())
    }

    /// AUC of a score column over the rows of one split; `None` when undefined.
    pub fn auc_of(&self, scores: &[f64], split: Split) -> Option<f64> {
        let rows = self.rows_in(split);
        let s: Vec<f64> = rows.iter().map(|&r| scores[r]).collect();
        let l: Vec<bool> = rows.iter().map(|&r| self.label[r]).collect();
        auc(&s, &l).ok()
    }

    pub fn scored_pairs(&self, scores: &[f64]) -> Vec<ScoredPair> {
        (0..self.len())
            .map(|i| ScoredPair {
                primary_id: self.primary_id[i].clone(),
                neighbor_id: self.neighbor_id[i].clone(),
                score: scores[i],
            })
            .collect()
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["primary_id", "neighbor_id", "split", "label"];
        header.extend(self.columns.iter().map(String::as_str));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec = vec![
                self.primary_id[i].clone(),
                self.neighbor_id[i].clone(),
                self.split[i].to_string(),
                (self.label[i] as u8).to_string(),
            ];
            rec.extend(self.values.iter().map(|c| c[i].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let columns: Vec<String> = rdr.headers()?.iter().skip(4).map(str::to_string).collect();
        let mut t = ScoreTable {
            primary_id: Vec::new(),
            neighbor_id: Vec::new(),
            split: Vec::new(),
            label: Vec::new(),
            values: vec![Vec::new(); columns.len()],
            columns,
        };
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let bad = |m: String| Error::Parse {
                path: "scores".into(),
                line: row + 2,
                message: m,
            };
            t.primary_id.push(rec[0].to_string());
            t.neighbor_id.push(rec[1].to_string());
            t.split.push(rec[2].parse()?);
            t.label.push(&rec[3] == "1");
            for (c, v) in rec.iter().skip(4).enumerate() {
                let x: f64 = v.parse().map_err(|_| bad(format!("bad score {v:?}")))?;
                t.values[c].push(x);
            }
        }
        Ok(t)
    }
}
