//! File formats: distribution JSON, dataset CSV, partition JSON.
//!
//! Dataset CSV columns are `x1..xd, y, t` with an optional `e_hat`.
//! Covariates are matched to a distribution's support by exact coordinates
//! when one is given; otherwise the support is built in order of first
//! appearance.

use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{CipwError, Result};
use crate::model::{
    make_support, Cell, CensoredDataset, CensoredSample, DistSpec, FiniteDistribution, FractionalPartition,
    Partition, PropensityMap, ScoreLabel, Support,
};

/// Parses a distribution spec, bare or wrapped as `{.., "result": spec}`.
pub fn dist_from_json(text: &str) -> Result<FiniteDistribution> {
    let bad = |e: serde_json::Error| CipwError::Data(format!("distribution JSON: {e}"));
    let mut v: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
    if v.get("points").is_none() {
        if let Some(inner) = v.get_mut("result") {
            v = inner.take();
        }
    }
    let spec: DistSpec = serde_json::from_value(v).map_err(bad)?;
    FiniteDistribution::from_spec(spec)
}

pub fn dist_to_json(dist: &FiniteDistribution) -> String {
    serde_json::to_string_pretty(&dist.to_spec()).expect("distribution serializes")
}

fn key(c: &[f64]) -> Vec<u64> {
    c.iter().map(|v| (v + 0.0).to_bits()).collect()
}

/// Parsed dataset with the `e_hat` column, if present.
#[derive(Clone, Debug)]
pub struct DatasetFile {
    pub data: CensoredDataset,
    pub scores_hat: Option<PropensityMap>,
}

fn parse_t(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

/// Reads a dataset CSV. With `support`, every row must match one of its
/// coordinate vectors.
pub fn read_dataset_csv<R: Read>(reader: R, support: Option<&Support>) -> Result<DatasetFile> {
    let data_err = |msg: String| CipwError::Data(msg);
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let headers = rdr.headers().map_err(|e| data_err(format!("dataset header: {e}")))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let t_col = col("t").ok_or_else(|| data_err("dataset lacks a t column".into()))?;
    let y_col = col("y").ok_or_else(|| data_err("dataset lacks a y column".into()))?;
    let e_col = col("e_hat");
    let mut x_cols = Vec::new();
    while let Some(c) = col(&format!("x{}", x_cols.len() + 1)) {
        x_cols.push(c);
    }
    if x_cols.is_empty() {
        return Err(data_err("dataset lacks covariate columns x1..".into()));
    }

    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut coords: Vec<Vec<f64>> = Vec::new();
    if let Some(sup) = support {
        if sup[0].coords.len() != x_cols.len() {
            return Err(data_err(format!(
                "dataset has {} covariate columns, distribution has dimension {}",
                x_cols.len(),
                sup[0].coords.len()
            )));
        }
        for p in sup.iter() {
            index.insert(key(&p.coords), p.id);
        }
    }
    let mut samples = Vec::new();
    let mut hat: Vec<Option<f64>> = support.map(|s| vec![None; s.len()]).unwrap_or_default();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| data_err(format!("row {row}: {e}")))?;
        let num = |c: usize, what: &str| -> Result<f64> {
            rec.get(c)
                .and_then(|s| s.parse::<f64>().ok())
                .ok_or_else(|| data_err(format!("row {row}: bad {what}")))
        };
        let xc = x_cols.iter().map(|&c| num(c, "covariate")).collect::<Result<Vec<_>>>()?;
        let k = key(&xc);
        let x = match index.get(&k) {
            Some(&x) => x,
            None if support.is_some() => {
                return Err(CipwError::Lookup(format!("row {row}: covariate {xc:?} not in the distribution's support")))
            }
            None => {
                let id = coords.len();
                index.insert(k, id);
                coords.push(xc);
                hat.push(None);
                id
            }
        };
        let t = rec.get(t_col).and_then(parse_t).ok_or_else(|| data_err(format!("row {row}: bad t")))?;
        let y = num(y_col, "y")?;
        if let Some(c) = e_col {
            let e = num(c, "e_hat")?;
            match hat[x] {
                Some(prev) if prev != e => {
                    return Err(data_err(format!("row {row}: e_hat {e} disagrees with {prev} for the same covariate")))
                }
                _ => hat[x] = Some(e),
            }
        }
        samples.push(CensoredSample { x, y, t });
    }
    let support = match support {
        Some(s) => s.clone(),
        None => make_support(coords)?,
    };
    let scores_hat = match e_col {
        Some(_) => Some(PropensityMap::partial(hat, ScoreLabel::Estimate)?),
        None => None,
    };
    Ok(DatasetFile { data: CensoredDataset::new(support, samples)?, scores_hat })
}

/// Writes a dataset CSV, with `e_hat` when scores are given.
pub fn write_dataset_csv<W: Write>(writer: W, data: &CensoredDataset, scores_hat: Option<&PropensityMap>) -> Result<()> {
    let io_err = |e: csv::Error| CipwError::Data(format!("writing dataset: {e}"));
    let mut w = csv::Writer::from_writer(writer);
    let d = data.points()[0].coords.len();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    header.extend(["y".to_string(), "t".to_string()]);
    if scores_hat.is_some() {
        header.push("e_hat".into());
    }
    w.write_record(&header).map_err(io_err)?;
    for s in data.samples() {
        let mut rec: Vec<String> = data.points()[s.x].coords.iter().map(|v| v.to_string()).collect();
        rec.push(s.y.to_string());
        rec.push(if s.t { "1" } else { "0" }.into());
        if let Some(h) = scores_hat {
            rec.push(h.get(s.x)?.to_string());
        }
        w.write_record(&rec).map_err(io_err)?;
    }
    w.flush().map_err(|e| CipwError::Data(format!("writing dataset: {e}")))?;
    Ok(())
}

/// One fractional weight: covariate `x` goes to `set` (null for N) with
/// probability `w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightEntry {
    pub x: usize,
    pub set: Option<usize>,
    pub w: f64,
}

/// Partition JSON: {sets, null, weights?}.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub sets: Vec<Vec<usize>>,
    #[serde(default)]
    pub null: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<WeightEntry>>,
}

impl PartitionFile {
    pub fn from_partition(p: &Partition) -> Self {
        Self { sets: p.sets().to_vec(), null: p.null_set().to_vec(), weights: None }
    }

    /// Sets list the support of each set; weights list every row entry.
    pub fn from_fractional(f: &FractionalPartition) -> Self {
        let sets = (0..f.num_sets()).map(|j| f.support_of(Cell::Set(j))).collect();
        let mut weights = Vec::new();
        for x in 0..f.m() {
            for &(c, w) in f.row(x).unwrap_or(&[]) {
                let set = match c {
                    Cell::Set(j) => Some(j),
                    Cell::Null => None,
                };
                weights.push(WeightEntry { x, set, w });
            }
        }
        Self { sets, null: f.support_of(Cell::Null), weights: Some(weights) }
    }

    pub fn is_fractional(&self) -> bool {
        self.weights.is_some()
    }

    pub fn to_partition(&self, m: usize) -> Result<Partition> {
        if self.weights.is_some() {
            return Err(CipwError::Config("partition file carries fractional weights".into()));
        }
        Partition::new(self.sets.clone(), self.null.clone(), m)
    }

    /// Fractional view. Without weights this is the hard partition; with
    /// weights, rows come from the weight entries and covariates absent
    /// from them take their hard cell from `sets`/`null`.
    pub fn to_fractional(&self, m: usize) -> Result<FractionalPartition> {
        let Some(weights) = &self.weights else {
            return Ok(FractionalPartition::from_partition(&self.to_partition(m)?));
        };
        let mut rows: Vec<Vec<(Cell, f64)>> = vec![Vec::new(); m];
        for e in weights {
            if e.x >= m {
                return Err(CipwError::Coverage(format!("weight for covariate {} outside 0..{m}", e.x)));
            }
            let c = match e.set {
                Some(j) if j < self.sets.len() => Cell::Set(j),
                Some(j) => return Err(CipwError::Coverage(format!("weight references set {j} of {}", self.sets.len()))),
                None => Cell::Null,
            };
            rows[e.x].push((c, e.w));
        }
        for (j, s) in self.sets.iter().enumerate() {
            for &x in s {
                if x < m && rows[x].is_empty() {
                    rows[x].push((Cell::Set(j), 1.0));
                }
            }
        }
        for &x in &self.null {
            if x < m && rows[x].is_empty() {
                rows[x].push((Cell::Null, 1.0));
            }
        }
        FractionalPartition::new(self.sets.len(), rows)
    }
}

pub fn partition_from_json(text: &str) -> Result<PartitionFile> {
    serde_json::from_str(text).map_err(|e| CipwError::Data(format!("partition JSON: {e}")))
}
