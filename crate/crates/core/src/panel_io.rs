//! Long-format panel CSV ingestion and export.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::Panel;
use crate::error::{NarError, Result};

/// Column names of a long-format panel file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PanelSchema {
    pub time_col: String,
    pub node_col: String,
    pub value_col: String,
    #[serde(default)]
    pub covariate_cols: Vec<String>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        Self {
            time_col: "t".into(),
            node_col: "node".into(),
            value_col: "value".into(),
            covariate_cols: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GapPolicy {
    /// Any missing `(time, node)` cell is an error.
    #[default]
    Error,
    /// Carry the previous observation of the node forward.
    ForwardFill,
    /// Remove nodes with any missing cell.
    DropNode,
}

/// Dense panel with its node and time labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    /// Nodes in order of first appearance.
    pub node_ids: Vec<String>,
    /// Times sorted numerically when every label is a number, lexically otherwise.
    pub times: Vec<String>,
    pub panel: Panel<f64>,
    pub log_applied: bool,
    pub schema: PanelSchema,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| NarError::Data(format!("column '{name}' not found")))
}

fn sort_times(times: &mut [String]) {
    let numeric: Option<Vec<f64>> = times.iter().map(|t| t.parse::<f64>().ok()).collect();
    match numeric {
        Some(_) => times.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        }),
        None => times.sort(),
    }
}

pub fn ingest_panel<R: Read>(
    reader: R,
    schema: &PanelSchema,
    gap_policy: GapPolicy,
    log_transform: bool,
) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let tc = column(&headers, &schema.time_col)?;
    let nc = column(&headers, &schema.node_col)?;
    let vc = column(&headers, &schema.value_col)?;
    let cc: Vec<usize> = schema
        .covariate_cols
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<_>>()?;

    let mut node_ids: Vec<String> = Vec::new();
    let mut node_index: HashMap<String, usize> = HashMap::new();
    let mut time_set: HashMap<String, ()> = HashMap::new();
    let mut cells: HashMap<(String, usize), Vec<f64>> = HashMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let time = rec.get(tc).unwrap_or("").to_string();
        let node = rec.get(nc).unwrap_or("").to_string();
        let parse = |idx: usize, what: &str| -> Result<f64> {
            let raw = rec.get(idx).unwrap_or("");
            raw.parse::<f64>().map_err(|_| {
                NarError::Data(format!("row {}: cannot parse {what} '{raw}'", line + 2))
            })
        };
        let mut vals = vec![parse(vc, &schema.value_col)?];
        for (k, &c) in cc.iter().enumerate() {
            vals.push(parse(c, &schema.covariate_cols[k])?);
        }
        let i = *node_index.entry(node.clone()).or_insert_with(|| {
            node_ids.push(node.clone());
            node_ids.len() - 1
        });
        time_set.insert(time.clone(), ());
        if cells.insert((time.clone(), i), vals).is_some() {
            return Err(NarError::Data(format!("duplicate cell (time {time}, node {node})")));
        }
    }
    let mut times: Vec<String> = time_set.into_keys().collect();
    sort_times(&mut times);
    if times.is_empty() {
        return Err(NarError::Data("panel file has no rows".into()));
    }

    let width = 1 + cc.len();
    // grid[node][time] = values
    let mut grid: Vec<Vec<Option<Vec<f64>>>> = (0..node_ids.len())
        .map(|i| times.iter().map(|t| cells.remove(&(t.clone(), i))).collect())
        .collect();
    let mut keep: Vec<bool> = vec![true; node_ids.len()];
    for (i, series) in grid.iter_mut().enumerate() {
        for t in 0..series.len() {
            if series[t].is_some() {
                continue;
            }
            match gap_policy {
                GapPolicy::Error => {
                    return Err(NarError::Data(format!(
                        "missing cell (time {}, node {})",
                        times[t], node_ids[i]
                    )))
                }
                GapPolicy::ForwardFill => {
                    if t == 0 {
                        return Err(NarError::Data(format!(
                            "cannot forward-fill the first period (time {}, node {})",
                            times[t], node_ids[i]
                        )));
                    }
                    series[t] = series[t - 1].clone();
                }
                GapPolicy::DropNode => {
                    keep[i] = false;
                    break;
                }
            }
        }
    }
    let kept: Vec<usize> = (0..node_ids.len()).filter(|&i| keep[i]).collect();
    if kept.is_empty() {
        return Err(NarError::Data("every node has gaps".into()));
    }
    for &i in kept.iter() {
        if !keep[i] {
            log::info!("dropping node {}", node_ids[i]);
        }
    }
    let t_len = times.len();
    let mut mats: Vec<DMatrix<f64>> = (0..width).map(|_| DMatrix::zeros(t_len, kept.len())).collect();
    for (c, &i) in kept.iter().enumerate() {
        for t in 0..t_len {
            let vals = grid[i][t].as_ref().expect("gaps resolved");
            for (k, m) in mats.iter_mut().enumerate() {
                m[(t, c)] = vals[k];
            }
        }
    }
    let mut x = mats.remove(0);
    if log_transform {
        if let Some(v) = x.iter().find(|v| **v <= 0.0) {
            return Err(NarError::Data(format!("cannot take the log of {v}")));
        }
        x.apply(|v| *v = v.ln());
    }
    Ok(PanelDataset {
        node_ids: kept.iter().map(|&i| node_ids[i].clone()).collect(),
        times,
        panel: Panel::new(x, mats)?,
        log_applied: log_transform,
        schema: schema.clone(),
    })
}

/// Writes the dataset back in long format with round-trip float formatting.
pub fn write_panel_csv<W: Write>(writer: W, data: &PanelDataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = vec![
        data.schema.time_col.clone(),
        data.schema.node_col.clone(),
        data.schema.value_col.clone(),
    ];
    header.extend(data.schema.covariate_cols.iter().cloned());
    wtr.write_record(&header)?;
    for (t, time) in data.times.iter().enumerate() {
        for (i, node) in data.node_ids.iter().enumerate() {
            let mut rec = vec![time.clone(), node.clone(), format!("{}", data.panel.x[(t, i)])];
            rec.extend(data.panel.y.iter().map(|m| format!("{}", m[(t, i)])));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}
