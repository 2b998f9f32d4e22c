use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Embedding, SimilarityMatrix};
use crate::error::{Error, Result};

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Header `task,<name_0>,...,<name_K-1>`, then one row per task.
pub fn write_similarity_csv<W: Write>(w: W, s: &SimilarityMatrix) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["task".to_string()];
    header.extend(s.names.iter().cloned());
    out.write_record(&header).map_err(csv_err)?;
    for i in 0..s.k {
        let mut row = vec![s.names[i].clone()];
        row.extend((0..s.k).map(|j| format!("{:e}", s.get(i, j))));
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Header `task,dim1,...,dimd`, then one row of coordinates per task.
pub fn write_embedding_csv<W: Write>(w: W, emb: &Embedding) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["task".to_string()];
    header.extend((1..=emb.d).map(|c| format!("dim{c}")));
    out.write_record(&header).map_err(csv_err)?;
    for (name, row) in emb.names.iter().zip(&emb.coords) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| format!("{v:e}")));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Header `index,singular_value`.
pub fn write_singular_values_csv<W: Write>(w: W, emb: &Embedding) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["index", "singular_value"]).map_err(csv_err)?;
    for (i, s) in emb.singular_values.iter().enumerate() {
        out.write_record([i.to_string(), format!("{s:e}")]).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Task names and coordinate rows from an embedding CSV.
pub fn read_embedding_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.len() < 2 || &header[0] != "task" {
        return Err(Error::Format("embedding CSV must start with a 'task' column".into()));
    }
    let mut names = Vec::new();
    let mut coords = Vec::new();
    for (line, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        names.push(rec[0].to_string());
        let row = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Format(format!("row {}: '{v}' is not a number", line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        coords.push(row);
    }
    Ok((names, coords))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub task: String,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

/// Cluster labels per task and the agreement with ground truth, if known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub n_clusters: usize,
    pub ari: Option<f64>,
    pub degenerate: bool,
    pub assignments: Vec<ClusterAssignment>,
}

impl ClusterReport {
    pub fn new(names: &[String], labels: &[usize], truth: Option<&[String]>, ari: Option<f64>, n_clusters: usize, degenerate: bool) -> Self {
        let assignments = names
            .iter()
            .zip(labels)
            .enumerate()
            .map(|(i, (task, &label))| ClusterAssignment {
                task: task.clone(),
                label,
                truth: truth.map(|t| t[i].clone()),
            })
            .collect();
        Self {
            n_clusters,
            ari,
            degenerate,
            assignments,
        }
    }
}

pub fn write_cluster_report<W: Write>(mut w: W, report: &ClusterReport) -> Result<()> {
    serde_json::to_writer_pretty(&mut w, report).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(b"\n")?;
    Ok(())
}
