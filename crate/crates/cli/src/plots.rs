//! Plot-ready CSVs for the training curve, the same-size histogram and the
//! capacity-versus-size lines.

use std::path::{Path, PathBuf};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::commands::{
    csv_err, write_rows, NetworkResult, SizeSummary, TRAINING_CSV, TRANSFER_NETWORKS_CSV, TRANSFER_SUMMARY_CSV,
};
use crate::error::{CliError, Result};

pub const CURVE_CSV: &str = "curve.csv";
pub const HISTOGRAM_CSV: &str = "histogram.csv";
pub const CAPACITY_VS_SIZE_CSV: &str = "capacity_vs_size.csv";

const METHODS: [&str; 4] = ["agg_gnn", "wmmse", "equal", "random"];

#[derive(Debug, Deserialize)]
struct TraceRow {
    iteration: usize,
    capacity: f64,
    wmmse: f64,
    equal: f64,
    random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub iter: usize,
    pub agg_gnn: f64,
    pub wmmse: f64,
    pub equal: f64,
    pub random: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub agg_gnn: usize,
    pub wmmse: usize,
    pub equal: usize,
    pub random: usize,
}

fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    rd.deserialize().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}

/// Counts of same-size network capacities per method over `bins` shared
/// equal-width bins.
pub fn histogram(networks: &[NetworkResult], size: usize, bins: usize) -> Vec<HistogramRow> {
    let same: Vec<&NetworkResult> = networks.iter().filter(|n| n.size == size).collect();
    if same.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = same.iter().map(|n| n.capacity).fold(f64::INFINITY, f64::min);
    let hi = same.iter().map(|n| n.capacity).fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let mut rows: Vec<HistogramRow> = (0..bins)
        .map(|b| HistogramRow {
            bin_lo: lo + b as f64 * width,
            bin_hi: lo + (b + 1) as f64 * width,
            agg_gnn: 0,
            wmmse: 0,
            equal: 0,
            random: 0,
        })
        .collect();
    for n in same {
        let b = (((n.capacity - lo) / width) as usize).min(bins - 1);
        let row = &mut rows[b];
        match n.method.as_str() {
            "agg_gnn" => row.agg_gnn += 1,
            "wmmse" => row.wmmse += 1,
            "equal" => row.equal += 1,
            "random" => row.random += 1,
            _ => {}
        }
    }
    rows
}

/// Read the training and transfer outputs in `run_dir` and write the three
/// panel files into `run_dir/plots`. All inputs are checked before anything
/// is written.
pub fn emit_plot_data(run_dir: &Path, training_size: usize, bins: usize) -> Result<Vec<PathBuf>> {
    let inputs = [TRAINING_CSV, TRANSFER_NETWORKS_CSV, TRANSFER_SUMMARY_CSV].map(|f| run_dir.join(f));
    let missing: Vec<String> = inputs
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::MissingArtifacts(format!(
            "run `train` and `transfer` first; not found: {}",
            missing.join(", ")
        )));
    }
    let trace: Vec<TraceRow> = read_rows(&inputs[0])?;
    let networks: Vec<NetworkResult> = read_rows(&inputs[1])?;
    let summary: Vec<SizeSummary> = read_rows(&inputs[2])?;
    if let Some(bad) = summary.iter().find(|s| !METHODS.contains(&s.method.as_str())) {
        return Err(CliError::artifact(
            &inputs[2],
            format!("unknown method `{}`", bad.method),
        ));
    }
    let hist = histogram(&networks, training_size, bins);
    if hist.is_empty() {
        return Err(CliError::MissingArtifacts(format!(
            "{} has no redraws of the training size {training_size}",
            inputs[1].display()
        )));
    }
    let curve: Vec<CurveRow> = trace
        .iter()
        .map(|r| CurveRow {
            iter: r.iteration,
            agg_gnn: r.capacity,
            wmmse: r.wmmse,
            equal: r.equal,
            random: r.random,
        })
        .collect();

    let out_dir = run_dir.join("plots");
    std::fs::create_dir_all(&out_dir).map_err(|source| CliError::Io {
        path: out_dir.clone(),
        source,
    })?;
    let paths = [CURVE_CSV, HISTOGRAM_CSV, CAPACITY_VS_SIZE_CSV].map(|f| out_dir.join(f));
    if curve.is_empty() {
        // header only: an untrained run has no curve points
        std::fs::write(&paths[0], "iter,agg_gnn,wmmse,equal,random\n").map_err(|source| CliError::Io {
            path: paths[0].clone(),
            source,
        })?;
    } else {
        write_rows(&paths[0], &curve)?;
    }
    write_rows(&paths[1], &hist)?;
    write_rows(&paths[2], &summary)?;
    Ok(paths.to_vec())
}
