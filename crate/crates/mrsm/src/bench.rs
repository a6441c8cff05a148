//! Wall-clock timing and the CSV files behind each figure.
//!
//! | file                  | columns                                                                       |
//! |-----------------------|-------------------------------------------------------------------------------|
//! | `fig3_equilibrium.csv`| sigma, precision, rank_privacy, f, discriminator_accuracy, optimum            |
//! | `fig4_tree_speed.csv` | panel, variant, queries, mean_nodes, var_nodes, mean_seconds, var_seconds     |
//! | `fig5_scaling.csv`    | docs, single_nodes, forest_nodes, single_seconds, forest_seconds              |
//! | `update_cost.csv`     | insert, forest_touched, single_touched, trees_touched                         |
//!
//! Precision and rank privacy are percentages in the equilibrium file.

use std::path::Path;
use std::time::Instant;

use mrsm_core::corpus::Document;
use mrsm_core::engine::{sample_requests, IndexBuild, SearchRequest, Selection};
use mrsm_core::eval::{Clock, ScalingRow, UpdateBench, VariantReport};
use mrsm_core::forest::Quota;
use mrsm_core::padding::EquilibriumReport;
use mrsm_core::synth::zipf_queries;
use serde::Serialize;

use crate::formats::write_csv;
use crate::Result;

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    type Instant = Instant;

    fn now(&self) -> Instant {
        Instant::now()
    }

    fn seconds_since(&self, start: &Instant) -> f64 {
        start.elapsed().as_secs_f64()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreeSpeedRow {
    pub panel: String,
    pub variant: String,
    pub queries: usize,
    pub mean_nodes: f64,
    pub var_nodes: f64,
    pub mean_seconds: f64,
    pub var_seconds: f64,
}

impl TreeSpeedRow {
    pub fn new(panel: &str, report: &VariantReport) -> Self {
        let (nodes, time) = (report.nodes(), report.time());
        Self {
            panel: panel.to_string(),
            variant: report.name.clone(),
            queries: nodes.count,
            mean_nodes: nodes.mean,
            var_nodes: nodes.variance,
            mean_seconds: time.mean,
            var_seconds: time.variance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquilibriumCsvRow {
    pub sigma: f64,
    pub precision: f64,
    pub rank_privacy: f64,
    pub f: f64,
    pub discriminator_accuracy: f64,
    pub optimum: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateRow {
    pub insert: usize,
    pub forest_touched: usize,
    pub single_touched: usize,
    pub trees_touched: usize,
}

pub fn write_equilibrium(path: &Path, report: &EquilibriumReport) -> Result<()> {
    let rows: Vec<EquilibriumCsvRow> = report
        .rows
        .iter()
        .enumerate()
        .map(|(i, r)| EquilibriumCsvRow {
            sigma: r.sigma,
            precision: r.precision,
            rank_privacy: r.rank_privacy,
            f: r.f,
            discriminator_accuracy: r.discriminator_accuracy,
            optimum: i == report.best,
        })
        .collect();
    write_csv(path, &rows)
}

pub fn write_tree_speed(path: &Path, rows: &[TreeSpeedRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_scaling(path: &Path, rows: &[ScalingRow]) -> Result<()> {
    write_csv(path, rows)
}

pub fn write_updates(path: &Path, bench: &UpdateBench) -> Result<()> {
    let rows: Vec<UpdateRow> = (0..bench.forest_touched.len())
        .map(|i| UpdateRow {
            insert: i,
            forest_touched: bench.forest_touched[i],
            single_touched: bench.single_touched[i],
            trees_touched: bench.trees_touched[i],
        })
        .collect();
    write_csv(path, &rows)
}

/// Zipf keyword workload for the noise sweep: `count` requests of `terms`
/// keywords, each with at least `k` matching documents, searching the
/// `t` covering partitions with a `ceil(k/t)` quota per tree.
pub fn equilibrium_requests(
    index: &IndexBuild,
    docs: &[Document],
    k: usize,
    t: usize,
    count: usize,
    terms: usize,
    seed: u64,
) -> Result<Vec<SearchRequest>> {
    let pool = zipf_queries(docs, count * 10, terms, 1.0, seed)?;
    Ok(sample_requests(index, &pool, k, Selection::Covering(t), Quota::PerTree, count)?)
}
