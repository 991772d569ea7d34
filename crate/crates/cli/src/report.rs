//! Result records and the markdown result tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cylflow::geometry::DatasetId;
use cylflow::metrics::{aggregate_seeds, EvalResult};
use serde::{Deserialize, Serialize};

/// One evaluation of one model (or an untrained one) on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    /// `None` for a freshly initialized, untrained model.
    pub train_dataset: Option<DatasetId>,
    pub eval_dataset: DatasetId,
    pub seed: u64,
    pub result: EvalResult,
    /// Eval-split position of the simulation whose all-steps velocity error
    /// is closest to the median.
    pub median_simulation: usize,
    /// Truth and predicted rollout of that simulation, if written.
    pub truth_file: Option<PathBuf>,
    pub rollout_file: Option<PathBuf>,
}

impl ResultRecord {
    pub fn row_label(&self) -> String {
        match self.train_dataset {
            Some(d) => d.name().to_string(),
            None => "*None*".to_string(),
        }
    }

    pub fn file_stem(&self) -> String {
        let train = self.train_dataset.map_or("none", |d| d.name());
        format!("{train}__{}__seed{}", self.eval_dataset.name(), self.seed)
    }
}

/// Every parseable `*.json` record in `dir`, sorted by file name.
pub fn load_records(dir: &Path) -> Result<Vec<ResultRecord>, String> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
        if let Ok(r) = serde_json::from_str::<ResultRecord>(&text) {
            out.push(r);
        }
    }
    Ok(out)
}

const COLUMNS: [&str; 4] = ["1-step", "50-steps", "all-steps", "all-steps median"];

/// `mean ± dev` over seeds of the eight errors of one table row.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub velocity: [(f64, f64); 4],
    pub pressure: [(f64, f64); 4],
    pub seeds: usize,
}

fn aggregate(records: &[&ResultRecord]) -> Cell {
    let column = |f: &dyn Fn(&EvalResult) -> [f64; 4], k: usize| {
        let values: Vec<f64> = records.iter().map(|r| f(&r.result)[k]).collect();
        aggregate_seeds(&values).expect("non-empty group")
    };
    let v = |r: &EvalResult| r.velocity.as_array();
    let p = |r: &EvalResult| r.pressure.as_array();
    Cell {
        velocity: std::array::from_fn(|k| column(&v, k)),
        pressure: std::array::from_fn(|k| column(&p, k)),
        seeds: records.len(),
    }
}

/// Row key: trained datasets in canonical order, untrained last.
fn row_order(train: Option<DatasetId>) -> usize {
    train.map_or(DatasetId::ALL.len(), |d| DatasetId::ALL.iter().position(|x| *x == d).unwrap())
}

/// Rows of every evaluation table, keyed by eval dataset.
pub fn tables(records: &[ResultRecord]) -> BTreeMap<usize, (DatasetId, Vec<(String, Cell)>)> {
    let mut groups: BTreeMap<(usize, usize), Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((row_order(Some(r.eval_dataset)), row_order(r.train_dataset)))
            .or_default()
            .push(r);
    }
    let mut out: BTreeMap<usize, (DatasetId, Vec<(String, Cell)>)> = BTreeMap::new();
    for ((e, _), rs) in groups {
        out.entry(e)
            .or_insert_with(|| (rs[0].eval_dataset, Vec::new()))
            .1
            .push((rs[0].row_label(), aggregate(&rs)));
    }
    out
}

/// `mean ± dev` with the magnitudes scaled by `scale` and two decimals.
pub fn format_cell(mean: f64, dev: f64, scale: f64) -> String {
    format!("{:.2} ± {:.2}", mean * scale, dev * scale)
}

fn block(out: &mut String, title: &str, rows: &[(String, Cell)], pick: fn(&Cell) -> &[(f64, f64); 4], scale: f64) {
    let _ = writeln!(out, "{title}\n");
    let _ = writeln!(out, "| Train dataset | {} |", COLUMNS.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(COLUMNS.len()));
    let best: Vec<f64> = (0..4)
        .map(|k| rows.iter().map(|(_, c)| pick(c)[k].0).fold(f64::INFINITY, f64::min))
        .collect();
    for (label, cell) in rows {
        let cells: Vec<String> = (0..4)
            .map(|k| {
                let (m, d) = pick(cell)[k];
                let text = format_cell(m, d, scale);
                if m == best[k] && rows.len() > 1 {
                    format!("**{text}**")
                } else {
                    text
                }
            })
            .collect();
        let _ = writeln!(out, "| {label} | {} |", cells.join(" | "));
    }
    out.push('\n');
}

/// Markdown tables, one pair (velocity, pressure) per evaluation dataset.
pub fn render_markdown(records: &[ResultRecord]) -> String {
    let mut out = String::from("# Evaluation results\n\n");
    let _ = writeln!(
        out,
        "Cells are mean ± maximum deviation from the mean over seeds; the lowest mean of each column is bold.\n"
    );
    for (_, (eval, rows)) in tables(records) {
        let _ = writeln!(out, "## Evaluated on {}\n", eval.name());
        let seeds: Vec<String> = rows.iter().map(|(l, c)| format!("{l}: {}", c.seeds)).collect();
        let _ = writeln!(out, "Seeds per row: {}\n", seeds.join(", "));
        block(&mut out, "Velocity RMSE ×10⁻³", &rows, |c| &c.velocity, 1e3);
        block(&mut out, "Pressure RMSE ×10⁻²", &rows, |c| &c.pressure, 1e2);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use cylflow::metrics::FieldErrors;

    fn record(train: Option<DatasetId>, eval: DatasetId, seed: u64, v: f64) -> ResultRecord {
        let e = FieldErrors {
            one_step: v,
            fifty: 2.0 * v,
            all: 3.0 * v,
            all_median: v,
        };
        ResultRecord {
            train_dataset: train,
            eval_dataset: eval,
            seed,
            result: EvalResult {
                velocity: e,
                pressure: e,
                per_simulation_velocity: vec![v],
                per_simulation_pressure: vec![v],
                simulations: 1,
                frames: 50,
                nodes: vec![3],
            },
            median_simulation: 0,
            truth_file: None,
            rollout_file: None,
        }
    }

    #[test]
    fn seeds_render_as_mean_and_deviation() {
        let d = DatasetId::StandardCylinder;
        let rs: Vec<ResultRecord> = [0.0, 3e-3, 12e-3]
            .iter()
            .enumerate()
            .map(|(s, v)| record(Some(d), d, s as u64, *v))
            .collect();
        let md = render_markdown(&rs);
        assert!(md.contains("| standard_cylinder | 5.00 ± 7.00 |"), "{md}");
    }

    #[test]
    fn full_matrix_shape_and_bold_minimum() {
        let mut rs = Vec::new();
        for (e, eval) in DatasetId::ALL.iter().enumerate() {
            for (t, train) in DatasetId::ALL.iter().map(Some).chain([None]).enumerate() {
                for seed in 0..3 {
                    rs.push(record(train.copied(), *eval, seed, 1e-3 * (1 + (t + e) % 6) as f64));
                }
            }
        }
        let tables = tables(&rs);
        assert_eq!(tables.len(), 5);
        assert!(tables.values().all(|(_, rows)| rows.len() == 6));
        assert!(tables.values().all(|(_, rows)| rows[5].0 == "*None*"));
        let md = render_markdown(&rs);
        // Per table: one bold cell per column and field.
        assert_eq!(md.matches("**").count(), 5 * 2 * 4 * 2);
    }

    #[test]
    fn single_cell_is_one_row() {
        let d = DatasetId::TwoCylinders;
        let md = render_markdown(&[record(Some(d), d, 0, 1e-3)]);
        assert_eq!(md.matches("| 2cylinders |").count(), 2);
        assert!(!md.contains("**"));
    }
}
