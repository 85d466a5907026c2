//! Aggregated tables and plot-ready explanation-F1 curves from result rows.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::cache::write_atomic;
use crate::error::Result;
use crate::evalkit::ResultRow;

/// `f64` ordered by `total_cmp`, for grouping keys.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Key(pub f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug, Default, Clone, Copy)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn add(&mut self, v: f64) {
        self.sum += v;
        self.n += 1;
    }

    fn get(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }
}

/// One `(lambda, eps_d)` line of a results table, averaged over runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableRow {
    pub lambda: f64,
    pub eps_d: f64,
    pub clean_ndcg: f64,
    pub clean_f1: f64,
    pub attacked_eps_a: f64,
    pub attacked_ndcg: f64,
    pub attacked_f1: f64,
    pub runs: usize,
}

/// Per `(algo, dataset)`: one row per `(lambda, eps_d)`, with clean metrics and
/// metrics under the largest attack budget present.
pub fn summary_tables(rows: &[ResultRow]) -> BTreeMap<(String, String), Vec<TableRow>> {
    type Cell = (Mean, Mean, BTreeMap<Key, (Mean, Mean)>, usize);
    let mut groups: BTreeMap<(String, String), BTreeMap<(Key, Key), Cell>> = BTreeMap::new();
    for r in rows {
        let cell = groups
            .entry((r.algo.clone(), r.dataset.clone()))
            .or_default()
            .entry((Key(r.lambda), Key(r.eps_d)))
            .or_default();
        if r.condition == "clean" {
            cell.0.add(r.ndcg);
            cell.1.add(r.expl_f1);
            cell.3 += 1;
        } else {
            let a = cell.2.entry(Key(r.eps_a)).or_default();
            a.0.add(r.ndcg);
            a.1.add(r.expl_f1);
        }
    }
    groups
        .into_iter()
        .map(|(k, cells)| {
            let table = cells
                .into_iter()
                .map(|((lambda, eps_d), (cn, cf, attacked, runs))| {
                    let (eps_a, (an, af)) = attacked
                        .iter()
                        .next_back()
                        .map(|(e, m)| (e.0, *m))
                        .unwrap_or((f64::NAN, (Mean::default(), Mean::default())));
                    TableRow {
                        lambda: lambda.0,
                        eps_d: eps_d.0,
                        clean_ndcg: cn.get(),
                        clean_f1: cf.get(),
                        attacked_eps_a: eps_a,
                        attacked_ndcg: an.get(),
                        attacked_f1: af.get(),
                        runs,
                    }
                })
                .collect();
            (k, table)
        })
        .collect()
}

/// Fixed-width text rendering of one summary table.
pub fn render_table(algo: &str, dataset: &str, table: &[TableRow]) -> String {
    let mut s = String::new();
    let eps_a = table.iter().map(|r| r.attacked_eps_a).find(|e| !e.is_nan());
    let attacked = match eps_a {
        Some(e) => format!("Attack eps_a={e}"),
        None => "Attack".to_string(),
    };
    let _ = writeln!(s, "{algo} / {dataset}");
    let _ = writeln!(s, "{:>8} {:>6} | {:^21} | {:^21}", "", "", "Clean", attacked);
    let _ = writeln!(
        s,
        "{:>8} {:>6} | {:>10} {:>10} | {:>10} {:>10}",
        "lambda", "eps_d", "NDCG", "Expl F1", "NDCG", "Expl F1"
    );
    for r in table {
        let label = if r.lambda == 0.0 {
            "vanilla".to_string()
        } else {
            format!("{}", r.lambda)
        };
        let _ = writeln!(
            s,
            "{:>8} {:>6} | {:>10.5} {:>10.5} | {:>10.5} {:>10.5}",
            label, r.eps_d, r.clean_ndcg, r.clean_f1, r.attacked_ndcg, r.attacked_f1
        );
    }
    s
}

/// `(lambda, eps_a) -> mean expl_f1` per `(algo, dataset, eps_d)`.
///
/// Vanilla rows (`lambda = 0`) join every `eps_d` curve of their algorithm and
/// dataset, so each curve can be read against the undefended baseline.
pub fn f1_curves(rows: &[ResultRow]) -> BTreeMap<(String, String, String), BTreeMap<(Key, Key), f64>> {
    let mut eps_d_by_group: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.lambda != 0.0) {
        let list = eps_d_by_group.entry((r.algo.clone(), r.dataset.clone())).or_default();
        let label = format!("{}", r.eps_d);
        if !list.contains(&label) {
            list.push(label);
        }
    }
    let mut acc: BTreeMap<(String, String, String), BTreeMap<(Key, Key), Mean>> = BTreeMap::new();
    for r in rows {
        let group = (r.algo.clone(), r.dataset.clone());
        let targets = match eps_d_by_group.get(&group) {
            Some(list) if r.lambda == 0.0 => list.clone(),
            _ => vec![format!("{}", r.eps_d)],
        };
        for eps_d in targets {
            acc.entry((group.0.clone(), group.1.clone(), eps_d))
                .or_default()
                .entry((Key(r.lambda), Key(r.eps_a)))
                .or_default()
                .add(r.expl_f1);
        }
    }
    acc.into_iter()
        .map(|(k, m)| (k, m.into_iter().map(|((l, e), v)| ((l, e), v.get())).collect()))
        .collect()
}

/// Writes `table_<algo>_<dataset>.{csv,txt}` and
/// `curve_<algo>_<dataset>_<eps_d>.csv` with columns `lambda,eps_a,expl_f1`.
pub fn write_report(rows: &[ResultRow], out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    let mut written = Vec::new();
    for ((algo, dataset), table) in summary_tables(rows) {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &table {
            w.serialize(r)?;
        }
        let path = out_dir.join(format!("table_{algo}_{dataset}.csv"));
        write_atomic(&path, &w.into_inner().map_err(|e| std::io::Error::other(e.to_string()))?)?;
        written.push(path);
        let path = out_dir.join(format!("table_{algo}_{dataset}.txt"));
        write_atomic(&path, render_table(&algo, &dataset, &table).as_bytes())?;
        written.push(path);
    }
    for ((algo, dataset, eps_d), points) in f1_curves(rows) {
        let mut text = String::from("lambda,eps_a,expl_f1\n");
        for ((l, e), f1) in &points {
            let _ = writeln!(text, "{},{},{}", l.0, e.0, f1);
        }
        let path = out_dir.join(format!("curve_{algo}_{dataset}_{eps_d}.csv"));
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}
