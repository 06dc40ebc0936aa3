//! CSV results, trade-off series and the console summary.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::grid::{CellKey, ResultRow, ResultTable};
use crate::error::{Error, Result};

pub const CSV_HEADER: &[&str] = &[
    "method",
    "N",
    "B_s",
    "B_g",
    "tau",
    "gamma",
    "schedule",
    "cluster_k",
    "seed",
    "reward_mean",
    "reward_norm",
    "mmd2",
    "tilt_mean_error",
    "nfe_denoiser",
    "nfe_reward",
    "nfe_grad",
    "wall_ms",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_record(row: &ResultRow) -> Vec<String> {
    let k = &row.key;
    vec![
        k.method.clone(),
        k.n.to_string(),
        k.block_sample.to_string(),
        k.block_grad.to_string(),
        k.tau.to_string(),
        k.gamma.to_string(),
        k.schedule_label(),
        opt(k.cluster_k),
        row.seed.to_string(),
        row.reward_mean.to_string(),
        row.reward_norm.to_string(),
        row.mmd2.to_string(),
        opt(row.tilt_mean_error),
        row.nfe_denoiser.to_string(),
        row.nfe_reward.to_string(),
        row.nfe_grad.to_string(),
        opt(row.wall_ms),
    ]
}

/// Renders the table as CSV text (header plus one line per row).
pub fn to_csv_string(table: &ResultTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::invalid(e.to_string());
    w.write_record(CSV_HEADER).map_err(to_err)?;
    for row in &table.rows {
        w.write_record(csv_record(row)).map_err(to_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes the results CSV. An empty table is an error and creates no file.
pub fn write_csv(table: &ResultTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if table.is_empty() {
        return Err(Error::invalid("refusing to write an empty result table"));
    }
    let text = to_csv_string(table)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// One plotted line: `(x, y)` points sorted by `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn is_non_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 >= w[0].1)
    }
}

const GROUP_FIELDS: &[&str] = &[
    "N",
    "B_s",
    "B_g",
    "tau",
    "gamma",
    "schedule",
    "cluster_k",
    "selection",
    "grad_mode",
    "zoo_probes",
    "steps",
];

fn group_label(key: &CellKey, field: &str) -> Result<String> {
    Ok(match field {
        "N" => format!("N{}", key.n),
        "B_s" => format!("Bs{}", key.block_sample),
        "B_g" => format!("Bg{}", key.block_grad),
        "tau" => format!("tau{}", key.tau),
        "gamma" => format!("gamma{}", key.gamma),
        "schedule" => format!("sched{}", key.schedule_label()),
        "cluster_k" => format!("k{}", key.cluster_k.unwrap_or(0)),
        "selection" => key.selection.clone(),
        "grad_mode" => key.grad_mode.clone(),
        "zoo_probes" => format!("probes{}", key.zoo_probes),
        "steps" => format!("T{}", key.steps),
        other => return Err(Error::config(other, "unknown series grouping field")),
    })
}

/// Per-method series of cell means, with extra grouping columns.
///
/// Rows of one cell (all seeds and replicates) collapse to the mean of `x`
/// and the mean of `y`; rows missing either value are skipped.
pub fn tradeoff_series(table: &ResultTable, x_field: &str, y_field: &str, group_by: &[&str]) -> Result<Vec<Series>> {
    for f in [x_field, y_field] {
        if !ResultRow::FIELDS.contains(&f) {
            return Err(Error::config(f, "unknown table field"));
        }
    }
    for g in group_by {
        if !GROUP_FIELDS.contains(g) {
            return Err(Error::config(*g, "unknown series grouping field"));
        }
    }

    // cell -> (sum x, sum y, count), keeping table order
    let mut cells: Vec<(CellKey, f64, f64, usize)> = Vec::new();
    for row in &table.rows {
        let (Some(Some(x)), Some(Some(y))) = (row.field(x_field), row.field(y_field)) else {
            continue;
        };
        match cells.iter_mut().find(|c| c.0 == row.key) {
            Some(c) => {
                c.1 += x;
                c.2 += y;
                c.3 += 1;
            }
            None => cells.push((row.key.clone(), x, y, 1)),
        }
    }
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (key, sx, sy, n) in cells {
        let mut name = key.method.clone();
        for g in group_by {
            name.push('_');
            name.push_str(&group_label(&key, g)?);
        }
        series.entry(name).or_default().push((sx / n as f64, sy / n as f64));
    }
    Ok(series
        .into_iter()
        .map(|(name, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            Series { name, points }
        })
        .collect())
}

/// Writes one two-column text file per series into directory `dir`.
pub fn write_series(series: &[Series], x_field: &str, y_field: &str, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for s in series {
        let mut text = format!("# {x_field} {y_field}\n");
        for (x, y) in &s.points {
            writeln!(text, "{x} {y}").expect("string write");
        }
        let path = dir.join(format!("{}.dat", s.name));
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Per-method `(x, y)` series written under `dir`.
pub fn emit_tradeoff_data(
    table: &ResultTable,
    x_field: &str,
    y_field: &str,
    dir: impl AsRef<Path>,
) -> Result<Vec<Series>> {
    emit_tradeoff_series(table, x_field, y_field, &[], dir)
}

pub fn emit_tradeoff_series(
    table: &ResultTable,
    x_field: &str,
    y_field: &str,
    group_by: &[&str],
    dir: impl AsRef<Path>,
) -> Result<Vec<Series>> {
    let series = tradeoff_series(table, x_field, y_field, group_by)?;
    write_series(&series, x_field, y_field, dir)?;
    Ok(series)
}

/// Plain-text table of per-cell means across seeds.
pub fn summary(table: &ResultTable) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "{:<10} {:>4} {:>4} {:>4} {:>6} {:>6} {:>5} {:>12} {:>11} {:>10} {:>9} {:>9} {:>9}",
        "method",
        "N",
        "B_s",
        "B_g",
        "tau",
        "gamma",
        "k",
        "reward",
        "reward_norm",
        "mmd2",
        "nfe_den",
        "nfe_rew",
        "nfe_grad"
    )
    .unwrap();
    let mut i = 0;
    let rows = &table.rows;
    while i < rows.len() {
        let mut j = i;
        while j < rows.len() && rows[j].key == rows[i].key {
            j += 1;
        }
        let group = &rows[i..j];
        let n = group.len() as f64;
        let avg = |f: &dyn Fn(&ResultRow) -> f64| group.iter().map(f).sum::<f64>() / n;
        let norm = if group.iter().all(|r| r.reward_norm.ratio().is_some()) {
            format!("{:.4}", avg(&|r| r.reward_norm.ratio().unwrap()))
        } else {
            "n/a".into()
        };
        let k = &rows[i].key;
        writeln!(
            out,
            "{:<10} {:>4} {:>4} {:>4} {:>6} {:>6} {:>5} {:>12.5} {:>11} {:>10.5} {:>9} {:>9} {:>9}",
            k.method,
            k.n,
            k.block_sample,
            k.block_grad,
            k.tau,
            k.gamma,
            opt(k.cluster_k),
            avg(&|r| r.reward_mean),
            norm,
            avg(&|r| r.mmd2),
            avg(&|r| r.nfe_denoiser),
            avg(&|r| r.nfe_reward),
            avg(&|r| r.nfe_grad),
        )
        .unwrap();
        i = j;
    }
    for f in &table.failures {
        writeln!(
            out,
            "FAILED {} N={} seed={}: {}",
            f.key.method, f.key.n, f.seed, f.message
        )
        .unwrap();
    }
    out
}

/// Table column for a sweep axis, where the axis is numeric.
fn axis_column(sweep_field: &str) -> Option<&'static str> {
    Some(match sweep_field {
        "n_particles" => "N",
        "block_sample" => "B_s",
        "block_grad" => "B_g",
        "temperature" => "tau",
        "guidance_scale" => "gamma",
        "cluster_k" => "cluster_k",
        "grad_repeats" => "grad_repeats",
        "zoo_probes" => "zoo_probes",
        "steps" => "steps",
        _ => return None,
    })
}

/// The series the CLI writes for a finished grid, under `dir`:
///
/// * `reward_mean_vs_mmd2/` — the reward/divergence frontier, one series per method;
/// * `reward_mean_vs_nfe_denoiser/` — reward against compute;
/// * for each numeric sweep axis `X`, `reward_mean_vs_X/` and `mmd2_vs_X/`, one
///   series per method and combination of the other numeric axes.
pub fn emit_standard_series(
    table: &ResultTable,
    sweep_fields: &[&str],
    timing: bool,
    dir: impl AsRef<Path>,
) -> Result<()> {
    let dir = dir.as_ref();
    let mut pairs = vec![("mmd2", "reward_mean"), ("nfe_denoiser", "reward_mean")];
    if timing {
        pairs.push(("wall_ms", "reward_mean"));
    }
    for (x, y) in pairs {
        emit_tradeoff_data(table, x, y, dir.join(format!("{y}_vs_{x}")))?;
    }
    let axes: Vec<&str> = sweep_fields.iter().filter_map(|f| axis_column(f)).collect();
    for &x in &axes {
        let others: Vec<&str> = axes
            .iter()
            .copied()
            .filter(|a| *a != x && GROUP_FIELDS.contains(a))
            .collect();
        for y in ["reward_mean", "mmd2"] {
            emit_tradeoff_series(table, x, y, &others, dir.join(format!("{y}_vs_{x}")))?;
        }
    }
    Ok(())
}
