//! CSV artifacts.
//!
//! Every file starts with `# key = value` comment lines (tool version, spec
//! hash, grid and solve parameters) followed by a header row and records.
//! Floats are written in Rust's shortest round-trip form, so a value CSV
//! read back reproduces the fields bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::audit::AuditReport;
use crate::fseries::FSeries;
use crate::grid::Grid;
use crate::model::RegimeId;
use crate::montecarlo::GainEstimate;
use crate::region::{Label, Region};
use crate::solver::ValueFields;
use crate::strategy::StrategyTrace;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("malformed artifact: {0}")]
    Format(String),
}

fn bad(msg: impl Into<String>) -> IoError {
    IoError::Format(msg.into())
}

/// Ordered `# key = value` header entries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Meta(pub Vec<(String, String)>);

impl Meta {
    pub fn new(spec_hash: &str) -> Self {
        Meta(vec![("tool_version".into(), TOOL_VERSION.into()), ("spec_hash".into(), spec_hash.into())])
    }

    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.set(key, value);
        self
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.0.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.0.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, IoError> {
        let raw = self.get(key).ok_or_else(|| bad(format!("missing header key {key}")))?;
        raw.parse().map_err(|_| bad(format!("header key {key}: cannot parse {raw:?}")))
    }

    /// Grid and solve parameters of `fields`.
    pub fn with_fields(self, fields: &ValueFields) -> Self {
        self.with_grid(&fields.grid)
            .with("tol", fields.tol)
            .with("iterations", fields.iterations)
            .with("residual", fields.residual)
            .with("min_sweep_delta", fields.min_sweep_delta)
    }

    pub fn with_grid(self, grid: &Grid) -> Self {
        self.with("x_lo", grid.x_lo).with("x_hi", grid.x_hi).with("n_points", grid.n_points).with("dt", grid.dt)
    }

    pub fn grid(&self) -> Result<Grid, IoError> {
        Grid::new(self.parse("x_lo")?, self.parse("x_hi")?, self.parse("n_points")?, self.parse("dt")?)
            .map_err(|e| bad(e.to_string()))
    }
}

fn create(path: &Path, meta: &Meta) -> Result<csv::Writer<BufWriter<File>>, IoError> {
    let mut out = BufWriter::new(File::create(path)?);
    for (k, v) in &meta.0 {
        writeln!(out, "# {k} = {v}")?;
    }
    Ok(csv::Writer::from_writer(out))
}

fn finish(w: csv::Writer<BufWriter<File>>) -> Result<(), IoError> {
    let mut inner = w.into_inner().map_err(|e| IoError::Io(e.into_error()))?;
    inner.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<(Meta, csv::Reader<BufReader<File>>), IoError> {
    let mut meta = Meta::default();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        let Some(rest) = line.strip_prefix('#') else { break };
        if let Some((k, v)) = rest.split_once('=') {
            meta.0.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(BufReader::new(File::open(path)?));
    Ok((meta, reader))
}

fn f(v: f64) -> String {
    v.to_string()
}

fn num(field: Option<&str>, what: &str) -> Result<f64, IoError> {
    field.ok_or_else(|| bad(format!("missing column {what}")))?.parse().map_err(|_| bad(format!("bad {what}")))
}

fn idx(field: Option<&str>, what: &str) -> Result<usize, IoError> {
    field.ok_or_else(|| bad(format!("missing column {what}")))?.parse().map_err(|_| bad(format!("bad {what}")))
}

pub const VALUE_COLUMNS: [&str; 7] = ["regime", "x", "rho_plus", "m_star", "rho", "argmax_m", "argmax_j"];

pub fn write_values(path: &Path, fields: &ValueFields, meta: &Meta) -> Result<(), IoError> {
    let mut w = create(path, meta)?;
    w.write_record(VALUE_COLUMNS)?;
    for i in 0..fields.n_regimes() {
        for g in 0..fields.grid.n_points {
            w.write_record([
                i.to_string(),
                f(fields.grid.x(g)),
                f(fields.rho_plus[i][g]),
                f(fields.m_star[i][g]),
                f(fields.rho[i][g]),
                f(fields.argmax_m[i][g]),
                fields.argmax_j[i][g].0.to_string(),
            ])?;
        }
    }
    finish(w)
}

pub fn read_values(path: &Path) -> Result<(ValueFields, Meta), IoError> {
    let (meta, mut r) = open(path)?;
    let grid = meta.grid()?;
    let n = grid.n_points;
    let mut rows: Vec<[f64; 4]> = Vec::new();
    let mut regimes: Vec<usize> = Vec::new();
    let mut targets: Vec<usize> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        regimes.push(idx(rec.get(0), "regime")?);
        rows.push([
            num(rec.get(2), "rho_plus")?,
            num(rec.get(3), "m_star")?,
            num(rec.get(4), "rho")?,
            num(rec.get(5), "argmax_m")?,
        ]);
        targets.push(idx(rec.get(6), "argmax_j")?);
    }
    if rows.is_empty() || !rows.len().is_multiple_of(n) {
        return Err(bad(format!("{} value rows do not fill a {n}-point grid", rows.len())));
    }
    let n_regimes = rows.len() / n;
    for (r, &i) in regimes.iter().enumerate() {
        if i != r / n {
            return Err(bad(format!("row {r}: regime {i} out of order")));
        }
    }
    let column = |c: usize| -> Vec<Vec<f64>> {
        (0..n_regimes).map(|i| rows[i * n..(i + 1) * n].iter().map(|r| r[c]).collect()).collect()
    };
    let fields = ValueFields {
        grid,
        rho_plus: column(0),
        m_star: column(1),
        rho: column(2),
        argmax_m: column(3),
        argmax_j: (0..n_regimes).map(|i| targets[i * n..(i + 1) * n].iter().map(|&j| RegimeId(j)).collect()).collect(),
        iterations: meta.parse("iterations")?,
        residual: meta.parse("residual")?,
        tol: meta.parse("tol")?,
        min_sweep_delta: meta.parse("min_sweep_delta").unwrap_or(0.0),
    };
    Ok((fields, meta))
}

pub fn write_regions(path: &Path, region: &Region, meta: &Meta) -> Result<(), IoError> {
    let meta = meta.clone().with_grid(region.grid()).with("epsilon", region.epsilon());
    let mut w = create(path, &meta)?;
    w.write_record(["regime", "interval_lo", "interval_hi", "label"])?;
    for i in 0..region.n_regimes() {
        let mut runs: Vec<((usize, usize), Label)> = [Label::I, Label::C]
            .iter()
            .flat_map(|&l| region.runs(RegimeId(i), l).into_iter().map(move |r| (r, l)))
            .collect();
        runs.sort_by_key(|&((a, _), _)| a);
        for ((a, b), l) in runs {
            w.write_record([i.to_string(), f(region.grid().x(a)), f(region.grid().x(b)), l.as_str().to_string()])?;
        }
    }
    finish(w)
}

pub fn read_regions(path: &Path) -> Result<Region, IoError> {
    let (meta, mut r) = open(path)?;
    let grid = meta.grid()?;
    let epsilon: f64 = meta.parse("epsilon")?;
    let mut runs: Vec<Vec<(usize, usize)>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let i = idx(rec.get(0), "regime")?;
        if runs.len() <= i {
            runs.resize(i + 1, Vec::new());
        }
        if rec.get(3) == Some("I") {
            let a = grid.nearest(num(rec.get(1), "interval_lo")?);
            let b = grid.nearest(num(rec.get(2), "interval_hi")?);
            runs[i].push((a, b));
        }
    }
    Ok(Region::from_intervals(grid, epsilon, &runs))
}

pub fn write_traces(path: &Path, traces: &[StrategyTrace], meta: &Meta) -> Result<(), IoError> {
    let mut w = create(path, meta)?;
    w.write_record(["episode_id", "n", "tau_n", "from_regime", "from_x", "to_regime", "to_x", "discounted_cost"])?;
    for (e, t) in traces.iter().enumerate() {
        for (n, r) in t.impulses.iter().enumerate() {
            w.write_record([
                e.to_string(),
                (n + 1).to_string(),
                f(r.tau),
                r.from.0 .0.to_string(),
                f(r.from.1),
                r.to.0 .0.to_string(),
                f(r.to.1),
                f(r.discounted_cost),
            ])?;
        }
    }
    finish(w)
}

pub fn write_episodes(path: &Path, traces: &[StrategyTrace], meta: &Meta) -> Result<(), IoError> {
    let mut w = create(path, meta)?;
    w.write_record(["episode_id", "gain", "total_profit", "total_cost", "n_impulses", "stopped_reason"])?;
    for (e, t) in traces.iter().enumerate() {
        w.write_record([
            e.to_string(),
            f(t.gain),
            f(t.total_profit),
            f(t.total_cost),
            t.impulses.len().to_string(),
            t.stopped_reason.as_str().to_string(),
        ])?;
    }
    finish(w)
}

pub fn write_gains(path: &Path, rows: &[(String, GainEstimate)], meta: &Meta) -> Result<(), IoError> {
    let mut w = create(path, meta)?;
    w.write_record([
        "strategy",
        "mean",
        "stderr",
        "n_paths",
        "horizon",
        "dt",
        "tail_bound",
        "impulse_count_histogram",
    ])?;
    for (label, g) in rows {
        let hist: Vec<String> = g.impulse_count_histogram.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        w.write_record([
            label.clone(),
            f(g.mean),
            f(g.stderr),
            g.n_paths.to_string(),
            f(g.horizon),
            f(g.dt),
            f(g.tail_bound),
            hist.join(";"),
        ])?;
    }
    finish(w)
}

pub fn write_paths(path: &Path, traces: &[StrategyTrace], meta: &Meta) -> Result<(), IoError> {
    let mut w = create(path, meta)?;
    w.write_record(["path_id", "t", "regime", "y", "discounted_profit_so_far"])?;
    for (e, t) in traces.iter().enumerate() {
        for p in t.path.iter().flatten() {
            w.write_record([e.to_string(), f(p.t), p.regime.0.to_string(), f(p.y), f(p.profit_so_far)])?;
        }
    }
    finish(w)
}

pub fn write_audit(path: &Path, report: &AuditReport, meta: &Meta) -> Result<(), IoError> {
    let meta = meta
        .clone()
        .with("tol_c", report.tol_c)
        .with("max_kernel_violation", report.max_kernel_violation)
        .with("max_r_star_gap", report.max_r_star_gap)
        .with("max_stopping_violation", report.max_stopping_violation)
        .with("max_t_star_gap", report.max_t_star_gap);
    let mut w = create(path, &meta)?;
    w.write_record(["regime", "x", "rho_plus", "rho", "kernel_excess", "r_star_gap", "rule", "mean", "stderr"])?;
    for s in &report.states {
        for r in &s.rules {
            w.write_record([
                s.regime.0.to_string(),
                f(s.x),
                f(s.rho_plus),
                f(s.rho),
                f(s.kernel_excess),
                f(s.r_star_gap),
                r.rule.label(),
                f(r.mean),
                f(r.stderr),
            ])?;
        }
    }
    finish(w)
}

pub fn write_fseries(path: &Path, fs: &FSeries, meta: &Meta) -> Result<(), IoError> {
    let meta = meta
        .clone()
        .with("t0", fs.t0)
        .with("m", fs.m)
        .with("q", fs.q)
        .with("partial_sum", fs.partial_sum)
        .with("tail_bound", fs.tail_bound);
    let mut w = create(path, &meta)?;
    w.write_record(["l", "f1", "f3"])?;
    for (l, v) in fs.f1.iter().enumerate() {
        let f3 = if l == 0 { String::new() } else { f(fs.f3[l - 1]) };
        w.write_record([l.to_string(), f(*v), f3])?;
    }
    finish(w)
}

/// Wide plotting table: one row per grid point, per-regime columns.
pub fn write_plot(path: &Path, fields: &ValueFields, region: &Region, meta: &Meta) -> Result<(), IoError> {
    let meta = meta.clone().with_grid(&fields.grid).with("epsilon", region.epsilon());
    let mut w = create(path, &meta)?;
    let n = fields.n_regimes();
    let mut header = vec!["x".to_string()];
    for i in 0..n {
        for c in ["rho_plus", "m_star", "rho", "argmax_m", "label"] {
            header.push(format!("{c}_{i}"));
        }
    }
    w.write_record(&header)?;
    for g in 0..fields.grid.n_points {
        let mut row = vec![f(fields.grid.x(g))];
        for i in 0..n {
            row.push(f(fields.rho_plus[i][g]));
            row.push(f(fields.m_star[i][g]));
            row.push(f(fields.rho[i][g]));
            row.push(f(fields.argmax_m[i][g]));
            row.push(region.label(RegimeId(i), g).as_str().to_string());
        }
        w.write_record(&row)?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::region::extract_regions;

    fn toy_fields() -> ValueFields {
        let grid = Grid::new(-1.0, 1.0, 5, 0.1).unwrap();
        ValueFields {
            grid,
            rho_plus: vec![vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![0.1, 0.2, 1.0 / 3.0, 0.4, 0.5]],
            m_star: vec![vec![1.0, 1.5, 3.0, 0.0, 5.0], vec![f64::NEG_INFINITY; 5]],
            rho: vec![vec![1.0, 2.0, 3.0, 4.0, 5.0], vec![0.1, 0.2, 1.0 / 3.0, 0.4, 0.5]],
            argmax_m: vec![vec![0.25; 5], vec![f64::NAN; 5]],
            argmax_j: vec![vec![RegimeId(1); 5], vec![RegimeId(0); 5]],
            iterations: 17,
            residual: 3.5e-8,
            tol: 1e-7,
            min_sweep_delta: 0.0,
        }
    }

    #[test]
    fn values_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("values.csv");
        let fields = toy_fields();
        write_values(&p, &fields, &Meta::new("abc").with_fields(&fields)).unwrap();
        let (back, meta) = read_values(&p).unwrap();
        assert_eq!(meta.get("spec_hash"), Some("abc"));
        assert_eq!(back.rho_plus, fields.rho_plus);
        assert_eq!(back.m_star, fields.m_star);
        assert_eq!(back.argmax_j, fields.argmax_j);
        assert!(back.argmax_m[1].iter().all(|v| v.is_nan()));
        assert_eq!(back.iterations, 17);
        assert_eq!(back.residual, 3.5e-8);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# tool_version = "));
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 10);
    }

    #[test]
    fn regions_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("regions.csv");
        let region = extract_regions(&toy_fields(), 1e-9);
        write_regions(&p, &region, &Meta::new("abc")).unwrap();
        assert_eq!(read_regions(&p).unwrap(), region);
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("0,-1,-1,I\n0,-0.5,-0.5,C\n"));
    }

    #[test]
    fn truncated_value_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("values.csv");
        let fields = toy_fields();
        write_values(&p, &fields, &Meta::new("abc").with_fields(&fields)).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let cut: Vec<&str> = text.lines().take(text.lines().count() - 1).collect();
        std::fs::write(&p, cut.join("\n")).unwrap();
        assert!(matches!(read_values(&p), Err(IoError::Format(_))));
    }
}
