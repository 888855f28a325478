//! File formats: dataset CSV with JSON sidecar, field and result JSON, and the
//! plot-ready CSV tables. All writers replace their target atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::SimulationProtocol;
use crate::edmd::{PairOrigin, SnapshotDataset, SnapshotPair};
use crate::error::{Error, Result};
use crate::experiments::BenchmarkSummary;
use crate::identify::PolynomialVectorField;
use crate::metrics::RocPoint;

/// Relative tolerance on snapshot spacing when reading datasets.
const SPACING_TOL: f64 = 1e-6;

fn with_path(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Write `bytes` to a temporary file next to `path`, then rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(with_path(dir))?;
    tmp.write_all(bytes).map_err(with_path(path))?;
    tmp.as_file().sync_all().map_err(with_path(path))?;
    tmp.persist(path).map_err(|e| with_path(path)(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(with_path(path))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn read_field(path: &Path) -> Result<PolynomialVectorField> {
    read_json(path)
}

/// JSON sidecar of a dataset CSV.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DatasetMeta {
    #[serde(rename = "T_s")]
    pub sampling_period: f64,
    pub dim: usize,
    pub input_dim: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub system: Option<String>,
    #[serde(default)]
    pub protocol: Option<SimulationProtocol>,
    /// Simulated trajectory each `traj_id` segment was taken from.
    #[serde(default)]
    pub source_trajectory: Option<Vec<usize>>,
}

/// Sidecar path for a dataset CSV: `data.csv` -> `data.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn header(dim: usize, input_dim: usize) -> Vec<String> {
    let mut h = vec!["traj_id".to_string(), "t".to_string()];
    h.extend((1..=dim).map(|i| format!("x_{i}")));
    h.extend((1..=input_dim).map(|i| format!("u_{i}")));
    h
}

/// Dataset CSV text. Every pair becomes its own two-row segment, so `x_k` and
/// `y_k` keep their separate noise realizations.
pub fn dataset_csv(dataset: &SnapshotDataset) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header(dataset.dim(), dataset.input_dim()))?;
    let ts = dataset.sampling_period();
    for (k, p) in dataset.pairs().iter().enumerate() {
        let t0 = dataset.origins().map_or(0.0, |o| o[k].t);
        let u: &[f64] = dataset.inputs().map_or(&[], |u| &u[k]);
        for (t, v) in [(t0, &p.x), (t0 + ts, &p.y)] {
            let mut rec = vec![k.to_string(), t.to_string()];
            rec.extend(v.iter().chain(u).map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Write `dataset` to `csv_path` and its sidecar next to it.
pub fn write_dataset(csv_path: &Path, dataset: &SnapshotDataset, meta: &DatasetMeta) -> Result<PathBuf> {
    write_atomic(csv_path, &dataset_csv(dataset)?)?;
    let side = sidecar_path(csv_path);
    write_json(&side, meta)?;
    Ok(side)
}

/// Sidecar metadata for a dataset, filled from the dataset itself.
pub fn dataset_meta(dataset: &SnapshotDataset) -> DatasetMeta {
    DatasetMeta {
        sampling_period: dataset.sampling_period(),
        dim: dataset.dim(),
        input_dim: dataset.input_dim(),
        seed: None,
        system: None,
        protocol: None,
        source_trajectory: dataset.origins().map(|o| o.iter().map(|p| p.trajectory).collect()),
    }
}

struct Row {
    traj: String,
    t: f64,
    x: Vec<f64>,
    u: Vec<f64>,
}

fn parse_f64(s: &str, line: u64, col: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("line {line}: column {col}: '{s}' is not a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Parse(format!("line {line}: column {col}: non-finite value")))
    }
}

/// Read a dataset CSV; the sidecar is used when present, otherwise `T_s` is
/// inferred from the time column. Consecutive rows sharing a `traj_id` are
/// chained into pairs.
pub fn read_dataset(csv_path: &Path) -> Result<(SnapshotDataset, Option<DatasetMeta>)> {
    let side = sidecar_path(csv_path);
    let meta: Option<DatasetMeta> = if side.exists() { Some(read_json(&side)?) } else { None };

    let file = fs::File::open(csv_path).map_err(with_path(csv_path))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let head: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if head.len() < 3 || head[0] != "traj_id" || head[1] != "t" {
        return Err(Error::Parse(format!(
            "{}: header must start with traj_id,t followed by x_1..x_n",
            csv_path.display()
        )));
    }
    let dim = head[2..].iter().take_while(|h| h.starts_with("x_")).count();
    let input_dim = head.len() - 2 - dim;
    if dim == 0 || head[2 + dim..].iter().any(|h| !h.starts_with("u_")) || head != header(dim, input_dim) {
        return Err(Error::Parse(format!(
            "{}: expected columns {}",
            csv_path.display(),
            header(dim.max(1), input_dim).join(",")
        )));
    }
    if let Some(m) = &meta {
        if m.dim != dim || m.input_dim != input_dim {
            return Err(Error::Parse(format!(
                "sidecar says dim={}, input_dim={}, CSV has {dim} and {input_dim}",
                m.dim, m.input_dim
            )));
        }
    }

    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != head.len() {
            return Err(Error::Parse(format!("line {line}: expected {} fields, got {}", head.len(), rec.len())));
        }
        let vals = (1..rec.len())
            .map(|c| parse_f64(&rec[c], line, &head[c]))
            .collect::<Result<Vec<f64>>>()?;
        rows.push(Row {
            traj: rec[0].to_string(),
            t: vals[0],
            x: vals[1..=dim].to_vec(),
            u: vals[dim + 1..].to_vec(),
        });
    }

    // Group consecutive rows; a traj_id may not reappear after another one.
    let mut groups: Vec<&[Row]> = Vec::new();
    let mut start = 0;
    let mut seen = std::collections::HashSet::new();
    for i in 1..=rows.len() {
        if i == rows.len() || rows[i].traj != rows[start].traj {
            if !seen.insert(rows[start].traj.as_str()) {
                return Err(Error::Parse(format!("traj_id {} is not contiguous", rows[start].traj)));
            }
            groups.push(&rows[start..i]);
            start = i;
        }
    }

    let ts = match &meta {
        Some(m) => m.sampling_period,
        None => groups
            .iter()
            .find(|g| g.len() >= 2)
            .map(|g| g[1].t - g[0].t)
            .ok_or(Error::EmptyDataset)?,
    };
    if !(ts.is_finite() && ts > 0.0) {
        return Err(Error::Parse(format!("sampling period must be positive, got {ts}")));
    }

    let mut pairs = Vec::new();
    let mut inputs = Vec::new();
    let mut origins = Vec::new();
    for (g_idx, g) in groups.iter().enumerate() {
        for w in g.windows(2) {
            let dt = w[1].t - w[0].t;
            if (dt - ts).abs() > SPACING_TOL * ts.max(1.0) {
                return Err(Error::Parse(format!(
                    "traj_id {}: spacing {dt} between t={} and t={} differs from T_s={ts}",
                    w[0].traj, w[0].t, w[1].t
                )));
            }
            pairs.push(SnapshotPair {
                x: w[0].x.clone(),
                y: w[1].x.clone(),
            });
            inputs.push(w[0].u.clone());
            let trajectory = meta
                .as_ref()
                .and_then(|m| m.source_trajectory.as_ref())
                .and_then(|s| s.get(g_idx).copied())
                .unwrap_or(g_idx);
            origins.push(PairOrigin { trajectory, t: w[0].t });
        }
    }
    let dataset = if input_dim > 0 {
        SnapshotDataset::with_inputs(dim, pairs, ts, inputs)?
    } else {
        SnapshotDataset::new(dim, pairs, ts)?
    }
    .with_origins(origins)?;
    Ok((dataset, meta))
}

/// `index, w_exact, w_estimated` over all coefficients, row-major, 1-based index.
pub fn coefficient_scatter_csv(estimated: &PolynomialVectorField, exact: &PolynomialVectorField) -> Result<Vec<u8>> {
    if estimated.coefficients().shape() != exact.coefficients().shape() {
        return Err(Error::DimensionMismatch("coefficient tables differ in shape".into()));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["index", "w_exact", "w_estimated"])?;
    let (e, x) = (estimated.coefficients(), exact.coefficients());
    let mut idx = 1usize;
    for j in 0..e.nrows() {
        for k in 0..e.ncols() {
            w.write_record([idx.to_string(), x[(j, k)].to_string(), e[(j, k)].to_string()])?;
            idx += 1;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `threshold, tpr, fpr` rows; undefined rates are left empty.
pub fn roc_csv(points: &[RocPoint]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["threshold", "tpr", "fpr"])?;
    for p in points {
        w.write_record([p.threshold.to_string(), opt(p.tpr), opt(p.fpr)])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// One row per run followed by a `mean` row.
pub fn benchmark_csv(summary: &BenchmarkSummary) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["benchmark", "run", "seed", "rmse", "nrmse", "tpr", "fpr", "diverged", "error"])?;
    for r in &summary.runs {
        w.write_record([
            summary.name.clone(),
            r.run.to_string(),
            r.seed.to_string(),
            opt(r.rmse),
            opt(r.nrmse),
            opt(r.tpr),
            opt(r.fpr),
            r.diverged.to_string(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.write_record([
        summary.name.clone(),
        "mean".into(),
        String::new(),
        opt(summary.mean_rmse),
        opt(summary.mean_nrmse),
        opt(summary.mean_tpr),
        opt(summary.mean_fpr),
        String::new(),
        format!("{} failed", summary.failures),
    ])?;
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::builtin_system;

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["vdp", "duffing"] {
            let sys = builtin_system(name, 4).unwrap();
            let sim = sys.simulate().unwrap();
            let path = dir.path().join(format!("{name}.csv"));
            write_dataset(&path, &sim.dataset, &dataset_meta(&sim.dataset)).unwrap();
            let (back, meta) = read_dataset(&path).unwrap();
            assert_eq!(back.pairs(), sim.dataset.pairs());
            assert_eq!(back.inputs(), sim.dataset.inputs());
            assert_eq!(back.sampling_period(), sim.dataset.sampling_period());
            assert_eq!(back.origins(), sim.dataset.origins());
            assert!(meta.is_some());
        }
    }

    #[test]
    fn chained_trajectories_without_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(&path, "traj_id,t,x_1\na,0,1.0\na,0.5,2.0\na,1.0,3.0\nb,0,5\nb,0.5,6\n").unwrap();
        let (d, meta) = read_dataset(&path).unwrap();
        assert!(meta.is_none());
        assert_eq!(d.len(), 3);
        assert_eq!(d.sampling_period(), 0.5);
        assert_eq!(d.pairs()[1], SnapshotPair { x: vec![2.0], y: vec![3.0] });
        assert_eq!(d.origins().unwrap()[2].trajectory, 1);
    }

    #[test]
    fn malformed_datasets_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        for text in [
            "id,t,x_1\n0,0,1\n0,1,2\n",
            "traj_id,t,x_1\n0,0,1\n0,1,oops\n",
            "traj_id,t,x_1\n0,0,1\n0,1,2\n0,3,4\n",
            "traj_id,t,x_1\n0,0,1\n1,0,2\n0,1,3\n",
            "traj_id,t,x_1,x_2\n0,0,1\n",
        ] {
            fs::write(&path, text).unwrap();
            assert!(read_dataset(&path).is_err(), "{text}");
        }
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_json(&path, &vec![1, 2]).unwrap();
        write_json(&path, &vec![3]).unwrap();
        let v: Vec<i32> = read_json(&path).unwrap();
        assert_eq!(v, vec![3]);
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn scatter_and_roc_tables() {
        let f = PolynomialVectorField::from_terms(1, 0, 1, &[(0, vec![1], 2.0)]).unwrap();
        let g = PolynomialVectorField::from_terms(1, 0, 1, &[(0, vec![1], 2.5)]).unwrap();
        let text = String::from_utf8(coefficient_scatter_csv(&g, &f).unwrap()).unwrap();
        assert_eq!(text, "index,w_exact,w_estimated\n1,0,0\n2,2,2.5\n");
        let roc = roc_csv(&[RocPoint { threshold: 0.1, tpr: Some(1.0), fpr: None }]).unwrap();
        assert_eq!(String::from_utf8(roc).unwrap(), "threshold,tpr,fpr\n0.1,1,\n");
    }
}
