//! On-disk artifacts: trajectory snapshots, path ensembles and report bundles.
//!
//! Binary payloads are little-endian and paired with a JSON sidecar that
//! records the layout and a SHA-256 of the payload.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{KimuraError, Result};
use crate::geometry::CornerBox;
use crate::grid::{Field, TensorGrid};
use crate::harness::EstimateReport;
use crate::measure::hex_digest;
use crate::operator::ValidationReport;
use crate::oracles::{EnsembleMeta, PathEnsemble};
use crate::solver::{SchemeMeta, Trajectory};

const SNAPSHOT_MAGIC: &[u8; 8] = b"KIMSNAP\0";
const ENSEMBLE_MAGIC: &[u8; 8] = b"KIMENS\0\0";
const FORMAT_VERSION: u32 = 1;

pub const REPORT_FILE: &str = "report.json";
pub const TEXT_FILE: &str = "report.txt";
pub const TIMING_FILE: &str = "timing.json";
pub const FAILURE_MARKER: &str = "FAILED";

fn format_error(msg: impl Into<String>) -> KimuraError {
    KimuraError::Format(msg.into())
}

/// Write a file that must not exist yet.
pub fn write_once(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.exists() {
        return Err(format_error(format!(
            "refusing to overwrite {}",
            path.display()
        )));
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format_error("truncated payload"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| format_error("length overflows usize"))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(
            n.checked_mul(8)
                .ok_or_else(|| format_error("length overflow"))?,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(format_error("trailing bytes after payload"))
        }
    }
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSidecar {
    pub format: String,
    pub version: u32,
    pub domain: CornerBox,
    pub axis_lengths: Vec<usize>,
    pub snapshots: usize,
    pub scheme: SchemeMeta,
    pub sha256: String,
}

pub fn encode_snapshot(traj: &Trajectory) -> Vec<u8> {
    let grid = &traj.grid;
    let mut out = Vec::with_capacity(16 + 8 * (traj.len() * (grid.len() + 1)));
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(grid.dim() as u32).to_le_bytes());
    for axis in grid.axes() {
        out.extend_from_slice(&(axis.len() as u64).to_le_bytes());
    }
    for axis in grid.axes() {
        put_f64s(&mut out, axis);
    }
    out.extend_from_slice(&(traj.len() as u64).to_le_bytes());
    put_f64s(&mut out, &traj.times);
    for f in &traj.fields {
        put_f64s(&mut out, &f.values);
    }
    out
}

pub fn decode_snapshot(bytes: &[u8], sidecar: &SnapshotSidecar) -> Result<Trajectory> {
    if hex_digest(bytes) != sidecar.sha256 {
        return Err(format_error("snapshot checksum mismatch"));
    }
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != SNAPSHOT_MAGIC {
        return Err(format_error("not a snapshot file"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(format_error(format!(
            "unsupported snapshot version {version}"
        )));
    }
    let dim = r.u32()? as usize;
    if dim != sidecar.domain.dim() {
        return Err(format_error("snapshot dimension disagrees with sidecar"));
    }
    let lens = (0..dim).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let axes = lens
        .iter()
        .map(|&l| r.f64s(l))
        .collect::<Result<Vec<_>>>()?;
    let grid = Arc::new(TensorGrid::from_axes(sidecar.domain.clone(), axes)?);
    let count = r.u64()?;
    let times = r.f64s(count)?;
    let fields = times
        .iter()
        .map(|&t| {
            let mut f = Field::new(grid.clone(), r.f64s(grid.len())?)?;
            f.time = Some(t);
            Ok(f)
        })
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(Trajectory {
        grid,
        times,
        fields,
        meta: sidecar.scheme.clone(),
    })
}

/// `path` gets the binary payload, `path.json` the sidecar.
pub fn write_snapshot(path: &Path, traj: &Trajectory) -> Result<()> {
    let bytes = encode_snapshot(traj);
    let sidecar = SnapshotSidecar {
        format: "kimura-snapshot".into(),
        version: FORMAT_VERSION,
        domain: traj.grid.domain.clone(),
        axis_lengths: traj.grid.axes().iter().map(Vec::len).collect(),
        snapshots: traj.len(),
        scheme: traj.meta.clone(),
        sha256: hex_digest(&bytes),
    };
    write_once(path, &bytes)?;
    write_once(
        &sidecar_path(path),
        serde_json::to_string_pretty(&sidecar)?.as_bytes(),
    )
}

pub fn read_snapshot(path: &Path) -> Result<Trajectory> {
    let sidecar: SnapshotSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    decode_snapshot(&fs::read(path)?, &sidecar)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSidecar {
    pub format: String,
    pub version: u32,
    pub meta: EnsembleMeta,
    /// Column names and element types, in payload order.
    pub columns: Vec<(String, String)>,
    pub rows: usize,
    pub sha256: String,
}

pub fn encode_ensemble(e: &PathEnsemble) -> Vec<u8> {
    let n = e.len();
    let mut out = Vec::with_capacity(24 + 17 * n);
    out.extend_from_slice(ENSEMBLE_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    put_f64s(&mut out, &e.terminal);
    out.extend(e.absorbed.iter().map(|&a| a as u8));
    put_f64s(&mut out, &e.absorption_time);
    out
}

pub fn decode_ensemble(bytes: &[u8], sidecar: &EnsembleSidecar) -> Result<PathEnsemble> {
    if hex_digest(bytes) != sidecar.sha256 {
        return Err(format_error("ensemble checksum mismatch"));
    }
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != ENSEMBLE_MAGIC {
        return Err(format_error("not an ensemble file"));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(format_error(format!(
            "unsupported ensemble version {version}"
        )));
    }
    let n = r.u64()?;
    let terminal = r.f64s(n)?;
    let absorbed = r
        .take(n)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(format_error("absorbed column holds a non-boolean byte")),
        })
        .collect::<Result<Vec<_>>>()?;
    let absorption_time = r.f64s(n)?;
    r.finish()?;
    let e = PathEnsemble {
        meta: sidecar.meta.clone(),
        terminal,
        absorbed,
        absorption_time,
    };
    e.validate()?;
    Ok(e)
}

pub fn write_ensemble(path: &Path, e: &PathEnsemble) -> Result<()> {
    let bytes = encode_ensemble(e);
    let sidecar = EnsembleSidecar {
        format: "kimura-ensemble".into(),
        version: FORMAT_VERSION,
        meta: e.meta.clone(),
        columns: vec![
            ("terminal".into(), "f64".into()),
            ("absorbed".into(), "u8".into()),
            ("absorption_time".into(), "f64".into()),
        ],
        rows: e.len(),
        sha256: hex_digest(&bytes),
    };
    write_once(path, &bytes)?;
    write_once(
        &sidecar_path(path),
        serde_json::to_string_pretty(&sidecar)?.as_bytes(),
    )
}

pub fn read_ensemble(path: &Path) -> Result<PathEnsemble> {
    let sidecar: EnsembleSidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    decode_ensemble(&fs::read(path)?, &sidecar)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentFailure {
    pub experiment: String,
    pub error: String,
}

/// Everything a run produces except wall-clock data, which lives in
/// `timing.json` so that reruns compare byte for byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub schema_version: u32,
    pub name: String,
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub status: String,
    pub validation: Option<ValidationReport>,
    pub reports: Vec<EstimateReport>,
    pub errors: Vec<ExperimentFailure>,
    /// Bundle-relative paths of the other artifacts.
    pub artifacts: Vec<String>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix: f64,
    pub finished_unix: f64,
    pub seconds: Vec<(String, f64)>,
}

pub fn unix_now() -> f64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Refinement series as CSV, one row per grid (or per shell / test function).
pub fn series_csv(report: &EstimateReport) -> Result<String> {
    let mut keys: Vec<&String> = Vec::new();
    for row in &report.series {
        for k in row.values.keys() {
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["grid".to_string(), "cells".to_string()];
    header.extend(keys.iter().map(|k| k.to_string()));
    w.write_record(&header)
        .map_err(|e| format_error(e.to_string()))?;
    for row in &report.series {
        let mut rec = vec![row.grid.clone(), row.cells.to_string()];
        rec.extend(keys.iter().map(|k| {
            row.values
                .get(*k)
                .map(|v| format!("{v:e}"))
                .unwrap_or_default()
        }));
        w.write_record(&rec)
            .map_err(|e| format_error(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| format_error(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| format_error(e.to_string()))
}

fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.6e}"),
        None if v.is_null() => "nan".into(),
        None => v.to_string(),
    }
}

fn text(v: &Value) -> String {
    v.as_str()
        .map(str::to_string)
        .unwrap_or_else(|| v.to_string())
}

/// Aligned-column text rendering of a bundle given as JSON.
pub fn render_text(bundle: &Value) -> Result<String> {
    let field = |k: &str| {
        bundle
            .get(k)
            .ok_or_else(|| format_error(format!("bundle lacks `{k}`")))
    };
    let mut out = String::new();
    out.push_str(&format!("run      {}\n", text(field("name")?)));
    out.push_str(&format!("command  {}\n", text(field("command")?)));
    out.push_str(&format!("config   {}\n", text(field("config_hash")?)));
    out.push_str(&format!("seed     {}\n", field("seed")?));
    out.push_str(&format!("status   {}\n", text(field("status")?)));
    if let Some(checks) = bundle
        .pointer("/validation/checks")
        .and_then(Value::as_array)
    {
        out.push_str("\nvalidation\n");
        for c in checks {
            let ok = c.get("passed").and_then(Value::as_bool).unwrap_or(false);
            out.push_str(&format!(
                "  {:<14} {:<5} worst {}\n",
                text(&c["name"]),
                if ok { "ok" } else { "FAIL" },
                num(&c["worst_violation"])
            ));
        }
    }
    let reports = field("reports")?
        .as_array()
        .ok_or_else(|| format_error("`reports` is not a list"))?;
    if !reports.is_empty() {
        let width = reports
            .iter()
            .map(|r| text(&r["tag"]).len())
            .max()
            .unwrap_or(0)
            .max(10);
        out.push_str(&format!(
            "\n{:<width$}  {:<30}  {}\n",
            "experiment", "verdict", "tolerance"
        ));
        for r in reports {
            let verdict = match text(&r["verdict"]).as_str() {
                "pass" => "PASS",
                "fail" => "FAIL",
                "vacuous-pass" => "PASS (vacuous)",
                "insufficient" => "FAIL (insufficient resolution)",
                other => return Err(format_error(format!("unknown verdict {other}"))),
            };
            out.push_str(&format!(
                "{:<width$}  {:<30}  {}\n",
                text(&r["tag"]),
                verdict,
                num(&r["tolerance"])
            ));
        }
        for r in reports {
            out.push_str(&format!("\n[{}]\n", text(&r["tag"])));
            if let Some(consts) = r["constants"].as_object() {
                let w = consts.keys().map(String::len).max().unwrap_or(0);
                for (k, v) in consts {
                    out.push_str(&format!("  {k:<w$}  {:>14}\n", num(v)));
                }
            }
            for f in r["flags"].as_array().into_iter().flatten() {
                out.push_str(&format!("  flag: {}\n", text(f)));
            }
            for f in r["notes"].as_array().into_iter().flatten() {
                out.push_str(&format!("  note: {}\n", text(f)));
            }
        }
    }
    for e in field("errors")?.as_array().into_iter().flatten() {
        out.push_str(&format!(
            "\nerror in {}: {}\n",
            text(&e["experiment"]),
            text(&e["error"])
        ));
    }
    Ok(out)
}

/// Load `report.json` (or a bundle directory containing it) as JSON.
pub fn load_bundle(path: &Path) -> Result<Value> {
    let file = if path.is_dir() {
        path.join(REPORT_FILE)
    } else {
        path.to_path_buf()
    };
    let bytes = fs::read(&file)
        .map_err(|e| format_error(format!("cannot read {}: {e}", file.display())))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::OperatorFamily;
    use crate::oracles::sample_model_exact;
    use crate::solver::{solve_ivp, Scheme};

    fn trajectory() -> Trajectory {
        let op = OperatorFamily::Model {
            n: 1,
            m: 1,
            n0: 1,
            b: 0.0,
            radius: 1.0,
        }
        .build()
        .unwrap();
        let grid = Arc::new(TensorGrid::graded(op.domain.clone(), &[8, 6], 4).unwrap());
        let u0 =
            Field::from_fn(grid.clone(), |z| z[0] * (1.0 - z[0]) * (1.0 - z[1] * z[1])).unwrap();
        solve_ivp(&op, grid, &u0, 0.05, 0.01, Scheme::CrankNicolson, 2).unwrap()
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let traj = trajectory();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.bin");
        write_snapshot(&path, &traj).unwrap();
        let back = read_snapshot(&path).unwrap();
        assert_eq!(back.grid.axes(), traj.grid.axes());
        assert_eq!(back.times, traj.times);
        for (a, b) in back.fields.iter().zip(&traj.fields) {
            assert!(a
                .values
                .iter()
                .zip(&b.values)
                .all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(encode_snapshot(&back), encode_snapshot(&traj));
        assert!(
            write_snapshot(&path, &traj).is_err(),
            "second write must be refused"
        );
    }

    #[test]
    fn corrupted_snapshot_is_rejected() {
        let traj = trajectory();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.bin");
        write_snapshot(&path, &traj).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        let sidecar: SnapshotSidecar =
            serde_json::from_slice(&fs::read(sidecar_path(&path)).unwrap()).unwrap();
        assert!(decode_snapshot(&bytes, &sidecar).is_err());
    }

    #[test]
    fn ensemble_round_trip() {
        let e = sample_model_exact(0.0, 0.3, 0.5, 5000, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("paths.bin");
        write_ensemble(&path, &e).unwrap();
        let back = read_ensemble(&path).unwrap();
        assert_eq!(back.meta, e.meta);
        assert_eq!(back.absorbed, e.absorbed);
        assert_eq!(encode_ensemble(&back), encode_ensemble(&e));
    }

    #[test]
    fn csv_has_one_row_per_grid() {
        let mut r = EstimateReport::new("x", 0.1);
        for cells in [8, 16] {
            r.series.push(crate::harness::SeriesRow {
                grid: format!("g{cells}"),
                cells,
                values: [("c".to_string(), 1.5)].into_iter().collect(),
            });
        }
        let text = series_csv(&r).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("grid,cells,c\n"));
    }
}
