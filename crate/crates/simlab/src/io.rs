//! Dataset CSV files, report files and the output manifest.
//!
//! Report CSV layouts are fixed per schema version [`CSV_SCHEMA`]; the
//! manifest records the version alongside every file it lists.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use splinenet::Dataset;

use crate::experiments::{ExperimentReport, ReportBody};
use crate::{Result, SimError};

pub const CSV_SCHEMA: u32 = 1;

/// Reads a CSV with header `x1,…,xd,y`.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.len() < 2 || &header[header.len() - 1] != "y" {
        return Err(SimError::Config(format!(
            "{}: expected header x1,…,xd,y",
            path.display()
        )));
    }
    let d = header.len() - 1;
    let mut x = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                SimError::Config(format!("{}: not a number: {field:?}", path.display()))
            })?;
            if j < d {
                x.push(v);
            } else {
                y.push(v);
            }
        }
    }
    Ok(Dataset::new(d, x, y)?)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (1..=data.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut row: Vec<String> = data.point(i).iter().map(f64::to_string).collect();
        row.push(data.y()[i].to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| SimError::io(path, e))?;
    Ok(())
}

/// Per-replication records of a report as CSV text.
pub fn report_csv(report: &ExperimentReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    match &report.body {
        ReportBody::Rates(r) => {
            w.write_record(["n", "rep", "loss_pilot", "loss_net"])?;
            for rec in &r.records {
                w.serialize((rec.n, rec.rep, rec.loss_pilot, rec.loss_net))?;
            }
        }
        ReportBody::NullCalibration(r) => {
            w.write_record(["rep", "T_n", "pilot_T_n", "Z_n", "pilot_Z_n", "tau2_used"])?;
            for rec in &r.records {
                w.serialize((
                    rec.rep,
                    rec.t_n,
                    rec.pilot_t_n,
                    rec.z_n,
                    rec.pilot_z_n,
                    rec.tau2_used,
                ))?;
            }
        }
        ReportBody::Coverage(r) => {
            w.write_record(["rep", "x0", "estimate", "lower", "upper", "covered"])?;
            for rec in &r.records {
                w.serialize((
                    rec.rep,
                    rec.x0,
                    rec.estimate,
                    rec.lower,
                    rec.upper,
                    rec.covered,
                ))?;
            }
        }
        ReportBody::Power(r) => {
            w.write_record([
                "scale",
                "rep",
                "Z_n",
                "pilot_Z_n",
                "reject",
                "signal_norm_n",
            ])?;
            for rec in &r.records {
                w.serialize((
                    rec.scale,
                    rec.rep,
                    rec.z_n,
                    rec.pilot_z_n,
                    rec.reject,
                    rec.signal_norm_n,
                ))?;
            }
        }
        ReportBody::Diagnostics(r) => {
            w.write_record(["M", "n", "lambda_min_scaled", "lambda_max_scaled"])?;
            for e in &r.eigen {
                w.serialize((e.knots, e.n, e.lambda_min_scaled, e.lambda_max_scaled))?;
            }
        }
    }
    let bytes = w
        .into_inner()
        .map_err(|e| SimError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub csv_schema: u32,
    pub command: String,
    pub args: Vec<String>,
    pub inputs: Vec<String>,
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
}

/// Collects files under an output directory and writes `manifest.json`.
pub struct OutputDir {
    root: PathBuf,
    manifest: Manifest,
}

impl OutputDir {
    pub fn create(root: &Path, command: &str, args: Vec<String>) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| SimError::io(root, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            manifest: Manifest {
                tool: "splinenet".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                csv_schema: CSV_SCHEMA,
                command: command.into(),
                args,
                inputs: Vec::new(),
                seed: None,
                outputs: Vec::new(),
            },
        })
    }

    pub fn input(&mut self, path: &Path) {
        self.manifest.inputs.push(path.display().to_string());
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.root.join(name);
        fs::write(&path, contents).map_err(|e| SimError::io(&path, e))?;
        self.manifest.outputs.push(name.to_string());
        Ok(path)
    }

    pub fn finish(self) -> Result<PathBuf> {
        let path = self.root.join("manifest.json");
        let text = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, text).map_err(|e| SimError::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_roundtrip() {
        let dir = std::env::temp_dir().join(format!("splinenet-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("d.csv");
        let data =
            Dataset::new(2, vec![0.1, 0.2, 0.3, 0.4, 1.0, 0.0], vec![1.5, -2.0, 0.25]).unwrap();
        write_dataset(&path, &data).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(read_dataset(&path).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
