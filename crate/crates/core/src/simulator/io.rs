//! Dataset persistence: one CSV row per SoC sample plus a JSON sidecar with
//! the session-level fields.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, Session, SessionTrace, Split, VehicleCategory};
use crate::error::{Error, Result};
use crate::physics::{ChargingScenario, PhysicsParams};

pub const DATASET_CSV: &str = "sessions.csv";
pub const DATASET_JSON: &str = "sessions.json";
pub const CSV_HEADER: &str =
    "session_id,k,s,soh,t_amb,p_station,c_nom,p_max_nom,v_nom,p_cable,power_kw,current_a";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    samples_file: String,
    sessions: Vec<SessionMeta>,
}

#[derive(Serialize, Deserialize)]
struct SessionMeta {
    id: usize,
    category: VehicleCategory,
    split: Option<Split>,
    scenario: ChargingScenario,
    physics: PhysicsParams,
    t_c_true: f64,
    energy_kwh: f64,
    n_samples: usize,
}

pub fn dataset_csv(ds: &Dataset) -> String {
    let mut out = String::with_capacity(ds.len() * 101 * 96);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for sess in &ds.sessions {
        let t = &sess.trace;
        let sc = &t.scenario;
        for k in 0..t.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                sess.id,
                k,
                t.soc_grid[k],
                sc.soh,
                sc.t_amb,
                sc.p_station,
                sc.vehicle.c_bat_nom,
                sc.vehicle.p_max_nom,
                sc.vehicle.v_nom,
                sc.vehicle.p_cable,
                t.power_kw[k],
                t.current_a[k],
            );
        }
    }
    out
}

pub fn dataset_json(ds: &Dataset) -> Result<String> {
    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        samples_file: DATASET_CSV.to_string(),
        sessions: ds
            .sessions
            .iter()
            .map(|s| SessionMeta {
                id: s.id,
                category: s.category,
                split: s.split,
                scenario: s.trace.scenario,
                physics: s.trace.physics,
                t_c_true: s.trace.t_c_true,
                energy_kwh: s.trace.energy_kwh,
                n_samples: s.trace.len(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&sidecar)?)
}

/// Writes `sessions.csv` and `sessions.json` into `dir`.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(DATASET_CSV);
    fs::write(&csv_path, dataset_csv(ds)).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join(DATASET_JSON);
    fs::write(&json_path, dataset_json(ds)?).map_err(|e| Error::io(&json_path, e))?;
    Ok(())
}

fn parse_f64(field: &str, line: usize) -> Result<f64> {
    field
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: bad number {field:?}")))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let json_path = dir.join(DATASET_JSON);
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: Sidecar = serde_json::from_str(&text)?;
    if sidecar.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported dataset format version {}",
            sidecar.format_version
        )));
    }
    let csv_path = dir.join(&sidecar.samples_file);
    let csv = fs::read_to_string(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut lines = csv.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => return Err(Error::Format(format!("{}: unexpected header", csv_path.display()))),
    }

    let mut sessions = Vec::with_capacity(sidecar.sessions.len());
    for meta in sidecar.sessions {
        let mut trace = SessionTrace {
            scenario: meta.scenario,
            physics: meta.physics,
            soc_grid: Vec::with_capacity(meta.n_samples),
            power_kw: Vec::with_capacity(meta.n_samples),
            current_a: Vec::with_capacity(meta.n_samples),
            t_c_true: meta.t_c_true,
            energy_kwh: meta.energy_kwh,
        };
        for _ in 0..meta.n_samples {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::Format("sample file ended early".into()))?;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 12 {
                return Err(Error::Format(format!("line {}: expected 12 fields", ln + 1)));
            }
            let id: usize = fields[0]
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad session id", ln + 1)))?;
            if id != meta.id {
                return Err(Error::Format(format!(
                    "line {}: session {id} where {} was expected",
                    ln + 1,
                    meta.id
                )));
            }
            trace.soc_grid.push(parse_f64(fields[2], ln + 1)?);
            trace.power_kw.push(parse_f64(fields[10], ln + 1)?);
            trace.current_a.push(parse_f64(fields[11], ln + 1)?);
        }
        sessions.push(Session {
            id: meta.id,
            category: meta.category,
            split: meta.split,
            trace,
        });
    }
    if lines.next().is_some() {
        return Err(Error::Format("sample file has trailing rows".into()));
    }
    Ok(Dataset { sessions })
}
