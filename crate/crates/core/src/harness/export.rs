//! Trajectory logs: one row per control step.
//!
//! Columns, in order: `t`; true position `px py pz`, velocity `vx vy vz`,
//! attitude quaternion `qw qx qy qz` and body rate `wx wy wz`; estimated
//! `est_px..est_pz`, `est_vx..est_vz`, `est_wx..est_wz`; reference
//! `ref_px..ref_pz`, `ref_vx..ref_vz`, `ref_psi`; `mode` (0 nominal,
//! 1 recovering, 2 resumed) and `contacts`, the sensed flags as a bitmask with
//! bit `i` set for vertex `i`. Units are SI (s, m, m/s, rad, rad/s).

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::control::{FlightMode, PositionReference};
use crate::dynamics::{MavState, NUM_VERTICES};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub wx: f64,
    pub wy: f64,
    pub wz: f64,
    pub est_px: f64,
    pub est_py: f64,
    pub est_pz: f64,
    pub est_vx: f64,
    pub est_vy: f64,
    pub est_vz: f64,
    pub est_wx: f64,
    pub est_wy: f64,
    pub est_wz: f64,
    pub ref_px: f64,
    pub ref_py: f64,
    pub ref_pz: f64,
    pub ref_vx: f64,
    pub ref_vy: f64,
    pub ref_vz: f64,
    pub ref_psi: f64,
    pub mode: u8,
    pub contacts: u16,
}

impl LogRow {
    pub fn new(
        t: f64,
        truth: &MavState,
        est: &MavState,
        reference: &PositionReference,
        mode: FlightMode,
        flags: [bool; NUM_VERTICES],
    ) -> Self {
        let q = UnitQuaternion::from_rotation_matrix(&truth.rotation);
        let contacts = flags.iter().enumerate().fold(0u16, |m, (i, &f)| if f { m | (1 << i) } else { m });
        Self {
            t,
            px: truth.position.x,
            py: truth.position.y,
            pz: truth.position.z,
            vx: truth.velocity.x,
            vy: truth.velocity.y,
            vz: truth.velocity.z,
            qw: q.w,
            qx: q.i,
            qy: q.j,
            qz: q.k,
            wx: truth.angular_velocity.x,
            wy: truth.angular_velocity.y,
            wz: truth.angular_velocity.z,
            est_px: est.position.x,
            est_py: est.position.y,
            est_pz: est.position.z,
            est_vx: est.velocity.x,
            est_vy: est.velocity.y,
            est_vz: est.velocity.z,
            est_wx: est.angular_velocity.x,
            est_wy: est.angular_velocity.y,
            est_wz: est.angular_velocity.z,
            ref_px: reference.p_des.x,
            ref_py: reference.p_des.y,
            ref_pz: reference.p_des.z,
            ref_vx: reference.v_des.x,
            ref_vy: reference.v_des.y,
            ref_vz: reference.v_des.z,
            ref_psi: reference.psi_des,
            mode: mode.code(),
            contacts,
        }
    }

    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.px, self.py, self.pz)
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.vz)
    }

    pub fn est_velocity(&self) -> Vector3<f64> {
        Vector3::new(self.est_vx, self.est_vy, self.est_vz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExportFormat {
    #[default]
    Csv,
    Json,
}

impl std::str::FromStr for ExportFormat {
    type Err = crate::error::SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" => Ok(ExportFormat::Json),
            _ => Err(crate::error::SimError::InvalidParameter(format!("unknown export format '{s}'"))),
        }
    }
}

/// CSV header, also written for an empty log.
pub const CSV_HEADER: &[&str] = &[
    "t", "px", "py", "pz", "vx", "vy", "vz", "qw", "qx", "qy", "qz", "wx", "wy", "wz", "est_px", "est_py", "est_pz",
    "est_vx", "est_vy", "est_vz", "est_wx", "est_wy", "est_wz", "ref_px", "ref_py", "ref_pz", "ref_vx", "ref_vy",
    "ref_vz", "ref_psi", "mode", "contacts",
];

pub fn write_log<W: Write>(rows: &[LogRow], format: ExportFormat, mut out: W) -> Result<()> {
    match format {
        ExportFormat::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            w.write_record(CSV_HEADER)?;
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        ExportFormat::Json => {
            serde_json::to_writer(&mut out, rows)?;
            out.flush()?;
        }
    }
    Ok(())
}

pub fn read_log<R: Read>(input: R, format: ExportFormat) -> Result<Vec<LogRow>> {
    match format {
        ExportFormat::Csv => {
            let mut r = csv::Reader::from_reader(input);
            Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
        }
        ExportFormat::Json => Ok(serde_json::from_reader(input)?),
    }
}

pub fn export_trajectory(rows: &[LogRow], format: ExportFormat, path: impl AsRef<Path>) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_log(rows, format, f)
}

pub fn import_trajectory(path: impl AsRef<Path>, format: ExportFormat) -> Result<Vec<LogRow>> {
    read_log(std::io::BufReader::new(std::fs::File::open(path)?), format)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize) -> LogRow {
        let x = k as f64;
        let s = MavState::at_rest(Vector3::new(x * 0.1, -x / 3.0, 1.0 + 1e-17 * x));
        let mut flags = [false; NUM_VERTICES];
        flags[k % NUM_VERTICES] = true;
        LogRow::new(x * 0.002, &s, &s, &PositionReference::hold(s.position, 0.1 * x), FlightMode::Nominal, flags)
    }

    #[test]
    fn empty_log_is_header_only() {
        let mut buf = Vec::new();
        write_log(&[], ExportFormat::Csv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.lines().next().unwrap().split(',').count(), CSV_HEADER.len());
    }

    #[test]
    fn one_row_per_step() {
        let rows: Vec<_> = (0..1000).map(row).collect();
        let mut buf = Vec::new();
        write_log(&rows, ExportFormat::Csv, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap().lines().count(), 1001);
        assert_eq!(read_log(&buf[..], ExportFormat::Csv).unwrap(), rows);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let rows: Vec<_> = (0..257).map(row).collect();
        let mut buf = Vec::new();
        write_log(&rows, ExportFormat::Json, &mut buf).unwrap();
        let back = read_log(&buf[..], ExportFormat::Json).unwrap();
        assert_eq!(back.len(), rows.len());
        for (a, b) in back.iter().zip(&rows) {
            assert_eq!(a, b);
            assert_eq!(a.pz.to_bits(), b.pz.to_bits());
        }
    }

    #[test]
    fn contact_bitmask() {
        let r = row(3);
        assert_eq!(r.contacts, 1 << 3);
    }
}
