//! Run reports as line-delimited JSON.
//!
//! The first line is a `header` record naming the format, version, run
//! parameters and the record types that follow. Every other line is one
//! record tagged by its `type` field, so plotting tools can filter lines
//! without understanding the whole file.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::metrics::{StageStats, TimedPosition};

pub const FORMAT: &str = "livo-run-report";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub format: String,
    pub version: u32,
    pub source: String,
    pub seed: u64,
    pub selector: bool,
    pub longterm_map: bool,
    pub local_edge: f64,
    pub config: BTreeMap<String, String>,
    /// Record types present after the header, in file order.
    pub records: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub frame: u64,
    pub t: f64,
    pub px: f64,
    pub py: f64,
    pub pz: f64,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyRecord {
    pub frame: u64,
    pub t: f64,
    pub sigma_min: f64,
    pub sigma_mid: f64,
    pub sigma_max: f64,
    /// False when too few residuals existed to evaluate the spectrum.
    pub valid: bool,
    pub flag: bool,
    pub residuals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub frame: u64,
    pub t: f64,
    pub selected: bool,
    pub degenerate: bool,
    /// Motion since the last selected frame; absent before the first one.
    pub delta_position: Option<f64>,
    pub delta_rotation: Option<f64>,
    pub tau_position: f64,
    pub tau_rotation: f64,
    pub local_points: usize,
    pub longterm_points: usize,
    pub visual_applied: bool,
    pub attached: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub frame: u64,
    pub lidar_ms: f64,
    pub visual_ms: f64,
    pub map_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub frame: u64,
    pub voxels: usize,
    pub nodes: usize,
    pub points: usize,
    pub visual_points: usize,
    pub local_bytes: usize,
    pub longterm_points: usize,
    pub longterm_bytes: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryPeak {
    pub voxels: usize,
    pub local_bytes: usize,
    pub longterm_bytes: usize,
    /// Peak of the per-frame sum, not the sum of peaks.
    pub total_bytes: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RuntimeTable {
    pub lidar: StageStats,
    pub visual: StageStats,
    pub map: StageStats,
    pub total: StageStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub frames: usize,
    pub camera_frames: usize,
    pub selected_frames: usize,
    /// Percentage of camera frames admitted to the visual update.
    pub selection_ratio: f64,
    pub degenerate_frames: usize,
    pub ate_rmse: Option<f64>,
    pub ate_pairs: usize,
    pub runtime: RuntimeTable,
    pub peak_memory: MemoryPeak,
    pub final_memory: MemoryRecord,
    /// Smallest covariance eigenvalue seen after any update.
    pub min_covariance_eigenvalue: f64,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum Record {
    Header(ReportHeader),
    Pose(PoseRecord),
    Degeneracy(DegeneracyRecord),
    Selection(SelectionRecord),
    Timing(TimingRecord),
    Memory(MemoryRecord),
    Summary(Summary),
}

pub const RECORD_TYPES: [&str; 6] = ["pose", "degeneracy", "selection", "timing", "memory", "summary"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub header: ReportHeader,
    pub trajectory: Vec<PoseRecord>,
    pub degeneracy: Vec<DegeneracyRecord>,
    pub selection: Vec<SelectionRecord>,
    pub timing: Vec<TimingRecord>,
    pub memory: Vec<MemoryRecord>,
    pub summary: Summary,
}

impl RunReport {
    pub fn positions(&self) -> Vec<TimedPosition> {
        self.trajectory
            .iter()
            .map(|p| TimedPosition { timestamp: p.t, position: nalgebra::Vector3::new(p.px, p.py, p.pz) })
            .collect()
    }

    /// A copy with every wall-clock measurement zeroed, for determinism
    /// comparisons.
    pub fn without_timing(&self) -> RunReport {
        let mut r = self.clone();
        for t in &mut r.timing {
            *t = TimingRecord { frame: t.frame, lidar_ms: 0.0, visual_ms: 0.0, map_ms: 0.0, total_ms: 0.0 };
        }
        r.summary.runtime = RuntimeTable::default();
        r.summary.wall_clock_s = 0.0;
        r
    }

    pub fn write_jsonl(&self, out: &mut impl Write) -> std::io::Result<()> {
        let mut line = |rec: Record| -> std::io::Result<()> {
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n")
        };
        line(Record::Header(self.header.clone()))?;
        self.trajectory.iter().try_for_each(|r| line(Record::Pose(*r)))?;
        self.degeneracy.iter().try_for_each(|r| line(Record::Degeneracy(*r)))?;
        self.selection.iter().try_for_each(|r| line(Record::Selection(*r)))?;
        self.timing.iter().try_for_each(|r| line(Record::Timing(*r)))?;
        self.memory.iter().try_for_each(|r| line(Record::Memory(*r)))?;
        line(Record::Summary(self.summary.clone()))
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("JSON is UTF-8")
    }

    pub fn read_jsonl(input: impl BufRead, origin: &std::path::Path) -> Result<RunReport> {
        let err = |line: u64, message: String| HarnessError::Parse { path: origin.to_path_buf(), line, message };
        let mut header = None;
        let mut summary = None;
        let (mut trajectory, mut degeneracy, mut selection, mut timing, mut memory) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, line) in input.lines().enumerate() {
            let n = i as u64 + 1;
            let line = line.map_err(|e| HarnessError::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: Record = serde_json::from_str(&line).map_err(|e| err(n, e.to_string()))?;
            match rec {
                Record::Header(h) => {
                    if h.format != FORMAT || h.version != VERSION {
                        return Err(err(n, format!("unsupported report {} v{}", h.format, h.version)));
                    }
                    header = Some(h);
                }
                _ if header.is_none() => return Err(err(n, "record before header".into())),
                Record::Pose(r) => trajectory.push(r),
                Record::Degeneracy(r) => degeneracy.push(r),
                Record::Selection(r) => selection.push(r),
                Record::Timing(r) => timing.push(r),
                Record::Memory(r) => memory.push(r),
                Record::Summary(s) => summary = Some(s),
            }
        }
        let header = header.ok_or_else(|| err(0, "missing header".into()))?;
        let summary = summary.ok_or_else(|| err(0, "missing summary".into()))?;
        Ok(RunReport { header, trajectory, degeneracy, selection, timing, memory, summary })
    }

    pub fn from_jsonl(text: &str) -> Result<RunReport> {
        Self::read_jsonl(text.as_bytes(), std::path::Path::new("<memory>"))
    }
}
