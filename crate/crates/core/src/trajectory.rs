//! Episode trajectories and their JSONL log format (one episode per line).

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{Conditioning, DoneReason, StepOutcome};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepRecord {
    pub t: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<Vec<f64>>,
    pub age: f64,
    pub bucket: usize,
    pub identity_distance: f64,
    pub typicality_score: f64,
    pub in_typical: bool,
    pub reward: f64,
}

impl StepRecord {
    pub fn from_outcome(t: usize, latent: &[f64], out: &StepOutcome) -> Self {
        Self {
            t,
            latent: Some(latent.to_vec()),
            age: out.info.age,
            bucket: out.info.bucket,
            identity_distance: out.info.identity_distance,
            typicality_score: out.info.typicality_score,
            in_typical: out.info.in_typical,
            reward: out.reward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRecord {
    pub method: String,
    pub episode: usize,
    pub conditioning: Conditioning,
    /// Episode start `s_0` (after any shell projection).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    pub age_base: f64,
    pub base_bucket: usize,
    pub steps: Vec<StepRecord>,
    pub done_reason: DoneReason,
    pub episode_return: f64,
}

impl TrajectoryRecord {
    /// Copy with all latents removed.
    pub fn without_latents(&self) -> Self {
        let mut r = self.clone();
        r.start = None;
        r.steps.iter_mut().for_each(|s| s.latent = None);
        r
    }

    pub fn has_latents(&self) -> bool {
        self.start.is_some() && self.steps.iter().all(|s| s.latent.is_some())
    }

    /// The first `n` steps, with the return recomputed over them.
    pub fn prefix(&self, n: usize) -> Self {
        let mut r = self.clone();
        r.steps.truncate(n);
        r.episode_return = r.steps.iter().map(|s| s.reward).sum();
        r
    }
}

/// Appends one JSON object per episode, flushing after each line so the file
/// stays a valid prefix while a run is in progress.
pub struct TrajectoryWriter<W: Write> {
    out: W,
    log_latents: bool,
}

impl<W: Write> TrajectoryWriter<W> {
    pub fn new(out: W, log_latents: bool) -> Self {
        Self { out, log_latents }
    }

    pub fn write(&mut self, rec: &TrajectoryRecord) -> Result<()> {
        let line = if self.log_latents {
            serde_json::to_string(rec)?
        } else {
            serde_json::to_string(&rec.without_latents())?
        };
        let io = |e| Error::io("<trajectory stream>", e);
        self.out.write_all(line.as_bytes()).map_err(io)?;
        self.out.write_all(b"\n").map_err(io)?;
        self.out.flush().map_err(io)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Reads a trajectory log. Lines are numbered from 1; on failure the error
/// carries the offending line and the last line that parsed.
pub fn read_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trajectories(BufReader::new(file))
}

pub fn parse_trajectories<R: BufRead>(reader: R) -> Result<Vec<TrajectoryRecord>> {
    let mut out = Vec::new();
    let mut last_valid = None;
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::TrajectoryRead {
            line: lineno,
            last_valid,
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord = serde_json::from_str(&line).map_err(|e| Error::TrajectoryRead {
            line: lineno,
            last_valid,
            reason: e.to_string(),
        })?;
        out.push(rec);
        last_valid = Some(lineno);
    }
    Ok(out)
}
