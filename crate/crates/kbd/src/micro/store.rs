//! Line-delimited trajectory store: one step per line, grouped by id.

use super::{MdpState, MicroError, Trajectory, TrajectoryStep};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

#[derive(Serialize, Deserialize)]
struct StepLine {
    traj: u64,
    t: usize,
    rtg: f64,
    state: MdpState,
    action: f64,
    reward: f64,
    gmv_ref: f64,
}

pub fn write_trajectories<W: Write>(mut w: W, trajectories: &[Trajectory]) -> Result<(), MicroError> {
    let io_err = |e: std::io::Error| MicroError::Io(e.to_string());
    for (id, traj) in trajectories.iter().enumerate() {
        for (t, step) in traj.steps.iter().enumerate() {
            let line = StepLine {
                traj: id as u64,
                t: t + 1,
                rtg: step.rtg,
                state: step.state,
                action: step.action,
                reward: step.reward,
                gmv_ref: traj.gmv_ref,
            };
            let json = serde_json::to_string(&line).map_err(|e| MicroError::Io(e.to_string()))?;
            writeln!(w, "{json}").map_err(io_err)?;
        }
    }
    Ok(())
}

/// Reads and validates a trajectory store: steps must be contiguous from 1,
/// share one GMV reference per trajectory, and satisfy the return-to-go
/// identity.
pub fn read_trajectories<R: Read>(r: R) -> Result<Vec<Trajectory>, MicroError> {
    let reader = BufReader::new(r);
    let mut grouped: BTreeMap<u64, Vec<StepLine>> = BTreeMap::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| MicroError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let step: StepLine = serde_json::from_str(&line).map_err(|e| MicroError::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        grouped.entry(step.traj).or_default().push(step);
    }
    let mut out = Vec::with_capacity(grouped.len());
    for (id, mut steps) in grouped {
        steps.sort_by_key(|s| s.t);
        let gmv_ref = steps[0].gmv_ref;
        for (i, s) in steps.iter().enumerate() {
            if s.t != i + 1 {
                return Err(MicroError::InvalidTrajectory {
                    index: id as usize,
                    reason: format!("steps not contiguous: expected t={}, got {}", i + 1, s.t),
                });
            }
            if s.gmv_ref != gmv_ref {
                return Err(MicroError::InvalidTrajectory {
                    index: id as usize,
                    reason: "inconsistent gmv_ref across steps".into(),
                });
            }
        }
        let traj = Trajectory {
            steps: steps
                .into_iter()
                .map(|s| TrajectoryStep { rtg: s.rtg, state: s.state, action: s.action, reward: s.reward })
                .collect(),
            gmv_ref,
        };
        traj.validate(out.len())?;
        out.push(traj);
    }
    Ok(out)
}
