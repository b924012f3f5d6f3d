//! JSON-lines persistence for the experience memory.
//!
//! One trajectory per line:
//! `{task_id, task_description, steps: [{observation, inventory, free_look, action,
//! reward, done}], final_score, success}`. The state following the last step is not
//! stored; it is restored as the end-of-episode sentinel.

use std::io::{BufRead, Write};

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ActionText, EnvState, ExperienceMemory, Step, Task, Trajectory};
use crate::error::{Error, Result};

const TRAJECTORY_FIELDS: &[&str] = &["task_id", "task_description", "steps", "final_score", "success"];
const STEP_FIELDS: &[&str] = &["observation", "inventory", "free_look", "action", "reward", "done"];

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrajectoryRecord {
    task_id: String,
    task_description: String,
    steps: Vec<StepRecord>,
    final_score: f64,
    success: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRecord {
    observation: String,
    inventory: String,
    free_look: String,
    action: String,
    reward: f64,
    done: bool,
}

#[derive(Clone, Debug)]
pub struct ReadOptions {
    /// Reject unknown fields instead of ignoring them with a warning.
    pub strict: bool,
    /// Name used in diagnostics.
    pub source_name: String,
}

impl Default for ReadOptions {
    fn default() -> Self {
        ReadOptions {
            strict: true,
            source_name: "<trajectories>".into(),
        }
    }
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        TrajectoryRecord {
            task_id: t.task.id.clone(),
            task_description: t.task.description.clone(),
            steps: t
                .steps
                .iter()
                .map(|s| StepRecord {
                    observation: s.state.observation.clone(),
                    inventory: s.state.inventory.clone(),
                    free_look: s.state.free_look.clone(),
                    action: s.action.as_str().to_owned(),
                    reward: s.reward,
                    done: s.done,
                })
                .collect(),
            final_score: t.final_score,
            success: t.success,
        }
    }
}

impl TryFrom<TrajectoryRecord> for Trajectory {
    type Error = Error;

    fn try_from(r: TrajectoryRecord) -> Result<Self> {
        let task = Task::new(r.task_id, r.task_description)?;
        let states: Vec<EnvState> = r
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| EnvState::new(&s.observation, &s.inventory, &s.free_look, i))
            .collect();
        let n = r.steps.len();
        let steps = r
            .steps
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                Ok(Step {
                    state: states[i].clone(),
                    action: ActionText::new(s.action)?,
                    reward: s.reward,
                    next_state: states
                        .get(i + 1)
                        .cloned()
                        .unwrap_or_else(|| EnvState::end_of_episode(n)),
                    done: s.done,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let traj = Trajectory {
            task,
            steps,
            final_score: r.final_score,
            success: r.success,
        };
        traj.validate()?;
        Ok(traj)
    }
}

/// Writes the canonical form: one compact JSON object per line, fields in fixed order.
pub fn write_memory<W: Write>(mem: &ExperienceMemory, mut out: W) -> Result<()> {
    for traj in mem.trajectories() {
        serde_json::to_writer(&mut out, &TrajectoryRecord::from(traj))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn strip_unknown(obj: &mut serde_json::Map<String, Value>, known: &[&str], what: &str) -> Vec<String> {
    let unknown: Vec<String> = obj
        .keys()
        .filter(|k| !known.contains(&k.as_str()))
        .cloned()
        .collect();
    for k in &unknown {
        obj.remove(k);
    }
    unknown.into_iter().map(|k| format!("{what}.{k}")).collect()
}

fn parse_line(line: &str, strict: bool) -> std::result::Result<(Trajectory, Vec<String>), String> {
    let mut value: Value = serde_json::from_str(line).map_err(|e| e.to_string())?;
    let mut unknown = Vec::new();
    if !strict {
        if let Some(obj) = value.as_object_mut() {
            unknown.extend(strip_unknown(obj, TRAJECTORY_FIELDS, "trajectory"));
            if let Some(Value::Array(steps)) = obj.get_mut("steps") {
                for step in steps.iter_mut().filter_map(Value::as_object_mut) {
                    unknown.extend(strip_unknown(step, STEP_FIELDS, "step"));
                }
            }
        }
    }
    let record: TrajectoryRecord = serde_json::from_value(value).map_err(|e| e.to_string())?;
    let traj = Trajectory::try_from(record).map_err(|e| e.to_string())?;
    Ok((traj, unknown))
}

/// Reads a trajectory file; every malformed record is reported with its line number.
pub fn read_memory<R: BufRead>(input: R, opts: &ReadOptions) -> Result<ExperienceMemory> {
    let mut mem = ExperienceMemory::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = i + 1;
        let (traj, unknown) = parse_line(&line, opts.strict).map_err(|message| Error::Parse {
            source_name: opts.source_name.clone(),
            line: lineno,
            message,
        })?;
        if !unknown.is_empty() {
            warn!(
                "{}: line {lineno}: ignoring unknown fields {}",
                opts.source_name,
                unknown.join(", ")
            );
        }
        mem.insert(traj)?;
    }
    Ok(mem)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experience::tests::traj_with_deltas;
    use proptest::prelude::*;

    fn to_bytes(mem: &ExperienceMemory) -> Vec<u8> {
        let mut buf = Vec::new();
        write_memory(mem, &mut buf).unwrap();
        buf
    }

    fn from_bytes(bytes: &[u8], strict: bool) -> Result<ExperienceMemory> {
        read_memory(
            bytes,
            &ReadOptions {
                strict,
                ..Default::default()
            },
        )
    }

    #[test]
    fn empty_memory_is_an_empty_file() {
        let mem = ExperienceMemory::new();
        let bytes = to_bytes(&mem);
        assert!(bytes.is_empty());
        assert_eq!(from_bytes(&bytes, true).unwrap(), mem);
    }

    #[test]
    fn three_trajectories_round_trip_canonically() {
        let mut mem = ExperienceMemory::new();
        mem.insert(traj_with_deltas(&[25.0, 0.0, 75.0], true)).unwrap();
        mem.insert(traj_with_deltas(&[0.0, 12.5], false)).unwrap();
        mem.insert(traj_with_deltas(&[1.0 / 3.0], false)).unwrap();
        let first = to_bytes(&mem);
        let back = from_bytes(&first, true).unwrap();
        assert_eq!(back, mem);
        assert_eq!(to_bytes(&back), first);
    }

    #[test]
    fn truncated_final_line_names_the_line() {
        let mut mem = ExperienceMemory::new();
        mem.insert(traj_with_deltas(&[0.0, 100.0], true)).unwrap();
        mem.insert(traj_with_deltas(&[0.0], false)).unwrap();
        let mut bytes = to_bytes(&mem);
        bytes.truncate(bytes.len() - 10);
        match from_bytes(&bytes, true).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_fields_strict_vs_lenient() {
        let mut mem = ExperienceMemory::new();
        mem.insert(traj_with_deltas(&[0.0, 100.0], true)).unwrap();
        let text = String::from_utf8(to_bytes(&mem)).unwrap();
        let extra = text.replacen("{\"task_id\"", "{\"note\":1,\"task_id\"", 1);
        let extra = extra.replacen("{\"observation\"", "{\"score\":3,\"observation\"", 1);
        assert!(matches!(from_bytes(extra.as_bytes(), true), Err(Error::Parse { line: 1, .. })));
        assert_eq!(from_bytes(extra.as_bytes(), false).unwrap(), mem);
    }

    #[test]
    fn invariant_violations_are_parse_errors() {
        let line = r#"{"task_id":"t","task_description":"x","steps":[],"final_score":0.0,"success":false}"#;
        let err = from_bytes(line.as_bytes(), true).unwrap_err();
        assert!(err.to_string().contains("line 1"));
        assert!(err.to_string().contains("empty trajectory"));
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(trajs in proptest::collection::vec(
            (proptest::collection::vec(-50.0f64..50.0, 1..6), any::<bool>()), 0..5)) {
            let mut mem = ExperienceMemory::new();
            for (deltas, success) in &trajs {
                let mut t = traj_with_deltas(deltas, *success);
                t.final_score = t.final_score.clamp(0.0, 100.0);
                mem.insert(t).unwrap();
            }
            let bytes = to_bytes(&mem);
            let back = from_bytes(&bytes, true).unwrap();
            prop_assert_eq!(&back, &mem);
            prop_assert_eq!(to_bytes(&back), bytes);
        }
    }
}
