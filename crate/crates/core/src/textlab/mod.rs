//! A miniature deterministic text environment with exact oracles.
//!
//! Rooms form a corridor `0 .. n_rooms`; the agent starts in room 0 with empty
//! hands and can carry one object at a time. A task asks for one object to be put
//! into one receptacle. The score schedule pays for the first pickup of the target,
//! for first bringing it into the receptacle's room, and for the deposit. Putting
//! anything else anywhere ends the episode as a failure. Unknown or unavailable
//! actions are no-ops.

mod oracle;
mod rollout;

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use oracle::{value_iteration_bounded, value_iteration_q, QTable, DEFAULT_STATE_BOUND};
pub use rollout::{behavior_rollout, lab_mock_policy, paraphrase, BehaviorPolicy, MockLikelihoods};

use crate::agent::{Environment, StepOutcome};
use crate::error::{Error, Result};
use crate::experience::{ActionText, EnvState, Task};

pub const DEFAULT_STEP_CAP: usize = 30;

const LAB3: &str = include_str!("../../fixtures/lab3.json");
const LAB5_SPARSE: &str = include_str!("../../fixtures/lab5-sparse.json");
const LAB7: &str = include_str!("../../fixtures/lab7.json");

/// Names of the bundled environment specs.
pub const FIXTURES: [&str; 3] = ["lab3", "lab5-sparse", "lab7"];

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub name: String,
    pub room: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabTask {
    pub id: String,
    pub object: String,
    pub receptacle: String,
}

impl LabTask {
    pub fn description(&self) -> String {
        format!("put the {} in the {}", self.object, self.receptacle)
    }
}

/// Points paid for each milestone; they sum to 100.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreSchedule {
    pub pickup: u32,
    pub correct_room: u32,
    pub deposit: u32,
}

impl Default for ScoreSchedule {
    fn default() -> Self {
        ScoreSchedule {
            pickup: 25,
            correct_room: 25,
            deposit: 50,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub name: String,
    pub n_rooms: usize,
    pub objects: Vec<Placement>,
    pub receptacles: Vec<Placement>,
    pub tasks: Vec<LabTask>,
    #[serde(default)]
    pub score_schedule: ScoreSchedule,
    #[serde(default = "default_step_cap")]
    pub step_cap: usize,
    /// Discount the oracles are usually run with.
    #[serde(default = "default_gamma_hint")]
    pub gamma_hint: f64,
}

fn default_step_cap() -> usize {
    DEFAULT_STEP_CAP
}

fn default_gamma_hint() -> f64 {
    0.9
}

impl EnvSpec {
    /// One of the bundled specs by name.
    pub fn fixture(name: &str) -> Result<Self> {
        let text = match name {
            "lab3" => LAB3,
            "lab5-sparse" => LAB5_SPARSE,
            "lab7" => LAB7,
            other => {
                return Err(Error::config(format!(
                    "unknown environment {other:?} (bundled: {})",
                    FIXTURES.join(", ")
                )))
            }
        };
        Self::from_json(text, name)
    }

    pub fn from_json(text: &str, source_name: &str) -> Result<Self> {
        let spec: EnvSpec = serde_json::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, &path.display().to_string())
    }

    /// A bundled fixture name or a path to a spec file.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if FIXTURES.contains(&name_or_path) {
            Self::fixture(name_or_path)
        } else {
            Self::load(Path::new(name_or_path))
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(format!("environment {}: {msg}", self.name)));
        if self.n_rooms == 0 {
            return bad("needs at least one room".into());
        }
        if self.step_cap == 0 {
            return bad("step cap must be positive".into());
        }
        let s = self.score_schedule;
        if s.pickup + s.correct_room + s.deposit != 100 {
            return bad(format!("score schedule {s:?} does not sum to 100"));
        }
        let mut names: Vec<&str> = Vec::new();
        for p in self.objects.iter().chain(&self.receptacles) {
            if p.room >= self.n_rooms {
                return bad(format!("{} placed in room {} of {}", p.name, p.room, self.n_rooms));
            }
            if p.name.trim().is_empty() || p.name.split_whitespace().count() != 1 {
                return bad(format!("names must be single words, got {:?}", p.name));
            }
            if names.contains(&p.name.as_str()) {
                return bad(format!("duplicate name {}", p.name));
            }
            names.push(&p.name);
        }
        if self.tasks.is_empty() {
            return bad("no tasks".into());
        }
        for t in &self.tasks {
            if self.object_index(&t.object).is_none() || self.receptacle_index(&t.receptacle).is_none() {
                return bad(format!("task {} refers to unknown items", t.id));
            }
        }
        if !(0.0..1.0).contains(&self.gamma_hint) {
            return bad(format!("gamma hint {} outside [0, 1)", self.gamma_hint));
        }
        Ok(())
    }

    fn object_index(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name == name)
    }

    fn receptacle_index(&self, name: &str) -> Option<usize> {
        self.receptacles.iter().position(|r| r.name == name)
    }

    pub fn task_index(&self, task_id: &str) -> Result<usize> {
        self.tasks
            .iter()
            .position(|t| t.id == task_id)
            .ok_or_else(|| Error::config(format!("environment {} has no task {task_id:?}", self.name)))
    }

    pub fn task(&self, index: usize) -> Task {
        let t = &self.tasks[index];
        Task::new(t.id.clone(), t.description()).expect("generated description is non-empty")
    }
}

/// Position of every object and the agent, plus the milestone flags.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabState {
    pub task: usize,
    pub room: usize,
    pub carried: Option<usize>,
    /// Room of each object lying on a floor; `None` while carried.
    pub object_rooms: Vec<Option<usize>>,
    pub picked: bool,
    pub reached: bool,
    pub deposited: bool,
    pub failed: bool,
    pub steps: usize,
}

impl LabState {
    /// Score in points, 0 to 100.
    pub fn score(&self, spec: &EnvSpec) -> u32 {
        let s = spec.score_schedule;
        s.pickup * self.picked as u32 + s.correct_room * self.reached as u32 + s.deposit * self.deposited as u32
    }

    /// Whether the goal was reached or the task irrecoverably failed.
    pub fn is_terminal(&self) -> bool {
        self.deposited || self.failed
    }

    pub fn is_done(&self, spec: &EnvSpec) -> bool {
        self.is_terminal() || self.steps >= spec.step_cap
    }

    /// The state without its step counter, as used by the oracles.
    pub fn core(&self) -> LabState {
        LabState { steps: 0, ..self.clone() }
    }
}

/// Internal action representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum LabAction {
    Left,
    Right,
    Take(usize),
    Drop(usize),
    Put(usize, usize),
    Look,
}

fn action_text(spec: &EnvSpec, a: LabAction) -> String {
    match a {
        LabAction::Left => "go left".into(),
        LabAction::Right => "go right".into(),
        LabAction::Take(o) => format!("take {}", spec.objects[o].name),
        LabAction::Drop(o) => format!("drop {}", spec.objects[o].name),
        LabAction::Put(o, r) => format!("put {} in {}", spec.objects[o].name, spec.receptacles[r].name),
        LabAction::Look => "look".into(),
    }
}

fn lab_actions(spec: &EnvSpec, s: &LabState) -> Vec<LabAction> {
    let mut out = Vec::new();
    if s.room > 0 {
        out.push(LabAction::Left);
    }
    if s.room + 1 < spec.n_rooms {
        out.push(LabAction::Right);
    }
    match s.carried {
        None => {
            for (o, r) in s.object_rooms.iter().enumerate() {
                if *r == Some(s.room) {
                    out.push(LabAction::Take(o));
                }
            }
        }
        Some(o) => {
            out.push(LabAction::Drop(o));
            for (r, rec) in spec.receptacles.iter().enumerate() {
                if rec.room == s.room {
                    out.push(LabAction::Put(o, r));
                }
            }
        }
    }
    out.push(LabAction::Look);
    out
}

/// Initial state of a task: objects where the spec puts them, agent in room 0.
pub fn reset(spec: &EnvSpec, task_id: &str) -> Result<LabState> {
    let task = spec.task_index(task_id)?;
    Ok(initial_state(spec, task))
}

pub(crate) fn initial_state(spec: &EnvSpec, task: usize) -> LabState {
    LabState {
        task,
        room: 0,
        carried: None,
        object_rooms: spec.objects.iter().map(|o| Some(o.room)).collect(),
        picked: false,
        reached: false,
        deposited: false,
        failed: false,
        steps: 0,
    }
}

/// Valid actions in a fixed order: movement, take/drop, put, look.
pub fn valid_actions(spec: &EnvSpec, state: &LabState) -> Vec<ActionText> {
    lab_actions(spec, state)
        .into_iter()
        .map(|a| ActionText::new(action_text(spec, a)).expect("generated action is non-empty"))
        .collect()
}

/// Applies one action. Returns the next state, the reward as a fraction of the
/// maximum score, and whether the episode is over.
pub fn step_env(spec: &EnvSpec, state: &LabState, action: &ActionText) -> (LabState, f64, bool) {
    let mut s = state.clone();
    if state.is_done(spec) {
        return (s, 0.0, true);
    }
    s.steps += 1;
    let before = state.score(spec);
    let norm = action.normalized();
    let chosen = lab_actions(spec, state)
        .into_iter()
        .find(|a| action_text(spec, *a) == norm);
    let task = &spec.tasks[s.task];
    let target = spec.object_index(&task.object).expect("validated task");
    let goal = spec.receptacle_index(&task.receptacle).expect("validated task");
    match chosen {
        Some(LabAction::Left) => s.room -= 1,
        Some(LabAction::Right) => s.room += 1,
        Some(LabAction::Take(o)) => {
            s.carried = Some(o);
            s.object_rooms[o] = None;
            if o == target {
                s.picked = true;
            }
        }
        Some(LabAction::Drop(o)) => {
            s.carried = None;
            s.object_rooms[o] = Some(s.room);
        }
        Some(LabAction::Put(o, r)) => {
            s.carried = None;
            if o == target && r == goal {
                s.deposited = true;
            } else {
                s.failed = true;
            }
        }
        Some(LabAction::Look) | None => {}
    }
    if s.carried == Some(target) && s.room == spec.receptacles[goal].room {
        s.reached = true;
    }
    let reward = (s.score(spec) - before) as f64 / 100.0;
    let done = s.is_done(spec);
    (s, reward, done)
}

fn with_article(name: &str) -> String {
    let article = if name.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { "a" };
    format!("{article} {name}")
}

fn list_phrase(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {last}", init.join(", ")),
    }
}

/// Text the agent sees: room description, inventory line and exits line.
pub fn render(spec: &EnvSpec, state: &LabState) -> EnvState {
    let floor: Vec<String> = spec
        .objects
        .iter()
        .zip(&state.object_rooms)
        .filter(|(_, r)| **r == Some(state.room))
        .map(|(o, _)| with_article(&o.name))
        .collect();
    let recs: Vec<String> = spec
        .receptacles
        .iter()
        .filter(|r| r.room == state.room)
        .map(|r| with_article(&r.name))
        .collect();
    let mut observation = format!("You are in room {}.", state.room);
    if floor.is_empty() {
        observation.push_str(" You see nothing on the floor.");
    } else {
        let _ = write!(observation, " You see {}.", list_phrase(&floor));
    }
    if !recs.is_empty() {
        let _ = write!(observation, " There is {} here.", list_phrase(&recs));
    }
    let inventory = match state.carried {
        Some(o) => format!("You are carrying: {}.", with_article(&spec.objects[o].name)),
        None => "You are carrying: nothing.".to_owned(),
    };
    let mut exits = Vec::new();
    if state.room > 0 {
        exits.push("left");
    }
    if state.room + 1 < spec.n_rooms {
        exits.push("right");
    }
    let free_look = if exits.is_empty() {
        "Exits: none.".to_owned()
    } else {
        format!("Exits: {}.", exits.join(", "))
    };
    EnvState::new(observation, inventory, free_look, state.steps)
}

/// A running episode of one task.
#[derive(Clone, Debug)]
pub struct LabEnv {
    spec: EnvSpec,
    task: Task,
    state: LabState,
}

impl LabEnv {
    pub fn new(spec: &EnvSpec, task_id: &str) -> Result<Self> {
        let state = reset(spec, task_id)?;
        Ok(LabEnv {
            task: spec.task(state.task),
            spec: spec.clone(),
            state,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &LabState {
        &self.state
    }
}

impl Environment for LabEnv {
    fn task(&self) -> &Task {
        &self.task
    }

    fn observe(&self) -> EnvState {
        render(&self.spec, &self.state)
    }

    fn valid_actions(&self) -> Vec<ActionText> {
        valid_actions(&self.spec, &self.state)
    }

    fn step(&mut self, action: &ActionText) -> Result<StepOutcome> {
        let (next, reward, done) = step_env(&self.spec, &self.state, action);
        self.state = next;
        Ok(StepOutcome {
            reward,
            done,
            score: self.state.score(&self.spec) as f64,
            success: self.state.deposited,
        })
    }
}
