//! Core domain types: tasks, task arrival processes, dependency TAPs and
//! machine regimes.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// 1-based task ordinal; doubles as the tie-break key everywhere.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub u32);

impl TaskId {
    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Debug for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One schedulable unit: serial runtime `sigma`, parallel work `pi`, arrival.
///
/// In the one-fast-many-slow regime `sigma` is the slow-machine runtime and
/// `pi` the fast-machine runtime.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Task {
    pub id: TaskId,
    pub sigma: Scalar,
    pub pi: Scalar,
    pub arrival: Scalar,
}

impl Task {
    pub fn new(id: u32, sigma: Scalar, pi: Scalar, arrival: Scalar) -> Self {
        Task {
            id: TaskId(id),
            sigma,
            pi,
            arrival,
        }
    }

    /// `sigma_i + t_i`, the quantity every threshold rule compares.
    pub fn slow_finish_bound(&self) -> Scalar {
        &self.sigma + &self.arrival
    }
}

/// Task Arrival Process: tasks in arrival order.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Tap {
    pub tasks: Vec<Task>,
}

impl Tap {
    pub fn new(tasks: Vec<Task>) -> Self {
        Tap { tasks }
    }

    /// Builds a TAP from `(sigma, pi, arrival)` triples, assigning ids 1..n.
    pub fn from_triples(triples: Vec<(Scalar, Scalar, Scalar)>) -> Self {
        Tap {
            tasks: triples
                .into_iter()
                .enumerate()
                .map(|(i, (sigma, pi, arrival))| Task::new(i as u32 + 1, sigma, pi, arrival))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// The truncation `T^t`: tasks with arrival <= t, order preserved.
    pub fn truncate(&self, t: &Scalar) -> Tap {
        Tap {
            tasks: self
                .tasks
                .iter()
                .filter(|task| task.arrival <= *t)
                .cloned()
                .collect(),
        }
    }
}

/// Machine regime selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MachineModel {
    /// One unit-rate fast machine plus unlimited slow machines; each task runs
    /// entirely on one machine.
    Ofms,
    /// `p` identical unit-rate processors; serialized tasks use exactly one,
    /// parallelized tasks progress at the rate of the processors assigned.
    Spdp(u32),
}

impl MachineModel {
    pub fn processors(&self) -> Option<u32> {
        match self {
            MachineModel::Ofms => None,
            MachineModel::Spdp(p) => Some(*p),
        }
    }
}

/// Completion (makespan) and awake-time metrics of a schedule.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Metrics {
    pub completion_time: Scalar,
    pub awake_time: Scalar,
}

/// Dependency TAP: a TAP plus a precedence DAG (`u` before `v`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dtap {
    pub tap: Tap,
    pub deps: Vec<(TaskId, TaskId)>,
}

impl Dtap {
    pub fn new(tap: Tap, deps: Vec<(TaskId, TaskId)>) -> Self {
        Dtap { tap, deps }
    }

    pub fn predecessors(&self, v: TaskId) -> impl Iterator<Item = TaskId> + '_ {
        self.deps
            .iter()
            .filter(move |(_, b)| *b == v)
            .map(|(a, _)| *a)
    }
}

/// First violated invariant, by name and offending task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub rule: &'static str,
    pub task: Option<TaskId>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.task {
            Some(id) => write!(f, "{} at id {}: {}", self.rule, id, self.detail),
            None => write!(f, "{}: {}", self.rule, self.detail),
        }
    }
}

/// Checks all task and TAP invariants; violations are values, not failures.
pub fn validate_tap(tap: &Tap) -> Result<(), Violation> {
    for (i, task) in tap.tasks.iter().enumerate() {
        if task.id.0 as usize != i + 1 {
            return Err(Violation {
                rule: "id order",
                task: Some(task.id),
                detail: format!("expected ordinal {}", i + 1),
            });
        }
        if task.sigma.is_negative() || task.pi.is_negative() {
            return Err(Violation {
                rule: "negative work",
                task: Some(task.id),
                detail: format!("sigma={} pi={}", task.sigma, task.pi),
            });
        }
        if task.sigma.is_zero() && task.pi.is_zero() {
            return Err(Violation {
                rule: "zero-size task",
                task: Some(task.id),
                detail: "sigma = pi = 0".to_string(),
            });
        }
        if task.arrival.is_negative() || task.arrival.is_infinite() {
            return Err(Violation {
                rule: "arrival range",
                task: Some(task.id),
                detail: format!("arrival={}", task.arrival),
            });
        }
        if i > 0 && tap.tasks[i - 1].arrival > task.arrival {
            return Err(Violation {
                rule: "arrival order",
                task: Some(task.id),
                detail: format!(
                    "arrival {} precedes {}",
                    task.arrival,
                    tap.tasks[i - 1].arrival
                ),
            });
        }
    }
    Ok(())
}

/// Structure summary computed by [`validate_dtap`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DtapStructure {
    pub is_chain_union: bool,
    pub max_component_size: usize,
    pub chain_count: usize,
}

/// Checks DTAP invariants (valid TAP, edges in range, acyclic) and summarizes
/// the dependency structure by graph traversal.
pub fn validate_dtap(dtap: &Dtap) -> Result<DtapStructure, Violation> {
    validate_tap(&dtap.tap)?;
    let n = dtap.tap.len();
    let mut out_deg = vec![0usize; n];
    let mut in_deg = vec![0usize; n];
    let mut adj = vec![Vec::new(); n];
    let mut seen = HashSet::new();
    for &(u, v) in &dtap.deps {
        for node in [u, v] {
            if node.0 == 0 || node.0 as usize > n {
                return Err(Violation {
                    rule: "edge endpoint",
                    task: Some(node),
                    detail: "no such task".to_string(),
                });
            }
        }
        if u == v {
            return Err(Violation {
                rule: "cycle",
                task: Some(u),
                detail: "self loop".to_string(),
            });
        }
        if !seen.insert((u, v)) {
            return Err(Violation {
                rule: "duplicate edge",
                task: Some(u),
                detail: format!("{u} -> {v}"),
            });
        }
        out_deg[u.index()] += 1;
        in_deg[v.index()] += 1;
        adj[u.index()].push(v.index());
    }
    // Kahn's algorithm for cycle detection.
    let mut degree = in_deg.clone();
    let mut queue: Vec<usize> = (0..n).filter(|&i| degree[i] == 0).collect();
    let mut visited = 0;
    while let Some(u) = queue.pop() {
        visited += 1;
        for &v in &adj[u] {
            degree[v] -= 1;
            if degree[v] == 0 {
                queue.push(v);
            }
        }
    }
    if visited != n {
        let culprit = (0..n).find(|&i| degree[i] > 0).unwrap();
        return Err(Violation {
            rule: "cycle",
            task: Some(TaskId(culprit as u32 + 1)),
            detail: "dependency cycle".to_string(),
        });
    }
    // Undirected components for the structure summary.
    let mut comp = vec![usize::MAX; n];
    let mut comp_sizes = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let c = comp_sizes.len();
        let mut stack = vec![start];
        comp[start] = c;
        let mut size = 0;
        let mut und: HashMap<usize, Vec<usize>> = HashMap::new();
        for &(u, v) in &dtap.deps {
            und.entry(u.index()).or_default().push(v.index());
            und.entry(v.index()).or_default().push(u.index());
        }
        while let Some(x) = stack.pop() {
            size += 1;
            for &y in und.get(&x).map(|v| v.as_slice()).unwrap_or(&[]) {
                if comp[y] == usize::MAX {
                    comp[y] = c;
                    stack.push(y);
                }
            }
        }
        comp_sizes.push(size);
    }
    let is_chain_union = (0..n).all(|i| in_deg[i] <= 1 && out_deg[i] <= 1);
    Ok(DtapStructure {
        is_chain_union,
        max_component_size: comp_sizes.iter().copied().max().unwrap_or(0),
        chain_count: if is_chain_union { comp_sizes.len() } else { 0 },
    })
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TaskFile {
    sigma: Scalar,
    pi: Scalar,
    arrival: Scalar,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RegimeFile {
    Named(String),
    Spdp { spdp: u32 },
}

#[derive(Serialize, Deserialize)]
struct InstanceFile {
    regime: RegimeFile,
    tasks: Vec<TaskFile>,
    #[serde(skip_serializing_if = "Option::is_none")]
    deps: Option<Vec<(u32, u32)>>,
}

/// A parsed instance file: machine regime, TAP, optional dependencies.
#[derive(Clone, Debug)]
pub struct Instance {
    pub machine: MachineModel,
    pub dtap: Dtap,
}

impl Instance {
    pub fn new(machine: MachineModel, tap: Tap) -> Self {
        Instance {
            machine,
            dtap: Dtap::new(tap, Vec::new()),
        }
    }

    pub fn tap(&self) -> &Tap {
        &self.dtap.tap
    }

    pub fn to_json(&self) -> String {
        let file = InstanceFile {
            regime: match self.machine {
                MachineModel::Ofms => RegimeFile::Named("ofms".to_string()),
                MachineModel::Spdp(p) => RegimeFile::Spdp { spdp: p },
            },
            tasks: self
                .dtap
                .tap
                .tasks
                .iter()
                .map(|t| TaskFile {
                    sigma: t.sigma.clone(),
                    pi: t.pi.clone(),
                    arrival: t.arrival.clone(),
                })
                .collect(),
            deps: if self.dtap.deps.is_empty() {
                None
            } else {
                Some(self.dtap.deps.iter().map(|&(u, v)| (u.0, v.0)).collect())
            },
        };
        let mut out = serde_json::to_string_pretty(&file).expect("serializable");
        out.push('\n');
        out
    }

    pub fn from_json(text: &str) -> Result<Self, String> {
        let file: InstanceFile =
            serde_json::from_str(text).map_err(|e| format!("instance parse error: {e}"))?;
        let machine = match file.regime {
            RegimeFile::Named(name) if name == "ofms" => MachineModel::Ofms,
            RegimeFile::Named(name) => return Err(format!("unknown regime {name:?}")),
            RegimeFile::Spdp { spdp } if spdp >= 1 => MachineModel::Spdp(spdp),
            RegimeFile::Spdp { .. } => return Err("spdp needs p >= 1".to_string()),
        };
        let tap = Tap::from_triples(
            file.tasks
                .into_iter()
                .map(|t| (t.sigma, t.pi, t.arrival))
                .collect(),
        );
        let deps = file
            .deps
            .unwrap_or_default()
            .into_iter()
            .map(|(u, v)| (TaskId(u), TaskId(v)))
            .collect();
        Ok(Instance {
            machine,
            dtap: Dtap::new(tap, deps),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tap(triples: &[(&str, &str, &str)]) -> Tap {
        Tap::from_triples(
            triples
                .iter()
                .map(|(s, p, a)| (s.parse().unwrap(), p.parse().unwrap(), a.parse().unwrap()))
                .collect(),
        )
    }

    #[test]
    fn empty_tap_is_valid() {
        assert!(validate_tap(&Tap::default()).is_ok());
    }

    #[test]
    fn arrival_order_violation_names_task() {
        let t = tap(&[("1", "1", "0"), ("1", "1", "1"), ("1", "1", "0.5")]);
        let v = validate_tap(&t).unwrap_err();
        assert_eq!(v.rule, "arrival order");
        assert_eq!(v.task, Some(TaskId(3)));
    }

    #[test]
    fn zero_size_task_rejected() {
        let t = tap(&[("0", "0", "0")]);
        let v = validate_tap(&t).unwrap_err();
        assert_eq!(v.rule, "zero-size task");
    }

    #[test]
    fn truncation_matches_definition() {
        let t = tap(&[("1", "1", "0"), ("1", "1", "5")]);
        assert_eq!(t.truncate(&"2".parse().unwrap()).len(), 1);
        assert_eq!(t.truncate(&Scalar::Infinite), t);
        assert_eq!(t.truncate(&"-1".parse().unwrap()).len(), 0);
    }

    #[test]
    fn dtap_chain_summary() {
        let t = tap(&[("1", "1", "0"), ("1", "1", "0")]);
        let d = Dtap::new(t, vec![(TaskId(1), TaskId(2))]);
        let s = validate_dtap(&d).unwrap();
        assert!(s.is_chain_union);
        assert_eq!(s.max_component_size, 2);
        assert_eq!(s.chain_count, 1);
    }

    #[test]
    fn dtap_cycle_detected() {
        let t = tap(&[("1", "1", "0"), ("1", "1", "0")]);
        let d = Dtap::new(t, vec![(TaskId(1), TaskId(2)), (TaskId(2), TaskId(1))]);
        let v = validate_dtap(&d).unwrap_err();
        assert_eq!(v.rule, "cycle");
    }

    #[test]
    fn isolated_tasks_are_singleton_chains() {
        let t = tap(&[("1", "1", "0"), ("1", "1", "0"), ("1", "1", "0")]);
        let s = validate_dtap(&Dtap::new(t, vec![])).unwrap();
        assert_eq!(s.chain_count, 3);
        assert_eq!(s.max_component_size, 1);
    }

    #[test]
    fn instance_json_round_trip() {
        let inst = Instance::new(MachineModel::Spdp(3), tap(&[("1/2", "inf", "0"), ("2", "1", "1/3")]));
        let text = inst.to_json();
        let back = Instance::from_json(&text).unwrap();
        assert_eq!(back.machine, MachineModel::Spdp(3));
        assert_eq!(back.tap(), inst.tap());
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn truncation_prefix_property() {
        let t = tap(&[("1", "1", "0"), ("1", "1", "1"), ("1", "1", "2")]);
        let a = t.truncate(&"1".parse().unwrap());
        let b = t.truncate(&"2".parse().unwrap());
        assert!(b.tasks.starts_with(&a.tasks));
    }
}
