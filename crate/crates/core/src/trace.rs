//! Schedule traces: the time-stamped record every simulation produces and the
//! independent validator that re-derives legality from the raw segments.

use std::collections::HashMap;

use serde::Serialize;

use crate::scalar::Scalar;
use crate::task::{MachineModel, Metrics, Tap, TaskId, Violation};

/// Where work happens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Lane {
    /// A dedicated slow machine (one-fast-many-slow regime).
    Slow,
    /// The fast machine (one-fast-many-slow regime).
    Fast,
    /// Serial execution on one processor (p-processor regime).
    Serial,
    /// Parallel execution across processors (p-processor regime).
    Parallel,
}

/// A maximal interval of constant-rate progress on one task.
#[derive(Clone, Debug, Serialize)]
pub struct WorkSegment {
    pub task: TaskId,
    pub lane: Lane,
    pub start: Scalar,
    pub end: Scalar,
    pub rate: Scalar,
}

impl WorkSegment {
    pub fn work(&self) -> Scalar {
        (&self.end - &self.start) * &self.rate
    }
}

/// Decision log entry.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "task")]
pub enum EventKind {
    AssignFast(TaskId),
    AssignSlow(TaskId),
    AssignSerial(TaskId),
    AssignParallel(TaskId),
    /// Fast-machine occupancy change (one-fast-many-slow regime).
    SetActive(TaskId),
    /// Fast work erased; the task restarts on a slow machine.
    Cancel(TaskId),
    /// Unfinished tasks moved to background (idle processors only).
    Demote,
}

#[derive(Clone, Debug, Serialize)]
pub struct PolicyEvent {
    pub time: Scalar,
    pub kind: EventKind,
}

/// Final per-task record.
#[derive(Clone, Debug, Serialize)]
pub struct TaskRecord {
    pub task: TaskId,
    /// Decision the task ended on, if any.
    pub decision: Option<Lane>,
    pub finish: Option<Scalar>,
    pub cancelled_runs: u32,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScheduleTrace {
    pub regime: String,
    /// Name and parameters of the policy that produced the trace.
    pub policy: String,
    pub events: Vec<PolicyEvent>,
    pub segments: Vec<WorkSegment>,
    pub records: Vec<TaskRecord>,
    pub metrics: Metrics,
}

impl ScheduleTrace {
    pub fn completion(&self) -> &Scalar {
        &self.metrics.completion_time
    }

    pub fn finish_of(&self, id: TaskId) -> Option<&Scalar> {
        self.records[id.index()].finish.as_ref()
    }

    /// Stable JSON export with rationals as strings.
    pub fn to_json(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("serializable");
        out.push('\n');
        out
    }
}

/// Lebesgue measure of the union of `[arrival, finish]` intervals.
/// Unfinished tasks make the awake time infinite.
pub fn awake_time(tap: &Tap, finishes: &[Option<Scalar>]) -> Scalar {
    let mut intervals: Vec<(Scalar, Scalar)> = Vec::new();
    for task in &tap.tasks {
        match &finishes[task.id.index()] {
            None => return Scalar::Infinite,
            Some(f) => intervals.push((task.arrival.clone(), f.clone())),
        }
    }
    intervals.sort();
    let mut total = Scalar::zero();
    let mut current: Option<(Scalar, Scalar)> = None;
    for (start, end) in intervals {
        match current.take() {
            None => current = Some((start, end)),
            Some((cs, ce)) => {
                if start <= ce {
                    current = Some((cs, ce.max(end)));
                } else {
                    total = total + (&ce - &cs);
                    current = Some((start, end));
                }
            }
        }
    }
    if let Some((cs, ce)) = current {
        total = total + (&ce - &cs);
    }
    total
}

fn violation(rule: &'static str, task: Option<TaskId>, detail: String) -> Violation {
    Violation { rule, task, detail }
}

/// Re-derives trace legality from segments and events alone.
pub fn validate_trace(
    trace: &ScheduleTrace,
    tap: &Tap,
    machine: &MachineModel,
) -> Result<(), Violation> {
    if trace.records.len() != tap.len() {
        return Err(violation(
            "record count",
            None,
            format!("{} records for {} tasks", trace.records.len(), tap.len()),
        ));
    }
    for seg in &trace.segments {
        let task = &tap.tasks[seg.task.index()];
        if seg.start < task.arrival {
            return Err(violation(
                "early work",
                Some(seg.task),
                format!("segment starts {} before arrival {}", seg.start, task.arrival),
            ));
        }
        if seg.end < seg.start || !seg.rate.is_finite() || seg.rate.is_negative() {
            return Err(violation("segment shape", Some(seg.task), format!("{seg:?}")));
        }
    }
    let cancels: HashMap<TaskId, Vec<&Scalar>> =
        trace.events.iter().fold(HashMap::new(), |mut acc, ev| {
            if let EventKind::Cancel(id) = ev.kind {
                acc.entry(id).or_default().push(&ev.time);
            }
            acc
        });
    // Per-task accounting: the final implementation must receive exactly its
    // work; cancelled fast runs must precede the cancel event.
    for task in &tap.tasks {
        let record = &trace.records[task.id.index()];
        let last_cancel = cancels.get(&task.id).and_then(|c| c.iter().max().copied());
        let mut done = Scalar::zero();
        let mut final_lane: Option<Lane> = None;
        for seg in trace.segments.iter().filter(|s| s.task == task.id) {
            if let Some(cancel_at) = last_cancel {
                let erased = matches!(seg.lane, Lane::Fast) && seg.start < *cancel_at;
                if erased {
                    if seg.end > *cancel_at {
                        return Err(violation(
                            "cancelled overrun",
                            Some(task.id),
                            "fast segment crosses its cancel".to_string(),
                        ));
                    }
                    continue;
                }
            }
            match final_lane {
                None => final_lane = Some(seg.lane),
                Some(lane) if lane == seg.lane => {}
                Some(lane) => {
                    return Err(violation(
                        "machine exclusivity",
                        Some(task.id),
                        format!("work on both {:?} and {:?}", lane, seg.lane),
                    ));
                }
            }
            done = done + seg.work();
        }
        let needed = match final_lane {
            Some(Lane::Slow) | Some(Lane::Serial) => task.sigma.clone(),
            Some(Lane::Fast) | Some(Lane::Parallel) => task.pi.clone(),
            None => Scalar::zero(),
        };
        match &record.finish {
            Some(f) => {
                if needed.is_infinite() {
                    return Err(violation(
                        "infinite implementation finished",
                        Some(task.id),
                        String::new(),
                    ));
                }
                if done != needed && !(needed.is_zero() && final_lane.is_none()) {
                    return Err(violation(
                        "work conservation",
                        Some(task.id),
                        format!("did {done} of {needed}"),
                    ));
                }
                if needed.is_zero() && *f < task.arrival {
                    return Err(violation("early finish", Some(task.id), String::new()));
                }
            }
            None => {
                if !trace.metrics.completion_time.is_infinite() {
                    return Err(violation(
                        "unfinished task",
                        Some(task.id),
                        "finite completion with unfinished task".to_string(),
                    ));
                }
            }
        }
    }
    match machine {
        MachineModel::Ofms => {
            // Fast machine holds at most one task at a time.
            let mut fast: Vec<(&Scalar, &Scalar)> = trace
                .segments
                .iter()
                .filter(|s| s.lane == Lane::Fast)
                .map(|s| (&s.start, &s.end))
                .collect();
            fast.sort();
            for pair in fast.windows(2) {
                if pair[0].1 > pair[1].0 {
                    return Err(violation(
                        "fast machine overlap",
                        None,
                        format!("{:?} and {:?}", pair[0], pair[1]),
                    ));
                }
            }
            for seg in &trace.segments {
                if seg.rate != Scalar::one() && !(seg.start == seg.end) {
                    return Err(violation(
                        "unit rate",
                        Some(seg.task),
                        format!("rate {}", seg.rate),
                    ));
                }
            }
        }
        MachineModel::Spdp(p) => {
            // Sweep: total allocation <= p everywhere; serial tasks <= 1.
            for seg in &trace.segments {
                if seg.lane == Lane::Serial && seg.rate > Scalar::one() {
                    return Err(violation(
                        "serial rate",
                        Some(seg.task),
                        format!("rate {}", seg.rate),
                    ));
                }
            }
            let mut deltas: Vec<(&Scalar, Scalar)> = Vec::new();
            for seg in &trace.segments {
                if seg.rate.is_zero() || seg.start == seg.end {
                    continue;
                }
                deltas.push((&seg.start, seg.rate.clone()));
                deltas.push((&seg.end, -&seg.rate));
            }
            deltas.sort_by(|a, b| a.0.cmp(b.0));
            let cap = Scalar::from_int(*p as i64);
            let mut load = Scalar::zero();
            let mut i = 0;
            while i < deltas.len() {
                let t = deltas[i].0;
                while i < deltas.len() && deltas[i].0 == t {
                    load = load + deltas[i].1.clone();
                    i += 1;
                }
                if load > cap {
                    return Err(violation(
                        "processor capacity",
                        None,
                        format!("load {load} at {t}"),
                    ));
                }
            }
        }
    }
    // Event times non-decreasing.
    for pair in trace.events.windows(2) {
        if pair[0].time > pair[1].time {
            return Err(violation("event order", None, String::new()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::Task;

    fn sc(t: &str) -> Scalar {
        t.parse().unwrap()
    }

    fn toy_tap() -> Tap {
        Tap::new(vec![
            Task::new(1, sc("1"), sc("1"), sc("0")),
            Task::new(2, sc("1"), sc("1"), sc("2")),
        ])
    }

    #[test]
    fn awake_time_disjoint_and_overlapping() {
        let tap = toy_tap();
        assert_eq!(
            awake_time(&tap, &[Some(sc("1")), Some(sc("3"))]),
            sc("2")
        );
        let tap2 = Tap::new(vec![
            Task::new(1, sc("2"), sc("2"), sc("0")),
            Task::new(2, sc("2"), sc("2"), sc("1")),
        ]);
        assert_eq!(
            awake_time(&tap2, &[Some(sc("2")), Some(sc("3"))]),
            sc("3")
        );
        assert_eq!(awake_time(&Tap::default(), &[]), sc("0"));
    }

    fn trace_with(segments: Vec<WorkSegment>, records: Vec<TaskRecord>) -> ScheduleTrace {
        ScheduleTrace {
            regime: "ofms".to_string(),
            policy: "hand-built".to_string(),
            events: vec![],
            segments,
            records,
            metrics: Metrics {
                completion_time: sc("3"),
                awake_time: sc("2"),
            },
        }
    }

    #[test]
    fn early_work_rejected() {
        let tap = toy_tap();
        let trace = trace_with(
            vec![WorkSegment {
                task: TaskId(2),
                lane: Lane::Slow,
                start: sc("1"),
                end: sc("2"),
                rate: sc("1"),
            }],
            vec![
                TaskRecord { task: TaskId(1), decision: None, finish: Some(sc("0")), cancelled_runs: 0 },
                TaskRecord { task: TaskId(2), decision: Some(Lane::Slow), finish: Some(sc("2")), cancelled_runs: 0 },
            ],
        );
        let v = validate_trace(&trace, &tap, &MachineModel::Ofms).unwrap_err();
        assert_eq!(v.rule, "early work");
    }

    #[test]
    fn two_machines_rejected() {
        let tap = Tap::new(vec![Task::new(1, sc("2"), sc("2"), sc("0"))]);
        let trace = trace_with(
            vec![
                WorkSegment { task: TaskId(1), lane: Lane::Slow, start: sc("0"), end: sc("1"), rate: sc("1") },
                WorkSegment { task: TaskId(1), lane: Lane::Fast, start: sc("0"), end: sc("1"), rate: sc("1") },
            ],
            vec![TaskRecord { task: TaskId(1), decision: Some(Lane::Slow), finish: Some(sc("2")), cancelled_runs: 0 }],
        );
        let v = validate_trace(&trace, &tap, &MachineModel::Ofms).unwrap_err();
        assert_eq!(v.rule, "machine exclusivity");
    }

    #[test]
    fn spdp_capacity_sweep() {
        let tap = Tap::new(vec![
            Task::new(1, sc("4"), sc("2"), sc("0")),
            Task::new(2, sc("4"), sc("1"), sc("0")),
        ]);
        let seg = |id: u32, rate: &str| WorkSegment {
            task: TaskId(id),
            lane: Lane::Parallel,
            start: sc("0"),
            end: sc("1"),
            rate: sc(rate),
        };
        let trace = trace_with(
            vec![seg(1, "2"), seg(2, "1")],
            vec![
                TaskRecord { task: TaskId(1), decision: Some(Lane::Parallel), finish: Some(sc("1")), cancelled_runs: 0 },
                TaskRecord { task: TaskId(2), decision: Some(Lane::Parallel), finish: Some(sc("1")), cancelled_runs: 0 },
            ],
        );
        // Work accounting passes (2 of 2, 1 of 1) but total rate 3 > p = 2.
        let v = validate_trace(&trace, &tap, &MachineModel::Spdp(2)).unwrap_err();
        assert_eq!(v.rule, "processor capacity");
    }
}
