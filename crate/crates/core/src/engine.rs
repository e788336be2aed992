//! Deterministic event-driven execution of scheduling policies.
//!
//! The engine advances analytically between decision points (arrivals, task
//! completions, policy wakeups); there is no fixed time step. Policies are
//! state machines that receive a view of the arrived tasks at every decision
//! point and answer with directives; the engine enforces the declared
//! commitment model and parallel-work observability and records a validated
//! trace.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::scalar::Scalar;
use crate::task::{MachineModel, Metrics, Tap, TaskId, Violation};
use crate::trace::{awake_time, EventKind, Lane, PolicyEvent, ScheduleTrace, TaskRecord, WorkSegment};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CommitmentModel {
    /// Implementation choice fixed at arrival, never changed.
    Instant,
    /// Choice fixed when the task first begins running; irrevocable.
    Eventual,
    /// Running fast work may be cancelled (erased) and restarted slow.
    Never,
}

impl std::fmt::Display for CommitmentModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CommitmentModel::Instant => "instant",
            CommitmentModel::Eventual => "eventual",
            CommitmentModel::Never => "never",
        };
        f.write_str(s)
    }
}

/// Serial-vs-parallel implementation choice (p-processor regime).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Serial,
    Parallel,
}

/// Policy instructions to the engine.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Directive {
    /// Fix a fast-machine commitment without starting (one-fast-many-slow).
    CommitFast(TaskId),
    /// Start the task on a fresh slow machine now.
    StartSlow(TaskId),
    /// Make the task the fast machine's current occupant.
    RunFast(TaskId),
    /// Erase fast progress and restart on a slow machine (never-committing).
    CancelFastToSlow(TaskId),
    /// Fix the implementation choice (p-processor regime).
    Assign(TaskId, Mode),
    /// Move every running task to the background (idle processors only).
    Demote,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TaskStatus {
    /// Arrived, no commitment or start yet.
    Pending,
    /// Fast-committed, waiting for the fast machine.
    FastCommitted,
    /// Currently occupying the fast machine.
    OnFast,
    /// Begun on the fast machine, currently paused.
    FastPaused,
    OnSlow,
    /// Foreground task with a fixed implementation choice.
    Assigned(Mode),
    Background(Mode),
    Finished,
}

/// What a policy may see of one task. Parallel work is redacted for policies
/// declared parallel-work-oblivious; access goes through [`TaskView::pi`].
#[derive(Clone, Debug)]
pub struct TaskView {
    pub id: TaskId,
    pub sigma: Scalar,
    pub arrival: Scalar,
    pub status: TaskStatus,
    pi: Option<Scalar>,
}

impl TaskView {
    pub(crate) fn assemble(
        id: TaskId,
        sigma: Scalar,
        arrival: Scalar,
        status: TaskStatus,
        pi: Option<Scalar>,
    ) -> Self {
        TaskView {
            id,
            sigma,
            arrival,
            status,
            pi,
        }
    }

    pub(crate) fn redacted_pi(&self) -> Option<Scalar> {
        self.pi.clone()
    }

    pub fn pi(&self) -> Result<&Scalar, PolicyError> {
        self.pi.as_ref().ok_or(PolicyError::RedactedParallelWork)
    }

    pub fn slow_finish_bound(&self) -> Scalar {
        &self.sigma + &self.arrival
    }
}

/// Snapshot handed to a policy at a decision point.
#[derive(Clone, Debug)]
pub struct EngineView {
    pub now: Scalar,
    pub machine: MachineModel,
    /// Fast-machine occupant (one-fast-many-slow regime).
    pub fast_running: Option<TaskId>,
    /// True exactly when the optimal schedule of the arrived prefix would
    /// already be finished (only for policies that request the signal).
    pub opt_all_done: bool,
    tasks: Vec<TaskView>,
}

impl EngineView {
    pub(crate) fn assemble(
        now: Scalar,
        machine: MachineModel,
        fast_running: Option<TaskId>,
        opt_all_done: bool,
        tasks: Vec<TaskView>,
    ) -> Self {
        EngineView {
            now,
            machine,
            fast_running,
            opt_all_done,
            tasks,
        }
    }

    /// Arrived tasks in id order.
    pub fn tasks(&self) -> &[TaskView] {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> Option<&TaskView> {
        self.tasks.iter().find(|t| t.id == id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum PolicyError {
    #[error("parallel work is redacted for this policy")]
    RedactedParallelWork,
    #[error("optimum oracle overflow: {0}")]
    OracleOverflow(String),
    #[error("unsupported input: {0}")]
    Unsupported(String),
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error("invalid TAP: {0}")]
    InvalidTap(Violation),
    #[error("policy violation under {model} commitment: {detail}")]
    PolicyViolation {
        model: CommitmentModel,
        detail: String,
    },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("no progress at time {0}; policy livelock")]
    Livelock(Scalar),
}

/// An online scheduling policy.
pub trait Policy {
    fn name(&self) -> String;
    fn commitment(&self) -> CommitmentModel;
    /// Declared parallel-work-oblivious policies receive redacted views.
    fn pwo(&self) -> bool {
        false
    }
    /// Whether the engine should compute the opt-finished-all signal.
    fn wants_opt_signal(&self) -> bool {
        false
    }
    fn decide(&mut self, view: &EngineView) -> Result<Vec<Directive>, PolicyError>;
}

/// Oracle used only for the opt-finished-all signal: optimal completion of a
/// truncated TAP under the machine model in force.
pub type SignalOracle<'a> = dyn Fn(&Tap) -> Result<Scalar, PolicyError> + 'a;

#[derive(Default)]
pub struct SimOptions<'a> {
    pub opt_signal_oracle: Option<Box<SignalOracle<'a>>>,
}

/// Runs `policy` against `tap` under `machine`; pure in its inputs.
pub fn simulate(
    tap: &Tap,
    policy: &mut dyn Policy,
    machine: MachineModel,
    options: SimOptions<'_>,
) -> Result<ScheduleTrace, SimError> {
    crate::task::validate_tap(tap).map_err(SimError::InvalidTap)?;
    match machine {
        MachineModel::Ofms => OfmsExec::new(tap, policy).run(),
        MachineModel::Spdp(p) => SpdpExec::new(tap, policy, p, options).run(),
    }
}

/// Per-task segment builder that merges contiguous equal-rate runs.
struct Segments {
    open: Vec<Option<(Lane, Scalar, Scalar, Scalar)>>, // lane, start, end, rate
    done: Vec<WorkSegment>,
}

impl Segments {
    fn new(n: usize) -> Self {
        Segments {
            open: (0..n).map(|_| None).collect(),
            done: Vec::new(),
        }
    }

    fn record(&mut self, id: TaskId, lane: Lane, start: Scalar, end: Scalar, rate: Scalar) {
        if start == end || rate.is_zero() {
            return;
        }
        match &mut self.open[id.index()] {
            Some((l, _, e, r)) if *l == lane && *r == rate && *e == start => {
                *e = end;
            }
            slot => {
                if let Some((l, s, e, r)) = slot.take() {
                    self.done.push(WorkSegment {
                        task: id,
                        lane: l,
                        start: s,
                        end: e,
                        rate: r,
                    });
                }
                *slot = Some((lane, start, end, rate));
            }
        }
    }

    fn close(&mut self, id: TaskId) {
        if let Some((l, s, e, r)) = self.open[id.index()].take() {
            self.done.push(WorkSegment {
                task: id,
                lane: l,
                start: s,
                end: e,
                rate: r,
            });
        }
    }

    fn finish(mut self) -> Vec<WorkSegment> {
        for i in 0..self.open.len() {
            self.close(TaskId(i as u32 + 1));
        }
        self.done
            .sort_by(|a, b| (&a.start, a.task.0, &a.end).cmp(&(&b.start, b.task.0, &b.end)));
        self.done
    }
}

fn violation(model: CommitmentModel, detail: impl Into<String>) -> SimError {
    SimError::PolicyViolation {
        model,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// One-fast-many-slow executor
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq)]
enum OfmsCommit {
    None,
    Fast,
    Slow,
}

struct OfmsExec<'a> {
    tap: &'a Tap,
    policy: &'a mut dyn Policy,
    policy_name: String,
    model: CommitmentModel,
    pwo: bool,
    arrived: Vec<bool>,
    commit: Vec<OfmsCommit>,
    begun_fast: Vec<bool>,
    fast_progress: Vec<Scalar>,
    slow_start: Vec<Option<Scalar>>,
    finish: Vec<Option<Scalar>>,
    cancelled: Vec<u32>,
    fast_current: Option<TaskId>,
    fast_seg_start: Scalar,
    segments: Segments,
    events: Vec<PolicyEvent>,
    slow_heap: BinaryHeap<Reverse<(Scalar, u32)>>,
    arrival_idx: usize,
}

impl<'a> OfmsExec<'a> {
    fn new(tap: &'a Tap, policy: &'a mut dyn Policy) -> Self {
        let n = tap.len();
        let model = policy.commitment();
        let pwo = policy.pwo();
        let policy_name = policy.name();
        OfmsExec {
            tap,
            policy,
            policy_name,
            model,
            pwo,
            arrived: vec![false; n],
            commit: vec![OfmsCommit::None; n],
            begun_fast: vec![false; n],
            fast_progress: vec![Scalar::zero(); n],
            slow_start: vec![None; n],
            finish: vec![None; n],
            cancelled: vec![0; n],
            fast_current: None,
            fast_seg_start: Scalar::zero(),
            segments: Segments::new(n),
            events: Vec::new(),
            slow_heap: BinaryHeap::new(),
            arrival_idx: 0,
        }
    }

    fn task(&self, id: TaskId) -> &crate::task::Task {
        &self.tap.tasks[id.index()]
    }

    fn status(&self, id: TaskId) -> TaskStatus {
        let i = id.index();
        if self.finish[i].is_some() {
            TaskStatus::Finished
        } else if self.slow_start[i].is_some() {
            TaskStatus::OnSlow
        } else if self.fast_current == Some(id) {
            TaskStatus::OnFast
        } else if self.begun_fast[i] {
            TaskStatus::FastPaused
        } else if self.commit[i] == OfmsCommit::Fast {
            TaskStatus::FastCommitted
        } else {
            TaskStatus::Pending
        }
    }

    fn view(&self, now: &Scalar) -> EngineView {
        let tasks = self
            .tap
            .tasks
            .iter()
            .filter(|t| self.arrived[t.id.index()])
            .map(|t| TaskView {
                id: t.id,
                sigma: t.sigma.clone(),
                arrival: t.arrival.clone(),
                status: self.status(t.id),
                pi: (!self.pwo).then(|| t.pi.clone()),
            })
            .collect();
        EngineView {
            now: now.clone(),
            machine: MachineModel::Ofms,
            fast_running: self.fast_current,
            opt_all_done: false,
            tasks,
        }
    }

    fn fast_finish_time(&self) -> Option<Scalar> {
        let id = self.fast_current?;
        let rem = &self.task(id).pi - &self.fast_progress[id.index()];
        rem.is_finite().then(|| &self.fast_seg_start + &rem)
    }

    /// Closes the current fast run at `now`, crediting progress.
    fn pause_fast(&mut self, now: &Scalar) {
        if let Some(id) = self.fast_current.take() {
            let ran = now - &self.fast_seg_start;
            self.segments.record(
                id,
                Lane::Fast,
                self.fast_seg_start.clone(),
                now.clone(),
                Scalar::one(),
            );
            let i = id.index();
            self.fast_progress[i] = &self.fast_progress[i] + &ran;
        }
    }

    fn start_slow(&mut self, id: TaskId, now: &Scalar) {
        let i = id.index();
        self.commit[i] = OfmsCommit::Slow;
        self.slow_start[i] = Some(now.clone());
        let sigma = self.task(id).sigma.clone();
        if sigma.is_finite() {
            let end = now + &sigma;
            self.segments
                .record(id, Lane::Slow, now.clone(), end.clone(), Scalar::one());
            if sigma.is_zero() {
                self.finish[i] = Some(now.clone());
            } else {
                self.slow_heap.push(Reverse((end, id.0)));
            }
        }
    }

    fn apply(&mut self, d: &Directive, now: &Scalar) -> Result<bool, SimError> {
        let model = self.model;
        match d {
            Directive::CommitFast(id) => {
                let i = id.index();
                if !self.arrived[i] || self.finish[i].is_some() {
                    return Err(violation(model, format!("commit of unavailable task {id}")));
                }
                match self.commit[i] {
                    OfmsCommit::Fast => Ok(false),
                    OfmsCommit::Slow => Err(violation(model, format!("decision change on {id}"))),
                    OfmsCommit::None => {
                        if model == CommitmentModel::Instant && self.task(*id).arrival != *now {
                            return Err(violation(model, format!("late commitment on {id}")));
                        }
                        self.commit[i] = OfmsCommit::Fast;
                        self.events.push(PolicyEvent {
                            time: now.clone(),
                            kind: EventKind::AssignFast(*id),
                        });
                        Ok(true)
                    }
                }
            }
            Directive::StartSlow(id) => {
                let i = id.index();
                if !self.arrived[i] || self.finish[i].is_some() {
                    return Err(violation(model, format!("slow start of unavailable task {id}")));
                }
                if self.slow_start[i].is_some() {
                    return Ok(false);
                }
                if self.begun_fast[i] {
                    return Err(violation(
                        model,
                        format!("{id} has fast progress; cancel required"),
                    ));
                }
                if self.commit[i] == OfmsCommit::Fast {
                    return Err(violation(model, format!("decision change on {id}")));
                }
                if model == CommitmentModel::Instant && self.task(*id).arrival != *now {
                    return Err(violation(model, format!("late decision on {id}")));
                }
                self.events.push(PolicyEvent {
                    time: now.clone(),
                    kind: EventKind::AssignSlow(*id),
                });
                self.start_slow(*id, now);
                Ok(true)
            }
            Directive::RunFast(id) => {
                let i = id.index();
                if !self.arrived[i] || self.finish[i].is_some() {
                    return Err(violation(model, format!("fast run of unavailable task {id}")));
                }
                if self.slow_start[i].is_some() {
                    return Err(violation(model, format!("{id} is on a slow machine")));
                }
                match (self.commit[i], model) {
                    (OfmsCommit::Fast, _) => {}
                    (OfmsCommit::Slow, _) => {
                        return Err(violation(model, format!("decision change on {id}")))
                    }
                    (OfmsCommit::None, CommitmentModel::Instant) => {
                        return Err(violation(model, format!("uncommitted fast run of {id}")))
                    }
                    (OfmsCommit::None, _) => {
                        self.commit[i] = OfmsCommit::Fast;
                    }
                }
                if self.fast_current == Some(*id) {
                    return Ok(false);
                }
                self.pause_fast(now);
                self.begun_fast[i] = true;
                self.events.push(PolicyEvent {
                    time: now.clone(),
                    kind: EventKind::SetActive(*id),
                });
                let rem = &self.task(*id).pi - &self.fast_progress[i];
                if rem.is_zero() {
                    self.finish[i] = Some(now.clone());
                } else {
                    self.fast_current = Some(*id);
                    self.fast_seg_start = now.clone();
                }
                Ok(true)
            }
            Directive::CancelFastToSlow(id) => {
                if model != CommitmentModel::Never {
                    return Err(violation(model, format!("cancel of {id}")));
                }
                let i = id.index();
                if !self.arrived[i] || self.finish[i].is_some() {
                    return Err(violation(model, format!("cancel of unavailable task {id}")));
                }
                if self.slow_start[i].is_some() {
                    return Err(violation(model, format!("cancel of slow task {id}")));
                }
                if !self.begun_fast[i] {
                    return Err(violation(model, format!("cancel of unstarted task {id}")));
                }
                if self.fast_current == Some(*id) {
                    self.pause_fast(now);
                }
                self.segments.close(*id);
                self.fast_progress[i] = Scalar::zero();
                self.begun_fast[i] = false;
                self.cancelled[i] += 1;
                self.events.push(PolicyEvent {
                    time: now.clone(),
                    kind: EventKind::Cancel(*id),
                });
                self.events.push(PolicyEvent {
                    time: now.clone(),
                    kind: EventKind::AssignSlow(*id),
                });
                self.start_slow(*id, now);
                Ok(true)
            }
            Directive::Assign(..) | Directive::Demote => Err(violation(
                model,
                format!("p-processor directive {d:?} in the one-fast-many-slow regime"),
            )),
        }
    }

    fn run(mut self) -> Result<ScheduleTrace, SimError> {
        let n = self.tap.len();
        let mut now = Scalar::zero();
        loop {
            // Next decision point.
            let mut t: Option<Scalar> = None;
            let mut consider = |cand: Scalar| {
                if t.as_ref().map_or(true, |best| cand < *best) {
                    t = Some(cand);
                }
            };
            if self.arrival_idx < n {
                consider(self.tap.tasks[self.arrival_idx].arrival.clone());
            }
            if let Some(Reverse((ft, _))) = self.slow_heap.peek() {
                consider(ft.clone());
            }
            if let Some(ft) = self.fast_finish_time() {
                consider(ft);
            }
            let Some(t) = t else { break };
            now = t;
            // Completions first, then arrivals become visible.
            if self.fast_finish_time() == Some(now.clone()) {
                let id = self.fast_current.unwrap();
                self.pause_fast(&now);
                self.finish[id.index()] = Some(now.clone());
            }
            while let Some(Reverse((ft, id))) = self.slow_heap.peek() {
                if *ft != now {
                    break;
                }
                let id = TaskId(*id);
                self.finish[id.index()] = Some(now.clone());
                self.slow_heap.pop();
            }
            let mut arrived_now = Vec::new();
            while self.arrival_idx < n && self.tap.tasks[self.arrival_idx].arrival == now {
                let id = self.tap.tasks[self.arrival_idx].id;
                self.arrived[id.index()] = true;
                arrived_now.push(id);
                self.arrival_idx += 1;
            }
            // Decision rounds at this instant.
            let mut rounds = 0;
            loop {
                let view = self.view(&now);
                let directives = self.policy.decide(&view)?;
                let mut changed = false;
                for d in &directives {
                    changed |= self.apply(d, &now)?;
                }
                if !changed {
                    break;
                }
                rounds += 1;
                if rounds > 2 * n + 8 {
                    return Err(SimError::Livelock(now.clone()));
                }
            }
            if self.model == CommitmentModel::Instant {
                for id in &arrived_now {
                    if self.commit[id.index()] == OfmsCommit::None
                        && self.finish[id.index()].is_none()
                    {
                        return Err(violation(
                            self.model,
                            format!("no decision for {id} at its arrival"),
                        ));
                    }
                }
            }
            if self.finish.iter().all(|f| f.is_some()) {
                break;
            }
        }
        // Unfinished slow runs (sigma = inf) get their partial segment.
        for (i, start) in self.slow_start.clone().iter().enumerate() {
            if let (Some(s), None) = (start, &self.finish[i]) {
                if self.task(TaskId(i as u32 + 1)).sigma.is_infinite() && *s < now {
                    self.segments.record(
                        TaskId(i as u32 + 1),
                        Lane::Slow,
                        s.clone(),
                        now.clone(),
                        Scalar::one(),
                    );
                }
            }
        }
        self.pause_fast(&now);
        let finishes = self.finish.clone();
        let completion = if finishes.iter().all(|f| f.is_some()) {
            finishes
                .iter()
                .map(|f| f.clone().unwrap())
                .max()
                .unwrap_or_else(Scalar::zero)
        } else {
            Scalar::Infinite
        };
        let awake = awake_time(self.tap, &finishes);
        let records = (0..n)
            .map(|i| TaskRecord {
                task: TaskId(i as u32 + 1),
                decision: match self.commit[i] {
                    OfmsCommit::None => None,
                    OfmsCommit::Fast => Some(Lane::Fast),
                    OfmsCommit::Slow => Some(Lane::Slow),
                },
                finish: finishes[i].clone(),
                cancelled_runs: self.cancelled[i],
            })
            .collect();
        Ok(ScheduleTrace {
            regime: "ofms".to_string(),
            policy: self.policy_name,
            events: self.events,
            segments: self.segments.finish(),
            records,
            metrics: Metrics {
                completion_time: completion,
                awake_time: awake,
            },
        })
    }
}

// ---------------------------------------------------------------------------
// p-processor executor
// ---------------------------------------------------------------------------

struct SpdpExec<'a> {
    tap: &'a Tap,
    policy: &'a mut dyn Policy,
    policy_name: String,
    p: u32,
    model: CommitmentModel,
    pwo: bool,
    signal_oracle: Option<Box<SignalOracle<'a>>>,
    arrived: Vec<bool>,
    assign: Vec<Option<Mode>>,
    background: Vec<bool>,
    remaining: Vec<Scalar>,
    finish: Vec<Option<Scalar>>,
    parallel_order: Vec<TaskId>,
    segments: Segments,
    events: Vec<PolicyEvent>,
    arrival_idx: usize,
    signal_at: Option<Scalar>,
}

impl<'a> SpdpExec<'a> {
    fn new(tap: &'a Tap, policy: &'a mut dyn Policy, p: u32, options: SimOptions<'a>) -> Self {
        let n = tap.len();
        let model = policy.commitment();
        let pwo = policy.pwo();
        let wants_signal = policy.wants_opt_signal();
        let policy_name = policy.name();
        SpdpExec {
            tap,
            policy,
            policy_name,
            p,
            model,
            pwo,
            signal_oracle: if wants_signal {
                options.opt_signal_oracle
            } else {
                None
            },
            arrived: vec![false; n],
            assign: vec![None; n],
            background: vec![false; n],
            remaining: vec![Scalar::zero(); n],
            finish: vec![None; n],
            parallel_order: Vec::new(),
            segments: Segments::new(n),
            events: Vec::new(),
            arrival_idx: 0,
            signal_at: None,
        }
    }

    fn status(&self, i: usize) -> TaskStatus {
        if self.finish[i].is_some() {
            TaskStatus::Finished
        } else {
            match self.assign[i] {
                None => TaskStatus::Pending,
                Some(mode) if self.background[i] => TaskStatus::Background(mode),
                Some(mode) => TaskStatus::Assigned(mode),
            }
        }
    }

    fn view(&self, now: &Scalar, opt_all_done: bool) -> EngineView {
        let tasks = self
            .tap
            .tasks
            .iter()
            .filter(|t| self.arrived[t.id.index()])
            .map(|t| TaskView {
                id: t.id,
                sigma: t.sigma.clone(),
                arrival: t.arrival.clone(),
                status: self.status(t.id.index()),
                pi: (!self.pwo).then(|| t.pi.clone()),
            })
            .collect();
        EngineView {
            now: now.clone(),
            machine: MachineModel::Spdp(self.p),
            fast_running: None,
            opt_all_done,
            tasks,
        }
    }

    fn live(&self, i: usize) -> bool {
        self.arrived[i] && self.finish[i].is_none() && self.assign[i].is_some()
    }

    /// Processor shares for the current state: foreground serial jobs run
    /// most-work-first, leftover processors go to the first unfinished
    /// foreground parallel job, and processors still idle are split equally
    /// among background tasks (serial ones capped at unit rate).
    fn rates(&self) -> Vec<Scalar> {
        let n = self.tap.len();
        let mut rates = vec![Scalar::zero(); n];
        let fg_serial: Vec<usize> = (0..n)
            .filter(|&i| self.live(i) && !self.background[i] && self.assign[i] == Some(Mode::Serial))
            .collect();
        let rem: Vec<Scalar> = fg_serial.iter().map(|&i| self.remaining[i].clone()).collect();
        let (serial_rates, mut left) = crate::mwf::mwf_rates(self.p, &rem);
        for (k, &i) in fg_serial.iter().enumerate() {
            rates[i] = serial_rates[k].clone();
        }
        if left.is_positive() {
            if let Some(head) = self
                .parallel_order
                .iter()
                .find(|id| self.live(id.index()) && !self.background[id.index()])
            {
                rates[head.index()] = left.clone();
                left = Scalar::zero();
            }
        }
        if left.is_positive() {
            // Background water-fill: equal shares, serial capped at 1.
            let bg: Vec<usize> = (0..n)
                .filter(|&i| self.live(i) && self.background[i])
                .collect();
            if !bg.is_empty() {
                let serial_bg: Vec<usize> = bg
                    .iter()
                    .copied()
                    .filter(|&i| self.assign[i] == Some(Mode::Serial))
                    .collect();
                let count = Scalar::from_int(bg.len() as i64);
                let share = &left / &count;
                if share <= Scalar::one() || serial_bg.is_empty() {
                    for &i in &bg {
                        rates[i] = share.clone();
                    }
                } else {
                    for &i in &serial_bg {
                        rates[i] = Scalar::one();
                    }
                    let parallel_bg: Vec<usize> = bg
                        .iter()
                        .copied()
                        .filter(|&i| self.assign[i] == Some(Mode::Parallel))
                        .collect();
                    if !parallel_bg.is_empty() {
                        let rest = &left - &Scalar::from_int(serial_bg.len() as i64);
                        let share = &rest / &Scalar::from_int(parallel_bg.len() as i64);
                        for &i in &parallel_bg {
                            rates[i] = share.clone();
                        }
                    }
                }
            }
        }
        rates
    }

    /// Earliest internal dynamics change: a finish, or a most-work-first
    /// catch-up between adjacent foreground serial work levels.
    fn internal_step(&self, rates: &[Scalar]) -> Option<Scalar> {
        let n = self.tap.len();
        let mut best: Option<Scalar> = None;
        let mut consider = |cand: Scalar| {
            if cand.is_positive() && best.as_ref().map_or(true, |b| cand < *b) {
                best = Some(cand);
            }
        };
        for i in 0..n {
            if rates[i].is_positive() && self.remaining[i].is_finite() && self.live(i) {
                consider(&self.remaining[i] / &rates[i]);
            }
        }
        let mut levels: Vec<(Scalar, Scalar)> = Vec::new();
        for i in 0..n {
            if self.live(i) && !self.background[i] && self.assign[i] == Some(Mode::Serial) {
                let w = self.remaining[i].clone();
                if !levels.iter().any(|(lw, _)| *lw == w) {
                    levels.push((w, rates[i].clone()));
                }
            }
        }
        levels.sort_by(|a, b| b.0.cmp(&a.0));
        for pair in levels.windows(2) {
            let (w_hi, r_hi) = &pair[0];
            let (w_lo, r_lo) = &pair[1];
            if r_hi > r_lo && w_hi.is_finite() {
                consider((w_hi - w_lo) / &(r_hi - r_lo));
            }
        }
        best
    }

    fn apply(&mut self, d: &Directive, now: &Scalar) -> Result<bool, SimError> {
        let model = self.model;
        match d {
            Directive::Assign(id, mode) => {
                let i = id.index();
                if !self.arrived[i] || self.finish[i].is_some() {
                    return Err(violation(model, format!("assignment of unavailable task {id}")));
                }
                if let Some(prev) = self.assign[i] {
                    if prev == *mode {
                        return Ok(false);
                    }
                    return Err(violation(model, format!("decision change on {id}")));
                }
                if model == CommitmentModel::Instant && self.tap.tasks[i].arrival != *now {
                    return Err(violation(model, format!("late decision on {id}")));
                }
                self.assign[i] = Some(*mode);
                let task = &self.tap.tasks[i];
                let work = match mode {
                    Mode::Serial => task.sigma.clone(),
                    Mode::Parallel => task.pi.clone(),
                };
                self.events.push(PolicyEvent {
                    time: now.clone(),
                    kind: match mode {
                        Mode::Serial => EventKind::AssignSerial(*id),
                        Mode::Parallel => EventKind::AssignParallel(*id),
                    },
                });
                if work.is_zero() {
                    self.finish[i] = Some(now.clone());
                } else {
                    self.remaining[i] = work;
                    if *mode == Mode::Parallel {
                        self.parallel_order.push(*id);
                    }
                }
                Ok(true)
            }
            Directive::Demote => {
                let mut changed = false;
                for i in 0..self.tap.len() {
                    if self.live(i) && !self.background[i] {
                        self.background[i] = true;
                        changed = true;
                    }
                }
                if changed {
                    self.events.push(PolicyEvent {
                        time: now.clone(),
                        kind: EventKind::Demote,
                    });
                }
                Ok(changed)
            }
            _ => Err(violation(
                model,
                format!("one-fast-many-slow directive {d:?} in the p-processor regime"),
            )),
        }
    }

    fn refresh_signal(&mut self, now: &Scalar) -> Result<(), SimError> {
        if let Some(oracle) = &self.signal_oracle {
            let truncated = self.tap.truncate(now);
            let c = oracle(&truncated)?;
            self.signal_at = Some(c.max(now.clone()));
        }
        Ok(())
    }

    fn run(mut self) -> Result<ScheduleTrace, SimError> {
        let n = self.tap.len();
        let mut now = Scalar::zero();
        loop {
            let rates = self.rates();
            let mut t: Option<Scalar> = None;
            let mut consider = |cand: Scalar| {
                if t.as_ref().map_or(true, |best| cand < *best) {
                    t = Some(cand);
                }
            };
            if let Some(step) = self.internal_step(&rates) {
                consider(&now + &step);
            }
            if self.arrival_idx < n {
                consider(self.tap.tasks[self.arrival_idx].arrival.clone());
            }
            if let Some(s) = &self.signal_at {
                consider(s.clone());
            }
            let Some(t) = t else { break };
            // Advance the fluid state to t.
            let dt = &t - &now;
            if dt.is_positive() {
                for i in 0..n {
                    if rates[i].is_positive() && self.live(i) {
                        let lane = match self.assign[i].unwrap() {
                            Mode::Serial => Lane::Serial,
                            Mode::Parallel => Lane::Parallel,
                        };
                        self.segments.record(
                            TaskId(i as u32 + 1),
                            lane,
                            now.clone(),
                            t.clone(),
                            rates[i].clone(),
                        );
                        if self.remaining[i].is_finite() {
                            self.remaining[i] = &self.remaining[i] - &(&rates[i] * &dt);
                            if self.remaining[i].is_zero() {
                                self.finish[i] = Some(t.clone());
                            }
                        }
                    }
                }
            }
            now = t;
            let mut arrived_now = Vec::new();
            while self.arrival_idx < n && self.tap.tasks[self.arrival_idx].arrival == now {
                let id = self.tap.tasks[self.arrival_idx].id;
                self.arrived[id.index()] = true;
                arrived_now.push(id);
                self.arrival_idx += 1;
            }
            let mut opt_all_done = false;
            if !arrived_now.is_empty() {
                // New arrivals re-arm the signal at the new optimum finish.
                self.refresh_signal(&now)?;
            } else if self.signal_at == Some(now.clone()) {
                self.signal_at = None;
                opt_all_done = true;
            }
            let mut rounds = 0;
            loop {
                let view = self.view(&now, opt_all_done);
                let directives = self.policy.decide(&view)?;
                let mut changed = false;
                for d in &directives {
                    changed |= self.apply(d, &now)?;
                }
                if !changed {
                    break;
                }
                rounds += 1;
                if rounds > 2 * n + 8 {
                    return Err(SimError::Livelock(now.clone()));
                }
            }
            if self.model == CommitmentModel::Instant {
                for id in &arrived_now {
                    if self.assign[id.index()].is_none() && self.finish[id.index()].is_none() {
                        return Err(violation(
                            self.model,
                            format!("no decision for {id} at its arrival"),
                        ));
                    }
                }
            }
            if self.finish.iter().all(|f| f.is_some()) {
                break;
            }
        }
        let finishes = self.finish.clone();
        let completion = if finishes.iter().all(|f| f.is_some()) {
            finishes
                .iter()
                .map(|f| f.clone().unwrap())
                .max()
                .unwrap_or_else(Scalar::zero)
        } else {
            Scalar::Infinite
        };
        let awake = awake_time(self.tap, &finishes);
        let records = (0..n)
            .map(|i| TaskRecord {
                task: TaskId(i as u32 + 1),
                decision: match self.assign[i] {
                    None => None,
                    Some(Mode::Serial) => Some(Lane::Serial),
                    Some(Mode::Parallel) => Some(Lane::Parallel),
                },
                finish: finishes[i].clone(),
                cancelled_runs: 0,
            })
            .collect();
        Ok(ScheduleTrace {
            regime: format!("spdp:{}", self.p),
            policy: self.policy_name,
            events: self.events,
            segments: self.segments.finish(),
            records,
            metrics: Metrics {
                completion_time: completion,
                awake_time: awake,
            },
        })
    }
}
