//! The online schedulers: threshold policies for the one-fast-many-slow
//! regime, the instantly-committing p-processor scheduler, the
//! parallel-work-oblivious single-arrival scheduler with its batching
//! transformation, and the sqrt(p) decide-on-arrival scheduler.
//!
//! Each policy consults an optimum oracle for `C^t`, the optimal completion
//! of the arrival prefix. Decision rules compare `sigma_i + t` against
//! threshold multiples of `C^t` with exact semantics: `ins` fires fast on a
//! strict `>`, `eve` and `nev` fire slow on a non-strict `<=`.

use std::collections::{HashMap, VecDeque};

use crate::constants::ThresholdConstant;
use crate::engine::{
    CommitmentModel, Directive, EngineView, Mode, Policy, PolicyError, TaskStatus, TaskView,
};
use crate::offline::{brute_force_exact, single_arrival_exact, OfmsOptOracle};
use crate::scalar::Scalar;
use crate::task::{MachineModel, Tap, Task, TaskId};

/// Optimum oracle selector for p-processor policies: exact enumeration up to
/// a cap, or the offline approximation scheme (which dilates the caller's
/// competitive guarantee by `1 + eps`).
#[derive(Clone, Debug)]
pub enum SpdpOracle {
    BruteForce { cap: usize },
    Ptas { eps: Scalar },
}

impl SpdpOracle {
    pub fn completion(&self, tap: &Tap, p: u32) -> Result<Scalar, PolicyError> {
        match self {
            SpdpOracle::BruteForce { cap } => brute_force_exact(tap, MachineModel::Spdp(p), *cap)
                .map(|(c, _)| c)
                .map_err(|e| PolicyError::OracleOverflow(e.to_string())),
            SpdpOracle::Ptas { eps } => crate::ptas::ptas_offline(tap, p, eps, usize::MAX)
                .map(|r| r.completion)
                .map_err(|e| PolicyError::OracleOverflow(e.to_string())),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            SpdpOracle::BruteForce { cap } => format!("brute:{cap}"),
            SpdpOracle::Ptas { eps } => format!("ptas:{}", eps.canonical()),
        }
    }
}

/// Bisection enclosure of the real root of `2x^3 - 3x^2 - 1`.
pub fn xi_constant(precision: &Scalar) -> (Scalar, Scalar) {
    ThresholdConstant::xi().enclosure(precision)
}

fn feed_oracle(oracle: &mut OfmsOptOracle, seen: &mut usize, view: &EngineView) -> Result<(), PolicyError> {
    for t in &view.tasks()[*seen..] {
        oracle.push(&Task::new(
            t.id.0,
            t.sigma.clone(),
            t.pi()?.clone(),
            t.arrival.clone(),
        ));
    }
    *seen = view.tasks().len();
    Ok(())
}

// ---------------------------------------------------------------------------
// ins: instantly-committing, one-fast-many-slow
// ---------------------------------------------------------------------------

/// On arrival: fast (FIFO queue) iff `sigma_i + t_i > 2 C^{t_i}`, else a
/// fresh slow machine.
pub struct InsPolicy {
    oracle: OfmsOptOracle,
    seen: usize,
    queue: VecDeque<TaskId>,
}

pub fn policy_ins() -> InsPolicy {
    InsPolicy {
        oracle: OfmsOptOracle::new(),
        seen: 0,
        queue: VecDeque::new(),
    }
}

impl Policy for InsPolicy {
    fn name(&self) -> String {
        "ins".to_string()
    }

    fn commitment(&self) -> CommitmentModel {
        CommitmentModel::Instant
    }

    fn decide(&mut self, view: &EngineView) -> Result<Vec<Directive>, PolicyError> {
        let mut out = Vec::new();
        let first_new = self.seen;
        feed_oracle(&mut self.oracle, &mut self.seen, view)?;
        if first_new < view.tasks().len() {
            let c = self.oracle.completion();
            for t in &view.tasks()[first_new..] {
                let fast = if t.sigma.is_infinite() {
                    true
                } else if c.is_infinite() {
                    false
                } else {
                    t.slow_finish_bound() > Scalar::from_int(2) * &c
                };
                if fast {
                    out.push(Directive::CommitFast(t.id));
                    self.queue.push_back(t.id);
                } else {
                    out.push(Directive::StartSlow(t.id));
                }
            }
        }
        while let Some(front) = self.queue.front().copied() {
            if view
                .task(front)
                .is_some_and(|t| t.status == TaskStatus::Finished)
            {
                self.queue.pop_front();
            } else {
                break;
            }
        }
        if view.fast_running.is_none() {
            if let Some(front) = self.queue.front().copied() {
                out.push(Directive::RunFast(front));
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// eve: eventually-committing, one-fast-many-slow
// ---------------------------------------------------------------------------

/// Unstarted tasks with `sigma_i + t <= xi C^t` start on slow machines; at
/// most one active task holds the fast machine, chosen as the unstarted task
/// with the largest `sigma_i + t_i` (ties to the smaller id).
pub struct EvePolicy {
    oracle: OfmsOptOracle,
    seen: usize,
    xi: ThresholdConstant,
}

pub fn policy_eve() -> EvePolicy {
    EvePolicy {
        oracle: OfmsOptOracle::new(),
        seen: 0,
        xi: ThresholdConstant::xi(),
    }
}

impl Policy for EvePolicy {
    fn name(&self) -> String {
        "eve".to_string()
    }

    fn commitment(&self) -> CommitmentModel {
        CommitmentModel::Eventual
    }

    fn decide(&mut self, view: &EngineView) -> Result<Vec<Directive>, PolicyError> {
        let mut out = Vec::new();
        feed_oracle(&mut self.oracle, &mut self.seen, view)?;
        let c = self.oracle.completion();
        for t in view.tasks() {
            if t.status != TaskStatus::Pending || t.sigma.is_infinite() {
                continue;
            }
            let bound = &t.sigma + &view.now;
            let slow = if c.is_infinite() {
                true
            } else {
                self.xi.cmp_product(&c, &bound) != std::cmp::Ordering::Less
            };
            if slow {
                out.push(Directive::StartSlow(t.id));
            }
        }
        if out.is_empty() && view.fast_running.is_none() {
            let candidate = view
                .tasks()
                .iter()
                .filter(|t| t.status == TaskStatus::Pending)
                .max_by(|a, b| {
                    a.slow_finish_bound()
                        .cmp(&b.slow_finish_bound())
                        .then(b.id.0.cmp(&a.id.0))
                });
            if let Some(t) = candidate {
                out.push(Directive::RunFast(t.id));
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// nev: never-committing, one-fast-many-slow
// ---------------------------------------------------------------------------

/// Tasks not on a slow machine with `sigma_i + t <= 1.5 C^t` move to a slow
/// machine, cancelling any fast progress; the fast machine runs the present
/// not-on-slow task with the largest `sigma_i + t_i` (ties to smaller id).
pub struct NevPolicy {
    oracle: OfmsOptOracle,
    seen: usize,
}

pub fn policy_nev() -> NevPolicy {
    NevPolicy {
        oracle: OfmsOptOracle::new(),
        seen: 0,
    }
}

impl Policy for NevPolicy {
    fn name(&self) -> String {
        "nev".to_string()
    }

    fn commitment(&self) -> CommitmentModel {
        CommitmentModel::Never
    }

    fn decide(&mut self, view: &EngineView) -> Result<Vec<Directive>, PolicyError> {
        let mut out = Vec::new();
        feed_oracle(&mut self.oracle, &mut self.seen, view)?;
        let c = self.oracle.completion();
        let movable = |t: &TaskView| {
            matches!(
                t.status,
                TaskStatus::Pending | TaskStatus::OnFast | TaskStatus::FastPaused
            )
        };
        for t in view.tasks() {
            if !movable(t) || t.sigma.is_infinite() {
                continue;
            }
            let slow = if c.is_infinite() {
                true
            } else {
                &t.sigma + &view.now <= Scalar::ratio(3, 2) * &c
            };
            if slow {
                out.push(match t.status {
                    TaskStatus::Pending => Directive::StartSlow(t.id),
                    _ => Directive::CancelFastToSlow(t.id),
                });
            }
        }
        if out.is_empty() {
            let candidate = view
                .tasks()
                .iter()
                .filter(|t| movable(t))
                .max_by(|a, b| {
                    a.slow_finish_bound()
                        .cmp(&b.slow_finish_bound())
                        .then(b.id.0.cmp(&a.id.0))
                });
            if let Some(t) = candidate {
                if view.fast_running != Some(t.id) {
                    out.push(Directive::RunFast(t.id));
                }
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// ins for the general p-processor regime
// ---------------------------------------------------------------------------

/// On arrival: parallelize iff `sigma_i + t_i > 2 C^{t_i}` with `C^t` from the
/// configured oracle; execution is most-work-first with leftover processors on
/// one parallel job.
pub struct InsSpdpPolicy {
    oracle: SpdpOracle,
    arrived: Vec<Task>,
}

pub fn policy_ins_spdp(oracle: SpdpOracle) -> InsSpdpPolicy {
    InsSpdpPolicy {
        oracle,
        arrived: Vec::new(),
    }
}

impl Policy for InsSpdpPolicy {
    fn name(&self) -> String {
        format!("ins-spdp[oracle={}]", self.oracle.describe())
    }

    fn commitment(&self) -> CommitmentModel {
        CommitmentModel::Instant
    }

    fn decide(&mut self, view: &EngineView) -> Result<Vec<Directive>, PolicyError> {
        let MachineModel::Spdp(p) = view.machine else {
            return Err(PolicyError::Unsupported(
                "ins-spdp needs the p-processor regime".to_string(),
            ));
        };
        let mut out = Vec::new();
        let first_new = self.arrived.len();
        for t in &view.tasks()[first_new..] {
            self.arrived.push(Task::new(
                t.id.0,
                t.sigma.clone(),
                t.pi()?.clone(),
                t.arrival.clone(),
            ));
        }
        if first_new < self.arrived.len() {
            let tap = Tap::new(self.arrived.clone());
            let c = self.oracle.completion(&tap, p)?;
            for t in &view.tasks()[first_new..] {
                let parallel = if t.sigma.is_infinite() {
                    true
                } else if c.is_infinite() {
                    false
                } else {
                    t.slow_finish_bound() > Scalar::from_int(2) * &c
                };
                out.push(Directive::Assign(
                    t.id,
                    if parallel { Mode::Parallel } else { Mode::Serial },
                ));
            }
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// til: parallel-work-oblivious single-arrival scheduler
// ---------------------------------------------------------------------------

/// Sorts by serial work descending and parallelizes tasks one at a time
/// (whole machine each) while `(t + sigma_next) / (t + rem/p) < 2`; at the
/// first time the ratio reaches 2, serializes everything left under
/// most-work-first.
pub struct PwoTilPolicy {
    started: bool,
    start_time: Scalar,
    order: Vec<(TaskId, Scalar)>,
    i_star: usize,
    switched: bool,
    task_count: usize,
}

pub fn policy_pwo_til() -> PwoTilPolicy {
    PwoTilPolicy {
        started: false,
        start_time: Scalar::zero(),
        order: Vec::new(),
        i_star: 0,
        switched: false,
        task_count: 0,
    }
}

impl Policy for PwoTilPolicy {
    fn name(&self) -> String {
        "pwo-til".to_string()
    }

    fn commitment(&self) -> CommitmentModel {
        CommitmentModel::Eventual
    }

    fn pwo(&self) -> bool {
        true
    }

    fn decide(&mut self, view: &EngineView) -> Result<Vec<Directive>, PolicyError> {
        let MachineModel::Spdp(p) = view.machine else {
            return Err(PolicyError::Unsupported(
                "pwo-til needs the p-processor regime".to_string(),
            ));
        };
        let mut out = Vec::new();
        if !self.started {
            self.started = true;
            self.start_time = view.now.clone();
            self.task_count = view.tasks().len();
            self.order = view
                .tasks()
                .iter()
                .map(|t| (t.id, t.sigma.clone()))
                .collect();
            self.order
                .sort_by(|a, b| b.1.cmp(&a.1).then(a.0 .0.cmp(&b.0 .0)));
            if let Some((first, _)) = self.order.first() {
                out.push(Directive::Assign(*first, Mode::Parallel));
                self.i_star = 1;
            }
        } else if view.tasks().len() != self.task_count {
            return Err(PolicyError::Unsupported(
                "pwo-til requires a single arrival time".to_string(),
            ));
        }
        if self.switched {
            return Ok(out);
        }
        let parallel_busy = |v: &EngineView, extra: &[TaskId]| {
            v.tasks().iter().any(|t| {
                matches!(t.status, TaskStatus::Assigned(Mode::Parallel))
                    || extra.contains(&t.id)
            })
        };
        let mut just_parallelized: Vec<TaskId> = out
            .iter()
            .filter_map(|d| match d {
                Directive::Assign(id, Mode::Parallel) => Some(*id),
                _ => None,
            })
            .collect();
        let rel_t = &view.now - &self.start_time;
        let processors = Scalar::from_int(p as i64);
        while self.i_star < self.order.len() {
            let (next, sigma_next) = self.order[self.i_star].clone();
            if sigma_next.is_infinite() {
                if parallel_busy(view, &just_parallelized) {
                    break;
                }
                out.push(Directive::Assign(next, Mode::Parallel));
                just_parallelized.push(next);
                self.i_star += 1;
                continue;
            }
            if sigma_next.is_zero() {
                // Serializing zero serial work is free.
                self.switch(&mut out);
                break;
            }
            let rem: Scalar = self.order[self.i_star..]
                .iter()
                .fold(Scalar::zero(), |acc, (_, s)| acc + s);
            let lhs = &rel_t + &sigma_next;
            let rhs = Scalar::from_int(2) * (&rel_t + &(&rem / &processors));
            if lhs >= rhs {
                self.switch(&mut out);
                break;
            }
            if parallel_busy(view, &just_parallelized) {
                break;
            }
            out.push(Directive::Assign(next, Mode::Parallel));
            just_parallelized.push(next);
            self.i_star += 1;
        }
        Ok(out)
    }
}

impl PwoTilPolicy {
    fn switch(&mut self, out: &mut Vec<Directive>) {
        for (id, _) in &self.order[self.i_star..] {
            out.push(Directive::Assign(*id, Mode::Serial));
        }
        self.i_star = self.order.len();
        self.switched = true;
    }
}

// ---------------------------------------------------------------------------
// Batching transformation
// ---------------------------------------------------------------------------

/// Turns a single-arrival-time policy into one for general TAPs: whenever
/// tasks are alive but none running, all alive tasks become one batch handled
/// by a fresh inner policy; tasks arriving mid-batch wait for the next batch.
pub struct BatchTransform {
    factory: Box<dyn Fn() -> Box<dyn Policy>>,
    inner_name: String,
    inner_pwo: bool,
    claimed_ratio: Scalar,
    batch: Option<Batch>,
}

struct Batch {
    inner: Box<dyn Policy>,
    members: Vec<TaskId>,
    start: Scalar,
}

pub fn batch_transform(
    factory: Box<dyn Fn() -> Box<dyn Policy>>,
    claimed_ratio: Scalar,
) -> BatchTransform {
    let sample = factory();
    BatchTransform {
        inner_name: sample.name(),
        inner_pwo: sample.pwo(),
        factory,
        claimed_ratio,
        batch: None,
    }
}

/// The 4-competitive parallel-work-oblivious scheduler: batching around til.
pub fn policy_pwo_batched() -> BatchTransform {
    batch_transform(Box::new(|| Box::new(policy_pwo_til())), Scalar::from_int(2))
}

/// The 2-competitive vanilla scheduler: batching around the exact
/// single-arrival optimizer.
pub fn policy_batched_exact() -> BatchTransform {
    batch_transform(
        Box::new(|| Box::new(ExactSingleArrivalPolicy { done: false })),
        Scalar::one(),
    )
}

impl Policy for BatchTransform {
    fn name(&self) -> String {
        format!(
            "batched[inner={},r={}]",
            self.inner_name,
            self.claimed_ratio.canonical()
        )
    }

    fn commitment(&self) -> CommitmentModel {
        CommitmentModel::Eventual
    }

    fn pwo(&self) -> bool {
        self.inner_pwo
    }

    fn decide(&mut self, view: &EngineView) -> Result<Vec<Directive>, PolicyError> {
        if let Some(batch) = &self.batch {
            let done = batch.members.iter().all(|id| {
                view.task(*id)
                    .is_some_and(|t| t.status == TaskStatus::Finished)
            });
            if done {
                self.batch = None;
            }
        }
        if self.batch.is_none() {
            let alive: Vec<TaskId> = view
                .tasks()
                .iter()
                .filter(|t| t.status != TaskStatus::Finished)
                .map(|t| t.id)
                .collect();
            if !alive.is_empty() {
                self.batch = Some(Batch {
                    inner: (self.factory)(),
                    members: alive,
                    start: view.now.clone(),
                });
            }
        }
        let Some(batch) = &mut self.batch else {
            return Ok(Vec::new());
        };
        let inner_tasks: Vec<TaskView> = view
            .tasks()
            .iter()
            .filter(|t| batch.members.contains(&t.id))
            .map(|t| {
                TaskView::assemble(
                    t.id,
                    t.sigma.clone(),
                    Scalar::zero(),
                    t.status,
                    t.redacted_pi(),
                )
            })
            .collect();
        let inner_view = EngineView::assemble(
            &view.now - &batch.start,
            view.machine,
            view.fast_running,
            false,
            inner_tasks,
        );
        batch.inner.decide(&inner_view)
    }
}

/// Inner policy for the batched vanilla scheduler: one exact single-arrival
/// assignment per batch.
struct ExactSingleArrivalPolicy {
    done: bool,
}

impl Policy for ExactSingleArrivalPolicy {
    fn name(&self) -> String {
        "exact-single-arrival".to_string()
    }

    fn commitment(&self) -> CommitmentModel {
        CommitmentModel::Eventual
    }

    fn decide(&mut self, view: &EngineView) -> Result<Vec<Directive>, PolicyError> {
        if self.done {
            return Ok(Vec::new());
        }
        let MachineModel::Spdp(p) = view.machine else {
            return Err(PolicyError::Unsupported(
                "exact-single-arrival needs the p-processor regime".to_string(),
            ));
        };
        self.done = true;
        let mut works = Vec::new();
        for t in view.tasks() {
            works.push((t.sigma.clone(), t.pi()?.clone()));
        }
        let (_, _, modes) = single_arrival_exact(&works, p);
        Ok(view
            .tasks()
            .iter()
            .zip(modes)
            .map(|(t, m)| Directive::Assign(t.id, m))
            .collect())
    }
}

// ---------------------------------------------------------------------------
// sqrt(p) decide-on-arrival scheduler
// ---------------------------------------------------------------------------

/// Buckets tasks by `ceil(log2 sigma)`; the first `ceil(sqrt(p))` arrivals of
/// each bucket run parallel, the rest serial. When the optimum would have
/// finished everything present, running tasks are demoted to the background
/// (idle processors only) and the bucket counters reset.
pub struct SqrtpDoaPolicy {
    counts: HashMap<Option<i64>, u32>,
    seen: usize,
}

pub fn policy_sqrtp_doa() -> SqrtpDoaPolicy {
    SqrtpDoaPolicy {
        counts: HashMap::new(),
        seen: 0,
    }
}

/// ceil(sqrt(p)) over integers.
pub fn sqrtp_quota(p: u32) -> u32 {
    let mut r = 0u32;
    while r * r < p {
        r += 1;
    }
    r
}

/// The integer `k` with `2^(k-1) < sigma <= 2^k`; `None` for infinite sigma.
pub fn size_bucket(sigma: &Scalar) -> Option<i64> {
    let r = sigma.as_rational()?;
    assert!(!r.is_zero(), "bucket of zero size");
    let mut k = r.numer().bits() as i64 - r.denom().bits() as i64 - 1;
    while *sigma > Scalar::pow2(k as i32) {
        k += 1;
    }
    Some(k)
}

impl Policy for SqrtpDoaPolicy {
    fn name(&self) -> String {
        "sqrtp-doa".to_string()
    }

    fn commitment(&self) -> CommitmentModel {
        CommitmentModel::Instant
    }

    fn pwo(&self) -> bool {
        true
    }

    fn wants_opt_signal(&self) -> bool {
        true
    }

    fn decide(&mut self, view: &EngineView) -> Result<Vec<Directive>, PolicyError> {
        let MachineModel::Spdp(p) = view.machine else {
            return Err(PolicyError::Unsupported(
                "sqrtp-doa needs the p-processor regime".to_string(),
            ));
        };
        let quota = sqrtp_quota(p);
        let mut out = Vec::new();
        if view.opt_all_done {
            out.push(Directive::Demote);
            self.counts.clear();
        }
        for t in &view.tasks()[self.seen..] {
            if t.sigma.is_zero() {
                out.push(Directive::Assign(t.id, Mode::Serial));
                continue;
            }
            let bucket = size_bucket(&t.sigma);
            let count = self.counts.entry(bucket).or_insert(0);
            if *count < quota {
                *count += 1;
                out.push(Directive::Assign(t.id, Mode::Parallel));
            } else {
                out.push(Directive::Assign(t.id, Mode::Serial));
            }
        }
        self.seen = view.tasks().len();
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(t: &str) -> Scalar {
        t.parse().unwrap()
    }

    #[test]
    fn bucket_boundaries() {
        assert_eq!(size_bucket(&sc("1")), Some(0));
        assert_eq!(size_bucket(&sc("2")), Some(1));
        assert_eq!(size_bucket(&sc("3")), Some(2));
        assert_eq!(size_bucket(&sc("4")), Some(2));
        assert_eq!(size_bucket(&sc("1/2")), Some(-1));
        assert_eq!(size_bucket(&sc("5/8")), Some(0));
        assert_eq!(size_bucket(&sc("9/16")), Some(0));
        assert_eq!(size_bucket(&sc("1/2")), Some(-1));
        assert_eq!(size_bucket(&Scalar::Infinite), None);
    }

    #[test]
    fn quota_values() {
        assert_eq!(sqrtp_quota(1), 1);
        assert_eq!(sqrtp_quota(4), 2);
        assert_eq!(sqrtp_quota(5), 3);
        assert_eq!(sqrtp_quota(16), 4);
        assert_eq!(sqrtp_quota(64), 8);
    }

    #[test]
    fn xi_constant_enclosure() {
        let (lo, hi) = xi_constant(&sc("0.001"));
        assert!(lo > sc("1.677") && hi < sc("1.679"));
        assert!(&hi - &lo <= sc("0.001"));
    }
}
