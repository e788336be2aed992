//! Offline optimal solvers: the one-fast-many-slow threshold optimizer (the
//! `C^t` oracle every online scheduler consults), an incremental variant for
//! long adversarial TAPs, the single-arrival exact optimizer, and the
//! brute-force assignment enumeration that grounds every competitive-ratio
//! test.

use crate::engine::Mode;
use crate::mwf::{most_work_first_run, mwf_finish_duration, MwfState};
use crate::scalar::Scalar;
use crate::task::{MachineModel, Tap, Task, TaskId};

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("instance of size {size} exceeds the cap {cap}")]
pub struct InstanceTooLarge {
    pub size: usize,
    pub cap: usize,
}

/// Non-idle single-machine makespan for jobs released in arrival order.
/// Any non-idling order yields the same final time; busy periods are
/// arrival-determined.
pub fn fast_makespan<'a>(jobs: impl Iterator<Item = (&'a Scalar, &'a Scalar)>) -> Scalar {
    let mut frontier = Scalar::zero();
    for (arrival, work) in jobs {
        frontier = frontier.max(arrival.clone()) + work;
    }
    frontier
}

/// Canonical optimal one-fast-many-slow schedule for a TAP.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThresholdSolution {
    pub completion: Scalar,
    /// Exactly the tasks with `sigma_i + t_i <= completion`.
    pub slow_set: Vec<TaskId>,
    /// The rest, larger `sigma_i + t_i` first, ties by smaller id.
    pub fast_order: Vec<TaskId>,
}

impl ThresholdSolution {
    /// Re-checks feasibility from scratch.
    pub fn is_feasible(&self, tap: &Tap) -> bool {
        let fast: Vec<&Task> = self
            .fast_order
            .iter()
            .map(|id| &tap.tasks[id.index()])
            .collect();
        let mut by_arrival = fast.clone();
        by_arrival.sort_by(|a, b| (&a.arrival, a.id.0).cmp(&(&b.arrival, b.id.0)));
        let makespan = fast_makespan(by_arrival.iter().map(|t| (&t.arrival, &t.pi)));
        makespan <= self.completion
            && self
                .slow_set
                .iter()
                .all(|id| tap.tasks[id.index()].slow_finish_bound() <= self.completion)
    }
}

/// Minimum completion time over all valid one-fast-many-slow schedules.
///
/// Sweeps candidate thresholds: on each segment between consecutive
/// `sigma_i + t_i` values the fast set is constant, feasibility
/// (`fast makespan <= C`) is monotone in `C`, and the minimum feasible point
/// is `max(segment start, fast makespan)`. Everything is exact.
pub fn opt_completion_ofms(tap: &Tap) -> ThresholdSolution {
    let mut starts: Vec<Scalar> = vec![Scalar::zero()];
    for task in &tap.tasks {
        let v = task.slow_finish_bound();
        if v.is_finite() && !starts.contains(&v) {
            starts.push(v);
        }
    }
    starts.sort();
    let completion = 'sweep: {
        for (i, s) in starts.iter().enumerate() {
            let makespan = fast_makespan(
                tap.tasks
                    .iter()
                    .filter(|t| t.slow_finish_bound() > *s)
                    .map(|t| (&t.arrival, &t.pi)),
            );
            let candidate = s.clone().max(makespan);
            let last = i + 1 == starts.len();
            if last || candidate < starts[i + 1] {
                break 'sweep candidate;
            }
        }
        unreachable!("last segment always feasible");
    };
    let mut slow_set = Vec::new();
    let mut fast_order = Vec::new();
    for task in &tap.tasks {
        if task.slow_finish_bound() <= completion {
            slow_set.push(task.id);
        } else {
            fast_order.push(task.id);
        }
    }
    fast_order.sort_by(|a, b| {
        let va = tap.tasks[a.index()].slow_finish_bound();
        let vb = tap.tasks[b.index()].slow_finish_bound();
        vb.cmp(&va).then(a.0.cmp(&b.0))
    });
    ThresholdSolution {
        completion,
        slow_set,
        fast_order,
    }
}

/// Incremental `C^t` oracle over a growing arrival prefix.
///
/// Tasks with `sigma = inf` are always on the fast machine; the oracle keeps
/// their busy-period structure in prefix sums plus a block-max index, so long
/// adversarial TAPs (thousands of forced-fast grains around a couple of real
/// tasks) stay cheap. Must agree with [`opt_completion_ofms`] exactly.
#[derive(Clone, Debug, Default)]
pub struct OfmsOptOracle {
    /// Finite-threshold tasks in arrival order: (v, pi, arrival).
    finite: Vec<(Scalar, Scalar, Scalar)>,
    /// Forced-fast stream: arrivals, work prefix sums (P[0] = 0), and the
    /// busy-period keys `A[k] = u_k - P[k]`.
    inf_arrivals: Vec<Scalar>,
    inf_prefix: Vec<Scalar>,
    inf_key: Vec<Scalar>,
    block_max: Vec<Scalar>,
    stuck: bool,
}

const BLOCK: usize = 64;

impl OfmsOptOracle {
    pub fn new() -> Self {
        OfmsOptOracle {
            inf_prefix: vec![Scalar::zero()],
            ..Default::default()
        }
    }

    /// Feeds the next arrival (non-decreasing arrival order required).
    pub fn push(&mut self, task: &Task) {
        let v = task.slow_finish_bound();
        if v.is_finite() {
            self.finite.push((v, task.pi.clone(), task.arrival.clone()));
        } else if task.pi.is_infinite() {
            self.stuck = true;
        } else {
            let k = self.inf_arrivals.len();
            let key = &task.arrival - self.inf_prefix.last().unwrap();
            self.inf_arrivals.push(task.arrival.clone());
            self.inf_prefix
                .push(self.inf_prefix.last().unwrap() + &task.pi);
            if k % BLOCK == 0 {
                self.block_max.push(key.clone());
            } else {
                let b = self.block_max.last_mut().unwrap();
                if key > *b {
                    *b = key.clone();
                }
            }
            self.inf_key.push(key);
        }
    }

    /// Max of `A[k]` over `lo..hi`.
    fn key_range_max(&self, lo: usize, hi: usize) -> Option<Scalar> {
        if lo >= hi {
            return None;
        }
        let mut best: Option<Scalar> = None;
        let mut consider = |x: &Scalar| {
            if best.as_ref().map_or(true, |b| x > b) {
                best = Some(x.clone());
            }
        };
        let first_block = lo / BLOCK;
        let last_block = (hi - 1) / BLOCK;
        if first_block == last_block {
            for k in lo..hi {
                consider(&self.inf_key[k]);
            }
        } else {
            for k in lo..(first_block + 1) * BLOCK {
                consider(&self.inf_key[k]);
            }
            for b in (first_block + 1)..last_block {
                consider(&self.block_max[b]);
            }
            for k in last_block * BLOCK..hi {
                consider(&self.inf_key[k]);
            }
        }
        best
    }

    fn first_inf_at_or_after(&self, t: &Scalar) -> usize {
        self.inf_arrivals.partition_point(|u| u < t)
    }

    fn first_inf_after(&self, t: &Scalar) -> usize {
        self.inf_arrivals.partition_point(|u| u <= t)
    }

    /// Fast makespan of `{finite tasks in F} U {forced-fast stream}` where `F`
    /// is the finite tasks with `v > threshold`.
    fn makespan_above(&self, threshold: &Scalar) -> Scalar {
        let total_inf = self.inf_prefix.last().unwrap().clone();
        let sel: Vec<&(Scalar, Scalar, Scalar)> = self
            .finite
            .iter()
            .filter(|(v, _, _)| v > threshold)
            .collect();
        // Suffix sums of the selected finite works (arrival order).
        let mut fin_suffix = vec![Scalar::zero(); sel.len() + 1];
        for i in (0..sel.len()).rev() {
            fin_suffix[i] = &fin_suffix[i + 1] + &sel[i].1;
        }
        let mut best = Scalar::zero();
        // Busy periods starting at a finite task.
        for (i, (_, _, arrival)) in sel.iter().enumerate() {
            let inf_from = self.first_inf_at_or_after(arrival);
            let inf_tail = &total_inf - &self.inf_prefix[inf_from];
            let cand = arrival + &fin_suffix[i] + &inf_tail;
            best = best.max(cand);
        }
        // Busy periods starting at a forced-fast grain, split into regions of
        // constant finite-suffix.
        let l = self.inf_arrivals.len();
        if l > 0 {
            let mut edges: Vec<(usize, Scalar)> = Vec::new(); // (first inf idx, fin suffix)
            let mut lo = 0;
            for (i, (_, _, arrival)) in sel.iter().enumerate() {
                // Region of grains with u <= arrival sees fin_suffix[i].
                let hi = self.first_inf_after(arrival);
                if hi > lo {
                    edges.push((lo, fin_suffix[i].clone()));
                }
                lo = lo.max(hi);
            }
            if lo < l {
                edges.push((lo, Scalar::zero()));
            }
            // Edge entries mark region starts; region r covers until the next
            // region start (or l).
            for (r, (start, suffix)) in edges.iter().enumerate() {
                let end = edges.get(r + 1).map(|(s, _)| *s).unwrap_or(l);
                if let Some(key_max) = self.key_range_max(*start, end) {
                    let cand = &key_max + &total_inf + suffix;
                    best = best.max(cand);
                }
            }
        }
        best
    }

    /// Optimal completion of the pushed prefix.
    pub fn completion(&self) -> Scalar {
        if self.stuck {
            return Scalar::Infinite;
        }
        let mut starts: Vec<Scalar> = vec![Scalar::zero()];
        for (v, _, _) in &self.finite {
            if !starts.contains(v) {
                starts.push(v.clone());
            }
        }
        starts.sort();
        for (i, s) in starts.iter().enumerate() {
            let candidate = s.clone().max(self.makespan_above(s));
            let last = i + 1 == starts.len();
            if last || candidate < starts[i + 1] {
                return candidate;
            }
        }
        unreachable!("last segment always feasible")
    }
}

/// Exact optimizer for single-arrival-time p-processor instances.
///
/// Sorts by serial work ascending; the optimum serializes a prefix. Returns
/// the completion, the split index `k` and the per-task assignment.
pub fn single_arrival_exact(works: &[(Scalar, Scalar)], p: u32) -> (Scalar, usize, Vec<Mode>) {
    let n = works.len();
    if n == 0 {
        return (Scalar::zero(), 0, Vec::new());
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| works[a].0.cmp(&works[b].0).then(a.cmp(&b)));
    let mut sigma_prefix = vec![Scalar::zero(); n + 1];
    let mut pi_suffix = vec![Scalar::zero(); n + 1];
    for i in 0..n {
        sigma_prefix[i + 1] = &sigma_prefix[i] + &works[order[i]].0;
    }
    for i in (0..n).rev() {
        pi_suffix[i] = &pi_suffix[i + 1] + &works[order[i]].1;
    }
    let processors = Scalar::from_int(p as i64);
    let mut best: Option<(Scalar, usize)> = None;
    for k in 0..=n {
        let shared = (&sigma_prefix[k] + &pi_suffix[k]) / &processors;
        let value = if k == 0 {
            shared
        } else {
            shared.max(works[order[k - 1]].0.clone())
        };
        if best.as_ref().map_or(true, |(b, _)| value < *b) {
            best = Some((value, k));
        }
    }
    let (completion, k) = best.unwrap();
    let mut assignment = vec![Mode::Parallel; n];
    for &i in order.iter().take(k) {
        assignment[i] = Mode::Serial;
    }
    (completion, k, assignment)
}

/// Completion of one fixed serial/parallel assignment on a p-processor
/// machine: arrivals feed the fluid most-work-first dynamics.
pub fn spdp_assignment_completion(tap: &Tap, assignment: &[Mode], p: u32) -> Scalar {
    let mut state = MwfState::empty();
    let mut now = Scalar::zero();
    let mut completion = Scalar::zero();
    let mut i = 0;
    let n = tap.len();
    while i < n {
        let at = tap.tasks[i].arrival.clone();
        let gap = &at - &now;
        if gap.is_positive() && !state.is_drained() {
            let adv = most_work_first_run(&state, p, &gap);
            if let Some(off) = adv.drained_at {
                completion = completion.max(&now + &off);
            }
            state = adv.state;
        }
        now = at.clone();
        while i < n && tap.tasks[i].arrival == at {
            let task = &tap.tasks[i];
            match assignment[i] {
                Mode::Serial => {
                    if task.sigma.is_zero() {
                        completion = completion.max(now.clone());
                    } else {
                        state.serial.push((task.id.0, task.sigma.clone()));
                    }
                }
                Mode::Parallel => {
                    if task.pi.is_zero() {
                        completion = completion.max(now.clone());
                    } else {
                        state.pool = &state.pool + &task.pi;
                    }
                }
            }
            i += 1;
        }
    }
    if !state.is_drained() {
        let tail = mwf_finish_duration(&state, p);
        if tail.is_infinite() {
            return Scalar::Infinite;
        }
        completion = completion.max(&now + &tail);
    }
    completion
}

/// Completion of one fixed slow/fast assignment in the one-fast-many-slow
/// regime: dedicated slow machines plus a non-idle fast machine.
pub fn ofms_assignment_completion(tap: &Tap, assignment: &[Mode]) -> Scalar {
    let mut completion = Scalar::zero();
    for (task, mode) in tap.tasks.iter().zip(assignment) {
        if *mode == Mode::Serial {
            completion = completion.max(task.slow_finish_bound());
        }
    }
    let fast = fast_makespan(
        tap.tasks
            .iter()
            .zip(assignment)
            .filter(|(_, m)| **m == Mode::Parallel)
            .map(|(t, _)| (&t.arrival, &t.pi)),
    );
    completion.max(fast)
}

pub const BRUTE_FORCE_DEFAULT_CAP: usize = 14;

/// Ground-truth oracle: enumerates all `2^n` implementation assignments and
/// simulates each (most-work-first for p processors, dedicated slow machines
/// plus a non-idle fast machine otherwise). Returns the minimum completion and
/// an achieving assignment.
pub fn brute_force_exact(
    tap: &Tap,
    machine: MachineModel,
    cap: usize,
) -> Result<(Scalar, Vec<Mode>), InstanceTooLarge> {
    let n = tap.len();
    if n > cap {
        return Err(InstanceTooLarge { size: n, cap });
    }
    let mut best: Option<(Scalar, Vec<Mode>)> = None;
    let mut assignment = vec![Mode::Serial; n];
    for mask in 0u64..(1u64 << n) {
        for (i, slot) in assignment.iter_mut().enumerate() {
            *slot = if mask >> i & 1 == 1 {
                Mode::Parallel
            } else {
                Mode::Serial
            };
        }
        let completion = match machine {
            MachineModel::Ofms => ofms_assignment_completion(tap, &assignment),
            MachineModel::Spdp(p) => spdp_assignment_completion(tap, &assignment, p),
        };
        if best.as_ref().map_or(true, |(b, _)| completion < *b) {
            best = Some((completion, assignment.clone()));
        }
    }
    Ok(best.unwrap_or((Scalar::zero(), Vec::new())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::Tap;

    fn sc(t: &str) -> Scalar {
        t.parse().unwrap()
    }

    fn tap(triples: &[(&str, &str, &str)]) -> Tap {
        Tap::from_triples(
            triples
                .iter()
                .map(|(s, p, a)| (sc(s), sc(p), sc(a)))
                .collect(),
        )
    }

    #[test]
    fn opt_single_task_runs_fast() {
        // psi-approx: completion = 2*psi ~ 0.732 for (sigma=1, pi=2psi).
        let two_psi = "0.7320508";
        let t = tap(&[("1", two_psi, "0")]);
        assert_eq!(opt_completion_ofms(&t).completion, sc(two_psi));
    }

    #[test]
    fn opt_never_committing_pair() {
        // tau1 slow, tau2 fast: completion exactly 1.
        let psi = "0.3660254";
        let one_minus_psi = "0.6339746";
        let t = Tap::from_triples(vec![
            (sc("1"), sc("0.7320508"), sc("0")),
            (Scalar::Infinite, sc(one_minus_psi), sc(psi)),
        ]);
        let sol = opt_completion_ofms(&t);
        assert_eq!(sol.completion, sc("1"));
        assert_eq!(sol.slow_set, vec![TaskId(1)]);
        assert_eq!(sol.fast_order, vec![TaskId(2)]);
    }

    #[test]
    fn opt_geometric_three_tasks() {
        let t = tap(&[("2", "1", "0"), ("4", "2", "0"), ("8", "4", "0")]);
        // First two slow (2, 4 <= 4), third fast: completion 4 = 2^{3-1}.
        assert_eq!(opt_completion_ofms(&t).completion, sc("4"));
    }

    #[test]
    fn opt_empty() {
        assert_eq!(opt_completion_ofms(&Tap::default()).completion, sc("0"));
    }

    #[test]
    fn incremental_oracle_matches_batch() {
        let t = tap(&[
            ("2", "1", "0"),
            ("inf", "1/4", "1/2"),
            ("4", "2", "1"),
            ("inf", "1/4", "1"),
            ("inf", "1/2", "2"),
            ("1", "3", "3"),
        ]);
        let mut oracle = OfmsOptOracle::new();
        for (i, task) in t.tasks.iter().enumerate() {
            oracle.push(task);
            let prefix = Tap::new(t.tasks[..=i].to_vec());
            assert_eq!(
                oracle.completion(),
                opt_completion_ofms(&prefix).completion,
                "prefix {}",
                i + 1
            );
        }
    }

    #[test]
    fn incremental_oracle_stuck_task() {
        let mut oracle = OfmsOptOracle::new();
        oracle.push(&Task::new(1, Scalar::Infinite, Scalar::Infinite, sc("0")));
        assert!(oracle.completion().is_infinite());
    }

    #[test]
    fn single_arrival_examples() {
        // sigma=(1,2,4), pi=(1,1,1), p=2: completion 3/2 at k in {0,1}.
        let works = vec![
            (sc("1"), sc("1")),
            (sc("2"), sc("1")),
            (sc("4"), sc("1")),
        ];
        let (c, k, _) = single_arrival_exact(&works, 2);
        assert_eq!(c, sc("3/2"));
        assert!(k <= 1);
        // Single task: min(sigma, pi) on p=1.
        let (c, _, modes) = single_arrival_exact(&[(sc("3"), sc("2"))], 1);
        assert_eq!(c, sc("2"));
        assert_eq!(modes, vec![Mode::Parallel]);
        assert_eq!(single_arrival_exact(&[], 4).0, sc("0"));
    }

    #[test]
    fn brute_force_tiny() {
        let t = tap(&[("1", "1", "0")]);
        let (c, _) = brute_force_exact(&t, MachineModel::Ofms, 14).unwrap();
        assert_eq!(c, sc("1"));
        let (c, _) = brute_force_exact(&t, MachineModel::Spdp(2), 14).unwrap();
        assert_eq!(c, sc("1/2"));
    }

    #[test]
    fn brute_force_cap() {
        let triples: Vec<(Scalar, Scalar, Scalar)> =
            (0..15).map(|_| (sc("1"), sc("1"), sc("0"))).collect();
        let t = Tap::from_triples(triples);
        assert!(brute_force_exact(&t, MachineModel::Ofms, 14).is_err());
    }

    #[test]
    fn spdp_assignment_fluid_sharing() {
        // p=2, three serialized tasks of 3: completion 9/2.
        let t = tap(&[("3", "1", "0"), ("3", "1", "0"), ("3", "1", "0")]);
        let c = spdp_assignment_completion(&t, &[Mode::Serial; 3], 2);
        assert_eq!(c, sc("9/2"));
    }

    #[test]
    fn spdp_assignment_with_arrivals_and_gaps() {
        let t = tap(&[("1", "1", "0"), ("1", "1", "10")]);
        let c = spdp_assignment_completion(&t, &[Mode::Serial; 2], 1);
        assert_eq!(c, sc("11"));
    }

    #[test]
    fn threshold_solution_feasibility() {
        let t = tap(&[("2", "1", "0"), ("4", "2", "0"), ("8", "4", "0")]);
        assert!(opt_completion_ofms(&t).is_feasible(&t));
    }
}
