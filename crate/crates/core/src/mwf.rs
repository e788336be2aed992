//! Fluid most-work-first dynamics for the p-processor regime.
//!
//! At every instant the `min(p, #serial)` serial jobs with the most remaining
//! work each hold one processor; jobs tied at the cutoff share the leftover
//! fractionally (the fluid limit of fine time-multiplexing). Processors not
//! taken by serial jobs drain the parallel pool. All equalization, finish and
//! drain events are resolved analytically, so the advance is exact under
//! rational arithmetic. A discrete time-slicing oracle is provided for tests.

use crate::scalar::Scalar;

/// Serial jobs (key, remaining work > 0) plus an aggregate parallel pool.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MwfState {
    pub serial: Vec<(u32, Scalar)>,
    pub pool: Scalar,
}

impl MwfState {
    pub fn new(serial: Vec<(u32, Scalar)>, pool: Scalar) -> Self {
        MwfState { serial, pool }
    }

    pub fn empty() -> Self {
        MwfState {
            serial: Vec::new(),
            pool: Scalar::zero(),
        }
    }

    pub fn is_drained(&self) -> bool {
        self.serial.is_empty() && self.pool.is_zero()
    }
}

/// Per-instant most-work-first allocation. Returns rates aligned with `rem`
/// plus the leftover processor share.
pub fn mwf_rates(p: u32, rem: &[Scalar]) -> (Vec<Scalar>, Scalar) {
    let mut rates = vec![Scalar::zero(); rem.len()];
    let mut order: Vec<usize> = (0..rem.len()).collect();
    order.sort_by(|&a, &b| rem[b].cmp(&rem[a]));
    let mut left = Scalar::from_int(p as i64);
    let mut i = 0;
    while i < order.len() && left.is_positive() {
        // Group of equal remaining work.
        let mut j = i;
        while j < order.len() && rem[order[j]] == rem[order[i]] {
            j += 1;
        }
        let size = Scalar::from_int((j - i) as i64);
        if left >= size {
            for &k in &order[i..j] {
                rates[k] = Scalar::one();
            }
            left = left - size;
        } else {
            let share = &left / &size;
            for &k in &order[i..j] {
                rates[k] = share.clone();
            }
            left = Scalar::zero();
        }
        i = j;
    }
    (rates, left)
}

/// Result of one analytic advance.
pub struct Advance {
    pub state: MwfState,
    /// Offset within the window at which everything drained, if it did.
    pub drained_at: Option<Scalar>,
    /// (key, offset) for serial jobs finishing within the window.
    pub finished: Vec<(u32, Scalar)>,
}

/// Advances the fluid dynamics by `duration` (possibly infinite: run to
/// completion, which requires all remaining work to be finite).
pub fn most_work_first_run(state: &MwfState, p: u32, duration: &Scalar) -> Advance {
    let mut serial = state.serial.clone();
    let mut pool = state.pool.clone();
    let mut elapsed = Scalar::zero();
    let mut finished = Vec::new();
    let mut drained_at = if state.is_drained() {
        Some(Scalar::zero())
    } else {
        None
    };
    loop {
        if serial.is_empty() && pool.is_zero() {
            break;
        }
        if elapsed >= *duration {
            break;
        }
        let rem: Vec<Scalar> = serial.iter().map(|(_, r)| r.clone()).collect();
        let (rates, leftover) = mwf_rates(p, &rem);
        // Earliest internal event: a serial finish, a catch-up between
        // adjacent remaining-work levels, or the pool draining.
        let mut step: Option<Scalar> = duration
            .is_finite()
            .then(|| duration - &elapsed);
        let mut consider = |cand: Scalar| {
            if cand.is_positive() && step.as_ref().map_or(true, |s| cand < *s) {
                step = Some(cand);
            }
        };
        for (i, (_, r)) in serial.iter().enumerate() {
            if rates[i].is_positive() && r.is_finite() {
                consider(r / &rates[i]);
            }
        }
        // Catch-up events between distinct work levels.
        let mut levels: Vec<(Scalar, Scalar)> = Vec::new();
        for (i, (_, r)) in serial.iter().enumerate() {
            if !levels.iter().any(|(w, _)| w == r) {
                levels.push((r.clone(), rates[i].clone()));
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
        if leftover.is_positive() && pool.is_positive() && pool.is_finite() {
            consider(&pool / &leftover);
        }
        let Some(step) = step else {
            // Nothing can happen any more (infinite works under an infinite
            // horizon); the caller interprets the surviving state.
            break;
        };
        if step.is_zero() {
            break;
        }
        for (i, (_, r)) in serial.iter_mut().enumerate() {
            if rates[i].is_positive() && r.is_finite() {
                *r = &*r - &(&rates[i] * &step);
            }
        }
        if leftover.is_positive() && pool.is_positive() && pool.is_finite() {
            let drained = &leftover * &step;
            pool = if drained >= pool { Scalar::zero() } else { &pool - &drained };
        }
        elapsed = &elapsed + &step;
        serial.retain(|(key, r)| {
            if r.is_zero() {
                finished.push((*key, elapsed.clone()));
                false
            } else {
                true
            }
        });
        if serial.is_empty() && pool.is_zero() && drained_at.is_none() {
            drained_at = Some(elapsed.clone());
        }
    }
    Advance {
        state: MwfState { serial, pool },
        drained_at,
        finished,
    }
}

/// Time to drain the state completely; infinite if any work is infinite.
pub fn mwf_finish_duration(state: &MwfState, p: u32) -> Scalar {
    if state.pool.is_infinite() || state.serial.iter().any(|(_, r)| r.is_infinite()) {
        return Scalar::Infinite;
    }
    let adv = most_work_first_run(state, p, &Scalar::Infinite);
    adv.drained_at.expect("finite work drains")
}

/// Discrete round-robin time-slicing oracle: every slice, one whole slice of
/// work goes to each of the top `min(p, #serial)` serial jobs (most remaining
/// work first, ties by key), and leftover processor-slices drain the pool.
/// Converges to the fluid dynamics as the slice width shrinks.
pub fn discrete_mwf_finish(state: &MwfState, p: u32, slice: &Scalar) -> Scalar {
    let mut serial = state.serial.clone();
    let mut pool = state.pool.clone();
    let mut t = Scalar::zero();
    while !(serial.is_empty() && pool.is_zero()) {
        serial.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let running = serial.len().min(p as usize);
        for (_, r) in serial.iter_mut().take(running) {
            *r = if *r <= *slice { Scalar::zero() } else { &*r - slice };
        }
        let leftover = Scalar::from_int((p as usize - running) as i64);
        if leftover.is_positive() && pool.is_positive() {
            let drained = &leftover * slice;
            pool = if drained >= pool { Scalar::zero() } else { &pool - &drained };
        }
        serial.retain(|(_, r)| !r.is_zero());
        t = &t + slice;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sc(t: &str) -> Scalar {
        t.parse().unwrap()
    }

    fn state(serial: &[&str], pool: &str) -> MwfState {
        MwfState::new(
            serial
                .iter()
                .enumerate()
                .map(|(i, r)| (i as u32 + 1, sc(r)))
                .collect(),
            sc(pool),
        )
    }

    #[test]
    fn three_equal_jobs_share_two_processors() {
        // Total work 9 on 2 processors with equalizing shares: all done at 4.5.
        let d = mwf_finish_duration(&state(&["3", "3", "3"], "0"), 2);
        assert_eq!(d, sc("9/2"));
    }

    #[test]
    fn one_processor_each() {
        let d = mwf_finish_duration(&state(&["2", "2", "2"], "0"), 3);
        assert_eq!(d, sc("2"));
    }

    #[test]
    fn single_processor_drains_pool() {
        let adv = most_work_first_run(&state(&[], "5"), 1, &sc("3"));
        assert_eq!(adv.state.pool, sc("2"));
        assert!(adv.drained_at.is_none());
    }

    #[test]
    fn small_job_finishes_at_window_edge() {
        // p=2, serial {5, 1}, pool 4: both serial jobs hold a processor, the
        // pool waits; the size-1 job finishes exactly at t=1.
        let adv = most_work_first_run(&state(&["5", "1"], "4"), 2, &sc("1"));
        assert_eq!(adv.state.pool, sc("4"));
        assert_eq!(adv.state.serial, vec![(1, sc("4"))]);
        assert_eq!(adv.finished, vec![(2, sc("1"))]);
    }

    #[test]
    fn completion_is_work_or_serial_bound() {
        // max(W/p, sigma_max): {10,1,1} on p=2 ends serial-bound at 10.
        assert_eq!(mwf_finish_duration(&state(&["10", "1", "1"], "0"), 2), sc("10"));
        // {4,4,3} on p=2 ends work-bound at 11/2.
        assert_eq!(mwf_finish_duration(&state(&["4", "4", "3"], "0"), 2), sc("11/2"));
        // Pool finishes on freed processors: {5,1,1} + pool 4 on p=2.
        assert_eq!(mwf_finish_duration(&state(&["5", "1", "1"], "4"), 2), sc("11/2"));
    }

    #[test]
    fn infinite_serial_never_drains() {
        assert_eq!(
            mwf_finish_duration(&state(&["inf", "1"], "0"), 2),
            Scalar::Infinite
        );
    }

    #[test]
    fn discrete_oracle_converges() {
        let st = state(&["3", "3", "3"], "2");
        let exact = mwf_finish_duration(&st, 2);
        let mut prev_err: Option<Scalar> = None;
        for slice in ["1/100", "1/1000", "1/10000"] {
            let approx = discrete_mwf_finish(&st, 2, &sc(slice));
            let err = if approx > exact {
                &approx - &exact
            } else {
                &exact - &approx
            };
            // Within slice-width * job-count.
            assert!(err <= sc(slice) * Scalar::from_int(4));
            if let Some(p) = prev_err {
                assert!(err <= p);
            }
            prev_err = Some(err);
        }
    }
}
