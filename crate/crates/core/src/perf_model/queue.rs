//! Single-server FCFS queue at the security agent with per-request deadlines.
//!
//! Requests arrive at rate `lambda = c_k / t_SF^SA`, each needs a fixed
//! service time `t_SF^SA`, and succeeds iff waiting plus service fits within
//! its expiration time `t_exp`.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::PerfError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArrivalProcess {
    Poisson,
    /// Evenly spaced arrivals at `1 / lambda`.
    Deterministic,
}

/// What happens to a request whose deadline cannot be met.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Abandonment {
    /// Leaves the queue once its deadline passes while waiting; a request
    /// that reaches the server is served to completion even if it will
    /// finish late.
    WhileQueued,
    /// Dropped when it reaches the server if it can no longer finish in time.
    AtServiceStart,
    /// Every request is served; late ones count as failures.
    Never,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueConfig {
    /// `c_k = lambda * t_SF^SA`.
    pub scaled_rate: f64,
    pub service_ms: f64,
    /// `f64::INFINITY` disables deadlines.
    pub expiration_ms: f64,
    pub requests: usize,
    pub seed: u64,
    pub arrivals: ArrivalProcess,
    pub abandonment: Abandonment,
}

impl QueueConfig {
    pub fn new(
        scaled_rate: f64,
        service_ms: f64,
        expiration_ms: f64,
        requests: usize,
        seed: u64,
    ) -> Self {
        Self {
            scaled_rate,
            service_ms,
            expiration_ms,
            requests,
            seed,
            arrivals: ArrivalProcess::Poisson,
            abandonment: Abandonment::WhileQueued,
        }
    }

    pub fn arrival_rate_per_ms(&self) -> f64 {
        self.scaled_rate / self.service_ms
    }

    pub fn validate(&self) -> Result<(), PerfError> {
        if !(self.scaled_rate > 0.0 && self.scaled_rate <= 1.0) {
            return Err(PerfError::InvalidQueue(format!(
                "scaled arrival rate {} outside (0, 1]",
                self.scaled_rate
            )));
        }
        if !(self.service_ms > 0.0 && self.service_ms.is_finite()) {
            return Err(PerfError::InvalidQueue(format!(
                "service time {} must be positive",
                self.service_ms
            )));
        }
        if !(self.expiration_ms > 0.0) {
            return Err(PerfError::InvalidQueue(format!(
                "expiration time {} must be positive",
                self.expiration_ms
            )));
        }
        if self.requests == 0 {
            return Err(PerfError::InvalidQueue(
                "request count must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueReport {
    pub requests: usize,
    pub successes: usize,
    pub abandoned: usize,
    pub late: usize,
    pub success_rate: f64,
    /// Mean `t_Q^SA` over successful requests.
    pub mean_wait_ms: f64,
    /// Mean `t_RSF^SA = t_Q^SA + t_SF^SA` over successful requests.
    pub mean_total_ms: f64,
    /// `c_2 = t_RSF^SA / t_SF^SA`.
    pub scaled_total: f64,
}

/// Runs the queue for `config.requests` arrivals.
///
/// With a single FCFS server, a request's service start is the later of its
/// arrival and the completion of the last request that actually occupied
/// the server, so the event loop reduces to one pass over arrivals.
pub fn simulate_queue(config: &QueueConfig) -> Result<QueueReport, PerfError> {
    config.validate()?;
    let s = config.service_ms;
    let t_exp = config.expiration_ms;
    let mean_gap = 1.0 / config.arrival_rate_per_ms();
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);

    let mut now = 0.0f64;
    let mut server_free_at = 0.0f64;
    let (mut successes, mut abandoned, mut late) = (0usize, 0usize, 0usize);
    let mut wait_sum = 0.0f64;

    for _ in 0..config.requests {
        let gap = match config.arrivals {
            ArrivalProcess::Poisson => {
                let unit: f64 = Exp1.sample(&mut rng);
                unit * mean_gap
            }
            ArrivalProcess::Deterministic => mean_gap,
        };
        now += gap;
        let start = now.max(server_free_at);
        let wait = start - now;
        let on_time = wait + s <= t_exp;
        let serve = match config.abandonment {
            Abandonment::WhileQueued => wait < t_exp,
            Abandonment::AtServiceStart => on_time,
            Abandonment::Never => true,
        };
        if !serve {
            abandoned += 1;
            continue;
        }
        server_free_at = start + s;
        if on_time {
            successes += 1;
            wait_sum += wait;
        } else {
            late += 1;
        }
    }

    let mean_wait = if successes > 0 {
        wait_sum / successes as f64
    } else {
        0.0
    };
    Ok(QueueReport {
        requests: config.requests,
        successes,
        abandoned,
        late,
        success_rate: successes as f64 / config.requests as f64,
        mean_wait_ms: mean_wait,
        mean_total_ms: mean_wait + s,
        scaled_total: (mean_wait + s) / s,
    })
}

/// Pollaczek-Khinchine mean wait for M/D/1: `rho * s / (2 (1 - rho))`.
pub fn md1_mean_wait(rho: f64, service_ms: f64) -> f64 {
    rho * service_ms / (2.0 * (1.0 - rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cmp::Ordering;
    use std::collections::{BinaryHeap, VecDeque};

    /// Event-driven reference: explicit arrival, departure and deadline
    /// events on a priority queue, with the waiting line held as a deque.
    fn event_oracle(config: &QueueConfig) -> (usize, usize, usize, f64) {
        #[derive(PartialEq)]
        struct Ev(f64, u64, Kind);
        #[derive(PartialEq, Clone, Copy)]
        enum Kind {
            Arrival(usize),
            Departure,
            Deadline(usize),
        }
        impl Eq for Ev {}
        impl PartialOrd for Ev {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Ev {
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
            }
        }
        let s = config.service_ms;
        let gap = 1.0 / config.arrival_rate_per_ms();
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let mut arrivals = Vec::with_capacity(config.requests);
        let mut t = 0.0;
        for _ in 0..config.requests {
            let g = match config.arrivals {
                ArrivalProcess::Poisson => {
                    let u: f64 = Exp1.sample(&mut rng);
                    u * gap
                }
                ArrivalProcess::Deterministic => gap,
            };
            t += g;
            arrivals.push(t);
        }
        let mut heap = BinaryHeap::new();
        let mut seq = 0u64;
        let mut push = |heap: &mut BinaryHeap<Ev>, at: f64, k: Kind| {
            heap.push(Ev(at, seq, k));
            seq += 1;
        };
        for (i, a) in arrivals.iter().enumerate() {
            push(&mut heap, *a, Kind::Arrival(i));
        }
        let mut line: VecDeque<usize> = VecDeque::new();
        let mut gone = vec![false; config.requests];
        let mut busy = false;
        let (mut ok, mut ab, mut late, mut wsum) = (0, 0, 0, 0.0);
        let start_next = |now: f64,
                          line: &mut VecDeque<usize>,
                          gone: &mut [bool],
                          heap: &mut BinaryHeap<Ev>,
                          push: &mut dyn FnMut(&mut BinaryHeap<Ev>, f64, Kind),
                          ok: &mut usize,
                          ab: &mut usize,
                          late: &mut usize,
                          wsum: &mut f64|
         -> bool {
            while let Some(i) = line.pop_front() {
                if gone[i] {
                    continue;
                }
                let wait = now - arrivals[i];
                let on_time = wait + s <= config.expiration_ms;
                if config.abandonment == Abandonment::AtServiceStart && !on_time {
                    gone[i] = true;
                    *ab += 1;
                    continue;
                }
                gone[i] = true;
                if on_time {
                    *ok += 1;
                    *wsum += wait;
                } else {
                    *late += 1;
                }
                push(heap, now + s, Kind::Departure);
                return true;
            }
            false
        };
        while let Some(Ev(now, _, kind)) = heap.pop() {
            match kind {
                Kind::Arrival(i) => {
                    line.push_back(i);
                    if config.abandonment == Abandonment::WhileQueued
                        && config.expiration_ms.is_finite()
                    {
                        push(&mut heap, now + config.expiration_ms, Kind::Deadline(i));
                    }
                    if !busy {
                        busy = start_next(
                            now, &mut line, &mut gone, &mut heap, &mut push, &mut ok, &mut ab,
                            &mut late, &mut wsum,
                        );
                    }
                }
                Kind::Departure => {
                    busy = start_next(
                        now, &mut line, &mut gone, &mut heap, &mut push, &mut ok, &mut ab,
                        &mut late, &mut wsum,
                    );
                }
                Kind::Deadline(i) => {
                    if !gone[i] {
                        gone[i] = true;
                        ab += 1;
                    }
                }
            }
        }
        (ok, ab, late, wsum)
    }

    #[test]
    fn matches_event_oracle_for_every_policy() {
        for abandonment in [
            Abandonment::WhileQueued,
            Abandonment::AtServiceStart,
            Abandonment::Never,
        ] {
            for (c, mult) in [(0.5, 2.0), (0.9, 2.0), (1.0, 5.0), (1.0, 2.0)] {
                let mut cfg = QueueConfig::new(c, 208.5, mult * 208.5, 5000, 11);
                cfg.abandonment = abandonment;
                let r = simulate_queue(&cfg).unwrap();
                let (ok, ab, late, wsum) = event_oracle(&cfg);
                assert_eq!(
                    (r.successes, r.abandoned, r.late),
                    (ok, ab, late),
                    "{abandonment:?} c={c} x{mult}"
                );
                let mean = if ok > 0 { wsum / ok as f64 } else { 0.0 };
                assert!((r.mean_wait_ms - mean).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn no_deadline_means_full_success() {
        let r = simulate_queue(&QueueConfig::new(1.0, 208.5, f64::INFINITY, 20_000, 1)).unwrap();
        assert_eq!(r.success_rate, 1.0);
    }

    #[test]
    fn light_load_has_no_wait() {
        let r = simulate_queue(&QueueConfig::new(1e-4, 208.5, 417.0, 20_000, 2)).unwrap();
        assert!(r.mean_wait_ms < 0.1, "{}", r.mean_wait_ms);
        assert!((r.mean_total_ms - 208.5).abs() < 0.1);
        assert!((r.scaled_total - 1.0).abs() < 1e-3);
    }

    #[test]
    fn deterministic_arrivals_never_wait_below_saturation() {
        let mut cfg = QueueConfig::new(1.0, 208.5, 208.5, 1000, 3);
        cfg.arrivals = ArrivalProcess::Deterministic;
        let r = simulate_queue(&cfg).unwrap();
        assert_eq!(r.success_rate, 1.0);
    }

    #[test]
    fn md1_reference_value() {
        assert!((md1_mean_wait(0.5, 208.5) - 104.25).abs() < 1e-9);
    }

    #[test]
    fn invalid_configs() {
        assert!(simulate_queue(&QueueConfig::new(0.0, 208.5, 400.0, 10, 1)).is_err());
        assert!(simulate_queue(&QueueConfig::new(1.2, 208.5, 400.0, 10, 1)).is_err());
        assert!(simulate_queue(&QueueConfig::new(0.5, 208.5, 0.0, 10, 1)).is_err());
        assert!(simulate_queue(&QueueConfig::new(0.5, 208.5, 400.0, 0, 1)).is_err());
    }

    #[test]
    fn same_seed_same_report() {
        let cfg = QueueConfig::new(0.8, 208.5, 1042.5, 10_000, 9);
        assert_eq!(simulate_queue(&cfg).unwrap(), simulate_queue(&cfg).unwrap());
    }
}
