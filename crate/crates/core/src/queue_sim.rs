//! The physical Delta_(i)/G/1 queue and its service-completion embedding.
//!
//! Physical model: `n` customers arrive at the order statistics of `n`
//! i.i.d. clocks, `ceil(q n^(alpha/2))` extra customers wait at time 0, and a
//! single FIFO server works through them with service times
//! `D_i = S_i (1 + beta n^(-alpha/2)) / n`.
//!
//! Embedded model: at the `k`-th service completion,
//! `Q(k) = (Q(k-1) + A(k) - 1)^+` and `N(k) = N(k-1) + A(k) - 1`, where
//! `A(k)` counts arrivals during the `k`-th service. When the queue is empty
//! the next customer is pulled straight into service; the idle period the
//! physical server would have had is accumulated separately as virtual idle
//! time.

use std::io::Write;

use rand::{Rng, RngCore, SeedableRng};
use serde::Serialize;

use crate::dist::{ArrivalModel, ServiceModel, SortedClocks};
use crate::error::{Error, Result};
use crate::rng::{binomial, exp1, Stream};
use crate::scaling::{alpha, ceil_count, criticality_residual, pow_n, ratio_to_f64, Exponent};
use crate::stats::Observation;

/// Population size and heavy-traffic offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HeavyTrafficConfig {
    pub n: u64,
    pub beta: f64,
    pub ell: u32,
    pub q: f64,
}

impl HeavyTrafficConfig {
    pub fn new(n: u64, beta: f64, ell: u32, q: f64) -> Result<Self> {
        let cfg = Self { n, beta, ell, q };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::param("n", "population must be at least 1"));
        }
        if !self.beta.is_finite() {
            return Err(Error::param("beta", "must be finite"));
        }
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return Err(Error::param("q", format!("must be nonnegative, got {}", self.q)));
        }
        alpha(self.ell)?;
        if !(self.service_multiplier() > 0.0) {
            return Err(Error::param(
                "beta",
                format!("1 + beta n^(-alpha/2) must be positive, got beta = {}", self.beta),
            ));
        }
        Ok(())
    }

    pub fn alpha(&self) -> Exponent {
        alpha(self.ell).expect("validated ell")
    }

    /// `n^(alpha/2)`, the space scale.
    pub fn space_scale(&self) -> f64 {
        pow_n(self.n, self.alpha() / 2)
    }

    /// `n^alpha`, embedded steps per unit of limit time.
    pub fn step_scale(&self) -> f64 {
        pow_n(self.n, self.alpha())
    }

    /// `n^(1 - alpha)`, the multiplier taking physical time to limit time.
    pub fn time_scale(&self) -> f64 {
        (self.n as f64).powf(1.0 - ratio_to_f64(self.alpha()))
    }

    /// `(1 + beta n^(-alpha/2)) / n`.
    pub fn service_multiplier(&self) -> f64 {
        let a = ratio_to_f64(alpha(self.ell.max(1)).expect("ell >= 1"));
        (1.0 + self.beta * (-(a / 2.0) * (self.n as f64).ln()).exp()) / self.n as f64
    }

    /// `ceil(q n^(alpha/2))` customers present at time 0.
    pub fn initial_queue(&self) -> u64 {
        ceil_count(self.q * self.space_scale())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    Departure,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::Departure => "departure",
        }
    }
}

/// One level change of the physical queue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    /// Number in system after the event.
    pub level: u64,
}

/// When to stop the physical simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Horizon {
    /// Stop at a fixed physical time.
    Time(f64),
    /// Stop when the first busy period ends, or censor at `max_time`.
    FirstBusyPeriod { max_time: f64 },
    /// Run until every customer has been served.
    DrainAll,
}

/// A recorded trajectory of the physical queue.
#[derive(Debug, Clone, PartialEq)]
pub struct QueuePath {
    pub events: Vec<Event>,
    pub initial_level: u64,
    /// Length of the first busy period (starting at 0 when the queue is
    /// nonempty there, otherwise at the first arrival).
    pub first_busy_period: Observation,
    pub total_idle: f64,
    pub served_count: u64,
    /// Physical time at which recording stopped.
    pub end_time: f64,
}

impl QueuePath {
    /// Rebuild the summary fields from a time-ordered event list.
    pub fn from_events(events: Vec<Event>, end_time: f64) -> Self {
        let initial_level = events
            .iter()
            .take_while(|e| e.time == 0.0 && e.kind == EventKind::Arrival)
            .count() as u64;
        let mut level = 0;
        let mut idle = 0.0;
        let mut empty_since = Some(0.0);
        let mut bp_start = None;
        let mut first = None;
        let mut served = 0;
        for e in &events {
            if level == 0 && e.level == 1 {
                if let Some(s) = empty_since.take() {
                    idle += e.time - s;
                }
                bp_start.get_or_insert(e.time);
            }
            if e.kind == EventKind::Departure {
                served += 1;
                if e.level == 0 {
                    empty_since = Some(e.time);
                    if first.is_none() {
                        first = Some(e.time - bp_start.unwrap_or(0.0));
                    }
                }
            }
            level = e.level;
        }
        if let Some(s) = empty_since {
            idle += (end_time - s).max(0.0);
        }
        let first_busy_period = match first {
            Some(v) => Observation::Observed(v),
            None => Observation::Censored(end_time - bp_start.unwrap_or(0.0)),
        };
        Self {
            events,
            initial_level,
            first_busy_period,
            total_idle: idle,
            served_count: served,
            end_time,
        }
    }

    /// Number in system at physical time `s` (right-continuous).
    pub fn level_at(&self, s: f64) -> u64 {
        let i = self.events.partition_point(|e| e.time <= s);
        if i == 0 {
            0
        } else {
            self.events[i - 1].level
        }
    }

    /// CSV with header `time,kind,level`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["time", "kind", "level"])?;
        for e in &self.events {
            wr.write_record([e.time.to_string(), e.kind.as_str().to_string(), e.level.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// `inf { t > 0 : level(t) = 0 }` for a path that starts nonempty.
pub fn first_busy_period(path: &QueuePath) -> Result<Observation> {
    if path.initial_level == 0 {
        return Err(Error::UndefinedBusyPeriod);
    }
    Ok(path
        .events
        .iter()
        .find(|e| e.level == 0)
        .map_or(Observation::Censored(path.end_time), |e| Observation::Observed(e.time)))
}

struct PhysicalOutcome {
    first_busy_period: Observation,
    total_idle: f64,
    served: u64,
    end_time: f64,
    initial_level: u64,
}

fn warn_if_not_critical(cfg: &HeavyTrafficConfig, arrival: &ArrivalModel, service: &ServiceModel) {
    if let Ok(r) = criticality_residual(arrival, service, cfg.n, cfg.beta, cfg.ell) {
        if r.abs() > 1e-9 {
            log::warn!("service is not critically scaled: residual {r:.3e}");
        }
    }
}

fn run_physical<R: RngCore>(
    cfg: &HeavyTrafficConfig,
    arrival: &ArrivalModel,
    service: &ServiceModel,
    rng: &mut R,
    horizon: Horizon,
    mut record: impl FnMut(Event),
) -> Result<PhysicalOutcome> {
    cfg.validate()?;
    arrival.validate()?;
    service.validate()?;
    if let Horizon::Time(t) | Horizon::FirstBusyPeriod { max_time: t } = horizon {
        if !(t > 0.0) {
            return Err(Error::param("horizon", format!("must be positive, got {t}")));
        }
    }
    let mult = cfg.service_multiplier();
    let init = cfg.initial_queue();
    let mut clocks = SortedClocks::new(cfg.n as usize);
    let mut next_arrival = clocks.next_clock(arrival, rng);

    let mut level = 0u64;
    let mut departure = f64::INFINITY;
    let mut idle = 0.0;
    let mut empty_since = Some(0.0);
    let mut bp_start = None;
    let mut first_bp = None;
    let mut served = 0u64;

    for _ in 0..init {
        level += 1;
        record(Event {
            time: 0.0,
            kind: EventKind::Arrival,
            level,
        });
    }
    if init > 0 {
        departure = mult * service.sample(rng);
        bp_start = Some(0.0);
        empty_since = None;
    }

    let end_time = loop {
        let t_arr = next_arrival.unwrap_or(f64::INFINITY);
        let is_arrival = t_arr <= departure;
        let t = if is_arrival { t_arr } else { departure };
        if t == f64::INFINITY {
            // Everyone has been served.
            break match horizon {
                Horizon::Time(limit) | Horizon::FirstBusyPeriod { max_time: limit } => limit,
                Horizon::DrainAll => empty_since.unwrap_or(0.0),
            };
        }
        match horizon {
            Horizon::Time(limit) | Horizon::FirstBusyPeriod { max_time: limit } if t > limit => break limit,
            _ => {}
        }
        if is_arrival {
            level += 1;
            if level == 1 {
                if let Some(s) = empty_since.take() {
                    idle += t - s;
                }
                departure = t + mult * service.sample(rng);
                bp_start.get_or_insert(t);
            }
            next_arrival = clocks.next_clock(arrival, rng);
            record(Event {
                time: t,
                kind: EventKind::Arrival,
                level,
            });
        } else {
            level -= 1;
            served += 1;
            record(Event {
                time: t,
                kind: EventKind::Departure,
                level,
            });
            if level > 0 {
                departure = t + mult * service.sample(rng);
            } else {
                departure = f64::INFINITY;
                empty_since = Some(t);
                if first_bp.is_none() {
                    first_bp = Some(t - bp_start.unwrap_or(0.0));
                    if matches!(horizon, Horizon::FirstBusyPeriod { .. }) {
                        break t;
                    }
                }
            }
        }
    };
    if let Some(s) = empty_since {
        idle += (end_time - s).max(0.0);
    }
    Ok(PhysicalOutcome {
        first_busy_period: match first_bp {
            Some(v) => Observation::Observed(v),
            None => Observation::Censored(end_time - bp_start.unwrap_or(0.0)),
        },
        total_idle: idle,
        served,
        end_time,
        initial_level: init,
    })
}

/// Simulate the physical queue and record every event.
///
/// The service law is used as given; it should already be critically
/// scaled against `arrival` (a warning is logged otherwise).
pub fn simulate_delta_queue<R: RngCore>(
    cfg: &HeavyTrafficConfig,
    arrival: &ArrivalModel,
    service: &ServiceModel,
    rng: &mut R,
    horizon: Horizon,
) -> Result<QueuePath> {
    warn_if_not_critical(cfg, arrival, service);
    let mut events = Vec::new();
    let out = run_physical(cfg, arrival, service, rng, horizon, |e| events.push(e))?;
    Ok(QueuePath {
        events,
        initial_level: out.initial_level,
        first_busy_period: out.first_busy_period,
        total_idle: out.total_idle,
        served_count: out.served,
        end_time: out.end_time,
    })
}

/// Length of the first busy period in physical time, without recording events.
pub fn simulate_first_busy_period<R: RngCore>(
    cfg: &HeavyTrafficConfig,
    arrival: &ArrivalModel,
    service: &ServiceModel,
    rng: &mut R,
    max_time: f64,
) -> Result<Observation> {
    Ok(run_physical(cfg, arrival, service, rng, Horizon::FirstBusyPeriod { max_time }, |_| {})?.first_busy_period)
}

/// Physical queue level at each time in `times` (sorted ascending), without
/// storing the event list.
pub fn simulate_levels_at<R: RngCore>(
    cfg: &HeavyTrafficConfig,
    arrival: &ArrivalModel,
    service: &ServiceModel,
    rng: &mut R,
    times: &[f64],
) -> Result<Vec<u64>> {
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param("times", "must be sorted ascending"));
    }
    let last = times.last().copied().unwrap_or(0.0);
    let mut out = Vec::with_capacity(times.len());
    let mut level = 0u64;
    let mut next = 0;
    run_physical(cfg, arrival, service, rng, Horizon::Time(last.max(f64::MIN_POSITIVE)), |e| {
        while next < times.len() && times[next] < e.time {
            out.push(level);
            next += 1;
        }
        level = e.level;
    })?;
    while out.len() < times.len() {
        out.push(level);
    }
    Ok(out)
}

/// Replication summary CSV `replication,busy_period,censored`.
pub fn write_busy_periods_csv<W: Write>(w: W, samples: &[Observation]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["replication", "busy_period", "censored"])?;
    for (i, o) in samples.iter().enumerate() {
        let (v, c) = match o {
            Observation::Observed(v) => (*v, false),
            Observation::Censored(h) => (*h, true),
        };
        wr.write_record([i.to_string(), v.to_string(), c.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

/// The embedded processes, one entry per service completion `k = 1..=K`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmbeddedPath {
    /// `Q_n(k)`.
    pub queue: Vec<u64>,
    /// `N_n(k)`.
    pub n_free: Vec<i64>,
    /// `A_n(k)`.
    pub arrivals: Vec<u64>,
    /// `beta_n(k)`, the number of times the queue has emptied.
    pub busy_starts: Vec<u64>,
    /// Cumulative virtual idle time after step `k`.
    pub virtual_idle: Vec<f64>,
}

impl EmbeddedPath {
    fn with_capacity(k: usize) -> Self {
        Self {
            queue: Vec::with_capacity(k),
            n_free: Vec::with_capacity(k),
            arrivals: Vec::with_capacity(k),
            busy_starts: Vec::with_capacity(k),
            virtual_idle: Vec::with_capacity(k),
        }
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    /// Checks the recursions for `Q` and `N`, `Q = N - min(N ^ 0)` and
    /// `beta_n = -min(N ^ 0)` at every step. Returns the first violation.
    pub fn verify_identities(&self) -> std::result::Result<(), String> {
        let (mut q, mut n, mut run_min) = (0i64, 0i64, 0i64);
        for k in 0..self.len() {
            let a = self.arrivals[k] as i64;
            let q_rec = (q + a - 1).max(0);
            let n_rec = n + a - 1;
            run_min = run_min.min(n_rec);
            let (qk, nk, bk) = (self.queue[k] as i64, self.n_free[k], self.busy_starts[k] as i64);
            if qk != q_rec {
                return Err(format!("step {}: Q = {qk}, recursion gives {q_rec}", k + 1));
            }
            if nk != n_rec {
                return Err(format!("step {}: N = {nk}, recursion gives {n_rec}", k + 1));
            }
            if qk != nk - run_min {
                return Err(format!("step {}: Q = {qk} but reflection of N gives {}", k + 1, nk - run_min));
            }
            if bk != -run_min {
                return Err(format!("step {}: beta_n = {bk} but -min(N ^ 0) = {}", k + 1, -run_min));
            }
            q = qk;
            n = nk;
        }
        Ok(())
    }

    /// CSV with header `step,Q,N,A,beta_n`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["step", "Q", "N", "A", "beta_n"])?;
        for k in 0..self.len() {
            wr.write_record([
                (k + 1).to_string(),
                self.queue[k].to_string(),
                self.n_free[k].to_string(),
                self.arrivals[k].to_string(),
                self.busy_starts[k].to_string(),
            ])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Arrival bookkeeping behind the embedded recursion.
trait ArrivalSource {
    /// Move the next customer straight into service; `false` if none is left.
    fn pull(&mut self, rng: &mut Stream) -> bool;
    /// Arrivals during a service of length `d`.
    fn count(&mut self, d: f64, rng: &mut Stream) -> u64;
    /// Idle time until the next arrival once the queue has emptied.
    /// Fresh randomness for the idle period itself comes from `idle_rng`.
    fn idle(&mut self, rng: &mut Stream, idle_rng: &mut Stream) -> Option<f64>;
}

/// Exponential clocks, redrawn after every service.
struct Redrawn {
    rate: f64,
    population: u64,
}

impl ArrivalSource for Redrawn {
    fn pull(&mut self, _rng: &mut Stream) -> bool {
        if self.population == 0 {
            return false;
        }
        self.population -= 1;
        true
    }

    fn count(&mut self, d: f64, rng: &mut Stream) -> u64 {
        let a = binomial(self.population, -(-self.rate * d).exp_m1(), rng);
        self.population -= a;
        a
    }

    fn idle(&mut self, _rng: &mut Stream, idle_rng: &mut Stream) -> Option<f64> {
        (self.population > 0).then(|| exp1(idle_rng) / (self.rate * self.population as f64))
    }
}

/// Fixed clocks, consumed in order. Physical time includes idle periods so
/// that each service window starts where the previous one ended.
struct FixedClocks<'a> {
    source: ClockFeed<'a>,
    peeked: Option<f64>,
    now: f64,
}

enum ClockFeed<'a> {
    Lazy {
        model: &'a ArrivalModel,
        stream: SortedClocks,
    },
    Given {
        clocks: &'a [f64],
        next: usize,
    },
}

impl FixedClocks<'_> {
    fn peek(&mut self, rng: &mut Stream) -> Option<f64> {
        if self.peeked.is_none() {
            self.peeked = match &mut self.source {
                ClockFeed::Lazy { model, stream } => stream.next_clock(model, rng),
                ClockFeed::Given { clocks, next } => {
                    let c = clocks.get(*next).copied();
                    *next += 1;
                    c
                }
            };
        }
        self.peeked
    }
}

impl ArrivalSource for FixedClocks<'_> {
    fn pull(&mut self, rng: &mut Stream) -> bool {
        match self.peek(rng) {
            Some(t) => {
                self.peeked = None;
                self.now = self.now.max(t);
                true
            }
            None => false,
        }
    }

    fn count(&mut self, d: f64, rng: &mut Stream) -> u64 {
        let end = self.now + d;
        let mut a = 0;
        while let Some(t) = self.peek(rng) {
            if t > end {
                break;
            }
            self.peeked = None;
            a += 1;
        }
        self.now = end;
        a
    }

    fn idle(&mut self, rng: &mut Stream, _idle_rng: &mut Stream) -> Option<f64> {
        self.peek(rng).map(|t| (t - self.now).max(0.0))
    }
}

fn run_embedded<S: ArrivalSource>(
    cfg: &HeavyTrafficConfig,
    service: &ServiceModel,
    steps: usize,
    rng: &mut Stream,
    source: &mut S,
) -> Result<EmbeddedPath> {
    cfg.validate()?;
    service.validate()?;
    let mult = cfg.service_multiplier();
    // Idle draws come from their own stream so that the arrival and
    // service draws stay aligned across configurations.
    let mut idle_rng = Stream::seed_from_u64(rng.random());
    let mut path = EmbeddedPath::with_capacity(steps);
    let (mut q, mut n_free, mut run_min) = (0i64, 0i64, 0i64);
    let mut idle_total = 0.0;
    let mut needs_pull = true;
    for k in 1..=steps {
        if needs_pull && !source.pull(rng) {
            return Err(Error::PopulationExhausted {
                step: k,
                population: cfg.n as usize,
            });
        }
        let d = mult * service.sample(rng);
        let a = source.count(d, rng);
        let raw = q + a as i64 - 1;
        n_free += a as i64 - 1;
        run_min = run_min.min(n_free);
        if raw < 0 {
            q = 0;
            needs_pull = true;
            if let Some(i) = source.idle(rng, &mut idle_rng) {
                idle_total += i;
            }
        } else {
            q = raw;
            needs_pull = false;
        }
        path.queue.push(q as u64);
        path.n_free.push(n_free);
        path.arrivals.push(a);
        path.busy_starts.push((-run_min) as u64);
        path.virtual_idle.push(idle_total);
    }
    Ok(path)
}

/// Embedded model with exponential clocks redrawn after each service:
/// `A(k) ~ Binomial(n - Q(k-1) - k, 1 - exp(-rate D_k))`.
///
/// The embedded chain starts from an empty queue; `cfg.q` is not used.
pub fn simulate_embedded_exponential(
    cfg: &HeavyTrafficConfig,
    rate: f64,
    service: &ServiceModel,
    steps: usize,
    rng: &mut Stream,
) -> Result<EmbeddedPath> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::param("rate", format!("must be positive, got {rate}")));
    }
    let mut source = Redrawn {
        rate,
        population: cfg.n,
    };
    run_embedded(cfg, service, steps, rng, &mut source)
}

/// Embedded model driven by one fixed set of `n` sorted clocks.
///
/// `A(k)` counts clocks in `(t_k, t_k + D_k]`, where `t_k` is the physical
/// time service `k` starts. When the queue empties, the earliest remaining
/// clock is pulled into service and the gap is booked as virtual idle time.
pub fn simulate_embedded_general(
    cfg: &HeavyTrafficConfig,
    arrival: &ArrivalModel,
    service: &ServiceModel,
    steps: usize,
    rng: &mut Stream,
) -> Result<EmbeddedPath> {
    arrival.validate()?;
    let mut source = FixedClocks {
        source: ClockFeed::Lazy {
            model: arrival,
            stream: SortedClocks::new(cfg.n as usize),
        },
        peeked: None,
        now: 0.0,
    };
    run_embedded(cfg, service, steps, rng, &mut source)
}

/// [`simulate_embedded_general`] with explicitly supplied sorted clocks.
pub fn simulate_embedded_with_clocks(
    cfg: &HeavyTrafficConfig,
    clocks: &[f64],
    service: &ServiceModel,
    steps: usize,
    rng: &mut Stream,
) -> Result<EmbeddedPath> {
    if clocks.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param("clocks", "must be sorted ascending"));
    }
    let mut source = FixedClocks {
        source: ClockFeed::Given { clocks, next: 0 },
        peeked: None,
        now: 0.0,
    };
    run_embedded(cfg, service, steps, rng, &mut source)
}
