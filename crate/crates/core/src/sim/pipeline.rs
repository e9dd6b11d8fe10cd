//! Discrete-event fill-drain pipeline schedule.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Compute,
    Comm,
}

/// One interval of the schedule. Comm events carry the sending stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimelineEvent {
    pub stage: usize,
    pub micro_batch: usize,
    pub kind: EventKind,
    pub start: f64,
    pub duration: f64,
}

impl TimelineEvent {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSchedule {
    pub stages: usize,
    pub micro_batches: usize,
    pub makespan: f64,
    pub events: Vec<TimelineEvent>,
}

impl PipelineSchedule {
    /// `(m + n - 1) t + (n - 1) p`.
    pub fn closed_form(n: usize, m: usize, t: f64, p: f64) -> f64 {
        (m + n - 1) as f64 * t + (n - 1) as f64 * p
    }

    /// True when no stage runs two compute events at once. Transfers are
    /// not included: a link may carry several at a time.
    pub fn non_overlapping(&self) -> bool {
        (0..self.stages).all(|stage| {
            let mut spans: Vec<_> = self
                .events
                .iter()
                .filter(|e| e.kind == EventKind::Compute && e.stage == stage)
                .map(|e| (e.start, e.end()))
                .collect();
            spans.sort_by(|a, b| a.0.total_cmp(&b.0));
            spans.windows(2).all(|w| w[1].0 >= w[0].1)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pending {
    Arrive,
    Done,
}

#[derive(Debug)]
struct Queued {
    time: f64,
    seq: u64,
    what: Pending,
    stage: usize,
    micro_batch: usize,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Min-heap on (time, seq).
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

/// Simulates `m` micro-batches through `n` stages, each taking `t` per
/// micro-batch, with a transfer of `p` between adjacent stages. Stages serve
/// micro-batches in order, one at a time; links carry transfers
/// independently.
pub fn pipeline_makespan_sim(n: usize, m: usize, t: f64, p: f64) -> Result<PipelineSchedule> {
    if n == 0 || m == 0 {
        return Err(Error::Parameter("stage and micro-batch counts must be positive".into()));
    }
    if !(t.is_finite() && p.is_finite() && t >= 0.0 && p >= 0.0) {
        return Err(Error::Parameter(format!(
            "times must be finite and non-negative, got t = {t}, p = {p}"
        )));
    }
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Queued>, time, what, stage, micro_batch| {
        heap.push(Queued {
            time,
            seq,
            what,
            stage,
            micro_batch,
        });
        seq += 1;
    };
    for mb in 0..m {
        push(&mut heap, 0.0, Pending::Arrive, 0, mb);
    }
    let mut waiting: Vec<VecDeque<usize>> = vec![VecDeque::new(); n];
    let mut busy = vec![false; n];
    let mut events = Vec::with_capacity(m * (2 * n - 1));
    let mut makespan = 0.0f64;

    while let Some(ev) = heap.pop() {
        let s = ev.stage;
        match ev.what {
            Pending::Arrive => waiting[s].push_back(ev.micro_batch),
            Pending::Done => {
                busy[s] = false;
                makespan = makespan.max(ev.time);
                if s + 1 < n {
                    events.push(TimelineEvent {
                        stage: s,
                        micro_batch: ev.micro_batch,
                        kind: EventKind::Comm,
                        start: ev.time,
                        duration: p,
                    });
                    push(&mut heap, ev.time + p, Pending::Arrive, s + 1, ev.micro_batch);
                }
            }
        }
        if !busy[s] {
            if let Some(mb) = waiting[s].pop_front() {
                busy[s] = true;
                events.push(TimelineEvent {
                    stage: s,
                    micro_batch: mb,
                    kind: EventKind::Compute,
                    start: ev.time,
                    duration: t,
                });
                push(&mut heap, ev.time + t, Pending::Done, s, mb);
            }
        }
    }
    Ok(PipelineSchedule {
        stages: n,
        micro_batches: m,
        makespan,
        events,
    })
}

/// Trace-viewer JSON: one complete (`"ph": "X"`) event per interval.
/// Compute runs on thread `stage`, transfers on thread `stages + stage`.
pub fn trace_json(schedule: &PipelineSchedule) -> Value {
    let events: Vec<Value> = schedule
        .events
        .iter()
        .map(|e| {
            let (name, tid) = match e.kind {
                EventKind::Compute => (format!("mb{} compute", e.micro_batch), e.stage),
                EventKind::Comm => (format!("mb{} send", e.micro_batch), schedule.stages + e.stage),
            };
            json!({
                "name": name,
                "ph": "X",
                "pid": 0,
                "tid": tid,
                "ts": e.start,
                "dur": e.duration,
                "stage": e.stage,
                "micro_batch": e.micro_batch,
                "kind": e.kind,
                "start": e.start,
                "duration": e.duration,
            })
        })
        .collect();
    Value::Array(events)
}
