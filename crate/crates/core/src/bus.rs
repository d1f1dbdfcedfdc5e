//! In-process publish/subscribe bus with tick-drained, synchronous delivery.
//!
//! Messages are queued on `publish` and handed to subscribers only when the
//! scheduler calls [`Bus::drain`]. Delivery follows global publish order, so
//! per-topic FIFO holds and runs are reproducible. Anything a handler
//! publishes while a drain is in progress waits for the next drain.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Pose;
use crate::graph::Tick;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TopicName(String);

impl TopicName {
    pub fn new(path: impl Into<String>) -> Result<Self, BusError> {
        let path = path.into();
        if path.is_empty() {
            return Err(BusError::EmptyTopic);
        }
        Ok(Self(path))
    }

    pub fn pose(agent: &str) -> Self {
        Self(format!("/{agent}/pose"))
    }

    pub fn battery(agent: &str) -> Self {
        Self(format!("/{agent}/battery"))
    }

    pub fn detection(agent: &str) -> Self {
        Self(format!("/{agent}/detection"))
    }

    pub fn nav_status(agent: &str) -> Self {
        Self(format!("/{agent}/nav_status"))
    }

    /// Shared topic on which a drone announces that it located the person.
    pub fn located_signal() -> Self {
        Self("/mission/located".to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for TopicName {
    type Error = BusError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        TopicName::new(value)
    }
}

impl From<TopicName> for String {
    fn from(t: TopicName) -> Self {
        t.0
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NavStatus {
    Disarmed,
    Flying,
    Landed,
}

impl NavStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            NavStatus::Disarmed => "Disarmed",
            NavStatus::Flying => "Flying",
            NavStatus::Landed => "Landed",
        }
    }
}

impl FromStr for NavStatus {
    type Err = InvalidMessage;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Disarmed" => Ok(NavStatus::Disarmed),
            "Flying" => Ok(NavStatus::Flying),
            "Landed" => Ok(NavStatus::Landed),
            other => Err(InvalidMessage(format!("unknown navigation status '{other}'"))),
        }
    }
}

impl fmt::Display for NavStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Pose { agent: String, pose: Pose },
    Battery { agent: String, voltage: f64 },
    Detection { agent: String, found: bool, location: Pose },
    NavStatus { agent: String, status: NavStatus },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Pose,
    Battery,
    Detection,
    NavStatus,
}

impl Payload {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::Pose { .. } => PayloadKind::Pose,
            Payload::Battery { .. } => PayloadKind::Battery,
            Payload::Detection { .. } => PayloadKind::Detection,
            Payload::NavStatus { .. } => PayloadKind::NavStatus,
        }
    }

    pub fn agent(&self) -> &str {
        match self {
            Payload::Pose { agent, .. }
            | Payload::Battery { agent, .. }
            | Payload::Detection { agent, .. }
            | Payload::NavStatus { agent, .. } => agent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("invalid message: {0}")]
pub struct InvalidMessage(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicMessage {
    pub tick: Tick,
    #[serde(flatten)]
    pub payload: Payload,
}

impl TopicMessage {
    pub fn pose(agent: &str, pose: Pose, tick: Tick) -> Self {
        Self { tick, payload: Payload::Pose { agent: agent.into(), pose } }
    }

    pub fn battery(agent: &str, voltage: f64, tick: Tick) -> Self {
        Self { tick, payload: Payload::Battery { agent: agent.into(), voltage } }
    }

    pub fn detection(agent: &str, found: bool, location: Pose, tick: Tick) -> Self {
        Self { tick, payload: Payload::Detection { agent: agent.into(), found, location } }
    }

    pub fn nav_status(agent: &str, status: NavStatus, tick: Tick) -> Self {
        Self { tick, payload: Payload::NavStatus { agent: agent.into(), status } }
    }

    /// Builds a status message from its textual form, rejecting values
    /// outside Disarmed/Flying/Landed.
    pub fn nav_status_str(agent: &str, status: &str, tick: Tick) -> Result<Self, InvalidMessage> {
        Ok(Self::nav_status(agent, status.parse()?, tick))
    }

    pub fn validate(&self) -> Result<(), InvalidMessage> {
        if self.payload.agent().is_empty() {
            return Err(InvalidMessage("agent name is empty".into()));
        }
        match &self.payload {
            Payload::Pose { pose, .. } | Payload::Detection { location: pose, .. } if !pose.is_finite() => {
                Err(InvalidMessage("pose has non-finite components".into()))
            }
            Payload::Battery { voltage, .. } if !voltage.is_finite() || *voltage < 0.0 => {
                Err(InvalidMessage(format!("voltage {voltage} is negative or not finite")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BusError {
    #[error("topic name must be non-empty")]
    EmptyTopic,
    #[error("topic {topic} carries {expected:?} payloads, got {got:?}")]
    KindMismatch { topic: TopicName, expected: PayloadKind, got: PayloadKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubscriptionId(u64);

/// Where handlers publish; contents are queued for the next drain.
#[derive(Debug, Default)]
pub struct Outbox {
    pending: Vec<(TopicName, TopicMessage)>,
}

impl Outbox {
    pub fn publish(&mut self, topic: TopicName, msg: TopicMessage) {
        self.pending.push((topic, msg));
    }
}

pub type Handler = Box<dyn FnMut(&TopicName, &TopicMessage, &mut Outbox)>;

/// One delivered message, as written to the trace log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub tick: Tick,
    pub topic: TopicName,
    pub payload: TopicMessage,
}

struct Subscriber {
    id: SubscriptionId,
    since: u64,
    handler: Handler,
}

struct Queued {
    seq: u64,
    topic: TopicName,
    msg: TopicMessage,
}

#[derive(Default)]
pub struct Bus {
    queue: VecDeque<Queued>,
    subscribers: BTreeMap<TopicName, Vec<Subscriber>>,
    kinds: HashMap<TopicName, PayloadKind>,
    next_seq: u64,
    next_sub: u64,
    trace: Option<Vec<TraceRecord>>,
}

impl fmt::Debug for Bus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Bus")
            .field("queued", &self.queue.len())
            .field("topics", &self.subscribers.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records every delivered message for later replay.
    pub fn with_trace() -> Self {
        Self { trace: Some(Vec::new()), ..Self::default() }
    }

    pub fn publish(&mut self, topic: TopicName, msg: TopicMessage) -> Result<(), BusError> {
        let kind = msg.payload.kind();
        match self.kinds.get(&topic) {
            Some(expected) if *expected != kind => {
                return Err(BusError::KindMismatch { topic, expected: *expected, got: kind });
            }
            Some(_) => {}
            None => {
                self.kinds.insert(topic.clone(), kind);
            }
        }
        self.queue.push_back(Queued { seq: self.next_seq, topic, msg });
        self.next_seq += 1;
        Ok(())
    }

    /// Registers a handler for messages published from now on.
    pub fn subscribe(
        &mut self,
        topic: TopicName,
        handler: impl FnMut(&TopicName, &TopicMessage, &mut Outbox) + 'static,
    ) -> SubscriptionId {
        let id = SubscriptionId(self.next_sub);
        self.next_sub += 1;
        self.subscribers.entry(topic).or_default().push(Subscriber {
            id,
            since: self.next_seq,
            handler: Box::new(handler),
        });
        id
    }

    pub fn unsubscribe(&mut self, id: SubscriptionId) -> bool {
        for subs in self.subscribers.values_mut() {
            if let Some(pos) = subs.iter().position(|s| s.id == id) {
                subs.remove(pos);
                return true;
            }
        }
        false
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    /// Delivers everything queued before the call. Returns the number of
    /// messages taken off the queue, whether or not anyone listened.
    pub fn drain(&mut self, tick: Tick) -> usize {
        let batch: Vec<Queued> = self.queue.drain(..).collect();
        let mut outbox = Outbox::default();
        for q in &batch {
            if let Some(subs) = self.subscribers.get_mut(&q.topic) {
                for s in subs.iter_mut().filter(|s| s.since <= q.seq) {
                    (s.handler)(&q.topic, &q.msg, &mut outbox);
                }
            }
            if let Some(trace) = self.trace.as_mut() {
                trace.push(TraceRecord { tick, topic: q.topic.clone(), payload: q.msg.clone() });
            }
        }
        for (topic, msg) in outbox.pending {
            if let Err(e) = self.publish(topic, msg) {
                log::warn!("dropping handler message: {e}");
            }
        }
        batch.len()
    }

    pub fn trace(&self) -> &[TraceRecord] {
        self.trace.as_deref().unwrap_or(&[])
    }

    /// Trace as JSON lines, one `{tick, topic, payload}` object per line.
    pub fn trace_jsonl(&self) -> String {
        self.trace()
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace records serialize") + "\n")
            .collect()
    }
}
