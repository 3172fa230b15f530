//! Discrete-event engine co-scheduling the two control loops and the two
//! communication loops of a leader/follower pair.
//!
//! Events at equal timestamps run in a fixed order: deliveries, follower
//! control, leader control, leader comm, follower comm. Deliveries at the
//! same instant run in submission order.
//!
//! A control tick at `t` first completes the integration of the torque
//! chosen at the previous tick, then reads the (held) remote data, chooses
//! a new torque and records the state at `t`. Comm ticks at `t` therefore
//! send exactly the state recorded for `t`.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    external_torque_estimate, follower_torque, leader_torque, pd_torque, step_arm, ArmModel, ArmState, ContactScript,
    ControlGains, OperatorTrajectory,
};
use crate::model::{derive_seed, ControlPacket, Direction, JointTorques, JointVector, Payload, SimTime};
use crate::transport::{preset_for, DelaySampler, DeliveryEvent, Transport, TransportConfig, TransportKind};
use crate::{Error, Result};

/// Optional replacements for preset fields of one direction.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportOverrides {
    pub send: Option<DelaySampler>,
    pub receive: Option<DelaySampler>,
    pub spike_prob: Option<f64>,
    pub spike_delay: Option<DelaySampler>,
    pub cycle_us: Option<u64>,
    pub cycle_offset_us: Option<u64>,
    pub overrun_prob: Option<f64>,
}

impl TransportOverrides {
    pub fn apply(&self, mut cfg: TransportConfig) -> TransportConfig {
        if let Some(s) = &self.send {
            cfg.send_overhead = s.clone();
        }
        if let Some(r) = &self.receive {
            cfg.receive_path = r.clone();
        }
        if let Some(p) = self.spike_prob {
            cfg.spike_prob = p;
        }
        if let Some(s) = &self.spike_delay {
            cfg.spike_delay = Some(s.clone());
        }
        if let Some(c) = self.cycle_us {
            cfg.cycle_us = c;
        }
        if let Some(o) = self.cycle_offset_us {
            cfg.cycle_offset_us = o;
        }
        if let Some(p) = self.overrun_prob {
            cfg.overrun_prob = p;
        }
        cfg
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportSetup {
    pub kind: TransportKind,
    #[serde(default)]
    pub l2f: TransportOverrides,
    #[serde(default)]
    pub f2l: TransportOverrides,
}

impl TransportSetup {
    pub fn preset(kind: TransportKind) -> Self {
        TransportSetup {
            kind,
            l2f: TransportOverrides::default(),
            f2l: TransportOverrides::default(),
        }
    }

    /// Same fixed delays in both directions, on the wired reliable stream.
    pub fn fixed_delay(l2f_us: u64, f2l_us: u64) -> Self {
        let fixed = |us| TransportOverrides {
            send: Some(DelaySampler::constant(0)),
            receive: Some(DelaySampler::constant(us)),
            ..Default::default()
        };
        TransportSetup {
            kind: TransportKind::Wired,
            l2f: fixed(l2f_us),
            f2l: fixed(f2l_us),
        }
    }

    pub fn config_for(&self, direction: Direction, seed: u64) -> TransportConfig {
        let preset = preset_for(self.kind, direction, seed);
        match direction {
            Direction::LeaderToFollower => self.l2f.apply(preset),
            Direction::FollowerToLeader => self.f2l.apply(preset),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub transport: TransportSetup,
    pub gains: ControlGains,
    pub leader_model: ArmModel,
    pub follower_model: ArmModel,
    pub trajectory: OperatorTrajectory,
    pub contact: ContactScript,
    pub duration_us: u64,
    pub control_period_us: u64,
    pub comm_period_us: u64,
    pub leader_comm_offset_us: u64,
    pub follower_comm_offset_us: u64,
    /// Initial follower state; the leader always starts at rest.
    pub follower_initial: ArmState,
    pub seed: u64,
}

impl ScenarioConfig {
    pub const CONTROL_PERIOD_US: u64 = 1_000;
    pub const COMM_PERIOD_US: u64 = 50_000;

    /// Default gains, unit arms and the default sinusoid for `duration_us`.
    pub fn new(kind: TransportKind, duration_us: u64, seed: u64) -> Self {
        ScenarioConfig {
            transport: TransportSetup::preset(kind),
            gains: ControlGains::default(),
            leader_model: ArmModel::default(),
            follower_model: ArmModel::default(),
            trajectory: OperatorTrajectory::default(),
            contact: ContactScript::none(),
            duration_us,
            control_period_us: Self::CONTROL_PERIOD_US,
            comm_period_us: Self::COMM_PERIOD_US,
            leader_comm_offset_us: 0,
            follower_comm_offset_us: 0,
            follower_initial: ArmState::REST,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.control_period_us == 0 {
            return Err(Error::Config("control_period_us must be positive".into()));
        }
        if self.comm_period_us == 0 || self.comm_period_us % self.control_period_us != 0 {
            return Err(Error::Config(format!(
                "comm_period_us ({}) must be a positive multiple of control_period_us ({})",
                self.comm_period_us, self.control_period_us
            )));
        }
        if self.duration_us < 1_000_000 {
            return Err(Error::Config(format!("duration must be at least 1 s, got {}us", self.duration_us)));
        }
        if self.duration_us % self.control_period_us != 0 {
            return Err(Error::Config("duration must be a whole number of control periods".into()));
        }
        self.gains.validate()?;
        self.leader_model.validate()?;
        self.follower_model.validate()?;
        self.trajectory.validate()?;
        for dir in Direction::BOTH {
            self.transport.config_for(dir, self.seed).validate()?;
        }
        if !(self.follower_initial.is_finite()) {
            return Err(Error::Config("follower_initial must be finite".into()));
        }
        Ok(())
    }

    pub fn tick_count(&self) -> usize {
        (self.duration_us / self.control_period_us) as usize + 1
    }
}

/// State of both arms at one control tick.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TickRecord {
    pub t: SimTime,
    pub q_leader: JointVector,
    pub qdot_leader: JointVector,
    pub q_follower: JointVector,
    pub qdot_follower: JointVector,
    /// Force-feedback command at the leader.
    pub tau_leader: JointTorques,
    /// Tracking command at the follower.
    pub tau_follower: JointTorques,
}

impl TickRecord {
    pub fn leader(&self) -> ArmState {
        ArmState::new(self.q_leader, self.qdot_leader)
    }

    pub fn follower(&self) -> ArmState {
        ArmState::new(self.q_follower, self.qdot_follower)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PacketRecord {
    pub direction: Direction,
    pub seq: u64,
    pub sent_at: SimTime,
    pub t_send_us: u64,
    pub t_recv_us: u64,
    pub deliver_at: SimTime,
}

impl From<&DeliveryEvent> for PacketRecord {
    fn from(ev: &DeliveryEvent) -> Self {
        PacketRecord {
            direction: ev.packet.direction(),
            seq: ev.packet.seq,
            sent_at: ev.packet.sent_at,
            t_send_us: ev.t_send_us,
            t_recv_us: ev.t_recv_us,
            deliver_at: ev.deliver_at,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub config: ScenarioConfig,
    pub ticks: Vec<TickRecord>,
    /// Ordered by `sent_at`; leader packets first at equal times.
    pub packets: Vec<PacketRecord>,
}

impl RunTrace {
    pub fn packets_in(&self, direction: Direction) -> impl Iterator<Item = &PacketRecord> {
        self.packets.iter().filter(move |p| p.direction == direction)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum EventClass {
    Delivery,
    FollowerControl,
    LeaderControl,
    LeaderComm,
    FollowerComm,
}

#[derive(Debug)]
enum Event {
    Deliver(DeliveryEvent),
    FollowerControl,
    LeaderControl,
    LeaderComm,
    FollowerComm,
}

impl Event {
    fn class(&self) -> EventClass {
        match self {
            Event::Deliver(_) => EventClass::Delivery,
            Event::FollowerControl => EventClass::FollowerControl,
            Event::LeaderControl => EventClass::LeaderControl,
            Event::LeaderComm => EventClass::LeaderComm,
            Event::FollowerComm => EventClass::FollowerComm,
        }
    }
}

#[derive(Debug)]
struct Scheduled {
    at: SimTime,
    class: EventClass,
    order: u64,
    event: Event,
}

impl Scheduled {
    fn key(&self) -> (SimTime, EventClass, u64) {
        (self.at, self.class, self.order)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

#[derive(Default)]
struct EventQueue {
    heap: BinaryHeap<Reverse<Scheduled>>,
    next_order: u64,
}

impl EventQueue {
    fn push(&mut self, at: SimTime, event: Event) {
        let order = self.next_order;
        self.next_order += 1;
        self.heap.push(Reverse(Scheduled {
            at,
            class: event.class(),
            order,
            event,
        }));
    }

    fn pop(&mut self) -> Option<Scheduled> {
        self.heap.pop().map(|Reverse(s)| s)
    }
}

struct Side {
    state: ArmState,
    /// Torque chosen at the last tick, integrated at the next one.
    pending_torque: JointTorques,
    /// Command torque recorded for the current tick.
    command: JointTorques,
    stepped_at: Option<SimTime>,
}

impl Side {
    fn new(state: ArmState) -> Self {
        Side {
            state,
            pending_torque: JointVector::ZERO,
            command: JointVector::ZERO,
            stepped_at: None,
        }
    }

    fn advance(&mut self, model: &ArmModel, now: SimTime) -> std::result::Result<(), String> {
        if let Some(prev) = self.stepped_at {
            self.state = step_arm(model, &self.state, &self.pending_torque, now.since(prev)).map_err(|e| e.to_string())?;
        }
        self.stepped_at = Some(now);
        if !self.state.is_finite() {
            return Err("arm state is not finite".into());
        }
        Ok(())
    }
}

/// Execute one scenario and return its full trace.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunTrace> {
    config.validate()?;
    let mut engine = Engine::new(config)?;
    engine.run()?;
    Ok(engine.into_trace())
}

struct Engine<'a> {
    cfg: &'a ScenarioConfig,
    queue: EventQueue,
    l2f: Transport,
    f2l: Transport,
    leader: Side,
    follower: Side,
    /// Latest leader state delivered to the follower.
    held_leader: ArmState,
    /// Latest external torque delivered to the leader.
    held_tau_ext: JointTorques,
    l2f_seq: u64,
    f2l_seq: u64,
    ticks: Vec<TickRecord>,
    packets: Vec<PacketRecord>,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a ScenarioConfig) -> Result<Self> {
        let l2f = Transport::new(cfg.transport.config_for(Direction::LeaderToFollower, cfg.seed))?;
        let f2l = Transport::new(cfg.transport.config_for(Direction::FollowerToLeader, cfg.seed))?;
        let mut queue = EventQueue::default();
        queue.push(SimTime::ZERO, Event::FollowerControl);
        queue.push(SimTime::ZERO, Event::LeaderControl);
        if cfg.leader_comm_offset_us < cfg.duration_us {
            queue.push(SimTime(cfg.leader_comm_offset_us), Event::LeaderComm);
        }
        if cfg.follower_comm_offset_us < cfg.duration_us {
            queue.push(SimTime(cfg.follower_comm_offset_us), Event::FollowerComm);
        }
        Ok(Engine {
            cfg,
            queue,
            l2f,
            f2l,
            leader: Side::new(ArmState::REST),
            follower: Side::new(cfg.follower_initial),
            held_leader: ArmState::REST,
            held_tau_ext: JointVector::ZERO,
            l2f_seq: 0,
            f2l_seq: 0,
            ticks: Vec::with_capacity(cfg.tick_count()),
            packets: Vec::new(),
        })
    }

    fn run(&mut self) -> Result<()> {
        let end = SimTime(self.cfg.duration_us);
        while let Some(ev) = self.queue.pop() {
            if ev.at > end {
                break;
            }
            let now = ev.at;
            match ev.event {
                Event::Deliver(d) => match d.packet.payload {
                    Payload::LeaderState { q, qdot } => self.held_leader = ArmState::new(q, qdot),
                    Payload::ExternalTorque(tau) => self.held_tau_ext = tau,
                },
                Event::FollowerControl => {
                    self.follower
                        .advance(&self.cfg.follower_model, now)
                        .map_err(|reason| self.diverged(now, format!("follower: {reason}")))?;
                    let command = follower_torque(&self.cfg.gains, &self.held_leader, &self.follower.state);
                    let contact = self.cfg.contact.torque_at(now);
                    self.follower.command = command;
                    self.follower.pending_torque = command + contact;
                    self.schedule_next(now, Event::FollowerControl, self.cfg.control_period_us);
                }
                Event::LeaderControl => {
                    self.leader
                        .advance(&self.cfg.leader_model, now)
                        .map_err(|reason| self.diverged(now, format!("leader: {reason}")))?;
                    let reference = self.cfg.trajectory.reference(now);
                    let operator = pd_torque(&self.cfg.gains, &reference, &self.leader.state);
                    let feedback = leader_torque(self.cfg.gains.k, &self.held_tau_ext)?;
                    self.leader.command = feedback;
                    self.leader.pending_torque = operator + feedback;
                    self.record(now);
                    self.schedule_next(now, Event::LeaderControl, self.cfg.control_period_us);
                }
                Event::LeaderComm => {
                    let s = self.leader.state;
                    let packet = ControlPacket::leader_state(self.l2f_seq, now, s.q, s.qdot);
                    self.l2f_seq += 1;
                    let delivery = self.l2f.submit(packet)?;
                    self.log_and_queue(delivery);
                    self.schedule_comm(now, Event::LeaderComm);
                }
                Event::FollowerComm => {
                    let contact = self.cfg.contact.torque_at(now);
                    let tau_ext = external_torque_estimate(&self.follower.state, &contact);
                    let packet = ControlPacket::external_torque(self.f2l_seq, now, tau_ext);
                    self.f2l_seq += 1;
                    let delivery = self.f2l.submit(packet)?;
                    self.log_and_queue(delivery);
                    self.schedule_comm(now, Event::FollowerComm);
                }
            }
        }
        Ok(())
    }

    fn schedule_next(&mut self, now: SimTime, event: Event, period: u64) {
        let next = now.plus_us(period);
        if next.0 <= self.cfg.duration_us {
            self.queue.push(next, event);
        }
    }

    fn schedule_comm(&mut self, now: SimTime, event: Event) {
        let next = now.plus_us(self.cfg.comm_period_us);
        if next.0 < self.cfg.duration_us {
            self.queue.push(next, event);
        }
    }

    fn log_and_queue(&mut self, delivery: DeliveryEvent) {
        self.packets.push(PacketRecord::from(&delivery));
        self.queue.push(delivery.deliver_at, Event::Deliver(delivery));
    }

    fn record(&mut self, now: SimTime) {
        self.ticks.push(TickRecord {
            t: now,
            q_leader: self.leader.state.q,
            qdot_leader: self.leader.state.qdot,
            q_follower: self.follower.state.q,
            qdot_follower: self.follower.state.qdot,
            tau_leader: self.leader.command,
            tau_follower: self.follower.command,
        });
    }

    fn diverged(&self, now: SimTime, reason: String) -> Error {
        Error::Diverged {
            at_us: now.0,
            reason,
            prefix: Box::new(RunTrace {
                config: self.cfg.clone(),
                ticks: self.ticks.clone(),
                packets: self.packets.clone(),
            }),
        }
    }

    fn into_trace(self) -> RunTrace {
        RunTrace {
            config: self.cfg.clone(),
            ticks: self.ticks,
            packets: self.packets,
        }
    }
}

/// Seed of repetition `r` of a config seeded with `seed`. Repetition 0 runs
/// on the config's own seed, so a one-repetition batch reproduces
/// [`run_scenario`].
pub fn repetition_seed(seed: u64, repetition: u32) -> u64 {
    if repetition == 0 {
        seed
    } else {
        derive_seed(seed, repetition as u64)
    }
}

#[derive(Debug)]
pub struct BatchRun {
    pub config_index: usize,
    pub repetition: u32,
    pub seed: u64,
    pub outcome: Result<RunTrace>,
}

/// Run every config `repetitions` times on up to `jobs` worker threads.
/// Output is ordered by (config index, repetition) whatever the scheduling.
pub fn run_batch(configs: &[ScenarioConfig], repetitions: u32, jobs: usize) -> Result<Vec<BatchRun>> {
    if repetitions < 1 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    let work: Vec<(usize, u32)> = (0..configs.len())
        .flat_map(|c| (0..repetitions).map(move |r| (c, r)))
        .collect();
    let one = |&(c, r): &(usize, u32)| {
        let mut cfg = configs[c].clone();
        cfg.seed = repetition_seed(cfg.seed, r);
        let seed = cfg.seed;
        BatchRun {
            config_index: c,
            repetition: r,
            seed,
            outcome: run_scenario(&cfg),
        }
    };
    if jobs <= 1 {
        return Ok(work.iter().map(one).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| work.par_iter().map(one).collect()))
}
