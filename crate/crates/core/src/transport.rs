//! One-way message transports.
//!
//! Three delay models share one interface:
//!
//! * **wired**: reliable stream over a LAN; shifted-gamma send and receive
//!   delays.
//! * **wireless**: reliable stream over Wi-Fi; like wired, plus rare
//!   retransmission stalls on the receive path drawn from a heavy spike
//!   component.
//! * **gallop**: cycle-scheduled exchange; a packet waits for the next
//!   cycle boundary (plus a constant processing overhead) and then sees a
//!   short low-variance receive delay.
//!
//! All transports are lossless. Retransmissions surface as extra delay and
//! delivery is in order per direction: a packet is never delivered before
//! its predecessor (head-of-line blocking). Any such wait is folded into
//! `t_recv`, so `deliver_at = sent_at + t_send + t_recv` always holds.
//!
//! Preset parameters are in microseconds and were chosen so that shifted
//! gamma components reproduce the measured mean and standard deviation of
//! each (transport, direction, component) cell; see [`preset_for`].

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use crate::model::{streams, ControlPacket, Direction, RngStream, SimTime};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Wired,
    Wireless,
    Gallop,
}

impl TransportKind {
    pub const ALL: [TransportKind; 3] = [TransportKind::Gallop, TransportKind::Wired, TransportKind::Wireless];

    pub fn as_str(self) -> &'static str {
        match self {
            TransportKind::Wired => "wired",
            TransportKind::Wireless => "wireless",
            TransportKind::Gallop => "gallop",
        }
    }
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransportKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wired" => Ok(TransportKind::Wired),
            "wireless" => Ok(TransportKind::Wireless),
            "gallop" => Ok(TransportKind::Gallop),
            other => Err(Error::Config(format!(
                "unknown transport kind {other:?} (expected wired, wireless or gallop)"
            ))),
        }
    }
}

/// A nonnegative delay distribution, in microseconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DelaySampler {
    Constant {
        shift_us: u64,
    },
    /// `shift + Gamma(shape, scale)`, rounded to the nearest microsecond.
    ShiftedGamma {
        shift_us: u64,
        shape: f64,
        scale_us: f64,
    },
    /// `base`, plus an `extra` draw with probability `prob`.
    Mixture {
        base: Box<DelaySampler>,
        prob: f64,
        extra: Box<DelaySampler>,
    },
}

impl DelaySampler {
    pub fn constant(shift_us: u64) -> Self {
        DelaySampler::Constant { shift_us }
    }

    pub fn shifted_gamma(shift_us: u64, shape: f64, scale_us: f64) -> Self {
        DelaySampler::ShiftedGamma {
            shift_us,
            shape,
            scale_us,
        }
    }

    /// Shifted gamma whose total mean and standard deviation are the given
    /// values (µs). Requires `mean > shift`.
    pub fn gamma_with_moments(shift_us: u64, mean_us: f64, sigma_us: f64) -> Self {
        let excess = mean_us - shift_us as f64;
        let scale_us = sigma_us * sigma_us / excess;
        DelaySampler::ShiftedGamma {
            shift_us,
            shape: excess / scale_us,
            scale_us,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DelaySampler::Constant { .. } => Ok(()),
            DelaySampler::ShiftedGamma { shape, scale_us, .. } => {
                if !(shape.is_finite() && *shape > 0.0) {
                    return Err(Error::Sampler(format!("gamma shape must be positive, got {shape}")));
                }
                if !(scale_us.is_finite() && *scale_us > 0.0) {
                    return Err(Error::Sampler(format!("gamma scale must be positive, got {scale_us}")));
                }
                Ok(())
            }
            DelaySampler::Mixture { base, prob, extra } => {
                if !(0.0..=1.0).contains(prob) {
                    return Err(Error::Sampler(format!("mixture probability must lie in [0, 1], got {prob}")));
                }
                base.validate()?;
                extra.validate()
            }
        }
    }

    /// Lower bound of every draw.
    pub fn shift_us(&self) -> u64 {
        match self {
            DelaySampler::Constant { shift_us } | DelaySampler::ShiftedGamma { shift_us, .. } => *shift_us,
            DelaySampler::Mixture { base, .. } => base.shift_us(),
        }
    }

    /// Analytic mean in microseconds (before rounding).
    pub fn mean_us(&self) -> f64 {
        match self {
            DelaySampler::Constant { shift_us } => *shift_us as f64,
            DelaySampler::ShiftedGamma {
                shift_us,
                shape,
                scale_us,
            } => *shift_us as f64 + shape * scale_us,
            DelaySampler::Mixture { base, prob, extra } => base.mean_us() + prob * extra.mean_us(),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, DelaySampler::Constant { .. })
    }
}

/// `sample_delay`: one draw in microseconds.
///
/// A mixture with `prob == 0` consumes no randomness for its Bernoulli
/// trial, so it replays the base sampler draw for draw.
pub fn sample_delay(sampler: &DelaySampler, rng: &mut RngStream) -> Result<u64> {
    match sampler {
        DelaySampler::Constant { shift_us } => Ok(*shift_us),
        DelaySampler::ShiftedGamma {
            shift_us,
            shape,
            scale_us,
        } => {
            let gamma = Gamma::new(*shape, *scale_us)
                .map_err(|e| Error::Sampler(format!("gamma(shape={shape}, scale={scale_us}): {e}")))?;
            let draw: f64 = gamma.sample(rng);
            Ok(shift_us + draw.round() as u64)
        }
        DelaySampler::Mixture { base, prob, extra } => {
            if !(0.0..=1.0).contains(prob) {
                return Err(Error::Sampler(format!("mixture probability must lie in [0, 1], got {prob}")));
            }
            let mut total = sample_delay(base, rng)?;
            if *prob > 0.0 && rng.next_uniform() < *prob {
                total += sample_delay(extra, rng)?;
            }
            Ok(total)
        }
    }
}

/// Parameters of one direction of one transport.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportConfig {
    pub kind: TransportKind,
    /// Send-side delay. For gallop this must be a constant processing
    /// overhead added after the cycle wait.
    pub send_overhead: DelaySampler,
    pub receive_path: DelaySampler,
    /// Probability of a retransmission stall on the receive path (wireless).
    #[serde(default)]
    pub spike_prob: f64,
    #[serde(default)]
    pub spike_delay: Option<DelaySampler>,
    /// Cycle length (gallop).
    #[serde(default)]
    pub cycle_us: u64,
    /// Cycle boundaries fall at `cycle_offset_us + k * cycle_us`.
    #[serde(default)]
    pub cycle_offset_us: u64,
    /// Probability that a packet misses its slot and waits one more cycle.
    /// Off in every preset.
    #[serde(default)]
    pub overrun_prob: f64,
    pub seed: u64,
    pub stream_id: u64,
}

impl TransportConfig {
    pub fn validate(&self) -> Result<()> {
        self.send_overhead.validate()?;
        self.receive_path.validate()?;
        if !(0.0..=1.0).contains(&self.spike_prob) {
            return Err(Error::Config(format!("spike_prob must lie in [0, 1], got {}", self.spike_prob)));
        }
        if !(0.0..=1.0).contains(&self.overrun_prob) {
            return Err(Error::Config(format!("overrun_prob must lie in [0, 1], got {}", self.overrun_prob)));
        }
        if let Some(spike) = &self.spike_delay {
            spike.validate()?;
        }
        if self.spike_prob > 0.0 && self.spike_delay.is_none() {
            return Err(Error::Config("spike_prob > 0 requires spike_delay".into()));
        }
        if self.kind == TransportKind::Gallop {
            if self.cycle_us == 0 {
                return Err(Error::Config("gallop transport needs cycle_us > 0".into()));
            }
            if !self.send_overhead.is_constant() {
                return Err(Error::Config("gallop send_overhead must be a constant sampler".into()));
            }
        }
        Ok(())
    }

    /// The receive path including the spike component.
    pub fn effective_receive(&self) -> DelaySampler {
        match (&self.spike_delay, self.spike_prob > 0.0) {
            (Some(spike), true) => DelaySampler::Mixture {
                base: Box::new(self.receive_path.clone()),
                prob: self.spike_prob,
                extra: Box::new(spike.clone()),
            },
            _ => self.receive_path.clone(),
        }
    }

    /// Wait from `now` until the first cycle boundary strictly after it.
    pub fn cycle_wait_us(&self, now: SimTime) -> u64 {
        let c = self.cycle_us;
        let phase = (now.0 + c - self.cycle_offset_us % c) % c;
        c - phase
    }

    /// Calibration helper: raw `(t_send, t_recv)` without in-order clamping.
    pub fn draw(&self, rng: &mut RngStream, now: SimTime) -> Result<(u64, u64)> {
        let receive = self.effective_receive();
        self.draw_with(rng, now, &receive)
    }

    fn draw_with(&self, rng: &mut RngStream, now: SimTime, receive: &DelaySampler) -> Result<(u64, u64)> {
        let t_send = match self.kind {
            TransportKind::Gallop => {
                let mut wait = self.cycle_wait_us(now);
                if self.overrun_prob > 0.0 && rng.next_uniform() < self.overrun_prob {
                    wait += self.cycle_us;
                }
                wait + self.send_overhead.shift_us()
            }
            TransportKind::Wired | TransportKind::Wireless => sample_delay(&self.send_overhead, rng)?,
        };
        let t_recv = sample_delay(receive, rng)?;
        Ok((t_send, t_recv))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeliveryEvent {
    pub packet: ControlPacket,
    pub deliver_at: SimTime,
    pub t_send_us: u64,
    pub t_recv_us: u64,
}

/// A live one-way channel: configuration, its random stream and the
/// in-order delivery state.
#[derive(Clone, Debug)]
pub struct Transport {
    config: TransportConfig,
    receive: DelaySampler,
    rng: RngStream,
    last_deliver_at: Option<SimTime>,
    last_seq: Option<u64>,
}

impl Transport {
    pub fn new(config: TransportConfig) -> Result<Self> {
        config.validate()?;
        let rng = RngStream::new(config.seed, config.stream_id);
        let receive = config.effective_receive();
        Ok(Transport {
            config,
            receive,
            rng,
            last_deliver_at: None,
            last_seq: None,
        })
    }

    pub fn config(&self) -> &TransportConfig {
        &self.config
    }

    /// Schedule delivery of `packet`, submitted at `packet.sent_at`.
    pub fn submit(&mut self, packet: ControlPacket) -> Result<DeliveryEvent> {
        if let Some(prev) = self.last_seq {
            if packet.seq <= prev {
                return Err(Error::Config(format!(
                    "sequence numbers must increase per direction (got {} after {prev})",
                    packet.seq
                )));
            }
        }
        let now = packet.sent_at;
        let (t_send, raw_recv) = self.config.draw_with(&mut self.rng, now, &self.receive)?;
        let mut deliver_at = now.plus_us(t_send + raw_recv);
        if let Some(prev) = self.last_deliver_at {
            deliver_at = deliver_at.max(prev);
        }
        self.last_deliver_at = Some(deliver_at);
        self.last_seq = Some(packet.seq);
        Ok(DeliveryEvent {
            packet,
            deliver_at,
            t_send_us: t_send,
            t_recv_us: deliver_at.since(now) - t_send,
        })
    }
}

/// Measured per-direction delay moments (µs) that the presets are fitted to.
struct Moments {
    send_mean: f64,
    send_sigma: f64,
    recv_mean: f64,
    recv_sigma: f64,
}

fn measured(kind: TransportKind, direction: Direction) -> Moments {
    use Direction::*;
    use TransportKind::*;
    let (send_mean, send_sigma, recv_mean, recv_sigma) = match (kind, direction) {
        (Gallop, LeaderToFollower) => (49_100.0, 1_610.0, 688.0, 1_030.0),
        (Gallop, FollowerToLeader) => (49_100.0, 1_510.0, 786.0, 622.0),
        (Wired, LeaderToFollower) => (116.0, 127.0, 1_260.0, 2_370.0),
        (Wired, FollowerToLeader) => (126.0, 93.0, 994.0, 1_880.0),
        (Wireless, LeaderToFollower) => (178.0, 176.0, 12_900.0, 51_700.0),
        (Wireless, FollowerToLeader) => (217.0, 153.0, 12_700.0, 52_800.0),
    };
    Moments {
        send_mean,
        send_sigma,
        recv_mean,
        recv_sigma,
    }
}

/// Wireless retransmission stall: probability and gamma moments (µs).
pub const WIRELESS_SPIKE_PROB: f64 = 0.01;
pub const WIRELESS_SPIKE_MEAN_US: f64 = 900_000.0;
pub const WIRELESS_SPIKE_SIGMA_US: f64 = 120_000.0;
/// Standard deviation of the non-spike part of the wireless receive path.
const WIRELESS_BASE_SIGMA_US: f64 = 4_000.0;

pub const GALLOP_CYCLE_US: u64 = 50_000;
pub const GALLOP_OVERHEAD_US: u64 = 200;
/// Comm ticks land this far after a cycle boundary, drawn once per run.
pub const GALLOP_PHASE_RANGE_US: (f64, f64) = (200.0, 2_000.0);

/// Leader-to-follower preset for `kind`.
pub fn preset(kind: TransportKind, seed: u64) -> TransportConfig {
    preset_for(kind, Direction::LeaderToFollower, seed)
}

/// `preset` by name; unknown names are a configuration error.
pub fn preset_named(kind: &str, seed: u64) -> Result<TransportConfig> {
    Ok(preset(kind.parse()?, seed))
}

/// Preset for one direction.
///
/// * wired/wireless send: shifted gamma matching measured mean and σ.
/// * wired receive: shifted gamma matching measured mean and σ.
/// * wireless receive: shifted-gamma base (σ 4 ms) plus a 1% stall of
///   ~0.9 s; the base mean absorbs whatever the stall does not contribute,
///   so the overall mean matches. The stall dominates the tail.
/// * gallop send: wait for the next 50 ms cycle boundary plus 0.2 ms; the
///   boundary phase is drawn once per run so comm ticks land 0.2-2 ms after
///   a boundary.
/// * gallop receive: shifted gamma matching measured mean and σ.
pub fn preset_for(kind: TransportKind, direction: Direction, seed: u64) -> TransportConfig {
    let m = measured(kind, direction);
    let stream_id = match direction {
        Direction::LeaderToFollower => streams::L2F_DELAY,
        Direction::FollowerToLeader => streams::F2L_DELAY,
    };
    let base = TransportConfig {
        kind,
        send_overhead: DelaySampler::constant(0),
        receive_path: DelaySampler::constant(0),
        spike_prob: 0.0,
        spike_delay: None,
        cycle_us: 0,
        cycle_offset_us: 0,
        overrun_prob: 0.0,
        seed,
        stream_id,
    };
    match kind {
        TransportKind::Wired => TransportConfig {
            send_overhead: DelaySampler::gamma_with_moments(20, m.send_mean, m.send_sigma),
            receive_path: DelaySampler::gamma_with_moments(100, m.recv_mean, m.recv_sigma),
            ..base
        },
        TransportKind::Wireless => {
            let base_mean = m.recv_mean - WIRELESS_SPIKE_PROB * WIRELESS_SPIKE_MEAN_US;
            TransportConfig {
                send_overhead: DelaySampler::gamma_with_moments(30, m.send_mean, m.send_sigma),
                receive_path: DelaySampler::gamma_with_moments(500, base_mean, WIRELESS_BASE_SIGMA_US),
                spike_prob: WIRELESS_SPIKE_PROB,
                spike_delay: Some(DelaySampler::gamma_with_moments(0, WIRELESS_SPIKE_MEAN_US, WIRELESS_SPIKE_SIGMA_US)),
                ..base
            }
        }
        TransportKind::Gallop => {
            // Shared by both directions: one schedule serves the exchange.
            let mut phase_rng = RngStream::new(seed, streams::CYCLE_PHASE);
            let lag = phase_rng.uniform_range(GALLOP_PHASE_RANGE_US.0, GALLOP_PHASE_RANGE_US.1).round() as u64;
            TransportConfig {
                send_overhead: DelaySampler::constant(GALLOP_OVERHEAD_US),
                receive_path: DelaySampler::gamma_with_moments(100, m.recv_mean, m.recv_sigma),
                cycle_us: GALLOP_CYCLE_US,
                cycle_offset_us: GALLOP_CYCLE_US - lag,
                ..base
            }
        }
    }
}
