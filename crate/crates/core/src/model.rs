//! Shared domain types: joint vectors, simulation time, control packets and
//! seeded random streams.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Degrees of freedom of each arm.
pub const DOF: usize = 7;

/// Seven joint values: angles (rad), velocities (rad/s) or torques (N·m).
///
/// Every element is finite. Construction through [`JointVector::new`] or
/// [`JointVector::from_slice`] enforces this.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct JointVector([f64; DOF]);

pub type JointAngles = JointVector;
pub type JointVelocities = JointVector;
pub type JointTorques = JointVector;

impl JointVector {
    pub const ZERO: JointVector = JointVector([0.0; DOF]);

    pub fn new(values: [f64; DOF]) -> Result<Self> {
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(JointVector(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; DOF] = values.try_into().map_err(|_| Error::Arity {
            expected: DOF,
            got: values.len(),
        })?;
        Self::new(arr)
    }

    /// Every joint set to `value`.
    pub fn splat(value: f64) -> Result<Self> {
        Self::new([value; DOF])
    }

    pub fn as_array(&self) -> &[f64; DOF] {
        &self.0
    }

    pub fn get(&self, joint: usize) -> f64 {
        self.0[joint]
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.0.iter().copied()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Elementwise product.
    pub fn hadamard(self, other: JointVector) -> JointVector {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> JointVector {
        JointVector(self.0.map(f))
    }

    pub fn zip_with(self, other: JointVector, f: impl Fn(f64, f64) -> f64) -> JointVector {
        let mut out = [0.0; DOF];
        for (i, o) in out.iter_mut().enumerate() {
            *o = f(self.0[i], other.0[i]);
        }
        JointVector(out)
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Arithmetic results are not revalidated; overflow to infinity is
    /// caught here by callers that care (the integrator does).
    pub fn checked(self) -> Result<Self> {
        Self::new(self.0)
    }
}

/// `make_joint_vector`: validated construction from an arbitrary slice.
pub fn make_joint_vector(values: &[f64]) -> Result<JointVector> {
    JointVector::from_slice(values)
}

impl TryFrom<Vec<f64>> for JointVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        JointVector::from_slice(&v)
    }
}

impl From<JointVector> for Vec<f64> {
    fn from(v: JointVector) -> Self {
        v.0.to_vec()
    }
}

impl Add for JointVector {
    type Output = JointVector;
    fn add(self, rhs: JointVector) -> JointVector {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for JointVector {
    type Output = JointVector;
    fn sub(self, rhs: JointVector) -> JointVector {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Neg for JointVector {
    type Output = JointVector;
    fn neg(self) -> JointVector {
        self.map(|a| -a)
    }
}

impl Mul<f64> for JointVector {
    type Output = JointVector;
    fn mul(self, k: f64) -> JointVector {
        self.map(|a| a * k)
    }
}

/// Microseconds since the start of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SimTime(pub u64);

impl SimTime {
    pub const ZERO: SimTime = SimTime(0);

    pub fn from_micros(us: u64) -> Self {
        SimTime(us)
    }

    pub fn from_millis(ms: u64) -> Self {
        SimTime(ms * 1_000)
    }

    pub fn as_micros(self) -> u64 {
        self.0
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 * 1e-6
    }

    pub fn plus_us(self, us: u64) -> Self {
        SimTime(self.0 + us)
    }

    /// Saturating difference in microseconds.
    pub fn since(self, earlier: SimTime) -> u64 {
        self.0.saturating_sub(earlier.0)
    }
}

impl fmt::Display for SimTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}us", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "l2f")]
    LeaderToFollower,
    #[serde(rename = "f2l")]
    FollowerToLeader,
}

impl Direction {
    pub const BOTH: [Direction; 2] = [Direction::LeaderToFollower, Direction::FollowerToLeader];

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::LeaderToFollower => "l2f",
            Direction::FollowerToLeader => "f2l",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Direction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2f" => Ok(Direction::LeaderToFollower),
            "f2l" => Ok(Direction::FollowerToLeader),
            other => Err(Error::Config(format!("unknown direction {other:?}"))),
        }
    }
}

/// What a packet carries. The variant fixes both the direction and the
/// number of joint vectors on the wire.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Payload {
    /// Leader joint angles and velocities, sent leader to follower.
    LeaderState { q: JointAngles, qdot: JointVelocities },
    /// Follower external torque, sent follower to leader.
    ExternalTorque(JointTorques),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlPacket {
    pub seq: u64,
    pub sent_at: SimTime,
    pub payload: Payload,
}

impl ControlPacket {
    pub fn leader_state(seq: u64, sent_at: SimTime, q: JointAngles, qdot: JointVelocities) -> Self {
        ControlPacket {
            seq,
            sent_at,
            payload: Payload::LeaderState { q, qdot },
        }
    }

    pub fn external_torque(seq: u64, sent_at: SimTime, tau: JointTorques) -> Self {
        ControlPacket {
            seq,
            sent_at,
            payload: Payload::ExternalTorque(tau),
        }
    }

    pub fn direction(&self) -> Direction {
        match self.payload {
            Payload::LeaderState { .. } => Direction::LeaderToFollower,
            Payload::ExternalTorque(_) => Direction::FollowerToLeader,
        }
    }

    pub fn vectors(&self) -> Vec<JointVector> {
        match self.payload {
            Payload::LeaderState { q, qdot } => vec![q, qdot],
            Payload::ExternalTorque(t) => vec![t],
        }
    }
}

/// Stream identifiers, one per stochastic component of a run.
pub mod streams {
    pub const L2F_DELAY: u64 = 1;
    pub const F2L_DELAY: u64 = 2;
    pub const CYCLE_PHASE: u64 = 3;
    pub const TRAJECTORY: u64 = 4;
}

/// A seeded random stream. Identical `(seed, stream_id)` pairs produce
/// identical sequences on every platform (ChaCha8 keyed by the seed, with
/// the stream id selecting the ChaCha stream).
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw in `[0, 1)`.
    pub fn next_uniform(&mut self) -> f64 {
        // 53 high bits, the standard mapping onto [0, 1).
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for `index` under `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    mix64(seed ^ mix64(index.wrapping_add(0x5EED)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_vector() {
        let v = make_joint_vector(&[0.0; 7]).unwrap();
        assert_eq!(v, JointVector::ZERO);
    }

    #[test]
    fn identity_construction() {
        let v = make_joint_vector(&[1., 2., 3., 4., 5., 6., 7.]).unwrap();
        for i in 0..DOF {
            assert_eq!(v.get(i), (i + 1) as f64);
        }
    }

    #[test]
    fn non_finite_names_index() {
        let err = make_joint_vector(&[0., 0., f64::NAN, 0., 0., 0., 0.]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 2, .. }), "{err}");
        let err = make_joint_vector(&[0., 0., 0., 0., 0., f64::INFINITY, 0.]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 5, .. }));
    }

    #[test]
    fn wrong_arity() {
        let err = make_joint_vector(&[1.0; 6]).unwrap_err();
        assert!(matches!(err, Error::Arity { expected: 7, got: 6 }));
        assert!(make_joint_vector(&[1.0; 8]).is_err());
    }

    #[test]
    fn try_from_vec_validates() {
        let ok = JointVector::try_from(vec![1., 2., 3., 4., 5., 6., 7.]).unwrap();
        assert_eq!(ok.get(6), 7.0);
        assert!(JointVector::try_from(vec![1.0; 3]).is_err());
        assert!(JointVector::try_from(vec![f64::NAN; 7]).is_err());
    }

    #[test]
    fn rng_determinism() {
        let mut a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 0);
        let xs: Vec<f64> = (0..1000).map(|_| a.next_uniform()).collect();
        let ys: Vec<f64> = (0..1000).map(|_| b.next_uniform()).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn rng_streams_independent() {
        let mut a = RngStream::new(1, 0);
        let mut b = RngStream::new(1, 1);
        let xs: Vec<f64> = (0..1000).map(|_| a.next_uniform()).collect();
        let ys: Vec<f64> = (0..1000).map(|_| b.next_uniform()).collect();
        assert!(xs.iter().zip(&ys).any(|(x, y)| x != y));
    }

    #[test]
    fn rng_range() {
        let mut a = RngStream::new(99, 3);
        for _ in 0..10_000 {
            let u = a.next_uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn packet_arity_by_direction() {
        let p = ControlPacket::leader_state(0, SimTime::ZERO, JointVector::ZERO, JointVector::ZERO);
        assert_eq!(p.direction(), Direction::LeaderToFollower);
        assert_eq!(p.vectors().len(), 2);
        let p = ControlPacket::external_torque(0, SimTime::ZERO, JointVector::ZERO);
        assert_eq!(p.direction(), Direction::FollowerToLeader);
        assert_eq!(p.vectors().len(), 1);
    }

    fn finite_vec() -> impl Strategy<Value = JointVector> {
        prop::array::uniform7(-1e6f64..1e6).prop_map(|a| JointVector::new(a).unwrap())
    }

    proptest! {
        #[test]
        fn arithmetic_is_elementwise_and_closed(a in finite_vec(), b in finite_vec(), k in -1e3f64..1e3) {
            let s = a + b;
            let d = a - b;
            let m = a * k;
            prop_assert!(s.is_finite() && d.is_finite() && m.is_finite());
            for i in 0..DOF {
                prop_assert_eq!(s.get(i), a.get(i) + b.get(i));
                prop_assert_eq!(d.get(i), a.get(i) - b.get(i));
                prop_assert_eq!(m.get(i), a.get(i) * k);
            }
        }

        #[test]
        fn derived_seeds_distinct(seed in any::<u64>(), i in 0u64..1000) {
            prop_assert_ne!(derive_seed(seed, i), derive_seed(seed, i + 1));
        }
    }
}
