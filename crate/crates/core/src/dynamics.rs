//! Arm plant, control laws and the synthetic operator.
//!
//! Each arm is a decoupled diagonal-inertia double integrator with viscous
//! damping, integrated with semi-implicit Euler at the control rate. The
//! leader renders a scaled copy of the follower's external torque; the
//! follower runs a joint-space PD loop toward the (held) leader state.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::model::{JointAngles, JointTorques, JointVector, JointVelocities, RngStream, SimTime, DOF};
use crate::{Error, Result};

/// Soft joint limit, applied symmetrically to every joint.
pub const JOINT_LIMIT: f64 = TAU;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArmState {
    pub q: JointAngles,
    pub qdot: JointVelocities,
}

impl ArmState {
    pub const REST: ArmState = ArmState {
        q: JointVector::ZERO,
        qdot: JointVector::ZERO,
    };

    pub fn new(q: JointAngles, qdot: JointVelocities) -> Self {
        ArmState { q, qdot }
    }

    pub fn is_finite(&self) -> bool {
        self.q.is_finite() && self.qdot.is_finite()
    }
}

/// Diagonal PD gains shared by both loops plus the force-feedback scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlGains {
    pub p: JointVector,
    pub d: JointVector,
    pub k: f64,
}

impl ControlGains {
    pub const DEFAULT_P: f64 = 50.0;
    /// Close to critical damping `2 * sqrt(P * inertia)` for unit inertia.
    pub const DEFAULT_D: f64 = 14.1;
    pub const DEFAULT_K: f64 = 0.3;

    pub fn new(p: JointVector, d: JointVector, k: f64) -> Result<Self> {
        let gains = ControlGains { p, d, k };
        gains.validate()?;
        Ok(gains)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.p.iter().position(|v| v <= 0.0) {
            return Err(Error::Gain(format!("P[{i}] must be positive, got {}", self.p.get(i))));
        }
        if let Some(i) = self.d.iter().position(|v| v <= 0.0) {
            return Err(Error::Gain(format!("D[{i}] must be positive, got {}", self.d.get(i))));
        }
        check_feedback_scale(self.k)
    }
}

impl Default for ControlGains {
    fn default() -> Self {
        ControlGains {
            p: JointVector::new([Self::DEFAULT_P; DOF]).unwrap(),
            d: JointVector::new([Self::DEFAULT_D; DOF]).unwrap(),
            k: Self::DEFAULT_K,
        }
    }
}

fn check_feedback_scale(k: f64) -> Result<()> {
    if k > 0.0 && k < 1.0 {
        Ok(())
    } else {
        Err(Error::Gain(format!("K must lie in (0, 1), got {k}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmModel {
    /// kg·m², strictly positive.
    pub inertia: JointVector,
    /// N·m·s/rad, nonnegative.
    pub damping: JointVector,
}

impl ArmModel {
    pub fn new(inertia: JointVector, damping: JointVector) -> Result<Self> {
        let model = ArmModel { inertia, damping };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.inertia.iter().position(|v| v <= 0.0) {
            return Err(Error::Config(format!("inertia[{i}] must be positive")));
        }
        if let Some(i) = self.damping.iter().position(|v| v < 0.0) {
            return Err(Error::Config(format!("damping[{i}] must be nonnegative")));
        }
        Ok(())
    }

    pub fn kinetic_energy(&self, state: &ArmState) -> f64 {
        self.inertia
            .zip_with(state.qdot, |m, v| 0.5 * m * v * v)
            .sum()
    }
}

impl Default for ArmModel {
    fn default() -> Self {
        ArmModel {
            inertia: JointVector::new([1.0; DOF]).unwrap(),
            damping: JointVector::new([0.5; DOF]).unwrap(),
        }
    }
}

/// Leader command torque: the follower's external torque scaled by `k`.
pub fn leader_torque(k: f64, tau_ext_follower: &JointTorques) -> Result<JointTorques> {
    check_feedback_scale(k)?;
    Ok(*tau_ext_follower * k)
}

/// Joint-space PD toward `target`: `P (q_t - q) + D (qdot_t - qdot)`.
pub fn pd_torque(gains: &ControlGains, target: &ArmState, actual: &ArmState) -> JointTorques {
    gains.p.hadamard(target.q - actual.q) + gains.d.hadamard(target.qdot - actual.qdot)
}

/// Follower command torque tracking the leader.
///
/// Signs are chosen so positive-definite gains pull the follower toward the
/// leader.
pub fn follower_torque(gains: &ControlGains, leader: &ArmState, follower: &ArmState) -> JointTorques {
    pd_torque(gains, leader, follower)
}

/// One semi-implicit Euler step of length `dt_us`, followed by the joint
/// limit clamp (position clamped, velocity zeroed on clamped joints).
pub fn step_arm(model: &ArmModel, state: &ArmState, applied_torque: &JointTorques, dt_us: u64) -> Result<ArmState> {
    if let Some(i) = applied_torque.iter().position(|v| !v.is_finite()) {
        return Err(Error::Integration(format!(
            "torque on joint {i} is not finite ({})",
            applied_torque.get(i)
        )));
    }
    let dt = dt_us as f64 * 1e-6;
    let mut q = [0.0; DOF];
    let mut qdot = [0.0; DOF];
    for i in 0..DOF {
        let accel = (applied_torque.get(i) - model.damping.get(i) * state.qdot.get(i)) / model.inertia.get(i);
        let v = state.qdot.get(i) + dt * accel;
        let p = state.q.get(i) + dt * v;
        if p > JOINT_LIMIT {
            q[i] = JOINT_LIMIT;
        } else if p < -JOINT_LIMIT {
            q[i] = -JOINT_LIMIT;
        } else {
            q[i] = p;
            qdot[i] = v;
            continue;
        }
        qdot[i] = 0.0;
    }
    let q = JointVector::new(q).map_err(|e| Error::Integration(format!("position: {e}")))?;
    let qdot = JointVector::new(qdot).map_err(|e| Error::Integration(format!("velocity: {e}")))?;
    Ok(ArmState { q, qdot })
}

/// Torque reported back to the leader. Contact is scripted, so the
/// estimate is the scripted torque itself; there is no observer model.
pub fn external_torque_estimate(_follower: &ArmState, contact: &JointTorques) -> JointTorques {
    *contact
}

/// A scripted contact torque active on `[start_us, end_us)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContactWindow {
    pub start_us: u64,
    pub end_us: u64,
    pub torque: JointTorques,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactScript {
    pub windows: Vec<ContactWindow>,
}

impl ContactScript {
    pub fn none() -> Self {
        ContactScript::default()
    }

    /// Sum of all windows active at `t`.
    pub fn torque_at(&self, t: SimTime) -> JointTorques {
        self.windows
            .iter()
            .filter(|w| w.start_us <= t.0 && t.0 < w.end_us)
            .fold(JointVector::ZERO, |acc, w| acc + w.torque)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub q: JointAngles,
    /// Transition time from the previous waypoint; ignored for the first.
    pub move_us: u64,
    pub hold_us: u64,
}

/// Reference motion standing in for the human operator at the leader.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OperatorTrajectory {
    /// `q_i = A_i sin(2 pi f_i t + phi_i)`.
    Sinusoidal {
        amplitude: JointVector,
        frequency_hz: JointVector,
        phase: JointVector,
    },
    /// Hold-and-move through waypoints with smoothstep transitions.
    Waypoints { waypoints: Vec<Waypoint> },
}

impl Default for OperatorTrajectory {
    fn default() -> Self {
        OperatorTrajectory::Sinusoidal {
            amplitude: JointVector::new([0.5, 0.4, 0.3, 0.5, 0.3, 0.4, 0.3]).unwrap(),
            frequency_hz: JointVector::new([0.2, 0.25, 0.3, 0.2, 0.35, 0.25, 0.3]).unwrap(),
            phase: JointVector::ZERO,
        }
    }
}

impl OperatorTrajectory {
    pub fn still() -> Self {
        OperatorTrajectory::Sinusoidal {
            amplitude: JointVector::ZERO,
            frequency_hz: JointVector::ZERO,
            phase: JointVector::ZERO,
        }
    }

    /// Randomised sinusoid for one synthetic operator: amplitudes in
    /// [0.2, 0.6) rad, frequencies in [0.1, 0.4) Hz, uniform phase.
    pub fn pseudo_expert(rng: &mut RngStream) -> Self {
        let mut draw = |lo: f64, hi: f64| {
            let mut a = [0.0; DOF];
            for v in &mut a {
                *v = rng.uniform_range(lo, hi);
            }
            JointVector::new(a).unwrap()
        };
        let amplitude = draw(0.2, 0.6);
        let frequency_hz = draw(0.1, 0.4);
        let phase = draw(0.0, TAU);
        OperatorTrajectory::Sinusoidal {
            amplitude,
            frequency_hz,
            phase,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            OperatorTrajectory::Sinusoidal { frequency_hz, .. } => {
                if frequency_hz.iter().any(|f| f < 0.0) {
                    return Err(Error::Config("trajectory frequencies must be nonnegative".into()));
                }
            }
            OperatorTrajectory::Waypoints { waypoints } => {
                if waypoints.is_empty() {
                    return Err(Error::Config("waypoint trajectory needs at least one waypoint".into()));
                }
            }
        }
        Ok(())
    }

    /// `operator_reference`: reference position and velocity at `t`.
    pub fn reference(&self, t: SimTime) -> ArmState {
        let secs = t.as_secs_f64();
        match self {
            OperatorTrajectory::Sinusoidal {
                amplitude,
                frequency_hz,
                phase,
            } => {
                let mut q = [0.0; DOF];
                let mut qdot = [0.0; DOF];
                for i in 0..DOF {
                    let w = 2.0 * PI * frequency_hz.get(i);
                    let arg = w * secs + phase.get(i);
                    q[i] = amplitude.get(i) * arg.sin();
                    qdot[i] = amplitude.get(i) * w * arg.cos();
                }
                ArmState::new(JointVector::new(q).unwrap(), JointVector::new(qdot).unwrap())
            }
            OperatorTrajectory::Waypoints { waypoints } => waypoint_reference(waypoints, t.0),
        }
    }
}

fn waypoint_reference(waypoints: &[Waypoint], t_us: u64) -> ArmState {
    let mut from = waypoints[0].q;
    let mut cursor = waypoints[0].hold_us;
    if t_us < cursor {
        return ArmState::new(from, JointVector::ZERO);
    }
    for w in &waypoints[1..] {
        if t_us < cursor + w.move_us {
            let span = w.move_us as f64 * 1e-6;
            let u = (t_us - cursor) as f64 / w.move_us as f64;
            let s = u * u * (3.0 - 2.0 * u);
            let ds = 6.0 * u * (1.0 - u) / span;
            let delta = w.q - from;
            return ArmState::new(from + delta * s, delta * ds);
        }
        cursor += w.move_us;
        from = w.q;
        if t_us < cursor + w.hold_us {
            return ArmState::new(from, JointVector::ZERO);
        }
        cursor += w.hold_us;
    }
    ArmState::new(from, JointVector::ZERO)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn jv(a: [f64; 7]) -> JointVector {
        JointVector::new(a).unwrap()
    }

    fn unit_gains(p: f64, d: f64) -> ControlGains {
        ControlGains::new(JointVector::splat(p).unwrap(), JointVector::splat(d).unwrap(), 0.3).unwrap()
    }

    #[test]
    fn leader_torque_examples() {
        assert_eq!(leader_torque(0.3, &JointVector::ZERO).unwrap(), JointVector::ZERO);
        assert_eq!(leader_torque(0.5, &JointVector::splat(1.0).unwrap()).unwrap(), JointVector::splat(0.5).unwrap());
        let out = leader_torque(0.3, &jv([2., -4., 0., 1., 3., -1., 5.])).unwrap();
        let want = [0.6, -1.2, 0.0, 0.3, 0.9, -0.3, 1.5];
        for i in 0..DOF {
            assert_abs_diff_eq!(out.get(i), want[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn leader_torque_rejects_bad_scale() {
        for k in [0.0, 1.0, -0.2, 1.5] {
            assert!(matches!(leader_torque(k, &JointVector::ZERO), Err(Error::Gain(_))));
        }
    }

    #[test]
    fn gains_validation() {
        assert!(ControlGains::default().validate().is_ok());
        let mut g = ControlGains::default();
        g.p = jv([1., 1., 0., 1., 1., 1., 1.]);
        assert!(g.validate().is_err());
        let mut g = ControlGains::default();
        g.k = 1.0;
        assert!(g.validate().is_err());
    }

    #[test]
    fn follower_torque_examples() {
        let g = unit_gains(50.0, 5.0);
        let s = ArmState::new(jv([0.3; 7]), jv([0.1; 7]));
        assert_eq!(follower_torque(&g, &s, &s), JointVector::ZERO);

        let leader = ArmState::new(jv([0.1, 0., 0., 0., 0., 0., 0.]), JointVector::ZERO);
        let out = follower_torque(&g, &leader, &ArmState::REST);
        assert_abs_diff_eq!(out.get(0), 5.0, epsilon = 1e-12);
        assert!(out.iter().skip(1).all(|v| v == 0.0));

        let leader = ArmState::new(JointVector::ZERO, jv([0., 0.2, 0., 0., 0., 0., 0.]));
        let out = follower_torque(&g, &leader, &ArmState::REST);
        assert_abs_diff_eq!(out.get(1), 1.0, epsilon = 1e-12);
        assert_eq!(out.get(0), 0.0);
    }

    #[test]
    fn step_equilibrium() {
        let m = ArmModel::default();
        let s = step_arm(&m, &ArmState::REST, &JointVector::ZERO, 1000).unwrap();
        assert_eq!(s, ArmState::REST);
    }

    #[test]
    fn step_one_tick_from_rest() {
        let m = ArmModel::new(JointVector::splat(1.0).unwrap(), JointVector::ZERO).unwrap();
        let tau = jv([1., 0., 0., 0., 0., 0., 0.]);
        let s = step_arm(&m, &ArmState::REST, &tau, 1000).unwrap();
        assert_abs_diff_eq!(s.qdot.get(0), 0.001, epsilon = 1e-15);
        assert_abs_diff_eq!(s.q.get(0), 1e-6, epsilon = 1e-18);
    }

    #[test]
    fn step_damped_velocity() {
        let m = ArmModel::new(JointVector::splat(1.0).unwrap(), JointVector::splat(1.0).unwrap()).unwrap();
        let s0 = ArmState::new(JointVector::ZERO, jv([1., 0., 0., 0., 0., 0., 0.]));
        let s = step_arm(&m, &s0, &JointVector::ZERO, 1000).unwrap();
        assert_abs_diff_eq!(s.qdot.get(0), 0.999, epsilon = 1e-15);
    }

    #[test]
    fn step_clamps_at_limit() {
        let m = ArmModel::default();
        let s0 = ArmState::new(jv([JOINT_LIMIT - 1e-6, 0., 0., 0., 0., 0., -JOINT_LIMIT]), jv([1.0, 0., 0., 0., 0., 0., -1.0]));
        let s = step_arm(&m, &s0, &JointVector::ZERO, 1000).unwrap();
        assert_eq!(s.q.get(0), JOINT_LIMIT);
        assert_eq!(s.qdot.get(0), 0.0);
        assert_eq!(s.q.get(6), -JOINT_LIMIT);
        assert_eq!(s.qdot.get(6), 0.0);
    }

    #[test]
    fn step_rejects_overflowed_torque() {
        let big = JointVector::splat(f64::MAX).unwrap();
        let tau = big + big;
        let err = step_arm(&ArmModel::default(), &ArmState::REST, &tau, 1000).unwrap_err();
        assert!(matches!(err, Error::Integration(_)));
    }

    #[test]
    fn external_torque_passes_contact_through() {
        assert_eq!(external_torque_estimate(&ArmState::REST, &JointVector::ZERO), JointVector::ZERO);
        let c = jv([0., 0., 0., 1.5, 0., 0., 0.]);
        assert_eq!(external_torque_estimate(&ArmState::REST, &c), c);
        assert!(crate::model::make_joint_vector(&[0., 0., 0., f64::NAN, 0., 0., 0.]).is_err());
    }

    #[test]
    fn operator_reference_examples() {
        let still = OperatorTrajectory::still();
        for t in [0, 1_000, 777_777] {
            assert_eq!(still.reference(SimTime(t)), ArmState::REST);
        }
        let traj = OperatorTrajectory::Sinusoidal {
            amplitude: jv([0.5, 0., 0., 0., 0., 0., 0.]),
            frequency_hz: jv([0.2; 7]),
            phase: JointVector::ZERO,
        };
        let r0 = traj.reference(SimTime::ZERO);
        assert_eq!(r0.q.get(0), 0.0);
        assert_abs_diff_eq!(r0.qdot.get(0), 0.5 * TAU * 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(r0.qdot.get(0), 0.6283185307179586, epsilon = 1e-12);
        let r = traj.reference(SimTime::from_millis(1250));
        assert_abs_diff_eq!(r.q.get(0), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn contact_script_windows() {
        let c = ContactScript {
            windows: vec![
                ContactWindow { start_us: 100, end_us: 200, torque: jv([1.0; 7]) },
                ContactWindow { start_us: 150, end_us: 300, torque: jv([0.5; 7]) },
            ],
        };
        assert_eq!(c.torque_at(SimTime(99)), JointVector::ZERO);
        assert_eq!(c.torque_at(SimTime(100)), jv([1.0; 7]));
        assert_eq!(c.torque_at(SimTime(160)), jv([1.5; 7]));
        assert_eq!(c.torque_at(SimTime(200)), jv([0.5; 7]));
        assert_eq!(c.torque_at(SimTime(300)), JointVector::ZERO);
    }

    fn waypoints() -> OperatorTrajectory {
        OperatorTrajectory::Waypoints {
            waypoints: vec![
                Waypoint { q: JointVector::ZERO, move_us: 0, hold_us: 200_000 },
                Waypoint { q: jv([0.4, -0.2, 0., 0.1, 0., 0., 0.3]), move_us: 800_000, hold_us: 300_000 },
                Waypoint { q: jv([-0.1; 7]), move_us: 500_000, hold_us: 0 },
            ],
        }
    }

    #[test]
    fn waypoint_endpoints() {
        let traj = waypoints();
        assert_eq!(traj.reference(SimTime(0)).q, JointVector::ZERO);
        let at = traj.reference(SimTime(1_000_000));
        assert_abs_diff_eq!(at.q.get(0), 0.4, epsilon = 1e-12);
        assert_eq!(at.qdot, JointVector::ZERO);
        assert_eq!(traj.reference(SimTime(5_000_000)).q, jv([-0.1; 7]));
    }

    #[test]
    fn waypoint_is_continuous() {
        let traj = waypoints();
        let mut prev = traj.reference(SimTime(0));
        for t in (1..2_000_000).step_by(100) {
            let cur = traj.reference(SimTime(t));
            for i in 0..DOF {
                assert!((cur.q.get(i) - prev.q.get(i)).abs() < 1e-3, "q jump at {t}");
                assert!((cur.qdot.get(i) - prev.qdot.get(i)).abs() < 1e-2, "qdot jump at {t}");
            }
            prev = cur;
        }
    }

    #[test]
    fn waypoint_velocity_matches_finite_difference() {
        let traj = waypoints();
        let t = 600_000;
        let h = 10;
        let fd = (traj.reference(SimTime(t + h)).q - traj.reference(SimTime(t - h)).q) * (1.0 / (2.0 * h as f64 * 1e-6));
        let an = traj.reference(SimTime(t)).qdot;
        for i in 0..DOF {
            assert_abs_diff_eq!(fd.get(i), an.get(i), epsilon = 1e-6);
        }
    }

    #[test]
    fn sinusoid_velocity_matches_finite_difference() {
        let traj = OperatorTrajectory::default();
        let t = 2_345_000;
        let h = 5;
        let fd = (traj.reference(SimTime(t + h)).q - traj.reference(SimTime(t - h)).q) * (1.0 / (2.0 * h as f64 * 1e-6));
        let an = traj.reference(SimTime(t)).qdot;
        for i in 0..DOF {
            assert_abs_diff_eq!(fd.get(i), an.get(i), epsilon = 1e-6);
        }
    }

    #[test]
    fn zero_torque_damped_energy_nonincreasing() {
        let m = ArmModel::default();
        let mut s = ArmState::new(jv([0.1, -0.2, 0.3, 0., 0.5, -0.5, 1.0]), jv([2., -1., 0.5, 3., -2., 0.1, 1.]));
        let mut e = m.kinetic_energy(&s);
        for _ in 0..5000 {
            s = step_arm(&m, &s, &JointVector::ZERO, 1000).unwrap();
            let e2 = m.kinetic_energy(&s);
            assert!(e2 <= e);
            e = e2;
        }
    }

    fn small_vec() -> impl Strategy<Value = JointVector> {
        prop::array::uniform7(-3.0f64..3.0).prop_map(|a| JointVector::new(a).unwrap())
    }

    proptest! {
        #[test]
        fn leader_torque_is_linear(a in small_vec(), b in small_vec(), k in 0.01f64..0.99) {
            let lhs = leader_torque(k, &(a + b)).unwrap();
            let rhs = leader_torque(k, &a).unwrap() + leader_torque(k, &b).unwrap();
            for i in 0..DOF {
                prop_assert!((lhs.get(i) - rhs.get(i)).abs() <= 1e-12);
            }
        }

        #[test]
        fn follower_torque_vanishes_only_at_coincidence(q in small_vec(), v in small_vec(), dq in small_vec()) {
            let g = ControlGains::default();
            let s = ArmState::new(q, v);
            prop_assert_eq!(follower_torque(&g, &s, &s), JointVector::ZERO);
            // A pure position (or pure velocity) offset always produces torque.
            if dq.iter().any(|x| x != 0.0) {
                let moved = ArmState::new(q + dq, v);
                prop_assert_ne!(follower_torque(&g, &moved, &s), JointVector::ZERO);
                let moved = ArmState::new(q, v + dq);
                prop_assert_ne!(follower_torque(&g, &moved, &s), JointVector::ZERO);
            }
        }

        #[test]
        fn damped_energy_never_grows(v in small_vec(), d in 0.01f64..5.0) {
            let m = ArmModel::new(JointVector::splat(1.0).unwrap(), JointVector::splat(d).unwrap()).unwrap();
            let s = ArmState::new(JointVector::ZERO, v);
            let next = step_arm(&m, &s, &JointVector::ZERO, 1000).unwrap();
            prop_assert!(m.kinetic_energy(&next) <= m.kinetic_energy(&s));
        }
    }
}
