//! Experiment spec files.
//!
//! A spec is TOML: an `[experiment]` table, a `[base]` scenario shared by
//! every condition, and one `[[condition]]` table per transport condition.
//! See `specs/replica.spec` for a complete example.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use teleop_core::dynamics::{ArmModel, ArmState, ContactScript, ContactWindow, ControlGains, OperatorTrajectory, Waypoint};
use teleop_core::model::{derive_seed, streams};
use teleop_core::sim::{repetition_seed, ScenarioConfig, TransportOverrides, TransportSetup};
use teleop_core::transport::TransportKind;
use teleop_core::{JointVector, RngStream};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub base: BaseSection,
    #[serde(rename = "condition")]
    pub conditions: Vec<ConditionSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub master_seed: u64,
    pub repetitions: u32,
    /// Synthetic operators; each one gets its own trajectory.
    #[serde(default = "one")]
    pub experts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn one() -> u32 {
    1
}

/// A scalar applied to every joint, or one value per joint.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerJoint {
    Scalar(f64),
    Joints(JointVector),
}

impl PerJoint {
    pub fn to_vector(self) -> Result<JointVector, CliError> {
        match self {
            PerJoint::Scalar(v) => JointVector::splat(v).map_err(|e| CliError::Config(e.to_string())),
            PerJoint::Joints(v) => Ok(v),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSpec {
    pub p: Option<PerJoint>,
    pub d: Option<PerJoint>,
    pub k: Option<f64>,
}

impl GainsSpec {
    fn apply(&self, mut gains: ControlGains) -> Result<ControlGains, CliError> {
        if let Some(p) = self.p {
            gains.p = p.to_vector()?;
        }
        if let Some(d) = self.d {
            gains.d = d.to_vector()?;
        }
        if let Some(k) = self.k {
            gains.k = k;
        }
        Ok(gains)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub inertia: Option<PerJoint>,
    pub damping: Option<PerJoint>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TrajectorySpec {
    /// Randomised sinusoid drawn per expert from the master seed.
    #[default]
    PseudoExpert,
    Sinusoidal {
        amplitude: PerJoint,
        frequency_hz: PerJoint,
        #[serde(default)]
        phase: Option<PerJoint>,
    },
    Waypoints {
        waypoints: Vec<Waypoint>,
    },
    Still,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSpec {
    pub start_ms: u64,
    pub end_ms: u64,
    pub torque: PerJoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSection {
    #[serde(default = "default_duration")]
    pub duration_ms: u64,
    #[serde(default = "default_control_period")]
    pub control_period_us: u64,
    #[serde(default = "default_comm_period")]
    pub comm_period_us: u64,
    #[serde(default)]
    pub leader_comm_offset_us: u64,
    #[serde(default)]
    pub follower_comm_offset_us: u64,
    #[serde(default)]
    pub gains: GainsSpec,
    #[serde(default)]
    pub arm: ArmSpec,
    #[serde(default)]
    pub trajectory: TrajectorySpec,
    #[serde(default)]
    pub contact: Vec<ContactSpec>,
}

fn default_duration() -> u64 {
    30_000
}
fn default_control_period() -> u64 {
    1_000
}
fn default_comm_period() -> u64 {
    50_000
}

impl Default for BaseSection {
    fn default() -> Self {
        BaseSection {
            duration_ms: default_duration(),
            control_period_us: default_control_period(),
            comm_period_us: default_comm_period(),
            leader_comm_offset_us: 0,
            follower_comm_offset_us: 0,
            gains: GainsSpec::default(),
            arm: ArmSpec::default(),
            trajectory: TrajectorySpec::default(),
            contact: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub name: String,
    pub transport: TransportKind,
    #[serde(default)]
    pub l2f: TransportOverrides,
    #[serde(default)]
    pub f2l: TransportOverrides,
    #[serde(default)]
    pub gains: GainsSpec,
}

/// One simulation to execute.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedRun {
    pub run_id: String,
    pub condition: String,
    pub transport: TransportKind,
    pub expert: u32,
    pub repetition: u32,
    /// Pairing index shared by the same (expert, repetition) across conditions.
    pub block: u32,
    pub seed: u64,
    pub config: ScenarioConfig,
}

impl ExperimentSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read spec {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let e = &self.experiment;
        if e.repetitions < 1 {
            return Err(CliError::Config("experiment.repetitions must be at least 1".into()));
        }
        if e.experts < 1 {
            return Err(CliError::Config("experiment.experts must be at least 1".into()));
        }
        if self.conditions.is_empty() {
            return Err(CliError::Config("spec defines no [[condition]]".into()));
        }
        let mut names = BTreeSet::new();
        for c in &self.conditions {
            let valid = !c.name.is_empty()
                && c.name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-');
            if !valid {
                return Err(CliError::Config(format!(
                    "condition name {:?} must be nonempty ASCII letters, digits, '-' or '_'",
                    c.name
                )));
            }
            if !names.insert(c.name.as_str()) {
                return Err(CliError::Config(format!("duplicate condition name {:?}", c.name)));
            }
        }
        // Build one config per condition so field errors surface at load time.
        for c in &self.conditions {
            self.scenario(c, 0, 0)?
                .validate()
                .map_err(|err| CliError::Config(format!("condition {:?}: {err}", c.name)))?;
        }
        Ok(())
    }

    fn base_trajectory(&self, expert_seed: u64) -> Result<OperatorTrajectory, CliError> {
        Ok(match &self.base.trajectory {
            TrajectorySpec::PseudoExpert => {
                OperatorTrajectory::pseudo_expert(&mut RngStream::new(expert_seed, streams::TRAJECTORY))
            }
            TrajectorySpec::Sinusoidal {
                amplitude,
                frequency_hz,
                phase,
            } => OperatorTrajectory::Sinusoidal {
                amplitude: amplitude.to_vector()?,
                frequency_hz: frequency_hz.to_vector()?,
                phase: phase.map(PerJoint::to_vector).transpose()?.unwrap_or(JointVector::ZERO),
            },
            TrajectorySpec::Waypoints { waypoints } => OperatorTrajectory::Waypoints {
                waypoints: waypoints.clone(),
            },
            TrajectorySpec::Still => OperatorTrajectory::still(),
        })
    }

    fn scenario(&self, c: &ConditionSpec, seed: u64, expert_seed: u64) -> Result<ScenarioConfig, CliError> {
        let b = &self.base;
        let mut cfg = ScenarioConfig::new(c.transport, b.duration_ms * 1000, seed);
        cfg.transport = TransportSetup {
            kind: c.transport,
            l2f: c.l2f.clone(),
            f2l: c.f2l.clone(),
        };
        cfg.control_period_us = b.control_period_us;
        cfg.comm_period_us = b.comm_period_us;
        cfg.leader_comm_offset_us = b.leader_comm_offset_us;
        cfg.follower_comm_offset_us = b.follower_comm_offset_us;
        cfg.gains = c.gains.apply(b.gains.apply(ControlGains::default())?)?;
        let mut arm = ArmModel::default();
        if let Some(i) = b.arm.inertia {
            arm.inertia = i.to_vector()?;
        }
        if let Some(d) = b.arm.damping {
            arm.damping = d.to_vector()?;
        }
        cfg.leader_model = arm;
        cfg.follower_model = arm;
        cfg.follower_initial = ArmState::REST;
        cfg.contact = ContactScript {
            windows: b
                .contact
                .iter()
                .map(|w| {
                    Ok(ContactWindow {
                        start_us: w.start_ms * 1000,
                        end_us: w.end_ms * 1000,
                        torque: w.torque.to_vector()?,
                    })
                })
                .collect::<Result<_, CliError>>()?,
        };
        cfg.trajectory = self.base_trajectory(expert_seed)?;
        Ok(cfg)
    }

    /// Every run of the experiment, condition-major, then expert, then
    /// repetition. `master_seed` overrides the spec's seed when given.
    pub fn plan(&self, master_seed: Option<u64>) -> Result<Vec<PlannedRun>, CliError> {
        let master = master_seed.unwrap_or(self.experiment.master_seed);
        let reps = self.experiment.repetitions;
        let mut runs = Vec::new();
        for c in &self.conditions {
            for expert in 0..self.experiment.experts {
                let expert_seed = derive_seed(master, expert as u64);
                for repetition in 0..reps {
                    let seed = repetition_seed(expert_seed, repetition);
                    let config = self.scenario(c, seed, expert_seed)?;
                    runs.push(PlannedRun {
                        run_id: format!("{}-e{expert}-r{repetition}", c.name),
                        condition: c.name.clone(),
                        transport: c.transport,
                        expert,
                        repetition,
                        block: expert * reps + repetition,
                        seed,
                        config,
                    });
                }
            }
        }
        Ok(runs)
    }
}
