//! TOML run configuration. Every field has the bench-rig default, so an
//! empty file (or no file) reproduces the standard setup; unknown keys
//! are rejected so typos fail loudly. Angles are written in degrees at
//! this boundary and converted on the way in.

use std::path::Path;

use nalgebra::SVector;
use serde::Deserialize;
use thiserror::Error;

use crate::dynamics::{ModelError, PhysicalParams};
use crate::monte_carlo::{CampaignArms, McConfig};
use crate::ocp::{ControllerMode, OcpConfig, Weights};
use crate::qp::QpSettings;
use crate::reference::EllipseSpec;
use crate::sim::SimConfig;
use crate::uncertainty::{UncertaintyError, UncertaintySet};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error("invalid value: {0}")]
    Invalid(&'static str),
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Vehicle masses [kg].
    pub mass: [f64; 2],
    /// Rod lengths [m].
    pub rod_length: [f64; 2],
    /// Vehicle yaw inertias [kg m^2].
    pub inertia: [f64; 2],
    /// Gravity [m/s^2].
    pub gravity: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            mass: [0.457, 0.457],
            rod_length: [0.942, 0.942],
            inertia: [0.123, 0.123],
            gravity: 9.81,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct LimitsSection {
    /// Thrust bounds [N].
    pub f_r: [f64; 2],
    /// Torque bounds [N m].
    pub tau: [f64; 2],
    /// Thrust rate bounds [N/s].
    pub df_r: [f64; 2],
    /// Torque rate bounds [N m/s].
    pub dtau: [f64; 2],
    /// Minimum rod opening angle [deg].
    pub min_separation_deg: f64,
}

impl Default for LimitsSection {
    fn default() -> Self {
        LimitsSection {
            f_r: [3.0, 20.0],
            tau: [-5.0, 5.0],
            df_r: [-200.0, 200.0],
            dtau: [-100.0, 100.0],
            min_separation_deg: 30.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct UncertaintySection {
    /// Relative deviation bounds for [m1, m2, l1, l2, J1, J2].
    pub bounds: [f64; 6],
    /// Smoothing floor inside the margin square root.
    pub smoothing: f64,
}

impl Default for UncertaintySection {
    fn default() -> Self {
        UncertaintySection {
            bounds: [0.25, 0.25, 0.24, 0.24, 0.25, 0.25],
            smoothing: 1e-12,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceSection {
    /// Ellipse center [m].
    pub center: [f64; 2],
    /// Ellipse semi-axes [m].
    pub semi_axes: [f64; 2],
    /// Traversal duration [s].
    pub duration: f64,
    /// Margin to the workspace boundary [m].
    pub margin: f64,
    /// Rod stress reference [N].
    pub stress: f64,
}

impl Default for ReferenceSection {
    fn default() -> Self {
        ReferenceSection {
            center: [0.0, 1.05],
            semi_axes: [0.55, 0.35],
            duration: 12.0,
            margin: 0.02,
            stress: 10.0,
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerSection {
    /// Horizon length [stages].
    pub horizon: usize,
    /// Sampling period [s].
    pub period: f64,
    /// Stage weights [phi, f_L, dphi, ddphi], applied to both rods.
    pub stage_weights: [f64; 4],
    /// Terminal weights [phi, f_L].
    pub terminal_weights: [f64; 2],
}

impl Default for ControllerSection {
    fn default() -> Self {
        ControllerSection {
            horizon: 30,
            period: 0.01,
            stage_weights: [5.0, 1.0, 0.1, 0.1],
            terminal_weights: [50.0, 10.0],
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationSection {
    /// Plant integration step [s].
    pub plant_dt: f64,
    /// Trial duration [s].
    pub duration: f64,
    /// Initial rod-angle offsets [deg].
    pub initial_offset_deg: [f64; 2],
}

impl Default for SimulationSection {
    fn default() -> Self {
        SimulationSection {
            plant_dt: 0.005,
            duration: 12.0,
            initial_offset_deg: [-8.0, 4.0],
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignSection {
    pub trials: usize,
    pub seed: u64,
    /// Classification slack on the signed residuals.
    pub tolerance: f64,
}

impl Default for CampaignSection {
    fn default() -> Self {
        CampaignSection {
            trials: 100,
            seed: 1,
            tolerance: 1e-3,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelSection,
    pub limits: LimitsSection,
    pub uncertainty: UncertaintySection,
    pub reference: ReferenceSection,
    pub controller: ControllerSection,
    pub simulation: SimulationSection,
    pub campaign: CampaignSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn params(&self) -> Result<PhysicalParams, ConfigError> {
        Ok(PhysicalParams::new(
            self.model.mass[0],
            self.model.mass[1],
            self.model.rod_length[0],
            self.model.rod_length[1],
            self.model.inertia[0],
            self.model.inertia[1],
            self.model.gravity,
        )?)
    }

    pub fn uncertainty_set(&self) -> Result<UncertaintySet, ConfigError> {
        Ok(UncertaintySet::new(SVector::from(self.uncertainty.bounds))?)
    }

    pub fn ellipse(&self) -> EllipseSpec {
        EllipseSpec {
            xc: self.reference.center[0],
            zc: self.reference.center[1],
            ax: self.reference.semi_axes[0],
            az: self.reference.semi_axes[1],
            t_final: self.reference.duration,
            eps_r: self.reference.margin,
        }
    }

    pub fn ocp_config(&self, mode: ControllerMode) -> Result<OcpConfig, ConfigError> {
        if self.controller.horizon == 0 {
            return Err(ConfigError::Invalid("controller.horizon must be positive"));
        }
        if !(self.controller.period > 0.0) {
            return Err(ConfigError::Invalid("controller.period must be positive"));
        }
        let boxes = crate::constraints::BoxSets {
            f_r_min: self.limits.f_r[0],
            f_r_max: self.limits.f_r[1],
            tau_min: self.limits.tau[0],
            tau_max: self.limits.tau[1],
            df_r_min: self.limits.df_r[0],
            df_r_max: self.limits.df_r[1],
            dtau_min: self.limits.dtau[0],
            dtau_max: self.limits.dtau[1],
        };
        Ok(OcpConfig {
            mode,
            n: self.controller.horizon,
            ts: self.controller.period,
            weights: Weights::from_pairs(
                self.controller.stage_weights,
                self.controller.terminal_weights,
            ),
            boxes,
            dphi_min: self.limits.min_separation_deg.to_radians(),
            w_p: self.uncertainty_set()?.weighting(),
            eps_s: self.uncertainty.smoothing,
            qp: QpSettings::default(),
        })
    }

    pub fn sim_config(&self, mode: ControllerMode) -> Result<SimConfig, ConfigError> {
        Ok(SimConfig {
            plant_dt: self.simulation.plant_dt,
            t_final: self.simulation.duration,
            e_phi0: [
                self.simulation.initial_offset_deg[0].to_radians(),
                self.simulation.initial_offset_deg[1].to_radians(),
            ],
            fl_ref: self.reference.stress,
            ellipse: self.ellipse(),
            ocp: self.ocp_config(mode)?,
        })
    }

    pub fn mc_config(&self, arms: CampaignArms) -> Result<McConfig, ConfigError> {
        Ok(McConfig {
            n_trials: self.campaign.trials,
            seed: self.campaign.seed,
            arms,
            sim: self.sim_config(ControllerMode::Tube)?,
            uncertainty: self.uncertainty_set()?,
            eps_tol: self.campaign.tolerance,
            workers: None,
        })
    }
}
