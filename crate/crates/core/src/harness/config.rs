//! Campaign configuration. Every field has a default so a config file only needs
//! the values it changes.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{InertiaMatrix, TorqueProfile, TorquePulse};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorConfig, EstimatorMode};
use crate::mekf::{ErrorDynamics, NoiseConfig, Vector6, Vector9};
use crate::mmae::RefinementStrategy;
use crate::sensors::{GyroModel, NoiseModel, StarCatalog};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub n_runs: usize,
    pub dynamics: DynamicsConfig,
    pub maneuver: ManeuverConfig,
    pub sensors: SensorConfig,
    pub filter: FilterConfig,
    pub grid: GridConfig,
    pub strategy: RefinementStrategy,
    pub misalignment: MisalignmentSampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicsConfig {
    /// Inertia matrix rows, kg·m².
    pub inertia: [[f64; 3]; 3],
    /// Initial body rate, deg/s.
    pub omega0_deg: [f64; 3],
    pub t_end: f64,
    pub dt: f64,
    pub t_damp: f64,
    pub damping: f64,
}

/// Step changes of the true body rate, realised as one-step torque pulses that the
/// filter also knows about.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ManeuverConfig {
    pub enabled: bool,
    /// Step times, s.
    pub times: Vec<f64>,
    /// Per-axis rate change of the first step, deg/s; the sign flips at every step.
    pub step_deg: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorConfig {
    pub star1: [f64; 3],
    pub star2: [f64; 3],
    pub noise: NoiseModel,
    pub gyro: GyroModel,
}

/// Filter tuning as standard deviations; variances are their squares.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub mode: EstimatorMode,
    pub dynamics: ErrorDynamics,
    /// Initial sigma for (rate, bias, attitude).
    pub p0_sigma: [f64; 3],
    /// Process-noise sigma for (rate, bias, attitude).
    pub q_sigma: [f64; 3],
    /// Measurement-noise sigma for (attitude, rate).
    pub r_sigma: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_axis: usize,
    /// Initial per-axis half-span, rad.
    pub half_width: f64,
    pub center: [f64; 3],
    /// Pruning threshold as a fraction of the uniform weight `1/N_axis³`.
    pub prune_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MisalignmentSampling {
    Fixed { value: [f64; 3] },
    UniformBox { half_width: f64 },
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 1,
            n_runs: 20,
            dynamics: DynamicsConfig::default(),
            maneuver: ManeuverConfig::default(),
            sensors: SensorConfig::default(),
            filter: FilterConfig::default(),
            grid: GridConfig::default(),
            strategy: RefinementStrategy::default(),
            misalignment: MisalignmentSampling::default(),
        }
    }
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        DynamicsConfig {
            inertia: [[100.0, 0.0, 0.0], [0.0, 60.0, 0.0], [0.0, 0.0, 50.0]],
            omega0_deg: [3.0, 4.4, -5.0],
            t_end: 5000.0,
            dt: 0.5,
            t_damp: 4100.0,
            damping: 0.6,
        }
    }
}

impl Default for ManeuverConfig {
    fn default() -> Self {
        ManeuverConfig {
            enabled: false,
            times: vec![300.0, 600.0, 900.0, 1200.0],
            step_deg: [2.0, -2.0, 2.0],
        }
    }
}

impl Default for SensorConfig {
    fn default() -> Self {
        let catalog = StarCatalog::default();
        SensorConfig {
            star1: catalog.v1.into(),
            star2: catalog.v2.into(),
            noise: NoiseModel::default(),
            gyro: GyroModel::default(),
        }
    }
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            mode: EstimatorMode::Bank,
            dynamics: ErrorDynamics::Coupled,
            p0_sigma: [0.01, 0.001, 1.0],
            q_sigma: [1e-6, 5e-8, 5e-7],
            r_sigma: [8.73e-4, 5e-4],
        }
    }
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            n_axis: 7,
            half_width: 5e-3,
            center: [0.0; 3],
            prune_fraction: 1e-6,
        }
    }
}

impl Default for MisalignmentSampling {
    fn default() -> Self {
        MisalignmentSampling::UniformBox { half_width: 2.5e-3 }
    }
}

fn triple(v: [f64; 3]) -> Vector3<f64> {
    Vector3::from(v)
}

impl SimConfig {
    /// Short CI profile: 5 runs, 3³ lattice, 1000 s with the damping switch moved
    /// to the same fraction of the horizon.
    pub fn fast() -> Self {
        let mut cfg = SimConfig::default();
        cfg.apply_fast();
        cfg
    }

    pub fn apply_fast(&mut self) {
        let scale = 1000.0 / self.dynamics.t_end;
        self.n_runs = 5;
        self.grid.n_axis = 3;
        self.dynamics.t_damp *= scale;
        self.dynamics.t_end = 1000.0;
    }

    /// Stand-alone MEKF: one filter with the block-diagonal transition, no misalignment.
    pub fn single_filter() -> Self {
        let mut cfg = SimConfig::default();
        cfg.filter.mode = EstimatorMode::Single;
        cfg.filter.dynamics = ErrorDynamics::Decoupled;
        cfg.misalignment = MisalignmentSampling::Fixed { value: [0.0; 3] };
        cfg
    }

    /// Noise comparison scenario: the stand-alone MEKF with rate steps.
    pub fn maneuver_scenario() -> Self {
        let mut cfg = SimConfig::single_filter();
        cfg.maneuver.enabled = true;
        cfg
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SimConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn n_steps(&self) -> usize {
        (self.dynamics.t_end / self.dynamics.dt).ceil() as usize
    }

    pub fn inertia(&self) -> Result<InertiaMatrix> {
        let rows = self.dynamics.inertia;
        InertiaMatrix::new(Matrix3::from_fn(|r, c| rows[r][c]))
    }

    pub fn catalog(&self) -> Result<StarCatalog> {
        StarCatalog::new(triple(self.sensors.star1), triple(self.sensors.star2))
    }

    pub fn omega0(&self) -> Vector3<f64> {
        triple(self.dynamics.omega0_deg).map(f64::to_radians)
    }

    pub fn torque(&self) -> Result<TorqueProfile> {
        let inertia = self.inertia()?;
        let dt = self.dynamics.dt;
        let pulses = if self.maneuver.enabled {
            self.maneuver
                .times
                .iter()
                .enumerate()
                .map(|(i, &start)| {
                    let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
                    let dw = sign * triple(self.maneuver.step_deg).map(f64::to_radians);
                    let torque = inertia.matrix() * dw / dt;
                    TorquePulse {
                        start,
                        duration: dt,
                        torque: torque.into(),
                    }
                })
                .collect()
        } else {
            Vec::new()
        };
        Ok(TorqueProfile {
            control: Vector3::zeros(),
            pulses,
            damping: self.dynamics.damping,
            t_damp: self.dynamics.t_damp,
        })
    }

    pub fn noise_config(&self) -> NoiseConfig {
        let [qw, qb, qa] = self.filter.q_sigma;
        let [ra, rw] = self.filter.r_sigma;
        NoiseConfig {
            q: Vector9::from_iterator([qw, qw, qw, qb, qb, qb, qa, qa, qa].map(|s| s * s)),
            r: Vector6::from_iterator([ra, ra, ra, rw, rw, rw].map(|s| s * s)),
        }
    }

    pub fn p0(&self) -> Vector9 {
        let [pw, pb, pa] = self.filter.p0_sigma;
        Vector9::from_iterator([pw, pw, pw, pb, pb, pb, pa, pa, pa].map(|s| s * s))
    }

    pub fn estimator_config(&self) -> Result<EstimatorConfig> {
        Ok(EstimatorConfig {
            inertia: self.inertia()?,
            torque: self.torque()?,
            noise: self.noise_config(),
            dynamics: self.filter.dynamics,
            p0: self.p0(),
            strategy: self.strategy,
            n_axis: self.grid.n_axis,
            half_width: self.grid.half_width,
            center: triple(self.grid.center),
            prune_fraction: self.grid.prune_fraction,
            mode: self.filter.mode,
            dt: self.dynamics.dt,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dynamics;
        if !(d.dt > 0.0) || !d.dt.is_finite() {
            return Err(Error::Config("dynamics.dt must be positive".into()));
        }
        if !(d.t_end >= d.t_damp) {
            return Err(Error::Config(
                "dynamics.t_end must not precede dynamics.t_damp".into(),
            ));
        }
        if !(d.damping >= 0.0) {
            return Err(Error::Config(
                "dynamics.damping must be non-negative".into(),
            ));
        }
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be at least 1".into()));
        }
        let n = &self.sensors.noise;
        if !(n.sigma_v >= 0.0 && n.sigma_theta >= 0.0 && self.sensors.gyro.sigma >= 0.0) {
            return Err(Error::Config(
                "sensor noise levels must be non-negative".into(),
            ));
        }
        if let MisalignmentSampling::UniformBox { half_width } = self.misalignment {
            if !(half_width >= 0.0) {
                return Err(Error::Config(
                    "misalignment.half_width must be non-negative".into(),
                ));
            }
        }
        self.catalog()?;
        crate::mmae::generate_grid(&Vector3::zeros(), self.grid.half_width, self.grid.n_axis)?;
        self.estimator_config()?.validate()
    }
}
