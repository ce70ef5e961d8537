//! Online estimator driven one measurement at a time: the hypothesis bank plus the
//! fused attitude and the weighted-mean misalignment.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::attitude::Quaternion;
use crate::dynamics::{InertiaMatrix, TorqueProfile};
use crate::error::{Error, Result};
use crate::fusion::markley_mean;
use crate::mekf::{ErrorCovariance, ErrorDynamics, Mekf, MekfState, NoiseConfig, Vector9};
use crate::mmae::{HypothesisBank, RefinementStrategy, StepContext, StepReport};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorMode {
    /// Full hypothesis lattice with refinement.
    #[default]
    Bank,
    /// One MEKF assuming the lattice center as the misalignment.
    Single,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub inertia: InertiaMatrix,
    pub torque: TorqueProfile,
    pub noise: NoiseConfig,
    pub dynamics: ErrorDynamics,
    /// Initial error-covariance diagonal.
    pub p0: Vector9,
    pub strategy: RefinementStrategy,
    pub n_axis: usize,
    pub half_width: f64,
    pub center: Vector3<f64>,
    /// Pruning threshold as a fraction of the uniform lattice weight.
    pub prune_fraction: f64,
    pub mode: EstimatorMode,
    pub dt: f64,
}

impl EstimatorConfig {
    /// Absolute pruning threshold `prune_fraction / N_axis³`.
    pub fn w_prune(&self) -> f64 {
        self.prune_fraction / (self.n_axis.pow(3) as f64)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.prune_fraction) {
            return Err(Error::Config("prune_fraction must lie in [0, 1)".into()));
        }
        if !(self.half_width > 0.0) {
            return Err(Error::Config("grid half_width must be positive".into()));
        }
        if self.p0.iter().any(|&p| !(p > 0.0)) {
            return Err(Error::Config("initial covariance must be positive".into()));
        }
        if self.noise.r.iter().any(|&r| !(r > 0.0)) || self.noise.q.iter().any(|&q| !(q >= 0.0)) {
            return Err(Error::Config(
                "noise variances must be non-negative (R positive)".into(),
            ));
        }
        self.strategy.validate()
    }
}

#[derive(Clone, Debug)]
pub struct MmaeEstimator {
    config: EstimatorConfig,
    bank: HypothesisBank,
    fused: Quaternion,
    t0: f64,
    steps: u64,
    degenerate_fusions: usize,
}

impl MmaeEstimator {
    /// Cold start at time `t0` from an attitude fix `q0` and rate `omega0`; bias starts at zero.
    pub fn new(
        config: EstimatorConfig,
        q0: Quaternion,
        omega0: Vector3<f64>,
        t0: f64,
    ) -> Result<Self> {
        config.validate()?;
        let filter = Mekf::new(
            MekfState {
                q: q0.normalize(),
                omega: omega0,
                bias: Vector3::zeros(),
            },
            ErrorCovariance::from_diagonal(&config.p0),
        );
        let bank = match config.mode {
            EstimatorMode::Bank => {
                HypothesisBank::new(&config.center, config.half_width, config.n_axis, filter)?
            }
            EstimatorMode::Single => HypothesisBank::single(config.center, filter),
        };
        Ok(MmaeEstimator {
            fused: q0.normalize(),
            config,
            bank,
            t0,
            steps: 0,
            degenerate_fusions: 0,
        })
    }

    /// Advances by one `dt` and processes the measurement taken at the new time.
    pub fn step(&mut self, q_meas: &Quaternion, omega_meas: &Vector3<f64>) -> Result<StepReport> {
        let strategy = match self.config.mode {
            EstimatorMode::Bank => self.config.strategy,
            EstimatorMode::Single => RefinementStrategy {
                max_refinements: 0,
                ..self.config.strategy
            },
        };
        let ctx = StepContext {
            inertia: &self.config.inertia,
            torque: &self.config.torque,
            noise: &self.config.noise,
            dynamics: self.config.dynamics,
            t: self.time(),
            dt: self.config.dt,
        };
        let report = self
            .bank
            .step(&ctx, q_meas, omega_meas, &strategy, self.config.w_prune())?;
        self.steps += 1;
        self.fuse();
        Ok(report)
    }

    fn fuse(&mut self) {
        if self.bank.len() == 1 {
            self.fused = self.bank.hypotheses[0].filter.state.q;
            return;
        }
        let quats: Vec<Quaternion> = self
            .bank
            .hypotheses
            .iter()
            .map(|h| h.filter.state.q)
            .collect();
        let weights = self.bank.weights();
        self.fused = match markley_mean(&quats, &weights, &self.fused) {
            Ok(q) => q,
            Err(Error::DegenerateSpectrum { fallback }) => {
                self.degenerate_fusions += 1;
                fallback
            }
            Err(_) => unreachable!("fusion only reports degenerate spectra"),
        };
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn bank(&self) -> &HypothesisBank {
        &self.bank
    }

    /// Time of the latest processed measurement.
    pub fn time(&self) -> f64 {
        self.t0 + self.steps as f64 * self.config.dt
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Fused attitude estimate.
    pub fn attitude(&self) -> Quaternion {
        self.fused
    }

    /// Weighted-mean misalignment estimate, rad.
    pub fn misalignment(&self) -> Vector3<f64> {
        self.bank.weighted_mean_misalignment()
    }

    /// Weighted-mean angular velocity estimate, rad/s.
    pub fn rate(&self) -> Vector3<f64> {
        self.bank
            .hypotheses
            .iter()
            .fold(Vector3::zeros(), |acc, h| {
                acc + h.weight * h.filter.state.omega
            })
    }

    /// Weighted-mean gyro bias estimate, rad/s.
    pub fn bias(&self) -> Vector3<f64> {
        self.bank
            .hypotheses
            .iter()
            .fold(Vector3::zeros(), |acc, h| {
                acc + h.weight * h.filter.state.bias
            })
    }

    pub fn map_filter(&self) -> &Mekf {
        &self.bank.map().filter
    }

    pub fn psi(&self) -> f64 {
        self.bank.psi()
    }

    /// Number of fusion steps that hit a tied spectrum and used the fallback.
    pub fn degenerate_fusions(&self) -> usize {
        self.degenerate_fusions
    }
}
