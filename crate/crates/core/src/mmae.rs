//! Multiple-model adaptive estimation over a lattice of star-tracker misalignment
//! hypotheses, with Bayesian weight updates, pruning, the hypothesis-diversity
//! metric Ψ and adaptive lattice refinement.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::attitude::Quaternion;
use crate::dynamics::{InertiaMatrix, TorqueProfile};
use crate::error::{Error, Result};
use crate::mekf::{
    predict_covariance, predict_nominal, residual_with_offset, ErrorDynamics, Gain, Mekf,
    NoiseConfig, Vector6,
};
use crate::sensors::sensor_offset;

/// How and where the hypothesis lattice is refined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    /// Refine when one weight exceeds `w_branch`; center on the MAP hypothesis.
    #[value(name = "classical-map")]
    #[serde(rename = "classical-map")]
    ClassicalMapCenter,
    /// Refine when Ψ drops below its threshold; center on the MAP hypothesis.
    #[value(name = "psi-map")]
    #[serde(rename = "psi-map")]
    PsiMapCenter,
    /// Refine when Ψ drops below its threshold; center on the weighted mean.
    #[value(name = "psi-mean")]
    #[serde(rename = "psi-mean")]
    PsiMeanCenter,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [
        StrategyKind::ClassicalMapCenter,
        StrategyKind::PsiMapCenter,
        StrategyKind::PsiMeanCenter,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            StrategyKind::ClassicalMapCenter => "Classical trigger (MAP center)",
            StrategyKind::PsiMapCenter => "Psi trigger (MAP center)",
            StrategyKind::PsiMeanCenter => "Psi trigger (weighted-mean center)",
        }
    }

    pub fn slug(&self) -> &'static str {
        match self {
            StrategyKind::ClassicalMapCenter => "classical-map",
            StrategyKind::PsiMapCenter => "psi-map",
            StrategyKind::PsiMeanCenter => "psi-mean",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefinementStrategy {
    pub kind: StrategyKind,
    /// Classical trigger threshold on the largest weight.
    pub w_branch: f64,
    /// Ψ trigger threshold, percent.
    pub psi_threshold: f64,
    /// Lattice half-width multiplier applied at each refinement.
    pub shrink: f64,
    pub max_refinements: usize,
}

impl Default for RefinementStrategy {
    fn default() -> Self {
        RefinementStrategy {
            kind: StrategyKind::PsiMeanCenter,
            w_branch: 0.5,
            psi_threshold: 10.0,
            shrink: 0.5,
            max_refinements: 8,
        }
    }
}

impl RefinementStrategy {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_branch > 0.0 && self.w_branch < 1.0) {
            return Err(Error::Config("w_branch must lie in (0, 1)".into()));
        }
        if !(self.psi_threshold > 0.0 && self.psi_threshold <= 100.0) {
            return Err(Error::Config("psi_threshold must lie in (0, 100]".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::Config("shrink must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// One misalignment candidate with its weight and dedicated filter.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub misalignment: Vector3<f64>,
    /// Cached `sensor_offset(misalignment)`.
    pub offset: Quaternion,
    pub weight: f64,
    pub filter: Mekf,
}

impl Hypothesis {
    pub fn new(misalignment: Vector3<f64>, weight: f64, filter: Mekf) -> Self {
        Hypothesis {
            misalignment,
            offset: sensor_offset(&misalignment),
            weight,
            filter,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TriggerDecision {
    None,
    Refine { center: Vector3<f64> },
}

/// Uniform `n_axis³` lattice `center ± linspace(-half_width, half_width)` per axis.
pub fn generate_grid(
    center: &Vector3<f64>,
    half_width: f64,
    n_axis: usize,
) -> Result<Vec<Vector3<f64>>> {
    if n_axis < 3 || n_axis.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "grid points per axis must be odd and >= 3, got {n_axis}"
        )));
    }
    let mid = ((n_axis - 1) / 2) as f64;
    let offsets: Vec<f64> = (0..n_axis)
        .map(|i| half_width * ((i as f64 - mid) / mid))
        .collect();
    let mut points = Vec::with_capacity(n_axis.pow(3));
    for &dx in &offsets {
        for &dy in &offsets {
            for &dz in &offsets {
                points.push(center + Vector3::new(dx, dy, dz));
            }
        }
    }
    Ok(points)
}

/// Shared inputs for one bank step.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    pub inertia: &'a InertiaMatrix,
    pub torque: &'a TorqueProfile,
    pub noise: &'a NoiseConfig,
    pub dynamics: ErrorDynamics,
    pub t: f64,
    pub dt: f64,
}

/// What happened during one bank step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepReport {
    /// Ψ after the weight update, before refinement or pruning.
    pub psi: f64,
    pub refined: bool,
    pub pruned: usize,
    /// False when the innovation covariance was refused and filters only propagated.
    pub updated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisBank {
    pub hypotheses: Vec<Hypothesis>,
    pub refinements_done: usize,
    pub half_width: f64,
    pub n_axis: usize,
}

impl HypothesisBank {
    /// Lattice bank with every filter initialised to `filter` and uniform weights.
    pub fn new(
        center: &Vector3<f64>,
        half_width: f64,
        n_axis: usize,
        filter: Mekf,
    ) -> Result<Self> {
        let grid = generate_grid(center, half_width, n_axis)?;
        let w = 1.0 / grid.len() as f64;
        Ok(HypothesisBank {
            hypotheses: grid
                .into_iter()
                .map(|mu| Hypothesis::new(mu, w, filter))
                .collect(),
            refinements_done: 0,
            half_width,
            n_axis,
        })
    }

    /// A bank holding one hypothesis, i.e. a plain MEKF with a fixed sensor offset.
    pub fn single(misalignment: Vector3<f64>, filter: Mekf) -> Self {
        HypothesisBank {
            hypotheses: vec![Hypothesis::new(misalignment, 1.0, filter)],
            refinements_done: 0,
            half_width: 0.0,
            n_axis: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.hypotheses.iter().map(|h| h.weight).collect()
    }

    /// Index of the largest weight (first one on ties).
    pub fn map_index(&self) -> usize {
        self.hypotheses
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, h)| {
                if h.weight > best.1 {
                    (i, h.weight)
                } else {
                    best
                }
            })
            .0
    }

    pub fn map(&self) -> &Hypothesis {
        &self.hypotheses[self.map_index()]
    }

    pub fn max_weight(&self) -> f64 {
        self.map().weight
    }

    /// True when every filter carries the same rate/bias estimate and covariance, so
    /// the covariance prediction and gain can be computed once for the whole bank.
    fn shares_covariance(&self) -> bool {
        let first = &self.hypotheses[0].filter;
        self.hypotheses[1..].iter().all(|h| {
            h.filter.state.omega == first.state.omega
                && h.filter.state.bias == first.state.bias
                && h.filter.covariance == first.covariance
        })
    }

    /// Predicts and updates every filter with the shared measurement; returns the
    /// pre-update residual of each hypothesis.
    pub fn filter_step(
        &mut self,
        ctx: &StepContext<'_>,
        q_meas: &Quaternion,
        omega_meas: &Vector3<f64>,
    ) -> Result<(Vec<Vector6>, bool)> {
        let damping = ctx.torque.damping_at(ctx.t);
        let shared = if self.shares_covariance() {
            let f = &self.hypotheses[0].filter;
            let prior = predict_covariance(
                &f.covariance,
                &f.state.omega,
                ctx.inertia,
                damping,
                ctx.dynamics,
                ctx.noise,
                ctx.dt,
            );
            Some((prior, Gain::compute(&prior, ctx.noise).ok()))
        } else {
            None
        };

        let mut residuals = Vec::with_capacity(self.hypotheses.len());
        let mut all_updated = true;
        for h in &mut self.hypotheses {
            let (prior, gain) = match shared {
                Some(s) => s,
                None => {
                    let f = &h.filter;
                    let prior = predict_covariance(
                        &f.covariance,
                        &f.state.omega,
                        ctx.inertia,
                        damping,
                        ctx.dynamics,
                        ctx.noise,
                        ctx.dt,
                    );
                    (prior, Gain::compute(&prior, ctx.noise).ok())
                }
            };
            h.filter.state =
                predict_nominal(&h.filter.state, ctx.inertia, ctx.torque, ctx.t, ctx.dt);
            h.filter.covariance = prior;
            let y = residual_with_offset(&h.filter.state, q_meas, omega_meas, &h.offset)?;
            match gain {
                Some(g) => {
                    h.filter.apply(&g, &y);
                    h.filter.reset();
                }
                None => all_updated = false,
            }
            residuals.push(y);
        }
        Ok((residuals, all_updated))
    }

    /// Bayesian weight update `w̃ⱼ = wⱼ exp(-½ rⱼᵀ R⁻¹ rⱼ)` in the log domain, then normalized.
    pub fn update_weights(&mut self, residuals: &[Vector6], noise: &NoiseConfig) -> Result<()> {
        assert_eq!(
            residuals.len(),
            self.hypotheses.len(),
            "one residual per hypothesis"
        );
        let r_inv = noise.r.map(|r| 1.0 / r);
        let log_w: Vec<f64> = self
            .hypotheses
            .iter()
            .zip(residuals)
            .map(|(h, r)| h.weight.ln() - 0.5 * r.component_mul(r).dot(&r_inv))
            .collect();
        let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() || log_w.iter().any(|l| l.is_nan()) {
            return Err(Error::DegenerateWeights);
        }
        let unnormalized: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = unnormalized.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateWeights);
        }
        for (h, w) in self.hypotheses.iter_mut().zip(unnormalized) {
            h.weight = w / total;
        }
        Ok(())
    }

    /// Drops hypotheses with `w ≤ w_prune` (never the last one) and renormalizes.
    /// Returns how many were removed.
    pub fn prune(&mut self, w_prune: f64) -> usize {
        let before = self.hypotheses.len();
        if self.hypotheses.iter().all(|h| h.weight <= w_prune) {
            let keep = self.map_index();
            let survivor = self.hypotheses.swap_remove(keep);
            self.hypotheses = vec![survivor];
        } else {
            self.hypotheses.retain(|h| h.weight > w_prune);
        }
        self.normalize();
        before - self.hypotheses.len()
    }

    fn normalize(&mut self) {
        let total: f64 = self.hypotheses.iter().map(|h| h.weight).sum();
        for h in &mut self.hypotheses {
            h.weight /= total;
        }
    }

    /// Hypothesis diversity `Ψ = 100 / (N Σ wⱼ²)` in percent.
    pub fn psi(&self) -> f64 {
        let sum_sq: f64 = self.hypotheses.iter().map(|h| h.weight * h.weight).sum();
        100.0 / (self.hypotheses.len() as f64 * sum_sq)
    }

    /// `Σ wⱼ μⱼ`.
    pub fn weighted_mean_misalignment(&self) -> Vector3<f64> {
        self.hypotheses
            .iter()
            .fold(Vector3::zeros(), |acc, h| acc + h.weight * h.misalignment)
    }

    /// Per-axis weighted spread of the hypotheses about their mean.
    pub fn misalignment_spread(&self) -> Vector3<f64> {
        let mean = self.weighted_mean_misalignment();
        self.hypotheses
            .iter()
            .fold(Vector3::zeros(), |acc, h| {
                let d = h.misalignment - mean;
                acc + h.weight * d.component_mul(&d)
            })
            .map(f64::sqrt)
    }

    pub fn check_trigger(&self, strategy: &RefinementStrategy) -> TriggerDecision {
        if self.refinements_done >= strategy.max_refinements {
            return TriggerDecision::None;
        }
        match strategy.kind {
            StrategyKind::ClassicalMapCenter if self.max_weight() > strategy.w_branch => {
                TriggerDecision::Refine {
                    center: self.map().misalignment,
                }
            }
            StrategyKind::PsiMapCenter if self.psi() < strategy.psi_threshold => {
                TriggerDecision::Refine {
                    center: self.map().misalignment,
                }
            }
            StrategyKind::PsiMeanCenter if self.psi() < strategy.psi_threshold => {
                TriggerDecision::Refine {
                    center: self.weighted_mean_misalignment(),
                }
            }
            _ => TriggerDecision::None,
        }
    }

    /// Replaces the lattice with a shrunken one around `center`; every new filter
    /// starts from the current MAP filter and weights are reset to uniform.
    pub fn refine(&mut self, center: &Vector3<f64>, strategy: &RefinementStrategy) -> Result<()> {
        let seed = self.map().filter;
        let half_width = self.half_width * strategy.shrink;
        let grid = generate_grid(center, half_width, self.n_axis)?;
        let w = 1.0 / grid.len() as f64;
        self.hypotheses = grid
            .into_iter()
            .map(|mu| Hypothesis::new(mu, w, seed))
            .collect();
        self.half_width = half_width;
        self.refinements_done += 1;
        Ok(())
    }

    /// One full cycle: filter predict/update, weight update, Ψ, then refine if the
    /// strategy fires, otherwise prune.
    pub fn step(
        &mut self,
        ctx: &StepContext<'_>,
        q_meas: &Quaternion,
        omega_meas: &Vector3<f64>,
        strategy: &RefinementStrategy,
        w_prune: f64,
    ) -> Result<StepReport> {
        let (residuals, updated) = self.filter_step(ctx, q_meas, omega_meas)?;
        self.update_weights(&residuals, ctx.noise)?;
        let psi = self.psi();
        let (refined, pruned) = match self.check_trigger(strategy) {
            TriggerDecision::Refine { center } => {
                self.refine(&center, strategy)?;
                (true, 0)
            }
            TriggerDecision::None => (false, self.prune(w_prune)),
        };
        Ok(StepReport {
            psi,
            refined,
            pruned,
            updated,
        })
    }
}
