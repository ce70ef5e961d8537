//! Monte Carlo campaigns and their cross-run statistics.

use nalgebra::Vector3;
use rayon::prelude::*;

use super::config::SimConfig;
use super::trial::{run_trial, RunResult};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Campaign {
    pub config: SimConfig,
    pub results: Vec<RunResult>,
    pub rmse: RmseSeries,
}

impl Campaign {
    pub fn successful(&self) -> impl Iterator<Item = &RunResult> {
        self.results.iter().filter(|r| r.succeeded())
    }

    pub fn failures(&self) -> usize {
        self.results.iter().filter(|r| !r.succeeded()).count()
    }

    pub fn final_attitude_error_deg(&self) -> Stats {
        Stats::of(self.successful().map(RunResult::final_attitude_error_deg))
    }

    pub fn final_rate_error(&self) -> Stats {
        Stats::of(self.successful().map(RunResult::final_rate_error))
    }

    pub fn final_bias_error(&self) -> Stats {
        Stats::of(self.successful().map(RunResult::final_bias_error))
    }

    pub fn refinements(&self) -> Stats {
        Stats::of(self.successful().map(|r| r.refinements() as f64))
    }

    /// Final Ξ_μ, rad.
    pub fn final_mu_rmse(&self) -> f64 {
        self.rmse.mu.last().copied().unwrap_or(f64::NAN)
    }

    pub fn consistency(&self) -> ConsistencyReport {
        consistency_report(&self.results)
    }
}

/// Runs `cfg.n_runs` independent trials on a pool of `threads` workers (all cores
/// when `None`). Results are ordered by trial index whatever the pool size.
pub fn run_monte_carlo(cfg: &SimConfig, threads: Option<usize>) -> Result<Campaign> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results = pool.install(|| {
        (0..cfg.n_runs)
            .into_par_iter()
            .map(|trial| run_trial(cfg, trial))
            .collect::<Result<Vec<_>>>()
    })?;
    let rmse = RmseSeries::from_results(&results);
    Ok(Campaign {
        config: cfg.clone(),
        results,
        rmse,
    })
}

/// Cross-run root-mean-square errors at every logged step, over successful runs.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RmseSeries {
    pub t: Vec<f64>,
    /// Sign-aligned quaternion component difference.
    pub q: Vec<f64>,
    pub omega: Vec<f64>,
    pub bias: Vec<f64>,
    pub mu: Vec<f64>,
}

impl RmseSeries {
    pub fn from_results(results: &[RunResult]) -> Self {
        let ok: Vec<&RunResult> = results.iter().filter(|r| r.succeeded()).collect();
        let Some(len) = ok.iter().map(|r| r.records.len()).min() else {
            return RmseSeries::default();
        };
        let n = ok.len() as f64;
        let mut series = RmseSeries::default();
        for k in 0..len {
            let (mut q, mut w, mut b, mut mu) = (0.0, 0.0, 0.0, 0.0);
            for r in &ok {
                let rec = &r.records[k];
                q += rec.quaternion_difference().norm_squared();
                w += rec.omega_error().norm_squared();
                b += rec.bias_error(r).norm_squared();
                mu += rec.mu_error(r).norm_squared();
            }
            series.t.push(ok[0].records[k].t);
            series.q.push((q / n).sqrt());
            series.omega.push((w / n).sqrt());
            series.bias.push((b / n).sqrt());
            series.mu.push((mu / n).sqrt());
        }
        series
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub count: usize,
}

impl Stats {
    /// Mean, sample standard deviation and maximum.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Stats {
        let v: Vec<f64> = values.into_iter().collect();
        let count = v.len();
        if count == 0 {
            return Stats {
                mean: f64::NAN,
                std: f64::NAN,
                max: f64::NAN,
                count,
            };
        }
        let mean = v.iter().sum::<f64>() / count as f64;
        let var = if count > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        Stats {
            mean,
            std: var.sqrt(),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count,
        }
    }
}

pub const AXIS_LABELS: [&str; 9] = [
    "attitude x",
    "attitude y",
    "attitude z",
    "rate x",
    "rate y",
    "rate z",
    "bias x",
    "bias y",
    "bias z",
];

/// Fraction of logged samples whose error lies inside the MAP filter's ±3σ envelope.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    /// Attitude, rate and bias axes in [`AXIS_LABELS`] order.
    pub containment: [f64; 9],
    /// Misalignment error against three times the hypothesis spread (informational).
    pub misalignment: [f64; 3],
    pub samples: usize,
}

impl ConsistencyReport {
    pub fn worst(&self) -> f64 {
        self.containment
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn passes(&self, threshold: f64) -> bool {
        self.worst() >= threshold
    }
}

pub fn consistency_report(results: &[RunResult]) -> ConsistencyReport {
    let mut inside = [0usize; 9];
    let mut mu_inside = [0usize; 3];
    let mut samples = 0usize;
    let within = |e: &Vector3<f64>, s: &Vector3<f64>, k: usize| e[k].abs() <= 3.0 * s[k];
    for r in results.iter().filter(|r| r.succeeded()) {
        for rec in &r.records {
            samples += 1;
            let groups = [
                (rec.attitude_error, rec.sigma_attitude),
                (rec.omega_error(), rec.sigma_omega),
                (rec.bias_error(r), rec.sigma_bias),
            ];
            for (g, (e, s)) in groups.iter().enumerate() {
                for k in 0..3 {
                    inside[3 * g + k] += within(e, s, k) as usize;
                }
            }
            let mu_err = rec.mu_error(r);
            for (k, count) in mu_inside.iter_mut().enumerate() {
                *count += within(&mu_err, &rec.mu_spread, k) as usize;
            }
        }
    }
    let frac = |c: usize| {
        if samples == 0 {
            f64::NAN
        } else {
            c as f64 / samples as f64
        }
    };
    ConsistencyReport {
        containment: inside.map(frac),
        misalignment: mu_inside.map(frac),
        samples,
    }
}
