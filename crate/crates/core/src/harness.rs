//! Experiment runners behind the command-line tool.
//!
//! Every runner is deterministic: simulation trials draw their randomness
//! from [`trial_seed`], which depends only on the master seed and the
//! (epsilon, trial) indices, and results are aggregated in trial order no
//! matter how the work was scheduled.

use std::fmt::Write as _;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rayon::prelude::*;
use thiserror::Error;

use crate::degree_dist::{rsd_shape, DegreeDistribution, DistError, DistSpec};
use crate::failure_bound::{pf_lower_bound, BoundError, BoundResult};
use crate::lt_codec::{decode_structure, encode_with, received_symbols, CodecRng, DecodeError, DecoderState, InactivationStrategy};
use crate::ripple_model::{predict_inactivations, Prediction};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("bound at epsilon = {epsilon}: {source}")]
    Bound { epsilon: f64, source: BoundError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Predict,
    Simulate,
    Bound,
    Optimize,
    Dist,
}

/// What to run and on which code.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub dist: DistSpec,
    pub k: usize,
    pub epsilons: Vec<f64>,
    pub trials: usize,
    pub strategy: InactivationStrategy,
    pub master_seed: u64,
}

impl ExperimentSpec {
    pub fn new(mode: Mode, dist: DistSpec, k: usize, epsilons: Vec<f64>) -> Self {
        ExperimentSpec {
            mode,
            dist,
            k,
            epsilons,
            trials: 200,
            strategy: InactivationStrategy::Random,
            master_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.k == 0 {
            return Err(HarnessError::Spec("k must be at least 1".into()));
        }
        if self.epsilons.is_empty() && matches!(self.mode, Mode::Predict | Mode::Simulate | Mode::Bound) {
            return Err(HarnessError::Spec("epsilon grid is empty".into()));
        }
        if let Some(e) = self.epsilons.iter().find(|e| !(e.is_finite() && **e >= 0.0)) {
            return Err(HarnessError::Spec(format!("epsilon {e} must be finite and >= 0")));
        }
        if self.mode == Mode::Simulate && self.trials == 0 {
            return Err(HarnessError::Spec("trials must be at least 1".into()));
        }
        Ok(())
    }

    pub fn build_dist(&self) -> Result<DegreeDistribution, HarnessError> {
        let d = self.dist.build(self.k)?;
        d.validate().map_err(DistError::Invalid)?;
        Ok(d)
    }
}

/// Parses `0,0.1,0.2` or `start:step:stop` (inclusive of `stop` up to
/// rounding). Grid points are computed as `start + i*step` and rounded to
/// 12 decimals so that `0:0.05:0.3` yields exactly `0.05`, `0.1`, ...
pub fn parse_eps_grid(s: &str) -> Result<Vec<f64>, HarnessError> {
    let bad = |m: &str| HarnessError::Spec(format!("{m} in epsilon grid {s:?}"));
    let num = |t: &str| f64::from_str(t.trim()).map_err(|_| bad("bad number"));
    let parts: Vec<&str> = s.split(':').collect();
    match parts.len() {
        1 => s.split(',').map(num).collect(),
        3 => {
            let (start, step, stop) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if !(step > 0.0) || stop < start {
                return Err(bad("need step > 0 and stop >= start"));
            }
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n)
                .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
                .collect())
        }
        _ => Err(bad("expected a list or start:step:stop")),
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one simulation trial:
/// `splitmix64(splitmix64(splitmix64(master) ^ eps_index) ^ trial_index)`,
/// where `splitmix64` is the SplitMix64 output function.
pub fn trial_seed(master: u64, eps_index: usize, trial_index: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ eps_index as u64) ^ trial_index as u64)
}

/// Aggregated simulation results at one overhead.
#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    pub epsilon: f64,
    pub trials: usize,
    pub mean_inactivations: f64,
    /// Sample standard deviation (0 for a single trial).
    pub std_dev: f64,
    pub stderr: f64,
    pub failure_rate: f64,
}

impl SimStats {
    fn from_samples(epsilon: f64, samples: &[(usize, bool)]) -> Self {
        let n = samples.len();
        let mean = samples.iter().map(|s| s.0 as f64).sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|s| (s.0 as f64 - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        let std_dev = var.sqrt();
        SimStats {
            epsilon,
            trials: n,
            mean_inactivations: mean,
            std_dev,
            stderr: std_dev / (n as f64).sqrt(),
            failure_rate: samples.iter().filter(|s| !s.1).count() as f64 / n as f64,
        }
    }
}

/// One encode + structure-only decode.
pub fn run_trial(
    k: usize,
    m: usize,
    dist: &DegreeDistribution,
    strategy: InactivationStrategy,
    seed: u64,
) -> Result<(usize, bool), HarnessError> {
    let mut rng = CodecRng::seed_from_u64(seed);
    let g = encode_with(k, m, dist, &mut rng)?;
    let t = decode_structure(&g, strategy, &mut rng);
    Ok((t.num_inactivations, t.success))
}

/// Monte Carlo inactivation counts and failure rates, one entry per epsilon.
pub fn run_simulation(spec: &ExperimentSpec) -> Result<Vec<SimStats>, HarnessError> {
    spec.validate()?;
    let dist = spec.build_dist()?;
    spec.epsilons
        .iter()
        .enumerate()
        .map(|(ei, &eps)| {
            let m = received_symbols(spec.k, eps);
            let samples = (0..spec.trials)
                .into_par_iter()
                .map(|t| run_trial(spec.k, m, &dist, spec.strategy, trial_seed(spec.master_seed, ei, t)))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SimStats::from_samples(eps, &samples))
        })
        .collect()
}

pub fn write_simulation_csv<W: Write>(out: &mut W, stats: &[SimStats]) -> std::io::Result<()> {
    writeln!(out, "epsilon,trials,mean_inact,std,stderr,failure_rate")?;
    for s in stats {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            s.epsilon, s.trials, s.mean_inactivations, s.std_dev, s.stderr, s.failure_rate
        )?;
    }
    Ok(())
}

/// Model predictions, one per epsilon, with full trajectories.
pub fn run_prediction(spec: &ExperimentSpec) -> Result<Vec<(f64, Prediction)>, HarnessError> {
    spec.validate()?;
    let dist = spec.build_dist()?;
    Ok(spec
        .epsilons
        .par_iter()
        .map(|&eps| (eps, predict_inactivations(spec.k, eps, &dist)))
        .collect())
}

pub fn write_prediction_csv<W: Write>(out: &mut W, rows: &[(f64, Prediction)]) -> std::io::Result<()> {
    writeln!(out, "epsilon,predicted_inact")?;
    for (eps, p) in rows {
        writeln!(out, "{eps},{}", p.n_inact_total)?;
    }
    Ok(())
}

/// Failure lower bound at each epsilon.
pub fn run_bound(spec: &ExperimentSpec, precision_bits: usize) -> Result<Vec<(f64, BoundResult)>, HarnessError> {
    spec.validate()?;
    let dist = spec.build_dist()?;
    spec.epsilons
        .par_iter()
        .map(|&epsilon| {
            pf_lower_bound(&dist, spec.k, epsilon, precision_bits)
                .map(|b| (epsilon, b))
                .map_err(|source| HarnessError::Bound { epsilon, source })
        })
        .collect()
}

pub fn write_bound_csv<W: Write>(out: &mut W, rows: &[(f64, BoundResult)]) -> std::io::Result<()> {
    writeln!(out, "epsilon,pf_lower_bound")?;
    for (eps, b) in rows {
        writeln!(out, "{eps},{:e}", b.value)?;
    }
    Ok(())
}

/// Mean decoder state per step, averaged over trials. Index `j` is the state
/// after `j` steps, `j = 0..=k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrajectory {
    pub active_outputs: Vec<f64>,
    /// `ripples[i - 1][j]`: mean size of ripple `i` after `j` steps.
    pub ripples: Vec<Vec<f64>>,
    pub cum_inact: Vec<f64>,
}

/// Runs `trials` decodes at overhead `epsilon`, recording ripple sizes
/// `1..=max_ripple` and cumulative inactivations at every step.
pub fn simulate_trajectory(
    k: usize,
    epsilon: f64,
    dist: &DegreeDistribution,
    trials: usize,
    strategy: InactivationStrategy,
    master_seed: u64,
    max_ripple: usize,
) -> Result<SimTrajectory, HarnessError> {
    if trials == 0 {
        return Err(HarnessError::Spec("trials must be at least 1".into()));
    }
    let m = received_symbols(k, epsilon);
    let runs = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<Vec<Vec<f64>>, HarnessError> {
            let mut rng = CodecRng::seed_from_u64(trial_seed(master_seed, 0, t));
            let g = encode_with(k, m, dist, &mut rng)?;
            let mut st = DecoderState::new(&g);
            // rows: active outputs, cumulative inactivations, ripples 1..=max
            let mut rec = vec![Vec::with_capacity(k + 1); 2 + max_ripple];
            loop {
                rec[0].push(st.active_outputs() as f64);
                rec[1].push(st.inactive_count() as f64);
                for i in 1..=max_ripple {
                    rec[1 + i].push(st.ripple_size(i) as f64);
                }
                if st.is_complete() {
                    break;
                }
                st.resolve_step(strategy, &mut rng)?;
            }
            Ok(rec)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut sum = vec![vec![0.0; k + 1]; 2 + max_ripple];
    for run in &runs {
        for (acc, row) in sum.iter_mut().zip(run) {
            acc.iter_mut().zip(row).for_each(|(a, x)| *a += x);
        }
    }
    let n = trials as f64;
    sum.iter_mut().flatten().for_each(|x| *x /= n);
    let mut it = sum.into_iter();
    Ok(SimTrajectory {
        active_outputs: it.next().unwrap_or_default(),
        cum_inact: it.next().unwrap_or_default(),
        ripples: it.collect(),
    })
}

/// Human-readable summary of a distribution followed by its text form.
pub fn emit_dist(spec: &DistSpec, dist: &DegreeDistribution) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# mean degree = {}", dist.mean_degree());
    let _ = writeln!(s, "# d_max = {}", dist.d_max());
    if let DistSpec::Rsd { c, delta } | DistSpec::TruncatedRsd { c, delta, .. } = *spec {
        if let Ok(shape) = rsd_shape(dist.k(), c, delta) {
            let _ = writeln!(s, "# spike = {}", shape.spike);
        }
    }
    s.push_str(&dist.to_text());
    s
}
