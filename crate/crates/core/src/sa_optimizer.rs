//! Simulated-annealing search for degree distributions.
//!
//! The energy of a distribution is its predicted number of inactivations
//! plus a penalty that grows linearly once the failure lower bound crosses
//! the target:
//!
//! ```text
//! E = N_inact + f_p(P_F)
//! f_p = 0                      if P_F < P_F*
//!       b * (P_F / P_F* - 1)   otherwise
//! ```
//!
//! Distributions whose mean degree exceeds the cap get infinite energy and
//! are never accepted.

use std::collections::HashMap;
use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::degree_dist::{make_truncated_rsd, DegreeDistribution, NORMALIZATION_TOLERANCE};
use crate::failure_bound::{pf_lower_bound, DEFAULT_PRECISION_BITS};
use crate::ripple_model::expected_inactivations;

/// Slack on the mean-degree cap, absorbing rounding in the projection.
const MEAN_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnealError {
    #[error("initial distribution is infeasible: {0}")]
    InfeasibleStart(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

fn default_precision() -> usize {
    DEFAULT_PRECISION_BITS
}

/// Feasibility limits and penalty weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignConstraints {
    pub k: usize,
    pub pf_target: f64,
    /// Overhead at which the failure bound is enforced.
    #[serde(default)]
    pub pf_eval_epsilon: f64,
    pub mean_degree_cap: f64,
    pub d_max_cap: usize,
    pub penalty_b: f64,
    #[serde(default = "default_precision")]
    pub bound_precision_bits: usize,
}

impl DesignConstraints {
    /// `P_F* = 1e-2` at `epsilon = 0`, mean degree at most 12, maximum
    /// degree 150 (or `k` if smaller), `b = 1000`.
    pub fn standard(k: usize) -> Self {
        DesignConstraints {
            k,
            pf_target: 1e-2,
            pf_eval_epsilon: 0.0,
            mean_degree_cap: 12.0,
            d_max_cap: 150.min(k),
            penalty_b: 1000.0,
            bound_precision_bits: DEFAULT_PRECISION_BITS,
        }
    }

    pub fn validate(&self) -> Result<(), AnnealError> {
        let bad = |s: &str| Err(AnnealError::Config(s.to_string()));
        if self.k == 0 || self.d_max_cap == 0 || self.d_max_cap > self.k {
            return bad("need 1 <= d_max_cap <= k");
        }
        if !(self.pf_target > 0.0 && self.mean_degree_cap >= 1.0 && self.penalty_b > 0.0) {
            return bad("pf_target, penalty_b must be positive and mean_degree_cap >= 1");
        }
        if !(self.pf_eval_epsilon >= 0.0 && self.pf_eval_epsilon.is_finite()) {
            return bad("pf_eval_epsilon must be finite and >= 0");
        }
        Ok(())
    }

    /// Whether `dist` lies in the search space (valid, within both caps).
    pub fn admits(&self, dist: &DegreeDistribution) -> bool {
        dist.validate().is_ok()
            && dist.k() == self.k
            && dist.d_max() <= self.d_max_cap
            && dist.mean_degree() <= self.mean_degree_cap + MEAN_SLACK
    }
}

/// Penalty term for a failure bound `pf` against target `target`.
pub fn penalty(pf: f64, target: f64, b: f64) -> f64 {
    if pf < target {
        0.0
    } else {
        b * (pf / target - 1.0)
    }
}

/// Energy and its parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Energy {
    pub total: f64,
    pub n_inact: f64,
    pub pf_bound: f64,
    pub penalty: f64,
}

impl Energy {
    const INFEASIBLE: Energy = Energy {
        total: f64::INFINITY,
        n_inact: f64::INFINITY,
        pf_bound: 1.0,
        penalty: f64::INFINITY,
    };

    pub fn is_feasible(&self) -> bool {
        self.total.is_finite()
    }
}

/// Full energy breakdown. Out-of-space distributions, and any whose bound
/// cannot be resolved, get infinite energy.
pub fn evaluate(dist: &DegreeDistribution, c: &DesignConstraints) -> Energy {
    if !c.admits(dist) {
        return Energy::INFEASIBLE;
    }
    let (n_inact, bound) = rayon::join(
        || expected_inactivations(c.k, c.pf_eval_epsilon, dist),
        || pf_lower_bound(dist, c.k, c.pf_eval_epsilon, c.bound_precision_bits),
    );
    let Ok(bound) = bound else {
        return Energy::INFEASIBLE;
    };
    let pen = penalty(bound.value, c.pf_target, c.penalty_b);
    Energy {
        total: n_inact + pen,
        n_inact,
        pf_bound: bound.value,
        penalty: pen,
    }
}

pub fn energy(dist: &DegreeDistribution, c: &DesignConstraints) -> f64 {
    evaluate(dist, c).total
}

/// Memoizes [`evaluate`] on the exact mass vector.
#[derive(Debug)]
pub struct EnergyCache {
    constraints: DesignConstraints,
    map: HashMap<Vec<u64>, Energy>,
    evaluations: usize,
}

impl EnergyCache {
    pub fn new(constraints: DesignConstraints) -> Self {
        EnergyCache {
            constraints,
            map: HashMap::new(),
            evaluations: 0,
        }
    }

    pub fn get(&mut self, dist: &DegreeDistribution) -> Energy {
        let key: Vec<u64> = dist.masses().iter().map(|p| p.to_bits()).collect();
        if let Some(e) = self.map.get(&key) {
            return *e;
        }
        let e = evaluate(dist, &self.constraints);
        self.evaluations += 1;
        self.map.insert(key, e);
        e
    }

    /// Number of distinct distributions actually evaluated.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }
}

/// Proposes a nearby distribution.
///
/// Moves `scale * U(0,1)` of the mass at a random positive-mass degree `d_a`
/// to a different random degree `d_b <= d_max_cap`. If that pushes the mean
/// above the cap, mass is shifted from the largest degree down to degree 1
/// until it fits.
pub fn neighbor<R: Rng + ?Sized>(
    dist: &DegreeDistribution,
    scale: f64,
    c: &DesignConstraints,
    rng: &mut R,
) -> DegreeDistribution {
    let cap = c.d_max_cap.min(c.k);
    let mut p = dist.masses().to_vec();
    p.resize(cap.max(p.len()), 0.0);
    if cap < 2 || scale == 0.0 {
        return dist.clone();
    }
    let d_a = loop {
        let d = rng.gen_range(1..=cap);
        if p[d - 1] > 0.0 {
            break d;
        }
    };
    let d_b = loop {
        let d = rng.gen_range(1..=cap);
        if d != d_a {
            break d;
        }
    };
    let delta = scale * rng.gen::<f64>() * p[d_a - 1];
    p[d_a - 1] -= delta;
    p[d_b - 1] += delta;

    project_mean(&mut p, c.mean_degree_cap);
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > NORMALIZATION_TOLERANCE / 4.0 {
        p.iter_mut().for_each(|x| *x /= total);
    }
    DegreeDistribution::from_masses(c.k, p)
}

fn project_mean(p: &mut [f64], cap: f64) {
    let mean = |p: &[f64]| p.iter().enumerate().map(|(i, &x)| (i + 1) as f64 * x).sum::<f64>();
    let mut over = mean(p) - cap;
    while over > 0.0 {
        let Some(top) = p.iter().rposition(|&x| x > 0.0) else { break };
        if top == 0 {
            break;
        }
        // moving x from degree top+1 to degree 1 lowers the mean by x * top
        let x = (over / top as f64).min(p[top]);
        if x >= p[top] {
            p[0] += p[top];
            p[top] = 0.0;
        } else {
            p[top] -= x;
            p[0] += x;
        }
        over = mean(p) - cap;
        if over > 0.0 && over < MEAN_SLACK / 2.0 {
            // rounding residue; one more tiny shift settles it
            let top = p.iter().rposition(|&x| x > 0.0).unwrap_or(0);
            if top == 0 {
                break;
            }
            let x = (2.0 * over / top as f64).min(p[top]);
            p[top] -= x;
            p[0] += x;
            break;
        }
    }
}

/// Metropolis acceptance probability of an energy change `delta_e` at
/// temperature `t`.
pub fn acceptance_probability(delta_e: f64, t: f64) -> f64 {
    if delta_e <= 0.0 {
        1.0
    } else if delta_e.is_infinite() {
        0.0
    } else {
        (-delta_e / t).exp()
    }
}

fn d_t_init() -> f64 {
    10.0
}
fn d_t_final() -> f64 {
    1e-3
}
fn d_cooling() -> f64 {
    0.95
}
fn d_moves() -> usize {
    50
}
fn d_scale() -> f64 {
    0.2
}
fn d_max_steps() -> usize {
    usize::MAX
}

/// Annealing schedule and search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnealConfig {
    #[serde(default = "d_t_init")]
    pub t_init: f64,
    #[serde(default = "d_t_final")]
    pub t_final: f64,
    #[serde(default = "d_cooling")]
    pub cooling_factor: f64,
    #[serde(default = "d_moves")]
    pub moves_per_temperature: usize,
    #[serde(default = "d_scale")]
    pub perturbation_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_max_steps")]
    pub max_steps: usize,
    /// Stop as soon as an accepted state reaches this energy.
    #[serde(default)]
    pub target_energy: Option<f64>,
    pub constraints: DesignConstraints,
    pub initial_dist: DegreeDistribution,
}

impl AnnealConfig {
    /// Default schedule from `initial_dist`.
    pub fn new(constraints: DesignConstraints, initial_dist: DegreeDistribution) -> Self {
        AnnealConfig {
            t_init: d_t_init(),
            t_final: d_t_final(),
            cooling_factor: d_cooling(),
            moves_per_temperature: d_moves(),
            perturbation_scale: d_scale(),
            seed: 0,
            max_steps: d_max_steps(),
            target_energy: None,
            constraints,
            initial_dist,
        }
    }

    pub fn validate(&self) -> Result<(), AnnealError> {
        self.constraints.validate()?;
        if !(self.t_init > self.t_final && self.t_final > 0.0) {
            return Err(AnnealError::Config("need t_init > t_final > 0".into()));
        }
        if !(self.cooling_factor > 0.0 && self.cooling_factor < 1.0) {
            return Err(AnnealError::Config("cooling_factor must be in (0, 1)".into()));
        }
        if self.moves_per_temperature == 0 {
            return Err(AnnealError::Config("moves_per_temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.perturbation_scale) {
            return Err(AnnealError::Config("perturbation_scale must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One proposal. Step 0 is the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry {
    pub step: usize,
    pub temperature: f64,
    /// Energy of the proposed state.
    pub energy: f64,
    pub accepted: bool,
    pub mean_degree: f64,
    pub pf_bound: f64,
}

#[derive(Debug, Clone)]
pub struct AnnealRun {
    pub best_dist: DegreeDistribution,
    pub best_energy: f64,
    pub history: Vec<HistoryEntry>,
    /// Distinct energy evaluations (cache misses).
    pub evaluations: usize,
}

impl AnnealRun {
    /// History as CSV: `step,temperature,energy,accepted,mean_degree,pf_bound`.
    pub fn write_history_csv<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "step,temperature,energy,accepted,mean_degree,pf_bound")?;
        for h in &self.history {
            writeln!(
                out,
                "{},{:e},{},{},{},{:e}",
                h.step,
                h.temperature,
                h.energy,
                u8::from(h.accepted),
                h.mean_degree,
                h.pf_bound
            )?;
        }
        Ok(())
    }
}

/// Runs one annealing chain. Deterministic for a given config.
pub fn anneal(config: &AnnealConfig) -> Result<AnnealRun, AnnealError> {
    config.validate()?;
    let c = &config.constraints;
    let mut cache = EnergyCache::new(c.clone());
    let mut current = config.initial_dist.clone();
    let e0 = cache.get(&current);
    if !e0.is_feasible() {
        let why = match current.validate() {
            Err(v) => format!("{v:?}"),
            Ok(()) if current.k() != c.k => format!("k {} != {}", current.k(), c.k),
            Ok(()) if current.d_max() > c.d_max_cap => format!("d_max {} > {}", current.d_max(), c.d_max_cap),
            Ok(()) if current.mean_degree() > c.mean_degree_cap + MEAN_SLACK => {
                format!("mean degree {} > {}", current.mean_degree(), c.mean_degree_cap)
            }
            Ok(()) => "failure bound could not be evaluated".into(),
        };
        return Err(AnnealError::InfeasibleStart(why));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut t = config.t_init;
    let mut e_cur = e0.total;
    let mut best = current.clone();
    let mut best_e = e_cur;
    let mut history = vec![HistoryEntry {
        step: 0,
        temperature: t,
        energy: e_cur,
        accepted: true,
        mean_degree: current.mean_degree(),
        pf_bound: e0.pf_bound,
    }];
    let reached = |e: f64| config.target_energy.is_some_and(|target| e <= target);

    let mut step = 0;
    'outer: while t > config.t_final && !reached(best_e) {
        for _ in 0..config.moves_per_temperature {
            if step >= config.max_steps {
                break 'outer;
            }
            step += 1;
            let cand = neighbor(&current, config.perturbation_scale, c, &mut rng);
            let e = cache.get(&cand);
            let accept = rng.gen::<f64>() < acceptance_probability(e.total - e_cur, t);
            history.push(HistoryEntry {
                step,
                temperature: t,
                energy: e.total,
                accepted: accept,
                mean_degree: cand.mean_degree(),
                pf_bound: e.pf_bound,
            });
            if accept {
                current = cand;
                e_cur = e.total;
                if e_cur < best_e {
                    best_e = e_cur;
                    best = current.clone();
                    if reached(best_e) {
                        break 'outer;
                    }
                }
            }
        }
        t *= config.cooling_factor;
    }

    Ok(AnnealRun {
        best_dist: best,
        best_energy: best_e,
        history,
        evaluations: cache.evaluations(),
    })
}

/// Winner of [`rsd_parameter_search`].
#[derive(Debug, Clone)]
pub struct RsdSearchResult {
    pub c: f64,
    pub delta: f64,
    pub dist: DegreeDistribution,
    pub energy: Energy,
}

/// Exhaustive search over truncated robust soliton parameters. Points that
/// cannot be built or are infeasible are skipped; returns `None` if no point
/// is feasible. Ties go to the smaller mean degree.
pub fn rsd_parameter_search(c: &DesignConstraints, c_grid: &[f64], delta_grid: &[f64]) -> Option<RsdSearchResult> {
    use rayon::prelude::*;
    let points: Vec<(f64, f64)> = c_grid
        .iter()
        .flat_map(|&cc| delta_grid.iter().map(move |&dd| (cc, dd)))
        .collect();
    let scored: Vec<Option<RsdSearchResult>> = points
        .par_iter()
        .map(|&(cc, dd)| {
            let dist = make_truncated_rsd(c.k, cc, dd, c.d_max_cap).ok()?;
            let energy = evaluate(&dist, c);
            energy.is_feasible().then_some(RsdSearchResult {
                c: cc,
                delta: dd,
                dist,
                energy,
            })
        })
        .collect();
    // sequential fold keeps the grid order as the final tie-break
    scored.into_iter().flatten().fold(None, |acc: Option<RsdSearchResult>, r| match acc {
        None => Some(r),
        Some(a) => {
            let better = r.energy.total < a.energy.total
                || (r.energy.total == a.energy.total && r.dist.mean_degree() < a.dist.mean_degree());
            Some(if better { r } else { a })
        }
    })
}
