//! Expected-value model of inactivation decoding under random inactivation.
//!
//! The number of outputs of active degree `i` after `j` steps is modelled as
//! `Binomial(m_j, p_i)`, where `m_j` is the expected number of active
//! outputs. Each step removes one active input, so an output of active degree
//! `i` among the `k - j` active inputs drops to degree `i - 1` with
//! probability `chi = i / (k - j)`. Ripple 1 additionally loses the output
//! used to resolve an input whenever it is non-empty. A step inactivates an
//! input exactly when ripple 1 is empty, which happens with probability
//! `(1 - p_1)^m_j`; summing these over all `k` steps gives the expected
//! number of inactivations.

use std::io::Write;

use thiserror::Error;

use crate::degree_dist::DegreeDistribution;
use crate::lt_codec::received_symbols;

/// Negative values below this are reported rather than silently clamped.
pub const DRIFT_TOLERANCE: f64 = 1e-9;

/// Active-output mass below which the graph is treated as exhausted.
pub const DEPLETION_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("active degree {i} outside 1..={active} at step {j} of k = {k}")]
    DegreeOutOfRange { i: usize, k: usize, j: usize, active: usize },
}

/// Model state after `j` steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RippleState {
    pub j: usize,
    /// Expected number of active outputs.
    pub m_j: f64,
    /// `p[i - 1]`: probability that an active output has active degree `i`.
    pub p: Vec<f64>,
    /// Expected inactivations over steps `1..=j`.
    pub cum_inact: f64,
    /// Expected inactivations in step `j` alone (0 for the initial state).
    pub n_inact_step: f64,
    /// Largest negative excursion clamped away so far (0 if none beyond
    /// [`DRIFT_TOLERANCE`]).
    pub worst_drift: f64,
}

impl RippleState {
    /// Expected size of ripple `i`, `m_j * p_i`.
    pub fn ripple(&self, i: usize) -> f64 {
        if i == 0 || i > self.p.len() {
            0.0
        } else {
            self.m_j * self.p[i - 1]
        }
    }
}

/// State before decoding starts: every output is active and has its
/// sampled degree.
pub fn initial_state(m: usize, dist: &DegreeDistribution) -> RippleState {
    RippleState {
        j: 0,
        m_j: m as f64,
        p: dist.masses().to_vec(),
        cum_inact: 0.0,
        n_inact_step: 0.0,
        worst_drift: 0.0,
    }
}

/// Probability that an output with `i` active neighbours loses one of them
/// in step `j + 1`, `i / (k - j)`.
pub fn chi(i: usize, k: usize, j: usize) -> Result<f64, ModelError> {
    let active = k.saturating_sub(j);
    if i == 0 || i > active {
        return Err(ModelError::DegreeOutOfRange { i, k, j, active });
    }
    Ok(i as f64 / active as f64)
}

/// `(1 - p)^m` for real `m >= 0`.
fn prob_empty(p: f64, m: f64) -> f64 {
    if m <= 0.0 {
        1.0
    } else if p >= 1.0 {
        0.0
    } else {
        (m * (-p).ln_1p()).exp()
    }
}

/// Advances the model by one decoding step.
pub fn step(state: &RippleState, k: usize) -> RippleState {
    assert!(state.j < k, "model already at step k = {k}");
    let active = (k - state.j) as f64;
    let d = state.p.len();
    let m = state.m_j;

    if m < DEPLETION_THRESHOLD {
        return RippleState {
            j: state.j + 1,
            m_j: 0.0,
            p: vec![0.0; d],
            cum_inact: state.cum_inact + 1.0,
            n_inact_step: 1.0,
            worst_drift: state.worst_drift,
        };
    }

    let p1 = state.p.first().copied().unwrap_or(0.0);
    let empty = prob_empty(p1, m);

    // expected departures from each ripple
    let mut leave = vec![0.0; d + 1];
    if d >= 1 {
        leave[0] = (1.0 - empty) * (1.0 - 1.0 / active) + m * p1 / active;
    }
    for i in 2..=d {
        // an active output cannot keep more neighbours than there are active
        // inputs, so chi saturates at 1
        let chi = (i as f64 / active).min(1.0);
        leave[i - 1] = chi * m * state.p[i - 1];
    }

    let mut worst = state.worst_drift;
    let mut m_next = m - leave[0];
    if m_next < -DRIFT_TOLERANCE {
        worst = worst.min(m_next);
    }
    m_next = m_next.max(0.0);

    let mut p_next = vec![0.0; d];
    if m_next >= DEPLETION_THRESHOLD {
        for i in 1..=d {
            let mass = m * state.p[i - 1] + leave[i] - leave[i - 1];
            let mut q = mass / m_next;
            if q < -DRIFT_TOLERANCE {
                worst = worst.min(q);
            }
            q = q.clamp(0.0, 1.0);
            p_next[i - 1] = q;
        }
    } else {
        m_next = 0.0;
    }

    RippleState {
        j: state.j + 1,
        m_j: m_next,
        p: p_next,
        cum_inact: state.cum_inact + empty,
        n_inact_step: empty,
        worst_drift: worst,
    }
}

/// Result of [`predict_inactivations`].
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Expected number of inactivations over all `k` steps.
    pub n_inact_total: f64,
    /// States `0..=k`.
    pub trajectory: Vec<RippleState>,
}

/// Expected inactivations at overhead `epsilon`, with `m = ceil(k(1+epsilon))`.
pub fn predict_inactivations(k: usize, epsilon: f64, dist: &DegreeDistribution) -> Prediction {
    predict_with_symbols(k, received_symbols(k, epsilon), dist)
}

/// Same as [`predict_inactivations`] for an explicit symbol count.
pub fn predict_with_symbols(k: usize, m: usize, dist: &DegreeDistribution) -> Prediction {
    let mut trajectory = Vec::with_capacity(k + 1);
    let mut s = initial_state(m, dist);
    for _ in 0..k {
        let next = step(&s, k);
        trajectory.push(s);
        s = next;
    }
    let n_inact_total = s.cum_inact;
    trajectory.push(s);
    Prediction {
        n_inact_total,
        trajectory,
    }
}

/// Expected inactivations only, without keeping the trajectory.
pub fn expected_inactivations(k: usize, epsilon: f64, dist: &DegreeDistribution) -> f64 {
    let mut s = initial_state(received_symbols(k, epsilon), dist);
    for _ in 0..k {
        s = step(&s, k);
    }
    s.cum_inact
}

/// Writes a trajectory as CSV with columns
/// `j,m_j,p_1..p_dmax,n_inact_step,cum_inact`.
pub fn write_trajectory_csv<W: Write>(out: &mut W, trajectory: &[RippleState]) -> std::io::Result<()> {
    let d = trajectory.first().map_or(0, |s| s.p.len());
    write!(out, "j,m_j")?;
    for i in 1..=d {
        write!(out, ",p_{i}")?;
    }
    writeln!(out, ",n_inact_step,cum_inact")?;
    for s in trajectory {
        write!(out, "{},{:?}", s.j, s.m_j)?;
        for p in &s.p {
            write!(out, ",{p:?}")?;
        }
        writeln!(out, ",{:?},{:?}", s.n_inact_step, s.cum_inact)?;
    }
    Ok(())
}
