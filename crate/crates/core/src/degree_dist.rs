//! Output degree distributions.
//!
//! A [`DegreeDistribution`] holds the probability of each output degree
//! `1..=d_max` for a code with `k` input symbols. Degree 0 cannot be
//! represented. Constructors are provided for the robust soliton
//! distribution, its truncated form, and the binomial distribution of a
//! linear random fountain code.

use std::collections::BTreeMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::failure_bound::log_binomial;

/// Total mass must be within this of 1.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("degree 0 is not a valid output degree")]
    ZeroDegree,
    #[error("k must be at least 1")]
    EmptyBlock,
    #[error("invalid parameter {name} = {value}")]
    Parameter { name: &'static str, value: f64 },
    #[error("maximum degree {d_max} outside 1..={k}")]
    DegreeOutOfRange { d_max: usize, k: usize },
    #[error("invalid distribution: {0:?}")]
    Invalid(Vec<Violation>),
    #[error("parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// One broken invariant found by [`DegreeDistribution::validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NegativeMass { degree: usize, mass: f64 },
    NonFinite { degree: usize },
    SumNotOne { sum: f64 },
    DegreeAboveK { d_max: usize, k: usize },
    Empty,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NegativeMass { degree, mass } => write!(f, "negative mass {mass} at degree {degree}"),
            Violation::NonFinite { degree } => write!(f, "non-finite mass at degree {degree}"),
            Violation::SumNotOne { sum } => write!(f, "sum {sum} != 1"),
            Violation::DegreeAboveK { d_max, k } => write!(f, "d_max {d_max} exceeds k {k}"),
            Violation::Empty => write!(f, "no positive mass"),
        }
    }
}

/// Probability mass over output degrees `1..=d_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegreeDistribution {
    k: usize,
    // probs[d - 1] = mass of degree d; trailing zeros are trimmed
    probs: Vec<f64>,
}

impl DegreeDistribution {
    /// Wraps masses for degrees `1, 2, ...` without checking them; call
    /// [`validate`](Self::validate) before use if the source is untrusted.
    pub fn from_masses(k: usize, masses: Vec<f64>) -> Self {
        let mut probs = masses;
        while probs.last() == Some(&0.0) {
            probs.pop();
        }
        DegreeDistribution { k, probs }
    }

    /// Builds from `(degree, mass)` pairs. Repeated degrees accumulate.
    pub fn from_pairs<I: IntoIterator<Item = (usize, f64)>>(k: usize, pairs: I) -> Result<Self, DistError> {
        let mut probs = Vec::new();
        for (d, p) in pairs {
            if d == 0 {
                return Err(DistError::ZeroDegree);
            }
            if probs.len() < d {
                probs.resize(d, 0.0);
            }
            probs[d - 1] += p;
        }
        Ok(Self::from_masses(k, probs))
    }

    /// Like [`from_pairs`](Self::from_pairs) but rejects anything that fails
    /// validation.
    pub fn new<I: IntoIterator<Item = (usize, f64)>>(k: usize, pairs: I) -> Result<Self, DistError> {
        let d = Self::from_pairs(k, pairs)?;
        d.validate().map_err(DistError::Invalid)?;
        Ok(d)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Largest degree with nonzero mass.
    pub fn d_max(&self) -> usize {
        self.probs.len()
    }

    /// Mass of degree `d`; zero outside the support (including `d = 0`).
    pub fn prob(&self, d: usize) -> f64 {
        if d == 0 {
            0.0
        } else {
            self.probs.get(d - 1).copied().unwrap_or(0.0)
        }
    }

    /// Masses for degrees `1..=d_max`, in order.
    pub fn masses(&self) -> &[f64] {
        &self.probs
    }

    /// `(degree, mass)` for every degree with positive mass.
    pub fn support(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .filter(|(_, &p)| p > 0.0)
            .map(|(i, &p)| (i + 1, p))
    }

    pub fn mean_degree(&self) -> f64 {
        self.probs.iter().enumerate().map(|(i, &p)| (i + 1) as f64 * p).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Checks every invariant and returns all violations found.
    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        for (i, &p) in self.probs.iter().enumerate() {
            if !p.is_finite() {
                v.push(Violation::NonFinite { degree: i + 1 });
            } else if p < 0.0 {
                v.push(Violation::NegativeMass { degree: i + 1, mass: p });
            }
        }
        if self.probs.is_empty() {
            v.push(Violation::Empty);
        } else {
            let sum = self.total_mass();
            if !((sum - 1.0).abs() <= NORMALIZATION_TOLERANCE) {
                v.push(Violation::SumNotOne { sum });
            }
        }
        if self.d_max() > self.k {
            v.push(Violation::DegreeAboveK { d_max: self.d_max(), k: self.k });
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// Inverse-CDF sampler for this distribution.
    pub fn sampler(&self) -> DegreeSampler {
        DegreeSampler::new(self)
    }

    /// Draws one degree. Builds the CDF on each call; use
    /// [`sampler`](Self::sampler) in loops.
    pub fn sample_degree<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler().sample(rng)
    }

    /// Stable 64-bit fingerprint of `k` and the exact bit patterns of the
    /// masses.
    pub fn content_hash(&self) -> u64 {
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.k.hash(&mut h);
        for p in &self.probs {
            p.to_bits().hash(&mut h);
        }
        h.finish()
    }

    /// Plain-text form: a `# k = N` header then one `degree probability` line
    /// per positive-mass degree. Floats are printed in shortest round-trip form.
    pub fn to_text(&self) -> String {
        let mut s = format!("# k = {}\n", self.k);
        for (d, p) in self.support() {
            s.push_str(&format!("{d} {p:?}\n"));
        }
        s
    }

    /// Parses the plain-text form. `k` comes from the header when present,
    /// otherwise from `default_k`.
    pub fn from_text(text: &str, default_k: Option<usize>) -> Result<Self, DistError> {
        let mut k = default_k;
        let mut pairs = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            let err = |msg: &str| DistError::Parse {
                line: lineno + 1,
                msg: msg.to_string(),
            };
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(rest) = comment.trim().strip_prefix('k') {
                    let rest = rest.trim().trim_start_matches('=').trim();
                    k = Some(rest.parse().map_err(|_| err("bad k header"))?);
                }
                continue;
            }
            let mut it = line.split_whitespace();
            let d: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err("expected degree"))?;
            let p: f64 = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| err("expected probability"))?;
            if it.next().is_some() {
                return Err(err("trailing tokens"));
            }
            pairs.push((d, p));
        }
        let k = k.ok_or(DistError::Parse {
            line: 0,
            msg: "k not given".into(),
        })?;
        Self::new(k, pairs)
    }

    pub fn to_json(&self) -> String {
        let probs: BTreeMap<usize, f64> = self.support().collect();
        serde_json::to_string_pretty(&DistJson { k: self.k, probs }).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DistError> {
        let parsed: DistJson = serde_json::from_str(text).map_err(|e| DistError::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?;
        Self::new(parsed.k, parsed.probs)
    }
}

#[derive(Serialize, Deserialize)]
struct DistJson {
    k: usize,
    probs: BTreeMap<usize, f64>,
}

impl Serialize for DegreeDistribution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        DistJson {
            k: self.k,
            probs: self.support().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DegreeDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = DistJson::deserialize(d)?;
        DegreeDistribution::new(raw.k, raw.probs).map_err(serde::de::Error::custom)
    }
}

/// Precomputed cumulative distribution for fast sampling.
#[derive(Debug, Clone)]
pub struct DegreeSampler {
    cdf: Vec<f64>,
}

impl DegreeSampler {
    fn new(dist: &DegreeDistribution) -> Self {
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = dist
            .masses()
            .iter()
            .map(|&p| {
                acc += p;
                acc
            })
            .collect();
        let total = acc;
        for c in &mut cdf {
            *c /= total;
        }
        if let Some(last) = cdf.last_mut() {
            *last = 1.0;
        }
        DegreeSampler { cdf }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1) + 1
    }
}

/// Spike position and mass of a robust soliton distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RsdShape {
    /// `S = c ln(k/delta) sqrt(k)`.
    pub ripple: f64,
    /// Degree carrying the spike, `floor(k/S)` clamped into `1..=k`.
    pub spike: usize,
    /// Normalizer of `rho + tau`.
    pub beta: f64,
}

fn check_rsd_params(k: usize, c: f64, delta: f64) -> Result<(), DistError> {
    if k == 0 {
        return Err(DistError::EmptyBlock);
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(DistError::Parameter { name: "c", value: c });
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DistError::Parameter { name: "delta", value: delta });
    }
    Ok(())
}

/// Robust soliton shape parameters without building the distribution.
pub fn rsd_shape(k: usize, c: f64, delta: f64) -> Result<RsdShape, DistError> {
    let (_, shape) = rsd_unnormalized(k, c, delta)?;
    Ok(shape)
}

fn rsd_unnormalized(k: usize, c: f64, delta: f64) -> Result<(Vec<f64>, RsdShape), DistError> {
    check_rsd_params(k, c, delta)?;
    let kf = k as f64;
    let ripple = c * (kf / delta).ln() * kf.sqrt();
    let spike = ((kf / ripple).floor() as usize).clamp(1, k);
    let mut w = vec![0.0; k];
    w[0] = 1.0 / kf;
    for d in 2..=k {
        let df = d as f64;
        w[d - 1] = 1.0 / (df * (df - 1.0));
    }
    for d in 1..spike {
        w[d - 1] += ripple / (d as f64 * kf);
    }
    w[spike - 1] += (ripple * (ripple / delta).ln() / kf).max(0.0);
    let beta: f64 = w.iter().sum();
    Ok((w, RsdShape { ripple, spike, beta }))
}

/// Luby's robust soliton distribution on `1..=k`.
pub fn make_rsd(k: usize, c: f64, delta: f64) -> Result<DegreeDistribution, DistError> {
    let (mut w, shape) = rsd_unnormalized(k, c, delta)?;
    for x in &mut w {
        *x /= shape.beta;
    }
    Ok(DegreeDistribution::from_masses(k, w))
}

/// Lumps all mass at degrees `>= d_max` into `d_max`.
pub fn truncate(dist: &DegreeDistribution, d_max: usize) -> Result<DegreeDistribution, DistError> {
    if d_max == 0 || d_max > dist.k() {
        return Err(DistError::DegreeOutOfRange { d_max, k: dist.k() });
    }
    let m = dist.masses();
    if m.len() <= d_max {
        return Ok(dist.clone());
    }
    let mut probs = m[..d_max].to_vec();
    probs[d_max - 1] = m[d_max - 1..].iter().sum();
    Ok(DegreeDistribution::from_masses(dist.k(), probs))
}

/// Truncated robust soliton distribution.
pub fn make_truncated_rsd(k: usize, c: f64, delta: f64, d_max: usize) -> Result<DegreeDistribution, DistError> {
    truncate(&make_rsd(k, c, delta)?, d_max)
}

/// Binomial(k, mean/k) degree law conditioned on degree >= 1.
pub fn make_lrfc(k: usize, mean_degree: f64) -> Result<DegreeDistribution, DistError> {
    if k == 0 {
        return Err(DistError::EmptyBlock);
    }
    let kf = k as f64;
    if !(mean_degree > 0.0 && mean_degree <= kf) {
        return Err(DistError::Parameter {
            name: "mean_degree",
            value: mean_degree,
        });
    }
    let p = mean_degree / kf;
    if p == 1.0 {
        return DegreeDistribution::new(k, [(k, 1.0)]);
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    let mut probs: Vec<f64> = (1..=k)
        .map(|d| (log_binomial(k as u64, d as u64).unwrap() + d as f64 * lp + (k - d) as f64 * lq).exp())
        .collect();
    let total: f64 = probs.iter().sum();
    for x in &mut probs {
        *x /= total;
    }
    Ok(DegreeDistribution::from_masses(k, probs))
}

/// Builtin distribution families by name, as used on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum DistSpec {
    Rsd { c: f64, delta: f64 },
    TruncatedRsd { c: f64, delta: f64, d_max: usize },
    Lrfc { mean: f64 },
    File(String),
}

impl DistSpec {
    /// Builds the distribution for block size `k`. File specs accept either
    /// the JSON or the plain-text format.
    pub fn build(&self, k: usize) -> Result<DegreeDistribution, DistError> {
        match *self {
            DistSpec::Rsd { c, delta } => make_rsd(k, c, delta),
            DistSpec::TruncatedRsd { c, delta, d_max } => make_truncated_rsd(k, c, delta, d_max),
            DistSpec::Lrfc { mean } => make_lrfc(k, mean),
            DistSpec::File(ref path) => {
                let text = std::fs::read_to_string(path).map_err(|e| DistError::Parse {
                    line: 0,
                    msg: format!("{path}: {e}"),
                })?;
                if text.trim_start().starts_with('{') {
                    Self::check_k(DegreeDistribution::from_json(&text)?, k)
                } else {
                    Self::check_k(DegreeDistribution::from_text(&text, Some(k))?, k)
                }
            }
        }
    }

    fn check_k(d: DegreeDistribution, k: usize) -> Result<DegreeDistribution, DistError> {
        if d.k() != k {
            return Err(DistError::Parse {
                line: 0,
                msg: format!("file is for k = {}, requested k = {k}", d.k()),
            });
        }
        Ok(d)
    }
}

impl FromStr for DistSpec {
    type Err = DistError;

    /// `rsd:c,delta`, `rsd-trunc:c,delta,dmax`, `lrfc:mean`, or `file:PATH`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = |msg: &str| DistError::Parse {
            line: 0,
            msg: format!("{msg} in {s:?}"),
        };
        let (kind, args) = s.split_once(':').ok_or_else(|| bad("missing ':'"))?;
        if kind == "file" {
            return Ok(DistSpec::File(args.to_string()));
        }
        let nums: Vec<f64> = args
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad("bad number"))?;
        match (kind, nums.as_slice()) {
            ("rsd", &[c, delta]) => Ok(DistSpec::Rsd { c, delta }),
            ("rsd-trunc", &[c, delta, d_max]) if d_max >= 1.0 && d_max.fract() == 0.0 => Ok(DistSpec::TruncatedRsd {
                c,
                delta,
                d_max: d_max as usize,
            }),
            ("lrfc", &[mean]) => Ok(DistSpec::Lrfc { mean }),
            _ => Err(bad("unknown distribution or wrong argument count")),
        }
    }
}
