//! LT encoding and inactivation decoding.
//!
//! Decoding runs in four phases over the generator matrix `G` (one row per
//! received symbol, one column per input symbol):
//!
//! 1. Triangularization. For `k` steps, an output with exactly one active
//!    neighbour marks that neighbour *resolvable*; if none exists, one
//!    active input is marked *inactive* according to the
//!    [`InactivationStrategy`].
//! 2. Zero-matrix procedure. `G` is permuted so the pivot rows form a lower
//!    triangular block over the resolvable columns, then row additions clear
//!    every resolvable column outside its pivot row. The remaining rows
//!    restricted to the inactive columns form the matrix `C`.
//! 3. Gaussian elimination on `C`. Decoding succeeds iff `rank(C)` equals
//!    the number of inactive columns.
//! 4. Back-substitution of the resolvable symbols when values are supplied.

use std::collections::BTreeSet;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::degree_dist::DegreeDistribution;
use crate::gf2::{solve_dense, DenseBitMatrix, DenseSolution, Gf2Error, Gf2Symbol, SparseBitMatrix};

/// Generator used for every stochastic operation in the crate.
pub type CodecRng = ChaCha8Rng;

/// `m = ceil(k(1+epsilon))`, ignoring floating-point noise just above an
/// integer.
pub fn received_symbols(k: usize, epsilon: f64) -> usize {
    let x = k as f64 * (1.0 + epsilon);
    (x - 1e-9).ceil().max(0.0) as usize
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DecodeError {
    #[error("generator has {actual} columns, expected {expected}")]
    ColumnMismatch { expected: usize, actual: usize },
    #[error("right-hand side has {actual} entries for {expected} rows")]
    RhsLength { expected: usize, actual: usize },
    #[error("inactivation requested while {0} outputs have active degree 1")]
    RippleNotEmpty(usize),
    #[error("no active input symbols left")]
    NoActiveInputs,
    #[error("back-substitution requested on a failed decode")]
    NotDecodable,
    #[error("distribution reaches degree {d_max} but k = {k}")]
    DegreeTooLarge { d_max: usize, k: usize },
    #[error(transparent)]
    Matrix(#[from] Gf2Error),
}

/// Parameters of one encoding run.
#[derive(Debug, Clone)]
pub struct EncodeSpec {
    pub k: usize,
    pub m: usize,
    pub dist: DegreeDistribution,
    pub seed: u64,
}

impl EncodeSpec {
    /// Overhead `m/k - 1`.
    pub fn overhead(&self) -> f64 {
        self.m as f64 / self.k as f64 - 1.0
    }
}

/// Samples the `m x k` generator matrix described by `spec`.
pub fn encode(spec: &EncodeSpec) -> Result<SparseBitMatrix, DecodeError> {
    let mut rng = CodecRng::seed_from_u64(spec.seed);
    encode_with(spec.k, spec.m, &spec.dist, &mut rng)
}

/// Samples `m` rows: each draws a degree from `dist` and that many distinct
/// columns uniformly from `0..k`.
pub fn encode_with<R: Rng + ?Sized>(
    k: usize,
    m: usize,
    dist: &DegreeDistribution,
    rng: &mut R,
) -> Result<SparseBitMatrix, DecodeError> {
    if dist.d_max() > k {
        return Err(DecodeError::DegreeTooLarge { d_max: dist.d_max(), k });
    }
    let sampler = dist.sampler();
    let rows = (0..m).map(|_| {
        let d = sampler.sample(rng);
        index::sample(rng, k, d).into_vec()
    });
    Ok(SparseBitMatrix::from_supports(k, rows)?)
}

/// Output symbols `c = u G^T` for input symbols `u`.
pub fn encode_symbols<T: Gf2Symbol>(g: &SparseBitMatrix, input: &[T]) -> Result<Vec<T>, DecodeError> {
    if input.len() != g.cols() {
        return Err(DecodeError::ColumnMismatch {
            expected: g.cols(),
            actual: input.len(),
        });
    }
    Ok((0..g.rows())
        .map(|r| {
            let mut acc = T::default();
            for &c in g.row(r) {
                acc ^= input[c as usize];
            }
            acc
        })
        .collect())
}

/// Rule for choosing which input to inactivate when no output has active
/// degree one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InactivationStrategy {
    /// Uniformly random active input.
    Random,
    /// Active input with the most active output neighbours; ties broken
    /// uniformly at random.
    MaxActiveDegree,
}

impl std::str::FromStr for InactivationStrategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "random" => Ok(Self::Random),
            "max-active-degree" | "max" => Ok(Self::MaxActiveDegree),
            _ => Err(format!("unknown strategy {s:?} (random | max-active-degree)")),
        }
    }
}

impl std::fmt::Display for InactivationStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Random => "random",
            Self::MaxActiveDegree => "max-active-degree",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMark {
    Active,
    Resolvable,
    Inactive,
}

/// What one triangularization step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    /// `input` was resolved through output `row`.
    Resolved { input: usize, row: usize },
    Inactivated { input: usize },
}

/// Mutable state of the triangularization phase.
#[derive(Debug, Clone)]
pub struct DecoderState {
    matrix: SparseBitMatrix,
    col_rows: Vec<Vec<u32>>,
    marks: Vec<InputMark>,
    output_active_degree: Vec<u32>,
    // number of outputs at each active degree
    degree_histogram: Vec<u32>,
    ripple1: BTreeSet<u32>,
    step: usize,
    l_r: usize,
    l_x: usize,
    // active inputs for O(1) uniform draws
    active: Vec<u32>,
    active_pos: Vec<u32>,
    // An input's active degree is its column weight for as long as it is
    // active: every output holding an active input is itself active.
    input_active_degree: Vec<u32>,
    buckets: Vec<Vec<u32>>,
    bucket_pos: Vec<u32>,
    resolution: Vec<(u32, u32)>,
    inactivated: Vec<u32>,
    per_step: Vec<u8>,
}

impl DecoderState {
    pub fn new(g: &SparseBitMatrix) -> Self {
        let (m, k) = (g.rows(), g.cols());
        let mut col_rows = vec![Vec::new(); k];
        let mut output_active_degree = Vec::with_capacity(m);
        let mut ripple1 = BTreeSet::new();
        let max_deg = (0..m).map(|r| g.row(r).len()).max().unwrap_or(0);
        let mut degree_histogram = vec![0u32; max_deg + 1];
        for r in 0..m {
            let row = g.row(r);
            for &c in row {
                col_rows[c as usize].push(r as u32);
            }
            output_active_degree.push(row.len() as u32);
            degree_histogram[row.len()] += 1;
            if row.len() == 1 {
                ripple1.insert(r as u32);
            }
        }
        let input_active_degree: Vec<u32> = col_rows.iter().map(|v| v.len() as u32).collect();
        let max_w = input_active_degree.iter().copied().max().unwrap_or(0) as usize;
        let mut buckets = vec![Vec::new(); max_w + 1];
        let mut bucket_pos = vec![0u32; k];
        for (c, &w) in input_active_degree.iter().enumerate() {
            bucket_pos[c] = buckets[w as usize].len() as u32;
            buckets[w as usize].push(c as u32);
        }
        DecoderState {
            matrix: g.clone(),
            col_rows,
            marks: vec![InputMark::Active; k],
            output_active_degree,
            degree_histogram,
            ripple1,
            step: 0,
            l_r: 0,
            l_x: 0,
            active: (0..k as u32).collect(),
            active_pos: (0..k as u32).collect(),
            input_active_degree,
            buckets,
            bucket_pos,
            resolution: Vec::new(),
            inactivated: Vec::new(),
            per_step: Vec::with_capacity(k),
        }
    }

    pub fn k(&self) -> usize {
        self.marks.len()
    }

    /// Steps taken so far, `l_r + l_x`.
    pub fn step(&self) -> usize {
        self.step
    }

    pub fn resolvable_count(&self) -> usize {
        self.l_r
    }

    pub fn inactive_count(&self) -> usize {
        self.l_x
    }

    pub fn active_count(&self) -> usize {
        self.active.len()
    }

    pub fn mark(&self, input: usize) -> InputMark {
        self.marks[input]
    }

    pub fn output_active_degree(&self, row: usize) -> usize {
        self.output_active_degree[row] as usize
    }

    pub fn input_active_degree(&self, input: usize) -> usize {
        if self.marks[input] == InputMark::Active {
            self.input_active_degree[input] as usize
        } else {
            0
        }
    }

    /// Outputs of active degree one, by original row index.
    pub fn ripple1(&self) -> &BTreeSet<u32> {
        &self.ripple1
    }

    /// Number of outputs with active degree exactly `i`.
    pub fn ripple_size(&self, i: usize) -> usize {
        self.degree_histogram.get(i).copied().unwrap_or(0) as usize
    }

    /// Number of outputs with at least one active neighbour.
    pub fn active_outputs(&self) -> usize {
        self.degree_histogram.iter().skip(1).map(|&c| c as usize).sum()
    }

    pub fn is_complete(&self) -> bool {
        self.active.is_empty()
    }

    /// Inputs active before this step that the step's event removed from the
    /// active set, in order: `(input, resolved_by_row)`.
    pub fn resolution_order(&self) -> &[(u32, u32)] {
        &self.resolution
    }

    pub fn inactivated(&self) -> &[u32] {
        &self.inactivated
    }

    /// Picks the input to inactivate. Only valid when no output has active
    /// degree one.
    pub fn select_inactivation<R: Rng + ?Sized>(
        &self,
        strategy: InactivationStrategy,
        rng: &mut R,
    ) -> Result<usize, DecodeError> {
        if !self.ripple1.is_empty() {
            return Err(DecodeError::RippleNotEmpty(self.ripple1.len()));
        }
        if self.active.is_empty() {
            return Err(DecodeError::NoActiveInputs);
        }
        let pick = match strategy {
            InactivationStrategy::Random => self.active[uniform_index(rng, self.active.len())],
            InactivationStrategy::MaxActiveDegree => {
                let top = self
                    .buckets
                    .iter()
                    .rev()
                    .find(|b| !b.is_empty())
                    .expect("an active input sits in some bucket");
                top[uniform_index(rng, top.len())]
            }
        };
        Ok(pick as usize)
    }

    /// Performs one triangularization step. When several outputs have
    /// active degree one, the lowest original row index is used.
    pub fn resolve_step<R: Rng + ?Sized>(
        &mut self,
        strategy: InactivationStrategy,
        rng: &mut R,
    ) -> Result<StepEvent, DecodeError> {
        if self.active.is_empty() {
            return Err(DecodeError::NoActiveInputs);
        }
        let event = if let Some(&row) = self.ripple1.first() {
            let input = self
                .matrix
                .row(row as usize)
                .iter()
                .map(|&c| c as usize)
                .find(|&c| self.marks[c] == InputMark::Active)
                .expect("degree-one output has an active neighbour");
            self.marks[input] = InputMark::Resolvable;
            self.l_r += 1;
            self.resolution.push((input as u32, row));
            self.per_step.push(0);
            StepEvent::Resolved {
                input,
                row: row as usize,
            }
        } else {
            let input = self.select_inactivation(strategy, rng)?;
            self.marks[input] = InputMark::Inactive;
            self.l_x += 1;
            self.inactivated.push(input as u32);
            self.per_step.push(1);
            StepEvent::Inactivated { input }
        };
        let input = match event {
            StepEvent::Resolved { input, .. } | StepEvent::Inactivated { input } => input,
        };
        self.deactivate(input);
        self.step += 1;
        Ok(event)
    }

    fn deactivate(&mut self, input: usize) {
        let pos = self.active_pos[input] as usize;
        self.active.swap_remove(pos);
        if let Some(&moved) = self.active.get(pos) {
            self.active_pos[moved as usize] = pos as u32;
        }
        let w = self.input_active_degree[input] as usize;
        let bpos = self.bucket_pos[input] as usize;
        let bucket = &mut self.buckets[w];
        bucket.swap_remove(bpos);
        if let Some(&moved) = bucket.get(bpos) {
            self.bucket_pos[moved as usize] = bpos as u32;
        }
        for &r in &self.col_rows[input] {
            let deg = &mut self.output_active_degree[r as usize];
            self.degree_histogram[*deg as usize] -= 1;
            *deg -= 1;
            self.degree_histogram[*deg as usize] += 1;
            match *deg {
                1 => {
                    self.ripple1.insert(r);
                }
                0 => {
                    self.ripple1.remove(&r);
                }
                _ => {}
            }
        }
    }

    /// Recounts every output's active degree from scratch. Test support.
    pub fn recount_output_degrees(&self) -> Vec<usize> {
        (0..self.matrix.rows())
            .map(|r| {
                self.matrix
                    .row(r)
                    .iter()
                    .filter(|&&c| self.marks[c as usize] == InputMark::Active)
                    .count()
            })
            .collect()
    }

    /// Runs the zero-matrix procedure. Requires all `k` steps to be done.
    pub fn into_reduced<T: Gf2Symbol>(self, rhs: Option<&[T]>) -> Result<ReducedSystem<T>, DecodeError> {
        if !self.is_complete() {
            return Err(DecodeError::NotDecodable);
        }
        let (m, k) = (self.matrix.rows(), self.matrix.cols());
        if let Some(rhs) = rhs {
            if rhs.len() != m {
                return Err(DecodeError::RhsLength {
                    expected: m,
                    actual: rhs.len(),
                });
            }
        }
        let l_r = self.l_r;
        let mut is_pivot = vec![false; m];
        let mut row_order = Vec::with_capacity(m);
        let mut col_order = Vec::with_capacity(k);
        for &(c, r) in &self.resolution {
            is_pivot[r as usize] = true;
            row_order.push(r as usize);
            col_order.push(c as usize);
        }
        row_order.extend((0..m).filter(|&r| !is_pivot[r]));
        col_order.extend(self.inactivated.iter().map(|&c| c as usize));

        let mut matrix = self.matrix;
        matrix.permute(&row_order, &col_order)?;
        let mut values: Option<Vec<T>> = rhs.map(|v| row_order.iter().map(|&r| v[r]).collect());

        // Pivot row t covers column t, earlier resolvable columns and
        // inactive columns. Clearing earlier columns in order only ever adds
        // inactive columns.
        for t in 0..m {
            let limit = t.min(l_r);
            let lower: Vec<usize> = matrix
                .row(t)
                .iter()
                .map(|&c| c as usize)
                .take_while(|&c| c < limit)
                .collect();
            for c in lower {
                matrix.xor_row(c, t)?;
                if let Some(v) = values.as_mut() {
                    let x = v[c];
                    v[t] ^= x;
                }
            }
        }
        Ok(ReducedSystem {
            matrix,
            values,
            resolvable: l_r,
            per_step: self.per_step,
        })
    }
}

fn uniform_index<R: Rng + ?Sized>(rng: &mut R, n: usize) -> usize {
    rng.gen_range(0..n as u64) as usize
}

/// `G` after the zero-matrix procedure: `[I B; 0 C]` under the stored
/// permutations, with the transformed right-hand side.
#[derive(Debug, Clone)]
pub struct ReducedSystem<T> {
    matrix: SparseBitMatrix,
    values: Option<Vec<T>>,
    resolvable: usize,
    per_step: Vec<u8>,
}

impl<T: Gf2Symbol> ReducedSystem<T> {
    pub fn matrix(&self) -> &SparseBitMatrix {
        &self.matrix
    }

    pub fn resolvable(&self) -> usize {
        self.resolvable
    }

    pub fn inactive(&self) -> usize {
        self.matrix.cols() - self.resolvable
    }

    /// The matrix `C`: rows below the pivot block, inactive columns only.
    pub fn c_matrix(&self) -> DenseBitMatrix {
        let (m, l_r) = (self.matrix.rows(), self.resolvable);
        let mut c = DenseBitMatrix::zeros(m - l_r, self.inactive());
        for r in l_r..m {
            for &col in self.matrix.row(r) {
                debug_assert!(col as usize >= l_r, "zero-out left a resolvable column");
                c.set(r - l_r, col as usize - l_r, true);
            }
        }
        c
    }

    /// Solves for the reference variables. `None` values means only the
    /// rank is determined.
    pub fn solve_reference(&self) -> ReferenceSolution<T> {
        let c = self.c_matrix();
        let l_x = self.inactive();
        match &self.values {
            None => {
                let rank = c.rank();
                ReferenceSolution {
                    rank,
                    consistent: true,
                    values: None,
                    success: rank == l_x,
                }
            }
            Some(v) => {
                let tail = &v[self.resolvable..];
                match solve_dense(&c, tail).expect("shapes agree by construction") {
                    DenseSolution::Unique(x) => ReferenceSolution {
                        rank: l_x,
                        consistent: true,
                        values: Some(x),
                        success: true,
                    },
                    DenseSolution::RankDeficient { rank, .. } => ReferenceSolution {
                        rank,
                        consistent: true,
                        values: None,
                        success: false,
                    },
                    DenseSolution::Inconsistent { rank, .. } => ReferenceSolution {
                        rank,
                        consistent: false,
                        values: None,
                        success: false,
                    },
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferenceSolution<T> {
    pub rank: usize,
    pub consistent: bool,
    pub values: Option<Vec<T>>,
    pub success: bool,
}

/// Recovers all `k` input symbols, in original column order, from the
/// reduced system and the reference-variable values.
pub fn back_substitute<T: Gf2Symbol>(system: &ReducedSystem<T>, reference_values: &[T]) -> Result<Vec<T>, DecodeError> {
    let values = system.values.as_ref().ok_or(DecodeError::NotDecodable)?;
    let (k, l_r) = (system.matrix.cols(), system.resolvable);
    if reference_values.len() != k - l_r {
        return Err(DecodeError::NotDecodable);
    }
    let mut logical = vec![T::default(); k];
    logical[l_r..].copy_from_slice(reference_values);
    // Pivot row t now reads u_t + (inactive terms) = values[t]; the order of
    // evaluation is free because the resolvable block is diagonal.
    for t in (0..l_r).rev() {
        let mut acc = values[t];
        for &c in system.matrix.row(t) {
            let c = c as usize;
            if c >= l_r {
                acc ^= reference_values[c - l_r];
            }
        }
        logical[t] = acc;
    }
    let mut out = vec![T::default(); k];
    for (l, &orig) in system.matrix.col_perm().iter().enumerate() {
        out[orig] = logical[l];
    }
    Ok(out)
}

/// Full record of one decoding run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecoderTrace<T> {
    pub num_inactivations: usize,
    pub success: bool,
    /// 1 where step `j` inactivated an input, 0 where it resolved one.
    pub per_step_inactivation: Vec<u8>,
    /// Rank of `C`.
    pub ge_rank: usize,
    /// Input symbols, when values were supplied and decoding succeeded.
    pub recovered: Option<Vec<T>>,
}

/// Decodes `g` (which must have `k` columns). With `rhs`, the received
/// symbols are also decoded.
pub fn decode<T: Gf2Symbol, R: Rng + ?Sized>(
    g: &SparseBitMatrix,
    k: usize,
    strategy: InactivationStrategy,
    rhs: Option<&[T]>,
    rng: &mut R,
) -> Result<DecoderTrace<T>, DecodeError> {
    if g.cols() != k {
        return Err(DecodeError::ColumnMismatch {
            expected: k,
            actual: g.cols(),
        });
    }
    if let Some(rhs) = rhs {
        if rhs.len() != g.rows() {
            return Err(DecodeError::RhsLength {
                expected: g.rows(),
                actual: rhs.len(),
            });
        }
    }
    let mut state = DecoderState::new(g);
    while !state.is_complete() {
        state.resolve_step(strategy, rng)?;
    }
    let num_inactivations = state.inactive_count();
    let system = state.into_reduced(rhs)?;
    let solution = system.solve_reference();
    let recovered = match (&solution.values, solution.success) {
        (Some(x), true) => Some(back_substitute(&system, x)?),
        _ => None,
    };
    Ok(DecoderTrace {
        num_inactivations,
        success: solution.success,
        per_step_inactivation: system.per_step,
        ge_rank: solution.rank,
        recovered,
    })
}

/// Structure-only decode: no symbol values, just the trace.
pub fn decode_structure<R: Rng + ?Sized>(
    g: &SparseBitMatrix,
    strategy: InactivationStrategy,
    rng: &mut R,
) -> DecoderTrace<bool> {
    decode::<bool, R>(g, g.cols(), strategy, None, rng).expect("shapes are consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degree_dist::{make_rsd, make_truncated_rsd};

    fn rng(seed: u64) -> CodecRng {
        CodecRng::seed_from_u64(seed)
    }

    #[test]
    fn received_symbol_counts() {
        assert_eq!(received_symbols(1000, 0.1), 1100);
        assert_eq!(received_symbols(1000, 0.0), 1000);
        assert_eq!(received_symbols(1000, 0.2), 1200);
        assert_eq!(received_symbols(10, 0.05), 11);
        assert_eq!(received_symbols(1000, 0.3), 1300);
    }

    #[test]
    fn encode_degenerate_distributions() {
        let d = DegreeDistribution::new(1, [(1, 1.0)]).unwrap();
        let g = encode(&EncodeSpec { k: 1, m: 7, dist: d, seed: 3 }).unwrap();
        assert!((0..7).all(|r| g.row(r) == [0]));

        let d = DegreeDistribution::new(9, [(9, 1.0)]).unwrap();
        let g = encode(&EncodeSpec { k: 9, m: 5, dist: d, seed: 3 }).unwrap();
        assert!((0..5).all(|r| g.row(r).len() == 9));
    }

    #[test]
    fn encode_is_deterministic_and_checks_degree() {
        let d = make_rsd(100, 0.1, 0.05).unwrap();
        let spec = EncodeSpec { k: 100, m: 120, dist: d.clone(), seed: 42 };
        assert_eq!(encode(&spec).unwrap(), encode(&spec).unwrap());
        let err = encode_with(50, 10, &d, &mut rng(0)).unwrap_err();
        assert!(matches!(err, DecodeError::DegreeTooLarge { .. }));
    }

    #[test]
    fn identity_needs_no_inactivation() {
        let g = SparseBitMatrix::identity(10);
        let t = decode_structure(&g, InactivationStrategy::Random, &mut rng(1));
        assert_eq!(t.num_inactivations, 0);
        assert!(t.success);
        assert_eq!(t.ge_rank, 0);
        assert_eq!(t.per_step_inactivation, vec![0; 10]);
    }

    #[test]
    fn duplicate_rows_fail_after_one_inactivation() {
        let g = SparseBitMatrix::from_supports(2, [vec![0, 1], vec![0, 1]]).unwrap();
        for strategy in [InactivationStrategy::Random, InactivationStrategy::MaxActiveDegree] {
            let t = decode_structure(&g, strategy, &mut rng(2));
            assert_eq!(t.num_inactivations, 1);
            assert!(!t.success);
            assert_eq!(t.ge_rank, 0);
            assert_eq!(t.per_step_inactivation, vec![1, 0]);
        }
    }

    #[test]
    fn decode_rejects_bad_shapes() {
        let g = SparseBitMatrix::identity(3);
        assert!(matches!(
            decode::<bool, _>(&g, 4, InactivationStrategy::Random, None, &mut rng(0)),
            Err(DecodeError::ColumnMismatch { .. })
        ));
        assert!(matches!(
            decode(&g, 3, InactivationStrategy::Random, Some(&[true, false][..]), &mut rng(0)),
            Err(DecodeError::RhsLength { .. })
        ));
    }

    #[test]
    fn single_output_resolves() {
        let g = SparseBitMatrix::from_supports(1, [vec![0]]).unwrap();
        let mut s = DecoderState::new(&g);
        assert_eq!(
            s.resolve_step(InactivationStrategy::Random, &mut rng(0)).unwrap(),
            StepEvent::Resolved { input: 0, row: 0 }
        );
    }

    #[test]
    fn forced_inactivation_when_all_degree_two() {
        let g = SparseBitMatrix::from_supports(3, [vec![0, 1], vec![1, 2], vec![0, 2]]).unwrap();
        let mut s = DecoderState::new(&g);
        let ev = s.resolve_step(InactivationStrategy::Random, &mut rng(0)).unwrap();
        assert!(matches!(ev, StepEvent::Inactivated { .. }));
    }

    #[test]
    fn lowest_row_resolves_first() {
        let g = SparseBitMatrix::from_supports(3, [vec![0, 1], vec![2], vec![1]]).unwrap();
        let mut s = DecoderState::new(&g);
        let ev = s.resolve_step(InactivationStrategy::Random, &mut rng(0)).unwrap();
        assert_eq!(ev, StepEvent::Resolved { input: 2, row: 1 });
    }

    #[test]
    fn select_inactivation_contracts() {
        let g = SparseBitMatrix::from_supports(2, [vec![0]]).unwrap();
        let s = DecoderState::new(&g);
        assert!(matches!(
            s.select_inactivation(InactivationStrategy::Random, &mut rng(0)),
            Err(DecodeError::RippleNotEmpty(1))
        ));

        let mut done = DecoderState::new(&SparseBitMatrix::identity(1));
        done.resolve_step(InactivationStrategy::Random, &mut rng(0)).unwrap();
        assert!(matches!(
            done.select_inactivation(InactivationStrategy::Random, &mut rng(0)),
            Err(DecodeError::NoActiveInputs)
        ));

        // a single active input and no outputs
        let empty = SparseBitMatrix::from_supports(1, Vec::<Vec<usize>>::new()).unwrap();
        let s = DecoderState::new(&empty);
        for strategy in [InactivationStrategy::Random, InactivationStrategy::MaxActiveDegree] {
            assert_eq!(s.select_inactivation(strategy, &mut rng(9)).unwrap(), 0);
        }
    }

    #[test]
    fn max_active_degree_picks_unique_maximum() {
        // column 3 sits in five degree-2 rows, every other column in at most two
        let g = SparseBitMatrix::from_supports(
            8,
            [vec![3, 0], vec![3, 1], vec![3, 2], vec![3, 4], vec![3, 5], vec![6, 7], vec![6, 7]],
        )
        .unwrap();
        let s = DecoderState::new(&g);
        for seed in 0..20 {
            assert_eq!(
                s.select_inactivation(InactivationStrategy::MaxActiveDegree, &mut rng(seed)).unwrap(),
                3
            );
        }
    }

    #[test]
    fn random_inactivation_is_uniform() {
        // ten inputs, every output of degree two: a 10-cycle
        let rows: Vec<Vec<usize>> = (0..10).map(|i| vec![i, (i + 1) % 10]).collect();
        let g = SparseBitMatrix::from_supports(10, rows).unwrap();
        let s = DecoderState::new(&g);
        let mut counts = [0usize; 10];
        let mut r = rng(77);
        let n = 100_000;
        for _ in 0..n {
            counts[s.select_inactivation(InactivationStrategy::Random, &mut r).unwrap()] += 1;
        }
        let sigma = (n as f64 * 0.1 * 0.9).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * 0.1).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn state_invariants_hold_through_a_run() {
        let d = make_rsd(300, 0.1, 0.05).unwrap();
        let g = encode_with(300, 330, &d, &mut rng(5)).unwrap();
        for strategy in [InactivationStrategy::Random, InactivationStrategy::MaxActiveDegree] {
            let mut s = DecoderState::new(&g);
            let mut r = rng(6);
            let mut events = Vec::new();
            while !s.is_complete() {
                let before: Vec<InputMark> = (0..300).map(|i| s.mark(i)).collect();
                events.push(s.resolve_step(strategy, &mut r).unwrap());
                assert_eq!(s.resolvable_count() + s.inactive_count() + s.active_count(), 300);
                let degs = s.recount_output_degrees();
                assert!(degs.iter().enumerate().all(|(o, &d)| s.output_active_degree(o) == d));
                let ripple: BTreeSet<u32> = (0..degs.len() as u32).filter(|&o| degs[o as usize] == 1).collect();
                assert_eq!(&ripple, s.ripple1());
                for (i, was) in before.iter().enumerate() {
                    if *was != InputMark::Active {
                        assert_eq!(s.mark(i), *was);
                    }
                }
            }
            let trace = decode_structure(&g, strategy, &mut rng(6));
            let folded: Vec<u8> = events
                .iter()
                .map(|e| matches!(e, StepEvent::Inactivated { .. }) as u8)
                .collect();
            assert_eq!(trace.per_step_inactivation, folded);
            assert_eq!(trace.num_inactivations, folded.iter().map(|&x| x as usize).sum::<usize>());
        }
    }

    #[test]
    fn identity_round_trip() {
        let g = SparseBitMatrix::identity(5);
        let u: Vec<u64> = vec![9, 8, 7, 6, 5];
        let t = decode(&g, 5, InactivationStrategy::Random, Some(&u[..]), &mut rng(0)).unwrap();
        assert_eq!(t.recovered.unwrap(), u);
    }

    #[test]
    fn zero_codeword_recovers_zero() {
        let d = make_rsd(32, 0.1, 0.1).unwrap();
        let g = encode_with(32, 48, &d, &mut rng(8)).unwrap();
        let c = vec![0u64; 48];
        let t = decode(&g, 32, InactivationStrategy::Random, Some(&c[..]), &mut rng(1)).unwrap();
        if t.success {
            assert_eq!(t.recovered.unwrap(), vec![0u64; 32]);
        }
    }

    #[test]
    fn round_trip_random_payloads() {
        let d = make_rsd(32, 0.1, 0.1).unwrap();
        let mut successes = 0;
        for seed in 0..200 {
            let mut r = rng(seed);
            let g = encode_with(32, 48, &d, &mut r).unwrap();
            let u: Vec<u64> = (0..32).map(|_| r.gen()).collect();
            let c = encode_symbols(&g, &u).unwrap();
            for strategy in [InactivationStrategy::Random, InactivationStrategy::MaxActiveDegree] {
                let t = decode(&g, 32, strategy, Some(&c[..]), &mut r).unwrap();
                assert_eq!(t.success, g.to_dense().rank() == 32);
                if t.success {
                    successes += 1;
                    let got = t.recovered.unwrap();
                    assert_eq!(got, u);
                    assert_eq!(encode_symbols(&g, &got).unwrap(), c);
                }
            }
        }
        assert!(successes > 200);
    }

    #[test]
    fn reduced_system_has_identity_block() {
        let d = make_truncated_rsd(200, 0.1, 0.05, 40).unwrap();
        let g = encode_with(200, 220, &d, &mut rng(3)).unwrap();
        let mut s = DecoderState::new(&g);
        let mut r = rng(4);
        while !s.is_complete() {
            s.resolve_step(InactivationStrategy::Random, &mut r).unwrap();
        }
        let sys = s.into_reduced::<bool>(None).unwrap();
        let l_r = sys.resolvable();
        let mat = sys.matrix();
        for t in 0..mat.rows() {
            let resolvable: Vec<u32> = mat.row(t).iter().copied().filter(|&c| (c as usize) < l_r).collect();
            if t < l_r {
                assert_eq!(resolvable, vec![t as u32]);
            } else {
                assert!(resolvable.is_empty());
            }
        }
        mat.check_invariants().unwrap();
        assert_eq!(l_r + sys.c_matrix().rank(), g.rank());
    }

    #[test]
    fn back_substitute_refuses_structure_only() {
        let g = SparseBitMatrix::identity(2);
        let mut s = DecoderState::new(&g);
        while !s.is_complete() {
            s.resolve_step(InactivationStrategy::Random, &mut rng(0)).unwrap();
        }
        let sys = s.into_reduced::<u64>(None).unwrap();
        assert_eq!(back_substitute(&sys, &[]), Err(DecodeError::NotDecodable));
    }
}
