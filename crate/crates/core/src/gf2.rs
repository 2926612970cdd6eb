//! Binary matrices over GF(2).
//!
//! [`SparseBitMatrix`] is the working representation of an LT generator
//! matrix: one ordered column-index set per row, plus the row and column
//! permutations applied so far. [`DenseBitMatrix`] is a packed row-major
//! matrix used for the final Gaussian elimination on the inactivated columns
//! and as an independent oracle in tests.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::BitXorAssign;

use thiserror::Error;

/// Errors raised by matrix operations.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Gf2Error {
    #[error("row index {index} out of range for {rows} rows")]
    RowOutOfRange { index: usize, rows: usize },
    #[error("column index {index} out of range for {cols} columns")]
    ColumnOutOfRange { index: usize, cols: usize },
    #[error("source and destination row are both {0}")]
    SameRow(usize),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("not a permutation of 0..{0}")]
    NotAPermutation(usize),
}

/// A value that can sit on the right-hand side of a GF(2) system.
///
/// Anything with an XOR works: `bool` for a single binary system, `u64` for
/// 64 independent systems sharing one coefficient matrix.
pub trait Gf2Symbol: Copy + Default + PartialEq + BitXorAssign + fmt::Debug {}

impl Gf2Symbol for bool {}
impl Gf2Symbol for u8 {}
impl Gf2Symbol for u32 {}
impl Gf2Symbol for u64 {}

/// Sparse binary matrix stored as one sorted support per row.
///
/// Supports are expressed in logical coordinates. `row_perm[l]` and
/// `col_perm[l]` give the original index of logical row/column `l`.
#[derive(Clone, PartialEq, Eq)]
pub struct SparseBitMatrix {
    cols: usize,
    supports: Vec<Vec<u32>>,
    row_perm: Vec<usize>,
    col_perm: Vec<usize>,
}

impl SparseBitMatrix {
    /// An all-zero `rows x cols` matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SparseBitMatrix {
            cols,
            supports: vec![Vec::new(); rows],
            row_perm: (0..rows).collect(),
            col_perm: (0..cols).collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for (r, s) in m.supports.iter_mut().enumerate() {
            s.push(r as u32);
        }
        m
    }

    /// Builds a matrix from per-row column lists. Duplicates are rejected
    /// rather than cancelled.
    pub fn from_supports<I, R>(cols: usize, rows: I) -> Result<Self, Gf2Error>
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = usize>,
    {
        let mut supports = Vec::new();
        for row in rows {
            let mut s: Vec<u32> = Vec::new();
            for c in row {
                if c >= cols {
                    return Err(Gf2Error::ColumnOutOfRange { index: c, cols });
                }
                s.push(c as u32);
            }
            s.sort_unstable();
            let before = s.len();
            s.dedup();
            if s.len() != before {
                return Err(Gf2Error::DimensionMismatch {
                    expected: before,
                    actual: s.len(),
                });
            }
            supports.push(s);
        }
        let rows = supports.len();
        Ok(SparseBitMatrix {
            cols,
            supports,
            row_perm: (0..rows).collect(),
            col_perm: (0..cols).collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.supports.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Sorted column indices of the ones in logical row `r`.
    pub fn row(&self, r: usize) -> &[u32] {
        &self.supports[r]
    }

    pub fn row_perm(&self) -> &[usize] {
        &self.row_perm
    }

    pub fn col_perm(&self) -> &[usize] {
        &self.col_perm
    }

    pub fn nnz(&self) -> usize {
        self.supports.iter().map(Vec::len).sum()
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        self.supports[r].binary_search(&(c as u32)).is_ok()
    }

    /// Number of ones in each column.
    pub fn column_weights(&self) -> Vec<usize> {
        let mut w = vec![0; self.cols];
        for s in &self.supports {
            for &c in s {
                w[c as usize] += 1;
            }
        }
        w
    }

    /// `dst <- dst + src` over GF(2): the support of `dst` becomes the
    /// symmetric difference of both supports.
    pub fn xor_row(&mut self, src: usize, dst: usize) -> Result<(), Gf2Error> {
        let rows = self.rows();
        for index in [src, dst] {
            if index >= rows {
                return Err(Gf2Error::RowOutOfRange { index, rows });
            }
        }
        if src == dst {
            return Err(Gf2Error::SameRow(src));
        }
        let merged = symmetric_difference(&self.supports[src], &self.supports[dst]);
        self.supports[dst] = merged;
        Ok(())
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        self.supports.swap(a, b);
        self.row_perm.swap(a, b);
    }

    /// Exchanges logical columns `a` and `b`. Touches every row.
    pub fn swap_cols(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let (a32, b32) = (a as u32, b as u32);
        for s in &mut self.supports {
            let mut touched = false;
            for c in s.iter_mut() {
                if *c == a32 {
                    *c = b32;
                    touched = true;
                } else if *c == b32 {
                    *c = a32;
                    touched = true;
                }
            }
            if touched {
                s.sort_unstable();
            }
        }
        self.col_perm.swap(a, b);
    }

    /// Reorders rows and columns in one pass: new logical row `i` is current
    /// logical row `row_order[i]`, and likewise for columns.
    pub fn permute(&mut self, row_order: &[usize], col_order: &[usize]) -> Result<(), Gf2Error> {
        check_permutation(row_order, self.rows())?;
        check_permutation(col_order, self.cols)?;
        let mut new_label = vec![0u32; self.cols];
        for (new, &old) in col_order.iter().enumerate() {
            new_label[old] = new as u32;
        }
        let mut old_supports = std::mem::take(&mut self.supports);
        self.supports = row_order
            .iter()
            .map(|&r| {
                let mut s: Vec<u32> = std::mem::take(&mut old_supports[r])
                    .into_iter()
                    .map(|c| new_label[c as usize])
                    .collect();
                s.sort_unstable();
                s
            })
            .collect();
        self.row_perm = row_order.iter().map(|&r| self.row_perm[r]).collect();
        self.col_perm = col_order.iter().map(|&c| self.col_perm[c]).collect();
        Ok(())
    }

    /// GF(2) rank by sparse elimination on a scratch copy of the rows.
    pub fn rank(&self) -> usize {
        // leading column -> fully reduced-by-lead row
        let mut pivots: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for s in &self.supports {
            let mut row = s.clone();
            while let Some(&lead) = row.first() {
                match pivots.get(&lead) {
                    Some(p) => row = symmetric_difference(p, &row),
                    None => {
                        pivots.insert(lead, row);
                        break;
                    }
                }
            }
        }
        pivots.len()
    }

    pub fn to_dense(&self) -> DenseBitMatrix {
        let mut d = DenseBitMatrix::zeros(self.rows(), self.cols);
        for (r, s) in self.supports.iter().enumerate() {
            for &c in s {
                d.set(r, c as usize, true);
            }
        }
        d
    }

    /// Checks the structural invariants. Used by tests and debug assertions.
    pub fn check_invariants(&self) -> Result<(), Gf2Error> {
        for s in &self.supports {
            for w in s.windows(2) {
                if w[0] >= w[1] {
                    return Err(Gf2Error::DimensionMismatch {
                        expected: w[0] as usize + 1,
                        actual: w[1] as usize,
                    });
                }
            }
            if let Some(&last) = s.last() {
                if last as usize >= self.cols {
                    return Err(Gf2Error::ColumnOutOfRange {
                        index: last as usize,
                        cols: self.cols,
                    });
                }
            }
        }
        check_permutation(&self.row_perm, self.rows())?;
        check_permutation(&self.col_perm, self.cols)
    }
}

impl fmt::Debug for SparseBitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "SparseBitMatrix {}x{}", self.rows(), self.cols)?;
        for (r, s) in self.supports.iter().enumerate() {
            writeln!(f, "  {r}: {s:?}")?;
        }
        Ok(())
    }
}

fn check_permutation(p: &[usize], n: usize) -> Result<(), Gf2Error> {
    if p.len() != n {
        return Err(Gf2Error::NotAPermutation(n));
    }
    let mut seen = vec![false; n];
    for &x in p {
        if x >= n || seen[x] {
            return Err(Gf2Error::NotAPermutation(n));
        }
        seen[x] = true;
    }
    Ok(())
}

/// Merge of two sorted supports keeping elements present in exactly one.
pub(crate) fn symmetric_difference(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

const WORD_BITS: usize = 64;

/// Dense row-major bit matrix packed into 64-bit words.
#[derive(Clone, PartialEq, Eq)]
pub struct DenseBitMatrix {
    rows: usize,
    cols: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl DenseBitMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words_per_row = cols.div_ceil(WORD_BITS);
        DenseBitMatrix {
            rows,
            cols,
            words_per_row,
            bits: vec![0; rows * words_per_row],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, true);
        }
        m
    }

    /// Builds a matrix from rows of booleans. All rows must share a length.
    pub fn from_rows<R: AsRef<[bool]>>(cols: usize, rows: &[R]) -> Result<Self, Gf2Error> {
        let mut m = Self::zeros(rows.len(), cols);
        for (r, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Gf2Error::DimensionMismatch {
                    expected: cols,
                    actual: row.len(),
                });
            }
            for (c, &b) in row.iter().enumerate() {
                m.set(r, c, b);
            }
        }
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> bool {
        assert!(r < self.rows && c < self.cols, "bit ({r}, {c}) out of range");
        let w = self.bits[r * self.words_per_row + c / WORD_BITS];
        (w >> (c % WORD_BITS)) & 1 == 1
    }

    pub fn set(&mut self, r: usize, c: usize, value: bool) {
        assert!(r < self.rows && c < self.cols, "bit ({r}, {c}) out of range");
        let w = &mut self.bits[r * self.words_per_row + c / WORD_BITS];
        let mask = 1u64 << (c % WORD_BITS);
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    fn row_words(&self, r: usize) -> &[u64] {
        &self.bits[r * self.words_per_row..(r + 1) * self.words_per_row]
    }

    /// `dst <- dst + src`.
    pub fn xor_row(&mut self, src: usize, dst: usize) {
        assert_ne!(src, dst);
        let wpr = self.words_per_row;
        let (s, d) = (src * wpr, dst * wpr);
        for i in 0..wpr {
            let v = self.bits[s + i];
            self.bits[d + i] ^= v;
        }
    }

    pub fn swap_rows(&mut self, a: usize, b: usize) {
        if a == b {
            return;
        }
        let wpr = self.words_per_row;
        for i in 0..wpr {
            self.bits.swap(a * wpr + i, b * wpr + i);
        }
    }

    pub fn row_is_zero(&self, r: usize) -> bool {
        self.row_words(r).iter().all(|&w| w == 0)
    }

    /// `self * x` with `x` indexed by column.
    pub fn mul_vec<T: Gf2Symbol>(&self, x: &[T]) -> Result<Vec<T>, Gf2Error> {
        if x.len() != self.cols {
            return Err(Gf2Error::DimensionMismatch {
                expected: self.cols,
                actual: x.len(),
            });
        }
        Ok((0..self.rows)
            .map(|r| {
                let mut acc = T::default();
                for (c, &v) in x.iter().enumerate() {
                    if self.get(r, c) {
                        acc ^= v;
                    }
                }
                acc
            })
            .collect())
    }

    /// GF(2) rank by full elimination on a copy.
    pub fn rank(&self) -> usize {
        let mut scratch = self.clone();
        let mut rhs = vec![false; self.rows];
        scratch.eliminate(&mut rhs).len()
    }

    /// Gauss-Jordan elimination in place, carrying `rhs` along. The pivot for
    /// each column is the first row at or below the current rank with a one.
    /// Returns the pivot column of each of the first `rank` rows.
    fn eliminate<T: Gf2Symbol>(&mut self, rhs: &mut [T]) -> Vec<usize> {
        let mut pivot_cols = Vec::new();
        let mut rank = 0;
        for c in 0..self.cols {
            if rank == self.rows {
                break;
            }
            let Some(p) = (rank..self.rows).find(|&r| self.get(r, c)) else {
                continue;
            };
            self.swap_rows(p, rank);
            rhs.swap(p, rank);
            for r in 0..self.rows {
                if r != rank && self.get(r, c) {
                    self.xor_row(rank, r);
                    let v = rhs[rank];
                    rhs[r] ^= v;
                }
            }
            pivot_cols.push(c);
            rank += 1;
        }
        pivot_cols
    }
}

impl fmt::Debug for DenseBitMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "DenseBitMatrix {}x{}", self.rows, self.cols)?;
        for r in 0..self.rows {
            let line: String = (0..self.cols)
                .map(|c| if self.get(r, c) { '1' } else { '0' })
                .collect();
            writeln!(f, "  {line}")?;
        }
        Ok(())
    }
}

/// Outcome of [`solve_dense`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DenseSolution<T> {
    /// Full column rank and consistent: the unique solution.
    Unique(Vec<T>),
    /// Consistent, but some columns have no pivot.
    RankDeficient { rank: usize, free_columns: Vec<usize> },
    /// Elimination produced a row `0 = nonzero`. `row` is its index after
    /// elimination.
    Inconsistent { rank: usize, row: usize },
}

/// Solves `a * x = b` over GF(2).
pub fn solve_dense<T: Gf2Symbol>(
    a: &DenseBitMatrix,
    b: &[T],
) -> Result<DenseSolution<T>, Gf2Error> {
    if b.len() != a.rows() {
        return Err(Gf2Error::DimensionMismatch {
            expected: a.rows(),
            actual: b.len(),
        });
    }
    let mut m = a.clone();
    let mut rhs = b.to_vec();
    let pivot_cols = m.eliminate(&mut rhs);
    let rank = pivot_cols.len();
    if let Some(row) = (rank..m.rows()).find(|&r| rhs[r] != T::default()) {
        return Ok(DenseSolution::Inconsistent { rank, row });
    }
    if rank < a.cols() {
        let mut is_pivot = vec![false; a.cols()];
        for &c in &pivot_cols {
            is_pivot[c] = true;
        }
        let free_columns = (0..a.cols()).filter(|&c| !is_pivot[c]).collect();
        return Ok(DenseSolution::RankDeficient { rank, free_columns });
    }
    let mut x = vec![T::default(); a.cols()];
    for (r, &c) in pivot_cols.iter().enumerate() {
        x[c] = rhs[r];
    }
    Ok(DenseSolution::Unique(x))
}

/// Free-function form of [`DenseBitMatrix::rank`].
pub fn rank(m: &DenseBitMatrix) -> usize {
    m.rank()
}
