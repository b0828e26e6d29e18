//! Dense bit-packed binary matrices, tiles and Boolean products.
//!
//! Rows are packed into `u64` words; padding bits past the last column are
//! always zero so popcounts over whole words are exact.

use std::fmt;
use std::io::{BufRead, Write};
use std::sync::OnceLock;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, BmfError, Result};

const WORD: usize = 64;

#[inline]
fn words_for(bits: usize) -> usize {
    bits.div_ceil(WORD)
}

#[inline]
fn and_popcount(a: &[u64], b: &[u64]) -> usize {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x & y).count_ones() as usize)
        .sum()
}

/// A packed binary vector, used for tile patterns and usages.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    len: usize,
    words: Vec<u64>,
}

impl BitVector {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            words: vec![0; words_for(len)],
        }
    }

    pub fn ones(len: usize) -> Self {
        let mut v = Self::zeros(len);
        for i in 0..len {
            v.set(i, true);
        }
        v
    }

    pub fn from_indices(len: usize, indices: &[usize]) -> Result<Self> {
        let mut v = Self::zeros(len);
        for &i in indices {
            if i >= len {
                return Err(BmfError::DimensionMismatch(format!(
                    "index {i} out of range for vector of length {len}"
                )));
            }
            v.set(i, true);
        }
        Ok(v)
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = Self::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            if b {
                v.set(i, true);
            }
        }
        v
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        (self.words[i / WORD] >> (i % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, value: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i % WORD);
        if value {
            self.words[i / WORD] |= mask;
        } else {
            self.words[i / WORD] &= !mask;
        }
    }

    /// Number of ones, `|v|`.
    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    /// Indices of the ones in increasing order.
    pub fn ones_iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let tz = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * WORD + tz)
                }
            })
        })
    }

    pub fn indices(&self) -> Vec<usize> {
        self.ones_iter().collect()
    }

    #[inline]
    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn and_count(&self, other: &BitVector) -> usize {
        and_popcount(&self.words, &other.words)
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = (0..self.len)
            .map(|i| if self.get(i) { '1' } else { '0' })
            .collect();
        write!(f, "BitVector({s})")
    }
}

#[derive(Serialize, Deserialize)]
struct BitVectorRepr {
    len: usize,
    ones: Vec<usize>,
}

impl Serialize for BitVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        BitVectorRepr {
            len: self.len,
            ones: self.indices(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for BitVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = BitVectorRepr::deserialize(d)?;
        BitVector::from_indices(repr.len, &repr.ones).map_err(serde::de::Error::custom)
    }
}

/// Dense `rows × cols` binary matrix with bit-packed rows.
///
/// The transpose is computed lazily and cached; column scans (η, coherence
/// certificates) go through it.
pub struct BinaryMatrix {
    rows: usize,
    cols: usize,
    stride: usize,
    data: Vec<u64>,
    transposed: OnceLock<Box<BinaryMatrix>>,
}

impl Clone for BinaryMatrix {
    fn clone(&self) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            stride: self.stride,
            data: self.data.clone(),
            transposed: OnceLock::new(),
        }
    }
}

impl PartialEq for BinaryMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.rows == other.rows && self.cols == other.cols && self.data == other.data
    }
}

impl Eq for BinaryMatrix {}

impl fmt::Debug for BinaryMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "BinaryMatrix {}x{}", self.rows, self.cols)?;
        for j in 0..self.rows.min(16) {
            let s: String = (0..self.cols.min(64))
                .map(|i| if self.get(j, i) { '1' } else { '0' })
                .collect();
            writeln!(f, "  {s}")?;
        }
        Ok(())
    }
}

impl BinaryMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let stride = words_for(cols);
        Self {
            rows,
            cols,
            stride,
            data: vec![0; rows * stride],
            transposed: OnceLock::new(),
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self::from_fn(rows, cols, |_, _| true)
    }

    pub fn identity(size: usize) -> Self {
        Self::from_fn(size, size, |j, i| i == j)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(rows, cols);
        for j in 0..rows {
            for i in 0..cols {
                if f(j, i) {
                    m.set(j, i, true);
                }
            }
        }
        m
    }

    /// Builds a matrix from nested 0/1 rows. Any nonzero entry is rejected
    /// unless it is exactly 1.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut m = Self::zeros(rows.len(), cols);
        for (j, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(BmfError::DimensionMismatch(format!(
                    "row {j} has {} entries, expected {cols}",
                    row.len()
                )));
            }
            for (i, &v) in row.iter().enumerate() {
                match v {
                    0 => {}
                    1 => m.set(j, i, true),
                    other => {
                        return Err(invalid(format!("entry ({j},{i}) = {other} is not binary")))
                    }
                }
            }
        }
        Ok(m)
    }

    /// Builds a matrix from one bit vector per row.
    pub fn from_row_vectors(cols: usize, rows: &[BitVector]) -> Result<Self> {
        let mut m = Self::zeros(rows.len(), cols);
        for (j, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(BmfError::DimensionMismatch(format!(
                    "row vector {j} has length {}, expected {cols}",
                    r.len()
                )));
            }
            m.row_words_mut(j).copy_from_slice(r.words());
        }
        Ok(m)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        debug_assert!(row < self.rows && col < self.cols);
        (self.data[row * self.stride + col / WORD] >> (col % WORD)) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        assert!(
            row < self.rows && col < self.cols,
            "index ({row},{col}) out of bounds"
        );
        self.transposed = OnceLock::new();
        let mask = 1u64 << (col % WORD);
        let w = &mut self.data[row * self.stride + col / WORD];
        if value {
            *w |= mask;
        } else {
            *w &= !mask;
        }
    }

    #[inline]
    pub fn row_words(&self, row: usize) -> &[u64] {
        &self.data[row * self.stride..(row + 1) * self.stride]
    }

    fn row_words_mut(&mut self, row: usize) -> &mut [u64] {
        self.transposed = OnceLock::new();
        &mut self.data[row * self.stride..(row + 1) * self.stride]
    }

    pub fn row(&self, row: usize) -> BitVector {
        BitVector {
            len: self.cols,
            words: self.row_words(row).to_vec(),
        }
    }

    pub fn column(&self, col: usize) -> BitVector {
        self.transposed().row(col)
    }

    /// Entrywise 1-norm `|M|`, the number of ones.
    pub fn count_ones(&self) -> usize {
        self.data.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Fraction of ones.
    pub fn density(&self) -> f64 {
        let cells = self.rows * self.cols;
        if cells == 0 {
            0.0
        } else {
            self.count_ones() as f64 / cells as f64
        }
    }

    pub fn transpose(&self) -> BinaryMatrix {
        let mut t = BinaryMatrix::zeros(self.cols, self.rows);
        for j in 0..self.rows {
            for (wi, &w) in self.row_words(j).iter().enumerate() {
                let mut w = w;
                while w != 0 {
                    let i = wi * WORD + w.trailing_zeros() as usize;
                    w &= w - 1;
                    t.data[i * t.stride + j / WORD] |= 1u64 << (j % WORD);
                }
            }
        }
        t
    }

    /// Cached transpose.
    pub fn transposed(&self) -> &BinaryMatrix {
        self.transposed.get_or_init(|| Box::new(self.transpose()))
    }

    /// Number of cells where `self` and `other` differ, `|A − B|`.
    pub fn xor_count(&self, other: &BinaryMatrix) -> Result<usize> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Number of cells where both are one, `|A ∘ B|`.
    pub fn and_count(&self, other: &BinaryMatrix) -> Result<usize> {
        self.check_same_shape(other)?;
        Ok(and_popcount(&self.data, &other.data))
    }

    /// Entrywise product `A ∘ B`.
    pub fn hadamard(&self, other: &BinaryMatrix) -> Result<BinaryMatrix> {
        self.check_same_shape(other)?;
        let mut out = self.clone();
        out.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(a, b)| *a &= b);
        Ok(out)
    }

    fn check_same_shape(&self, other: &BinaryMatrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(BmfError::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// Real-valued copy for the relaxed optimizer.
    pub fn to_dense(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.rows, self.cols), |(j, i)| {
            if self.get(j, i) {
                1.0
            } else {
                0.0
            }
        })
    }

    /// Writes the text format: a `rows cols` header, then one line of `0`/`1`
    /// characters per row.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{} {}", self.rows, self.cols)?;
        let mut line = Vec::with_capacity(self.cols + 1);
        for j in 0..self.rows {
            line.clear();
            line.extend((0..self.cols).map(|i| if self.get(j, i) { b'1' } else { b'0' }));
            line.push(b'\n');
            w.write_all(&line)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_text(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("text format is ASCII")
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or(BmfError::Parse {
            line: 1,
            msg: "missing header".into(),
        })??;
        let mut parts = header.split_whitespace();
        let mut dim = |what: &str| -> Result<usize> {
            parts
                .next()
                .ok_or_else(|| BmfError::Parse {
                    line: 1,
                    msg: format!("missing {what}"),
                })?
                .parse()
                .map_err(|e| BmfError::Parse {
                    line: 1,
                    msg: format!("bad {what}: {e}"),
                })
        };
        let rows = dim("row count")?;
        let cols = dim("column count")?;
        if parts.next().is_some() {
            return Err(BmfError::Parse {
                line: 1,
                msg: "trailing tokens in header".into(),
            });
        }
        let mut m = BinaryMatrix::zeros(rows, cols);
        for j in 0..rows {
            let line_no = j + 2;
            let line = lines.next().ok_or(BmfError::Parse {
                line: line_no,
                msg: "unexpected end of input".into(),
            })??;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.len() != cols {
                return Err(BmfError::Parse {
                    line: line_no,
                    msg: format!("expected {cols} characters, found {}", line.len()),
                });
            }
            for (i, c) in line.bytes().enumerate() {
                match c {
                    b'0' => {}
                    b'1' => m.set(j, i, true),
                    other => {
                        return Err(BmfError::Parse {
                            line: line_no,
                            msg: format!("invalid character {:?}", other as char),
                        })
                    }
                }
            }
        }
        for (k, rest) in lines.enumerate() {
            if !rest?.trim().is_empty() {
                return Err(BmfError::Parse {
                    line: rows + 2 + k,
                    msg: "trailing data".into(),
                });
            }
        }
        Ok(m)
    }

    pub fn from_text(s: &str) -> Result<Self> {
        Self::read_text(s.as_bytes())
    }
}

/// A rank-one component: `pattern` over the `n` columns, `usage` over the `m` rows.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tile {
    pub pattern: BitVector,
    pub usage: BitVector,
}

impl Tile {
    pub fn new(pattern: BitVector, usage: BitVector) -> Self {
        Self { pattern, usage }
    }

    pub fn empty(n: usize, m: usize) -> Self {
        Self {
            pattern: BitVector::zeros(n),
            usage: BitVector::zeros(m),
        }
    }

    pub fn from_indices(n: usize, pattern: &[usize], m: usize, usage: &[usize]) -> Result<Self> {
        Ok(Self {
            pattern: BitVector::from_indices(n, pattern)?,
            usage: BitVector::from_indices(m, usage)?,
        })
    }

    /// True when the tile covers no cell.
    pub fn is_empty(&self) -> bool {
        self.pattern.is_zero() || self.usage.is_zero()
    }

    /// `|x|·|y|`
    pub fn area(&self) -> usize {
        self.pattern.count_ones() * self.usage.count_ones()
    }

    /// Outer product `y xᵀ` as an `m × n` matrix.
    pub fn outer(&self) -> BinaryMatrix {
        let mut out = BinaryMatrix::zeros(self.usage.len(), self.pattern.len());
        for j in self.usage.ones_iter() {
            out.row_words_mut(j).copy_from_slice(self.pattern.words());
        }
        out
    }

    fn check_against(&self, m: &BinaryMatrix) -> Result<()> {
        if self.usage.len() != m.rows() || self.pattern.len() != m.cols() {
            return Err(BmfError::DimensionMismatch(format!(
                "tile is {}x{}, matrix is {}x{}",
                self.usage.len(),
                self.pattern.len(),
                m.rows(),
                m.cols()
            )));
        }
        Ok(())
    }
}

/// Binary factors `X ∈ {0,1}^{n×r}`, `Y ∈ {0,1}^{m×r}`, stored column-wise as tiles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorPairBinary {
    n: usize,
    m: usize,
    tiles: Vec<Tile>,
}

impl FactorPairBinary {
    pub fn empty(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            tiles: Vec::new(),
        }
    }

    pub fn new(n: usize, m: usize, tiles: Vec<Tile>) -> Result<Self> {
        for (s, t) in tiles.iter().enumerate() {
            if t.pattern.len() != n || t.usage.len() != m {
                return Err(BmfError::DimensionMismatch(format!(
                    "tile {s} has pattern length {} and usage length {}, expected {n} and {m}",
                    t.pattern.len(),
                    t.usage.len()
                )));
            }
        }
        Ok(Self { n, m, tiles })
    }

    /// Builds factors from the pattern matrix `x` (n×r) and usage matrix `y` (m×r).
    pub fn from_matrices(x: &BinaryMatrix, y: &BinaryMatrix) -> Result<Self> {
        if x.cols() != y.cols() {
            return Err(BmfError::DimensionMismatch(format!(
                "X has {} columns, Y has {}",
                x.cols(),
                y.cols()
            )));
        }
        let tiles = (0..x.cols())
            .map(|s| Tile::new(x.column(s), y.column(s)))
            .collect();
        Ok(Self {
            n: x.rows(),
            m: y.rows(),
            tiles,
        })
    }

    /// Number of data columns.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of data rows.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.tiles
    }

    pub fn tile(&self, s: usize) -> &Tile {
        &self.tiles[s]
    }

    pub fn tiles_mut(&mut self) -> &mut [Tile] {
        &mut self.tiles
    }

    pub fn push(&mut self, tile: Tile) -> Result<()> {
        if tile.pattern.len() != self.n || tile.usage.len() != self.m {
            return Err(BmfError::DimensionMismatch(
                "pushed tile has wrong lengths".into(),
            ));
        }
        self.tiles.push(tile);
        Ok(())
    }

    /// Column count `r` including empty columns.
    pub fn columns(&self) -> usize {
        self.tiles.len()
    }

    /// Number of tiles with nonzero pattern and nonzero usage.
    pub fn rank(&self) -> usize {
        self.tiles.iter().filter(|t| !t.is_empty()).count()
    }

    /// Drops empty tiles.
    pub fn compact(&self) -> Self {
        Self {
            n: self.n,
            m: self.m,
            tiles: self
                .tiles
                .iter()
                .filter(|t| !t.is_empty())
                .cloned()
                .collect(),
        }
    }

    pub fn x(&self) -> BinaryMatrix {
        let mut x = BinaryMatrix::zeros(self.n, self.tiles.len());
        for (s, t) in self.tiles.iter().enumerate() {
            for i in t.pattern.ones_iter() {
                x.set(i, s, true);
            }
        }
        x
    }

    pub fn y(&self) -> BinaryMatrix {
        let mut y = BinaryMatrix::zeros(self.m, self.tiles.len());
        for (s, t) in self.tiles.iter().enumerate() {
            for j in t.usage.ones_iter() {
                y.set(j, s, true);
            }
        }
        y
    }

    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            n: self.n,
            m: self.m,
            tiles: order.iter().map(|&s| self.tiles[s].clone()).collect(),
        }
    }
}

fn product_of<'a>(
    n: usize,
    m: usize,
    tiles: impl Iterator<Item = &'a Tile> + Clone,
) -> BinaryMatrix {
    let mut out = BinaryMatrix::zeros(m, n);
    for t in tiles {
        if t.pattern.is_zero() {
            continue;
        }
        for j in t.usage.ones_iter() {
            out.data[j * out.stride..(j + 1) * out.stride]
                .iter_mut()
                .zip(t.pattern.words())
                .for_each(|(o, p)| *o |= p);
        }
    }
    out
}

/// Boolean product `Y ⊙ Xᵀ`: cell `(j,i)` is the OR over tiles of `Y_{js} X_{is}`.
pub fn boolean_product(f: &FactorPairBinary) -> BinaryMatrix {
    product_of(f.n, f.m, f.tiles.iter())
}

/// Boolean product of every tile except `skip`.
pub fn boolean_product_excluding(f: &FactorPairBinary, skip: usize) -> BinaryMatrix {
    product_of(
        f.n,
        f.m,
        f.tiles
            .iter()
            .enumerate()
            .filter(|(s, _)| *s != skip)
            .map(|(_, t)| t),
    )
}

fn check_factor_shape(d: &BinaryMatrix, f: &FactorPairBinary) -> Result<()> {
    if d.rows() != f.m || d.cols() != f.n {
        return Err(BmfError::DimensionMismatch(format!(
            "data is {}x{}, factors produce {}x{}",
            d.rows(),
            d.cols(),
            f.m,
            f.n
        )));
    }
    Ok(())
}

/// `|D − Y⊙Xᵀ|`, the number of cells where data and Boolean product disagree.
pub fn residual_l1(d: &BinaryMatrix, f: &FactorPairBinary) -> Result<usize> {
    check_factor_shape(d, f)?;
    d.xor_count(&boolean_product(f))
}

/// `yᵀ M x`
pub fn tile_overlap(t: &Tile, m: &BinaryMatrix) -> Result<usize> {
    t.check_against(m)?;
    Ok(t.usage
        .ones_iter()
        .map(|j| and_popcount(m.row_words(j), t.pattern.words()))
        .sum())
}

/// `yᵀ M x / (|x|·|y|)`; a tile is δ-dense in `M` iff this is at least δ.
pub fn tile_density(t: &Tile, m: &BinaryMatrix) -> Result<f64> {
    t.check_against(m)?;
    let area = t.area();
    if area == 0 {
        return Err(BmfError::EmptyTile);
    }
    Ok(tile_overlap(t, m)? as f64 / area as f64)
}

/// `η(B) = max_{i≠k} ⟨B_{·i}, B_{·k}⟩` for a binary matrix.
pub fn eta(b: &BinaryMatrix) -> Result<usize> {
    if b.cols() < 2 {
        return Err(BmfError::TooFewColumns(b.cols()));
    }
    let t = b.transposed();
    let mut best = 0;
    for i in 0..t.rows() {
        let ci = t.row_words(i);
        for k in (i + 1)..t.rows() {
            best = best.max(and_popcount(ci, t.row_words(k)));
        }
    }
    Ok(best)
}

/// η for a real matrix.
pub fn eta_real(b: &Array2<f64>) -> Result<f64> {
    let cols = b.ncols();
    if cols < 2 {
        return Err(BmfError::TooFewColumns(cols));
    }
    let mut best = f64::NEG_INFINITY;
    for i in 0..cols {
        for k in (i + 1)..cols {
            best = best.max(b.column(i).dot(&b.column(k)));
        }
    }
    Ok(best)
}

/// η of `y xᵀ ∘ D`, i.e. the largest `D_{·i}ᵀ diag(y) D_{·k}` over distinct
/// columns `i, k` of the pattern. With `transposed` the roles swap: rows of
/// the usage are paired and the sum runs over the pattern's columns.
pub fn tile_eta(t: &Tile, d: &BinaryMatrix, transposed: bool) -> Result<usize> {
    t.check_against(d)?;
    let (pair_side, mask, lines, side) = if transposed {
        (&t.usage, &t.pattern, d, "usage")
    } else {
        (&t.pattern, &t.usage, d.transposed(), "pattern")
    };
    let ones = pair_side.count_ones();
    if ones < 2 {
        return Err(BmfError::CoherenceInapplicable { side, ones });
    }
    Ok(masked_pair_max(pair_side, mask, lines, None))
}

/// Largest masked inner product over pairs of `lines` selected by `pair_side`.
/// With `stop_at`, returns as soon as a pair reaches that value.
pub(crate) fn masked_pair_max(
    pair_side: &BitVector,
    mask: &BitVector,
    lines: &BinaryMatrix,
    stop_at: Option<usize>,
) -> usize {
    let masked: Vec<Vec<u64>> = pair_side
        .ones_iter()
        .map(|i| {
            lines
                .row_words(i)
                .iter()
                .zip(mask.words())
                .map(|(a, b)| a & b)
                .collect()
        })
        .collect();
    let cap = mask.count_ones();
    let mut best = 0;
    for a in 0..masked.len() {
        for b in (a + 1)..masked.len() {
            let v = and_popcount(&masked[a], &masked[b]);
            if v > best {
                best = v;
                if best == cap || stop_at.is_some_and(|s| best >= s) {
                    return best;
                }
            }
        }
    }
    best
}
