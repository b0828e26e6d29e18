//! Tail bounds on the probability that a tile is explained by Bernoulli noise.
//!
//! Everything is computed in log space. Binomial coefficients such as
//! `C(1000, 128)` overflow `f64`, and acceptance becomes a plain comparison
//! against `ln q`.

use serde::{Deserialize, Serialize};

use crate::binmat::{
    boolean_product_excluding, masked_pair_max, tile_density, BinaryMatrix, FactorPairBinary, Tile,
};
use crate::error::{invalid, BmfError, Result};

/// Positive-noise model: `p_hat` estimates the Bernoulli parameter of the
/// additive noise, `t` is the overlap tolerance of the null hypothesis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub p_hat: f64,
    #[serde(default)]
    pub t: f64,
}

impl NoiseModel {
    pub fn new(p_hat: f64) -> Result<Self> {
        Self::with_tolerance(p_hat, 0.0)
    }

    pub fn with_tolerance(p_hat: f64, t: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p_hat) {
            return Err(invalid(format!("noise estimate {p_hat} outside [0, 1)")));
        }
        if !(0.0..=1.0).contains(&t) {
            return Err(invalid(format!("overlap tolerance {t} outside [0, 1]")));
        }
        Ok(Self { p_hat, t })
    }
}

/// How many column pairs the union bound of the coherence test runs over.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairCount {
    /// No union factor; only valid for a pair fixed in advance.
    None,
    /// `n(n−1)/2` unordered pairs.
    #[default]
    Unordered,
    /// `n(n−1)` ordered pairs.
    Ordered,
}

impl PairCount {
    fn log_factor(self, n: u64) -> f64 {
        let pairs = n as f64 * (n as f64 - 1.0);
        match self {
            PairCount::None => 0.0,
            PairCount::Unordered => (pairs / 2.0).ln(),
            PairCount::Ordered => pairs.ln(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateMethod {
    Density,
    Coherence,
    CoherenceTransposed,
}

/// Sizes and the test statistic (δ_s for density, μ_s for coherence).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileStats {
    pub pattern_size: usize,
    pub usage_size: usize,
    pub statistic: f64,
}

/// Upper bound on `P(Z_s = 1)` for one tile, in log space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCertificate {
    pub tile_index: usize,
    pub method: CertificateMethod,
    /// Natural log of the probability bound, clamped at 0.
    pub log_prob_bound: f64,
    pub accepted: bool,
    /// False when the test could not be run (coherence on fewer than two ones).
    pub applicable: bool,
    pub stats: TileStats,
}

impl BoundCertificate {
    pub fn prob_bound(&self) -> f64 {
        self.log_prob_bound.exp()
    }

    fn decide(
        tile_index: usize,
        method: CertificateMethod,
        log_prob_bound: f64,
        q: f64,
        stats: TileStats,
    ) -> Self {
        let log_prob_bound = log_prob_bound.min(0.0);
        Self {
            tile_index,
            method,
            log_prob_bound,
            accepted: log_prob_bound <= q.ln(),
            applicable: true,
            stats,
        }
    }
}

fn check_level(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("control level {q} outside (0, 1)")))
    }
}

/// `ln(x!) − (x ln x − x + ½ ln 2πx)`, the Stirling remainder.
fn stirling_remainder(x: u64) -> f64 {
    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
    if x <= 15 {
        let xf = x as f64;
        let ln_fact: f64 = (2..=x).map(|i| (i as f64).ln()).sum();
        return ln_fact - (xf * xf.ln() - xf + HALF_LN_2PI + 0.5 * xf.ln());
    }
    let x = x as f64;
    let x2 = x * x;
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    (S0 - (S1 - (S2 - (S3 - S4 / x2) / x2) / x2) / x2) / x
}

/// `ln C(n, k)`.
///
/// Small `min(k, n−k)` sums the product form directly. Otherwise the
/// log-gamma terms are expanded around Stirling's formula so the large
/// `n ln n` parts cancel analytically instead of numerically.
pub fn log_binom(n: u64, k: u64) -> Result<f64> {
    if k > n {
        return Err(invalid(format!("log_binom: k = {k} exceeds n = {n}")));
    }
    let k = k.min(n - k);
    if k == 0 {
        return Ok(0.0);
    }
    if k <= 64 {
        let base = (n - k) as f64;
        return Ok((1..=k).map(|i| ((base + i as f64) / i as f64).ln()).sum());
    }
    let (nf, kf, rf) = (n as f64, k as f64, (n - k) as f64);
    let main = kf * (nf / kf).ln() - rf * (-kf / nf).ln_1p();
    let half_log = 0.5 * (nf / (2.0 * std::f64::consts::PI * kf * rf)).ln();
    Ok(main + half_log + stirling_remainder(n) - stirling_remainder(k) - stirling_remainder(n - k))
}

fn density_log_raw(n: u64, m: u64, a: u64, b: u64, gap: f64) -> Result<f64> {
    Ok(log_binom(n, a)? + log_binom(m, b)? - 2.0 * a as f64 * b as f64 * gap * gap)
}

/// Log of `C(n,a) C(m,b) exp(−2ab(δ−p)²)`, clamped at 0: the probability that
/// an `m × n` Bernoulli(p) matrix holds a δ-dense tile of size at least `(a, b)`.
pub fn density_tail_log(n: u64, m: u64, a: u64, b: u64, delta: f64, p: f64) -> Result<f64> {
    if a < 1 || a > n || b < 1 || b > m {
        return Err(invalid(format!(
            "tile size ({a}, {b}) outside [1, {n}] x [1, {m}]"
        )));
    }
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&delta) {
        return Err(invalid("delta and p must lie in [0, 1]"));
    }
    if delta < p {
        return Err(invalid(format!(
            "delta {delta} below p {p}: the bound is vacuous"
        )));
    }
    Ok(density_log_raw(n, m, a, b, delta - p)?.min(0.0))
}

/// Log of `pairs · exp(−(3/2) m (μ−p²)² / (2p²+μ))`, clamped at 0: the
/// probability that two distinct columns of an `m × n` Bernoulli(p) matrix
/// have inner product at least `mμ`.
pub fn coherence_tail_log(n: u64, m: u64, mu: f64, p: f64, pairs: PairCount) -> Result<f64> {
    if n < 2 {
        return Err(invalid(format!("coherence bound needs n >= 2, got {n}")));
    }
    let p2 = p * p;
    if mu.is_nan() || mu <= p2 {
        return Err(invalid(format!("mu = {mu} must exceed p^2 = {p2}")));
    }
    let exponent = 1.5 * m as f64 * (mu - p2) * (mu - p2) / (2.0 * p2 + mu);
    Ok((pairs.log_factor(n) - exponent).min(0.0))
}

/// Density certificate: `ρ = max(δ_s − t − p̂, 0)` and the density bound at the
/// tile's own size.
pub fn certify_tile_density(
    d: &BinaryMatrix,
    tile: &Tile,
    nm: &NoiseModel,
    q: f64,
) -> Result<BoundCertificate> {
    certify_density_indexed(d, tile, 0, nm, q)
}

pub(crate) fn certify_density_indexed(
    d: &BinaryMatrix,
    tile: &Tile,
    index: usize,
    nm: &NoiseModel,
    q: f64,
) -> Result<BoundCertificate> {
    check_level(q)?;
    let density = tile_density(tile, d)?;
    let (a, b) = (tile.pattern.count_ones(), tile.usage.count_ones());
    let stats = TileStats {
        pattern_size: a,
        usage_size: b,
        statistic: density,
    };
    let rho = (density - nm.t - nm.p_hat).max(0.0);
    let log = if rho == 0.0 {
        0.0
    } else {
        density_log_raw(d.cols() as u64, d.rows() as u64, a as u64, b as u64, rho)?
    };
    Ok(BoundCertificate::decide(
        index,
        CertificateMethod::Density,
        log,
        q,
        stats,
    ))
}

/// Coherence certificate from `μ_s = η(y xᵀ ∘ D) / m` (or `/ n` when
/// `transposed`). A pairing side with fewer than two ones yields an
/// inapplicable, rejected certificate rather than an error.
pub fn certify_tile_coherence(
    d: &BinaryMatrix,
    tile: &Tile,
    nm: &NoiseModel,
    q: f64,
    transposed: bool,
    pairs: PairCount,
) -> Result<BoundCertificate> {
    certify_coherence_indexed(d, tile, 0, nm, q, transposed, pairs)
}

/// Smallest masked inner product that a coherence certificate accepts.
fn coherence_cutoff(
    paired: u64,
    summed: u64,
    nm: &NoiseModel,
    q: f64,
    pairs: PairCount,
) -> Option<usize> {
    // Bound is monotone in the inner product, so search the integer range.
    let ok = |v: usize| -> bool {
        let mu = (v as f64 / summed as f64 - nm.t / summed as f64).max(nm.p_hat * nm.p_hat);
        mu > nm.p_hat * nm.p_hat
            && coherence_tail_log(paired, summed, mu, nm.p_hat, pairs).is_ok_and(|l| l <= q.ln())
    };
    let hi = summed as usize;
    if !ok(hi) {
        return None;
    }
    let (mut lo, mut hi) = (0usize, hi);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Some(lo)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn certify_coherence_indexed(
    d: &BinaryMatrix,
    tile: &Tile,
    index: usize,
    nm: &NoiseModel,
    q: f64,
    transposed: bool,
    pairs: PairCount,
) -> Result<BoundCertificate> {
    certify_coherence_inner(d, tile, index, nm, q, transposed, pairs, false)
}

/// With `decide_only`, the pair scan stops once the acceptance cutoff is
/// reached; the verdict is exact but the reported statistic may be lower
/// than the true maximum.
#[allow(clippy::too_many_arguments)]
pub(crate) fn certify_coherence_inner(
    d: &BinaryMatrix,
    tile: &Tile,
    index: usize,
    nm: &NoiseModel,
    q: f64,
    transposed: bool,
    pairs: PairCount,
    decide_only: bool,
) -> Result<BoundCertificate> {
    check_level(q)?;
    if tile.usage.len() != d.rows() || tile.pattern.len() != d.cols() {
        return Err(BmfError::DimensionMismatch(
            "tile does not match data".into(),
        ));
    }
    let method = if transposed {
        CertificateMethod::CoherenceTransposed
    } else {
        CertificateMethod::Coherence
    };
    let (a, b) = (tile.pattern.count_ones(), tile.usage.count_ones());
    // paired: number of lines that may be paired; summed: length of each line
    let (pair_side, mask, lines, paired, summed) = if transposed {
        (
            &tile.usage,
            &tile.pattern,
            d,
            d.rows() as u64,
            d.cols() as u64,
        )
    } else {
        (
            &tile.pattern,
            &tile.usage,
            d.transposed(),
            d.cols() as u64,
            d.rows() as u64,
        )
    };
    if pair_side.count_ones() < 2 {
        return Ok(BoundCertificate {
            tile_index: index,
            method,
            log_prob_bound: 0.0,
            accepted: false,
            applicable: false,
            stats: TileStats {
                pattern_size: a,
                usage_size: b,
                statistic: 0.0,
            },
        });
    }
    let stop_at = if decide_only {
        match coherence_cutoff(paired, summed, nm, q, pairs) {
            Some(c) => Some(c),
            None => {
                // no inner product can be certified at this size
                return Ok(BoundCertificate::decide(
                    index,
                    method,
                    0.0,
                    q,
                    TileStats {
                        pattern_size: a,
                        usage_size: b,
                        statistic: f64::NAN,
                    },
                ));
            }
        }
    } else {
        None
    };
    let eta = masked_pair_max(pair_side, mask, lines, stop_at);
    let mu_s = eta as f64 / summed as f64;
    let stats = TileStats {
        pattern_size: a,
        usage_size: b,
        statistic: mu_s,
    };
    let p2 = nm.p_hat * nm.p_hat;
    let mu = (mu_s - nm.t / summed as f64).max(p2);
    let log = if mu <= p2 {
        0.0
    } else {
        coherence_tail_log(paired, summed, mu, nm.p_hat, pairs)?
    };
    Ok(BoundCertificate::decide(index, method, log, q, stats))
}

/// Density of tile `s` on the cells no other tile covers:
/// `yᵀ(D ∘ M̄)x / yᵀ M̄ x`.
pub fn minimizer_density_floor(d: &BinaryMatrix, f: &FactorPairBinary, s: usize) -> Result<f64> {
    if s >= f.columns() {
        return Err(invalid(format!("tile index {s} out of range")));
    }
    if d.rows() != f.m() || d.cols() != f.n() {
        return Err(BmfError::DimensionMismatch(
            "data and factors differ in shape".into(),
        ));
    }
    let tile = f.tile(s);
    if tile.is_empty() {
        return Err(BmfError::EmptyTile);
    }
    let others = boolean_product_excluding(f, s);
    let (mut area, mut ones) = (0usize, 0usize);
    for j in tile.usage.ones_iter() {
        for ((&x, &mw), &dw) in tile
            .pattern
            .words()
            .iter()
            .zip(others.row_words(j))
            .zip(d.row_words(j))
        {
            let exclusive = x & !mw;
            area += exclusive.count_ones() as usize;
            ones += (exclusive & dw).count_ones() as usize;
        }
    }
    if area == 0 {
        return Err(BmfError::ZeroExclusiveArea);
    }
    Ok(ones as f64 / area as f64)
}

/// `δ·|y|·(δ|x| − 1)/(|x| − 1)`: `η(D)` of a data matrix exceeds this for
/// every δ-dense tile of a residual minimizer.
pub fn minimizer_coherence_floor(delta: f64, x_size: usize, y_size: usize) -> Result<f64> {
    if x_size < 2 {
        return Err(invalid(format!("pattern size {x_size} < 2")));
    }
    let a = x_size as f64;
    Ok(delta * y_size as f64 * (delta * a - 1.0) / (a - 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMethod {
    Density,
    Coherence,
}

/// Minimum usage size for a given pattern size such that the false-discovery
/// bound of a δ-dense tile drops to `q`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub a: usize,
    pub a_rel: f64,
    pub b: usize,
    /// `b/m`, or 1 when infeasible.
    pub b_rel: f64,
    pub feasible: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveParams {
    pub n: usize,
    pub m: usize,
    pub p: f64,
    pub q: f64,
    pub delta: f64,
    /// Pair count used by the coherence curve.
    pub pairs: PairCount,
}

/// Rounds relative pattern sizes to integer sizes, at least 1.
pub fn pattern_sizes_from_rel(n: usize, rels: &[f64]) -> Vec<usize> {
    rels.iter()
        .map(|r| ((r * n as f64).round() as usize).clamp(1, n))
        .collect()
}

/// For every `a` in `a_grid`, the smallest integer `b` whose bound is ≤ `q`.
///
/// The density log-bound is concave in `b`, and the coherence bound is
/// monotone, so once the bound drops below `q` it stays there and a binary
/// search applies.
pub fn min_usage_curve(
    params: &CurveParams,
    method: CurveMethod,
    a_grid: &[usize],
) -> Result<Vec<CurvePoint>> {
    let CurveParams {
        n,
        m,
        p,
        q,
        delta,
        pairs,
    } = *params;
    check_level(q)?;
    if n < 1 || m < 1 {
        return Err(invalid("curve needs n, m >= 1"));
    }
    if !(0.0..=1.0).contains(&p) || !(0.0..=1.0).contains(&delta) {
        return Err(invalid("delta and p must lie in [0, 1]"));
    }
    if method == CurveMethod::Density && delta <= p {
        return Err(invalid(format!(
            "density curve needs delta > p, got {delta} <= {p}"
        )));
    }
    let ln_q = q.ln();
    a_grid
        .iter()
        .map(|&a| {
            let min_a = if method == CurveMethod::Coherence {
                2
            } else {
                1
            };
            if a < min_a || a > n {
                return Err(invalid(format!("pattern size {a} outside [{min_a}, {n}]")));
            }
            let passes = |b: usize| -> Result<bool> {
                match method {
                    CurveMethod::Density => Ok(density_tail_log(
                        n as u64, m as u64, a as u64, b as u64, delta, p,
                    )? <= ln_q),
                    CurveMethod::Coherence => {
                        let mu = minimizer_coherence_floor(delta, a, b)? / m as f64;
                        if mu <= p * p {
                            return Ok(false);
                        }
                        Ok(coherence_tail_log(n as u64, m as u64, mu, p, pairs)? <= ln_q)
                    }
                }
            };
            let b = if passes(1)? {
                Some(1)
            } else if !passes(m)? {
                None
            } else {
                let (mut lo, mut hi) = (1usize, m);
                while hi - lo > 1 {
                    let mid = lo + (hi - lo) / 2;
                    if passes(mid)? {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                Some(hi)
            };
            let a_rel = a as f64 / n as f64;
            Ok(match b {
                Some(b) => CurvePoint {
                    a,
                    a_rel,
                    b,
                    b_rel: b as f64 / m as f64,
                    feasible: true,
                },
                None => CurvePoint {
                    a,
                    a_rel,
                    b: m,
                    b_rel: 1.0,
                    feasible: false,
                },
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::binmat::BitVector;
    use proptest::prelude::*;

    fn block_data(size: usize, block: usize) -> (BinaryMatrix, Tile) {
        let d = BinaryMatrix::from_fn(size, size, |j, i| j < block && i < block);
        let idx: Vec<usize> = (0..block).collect();
        (d, Tile::from_indices(size, &idx, size, &idx).unwrap())
    }

    #[test]
    fn log_binom_small_values() {
        assert_eq!(log_binom(17, 0).unwrap(), 0.0);
        assert_eq!(log_binom(17, 17).unwrap(), 0.0);
        assert!((log_binom(5, 2).unwrap() - 10f64.ln()).abs() < 1e-14);
        assert!(log_binom(3, 4).is_err());
        // the two evaluation branches agree at the switch-over
        for n in [130u64, 500, 5000] {
            let direct: f64 = (1..=65u64)
                .map(|i| ((n - 65 + i) as f64 / i as f64).ln())
                .sum();
            assert!((log_binom(n, 65).unwrap() - direct).abs() / direct < 1e-13);
        }
    }

    #[test]
    fn density_tail_examples() {
        assert_eq!(density_tail_log(10, 10, 3, 3, 0.2, 0.2).unwrap(), 0.0);
        assert!((density_tail_log(1, 1, 1, 1, 1.0, 0.0).unwrap() + 2.0).abs() < 1e-15);
        let v = density_tail_log(1000, 800, 10, 129, 0.5, 0.1).unwrap();
        assert!(v <= 0.01f64.ln(), "{v}");
        assert!(density_tail_log(10, 10, 3, 3, 0.1, 0.2).is_err());
        assert!(density_tail_log(10, 10, 0, 3, 0.5, 0.2).is_err());
        assert!(density_tail_log(10, 10, 3, 11, 0.5, 0.2).is_err());
    }

    #[test]
    fn coherence_tail_examples() {
        let p = 0.1;
        assert!(
            coherence_tail_log(50, 100, p * p + 1e-12, p, PairCount::None)
                .unwrap()
                .abs()
                < 1e-15
        );
        let v = coherence_tail_log(2, 100, p * p + 1e-9, p, PairCount::Unordered).unwrap();
        assert!(v.abs() < 1e-12);
        let v = coherence_tail_log(1000, 800, 0.0423, p, PairCount::Unordered).unwrap();
        let exponent = 1.5 * 800.0 * (0.0423f64 - 0.01).powi(2) / (0.02 + 0.0423);
        assert!((exponent - 20.1).abs() < 0.05, "{exponent}");
        assert!((v - (499_500f64.ln() - exponent)).abs() < 1e-12);
        assert!(v <= 0.01f64.ln());
        assert!(coherence_tail_log(10, 10, 0.01, 0.1, PairCount::Unordered).is_err());
        assert!(coherence_tail_log(1, 10, 0.5, 0.1, PairCount::Unordered).is_err());
        let unordered = coherence_tail_log(100, 10, 0.05, p, PairCount::Unordered).unwrap();
        let ordered = coherence_tail_log(100, 10, 0.05, p, PairCount::Ordered).unwrap();
        assert!(ordered >= unordered);
    }

    #[test]
    fn density_certificates() {
        let nm = NoiseModel::new(0.1).unwrap();
        // density at or below the noise level is vacuous
        let d = BinaryMatrix::from_fn(10, 10, |j, i| (j + i) % 10 == 0);
        let t = Tile::new(BitVector::ones(10), BitVector::ones(10));
        let c = certify_tile_density(&d, &t, &nm, 0.01).unwrap();
        assert_eq!(c.log_prob_bound, 0.0);
        assert!(!c.accepted);

        let d = BinaryMatrix::ones(100, 100);
        let idx: Vec<usize> = (0..20).collect();
        let t = Tile::from_indices(100, &idx, 100, &idx).unwrap();
        let c = certify_tile_density(&d, &t, &nm, 0.01).unwrap();
        let expected = density_tail_log(100, 100, 20, 20, 1.0, 0.1).unwrap();
        assert!((c.log_prob_bound - expected).abs() < 1e-12);
        assert!(c.accepted);
        assert_eq!(c.stats.statistic, 1.0);

        let d = BinaryMatrix::ones(1, 1);
        let t = Tile::new(BitVector::ones(1), BitVector::ones(1));
        let c = certify_tile_density(&d, &t, &nm, 0.01).unwrap();
        assert!((c.log_prob_bound + 1.62).abs() < 1e-12);
        assert!(!c.accepted);

        assert!(certify_tile_density(&d, &Tile::empty(1, 1), &nm, 0.01).is_err());
    }

    #[test]
    fn coherence_certificates() {
        let nm = NoiseModel::new(0.1).unwrap();
        let (d, t) = block_data(100, 20);
        let c = certify_tile_coherence(&d, &t, &nm, 0.01, false, PairCount::Unordered).unwrap();
        assert!((c.stats.statistic - 0.2).abs() < 1e-15);
        let expected = coherence_tail_log(100, 100, 0.2, 0.1, PairCount::Unordered).unwrap();
        assert!((c.log_prob_bound - expected).abs() < 1e-12);
        assert!(c.accepted);

        let single = Tile::from_indices(100, &[3], 100, &[0, 1, 2]).unwrap();
        let c =
            certify_tile_coherence(&d, &single, &nm, 0.01, false, PairCount::Unordered).unwrap();
        assert!(!c.applicable && !c.accepted);

        // μ_s ≤ p̂²: columns never co-occur
        let d = BinaryMatrix::identity(30);
        let t = Tile::new(BitVector::ones(30), BitVector::ones(30));
        let c = certify_tile_coherence(&d, &t, &nm, 0.01, false, PairCount::Unordered).unwrap();
        assert_eq!(c.log_prob_bound, 0.0);
        assert!(!c.accepted && c.applicable);
    }

    #[test]
    fn decide_only_verdict_matches_full_scan() {
        use rand::{Rng, SeedableRng};
        let nm = NoiseModel::new(0.1).unwrap();
        for seed in 0..30 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let block = rng.random_range(2..30);
            let d = BinaryMatrix::from_fn(60, 50, |j, i| {
                (j < block && i < block && rng.random_bool(0.9)) || rng.random_bool(0.1)
            });
            let t = Tile::new(
                BitVector::from_bools(
                    &(0..50)
                        .map(|i| i < block || rng.random_bool(0.05))
                        .collect::<Vec<_>>(),
                ),
                BitVector::from_bools(&(0..60).map(|j| j < block).collect::<Vec<_>>()),
            );
            for transposed in [false, true] {
                let full = certify_coherence_inner(
                    &d,
                    &t,
                    0,
                    &nm,
                    0.01,
                    transposed,
                    PairCount::Unordered,
                    false,
                )
                .unwrap();
                let fast = certify_coherence_inner(
                    &d,
                    &t,
                    0,
                    &nm,
                    0.01,
                    transposed,
                    PairCount::Unordered,
                    true,
                )
                .unwrap();
                assert_eq!(
                    full.accepted, fast.accepted,
                    "seed {seed} transposed {transposed}"
                );
            }
        }
    }

    #[test]
    fn density_floor_cases() {
        let d = BinaryMatrix::from_rows(&[[1, 1, 0], [1, 0, 0], [0, 0, 1]]).unwrap();
        let t0 = Tile::from_indices(3, &[0, 1], 3, &[0, 1]).unwrap();
        let single = FactorPairBinary::new(3, 3, vec![t0.clone()]).unwrap();
        assert_eq!(
            minimizer_density_floor(&d, &single, 0).unwrap(),
            tile_density(&t0, &d).unwrap()
        );
        let shadow = FactorPairBinary::new(
            3,
            3,
            vec![t0.clone(), Tile::from_indices(3, &[0], 3, &[0]).unwrap()],
        )
        .unwrap();
        assert!(matches!(
            minimizer_density_floor(&d, &shadow, 1),
            Err(BmfError::ZeroExclusiveArea)
        ));
        // tile 0 loses cell (0,0) to tile 1: remaining cells (0,1),(1,0),(1,1) hold 2 ones
        assert!((minimizer_density_floor(&d, &shadow, 0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn coherence_floor_cases() {
        assert_eq!(minimizer_coherence_floor(1.0, 2, 7).unwrap(), 7.0);
        assert!(minimizer_coherence_floor(0.25, 4, 10).unwrap() <= 0.0);
        let v = minimizer_coherence_floor(0.5, 50, 136).unwrap();
        assert!((v - 0.5 * 136.0 * 24.0 / 49.0).abs() < 1e-12);
        assert!((v - 33.3).abs() < 0.05);
        assert!(minimizer_coherence_floor(0.5, 1, 10).is_err());
    }

    fn linear_scan(params: &CurveParams, method: CurveMethod, a: usize) -> Option<usize> {
        (1..=params.m).find(|&b| match method {
            CurveMethod::Density => {
                density_tail_log(
                    params.n as u64,
                    params.m as u64,
                    a as u64,
                    b as u64,
                    params.delta,
                    params.p,
                )
                .unwrap()
                    <= params.q.ln()
            }
            CurveMethod::Coherence => {
                let mu = params.delta * b as f64 * (params.delta * a as f64 - 1.0)
                    / (a as f64 - 1.0)
                    / params.m as f64;
                mu > params.p * params.p
                    && coherence_tail_log(
                        params.n as u64,
                        params.m as u64,
                        mu,
                        params.p,
                        params.pairs,
                    )
                    .unwrap()
                        <= params.q.ln()
            }
        })
    }

    #[test]
    fn curve_matches_linear_scan() {
        let params = CurveParams {
            n: 300,
            m: 200,
            p: 0.1,
            q: 0.01,
            delta: 0.5,
            pairs: PairCount::Unordered,
        };
        let grid: Vec<usize> = (2..=60).collect();
        for method in [CurveMethod::Density, CurveMethod::Coherence] {
            let pts = min_usage_curve(&params, method, &grid).unwrap();
            for (pt, &a) in pts.iter().zip(&grid) {
                match linear_scan(&params, method, a) {
                    Some(b) => assert_eq!((pt.b, pt.feasible), (b, true), "a = {a}"),
                    None => assert!(!pt.feasible && pt.b_rel == 1.0),
                }
            }
            for w in pts.windows(2) {
                assert!(w[1].b_rel <= w[0].b_rel);
            }
        }
        assert!(min_usage_curve(
            &CurveParams {
                delta: 0.1,
                ..params
            },
            CurveMethod::Density,
            &[5]
        )
        .is_err());
        assert!(min_usage_curve(&params, CurveMethod::Coherence, &[1]).is_err());
    }

    #[test]
    fn curve_reference_points() {
        let params = CurveParams {
            n: 1000,
            m: 800,
            p: 0.1,
            q: 0.01,
            delta: 0.5,
            pairs: PairCount::Unordered,
        };
        let d = min_usage_curve(&params, CurveMethod::Density, &[10]).unwrap()[0];
        assert!((d.b_rel - 0.160).abs() <= 0.005, "{}", d.b_rel);
        let right = CurveParams {
            n: 1600,
            m: 500,
            ..params
        };
        let d = min_usage_curve(
            &right,
            CurveMethod::Density,
            &pattern_sizes_from_rel(1600, &[0.00925]),
        )
        .unwrap()[0];
        assert!((d.b_rel - 0.109).abs() <= 0.005, "{}", d.b_rel);
    }

    proptest! {
        #[test]
        fn density_bound_monotone(n in 20u64..400, m in 20u64..400, a in 1u64..20, b in 1u64..20, gap in 0.0f64..0.8) {
            let p = 0.1;
            let delta = p + gap;
            let base = density_tail_log(n, m, a, b, delta, p).unwrap();
            prop_assert!(density_tail_log(n, m, a, b, (delta + 0.05).min(1.0), p).unwrap() <= base + 1e-12);
            prop_assert!(density_tail_log(n, m, a + 1, b, delta, p).unwrap() <= base + 1e-12);
            prop_assert!(density_tail_log(n, m, a, b + 1, delta, p).unwrap() <= base + 1e-12);
        }

        #[test]
        fn coherence_exponent_monotone(m in 2u64..2000, p in 0.01f64..0.5, extra in 0.001f64..0.5) {
            let mu = p * p + extra;
            let e = |m: u64, mu: f64| coherence_tail_log(2, m, mu, p, PairCount::None).unwrap();
            prop_assert!(e(m + 1, mu) <= e(m, mu) + 1e-12);
            prop_assert!(e(m, mu + 0.01) <= e(m, mu) + 1e-12);
        }

        #[test]
        fn certificates_monotone_in_level(seed in 0u64..500, q in 0.001f64..0.5) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let d = BinaryMatrix::from_fn(40, 30, |_, _| rng.random_bool(0.4));
            let t = Tile::new(
                BitVector::from_bools(&(0..30).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>()),
                BitVector::from_bools(&(0..40).map(|_| rng.random_bool(0.5)).collect::<Vec<_>>()),
            );
            prop_assume!(!t.is_empty());
            let nm = NoiseModel::new(0.1).unwrap();
            let c = certify_tile_density(&d, &t, &nm, q).unwrap();
            let looser = certify_tile_density(&d, &t, &nm, (q * 1.5).min(0.99)).unwrap();
            prop_assert!(!c.accepted || looser.accepted);
            let c = certify_tile_coherence(&d, &t, &nm, q, false, PairCount::Unordered).unwrap();
            let looser = certify_tile_coherence(&d, &t, &nm, (q * 1.5).min(0.99), false, PairCount::Unordered).unwrap();
            prop_assert!(!c.accepted || looser.accepted);
        }
    }
}
