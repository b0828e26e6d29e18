//! Comparing computed factorizations against planted ones, and exhaustive
//! residual minimizers for small matrices.

use serde::{Deserialize, Serialize};

use crate::binmat::{
    boolean_product, residual_l1, BinaryMatrix, BitVector, FactorPairBinary, Tile,
};
use crate::error::{BmfError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FMeasureMode {
    /// Precision and recall over the 1-cells of the two Boolean products.
    #[default]
    Cell,
    /// Greedy one-to-one tile matching, micro-averaged over matched cells.
    TileMatched,
}

fn check_dims(a: &FactorPairBinary, b: &FactorPairBinary) -> Result<()> {
    if a.n() != b.n() || a.m() != b.m() {
        return Err(BmfError::DimensionMismatch(format!(
            "computed factors are {}x{}, planted {}x{}",
            a.m(),
            a.n(),
            b.m(),
            b.n()
        )));
    }
    Ok(())
}

fn harmonic(tp: f64, predicted: f64, actual: f64) -> f64 {
    match (predicted == 0.0, actual == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => {
            let precision = tp / predicted;
            let recall = tp / actual;
            if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            }
        }
    }
}

fn tile_cell_overlap(a: &Tile, b: &Tile) -> usize {
    a.pattern.and_count(&b.pattern) * a.usage.and_count(&b.usage)
}

pub fn f_measure(
    computed: &FactorPairBinary,
    planted: &FactorPairBinary,
    mode: FMeasureMode,
) -> Result<f64> {
    check_dims(computed, planted)?;
    match mode {
        FMeasureMode::Cell => {
            let c = boolean_product(computed);
            let p = boolean_product(planted);
            let tp = c.and_count(&p)?;
            Ok(harmonic(
                tp as f64,
                c.count_ones() as f64,
                p.count_ones() as f64,
            ))
        }
        FMeasureMode::TileMatched => {
            let comp: Vec<&Tile> = computed.tiles().iter().filter(|t| !t.is_empty()).collect();
            let plan: Vec<&Tile> = planted.tiles().iter().filter(|t| !t.is_empty()).collect();
            let mut candidates = Vec::new();
            for (a, ct) in comp.iter().enumerate() {
                for (b, pt) in plan.iter().enumerate() {
                    let overlap = tile_cell_overlap(ct, pt);
                    if overlap > 0 {
                        let f = 2.0 * overlap as f64 / (ct.area() + pt.area()) as f64;
                        candidates.push((f, a, b, overlap));
                    }
                }
            }
            // descending F, ties by computed then planted index
            candidates.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
            let mut used_c = vec![false; comp.len()];
            let mut used_p = vec![false; plan.len()];
            let mut tp = 0usize;
            for (_, a, b, overlap) in candidates {
                if !used_c[a] && !used_p[b] {
                    used_c[a] = true;
                    used_p[b] = true;
                    tp += overlap;
                }
            }
            let predicted: usize = comp.iter().map(|t| t.area()).sum();
            let actual: usize = plan.iter().map(|t| t.area()).sum();
            Ok(harmonic(tp as f64, predicted as f64, actual as f64))
        }
    }
}

/// Fraction of non-empty computed tiles whose overlap with the planted
/// product is at most `t` of their own area.
pub fn empirical_fdr(
    computed: &FactorPairBinary,
    planted: &FactorPairBinary,
    t: f64,
) -> Result<f64> {
    check_dims(computed, planted)?;
    let model = boolean_product(planted);
    let tiles: Vec<&Tile> = computed.tiles().iter().filter(|t| !t.is_empty()).collect();
    if tiles.is_empty() {
        return Err(BmfError::NotApplicable(
            "empirical FDR of a rank-0 factorization",
        ));
    }
    let mut false_discoveries = 0;
    for tile in &tiles {
        let overlap = crate::binmat::tile_overlap(tile, &model)?;
        if overlap as f64 / tile.area() as f64 <= t {
            false_discoveries += 1;
        }
    }
    Ok(false_discoveries as f64 / tiles.len() as f64)
}

/// Percentage of rated, predicted cells whose score is below `bad_threshold`.
pub fn wrong_rec_rate(
    pred: &FactorPairBinary,
    ratings: &[(usize, usize, f64)],
    bad_threshold: f64,
) -> Result<f64> {
    let product = boolean_product(pred);
    let (mut traceable, mut bad) = (0usize, 0usize);
    for &(row, col, score) in ratings {
        if row >= product.rows() || col >= product.cols() {
            return Err(BmfError::DimensionMismatch(format!(
                "rating ({row}, {col}) outside the matrix"
            )));
        }
        if product.get(row, col) {
            traceable += 1;
            if score < bad_threshold {
                bad += 1;
            }
        }
    }
    if traceable == 0 {
        return Err(BmfError::NotApplicable(
            "no predicted cell carries a rating",
        ));
    }
    Ok(100.0 * bad as f64 / traceable as f64)
}

/// Summary of one computed factorization against the planted one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub f_measure: f64,
    pub f_measure_tiles: f64,
    pub rank_computed: usize,
    pub rank_planted: usize,
    pub residual: usize,
    /// `None` when the computed rank is 0.
    pub empirical_fdr: Option<f64>,
}

impl EvalReport {
    pub fn compute(
        data: &BinaryMatrix,
        computed: &FactorPairBinary,
        planted: &FactorPairBinary,
        t: f64,
    ) -> Result<Self> {
        let empirical_fdr = match empirical_fdr(computed, planted, t) {
            Ok(v) => Some(v),
            Err(BmfError::NotApplicable(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            f_measure: f_measure(computed, planted, FMeasureMode::Cell)?,
            f_measure_tiles: f_measure(computed, planted, FMeasureMode::TileMatched)?,
            rank_computed: computed.rank(),
            rank_planted: planted.rank(),
            residual: residual_l1(data, computed)?,
            empirical_fdr,
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.serialize(self)?;
        out.flush()?;
        Ok(())
    }
}

/// All exact minimizers of `|D − Y⊙Xᵀ|` at rank budget `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct MinimizerSet {
    pub residual: usize,
    pub minimizers: Vec<FactorPairBinary>,
}

const ENUMERATION_BITS: usize = 12;

/// Exhaustive search over `{0,1}^{n×r} × {0,1}^{m×r}`.
///
/// For a fixed `X` the rows of `Y` are independent, so the search enumerates
/// `X` and picks every optimal usage row separately; the minimizer set is
/// the product of the per-row optima.
pub fn brute_force_minimizer(d: &BinaryMatrix, r: usize) -> Result<MinimizerSet> {
    let (m, n) = d.shape();
    if n * r > ENUMERATION_BITS || m * r > ENUMERATION_BITS {
        return Err(BmfError::EnumerationTooLarge(format!(
            "n·r = {} and m·r = {} must both be at most {ENUMERATION_BITS}",
            n * r,
            m * r
        )));
    }
    let rows: Vec<u32> = (0..m)
        .map(|j| {
            (0..n)
                .filter(|&i| d.get(j, i))
                .fold(0u32, |acc, i| acc | (1 << i))
        })
        .collect();
    let usage_count = 1usize << r;
    let mut best = usize::MAX;
    // (patterns, per-row optimal usages)
    let mut winners: Vec<(Vec<u32>, Vec<Vec<u32>>)> = Vec::new();
    let mut products = vec![0u32; usage_count];
    for code in 0..(1u64 << (n * r)) {
        let patterns: Vec<u32> = (0..r)
            .map(|s| ((code >> (s * n)) & ((1 << n) - 1)) as u32)
            .collect();
        for (u, prod) in products.iter_mut().enumerate() {
            *prod = (0..r)
                .filter(|s| u >> s & 1 == 1)
                .fold(0, |acc, s| acc | patterns[s]);
        }
        let mut total = 0;
        let mut per_row = Vec::with_capacity(m);
        for &row in &rows {
            let errs: Vec<u32> = products.iter().map(|p| (p ^ row).count_ones()).collect();
            let min = *errs.iter().min().expect("at least the empty usage");
            total += min as usize;
            if total > best {
                break;
            }
            per_row.push(
                (0..usage_count as u32)
                    .filter(|&u| errs[u as usize] == min)
                    .collect::<Vec<_>>(),
            );
        }
        if total > best || per_row.len() < m {
            continue;
        }
        if total < best {
            best = total;
            winners.clear();
        }
        winners.push((patterns, per_row));
    }
    let mut minimizers = Vec::new();
    for (patterns, per_row) in winners {
        let mut choice = vec![0usize; m];
        loop {
            let tiles = (0..r)
                .map(|s| {
                    let pattern = BitVector::from_bools(
                        &(0..n)
                            .map(|i| patterns[s] >> i & 1 == 1)
                            .collect::<Vec<_>>(),
                    );
                    let usage = BitVector::from_bools(
                        &(0..m)
                            .map(|j| per_row[j][choice[j]] >> s & 1 == 1)
                            .collect::<Vec<_>>(),
                    );
                    Tile::new(pattern, usage)
                })
                .collect();
            minimizers.push(FactorPairBinary::new(n, m, tiles)?);
            // odometer over the per-row choices
            let mut j = 0;
            while j < m {
                choice[j] += 1;
                if choice[j] < per_row[j].len() {
                    break;
                }
                choice[j] = 0;
                j += 1;
            }
            if j == m {
                break;
            }
        }
    }
    Ok(MinimizerSet {
        residual: best,
        minimizers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tile(n: usize, pattern: &[usize], m: usize, usage: &[usize]) -> Tile {
        Tile::from_indices(n, pattern, m, usage).unwrap()
    }

    #[test]
    fn f_measure_cases() {
        let planted =
            FactorPairBinary::new(10, 8, vec![tile(10, &[0, 1, 2, 3], 8, &[0, 1])]).unwrap();
        for mode in [FMeasureMode::Cell, FMeasureMode::TileMatched] {
            assert_eq!(f_measure(&planted, &planted, mode).unwrap(), 1.0);
            assert_eq!(
                f_measure(&FactorPairBinary::empty(10, 8), &planted, mode).unwrap(),
                0.0
            );
            assert_eq!(
                f_measure(
                    &FactorPairBinary::empty(10, 8),
                    &FactorPairBinary::empty(10, 8),
                    mode
                )
                .unwrap(),
                1.0
            );
        }
        let half = FactorPairBinary::new(10, 8, vec![tile(10, &[0, 1], 8, &[0, 1])]).unwrap();
        // precision 1, recall 1/2
        assert!(
            (f_measure(&half, &planted, FMeasureMode::Cell).unwrap() - 2.0 / 3.0).abs() < 1e-15
        );
        assert!(
            (f_measure(&half, &planted, FMeasureMode::TileMatched).unwrap() - 2.0 / 3.0).abs()
                < 1e-15
        );
        assert!(f_measure(&FactorPairBinary::empty(9, 8), &planted, FMeasureMode::Cell).is_err());
    }

    #[test]
    fn tile_matching_is_one_to_one() {
        let planted =
            FactorPairBinary::new(6, 6, vec![tile(6, &[0, 1, 2], 6, &[0, 1, 2])]).unwrap();
        // two copies of the planted tile: the product is identical, but only one may match
        let doubled =
            FactorPairBinary::new(6, 6, vec![planted.tile(0).clone(), planted.tile(0).clone()])
                .unwrap();
        assert_eq!(
            f_measure(&doubled, &planted, FMeasureMode::Cell).unwrap(),
            1.0
        );
        let f = f_measure(&doubled, &planted, FMeasureMode::TileMatched).unwrap();
        assert!((f - 2.0 * 0.5 / 1.5).abs() < 1e-15, "{f}");
    }

    #[test]
    fn cell_measure_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let rand_tile = |rng: &mut ChaCha8Rng| {
                Tile::new(
                    BitVector::from_bools(
                        &(0..12).map(|_| rng.random_bool(0.3)).collect::<Vec<_>>(),
                    ),
                    BitVector::from_bools(
                        &(0..9).map(|_| rng.random_bool(0.3)).collect::<Vec<_>>(),
                    ),
                )
            };
            let a = FactorPairBinary::new(12, 9, vec![rand_tile(&mut rng), rand_tile(&mut rng)])
                .unwrap();
            let b = FactorPairBinary::new(12, 9, vec![rand_tile(&mut rng)]).unwrap();
            let ab = f_measure(&a, &b, FMeasureMode::Cell).unwrap();
            assert_eq!(ab, f_measure(&b, &a, FMeasureMode::Cell).unwrap());
            assert_eq!(ab == 1.0, boolean_product(&a) == boolean_product(&b));
        }
    }

    #[test]
    fn empirical_fdr_cases() {
        let everything = FactorPairBinary::new(
            5,
            4,
            vec![Tile::new(BitVector::ones(5), BitVector::ones(4))],
        )
        .unwrap();
        let computed = FactorPairBinary::new(
            5,
            4,
            vec![
                tile(5, &[0, 1], 4, &[0]),
                tile(5, &[2], 4, &[1, 2]),
                tile(5, &[4], 4, &[3]),
            ],
        )
        .unwrap();
        assert_eq!(empirical_fdr(&computed, &everything, 0.0).unwrap(), 0.0);
        assert_eq!(
            empirical_fdr(&computed, &FactorPairBinary::empty(5, 4), 0.0).unwrap(),
            1.0
        );
        let model = FactorPairBinary::new(5, 4, vec![tile(5, &[0, 1, 2], 4, &[0, 1, 2])]).unwrap();
        assert!((empirical_fdr(&computed, &model, 0.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            empirical_fdr(&FactorPairBinary::empty(5, 4), &model, 0.0),
            Err(BmfError::NotApplicable(_))
        ));
        // raising t can only add false discoveries
        let partial = FactorPairBinary::new(5, 4, vec![tile(5, &[2, 3], 4, &[2, 3])]).unwrap();
        let mut last = 0.0;
        for t in [0.0, 0.2, 0.25, 0.5, 1.0] {
            let v = empirical_fdr(&partial, &model, t).unwrap();
            assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn wrong_recommendation_cases() {
        let pred = FactorPairBinary::new(4, 3, vec![tile(4, &[0, 1], 3, &[0, 1])]).unwrap();
        assert!(matches!(
            wrong_rec_rate(&pred, &[(2, 3, 1.0)], 2.5),
            Err(BmfError::NotApplicable(_))
        ));
        assert_eq!(
            wrong_rec_rate(&pred, &[(0, 0, 4.0), (1, 1, 3.0)], 2.5).unwrap(),
            0.0
        );
        let ratings = [
            (0, 0, 4.0),
            (0, 1, 1.0),
            (1, 0, 5.0),
            (1, 1, 3.5),
            (2, 2, 0.5),
        ];
        assert_eq!(wrong_rec_rate(&pred, &ratings, 2.5).unwrap(), 25.0);
        assert!(wrong_rec_rate(&pred, &[(5, 0, 1.0)], 2.5).is_err());
    }

    fn naive_minimum(d: &BinaryMatrix, r: usize) -> (usize, usize) {
        let (m, n) = d.shape();
        let mut best = usize::MAX;
        let mut count = 0;
        // Y-major order, opposite to the implementation's X-first search
        for ycode in 0..(1u64 << (m * r)) {
            for xcode in 0..(1u64 << (n * r)) {
                let tiles = (0..r)
                    .map(|s| {
                        Tile::new(
                            BitVector::from_bools(
                                &(0..n)
                                    .map(|i| xcode >> (s * n + i) & 1 == 1)
                                    .collect::<Vec<_>>(),
                            ),
                            BitVector::from_bools(
                                &(0..m)
                                    .map(|j| ycode >> (s * m + j) & 1 == 1)
                                    .collect::<Vec<_>>(),
                            ),
                        )
                    })
                    .collect();
                let f = FactorPairBinary::new(n, m, tiles).unwrap();
                let res = residual_l1(d, &f).unwrap();
                if res < best {
                    best = res;
                    count = 0;
                }
                if res == best {
                    count += 1;
                }
            }
        }
        (best, count)
    }

    #[test]
    fn brute_force_cases() {
        let zeros = BinaryMatrix::zeros(3, 3);
        let set = brute_force_minimizer(&zeros, 1).unwrap();
        assert_eq!(set.residual, 0);
        // empty pattern with any usage, or empty usage with any pattern
        assert_eq!(set.minimizers.len(), 8 + 8 - 1);
        assert!(set.minimizers.iter().all(|f| f.rank() == 0));

        let ones = BinaryMatrix::ones(2, 2);
        let set = brute_force_minimizer(&ones, 1).unwrap();
        assert_eq!(set.residual, 0);
        assert_eq!(set.minimizers.len(), 1);
        assert_eq!(set.minimizers[0].tile(0).area(), 4);

        assert!(brute_force_minimizer(&BinaryMatrix::zeros(5, 5), 3).is_err());
    }

    #[test]
    fn brute_force_agrees_with_naive_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..6 {
            let d = BinaryMatrix::from_fn(4, 3, |_, _| rng.random_bool(0.5));
            let set = brute_force_minimizer(&d, 1).unwrap();
            let (best, count) = naive_minimum(&d, 1);
            assert_eq!(set.residual, best);
            assert_eq!(set.minimizers.len(), count);
            for f in &set.minimizers {
                assert_eq!(residual_l1(&d, f).unwrap(), best);
            }
        }
        let d = BinaryMatrix::from_fn(3, 3, |_, _| rng.random_bool(0.5));
        let set = brute_force_minimizer(&d, 2).unwrap();
        let (best, count) = naive_minimum(&d, 2);
        assert_eq!((set.residual, set.minimizers.len()), (best, count));
    }

    #[test]
    fn report_csv_row() {
        let planted = FactorPairBinary::new(4, 4, vec![tile(4, &[0, 1], 4, &[0, 1])]).unwrap();
        let d = boolean_product(&planted);
        let report = EvalReport::compute(&d, &planted, &planted, 0.0).unwrap();
        assert_eq!(report.residual, 0);
        assert_eq!(report.empirical_fdr, Some(0.0));
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "f_measure,f_measure_tiles,rank_computed,rank_planted,residual,empirical_fdr\n1.0,1.0,1,1,0,0.0\n"
        );
    }
}
