//! Planted factorizations with Bernoulli noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binmat::{boolean_product, BinaryMatrix, BitVector, FactorPairBinary, Tile};
use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedParams {
    /// Columns.
    pub n: usize,
    /// Rows.
    pub m: usize,
    pub r_star: usize,
    /// Maximum relative tile size.
    pub d: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedInstance {
    pub planted: FactorPairBinary,
    pub data: BinaryMatrix,
    pub params: PlantedParams,
}

/// Integer size range `[⌈0.01·len⌉, ⌊d·len⌋]`.
pub fn size_range(len: usize, d: f64) -> Result<(usize, usize)> {
    if !(0.01..=1.0).contains(&d) {
        return Err(invalid(format!(
            "maximum relative size {d} outside [0.01, 1]"
        )));
    }
    let lo = len.div_ceil(100).max(1);
    let hi = (d * len as f64 + 1e-9).floor() as usize;
    if lo > hi || hi > len {
        return Err(invalid(format!(
            "empty size range [{lo}, {hi}] for length {len}"
        )));
    }
    Ok((lo, hi))
}

/// Uniform random support of the given size (partial Fisher–Yates).
fn random_support<R: Rng + ?Sized>(len: usize, size: usize, rng: &mut R) -> BitVector {
    let mut idx: Vec<usize> = (0..len).collect();
    for k in 0..size {
        let pick = rng.random_range(k..len);
        idx.swap(k, pick);
    }
    let mut v = BitVector::zeros(len);
    for &i in &idx[..size] {
        v.set(i, true);
    }
    v
}

/// Draws `r_star` tiles: each pattern size is uniform on the integer range
/// for `n`, then a uniform support of that size; usages likewise over `m`.
/// Tiles may overlap.
pub fn generate_planted<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    r_star: usize,
    d: f64,
    rng: &mut R,
) -> Result<FactorPairBinary> {
    let (xlo, xhi) = size_range(n, d)?;
    let (ylo, yhi) = size_range(m, d)?;
    let tiles = (0..r_star)
        .map(|_| {
            let a = rng.random_range(xlo..=xhi);
            let pattern = random_support(n, a, rng);
            let b = rng.random_range(ylo..=yhi);
            let usage = random_support(m, b, rng);
            Tile::new(pattern, usage)
        })
        .collect();
    FactorPairBinary::new(n, m, tiles)
}

/// Flips every 0 to 1 with probability `p_plus` and every 1 to 0 with
/// probability `p_minus`, independently per cell.
pub fn apply_noise<R: Rng + ?Sized>(
    m: &BinaryMatrix,
    p_plus: f64,
    p_minus: f64,
    rng: &mut R,
) -> Result<BinaryMatrix> {
    for p in [p_plus, p_minus] {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid(format!("noise probability {p} outside [0, 1]")));
        }
    }
    let mut out = m.clone();
    for j in 0..m.rows() {
        for i in 0..m.cols() {
            let u: f64 = rng.random();
            let one = m.get(j, i);
            if (!one && u < p_plus) || (one && u < p_minus) {
                out.set(j, i, !one);
            }
        }
    }
    Ok(out)
}

/// Generates a full instance from one seed.
pub fn plant(params: &PlantedParams) -> Result<PlantedInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let planted = generate_planted(params.n, params.m, params.r_star, params.d, &mut rng)?;
    let data = apply_noise(
        &boolean_product(&planted),
        params.p_plus,
        params.p_minus,
        &mut rng,
    )?;
    Ok(PlantedInstance {
        planted,
        data,
        params: *params,
    })
}

/// `m × n` Bernoulli(p) matrix.
pub fn bernoulli_matrix<R: Rng + ?Sized>(
    m: usize,
    n: usize,
    p: f64,
    rng: &mut R,
) -> Result<BinaryMatrix> {
    apply_noise(&BinaryMatrix::zeros(m, n), p, 0.0, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_size_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = generate_planted(300, 200, 20, 0.01, &mut rng).unwrap();
        assert!(f
            .tiles()
            .iter()
            .all(|t| t.pattern.count_ones() == 3 && t.usage.count_ones() == 2));
        assert_eq!(
            generate_planted(300, 200, 0, 0.1, &mut rng)
                .unwrap()
                .columns(),
            0
        );
        assert!(generate_planted(50, 50, 1, 0.01, &mut rng).is_err());
        assert!(generate_planted(300, 200, 1, 0.001, &mut rng).is_err());
        assert_eq!(size_range(700, 0.1).unwrap(), (7, 70));
    }

    #[test]
    fn pattern_sizes_are_uniform() {
        // chi-square goodness of fit over the 91 sizes 10..=100, 1% level
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (lo, hi) = size_range(1000, 0.1).unwrap();
        assert_eq!((lo, hi), (10, 100));
        let samples = 10_000;
        let mut counts = vec![0usize; hi - lo + 1];
        let f = generate_planted(1000, 1000, samples, 0.1, &mut rng).unwrap();
        for t in f.tiles() {
            counts[t.pattern.count_ones() - lo] += 1;
        }
        let expected = samples as f64 / counts.len() as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 99th percentile of chi-square with 90 degrees of freedom
        assert!(chi2 < 124.12, "chi2 = {chi2}");
    }

    #[test]
    fn noise_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = BinaryMatrix::from_fn(20, 30, |j, i| (i * j) % 3 == 0);
        assert_eq!(apply_noise(&m, 0.0, 0.0, &mut rng).unwrap(), m);
        assert_eq!(
            apply_noise(&BinaryMatrix::zeros(5, 6), 1.0, 0.0, &mut rng).unwrap(),
            BinaryMatrix::ones(5, 6)
        );
        let noisy = bernoulli_matrix(400, 320, 0.1, &mut rng).unwrap();
        let tol = 3.0 * (0.09f64 / (400.0 * 320.0)).sqrt();
        assert!((noisy.density() - 0.1).abs() <= tol, "{}", noisy.density());
        assert!(apply_noise(&m, 1.5, 0.0, &mut rng).is_err());
    }

    #[test]
    fn one_sided_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = BinaryMatrix::from_fn(50, 40, |_, _| rng.random_bool(0.5));
        let up = apply_noise(&m, 0.3, 0.0, &mut rng).unwrap();
        assert_eq!(up.hadamard(&m).unwrap(), m);
        let down = apply_noise(&m, 0.0, 0.3, &mut rng).unwrap();
        assert_eq!(down.hadamard(&m).unwrap(), down);
    }

    #[test]
    fn flips_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (rows, cols) = (400, 320);
        let noisy = bernoulli_matrix(rows, cols, 0.1, &mut rng).unwrap();
        // lag-1 correlation of flip indicators along the row-major cell order
        let cells: Vec<f64> = (0..rows)
            .flat_map(|j| (0..cols).map(move |i| (j, i)))
            .map(|(j, i)| if noisy.get(j, i) { 1.0 } else { 0.0 })
            .collect();
        let mean = cells.iter().sum::<f64>() / cells.len() as f64;
        let var = cells.iter().map(|c| (c - mean).powi(2)).sum::<f64>();
        let cov: f64 = cells
            .windows(2)
            .map(|w| (w[0] - mean) * (w[1] - mean))
            .sum();
        assert!((cov / var).abs() < 0.01, "rho = {}", cov / var);
    }

    #[test]
    fn instances_are_reproducible() {
        let params = PlantedParams {
            n: 120,
            m: 90,
            r_star: 4,
            d: 0.2,
            p_plus: 0.1,
            p_minus: 0.1,
            seed: 77,
        };
        let a = plant(&params).unwrap();
        let b = plant(&params).unwrap();
        assert_eq!(a, b);
        for t in a.planted.tiles() {
            let (lo, hi) = size_range(120, 0.2).unwrap();
            assert!((lo..=hi).contains(&t.pattern.count_ones()));
            let (lo, hi) = size_range(90, 0.2).unwrap();
            assert!((lo..=hi).contains(&t.usage.count_ones()));
        }
        let c = plant(&PlantedParams { seed: 78, ..params }).unwrap();
        assert_ne!(a.data, c.data);
    }
}
