//! Rounding of relaxed factors under false-discovery control.

use std::collections::HashMap;

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binmat::{boolean_product, BinaryMatrix, BitVector, FactorPairBinary, Tile};
use crate::bounds::{
    certify_coherence_inner, certify_density_indexed, BoundCertificate, CertificateMethod,
    NoiseModel, PairCount, TileStats,
};
use crate::error::{invalid, BmfError, Result};
use crate::palm::{append_columns, FactorPairRelaxed};

/// Which bound a tile has to pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMethod {
    Density,
    /// Coherence in both orientations; passing either suffices.
    Coherence,
    /// Density or coherence.
    Both,
}

impl std::str::FromStr for FilterMethod {
    type Err = BmfError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "density" => Ok(Self::Density),
            "coherence" => Ok(Self::Coherence),
            "both" => Ok(Self::Both),
            other => Err(invalid(format!("unknown bound method {other:?}"))),
        }
    }
}

impl std::fmt::Display for FilterMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Density => "density",
            Self::Coherence => "coherence",
            Self::Both => "both",
        })
    }
}

/// Everything the tile filter needs besides the data.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdrFilter {
    pub noise: NoiseModel,
    pub q: f64,
    pub method: FilterMethod,
    #[serde(default)]
    pub pairs: PairCount,
}

impl FdrFilter {
    pub fn new(noise: NoiseModel, q: f64, method: FilterMethod) -> Result<Self> {
        if !(q > 0.0 && q < 1.0) {
            return Err(invalid(format!("control level {q} outside (0, 1)")));
        }
        Ok(Self {
            noise,
            q,
            method,
            pairs: PairCount::default(),
        })
    }

    fn certificates(
        &self,
        d: &BinaryMatrix,
        tile: &Tile,
        index: usize,
        decide_only: bool,
    ) -> Result<Vec<BoundCertificate>> {
        if tile.is_empty() {
            return Ok(vec![BoundCertificate {
                tile_index: index,
                method: match self.method {
                    FilterMethod::Coherence => CertificateMethod::Coherence,
                    _ => CertificateMethod::Density,
                },
                log_prob_bound: 0.0,
                accepted: false,
                applicable: false,
                stats: TileStats {
                    pattern_size: tile.pattern.count_ones(),
                    usage_size: tile.usage.count_ones(),
                    statistic: 0.0,
                },
            }]);
        }
        let mut out = Vec::with_capacity(3);
        if matches!(self.method, FilterMethod::Density | FilterMethod::Both) {
            out.push(certify_density_indexed(
                d,
                tile,
                index,
                &self.noise,
                self.q,
            )?);
            if decide_only && out[0].accepted {
                return Ok(out);
            }
        }
        if matches!(self.method, FilterMethod::Coherence | FilterMethod::Both) {
            for transposed in [false, true] {
                let c = certify_coherence_inner(
                    d,
                    tile,
                    index,
                    &self.noise,
                    self.q,
                    transposed,
                    self.pairs,
                    decide_only,
                )?;
                let done = decide_only && c.accepted;
                out.push(c);
                if done {
                    break;
                }
            }
        }
        Ok(out)
    }

    fn accepts(&self, d: &BinaryMatrix, tile: &Tile) -> Result<bool> {
        Ok(self
            .certificates(d, tile, 0, true)?
            .iter()
            .any(|c| c.accepted))
    }
}

/// Entry is 1 iff `value > tau`, i.e. `⌈value − τ⌉` for values and `τ` in `[0, 1]`.
pub fn round_threshold(m: &Array2<f64>, tau: f64) -> BinaryMatrix {
    BinaryMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[[r, c]] > tau)
}

fn column_above(m: &Array2<f64>, col: usize, tau: f64) -> BitVector {
    let mut v = BitVector::zeros(m.nrows());
    for (r, &x) in m.column(col).iter().enumerate() {
        if x > tau {
            v.set(r, true);
        }
    }
    v
}

/// Tests every tile; rejected tiles are zeroed in place so column indices
/// stay aligned with the input. A tile survives iff any of its certificates
/// is accepted.
pub fn filter_tiles(
    d: &BinaryMatrix,
    f: &FactorPairBinary,
    filter: &FdrFilter,
) -> Result<(FactorPairBinary, Vec<BoundCertificate>)> {
    if d.rows() != f.m() || d.cols() != f.n() {
        return Err(BmfError::DimensionMismatch(
            "data and factors differ in shape".into(),
        ));
    }
    let mut out = f.clone();
    let mut certificates = Vec::new();
    for (s, tile) in f.tiles().iter().enumerate() {
        let certs = filter.certificates(d, tile, s, false)?;
        if !certs.iter().any(|c| c.accepted) {
            out.tiles_mut()[s] = Tile::empty(f.n(), f.m());
        }
        certificates.extend(certs);
    }
    Ok((out, certificates))
}

/// Outcome of the threshold search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundingReport {
    pub tau_x: f64,
    pub tau_y: f64,
    /// Number of accepted tiles.
    pub rank: usize,
    pub certificates: Vec<BoundCertificate>,
    pub residual: usize,
    /// Per relaxed column: did its rounded tile survive.
    pub kept: Vec<bool>,
}

/// Threshold grid `{0, step, 2·step, …, 1}`.
pub fn threshold_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(invalid(format!("grid step {step} outside (0, 1]")));
    }
    let count = (1.0 / step).round();
    if ((count * step) - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("grid step {step} does not divide 1")));
    }
    let count = count as usize;
    Ok((0..=count).map(|k| k as f64 / count as f64).collect())
}

/// Rounds `p` at every threshold pair of the grid, filters each candidate
/// and keeps the one with the smallest residual. Ties go to the smaller
/// rank, then to the lexicographically smaller `(τ_x, τ_y)`.
pub fn round_fdr(
    d: &BinaryMatrix,
    p: &FactorPairRelaxed,
    filter: &FdrFilter,
    grid_step: f64,
) -> Result<(FactorPairBinary, RoundingReport)> {
    let (m, n) = d.shape();
    if p.x.nrows() != n || p.y.nrows() != m || p.x.ncols() != p.y.ncols() {
        return Err(BmfError::DimensionMismatch(
            "relaxed factors do not match data".into(),
        ));
    }
    let grid = threshold_grid(grid_step)?;
    let r = p.columns();

    // patterns[k][s] / usages[k][s], interned per column so repeated tiles
    // across thresholds are certified once
    let intern = |mat: &Array2<f64>| -> (Vec<Vec<usize>>, Vec<Vec<BitVector>>) {
        let mut ids = vec![vec![0; r]; grid.len()];
        let mut uniq: Vec<Vec<BitVector>> = vec![Vec::new(); r];
        for s in 0..r {
            for (k, &tau) in grid.iter().enumerate() {
                let v = column_above(mat, s, tau);
                ids[k][s] = match uniq[s].iter().position(|u| *u == v) {
                    Some(id) => id,
                    None => {
                        uniq[s].push(v);
                        uniq[s].len() - 1
                    }
                };
            }
        }
        (ids, uniq)
    };
    let (pat_ids, patterns) = intern(&p.x);
    let (use_ids, usages) = intern(&p.y);

    let mut keys: Vec<(usize, usize, usize)> = Vec::new();
    for px in &pat_ids {
        for uy in &use_ids {
            for s in 0..r {
                keys.push((s, px[s], uy[s]));
            }
        }
    }
    keys.sort_unstable();
    keys.dedup();
    let verdicts: HashMap<(usize, usize, usize), bool> = keys
        .par_iter()
        .map(|&(s, pid, uid)| {
            let tile = Tile::new(patterns[s][pid].clone(), usages[s][uid].clone());
            Ok(((s, pid, uid), filter.accepts(d, &tile)?))
        })
        .collect::<Result<_>>()?;

    let pairs: Vec<(usize, usize)> = (0..grid.len())
        .flat_map(|kx| (0..grid.len()).map(move |ky| (kx, ky)))
        .collect();
    let best = pairs
        .par_iter()
        .map(|&(kx, ky)| {
            let mut f = FactorPairBinary::empty(n, m);
            let mut rank = 0;
            for s in 0..r {
                let (pid, uid) = (pat_ids[kx][s], use_ids[ky][s]);
                let tile = if verdicts[&(s, pid, uid)] {
                    rank += 1;
                    Tile::new(patterns[s][pid].clone(), usages[s][uid].clone())
                } else {
                    Tile::empty(n, m)
                };
                f.push(tile).expect("lengths match by construction");
            }
            let residual = d.xor_count(&boolean_product(&f)).expect("shapes match");
            (residual, rank, kx, ky)
        })
        .min()
        .expect("grid is never empty");

    let (_, _, kx, ky) = best;
    let rounded = FactorPairBinary::new(
        n,
        m,
        (0..r)
            .map(|s| {
                Tile::new(
                    patterns[s][pat_ids[kx][s]].clone(),
                    usages[s][use_ids[ky][s]].clone(),
                )
            })
            .collect(),
    )?;
    let (filtered, certificates) = filter_tiles(d, &rounded, filter)?;
    let kept: Vec<bool> = filtered.tiles().iter().map(|t| !t.is_empty()).collect();
    let report = RoundingReport {
        tau_x: grid[kx],
        tau_y: grid[ky],
        rank: filtered.rank(),
        certificates,
        residual: d.xor_count(&boolean_product(&filtered))?,
        kept,
    };
    debug_assert_eq!(report.residual, best.0);
    Ok((filtered, report))
}

/// True iff `r_budget − rank(F) ≥ gap`.
pub fn rank_gap(f: &FactorPairBinary, r_budget: usize, gap: usize) -> bool {
    r_budget.saturating_sub(f.rank()) >= gap
}

/// Appends `delta_r` columns drawn uniformly from `[0, 1)` to both factors.
pub fn increase_rank<R: Rng + ?Sized>(
    p: &FactorPairRelaxed,
    delta_r: usize,
    rng: &mut R,
) -> Result<FactorPairRelaxed> {
    if delta_r == 0 {
        return Err(invalid("rank increment must be at least 1"));
    }
    let (n, m) = (p.x.nrows(), p.y.nrows());
    let new_x = Array2::from_shape_simple_fn((n, delta_r), || rng.random::<f64>());
    let new_y = Array2::from_shape_simple_fn((m, delta_r), || rng.random::<f64>());
    Ok(FactorPairRelaxed {
        x: append_columns(&p.x, new_x),
        y: append_columns(&p.y, new_y),
    })
}
