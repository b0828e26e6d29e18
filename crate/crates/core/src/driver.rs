//! Rank escalation: grow the relaxed factors by a fixed increment, optimize,
//! round under false-discovery control, and stop once an increment adds
//! nothing that survives.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binmat::{BinaryMatrix, FactorPairBinary};
use crate::bounds::{NoiseModel, PairCount};
use crate::error::{invalid, Result};
use crate::palm::{optimize, FactorPairRelaxed, OptimizeTrace};
use crate::rounding::{
    increase_rank, rank_gap, round_fdr, FdrFilter, FilterMethod, RoundingReport,
};

/// Hyperparameters of a factorization run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrustConfig {
    pub p_hat: f64,
    pub q: f64,
    pub delta_r: usize,
    pub method: FilterMethod,
    pub max_iter: usize,
    pub min_decrease: f64,
    pub grid_step: f64,
    /// Defaults to `delta_r`.
    pub rank_gap: Option<usize>,
    /// Defaults to `min(n, m) / 2`.
    pub max_rank_budget: Option<usize>,
    pub pairs: PairCount,
    pub seed: u64,
}

impl Default for TrustConfig {
    fn default() -> Self {
        Self {
            p_hat: 0.1,
            q: 0.01,
            delta_r: 10,
            method: FilterMethod::Density,
            max_iter: 2000,
            min_decrease: 1e-4,
            grid_step: 0.05,
            rank_gap: None,
            max_rank_budget: None,
            pairs: PairCount::Unordered,
            seed: 0,
        }
    }
}

impl TrustConfig {
    pub fn rank_gap(&self) -> usize {
        self.rank_gap.unwrap_or(self.delta_r)
    }

    pub fn max_rank_budget(&self, d: &BinaryMatrix) -> usize {
        self.max_rank_budget
            .unwrap_or_else(|| (d.rows().min(d.cols()) / 2).max(self.delta_r))
    }

    pub fn filter(&self) -> Result<FdrFilter> {
        let mut f = FdrFilter::new(NoiseModel::new(self.p_hat)?, self.q, self.method)?;
        f.pairs = self.pairs;
        Ok(f)
    }

    pub fn validate(&self, d: &BinaryMatrix) -> Result<()> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(invalid(format!("q = {} outside (0, 1)", self.q)));
        }
        if !(0.0..1.0).contains(&self.p_hat) {
            return Err(invalid(format!("p_hat = {} outside [0, 1)", self.p_hat)));
        }
        if self.delta_r == 0 {
            return Err(invalid("delta_r must be at least 1"));
        }
        if self.max_rank_budget(d) < self.delta_r {
            return Err(invalid("max_rank_budget must be at least delta_r"));
        }
        if self.min_decrease.is_nan() || self.min_decrease < 0.0 {
            return Err(invalid("min_decrease must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStop {
    RankGap,
    BudgetExhausted,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Columns offered to the optimizer in this round.
    pub rank_budget: usize,
    pub trace: OptimizeTrace,
    pub rounding: RoundingReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Surviving tiles of the last rounding, empty columns dropped.
    pub factors: FactorPairBinary,
    pub rounds: Vec<RoundRecord>,
    pub stop: RunStop,
    pub max_rank_budget: usize,
}

impl RunReport {
    pub fn rank(&self) -> usize {
        self.factors.rank()
    }

    pub fn residual(&self) -> usize {
        self.rounds.last().map_or(0, |r| r.rounding.residual)
    }

    /// Mean certified false-discovery probability over the returned tiles,
    /// using the tightest accepted certificate of each; `None` at rank 0.
    pub fn fdr_estimate(&self) -> Option<f64> {
        let last = self.rounds.last()?;
        let kept: Vec<usize> = last
            .rounding
            .kept
            .iter()
            .enumerate()
            .filter(|(_, &k)| k)
            .map(|(s, _)| s)
            .collect();
        if kept.is_empty() {
            return None;
        }
        let total: f64 = kept
            .iter()
            .map(|&s| {
                last.rounding
                    .certificates
                    .iter()
                    .filter(|c| c.tile_index == s && c.accepted)
                    .map(|c| c.prob_bound())
                    .fold(1.0, f64::min)
            })
            .sum();
        Some(total / kept.len() as f64)
    }
}

/// Factorizes `d` with rank chosen by false-discovery control.
///
/// Each round appends `delta_r` uniform random columns to the surviving
/// relaxed factors, runs the optimizer, and rounds. Columns whose tile was
/// rejected are dropped before the next round.
pub fn trust_pal(d: &BinaryMatrix, cfg: &TrustConfig) -> Result<RunReport> {
    if d.rows() == 0 || d.cols() == 0 {
        return Err(invalid("data matrix must have at least one row and column"));
    }
    cfg.validate(d)?;
    let filter = cfg.filter()?;
    let budget_cap = cfg.max_rank_budget(d);
    let gap = cfg.rank_gap();
    let dense = d.to_dense();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut relaxed = FactorPairRelaxed::empty(d.cols(), d.rows());
    let mut rounds = Vec::new();
    loop {
        let start = increase_rank(&relaxed, cfg.delta_r, &mut rng)?;
        let budget = start.columns();
        let (optimized, trace) = optimize(&dense, &start, cfg.max_iter, cfg.min_decrease)?;
        let (factors, rounding) = round_fdr(d, &optimized, &filter, cfg.grid_step)?;
        let keep = rounding.kept.clone();
        rounds.push(RoundRecord {
            rank_budget: budget,
            trace,
            rounding,
        });
        let stop = if rank_gap(&factors, budget, gap) {
            Some(RunStop::RankGap)
        } else if factors.rank() + cfg.delta_r > budget_cap {
            Some(RunStop::BudgetExhausted)
        } else {
            None
        };
        if let Some(stop) = stop {
            return Ok(RunReport {
                factors: factors.compact(),
                rounds,
                stop,
                max_rank_budget: budget_cap,
            });
        }
        relaxed = optimized.select_columns(&keep);
    }
}
