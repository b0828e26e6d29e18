//! Proximal alternating linearized minimization of
//! `F(X, Y) = ½‖D − Y Xᵀ‖²` over factors boxed in `[0, 1]`.

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{BmfError, Result};

/// Relaxed factors: `x` is `n × r`, `y` is `m × r`, entries in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorPairRelaxed {
    pub x: Array2<f64>,
    pub y: Array2<f64>,
}

impl FactorPairRelaxed {
    pub fn empty(n: usize, m: usize) -> Self {
        Self {
            x: Array2::zeros((n, 0)),
            y: Array2::zeros((m, 0)),
        }
    }

    pub fn new(x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        if x.ncols() != y.ncols() {
            return Err(BmfError::DimensionMismatch(format!(
                "X has {} columns, Y has {}",
                x.ncols(),
                y.ncols()
            )));
        }
        Ok(Self { x, y })
    }

    /// Column count (the rank budget).
    pub fn columns(&self) -> usize {
        self.x.ncols()
    }

    pub fn in_box(&self) -> bool {
        self.x
            .iter()
            .chain(self.y.iter())
            .all(|v| (0.0..=1.0).contains(v))
    }

    /// Keeps the columns whose flag is set, in order.
    pub fn select_columns(&self, keep: &[bool]) -> Self {
        let idx: Vec<usize> = keep
            .iter()
            .enumerate()
            .filter(|(_, &k)| k)
            .map(|(s, _)| s)
            .collect();
        Self {
            x: self.x.select(Axis(1), &idx),
            y: self.y.select(Axis(1), &idx),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIter,
    MinDecrease,
}

/// Objective values of one optimizer run. `objective_values[0]` is the
/// starting point, one more value per completed iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizeTrace {
    pub objective_values: Vec<f64>,
    pub iterations: usize,
    pub stop_reason: StopReason,
}

impl OptimizeTrace {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "objective"])?;
        for (k, v) in self.objective_values.iter().enumerate() {
            out.write_record([k.to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

fn check_shapes(d: &Array2<f64>, p: &FactorPairRelaxed) -> Result<()> {
    if p.x.ncols() != p.y.ncols() || d.nrows() != p.y.nrows() || d.ncols() != p.x.nrows() {
        return Err(BmfError::DimensionMismatch(format!(
            "data {}x{}, X {}x{}, Y {}x{}",
            d.nrows(),
            d.ncols(),
            p.x.nrows(),
            p.x.ncols(),
            p.y.nrows(),
            p.y.ncols()
        )));
    }
    Ok(())
}

/// `½ Σ (D − Y Xᵀ)²`, summed directly.
pub fn relaxed_objective(d: &Array2<f64>, p: &FactorPairRelaxed) -> Result<f64> {
    check_shapes(d, p)?;
    let r = d - &p.y.dot(&p.x.t());
    Ok(0.5 * r.iter().map(|v| v * v).sum::<f64>())
}

/// `∇_X F = (Y Xᵀ − D)ᵀ Y = X (YᵀY) − Dᵀ Y`
pub fn gradient_x(d: &Array2<f64>, p: &FactorPairRelaxed) -> Result<Array2<f64>> {
    check_shapes(d, p)?;
    Ok(p.x.dot(&p.y.t().dot(&p.y)) - d.t().dot(&p.y))
}

/// `∇_Y F = (Y Xᵀ − D) X = Y (XᵀX) − D X`
pub fn gradient_y(d: &Array2<f64>, p: &FactorPairRelaxed) -> Result<Array2<f64>> {
    check_shapes(d, p)?;
    Ok(p.y.dot(&p.x.t().dot(&p.x)) - d.dot(&p.x))
}

/// Projection onto the box `[0, 1]`, the prox of its indicator for any step.
pub fn prox_box(m: &Array2<f64>, _step: f64) -> Array2<f64> {
    m.mapv(|v| v.clamp(0.0, 1.0))
}

fn prox_box_in_place(m: &mut Array2<f64>) {
    m.mapv_inplace(|v| v.clamp(0.0, 1.0));
}

const POWER_TOL: f64 = 1e-6;
const POWER_MAX_ITER: usize = 100;
const MIN_LIPSCHITZ: f64 = 1e-12;

/// Spectral norm of a symmetric positive semidefinite matrix by power
/// iteration, falling back to the Frobenius norm (an upper bound) when the
/// iteration does not settle.
pub fn spectral_norm_psd(g: &Array2<f64>) -> f64 {
    let k = g.nrows();
    if k == 0 {
        return 0.0;
    }
    let frobenius = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if frobenius == 0.0 {
        return 0.0;
    }
    let mut v = Array1::from_elem(k, 1.0 / (k as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = g.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return frobenius;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= POWER_TOL * next.abs().max(f64::MIN_POSITIVE) {
            return next.max(norm).min(frobenius);
        }
        lambda = next;
    }
    frobenius
}

/// One proximal gradient step in `X`; returns the new `X` and the step `α = 1/‖YᵀY‖`.
pub fn grad_step_x(d: &Array2<f64>, p: &FactorPairRelaxed) -> Result<(Array2<f64>, f64)> {
    let grad = gradient_x(d, p)?;
    let alpha = 1.0 / spectral_norm_psd(&p.y.t().dot(&p.y)).max(MIN_LIPSCHITZ);
    Ok((prox_box(&(&p.x - &(grad * alpha)), alpha), alpha))
}

/// One proximal gradient step in `Y` using the current (already updated) `X`;
/// returns the new `Y` and the step `β = 1/‖XᵀX‖`.
pub fn grad_step_y(d: &Array2<f64>, p: &FactorPairRelaxed) -> Result<(Array2<f64>, f64)> {
    let grad = gradient_y(d, p)?;
    let beta = 1.0 / spectral_norm_psd(&p.x.t().dot(&p.x)).max(MIN_LIPSCHITZ);
    Ok((prox_box(&(&p.y - &(grad * beta)), beta), beta))
}

/// Runs the alternating X-then-Y steps until `max_iter` iterations or until an
/// iteration lowers `F` by less than `min_decrease`.
///
/// `F` is tracked through `½|D| − ⟨DX, Y⟩ + ½⟨XᵀX, YᵀY⟩`, which reuses the
/// `DX` product of the Y-step.
pub fn optimize(
    d: &Array2<f64>,
    p0: &FactorPairRelaxed,
    max_iter: usize,
    min_decrease: f64,
) -> Result<(FactorPairRelaxed, OptimizeTrace)> {
    check_shapes(d, p0)?;
    let mut x = p0.x.clone();
    let mut y = p0.y.clone();
    let half_data = 0.5 * d.iter().map(|v| v * v).sum::<f64>();
    let objective = |dx: &Array2<f64>, x: &Array2<f64>, y: &Array2<f64>| -> f64 {
        let cross: f64 = (dx * y).sum();
        let gram: f64 = (&x.t().dot(x) * &y.t().dot(y)).sum();
        half_data - cross + 0.5 * gram
    };
    let mut values = vec![objective(&d.dot(&x), &x, &y)];
    if !values[0].is_finite() {
        return Err(BmfError::NonFiniteObjective(0));
    }
    let mut stop_reason = StopReason::MaxIter;
    let mut iterations = 0;
    while iterations < max_iter {
        let yty = y.t().dot(&y);
        let alpha = 1.0 / spectral_norm_psd(&yty).max(MIN_LIPSCHITZ);
        let grad_x = x.dot(&yty) - d.t().dot(&y);
        x.scaled_add(-alpha, &grad_x);
        prox_box_in_place(&mut x);

        let xtx = x.t().dot(&x);
        let beta = 1.0 / spectral_norm_psd(&xtx).max(MIN_LIPSCHITZ);
        let dx = d.dot(&x);
        let grad_y = y.dot(&xtx) - &dx;
        y.scaled_add(-beta, &grad_y);
        prox_box_in_place(&mut y);

        iterations += 1;
        let value = objective(&dx, &x, &y);
        if !value.is_finite() {
            return Err(BmfError::NonFiniteObjective(iterations));
        }
        let previous = *values.last().expect("trace starts non-empty");
        values.push(value);
        if previous - value < min_decrease {
            stop_reason = StopReason::MinDecrease;
            break;
        }
    }
    Ok((
        FactorPairRelaxed { x, y },
        OptimizeTrace {
            objective_values: values,
            iterations,
            stop_reason,
        },
    ))
}

/// Appends `extra` uniform `[0, 1)` columns to `m`.
pub(crate) fn append_columns(m: &Array2<f64>, extra: Array2<f64>) -> Array2<f64> {
    let (rows, cols) = m.dim();
    let mut out = Array2::zeros((rows, cols + extra.ncols()));
    out.slice_mut(s![.., ..cols]).assign(m);
    out.slice_mut(s![.., cols..]).assign(&extra);
    out
}
