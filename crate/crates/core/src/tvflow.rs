//! Total-variation flow by implicit time stepping.
//!
//! Every step `u(t_{k+1}) = prox_{dt_k J}(u(t_k))` is an ROF problem, solved
//! with a dual projection iteration (Chambolle's, optionally accelerated). Differences are forward with
//! replicate (Neumann) boundaries, and the divergence is the negative adjoint
//! of that gradient, so `sum(div p) = 0` and every step preserves the mean.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::ScalarField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridPolicy {
    Uniform,
    Geometric,
    /// Times supplied explicitly.
    Custom,
}

/// Strictly increasing evolution times starting at zero.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
    policy: GridPolicy,
}

pub const DEFAULT_T_MIN: f64 = 0.05;
pub const DEFAULT_T_MAX: f64 = 8.0;
pub const DEFAULT_STEPS: usize = 60;

impl TimeGrid {
    /// `steps` intervals: `0, t_min, t_min·ρ, ..., t_max` with `ρ` fixed by
    /// the endpoints.
    pub fn geometric(t_min: f64, t_max: f64, steps: usize) -> Result<Self> {
        if !(t_min > 0.0 && t_max > t_min && t_max.is_finite()) {
            return Err(Error::Parameter(format!("geometric grid needs 0 < t_min < t_max, got {t_min}, {t_max}")));
        }
        if steps < 3 {
            return Err(Error::Parameter(format!("a grid needs at least 3 steps, got {steps}")));
        }
        let ratio = (t_max / t_min).powf(1.0 / (steps - 1) as f64);
        let mut times = Vec::with_capacity(steps + 1);
        times.push(0.0);
        for k in 0..steps {
            times.push(t_min * ratio.powi(k as i32));
        }
        times[steps] = t_max;
        Self::checked(times, GridPolicy::Geometric)
    }

    pub fn uniform(t_max: f64, steps: usize) -> Result<Self> {
        if !(t_max > 0.0 && t_max.is_finite()) {
            return Err(Error::Parameter(format!("uniform grid needs t_max > 0, got {t_max}")));
        }
        if steps < 3 {
            return Err(Error::Parameter(format!("a grid needs at least 3 steps, got {steps}")));
        }
        let dt = t_max / steps as f64;
        let mut times: Vec<f64> = (0..=steps).map(|k| k as f64 * dt).collect();
        times[steps] = t_max;
        Self::checked(times, GridPolicy::Uniform)
    }

    pub fn from_times(times: Vec<f64>) -> Result<Self> {
        Self::checked(times, GridPolicy::Custom)
    }

    fn checked(times: Vec<f64>, policy: GridPolicy) -> Result<Self> {
        if times.len() < 4 {
            return Err(Error::Parameter(format!("a grid needs at least 4 times, got {}", times.len())));
        }
        if times[0] != 0.0 {
            return Err(Error::Parameter("grid must start at t = 0".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(Error::Parameter("grid times must be finite and strictly increasing".into()));
        }
        Ok(Self { times, policy })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn policy(&self) -> GridPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn t_max(&self) -> f64 {
        *self.times.last().expect("grid is never empty")
    }

    /// `t_{k+1} - t_k`
    pub fn step(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// Interior nodes `t_1 .. t_{N-2}`, one per spectral layer.
    pub fn interior(&self) -> &[f64] {
        &self.times[1..self.times.len() - 1]
    }

    /// Trapezoidal weight of each interior node: `(t_{k+1} - t_{k-1}) / 2`.
    pub fn interior_weights(&self) -> Vec<f64> {
        self.times.windows(3).map(|w| 0.5 * (w[2] - w[0])).collect()
    }

    /// Same grid with every time multiplied by `a > 0`.
    pub fn scaled(&self, a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Parameter(format!("grid scale must be positive, got {a}")));
        }
        Self::checked(self.times.iter().map(|t| t * a).collect(), self.policy)
    }
}

impl Default for TimeGrid {
    fn default() -> Self {
        Self::geometric(DEFAULT_T_MIN, DEFAULT_T_MAX, DEFAULT_STEPS).expect("default grid is valid")
    }
}

/// Inner-solver settings for each ROF step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowParams {
    pub max_inner_iters: usize,
    pub dual_step: f64,
    /// Stop once the relative L2 change of the dual field drops below this.
    pub inner_tol: f64,
    pub scheme: DualScheme,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self { max_inner_iters: 200, dual_step: 0.248, inner_tol: 1e-5, scheme: DualScheme::default() }
    }
}

/// Update rule for the dual projection iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DualScheme {
    /// Chambolle's semi-implicit fixed-point step with step `dual_step`.
    Chambolle,
    /// Projected gradient on the same dual with Nesterov momentum; the step is
    /// `dual_step / 2` so the default stays within the `1/8` Lipschitz bound.
    #[default]
    Accelerated,
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dual_step > 0.0 && self.dual_step <= 0.25) {
            return Err(Error::Parameter(format!("dual_step must lie in (0, 0.25], got {}", self.dual_step)));
        }
        if self.max_inner_iters == 0 {
            return Err(Error::Parameter("max_inner_iters must be positive".into()));
        }
        if !(self.inner_tol > 0.0 && self.inner_tol.is_finite()) {
            return Err(Error::Parameter(format!("inner_tol must be positive, got {}", self.inner_tol)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxReport {
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug)]
pub struct ProxOutput {
    pub u: ScalarField,
    pub report: ProxReport,
}

/// Dual variable of the ROF problem: one vector per pixel with `|p| <= 1`.
#[derive(Clone, Debug)]
pub struct DualField {
    width: usize,
    height: usize,
    px: Vec<f64>,
    py: Vec<f64>,
}

impl DualField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { width, height, px: vec![0.0; width * height], py: vec![0.0; width * height] }
    }
}

/// ROF duality gap `TV(u) + <p, grad u>` at the primal point
/// `u = g - theta·div p`. Zero exactly at the optimum.
pub fn duality_gap(g: &ScalarField, theta: f64, dual: &DualField) -> f64 {
    let (w, h) = g.dims();
    let mut d = vec![0.0; w * h];
    divergence(&dual.px, &dual.py, w, h, &mut d);
    let u: Vec<f64> = g.values().iter().zip(&d).map(|(gi, di)| gi - theta * di).collect();
    let mut gap = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let gx = if x + 1 < w { u[i + 1] - u[i] } else { 0.0 };
            let gy = if y + 1 < h { u[i + w] - u[i] } else { 0.0 };
            gap += (gx * gx + gy * gy).sqrt() + dual.px[i] * gx + dual.py[i] * gy;
        }
    }
    gap
}

/// The stopping test needs two reductions over the image, so it only runs
/// on every few iterations.
const CONVERGENCE_CHECK_EVERY: usize = 8;

/// Rows per parallel work item. Depends only on the width, so partial sums
/// are accumulated in the same order on any number of threads.
fn rows_per_chunk(w: usize) -> usize {
    (8192 / w.max(1)).max(1)
}

/// `out = div p - s·g`, with `div` the negative adjoint of the
/// forward-difference gradient.
fn divergence_minus(px: &[f64], py: &[f64], g: &[f64], s: f64, w: usize, h: usize, out: &mut [f64]) {
    let rows = rows_per_chunk(w);
    out.par_chunks_mut(w * rows).enumerate().for_each(|(c, chunk)| {
        for (r, row) in chunk.chunks_mut(w).enumerate() {
            let y = c * rows + r;
            let base = y * w;
            let pxr = &px[base..base + w];
            let gr = &g[base..base + w];
            row[0] = pxr[0] - s * gr[0];
            for x in 1..w {
                row[x] = pxr[x] - pxr[x - 1] - s * gr[x];
            }
            if w > 1 {
                row[w - 1] = -pxr[w - 2] - s * gr[w - 1];
            } else {
                row[0] = -s * gr[0];
            }
            if y + 1 < h {
                for (o, &q) in row.iter_mut().zip(&py[base..base + w]) {
                    *o += q;
                }
            }
            if y > 0 {
                for (o, &q) in row.iter_mut().zip(&py[base - w..base]) {
                    *o -= q;
                }
            }
        }
    });
}

fn divergence(px: &[f64], py: &[f64], w: usize, h: usize, out: &mut [f64]) {
    let zeros = vec![0.0; w * h];
    divergence_minus(px, py, &zeros, 0.0, w, h, out);
}

/// One row of the dual update. `below` is the next row of `v`, or the row
/// itself on the last row (which makes the vertical difference zero).
#[allow(clippy::too_many_arguments)]
#[inline(always)]
fn dual_row<const ACCELERATED: bool, const TRACK: bool>(
    v: &[f64],
    below: &[f64],
    tau: f64,
    beta: f64,
    px: &mut [f64],
    py: &mut [f64],
    rx: &mut [f64],
    ry: &mut [f64],
) -> (f64, f64) {
    let w = v.len();
    let (below, px, py, rx, ry) = (&below[..w], &mut px[..w], &mut py[..w], &mut rx[..w], &mut ry[..w]);
    let (mut change, mut norm) = (0.0, 0.0);
    for x in 0..w {
        let gx = if x + 1 < w { v[x + 1] - v[x] } else { 0.0 };
        let gy = below[x] - v[x];
        let qx = rx[x] + tau * gx;
        let qy = ry[x] + tau * gy;
        let inv = if ACCELERATED {
            1.0 / (qx * qx + qy * qy).sqrt().max(1.0)
        } else {
            1.0 / (1.0 + tau * (gx * gx + gy * gy).sqrt())
        };
        let (npx, npy) = (qx * inv, qy * inv);
        let (dx, dy) = (npx - px[x], npy - py[x]);
        if TRACK {
            change += dx * dx + dy * dy;
            norm += npx * npx + npy * npy;
        }
        rx[x] = npx + beta * dx;
        ry[x] = npy + beta * dy;
        px[x] = npx;
        py[x] = npy;
    }
    (change, norm)
}

/// Approximate minimizer of `TV(u) + |u - g|² / (2 theta)`.
///
/// Non-convergence within `max_inner_iters` is reported in the output, not
/// treated as an error.
pub fn rof_prox(g: &ScalarField, theta: f64, params: &FlowParams) -> Result<ProxOutput> {
    let mut dual = DualField::zeros(g.width(), g.height());
    rof_prox_warm(g, theta, params, &mut dual)
}

/// [`rof_prox`] starting from (and updating) an existing dual field.
///
/// The dual problem is `min |div p - g/theta|²` over `|p| <= 1`, and the
/// primal solution is recovered as `u = g - theta·div p`.
pub fn rof_prox_warm(g: &ScalarField, theta: f64, params: &FlowParams, dual: &mut DualField) -> Result<ProxOutput> {
    params.validate()?;
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Parameter(format!("theta must be positive, got {theta}")));
    }
    if dual.width != g.width() || dual.height != g.height() {
        return Err(Error::Contract("dual field does not match image dimensions".into()));
    }
    let (w, h) = g.dims();
    let n = w * h;
    let inv_theta = 1.0 / theta;
    let gv = g.values();
    let accelerated = params.scheme == DualScheme::Accelerated;
    let tau = if accelerated { 0.5 * params.dual_step } else { params.dual_step };

    let mut v = vec![0.0; n];
    // Point the gradient step is taken from: the extrapolated iterate for the
    // accelerated scheme, the current iterate otherwise.
    let mut rx = dual.px.clone();
    let mut ry = dual.py.clone();
    let mut momentum = 1.0f64;
    let mut report = ProxReport { iterations: 0, converged: false };
    let rows = rows_per_chunk(w);

    for iter in 1..=params.max_inner_iters {
        divergence_minus(&rx, &ry, gv, inv_theta, w, h, &mut v);
        let beta = if accelerated {
            let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let b = (momentum - 1.0) / next;
            momentum = next;
            b
        } else {
            0.0
        };

        let track = iter % CONVERGENCE_CHECK_EVERY == 0 || iter == params.max_inner_iters;
        let v = &v;
        // Everything is updated in place: pixel i reads only its own dual and
        // extrapolation values, plus `v`.
        let chunk_sums: Vec<(f64, f64)> = dual
            .px
            .par_chunks_mut(w * rows)
            .zip(dual.py.par_chunks_mut(w * rows))
            .zip(rx.par_chunks_mut(w * rows))
            .zip(ry.par_chunks_mut(w * rows))
            .enumerate()
            .map(|(c, (((pxc, pyc), rxc), ryc))| {
                let (mut change, mut norm) = (0.0, 0.0);
                for r in 0..pxc.len() / w {
                    let y = c * rows + r;
                    let base = y * w;
                    let o = r * w..(r + 1) * w;
                    let rowv = &v[base..base + w];
                    let below = if y + 1 < h { &v[base + w..base + 2 * w] } else { rowv };
                    let (px, py) = (&mut pxc[o.clone()], &mut pyc[o.clone()]);
                    let (qx, qy) = (&mut rxc[o.clone()], &mut ryc[o]);
                    let (dc, dn) = match (accelerated, track) {
                        (true, true) => dual_row::<true, true>(rowv, below, tau, beta, px, py, qx, qy),
                        (true, false) => dual_row::<true, false>(rowv, below, tau, beta, px, py, qx, qy),
                        (false, true) => dual_row::<false, true>(rowv, below, tau, beta, px, py, qx, qy),
                        (false, false) => dual_row::<false, false>(rowv, below, tau, beta, px, py, qx, qy),
                    };
                    change += dc;
                    norm += dn;
                }
                (change, norm)
            })
            .collect();
        let (change, norm) = chunk_sums.iter().fold((0.0, 0.0), |(c, m), &(a, b)| (c + a, m + b));

        report.iterations = iter;
        if track && (change == 0.0 || change.sqrt() < params.inner_tol * norm.sqrt()) {
            report.converged = true;
            break;
        }
    }

    divergence(&dual.px, &dual.py, w, h, &mut v);
    let u: Vec<f64> = gv.iter().zip(&v).map(|(gi, di)| gi - theta * di).collect();
    Ok(ProxOutput { u: ScalarField::from_vec_unchecked(w, h, u), report })
}

/// States `u(t_k)` of the flow on a grid, with per-step solver reports.
#[derive(Clone, Debug)]
pub struct FlowTrajectory {
    grid: TimeGrid,
    states: Vec<ScalarField>,
    reports: Vec<ProxReport>,
}

impl FlowTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn states(&self) -> &[ScalarField] {
        &self.states
    }

    pub fn state(&self, k: usize) -> &ScalarField {
        &self.states[k]
    }

    /// One report per step `k -> k+1`.
    pub fn reports(&self) -> &[ProxReport] {
        &self.reports
    }

    pub fn all_converged(&self) -> bool {
        self.reports.iter().all(|r| r.converged)
    }
}

/// Evolve `f` under TV flow, sampling the solution at every grid time.
///
/// The dual field of the previous step seeds the next one, unless starting
/// from zero gives the smaller duality gap (typically right after a
/// structure has been flattened and the old dual no longer fits).
pub fn evolve(f: &ScalarField, grid: &TimeGrid, params: &FlowParams) -> Result<FlowTrajectory> {
    params.validate()?;
    let mut dual = DualField::zeros(f.width(), f.height());
    let mut states = Vec::with_capacity(grid.len());
    let mut reports = Vec::with_capacity(grid.len() - 1);
    states.push(f.clone());
    for k in 0..grid.len() - 1 {
        if k > 0 && tv_energy(&states[k]) <= duality_gap(&states[k], grid.step(k), &dual) {
            dual = DualField::zeros(f.width(), f.height());
        }
        let out = rof_prox_warm(&states[k], grid.step(k), params, &mut dual)?;
        reports.push(out.report);
        states.push(out.u);
    }
    Ok(FlowTrajectory { grid: grid.clone(), states, reports })
}

/// Isotropic discrete total variation with forward differences.
pub fn tv_energy(u: &ScalarField) -> f64 {
    let (w, h) = u.dims();
    let v = u.values();
    let mut total = 0.0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let gx = if x + 1 < w { v[i + 1] - v[i] } else { 0.0 };
            let gy = if y + 1 < h { v[i + w] - v[i] } else { 0.0 };
            total += (gx * gx + gy * gy).sqrt();
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    #[test]
    fn default_grid_shape() {
        let g = TimeGrid::default();
        assert_eq!(g.len(), DEFAULT_STEPS + 1);
        assert_eq!(g.times()[0], 0.0);
        assert!((g.times()[1] - DEFAULT_T_MIN).abs() < 1e-15);
        assert_eq!(g.t_max(), DEFAULT_T_MAX);
        assert!(g.times().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn grid_validation() {
        assert!(TimeGrid::from_times(vec![0.0, 1.0, 2.0]).is_err());
        assert!(TimeGrid::from_times(vec![0.1, 1.0, 2.0, 3.0]).is_err());
        assert!(TimeGrid::from_times(vec![0.0, 1.0, 1.0, 3.0]).is_err());
        assert!(TimeGrid::from_times(vec![0.0, 1.0, 2.0, 3.0]).is_ok());
        assert!(TimeGrid::geometric(0.0, 1.0, 10).is_err());
        assert!(TimeGrid::uniform(1.0, 2).is_err());
    }

    #[test]
    fn params_validation() {
        let mut p = FlowParams::default();
        assert!(p.validate().is_ok());
        p.dual_step = 0.3;
        assert!(p.validate().is_err());
        p.dual_step = 0.25;
        assert!(p.validate().is_ok());
    }

    #[test]
    fn prox_of_constant_is_constant() {
        let g = ScalarField::filled(9, 7, 0.37);
        for theta in [1e-3, 0.5, 40.0] {
            let out = rof_prox(&g, theta, &FlowParams::default()).unwrap();
            assert!(out.report.converged);
            assert!(out.u.values().iter().all(|&v| (v - 0.37).abs() < 1e-15));
        }
    }

    #[test]
    fn tiny_theta_returns_input() {
        let g = synth::disc(32, 32, 10.0, 1.0, 0.0);
        let out = rof_prox(&g, 1e-9, &FlowParams::default()).unwrap();
        let diff = out.u.sub(&g).unwrap().max_abs();
        assert!(diff < 1e-5, "diff {diff}");
    }

    #[test]
    fn prox_preserves_mean() {
        let g = ScalarField::from_fn(23, 17, |x, y| ((x * 31 + y * 17) % 13) as f64 / 13.0);
        let out = rof_prox(&g, 0.7, &FlowParams::default()).unwrap();
        assert!((out.u.mean() - g.mean()).abs() < 1e-12);
    }

    #[test]
    fn tv_of_constant_and_column_step() {
        assert_eq!(tv_energy(&ScalarField::filled(5, 4, 0.3)), 0.0);
        let h = 13;
        let step = ScalarField::from_fn(10, h, |x, _| if x >= 6 { 1.0 } else { 0.0 });
        assert!((tv_energy(&step) - h as f64).abs() < 1e-12);
    }

    #[test]
    fn constant_flow_is_stationary() {
        let f = ScalarField::filled(8, 8, 0.6);
        let traj = evolve(&f, &TimeGrid::default(), &FlowParams::default()).unwrap();
        assert!(traj.states().iter().all(|u| u == &f));
    }
}
