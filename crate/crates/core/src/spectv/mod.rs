//! Spectral TV transform.
//!
//! Layers are `φ(t_k) = t_k · ∂²u/∂t²(t_k)` at every interior grid node,
//! computed with the three-point divided difference for non-uniform grids.
//! Integrating the layers with trapezoidal node weights and adding the
//! finite-horizon residual `u(T) - T·u_t(T)` telescopes back to `f` exactly,
//! whatever the accuracy of the flow solver.

mod store;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imagecore::ScalarField;
use crate::tvflow::{evolve, FlowParams, FlowTrajectory, ProxReport, TimeGrid};

pub use store::{load_stack, save_stack, STACK_MANIFEST};

/// Output of the forward transform.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralStack {
    grid: TimeGrid,
    layers: Vec<ScalarField>,
    residual: ScalarField,
    /// Backward difference `u_t(T)` at the horizon. Needed to express the flow
    /// state at intermediate times through the layers.
    terminal_slope: ScalarField,
    mean_value: f64,
}

impl SpectralStack {
    pub fn from_parts(
        grid: TimeGrid,
        layers: Vec<ScalarField>,
        residual: ScalarField,
        terminal_slope: ScalarField,
        mean_value: f64,
    ) -> Result<Self> {
        if layers.len() + 2 != grid.len() {
            return Err(Error::Contract(format!(
                "{} layers do not match a grid of {} times",
                layers.len(),
                grid.len()
            )));
        }
        for l in &layers {
            residual.check_dims(l)?;
        }
        residual.check_dims(&terminal_slope)?;
        Ok(Self { grid, layers, residual, terminal_slope, mean_value })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn layers(&self) -> &[ScalarField] {
        &self.layers
    }

    pub fn layer(&self, k: usize) -> &ScalarField {
        &self.layers[k]
    }

    /// Time of layer `k` (grid node `k + 1`).
    pub fn layer_time(&self, k: usize) -> f64 {
        self.grid.times()[k + 1]
    }

    pub fn layer_times(&self) -> &[f64] {
        self.grid.interior()
    }

    /// Trapezoidal quadrature weight of each layer.
    pub fn weights(&self) -> Vec<f64> {
        self.grid.interior_weights()
    }

    pub fn residual(&self) -> &ScalarField {
        &self.residual
    }

    pub fn terminal_slope(&self) -> &ScalarField {
        &self.terminal_slope
    }

    pub fn mean_value(&self) -> f64 {
        self.mean_value
    }

    pub fn dims(&self) -> (usize, usize) {
        self.residual.dims()
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// The same decomposition with every layer, the residual and the slope
    /// multiplied by `a`.
    pub fn scaled(&self, a: f64) -> SpectralStack {
        SpectralStack {
            grid: self.grid.clone(),
            layers: self.layers.iter().map(|l| l.scale(a)).collect(),
            residual: self.residual.scale(a),
            terminal_slope: self.terminal_slope.scale(a),
            mean_value: a * self.mean_value,
        }
    }
}

/// Stack together with the trajectory and solver reports it was built from.
#[derive(Clone, Debug)]
pub struct TransformOutput {
    pub stack: SpectralStack,
    pub trajectory: FlowTrajectory,
}

impl TransformOutput {
    pub fn reports(&self) -> &[ProxReport] {
        self.trajectory.reports()
    }
}

/// Forward transform of `f`.
pub fn transform(f: &ScalarField, grid: &TimeGrid, params: &FlowParams) -> Result<SpectralStack> {
    Ok(transform_with_trajectory(f, grid, params)?.stack)
}

pub fn transform_with_trajectory(f: &ScalarField, grid: &TimeGrid, params: &FlowParams) -> Result<TransformOutput> {
    let trajectory = evolve(f, grid, params)?;
    let stack = stack_from_trajectory(&trajectory, f.mean())?;
    Ok(TransformOutput { stack, trajectory })
}

/// Build layers and residual from a sampled flow.
pub fn stack_from_trajectory(trajectory: &FlowTrajectory, mean_value: f64) -> Result<SpectralStack> {
    let grid = trajectory.grid().clone();
    let t = grid.times();
    let states = trajectory.states();
    let n = t.len();
    if states.len() != n {
        return Err(Error::Contract("trajectory length does not match its grid".into()));
    }
    let (w, h) = states[0].dims();

    let layers: Vec<ScalarField> = (1..n - 1)
        .into_par_iter()
        .map(|k| {
            let h_prev = t[k] - t[k - 1];
            let h_next = t[k + 1] - t[k];
            let c_prev = 2.0 / (h_prev * (h_prev + h_next));
            let c_next = 2.0 / (h_next * (h_prev + h_next));
            let (a, b, c) = (states[k - 1].values(), states[k].values(), states[k + 1].values());
            let tk = t[k];
            let values = (0..w * h)
                .map(|i| tk * (c_prev * (a[i] - b[i]) + c_next * (c[i] - b[i])))
                .collect();
            ScalarField::from_vec_unchecked(w, h, values)
        })
        .collect();

    let t_max = t[n - 1];
    let last_step = t[n - 1] - t[n - 2];
    let terminal_slope = states[n - 1].zip_map(&states[n - 2], |b, a| (b - a) / last_step)?;
    let residual = states[n - 1].zip_map(&terminal_slope, |u, s| u - t_max * s)?;
    SpectralStack::from_parts(grid, layers, residual, terminal_slope, mean_value)
}

/// Per-layer L1 amplitude.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Index of the largest value; ties go to the earlier time.
    pub fn argmax(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (k, &v) in self.values.iter().enumerate() {
            if best.is_none_or(|b| v > self.values[b]) {
                best = Some(k);
            }
        }
        best
    }

    /// `Σ S_k · w_k` with the trapezoidal weights of the grid.
    pub fn mass(&self, weights: &[f64]) -> f64 {
        self.values.iter().zip(weights).map(|(s, w)| s * w).sum()
    }

    /// CSV with header `t,S`, one row per layer, shortest round-trip floats.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,S\n");
        for (t, s) in self.times.iter().zip(&self.values) {
            out.push_str(&format!("{t:?},{s:?}\n"));
        }
        out
    }
}

/// Pixel area used when integrating over the image domain.
pub const PIXEL_AREA: f64 = 1.0;

pub fn spectrum(stack: &SpectralStack) -> Spectrum {
    let values = stack.layers.par_iter().map(|l| l.l1_norm() * PIXEL_AREA).collect();
    Spectrum { times: stack.layer_times().to_vec(), values }
}

/// Per-layer filter gains, either one scalar per layer or one field per layer.
#[derive(Clone, Debug)]
pub enum TransferFunction {
    Scalar(Vec<f64>),
    Spatial(Vec<ScalarField>),
}

impl TransferFunction {
    pub fn len(&self) -> usize {
        match self {
            TransferFunction::Scalar(v) => v.len(),
            TransferFunction::Spatial(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn constant(stack: &SpectralStack, value: f64) -> Self {
        TransferFunction::Scalar(vec![value; stack.len()])
    }

    /// `H = 1` on layers with `lo <= t <= hi`, zero elsewhere.
    pub fn band(stack: &SpectralStack, lo: f64, hi: f64) -> Self {
        TransferFunction::Scalar(stack.layer_times().iter().map(|&t| if t >= lo && t <= hi { 1.0 } else { 0.0 }).collect())
    }

    /// Ideal low pass: `H = 1` for `t < cutoff`.
    pub fn below(stack: &SpectralStack, cutoff: f64) -> Self {
        TransferFunction::Scalar(stack.layer_times().iter().map(|&t| if t < cutoff { 1.0 } else { 0.0 }).collect())
    }

    /// `H^t(τ) = (τ - t)/τ` for `τ >= t`, zero before: the filter whose
    /// output is the flow solution at time `t`.
    pub fn flow_at(stack: &SpectralStack, t: f64) -> Self {
        TransferFunction::Scalar(stack.layer_times().iter().map(|&tau| if tau >= t { (tau - t) / tau } else { 0.0 }).collect())
    }

    fn validate(&self, stack: &SpectralStack) -> Result<()> {
        if self.len() != stack.len() {
            return Err(Error::Contract(format!(
                "transfer function has {} entries, stack has {} layers",
                self.len(),
                stack.len()
            )));
        }
        match self {
            TransferFunction::Scalar(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::Contract("transfer function has non-finite entries".into()));
                }
            }
            TransferFunction::Spatial(fields) => {
                for f in fields {
                    stack.residual.check_dims(f)?;
                    if !f.is_finite() {
                        return Err(Error::Contract("transfer function has non-finite entries".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// `Σ_k H_k·φ_k·w_k`, plus the residual when requested.
pub fn filter(stack: &SpectralStack, transfer: &TransferFunction, include_residual: bool) -> Result<ScalarField> {
    transfer.validate(stack)?;
    let (w, h) = stack.dims();
    let weights = stack.weights();
    let mut out = if include_residual { stack.residual.clone() } else { ScalarField::zeros(w, h) };
    let acc = out.values_mut();
    match transfer {
        TransferFunction::Scalar(gains) => {
            for ((layer, &g), &wk) in stack.layers.iter().zip(gains).zip(&weights) {
                let c = g * wk;
                if c == 0.0 {
                    continue;
                }
                acc.par_iter_mut().zip(layer.values().par_iter()).for_each(|(a, &p)| *a += c * p);
            }
        }
        TransferFunction::Spatial(gains) => {
            for ((layer, g), &wk) in stack.layers.iter().zip(gains).zip(&weights) {
                acc.par_iter_mut()
                    .zip(layer.values().par_iter().zip(g.values().par_iter()))
                    .for_each(|(a, (&p, &gv))| *a += gv * wk * p);
            }
        }
    }
    Ok(out)
}

/// Inverse transform: all layers plus residual.
pub fn reconstruct(stack: &SpectralStack) -> ScalarField {
    filter(stack, &TransferFunction::constant(stack, 1.0), true).expect("unit transfer function always matches")
}

/// Flow state `u(t)` recovered from the layers.
///
/// The finite-horizon residual is corrected by `t·u_t(T)`, which makes the
/// result equal the stored trajectory at grid nodes and its linear
/// interpolation in between.
pub fn flow_from_stack(stack: &SpectralStack, t: f64) -> Result<ScalarField> {
    if !(t >= 0.0 && t <= stack.grid.t_max()) {
        return Err(Error::Range(format!("t = {t} is outside [0, {}]", stack.grid.t_max())));
    }
    let mut out = filter(stack, &TransferFunction::flow_at(stack, t), true)?;
    out.axpy(t, &stack.terminal_slope);
    Ok(out)
}

/// Normalized `|<u(t_k) - f̄, φ_k>|` for layer `k`. Zero layers give zero.
pub fn orthogonality_defect(stack: &SpectralStack, trajectory: &FlowTrajectory, k: usize) -> Result<f64> {
    if k >= stack.len() {
        return Err(Error::Range(format!("layer {k} out of range (stack has {})", stack.len())));
    }
    if trajectory.states().len() != stack.grid.len() {
        return Err(Error::Contract("trajectory does not match stack grid".into()));
    }
    let u = trajectory.state(k + 1);
    let phi = &stack.layers[k];
    u.check_dims(phi)?;
    let mean = stack.mean_value;
    let (mut dot, mut uu) = (0.0, 0.0);
    for (&a, &b) in u.values().iter().zip(phi.values()) {
        let c = a - mean;
        dot += c * b;
        uu += c * c;
    }
    let pp = phi.dot(phi);
    if pp == 0.0 {
        return Ok(0.0);
    }
    Ok(dot.abs() / (uu.sqrt() * pp.sqrt() + 1e-300))
}
