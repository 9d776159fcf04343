//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with
//! a non-zero status if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use tvstrata::gabor::{orientation_distance, orientation_map, GaborBank, OrientationMap, DEFAULT_CONFIDENCE};
use tvstrata::spectv::{
    filter, flow_from_stack, orthogonality_defect, reconstruct, spectrum, transform, transform_with_trajectory,
    SpectralStack, TransferFunction,
};
use tvstrata::surface::{decompose_stack, DecomposeConfig, FitKind};
use tvstrata::synth;
use tvstrata::texapp::{manipulate_luma, ManipulationSpec};
use tvstrata::tvflow::{tv_energy, FlowParams, TimeGrid};
use tvstrata::ScalarField;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn centered(f: &ScalarField) -> ScalarField {
    let m = f.mean();
    f.map(|v| v - m)
}

fn sq_dist(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn max_abs_diff(a: &ScalarField, b: &ScalarField) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Spectral mass `Σ S_k w_k` of nodes selected by `keep`.
fn mass_where(stack: &SpectralStack, keep: impl Fn(f64) -> bool) -> f64 {
    let s = spectrum(stack);
    let w = stack.weights();
    s.times.iter().zip(&s.values).zip(&w).filter(|((t, _), _)| keep(**t)).map(|((_, v), w)| v * w).sum()
}

/// Relative weighted L1 distance between spectra sampled on the same nodes.
fn spectral_l1(a: &[f64], b: &[f64], w: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).zip(w).map(|((x, y), w)| (x - y).abs() * w).sum();
    let den: f64 = b.iter().zip(w).map(|(y, w)| y.abs() * w).sum();
    num / den
}

fn reconstruction() -> Outcome {
    let n = 128;
    let mut composite = synth::disc(n, n, 24.0, 0.4, 0.3);
    composite.axpy(1.0, &synth::square_stripes(n, n, 4.0, 20.0, 0.1));
    let images = [
        ("constant", ScalarField::filled(n, n, 0.5)),
        ("disc", synth::disc(n, n, 20.0, 1.0, 0.0)),
        ("composite", composite),
        ("stripes", synth::square_stripes(n, n, 8.0, 0.0, 0.4).map(|v| v + 0.5)),
        ("natural", synth::natural_like(n, n, 7)),
    ];
    let grid = TimeGrid::default();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for (name, f) in &images {
        let stack = transform(f, &grid, &FlowParams::default()).unwrap();
        let err = max_abs_diff(&reconstruct(&stack), f);
        parts.push(format!("{name} {err:.1e}"));
        worst = worst.max(err);
    }
    outcome(worst <= 0.02, format!("max |f - rec| = {worst:.2e} <= 0.02 ({})", parts.join(", ")))
}

fn disc_impulse() -> Outcome {
    let f = synth::disc(128, 128, 20.0, 1.0, 0.0);
    // Discrete area and perimeter of the unit-height disc.
    let area = f.sum();
    let perimeter = tv_energy(&f);
    let t_star = area / perimeter;
    let grid = TimeGrid::geometric(0.05, 16.0, 60).unwrap();
    let stack = transform(&f, &grid, &FlowParams::default()).unwrap();
    let total = mass_where(&stack, |_| true);
    let inside = mass_where(&stack, |t| (t - t_star).abs() <= 0.2 * t_star);
    let frac = inside / total;
    outcome(frac >= 0.8, format!("t* = {t_star:.3}, mass within ±20% = {:.1}% >= 80%", 100.0 * frac))
}

fn flow_equivalence() -> Outcome {
    let f = synth::natural_like(128, 128, 11);
    let grid = TimeGrid::default();
    let out = transform_with_trajectory(&f, &grid, &FlowParams::default()).unwrap();
    let n = grid.len();
    let scale = centered(&f).l2_norm();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for k in [n / 8, n / 4, n / 2, 3 * n / 4, n - 2] {
        let t = grid.times()[k];
        let u = flow_from_stack(&out.stack, t).unwrap();
        let err = sq_dist(&u, out.trajectory.state(k)).sqrt() / scale;
        parts.push(format!("t={t:.2} {err:.1e}"));
        worst = worst.max(err);
    }
    outcome(worst <= 0.02, format!("max relative L2 = {worst:.2e} <= 0.02 ({})", parts.join(", ")))
}

fn orthogonality() -> Outcome {
    let images = [
        ("disc", synth::disc(128, 128, 20.0, 1.0, 0.0)),
        ("stripes", synth::square_stripes(128, 128, 8.0, 0.0, 0.4).map(|v| v + 0.5)),
    ];
    let grid = TimeGrid::default();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, f) in &images {
        let out = transform_with_trajectory(f, &grid, &FlowParams::default()).unwrap();
        let mean = out.stack.mean_value();
        let scale = centered(f).l2_norm();
        // Interior nodes of the flow's lifetime. Once u(t) is numerically
        // flat, u - mean is solver residue and its angle to φ is noise.
        let alive: Vec<usize> = (1..out.stack.len() - 1)
            .filter(|&k| out.trajectory.state(k + 1).map(|v| v - mean).l2_norm() > 1e-3 * scale)
            .collect();
        let defect = |k: usize| orthogonality_defect(&out.stack, &out.trajectory, k).unwrap();
        let median = |mut v: Vec<f64>| {
            v.sort_by(|a, b| a.total_cmp(b));
            v[v.len() / 2]
        };
        let energies: Vec<f64> = out.stack.layers().iter().map(|l| l.dot(l)).collect();
        let peak = energies.iter().cloned().fold(0.0, f64::max);
        let all = median(alive.iter().map(|&k| defect(k)).collect());
        let loaded: Vec<f64> = alive.iter().filter(|&&k| energies[k] > 1e-8 * peak).map(|&k| defect(k)).collect();
        let loaded_n = loaded.len();
        let loaded = median(loaded);
        parts.push(format!(
            "{name} median {all:.3} over {} nodes (signal-bearing only: {loaded:.3} over {loaded_n})",
            alive.len()
        ));
        pass &= all <= 0.1;
    }
    outcome(pass, format!("{} (<= 0.1)", parts.join(", ")))
}

/// Crosstalk of an ideal split at the geometric mean of the two main peaks.
fn split_crosstalk(f1: &ScalarField, f2: &ScalarField, grid: &TimeGrid, params: &FlowParams) -> (f64, f64, f64) {
    let f = f1.add(f2).unwrap();
    let stack = transform(&f, grid, params).unwrap();
    let s = spectrum(&stack);
    let w = stack.weights();
    let mass: Vec<f64> = s.values.iter().zip(&w).map(|(v, w)| v * w).collect();
    let first = (0..mass.len()).max_by(|&a, &b| mass[a].total_cmp(&mass[b])).unwrap();
    let t_first = s.times[first];
    let second = (0..mass.len())
        .filter(|&k| (s.times[k] / t_first).ln().abs() >= 2f64.ln())
        .max_by(|&a, &b| mass[a].total_cmp(&mass[b]))
        .unwrap();
    let t_c = (t_first * s.times[second]).sqrt();
    let rec1 = filter(&stack, &TransferFunction::below(&stack, t_c), false).unwrap();
    let rec2 = reconstruct(&stack).sub(&rec1).unwrap().map(|v| v - stack.mean_value());
    let e = |rec: &ScalarField, truth: &ScalarField| {
        let c = centered(truth);
        sq_dist(rec, &c) / c.dot(&c)
    };
    (t_c, e(&rec1, f1), e(&rec2, f2))
}

fn separation_1d() -> Outcome {
    let params = FlowParams { max_inner_iters: 5000, inner_tol: 1e-9, ..FlowParams::default() };
    let grid = TimeGrid::geometric(0.05, 40.0, 80).unwrap();
    // Opposite signs keep the plateau between the pulses at rest.
    let a = synth::pulse(4096, 1500, 8, 1.0);
    let b = synth::pulse(4096, 2200, 64, -0.5);
    let (tc_d, d1, d2) = split_crosstalk(&a, &b, &grid, &params);

    let coarse = synth::square_wave_1d(512, 0, 512, 64, 0.5);
    let mut fine = ScalarField::zeros(512, 1);
    for p in 0..8 {
        fine.axpy(1.0, &synth::square_wave_1d(512, p * 64 + 8, 48, 4, 0.25));
    }
    let (tc_o, o1, o2) = split_crosstalk(&fine, &coarse, &grid, &params);
    let (d, o) = (d1.max(d2), o1.max(o2));
    outcome(
        d <= 0.01 && o <= 0.05,
        format!(
            "disjoint crosstalk {:.2}% <= 1% (t_c {tc_d:.2}), oscillating {:.2}% <= 5% (t_c {tc_o:.2})",
            100.0 * d,
            100.0 * o
        ),
    )
}

fn scaling_laws() -> Outcome {
    let mut f = ScalarField::zeros(128, 128);
    synth::add_disc(&mut f, 40.0, 40.0, 24.0, 1.0);
    synth::add_disc(&mut f, 92.0, 90.0, 14.0, 0.6);
    synth::add_disc(&mut f, 94.0, 32.0, 10.0, 0.8);

    let grid = TimeGrid::geometric(0.05, 16.0, 20).unwrap();
    let params = FlowParams { max_inner_iters: 2000, inner_tol: 1e-7, ..FlowParams::default() };
    let sf = spectrum(&transform(&f, &grid, &params).unwrap());

    let mut contrast = Vec::new();
    for a in [0.5, 2.0] {
        let g = transform(&f.scale(a), &grid.scaled(a).unwrap(), &params).unwrap();
        contrast.push((a, spectral_l1(&spectrum(&g).values, &sf.values, &g.weights())));
    }
    // g(x) = f(2x): S_g(t) = S_f(2t) / 2.
    let small = f.downsample_box(2).unwrap();
    let g = transform(&small, &grid.scaled(0.5).unwrap(), &params).unwrap();
    let half: Vec<f64> = sf.values.iter().map(|v| 0.5 * v).collect();
    let spatial = spectral_l1(&spectrum(&g).values, &half, &g.weights());

    let pass = contrast.iter().all(|c| c.1 <= 0.10) && spatial <= 0.15;
    outcome(
        pass,
        format!(
            "contrast a=0.5 {:.2e}, a=2 {:.2e} (<= 10%); spatial a=2 {:.1}% (<= 15%)",
            contrast[0].1,
            contrast[1].1,
            100.0 * spatial
        ),
    )
}

fn circles_on_texture() -> (bool, String) {
    let (w, h) = (128, 128);
    let texture = synth::square_stripes(w, h, 4.0, 30.0, 0.1);
    let mut discs = ScalarField::filled(w, h, 0.3);
    synth::add_disc(&mut discs, 40.0, 44.0, 20.0, 0.4);
    synth::add_disc(&mut discs, 90.0, 86.0, 18.0, 0.35);
    let f = discs.add(&texture).unwrap();
    let grid = TimeGrid::geometric(0.02, 8.0, 40).unwrap();
    let stack = transform(&f, &grid, &FlowParams::default()).unwrap();
    let d = decompose_stack(&stack, 0.03, 1.0, &DecomposeConfig::default()).unwrap();
    let (target, other) = (centered(&texture), centered(&discs));
    let recall = d.texture.dot(&target) / target.dot(&target);
    let contamination = d.texture.dot(&other).abs() / other.dot(&other);
    (
        recall >= 0.9 && contamination <= 0.1,
        format!("recall {:.1}% >= 90%, contamination {:.2}% <= 10%", 100.0 * recall, 100.0 * contamination),
    )
}

fn spatial_split() -> (bool, String) {
    // Target texture varies along x, the other along y. The left half's
    // other texture has the same scale as the right half's target.
    let (w, h) = (128, 128);
    let halves = |a: &ScalarField, b: &ScalarField| {
        ScalarField::from_fn(w, h, |x, y| if x < w / 2 { a.get(x, y) } else { b.get(x, y) })
    };
    let target = halves(
        &synth::square_stripes(w, h, 4.0, 0.0, 0.3),
        &synth::square_stripes(w, h, 16.0, 0.0, 0.3),
    );
    let other = halves(
        &synth::square_stripes(w, h, 16.0, 90.0, 0.3),
        &synth::square_stripes(w, h, 64.0, 90.0, 0.4),
    );
    let f = target.add(&other).unwrap().map(|v| v + 0.5);
    let grid = TimeGrid::geometric(0.05, 8.0, 40).unwrap();
    let stack = transform(&f, &grid, &FlowParams::default()).unwrap();
    let truth = centered(&target);
    let norm = truth.dot(&truth);
    let err = |rec: &ScalarField| sq_dist(rec, &truth) / norm;

    let global = stack
        .layer_times()
        .iter()
        .map(|&tc| err(&filter(&stack, &TransferFunction::below(&stack, tc), false).unwrap()))
        .fold(f64::INFINITY, f64::min);
    let cfg = DecomposeConfig {
        fit: FitKind::Local,
        bandwidth: Some(8.0),
        pct_lo: 5.0,
        pct_hi: 95.0,
        alpha: 0.65,
        ..DecomposeConfig::default()
    };
    let local = err(&decompose_stack(&stack, 0.15, 2.0, &cfg).unwrap().texture);
    (
        global >= 3.0 * local,
        format!("split error: best global cutoff {global:.3} >= 3 x local surface {local:.3}"),
    )
}

fn separation_surface() -> Outcome {
    let (p1, d1) = circles_on_texture();
    let (p2, d2) = spatial_split();
    outcome(p1 && p2, format!("{d1}; {d2}"))
}

fn perspective() -> Outcome {
    let f = synth::graded_stripes(96, 128, 8, 2, 8, 0.3).map(|v| v + 0.5);
    let grid = TimeGrid::geometric(0.05, 8.0, 30).unwrap();
    let stack = transform(&f, &grid, &FlowParams::default()).unwrap();
    let d = decompose_stack(&stack, 0.1, 2.0, &DecomposeConfig::default()).unwrap();
    let p = d.diagnostics.surface.diagnostics.plane;
    outcome(p.b.abs() >= 5.0 * p.a.abs(), format!("plane a = {:.2e}, b = {:.2e}, |b|/|a| = {:.1} >= 5", p.a, p.b, p.b.abs() / p.a.abs()))
}

fn interior(m: &OrientationMap, margin: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    let (w, h) = m.dims();
    (margin..h - margin).flat_map(move |y| (margin..w - margin).map(move |x| (x, y)))
}

fn gabor_sod() -> Outcome {
    let bank = GaborBank::default();
    let bin = bank.bin_width();

    let n = 128;
    let rings = synth::concentric_rings(n, n, 8.0, 1.0);
    let m = orientation_map(&rings, &bank, DEFAULT_CONFIDENCE).unwrap();
    let c = (n as f64 - 1.0) / 2.0;
    let (mut total, mut good) = (0usize, 0usize);
    for (x, y) in interior(&m, 16) {
        let (dx, dy) = (x as f64 - c, y as f64 - c);
        let i = y * n + x;
        if !m.confident[i] || dx.hypot(dy) < 8.0 {
            continue;
        }
        let tangent = (dy.atan2(dx).to_degrees() + 90.0).rem_euclid(180.0);
        total += 1;
        if orientation_distance(m.orientation[i], tangent) <= bin + 1e-9 {
            good += 1;
        }
    }
    let tangent_frac = good as f64 / total as f64;

    // Rotating the image by 90° rotates the map by 90°.
    let f = synth::natural_like(96, 96, 5);
    let (w, h) = f.dims();
    let rot = ScalarField::from_fn(h, w, |xr, yr| f.get(yr, h - 1 - xr));
    let m0 = orientation_map(&f, &bank, DEFAULT_CONFIDENCE).unwrap();
    let m1 = orientation_map(&rot, &bank, DEFAULT_CONFIDENCE).unwrap();
    let (mut both, mut agree) = (0usize, 0usize);
    for (x, y) in interior(&m0, 16) {
        let (i, j) = (y * w + x, x * h + (h - 1 - y));
        if m0.confident[i] && m1.confident[j] {
            both += 1;
            if orientation_distance(m1.orientation[j], m0.orientation[i] + 90.0) <= bin + 1e-9 {
                agree += 1;
            }
        }
    }
    let equi_frac = agree as f64 / both as f64;
    outcome(
        tangent_frac >= 0.9 && equi_frac >= 0.95,
        format!(
            "ring tangent within one bin {:.1}% >= 90% ({total} px); rotation equivariance {:.1}% >= 95% ({both} px)",
            100.0 * tangent_frac,
            100.0 * equi_frac
        ),
    )
}

fn manipulation_algebra() -> Outcome {
    let (w, h) = (96, 96);
    let mut f = synth::disc(w, h, 20.0, 0.4, 0.3);
    f.axpy(1.0, &synth::square_stripes(w, h, 4.0, 0.0, 0.1));
    let stack = transform(&f, &TimeGrid::default(), &FlowParams::default()).unwrap();
    let d = decompose_stack(&stack, 0.03, 1.0, &DecomposeConfig::default()).unwrap();
    let m = |g: f64| manipulate_luma(&f, &d.texture, &ManipulationSpec::new(g).unclamped()).unwrap();

    let identity = m(1.0).values() == f.values()
        && manipulate_luma(&f, &d.texture, &ManipulationSpec::new(1.0)).unwrap().values() == f.values();
    // The residual of the decomposition is the reconstruction minus the texture.
    let removed = max_abs_diff(&m(0.0), &f.sub(&d.texture).unwrap());
    let residual_gap = max_abs_diff(&m(0.0), &d.residual);
    let rec_gap = max_abs_diff(&reconstruct(&stack), &f);
    let (m0, m1) = (m(0.0), m(1.0));
    let mut linear: f64 = 0.0;
    for g in [-1.0, 0.25, 2.0, 3.5] {
        let expected = ScalarField::from_fn(w, h, |x, y| m0.get(x, y) + g * (m1.get(x, y) - m0.get(x, y)));
        linear = linear.max(max_abs_diff(&m(g), &expected));
    }
    let pass = identity && removed <= 1e-12 && residual_gap <= rec_gap + 1e-12 && linear <= 1e-12;
    outcome(
        pass,
        format!(
            "gain 1 identity exact: {identity}; gain 0 vs f - texture {removed:.1e}, vs residual {residual_gap:.1e} \
             (reconstruction gap {rec_gap:.1e}); linearity {linear:.1e} <= 1e-12"
        ),
    )
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("reconstruction identity", reconstruction),
        ("eigenfunction impulse", disc_impulse),
        ("flow equivalence", flow_equivalence),
        ("orthogonality", orthogonality),
        ("1-d separation", separation_1d),
        ("scaling laws", scaling_laws),
        ("separation surface", separation_surface),
        ("perspective plane", perspective),
        ("gabor orientation", gabor_sod),
        ("manipulation algebra", manipulation_algebra),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        println!("{} {name}: {} [{secs:.1}s]", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", 10 - failed, 10);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
