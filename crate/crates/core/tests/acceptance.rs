//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any gating criterion fails. Run with `--nocapture` to
//! see the report.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trajrisk_core::data::{
    butterworth_forward, butterworth_lowpass, extract_windows, parse_highd, parse_ngsim, preprocess, split_dataset, write_highd, write_store,
    PreprocessConfig, RawRecording, Sample, Source, SplitUnit, StoreManifest, WindowConfig,
};
use trajrisk_core::plan::{eval_segment, quintic_lateral, spline_fit, CandidateTrajectory, SplineEnd};
use trajrisk_core::predictor::{
    Ablation, Baseline, Channels, GaussianParams, GaussianTrajectory, MeanAnchor, ModelConfig, Predictor,
};
use trajrisk_core::risk::{aggregate_risk, distance_margin, ov_spline_from_means, pair_risk, risk_value, sat_overlap, separation, ttc, PairDims, RiskParams, RiskProfile};
use trajrisk_core::scenario::{assess, fixtures, AssessConfig, OvModel};
use trajrisk_core::scene::{obb_at, Dims, LaneGeometry, MotionState, Obb, Pose, Track, VehicleId};
use trajrisk_core::synthetic::{highway, interaction_samples, kinematic_samples, HighwayConfig};
use trajrisk_core::tensor::{grad_check, lstm_cell, GradCheckOptions, ParamVars, Stencil, Tape, Tensor, TensorError, Var};
use trajrisk_core::train::{config_fingerprint, dataset_loss, evaluate, evaluate_baseline, nll_loss, Phase, TrainConfig, Trainer};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn lanes() -> LaneGeometry {
    LaneGeometry::new(vec![2.0, 6.0, 14.4, 18.4], 4.0).unwrap()
}

// ---- 1: gradients ----

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn positive(t: Tensor) -> Tensor {
    let d = t.data().iter().map(|v| v.abs() + 0.5).collect();
    Tensor::new(t.shape().to_vec(), d).unwrap()
}

/// Weighted sum so every output element has its own sensitivity.
fn weigh(tape: &mut Tape, out: Var) -> Result<Var, TensorError> {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let w = tape.leaf(Tensor::new(shape, (0..n).map(|i| 0.3 + ((i * 7919) % 13) as f64 / 10.0).collect())?);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn primitive_error<F>(f: F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    grad_check(
        |tape: &mut Tape, v: &[Var]| {
            let out = f(tape, v)?;
            weigh(tape, out)
        },
        inputs,
        &GradCheckOptions::default(),
    )
    .unwrap()
    .max_rel_error
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let r = &mut rng;
    let cases: Vec<(&str, f64)> = vec![
        ("matmul", primitive_error(|t, v| t.matmul(v[0], v[1]), &[random(&[3, 4], r), random(&[4, 2], r)])),
        ("add", primitive_error(|t, v| t.add(v[0], v[1]), &[random(&[3, 4], r), random(&[4], r)])),
        ("sub", primitive_error(|t, v| t.sub(v[0], v[1]), &[random(&[2, 3], r), random(&[2, 3], r)])),
        ("mul", primitive_error(|t, v| t.mul(v[0], v[1]), &[random(&[2, 3], r), random(&[3], r)])),
        ("div", primitive_error(|t, v| t.div(v[0], v[1]), &[random(&[2, 3], r), positive(random(&[2, 3], r))])),
        ("scale", primitive_error(|t, v| Ok(t.scale(v[0], 2.3)), &[random(&[5], r)])),
        ("offset", primitive_error(|t, v| Ok(t.offset(v[0], -0.4)), &[random(&[5], r)])),
        ("concat", primitive_error(|t, v| t.concat(&[v[0], v[1]], 0), &[random(&[2, 3], r), random(&[1, 3], r)])),
        ("slice", primitive_error(|t, v| t.slice(v[0], 2, 1, 2), &[random(&[2, 2, 4], r)])),
        ("reshape", primitive_error(|t, v| t.reshape(v[0], &[4, 3]), &[random(&[2, 6], r)])),
        ("gather", primitive_error(|t, v| t.gather(v[0], vec![Some(1), None, Some(4), Some(1), Some(0), None], &[3, 2]), &[random(&[5], r)])),
        ("sum_axis", primitive_error(|t, v| t.sum_axis(v[0], 0), &[random(&[3, 2, 2], r)])),
        ("sum", primitive_error(|t, v| Ok(t.sum(v[0])), &[random(&[2, 5], r)])),
        ("mean", primitive_error(|t, v| Ok(t.mean(v[0])), &[random(&[2, 5], r)])),
        ("leaky_relu", primitive_error(|t, v| Ok(t.leaky_relu(v[0], 0.1)), &[random(&[4, 4], r)])),
        ("tanh", primitive_error(|t, v| Ok(t.tanh(v[0])), &[random(&[4, 4], r)])),
        ("sigmoid", primitive_error(|t, v| Ok(t.sigmoid(v[0])), &[random(&[4, 4], r)])),
        ("exp", primitive_error(|t, v| Ok(t.exp(v[0])), &[random(&[4, 4], r)])),
        ("log", primitive_error(|t, v| Ok(t.log(v[0])), &[positive(random(&[4, 4], r))])),
        ("sqrt", primitive_error(|t, v| Ok(t.sqrt(v[0])), &[positive(random(&[4, 4], r))])),
        ("square", primitive_error(|t, v| Ok(t.square(v[0])), &[random(&[4, 4], r)])),
        ("clamp", primitive_error(|t, v| Ok(t.clamp(v[0], -0.6, 0.4)), &[random(&[4, 4], r)])),
        ("softmax", primitive_error(|t, v| t.softmax(v[0], None), &[random(&[2, 6], r)])),
        ("softmax_masked", primitive_error(|t, v| t.softmax(v[0], Some(&[true, true, false, false, true, true])), &[random(&[2, 3], r)])),
        (
            "conv2d",
            primitive_error(
                |t, v| t.conv2d(v[0], v[1], v[2], (1, 1)),
                &[random(&[2, 2, 4, 3], r), random(&[3, 2, 2, 2], r), random(&[3], r)],
            ),
        ),
        ("max_pool2d", primitive_error(|t, v| t.max_pool2d(v[0], (2, 2), (1, 1)), &[random(&[2, 2, 4, 3], r)])),
        (
            "lstm_cell",
            primitive_error(
                |t, v| {
                    let (h, c) = lstm_cell(t, v[0], v[1], v[2], v[3], v[4])?;
                    t.concat(&[h, c], 1)
                },
                &[random(&[2, 3], r), random(&[2, 4], r), random(&[2, 4], r), random(&[7, 16], r), random(&[16], r)],
            ),
        ),
    ];
    let (worst_name, worst) = cases.iter().fold(("", 0.0f64), |acc, (n, e)| if *e > acc.1 { (n, *e) } else { acc });
    ensure(worst < 1e-4, format!("primitive {worst_name}: max relative error {worst:e}"))?;

    let samples = interaction_samples(21, 2).unwrap();
    let refs: Vec<&Sample> = samples.iter().collect();
    let mut model_worst = 0.0f64;
    let configs = [4, 8].into_iter().flat_map(|h| Channels::ALL.into_iter().map(move |c| (h, c)));
    for (hidden, channels) in configs {
        // The anchor adds a constant offset to the means; without it the
        // summed output stays small enough for finite differences.
        let cfg = ModelConfig { mean_anchor: MeanAnchor::Origin, ..ModelConfig::uniform(hidden) };
        let p = Predictor::new(cfg, Ablation { channels, ..Ablation::default() }, 3).unwrap();
        let batch = p.batch(&refs);
        let report = grad_check(
            |tape, vars| {
                let pv = ParamVars::from_vars(&p.params, vars);
                let out = p.forward(tape, &pv, &batch).map_err(|e| TensorError::Invalid { op: "forward", msg: e.to_string() })?;
                let m = tape.scale(out.mu, 0.01);
                let a = tape.sum(m);
                let b = tape.sum(out.sigma);
                let c = tape.sum(out.rho);
                let ab = tape.add(a, b)?;
                tape.add(ab, c)
            },
            &p.params.tensors(),
            // The summed outputs are O(100): rounding leaves about 1e-10 of
            // noise in each difference quotient even with the five-point
            // formula, so gradients under 1e-6 are held to that absolute level.
            &GradCheckOptions { max_coords: 300, eps: 1e-4, stencil: Stencil::FivePoint, floor: 1e-6, ..Default::default() },
        )
        .unwrap();
        ensure(report.max_rel_error < 1e-4, format!("model hidden {hidden} {}: {report:?}", channels.label()))?;
        model_worst = model_worst.max(report.max_rel_error);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, format!("took {secs:.1} s"))?;
    Ok(format!("{} primitives max {worst:.1e}, full model (hidden 4 and 8, all channel sets, five-point, floor 1e-6) max {model_worst:.1e}, {secs:.1} s", cases.len()))
}

// ---- 2: NLL ----

/// -ln N(p; μ, Σ) through the explicit covariance matrix and its adjugate.
fn gaussian_nll_oracle(g: &GaussianParams, p: [f64; 2]) -> f64 {
    let s = [[g.sigma_x * g.sigma_x, g.rho * g.sigma_x * g.sigma_y], [g.rho * g.sigma_x * g.sigma_y, g.sigma_y * g.sigma_y]];
    let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
    let inv = [[s[1][1] / det, -s[0][1] / det], [-s[1][0] / det, s[0][0] / det]];
    let d = [p[0] - g.mu_x, p[1] - g.mu_y];
    let quad = d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1]);
    (2.0 * PI).ln() + 0.5 * det.ln() + 0.5 * quad
}

fn nll_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for case in 0..1000 {
        let steps: Vec<GaussianParams> = (0..25)
            .map(|_| GaussianParams {
                mu_x: rng.random_range(-30.0..30.0),
                mu_y: rng.random_range(-6.0..6.0),
                sigma_x: rng.random_range(0.1..6.0),
                sigma_y: rng.random_range(0.1..6.0),
                rho: rng.random_range(-0.9..0.9),
            })
            .collect();
        let truth: Vec<[f64; 2]> = steps.iter().map(|g| [g.mu_x + rng.random_range(-5.0..5.0), g.mu_y + rng.random_range(-3.0..3.0)]).collect();
        let expected: f64 = steps.iter().zip(&truth).map(|(g, p)| gaussian_nll_oracle(g, *p)).sum();
        let got = nll_loss(&GaussianTrajectory { t0: 0.0, steps }, &truth).map_err(|e| e.to_string())?;
        let rel = (got - expected).abs() / expected.abs().max(1.0);
        ensure(rel < 1e-10, format!("case {case}: {got} vs {expected}"))?;
        worst = worst.max(rel);
    }
    let unit = GaussianParams { mu_x: 3.0, mu_y: -1.0, sigma_x: 1.0, sigma_y: 1.0, rho: 0.0 };
    let at_mean = nll_loss(&GaussianTrajectory { t0: 0.0, steps: vec![unit; 25] }, &[[3.0, -1.0]; 25]).map_err(|e| e.to_string())?;
    let gap = (at_mean - 25.0 * (2.0 * PI).ln()).abs();
    ensure(gap < 1e-9, format!("mean-at-truth {at_mean}"))?;
    Ok(format!("1000 cases, max relative deviation {worst:.1e}; at-mean {at_mean:.9} (|Δ| {gap:.1e})"))
}

// ---- 3: overfit ----

fn overfit() -> Outcome {
    let samples = interaction_samples(1, 32).map_err(|e| e.to_string())?;
    let model_cfg = ModelConfig {
        decoder_hidden: 96,
        encoder_hidden: 48,
        embed_dim: 24,
        conv1_filters: 48,
        conv2_filters: 12,
        gat_dim: 48,
        ch1_dim: 24,
        ..ModelConfig::default()
    };
    let base = Predictor::new(model_cfg, Ablation::default(), 0).map_err(|e| e.to_string())?;
    // The NLL phase restarts Adam at a tenth of the pretraining rate.
    let cfg = TrainConfig {
        batch_size: 32,
        lr: 0.003,
        pretrain_epochs: 400,
        formal_epochs: 300,
        early_stop_patience: 1000,
        seed: 0,
        clip_norm: Some(1.0),
        formal_lr: Some(0.0003),
    };

    // Determinism: a short run across the phase switch, twice.
    let short = TrainConfig { pretrain_epochs: 3, formal_epochs: 3, ..cfg };
    let curve = || -> Result<Vec<u64>, String> {
        let mut t = Trainer::new(&samples, &samples, base.clone(), short).map_err(|e| e.to_string())?;
        while t.run_epoch().map_err(|e| e.to_string())?.is_some() {}
        Ok(t.state().curve.iter().flat_map(|r| [r.train_loss.to_bits(), r.val_loss.to_bits()]).collect())
    };
    ensure(curve()? == curve()?, "loss sequence differs between identical runs")?;

    // With batch = dataset size, one formal epoch is one optimizer step.
    let mut trainer = Trainer::new(&samples, &samples, base.clone(), cfg).map_err(|e| e.to_string())?;
    let rmse_now = |t: &Trainer| dataset_loss(&Predictor { params: t.state().current.clone(), ..base.clone() }, &samples, Phase::Pretrain);
    let (mut step, mut first, mut best, mut pretrained, mut last) = (0, None, f64::INFINITY, f64::NAN, f64::NAN);
    while let Some(rec) = trainer.run_epoch().map_err(|e| e.to_string())? {
        if rec.phase == Phase::Pretrain {
            if rec.epoch == cfg.pretrain_epochs {
                pretrained = rmse_now(&trainer).map_err(|e| e.to_string())?;
            }
            continue;
        }
        step += 1;
        last = rmse_now(&trainer).map_err(|e| e.to_string())?;
        best = best.min(last);
        if last < 0.1 && first.is_none() {
            first = Some(step);
        }
    }
    let detail = format!("train RMSE {pretrained:.3} m after pretraining; NLL phase min {best:.3} m, {last:.3} m at step {step}");
    match first {
        Some(k) => Ok(format!("below 0.1 m at NLL step {k}; {detail}; loss sequence reproducible")),
        None => Err(detail),
    }
}

// ---- 4: baselines ----

fn baselines() -> Outcome {
    let cv = evaluate_baseline(Baseline::Cv, &kinematic_samples(41, 20, [0.0, 0.0])).map_err(|e| e.to_string())?;
    ensure(cv.rmse_at == [0.0; 5], format!("cv on constant velocity: {:?}", cv.rmse_at))?;
    let oracle = [0.5, 2.0, 4.5, 8.0, 12.5];
    for a in [[1.0, 0.0], [0.6, 0.8]] {
        let r = evaluate_baseline(Baseline::Cv, &kinematic_samples(42, 20, a)).map_err(|e| e.to_string())?;
        for (got, want) in r.rmse_at.iter().zip(oracle) {
            ensure((got - want).abs() < 1e-9, format!("cv on a = {a:?}: {:?}", r.rmse_at))?;
        }
    }
    Ok(format!("cv: 0 on constant velocity, {:?} m on |a| = 1", oracle))
}

// ---- 5: quintic and spline ----

fn poly(c: &[f64], t: f64) -> (f64, f64, f64) {
    let mut v = (0.0, 0.0, 0.0);
    for (k, ck) in c.iter().enumerate() {
        let k = k as i32;
        v.0 += ck * t.powi(k);
        if k >= 1 {
            v.1 += k as f64 * ck * t.powi(k - 1);
        }
        if k >= 2 {
            v.2 += (k * (k - 1)) as f64 * ck * t.powi(k - 2);
        }
    }
    v
}

fn quintic_and_spline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let mut worst_q = 0.0f64;
    for _ in 0..1000 {
        let (y0, v0, a0, yf) = (rng.random_range(-20.0..20.0), rng.random_range(-3.0..3.0), rng.random_range(-2.0..2.0), rng.random_range(-20.0..20.0));
        let tf = rng.random_range(0.5..8.0);
        let c = quintic_lateral(y0, v0, a0, yf, tf).map_err(|e| e.to_string())?;
        let (s, e) = (poly(&c, 0.0), poly(&c, tf));
        for r in [s.0 - y0, s.1 - v0, s.2 - a0, e.0 - yf, e.1, e.2] {
            worst_q = worst_q.max(r.abs());
        }
    }
    ensure(worst_q < 1e-9, format!("quintic residual {worst_q:e}"))?;

    let mut worst_cubic = 0.0f64;
    for _ in 0..200 {
        let kx = [rng.random_range(-50.0..50.0), rng.random_range(0.0..35.0), rng.random_range(-1.5..1.5), rng.random_range(-0.2..0.2)];
        let ky = [rng.random_range(0.0..20.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5), rng.random_range(-0.05..0.05)];
        let pts: Vec<[f64; 2]> = (0..26).map(|i| [poly(&kx, 0.2 * i as f64).0, poly(&ky, 0.2 * i as f64).0]).collect();
        let sp = spline_fit(0.0, 0.2, &pts, [kx[1], ky[1]], [2.0 * kx[2], 2.0 * ky[2]], SplineEnd::NotAKnot).map_err(|e| e.to_string())?;
        for j in 0..=250 {
            let t = 0.02 * j as f64;
            for (axis, k) in [(&sp.x, &kx), (&sp.y, &ky)] {
                let (got, want) = (axis.eval(t), poly(k, t));
                worst_cubic = worst_cubic.max((got.0 - want.0).abs()).max((got.1 - want.1).abs()).max((got.2 - want.2).abs());
            }
        }
    }
    ensure(worst_cubic < 1e-9, format!("cubic reproduction {worst_cubic:e}"))?;

    let mut worst_knot = 0.0f64;
    for _ in 0..200 {
        let amp = [rng.random_range(0.5..3.0), rng.random_range(0.1..1.0)];
        let freq = [rng.random_range(0.1..1.0), rng.random_range(0.1..1.5)];
        let speed = rng.random_range(0.0..35.0);
        let pts: Vec<[f64; 2]> = (0..26)
            .map(|i| {
                let t = 0.2 * i as f64;
                [speed * t + amp[0] * (freq[0] * t).sin(), 4.0 + amp[1] * (freq[1] * t).cos()]
            })
            .collect();
        let v0 = [speed + amp[0] * freq[0], 0.0];
        let sp = spline_fit(0.0, 0.2, &pts, v0, [0.0, -amp[1] * freq[1] * freq[1]], SplineEnd::NotAKnot).map_err(|e| e.to_string())?;
        for (ax, spline) in [&sp.x, &sp.y].into_iter().enumerate() {
            let segs = &spline.segments;
            for k in 0..segs.len() {
                worst_knot = worst_knot.max((eval_segment(&segs[k], 0.0).0 - pts[k][ax]).abs());
                worst_knot = worst_knot.max((eval_segment(&segs[k], 0.2).0 - pts[k + 1][ax]).abs());
            }
            for k in 1..segs.len() {
                let (l, r) = (eval_segment(&segs[k - 1], 0.2), eval_segment(&segs[k], 0.0));
                worst_knot = worst_knot.max((l.0 - r.0).abs()).max((l.1 - r.1).abs()).max((l.2 - r.2).abs());
            }
            worst_knot = worst_knot.max((segs[0][1] - v0[ax]).abs());
        }
    }
    ensure(worst_knot < 1e-9, format!("knot residual {worst_knot:e}"))?;
    Ok(format!("quintic max residual {worst_q:.1e}; cubic reproduction {worst_cubic:.1e}; C0/C1/C2 knots {worst_knot:.1e}"))
}

// ---- 6: SAT ----

/// Euclidean distance from `p` to the box (0 inside).
fn point_box_distance(o: &Obb, p: [f64; 2]) -> f64 {
    let [u, v] = o.axes();
    let d = [p[0] - o.center[0], p[1] - o.center[1]];
    let lu = (d[0] * u[0] + d[1] * u[1]).abs() - o.half_length;
    let lv = (d[0] * v[0] + d[1] * v[1]).abs() - o.half_width;
    lu.max(0.0).hypot(lv.max(0.0))
}

enum Raster {
    Overlap,
    Disjoint,
    /// Only cells below the resolution floor remain.
    Unresolved,
}

/// Adaptive rasterization: square cells are split until a cell center lies
/// in both boxes, every cell is provably outside one of them, or cells reach
/// `floor` meters.
fn raster_overlap(a: &Obb, b: &Obb, floor: f64) -> Raster {
    let bounds = |o: &Obb| {
        let c = o.corners();
        let xs = c.iter().map(|p| p[0]);
        let ys = c.iter().map(|p| p[1]);
        [xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max), ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max)]
    };
    let (ba, bb) = (bounds(a), bounds(b));
    let (x0, x1, y0, y1) = (ba[0].max(bb[0]), ba[1].min(bb[1]), ba[2].max(bb[2]), ba[3].min(bb[3]));
    if x0 > x1 || y0 > y1 {
        return Raster::Disjoint;
    }
    let half = 0.5 * (x1 - x0).max(y1 - y0) + 1e-9;
    let mut stack = vec![(0.5 * (x0 + x1), 0.5 * (y0 + y1), half)];
    let mut unresolved = false;
    let mut budget = 4_000_000usize;
    while let Some((cx, cy, h)) = stack.pop() {
        budget = budget.saturating_sub(1);
        if budget == 0 {
            return Raster::Unresolved;
        }
        let (da, db) = (point_box_distance(a, [cx, cy]), point_box_distance(b, [cx, cy]));
        if da == 0.0 && db == 0.0 {
            return Raster::Overlap;
        }
        let reach = h * std::f64::consts::SQRT_2;
        if da > reach || db > reach {
            continue;
        }
        if h < floor {
            unresolved = true;
            continue;
        }
        let q = 0.5 * h;
        stack.extend([(cx - q, cy - q, q), (cx + q, cy - q, q), (cx - q, cy + q, q), (cx + q, cy + q, q)]);
    }
    if unresolved {
        Raster::Unresolved
    } else {
        Raster::Disjoint
    }
}

fn random_obb(rng: &mut ChaCha8Rng) -> Obb {
    let pose = Pose::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0), rng.random_range(-PI..PI));
    obb_at(pose, Dims::new(rng.random_range(0.5..8.0), rng.random_range(0.5..3.0)).unwrap()).unwrap()
}

/// Minimum distance from points sampled along each box's boundary to the other box.
fn sampled_distance(a: &Obb, b: &Obb, per_edge: usize) -> f64 {
    let mut best = f64::INFINITY;
    for (from, to) in [(a, b), (b, a)] {
        let c = from.corners();
        for e in 0..4 {
            let (p, q) = (c[e], c[(e + 1) % 4]);
            for k in 0..=per_edge {
                let s = k as f64 / per_edge as f64;
                best = best.min(point_box_distance(to, [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]));
            }
        }
    }
    best
}

fn sat_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut overlaps, mut near) = (0, 0);
    let mut worst_excess = f64::NEG_INFINITY;
    for i in 0..10_000 {
        let (a, b) = (random_obb(&mut rng), random_obb(&mut rng));
        let sat = sat_overlap(&a, &b);
        let sep = separation(&a, &b);
        let agrees = match raster_overlap(&a, &b, 1e-7) {
            Raster::Overlap => sat,
            Raster::Disjoint => !sat,
            Raster::Unresolved => false,
        };
        if !agrees {
            ensure(sep.abs() < 1e-6, format!("pair {i}: SAT {sat} disagrees with the raster oracle at separation {sep:e}"))?;
            near += 1;
        }
        overlaps += sat as usize;

        let theta: f64 = rng.random_range(-PI..PI);
        let [a0, a1] = a.axes();
        let [b0, b1] = b.axes();
        let sampled = sampled_distance(&a, &b, 200);
        for axis in [[1.0, 0.0], [0.0, 1.0], a0, a1, b0, b1, [theta.cos(), theta.sin()]] {
            let m = distance_margin(&a, &b, axis).map_err(|e| e.to_string())?;
            worst_excess = worst_excess.max(m - sampled);
            ensure(m <= sampled + 1e-3, format!("pair {i}: margin {m} exceeds sampled distance {sampled}"))?;
        }
    }
    Ok(format!("10000 pairs ({overlaps} overlapping), {near} near-contact disagreements; margin - sampled distance <= {worst_excess:.2e}"))
}

// ---- 7: risk algebra ----

fn cv_spline(state: &MotionState) -> trajrisk_core::plan::SplineTrajectory {
    let means: Vec<[f64; 2]> = (1..=25).map(|k| [state.x + state.vx * 0.2 * k as f64, state.y + state.vy * 0.2 * k as f64]).collect();
    ov_spline_from_means(state, &means, 0.2).unwrap()
}

fn risk_algebra() -> Outcome {
    let p = RiskParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let lanes = lanes();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..10_000 {
        let av_state = MotionState { y: if rng.random_bool(0.5) { 2.0 } else { 6.0 }, vx: rng.random_range(0.0..35.0), ..Default::default() };
        let target = if rng.random_bool(0.5) { 2.0 } else { 6.0 };
        let av = CandidateTrajectory::new(&av_state, rng.random_range(-5.0..=5.0), target, 5.0).map_err(|e| e.to_string())?;
        let ov_state = MotionState {
            x: rng.random_range(-40.0..120.0),
            y: rng.random_range(0.0..8.0),
            vx: rng.random_range(0.0..35.0),
            vy: rng.random_range(-1.0..1.0),
            ..Default::default()
        };
        let dims = PairDims {
            av: Dims::new(rng.random_range(3.5..12.0), rng.random_range(1.6..2.6)).unwrap(),
            ov: Dims::new(rng.random_range(3.5..12.0), rng.random_range(1.6..2.6)).unwrap(),
        };
        let prof = pair_risk(&av, VehicleId(1), &cv_spline(&ov_state), dims, &lanes, &p).map_err(|e| e.to_string())?;
        for r in &prof.risk {
            ensure(r.is_finite() && (0.0..=1.0).contains(r), format!("case {i}: risk {r}"))?;
            lo = lo.min(*r);
            hi = hi.max(*r);
        }
    }

    ensure(risk_value(0.0, 0.0, 0.0, 0.0, &p) == 1.0, "all-zero risk is not exactly 1")?;
    let same = MotionState { x: 10.0, y: 2.0, vx: 20.0, ..Default::default() };
    let av = CandidateTrajectory::new(&same, 0.0, 2.0, 5.0).map_err(|e| e.to_string())?;
    let dims = PairDims { av: Dims::default(), ov: Dims::default() };
    let co_located = pair_risk(&av, VehicleId(1), &cv_spline(&same), dims, &lanes, &p).map_err(|e| e.to_string())?;
    ensure(co_located.risk[0] == 1.0, format!("co-located pair starts at risk {}", co_located.risk[0]))?;

    let s1 = 2.0 * 2.04f64.powi(2);
    let oracle = 0.6 * (-5.0 / s1).exp() * (-25.0 / s1).exp() + 0.4 * (-400.0 / (2.0 * 45.0f64.powi(2))).exp() * (-0.25 / (2.0 * 1.6f64.powi(2))).exp();
    let worked = risk_value(5.0, 0.0, 20.0, 0.5, &p);
    ensure((worked - oracle).abs() < 1e-6, format!("worked case {worked} vs {oracle}"))?;

    let half = |ov: u64| RiskProfile { ov_id: VehicleId(ov), ttc: 5.0, times: vec![0.0], risk: vec![0.5], mdm_x: vec![0.0], mdm_y: vec![0.0] };
    let agg = aggregate_risk(&[half(1), half(2)], &[0.0]).map_err(|e| e.to_string())?;
    ensure(agg == [0.75], format!("aggregate of 0.5 and 0.5: {agg:?}"))?;
    Ok(format!("10000 random pairs within [{lo:.3}, {hi:.3}]; zero case 1.0; worked case {worked:.6}; aggregate 0.75"))
}

// ---- 8: TTC ----

fn ttc_quantization() -> Outcome {
    let av_state = MotionState { y: 2.0, vx: 30.0, ..Default::default() };
    let av = CandidateTrajectory::new(&av_state, 0.0, 2.0, 5.0).map_err(|e| e.to_string())?;
    let ov = cv_spline(&MotionState { x: 30.0, y: 2.0, ..Default::default() });
    let dims = PairDims { av: Dims::default(), ov: Dims::default() };
    let got = ttc(&av, &ov, dims, &lanes(), &RiskParams::default()).map_err(|e| e.to_string())?;
    // Boxes touch once the 30 m gap shrinks to one vehicle length.
    let exact = (30.0 - Dims::default().length) / 30.0;
    let grid = (exact / 0.05).ceil() * 0.05;
    ensure((got - 0.85).abs() < 1e-12 && (got - grid).abs() < 1e-12, format!("ttc {got}, closed form {exact:.4}"))?;
    Ok(format!("TTC {got:.2} s (closed form {exact:.4} s rounded up to the 0.05 s grid)"))
}

// ---- 9: preprocessing ----

fn cv_track(id: u64, n: usize, v: f64) -> Track {
    let states = (0..n).map(|k| MotionState { t: 0.2 * k as f64, x: v * 0.2 * k as f64, y: 3.75, vx: v, ..Default::default() }).collect();
    Track::new(VehicleId(id), 4.5, 1.9, states).unwrap()
}

fn recording(tracks: Vec<Track>) -> RawRecording {
    RawRecording {
        name: "fixture".into(),
        source: Source::Highd,
        native_rate: 5.0,
        tracks,
        lanes: LaneGeometry::new(vec![0.0, 3.75, 7.5], 3.75).unwrap(),
    }
}

fn preprocessing() -> Outcome {
    let dc = vec![-7.5; 300];
    for out in [butterworth_forward(&dc, 1.0, 10.0), butterworth_lowpass(&dc, 1.0, 10.0)] {
        let out = out.map_err(|e| e.to_string())?;
        ensure(out.iter().all(|v| (v + 7.5).abs() < 1e-9), "DC level changed")?;
    }
    let fs = 10.0;
    let sine: Vec<f64> = (0..500).map(|n| (2.0 * PI * n as f64 / fs).sin()).collect();
    let y = butterworth_forward(&sine, 1.0, fs).map_err(|e| e.to_string())?;
    let amp = y[300..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure((amp - FRAC_1_SQRT_2).abs() < 0.02, format!("1 Hz gain {amp}"))?;

    for secs in [8.0, 8.8, 9.0, 12.4, 20.0, 33.2] {
        let n = (secs / 0.2f64).round() as usize + 1;
        let got = extract_windows(&recording(vec![cv_track(1, n, 20.0)]), &WindowConfig::default()).map_err(|e| e.to_string())?.len();
        let want = ((secs - 8.0) / 1.0f64).floor() as usize + 1;
        ensure(got == want, format!("{secs} s track: {got} windows, expected {want}"))?;
    }

    let samples = extract_windows(&recording((0..50).map(|i| cv_track(i, 41, 15.0 + 0.2 * i as f64)).collect()), &WindowConfig::default())
        .map_err(|e| e.to_string())?;
    let m = split_dataset(&samples, 17, SplitUnit::Sample).map_err(|e| e.to_string())?;
    ensure((m.train.len(), m.val.len(), m.test.len()) == (35, 5, 10), format!("split sizes {} / {} / {}", m.train.len(), m.val.len(), m.test.len()))?;
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut files = Vec::new();
    for d in &dirs {
        let split = split_dataset(&samples, 17, SplitUnit::Sample).map_err(|e| e.to_string())?;
        let manifest = StoreManifest {
            counts: [split.train.len(), split.val.len(), split.test.len()],
            split,
            sources: vec!["fixture".into()],
            preprocessing: PreprocessConfig::default(),
        };
        write_store(d.path(), &samples, &manifest).map_err(|e| e.to_string())?;
        let mut names: Vec<_> = std::fs::read_dir(d.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        files.push(names.iter().map(|n| (n.clone(), std::fs::read(d.path().join(n)).unwrap())).collect::<Vec<_>>());
    }
    ensure(files[0] == files[1] && !files[0].is_empty(), "store bytes differ between runs with the same seed")?;
    let other = split_dataset(&samples, 18, SplitUnit::Sample).map_err(|e| e.to_string())?;
    ensure(other.train != m.train, "a different seed gives the same split")?;
    Ok(format!("DC exact, 1 Hz gain {amp:.4}, window counts match, 70/10/20 split byte-identical across {} store files", files[0].len()))
}

// ---- 10: scenario ----

fn scenario_ordering() -> Outcome {
    let a = assess(&fixtures::car_following(), OvModel::Baseline(Baseline::Cv), &AssessConfig::default()).map_err(|e| e.to_string())?;
    let keep = a.ego_lane_center.ok_or("ego is off the mapped lanes")?;
    let horizon: Vec<(f64, f64)> = a.map.entries.iter().filter(|e| e.lateral_target == keep).map(|e| (e.a_x, *e.risk.last().unwrap())).collect();
    ensure(horizon.len() == 21, format!("{} lane-keeping candidates", horizon.len()))?;
    for w in horizon.windows(2) {
        ensure(w[1].1 >= w[0].1, format!("risk drops between a_x {} and {}", w[0].0, w[1].0))?;
    }
    let (lo, hi) = (horizon.first().unwrap(), horizon.last().unwrap());
    ensure(lo.0 == -5.0 && hi.0 == 5.0 && hi.1 - lo.1 >= 0.2, format!("risk({}) = {}, risk({}) = {}", hi.0, hi.1, lo.0, lo.1))?;
    Ok(format!("lane-keeping horizon risk nondecreasing in a_x: {:.3} at -5 to {:.3} at +5", lo.1, hi.1))
}

// ---- 11: ablations ----

fn ablations() -> Outcome {
    let data = interaction_samples(11, 12).map_err(|e| e.to_string())?;
    let (tr, va) = data.split_at(8);
    let cfg = ModelConfig::uniform(4);
    let train_cfg = TrainConfig { batch_size: 8, pretrain_epochs: 1, formal_epochs: 1, ..TrainConfig::default() };
    let mut fingerprints = std::collections::HashSet::new();
    let grid = Ablation::grid();
    for ab in &grid {
        let model = Predictor::new(cfg, *ab, 0).map_err(|e| e.to_string())?;
        let mut t = Trainer::new(tr, va, model, train_cfg).map_err(|e| e.to_string())?;
        let rec = t.run_epoch().map_err(|e| format!("{} {}: {e}", ab.channels.label(), ab.features))?.ok_or("no epoch ran")?;
        ensure(rec.train_loss.is_finite() && rec.val_loss.is_finite(), format!("{} {}: {rec:?}", ab.channels.label(), ab.features))?;
        fingerprints.insert(config_fingerprint(&cfg, ab, Some(&train_cfg)));
    }
    ensure(grid.len() == 24 && fingerprints.len() == 24, format!("{} configurations, {} distinct fingerprints", grid.len(), fingerprints.len()))?;
    Ok("4 channel configurations x 6 feature sets trained one epoch, 24 distinct fingerprints".into())
}

// ---- 12: full pipeline (informational) ----

fn full_pipeline() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    // TRAJRISK_HIGHD=<tracks.csv>:<meta.csv> or TRAJRISK_NGSIM=<file> selects real data.
    let (label, rec) = if let Ok(spec) = std::env::var("TRAJRISK_HIGHD") {
        let (t, m) = spec.split_once(':').ok_or("TRAJRISK_HIGHD must be <tracks>:<meta>")?;
        (spec.clone(), parse_highd(t.as_ref(), m.as_ref()).map_err(|e| e.to_string())?)
    } else if let Ok(path) = std::env::var("TRAJRISK_NGSIM") {
        (path.clone(), parse_ngsim(path.as_ref()).map_err(|e| e.to_string())?)
    } else {
        let rec = highway(12, &HighwayConfig { rate: 25.0, duration: 30.0, ..HighwayConfig::default() }).map_err(|e| e.to_string())?;
        let (t, m) = (dir.path().join("tracks.csv"), dir.path().join("meta.csv"));
        write_highd(&rec, &t, &m).map_err(|e| e.to_string())?;
        ("synthetic highD-format recording".into(), parse_highd(&t, &m).map_err(|e| e.to_string())?)
    };
    let pre = PreprocessConfig::default();
    let samples = extract_windows(&preprocess(&rec, &pre).map_err(|e| e.to_string())?, &pre.windows).map_err(|e| e.to_string())?;
    let split = split_dataset(&samples, 0, SplitUnit::Sample).map_err(|e| e.to_string())?;
    let pick = |ids: &[String]| -> Vec<Sample> { samples.iter().filter(|s| ids.contains(&s.id)).cloned().collect() };
    let (train, val, test) = (pick(&split.train), pick(&split.val), pick(&split.test));
    let cfg = TrainConfig { batch_size: 64, pretrain_epochs: 2, formal_epochs: 2, ..TrainConfig::default() };
    let model = Predictor::new(ModelConfig::uniform(8), Ablation::default(), 0).map_err(|e| e.to_string())?;
    let outcome = Trainer::new(&train, &val, model, cfg).and_then(|t| t.run()).map_err(|e| e.to_string())?;
    let net = evaluate(&outcome.predictor, &test).map_err(|e| e.to_string())?;
    let cv = evaluate_baseline(Baseline::Cv, &test).map_err(|e| e.to_string())?;
    let row = |r: &[f64; 5]| r.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(" ");
    Ok(format!("{label}: {} windows; 1-5 s RMSE network [{}] m, cv [{}] m", samples.len(), row(&net.rmse_at), row(&cv.rmse_at)))
}

/// Number, name, whether it gates the test, check.
type Criterion = (u8, &'static str, bool, fn() -> Outcome);

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 12] = [
        (1, "gradient correctness", true, gradients),
        (2, "NLL oracle", true, nll_oracle),
        (3, "tiny overfit", true, overfit),
        (4, "baseline sanity", true, baselines),
        (5, "quintic/spline exactness", true, quintic_and_spline),
        (6, "SAT oracle equivalence", true, sat_oracle),
        (7, "risk-function algebra", true, risk_algebra),
        (8, "TTC quantization", true, ttc_quantization),
        (9, "preprocessing", true, preprocessing),
        (10, "scenario ordering", true, scenario_ordering),
        (11, "ablation harness", true, ablations),
        (12, "full pipeline (informational)", false, full_pipeline),
    ];
    let mut failed = Vec::new();
    for (n, name, gating, run) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                println!("criterion {n:>2} {} {name}: {detail} [{secs:.1} s]", if gating { "FAIL" } else { "INFO" });
                if gating {
                    failed.push(n);
                }
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
