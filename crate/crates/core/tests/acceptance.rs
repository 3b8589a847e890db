//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits nonzero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fieldloc::dataset::LoadedFrame;
use fieldloc::eval::{evaluate, evaluate_baseline, iou, median, NnMode};
use fieldloc::features::{rasterize_segment, Fan, FeatureClass, Hypothesis};
use fieldloc::field_model::{standard_field, FieldModel};
use fieldloc::geometry::{
    cross_ratio, dlt_homography, project_model_coordinate, Homography, Point2, VanishingPoint,
};
use fieldloc::inference::{exhaustive, LinearObjective};
use fieldloc::learning::{select_c, train, TrainConfig, TrainingExample};
use fieldloc::oracle::{oracle_check, random_instance, random_weights};
use fieldloc::pipeline::{localize, prepare, PipelineConfig};
use fieldloc::potentials::{HypothesisBox, Scene, Tying, WeightVector};
use fieldloc::synth::{synth_frame, synth_frames, SynthConfig};
use fieldloc::vp_estimation::{estimate_vps, vp_angular_error, VpConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn loaded(cfg: &SynthConfig, model: &FieldModel, n: usize) -> Vec<LoadedFrame> {
    synth_frames(cfg, model, n)
        .expect("synthetic frames")
        .iter()
        .map(|f| f.loaded())
        .collect()
}

fn random_box(rng: &mut ChaCha8Rng, n: usize) -> HypothesisBox {
    loop {
        let mut lo = [0; 4];
        let mut hi = [0; 4];
        for k in 0..4 {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            lo[k] = a.min(b);
            hi[k] = a.max(b);
        }
        if let Ok(b) = HypothesisBox::new(lo, hi) {
            return b;
        }
    }
}

fn random_hypothesis(rng: &mut ChaCha8Rng, n: usize) -> Hypothesis {
    let a = rng.random_range(0..n - 1);
    let b = rng.random_range(a + 1..n);
    let c = rng.random_range(0..n - 1);
    let d = rng.random_range(c + 1..n);
    Hypothesis([a, b, c, d])
}

fn criterion_1(model: &FieldModel) -> Outcome {
    let t = Instant::now();
    let r = oracle_check(100, 8, 1, model).expect("oracle run");
    let secs = t.elapsed().as_secs_f64();
    outcome(
        r.matched == 100 && r.mismatches.is_empty() && secs < 60.0,
        format!("{}/100 bit-equal, {secs:.2} s", r.matched),
    )
}

fn criterion_2(model: &FieldModel) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut bad_bound = 0;
    let mut bad_single = 0;
    for _ in 0..1000 {
        let (acc, grid) = random_instance(&mut rng, 8).expect("instance");
        let w = random_weights(&mut rng);
        let scene = Scene::new(&acc, &grid, model).expect("scene");
        let b = random_box(&mut rng, 8);
        let obj = LinearObjective::new(scene, &w);
        let best = exhaustive(&obj, &b).expect("non-empty box").score;
        if !(scene.bound_box(&w, &b).expect("bound") >= best) {
            bad_bound += 1;
        }
        let y = random_hypothesis(&mut rng, 8);
        let s = scene
            .bound_box(&w, &HypothesisBox::singleton(&y))
            .expect("bound");
        if s.to_bits() != scene.score(&w, &y).to_bits() {
            bad_single += 1;
        }
    }
    outcome(
        bad_bound == 0 && bad_single == 0,
        format!("{bad_bound} inadmissible boxes, {bad_single} inexact singletons of 1000"),
    )
}

/// Cell of a parameter: the last ray at or below it, with the final ray
/// folded into the second-to-last cell.
fn brute_cell(fan: &Fan, p: Option<f64>) -> Option<usize> {
    let p = p?;
    let ps = fan.params();
    let n = ps.len();
    if p < ps[0] || p > ps[n - 1] {
        return None;
    }
    let mut k = 0;
    while k + 1 < n && ps[k + 1] <= p {
        k += 1;
    }
    Some(k.min(n - 2))
}

fn criterion_3(model: &FieldModel) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = PipelineConfig::default();
    let mut checked = 0;
    let mut wrong = 0;
    let mut frames = 0;
    for seed in 30u64.. {
        if frames == 3 {
            break;
        }
        let f = synth_frame(&SynthConfig::noisy(seed), model)
            .expect("frame")
            .loaded();
        let Ok(p) = prepare(&f, model, &cfg) else {
            continue;
        };
        frames += 1;
        let (w, h) = f.record.image_size;
        // (i, j, class) of every binned pixel
        let mut pix: Vec<(usize, usize, usize)> = Vec::new();
        let mut put = |x: usize, y: usize, class: FeatureClass| {
            let q = Point2::new(x as f64, y as f64);
            let i = brute_cell(&p.grid.h, p.grid.h.param_of_point(q));
            let j = brute_cell(&p.grid.v, p.grid.v.param_of_point(q));
            if let (Some(i), Some(j)) = (i, j) {
                pix.push((i, j, class as usize));
            }
        };
        for y in 0..h {
            for x in 0..w {
                let c = if f.mask.get(x, y) {
                    FeatureClass::Grass
                } else {
                    FeatureClass::NonGrass
                };
                put(x, y, c);
            }
        }
        for (seg, label) in f.segments.iter().zip(&p.vps.labels) {
            for (x, y) in rasterize_segment(seg, w, h) {
                put(x, y, FeatureClass::of_label(*label));
            }
        }
        let (n_h, n_v) = (p.grid.n_h(), p.grid.n_v());
        let per_frame = if frames == 3 { 66 } else { 67 };
        for _ in 0..per_frame {
            let (a, b) = (rng.random_range(0..n_h), rng.random_range(0..n_h));
            let (c, d) = (rng.random_range(0..n_v), rng.random_range(0..n_v));
            let (i_lo, i_hi, j_lo, j_hi) = (a.min(b), a.max(b), c.min(d), c.max(d));
            let mut brute = [0u64; 5];
            for &(i, j, k) in &pix {
                if (i_lo..i_hi).contains(&i) && (j_lo..j_hi).contains(&j) {
                    brute[k] += 1;
                }
            }
            for (k, class) in FeatureClass::ALL.iter().enumerate() {
                let s = p
                    .acc
                    .region_sum(*class, i_lo, i_hi, j_lo, j_hi)
                    .expect("region");
                if s != brute[k] {
                    wrong += 1;
                }
            }
            checked += 1;
        }
    }
    outcome(
        wrong == 0,
        format!("{checked} regions x 5 classes, {wrong} mismatches"),
    )
}

fn random_point(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Point2 {
    Point2::new(rng.random_range(lo..hi), rng.random_range(lo..hi))
}

/// Model-to-image homography fitted to four random correspondences.
fn random_dlt(rng: &mut ChaCha8Rng) -> Homography {
    loop {
        let model = [(0.0, 0.0), (105.0, 0.0), (105.0, 68.0), (0.0, 68.0)];
        let pairs: Vec<(Point2, Point2)> = model
            .iter()
            .map(|&(x, y)| {
                let m = Point2::new(x, y) + random_point(rng, -20.0, 20.0);
                let i = Point2::new(x * 6.0, y * 5.0) + random_point(rng, -150.0, 150.0);
                (m, i)
            })
            .collect();
        if let Ok(h) = dlt_homography(&pairs) {
            return h;
        }
    }
}

fn w_of(h: &Homography, p: Point2) -> f64 {
    h.apply_homogeneous(&p.homogeneous()).z
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_proj: f64 = 0.0;
    let mut worst_cr: f64 = 0.0;
    let mut n = 0;
    while n < 1000 {
        let h = random_dlt(&mut rng);
        let a = random_point(&mut rng, 0.0, 105.0);
        let dir_angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let dir = Point2::new(dir_angle.cos(), dir_angle.sin());
        let len = rng.random_range(5.0..60.0);
        let b = a + dir * len;
        // The whole segment must stay in front of the camera.
        if w_of(&h, a) * w_of(&h, b) <= 0.0 {
            continue;
        }
        let (ia, ib) = (h.apply(a).expect("finite"), h.apply(b).expect("finite"));
        let seg = ia.dist(ib);
        if seg < 1.0 {
            continue;
        }
        let vp = VanishingPoint::from_homogeneous(h.apply_homogeneous(&nalgebra_dir(dir)))
            .expect("vanishing point");
        for _ in 0..4 {
            let t = rng.random_range(0.0..len);
            let truth = h.apply(a + dir * t).expect("finite");
            let s = project_model_coordinate(t, ia, ib, len, &vp).expect("frame");
            let got = ia.lerp(ib, s);
            worst_proj = worst_proj.max(got.dist(truth) / seg);
        }

        // Four points, one per quarter of the segment, kept apart.
        let ts: Vec<f64> = (0..4)
            .map(|k| len * (k as f64 + rng.random_range(0.2..0.8)) / 4.0)
            .collect();
        let mp: Vec<Point2> = ts.iter().map(|&t| a + dir * t).collect();
        let ip: Vec<Point2> = mp.iter().map(|&p| h.apply(p).expect("finite")).collect();
        let before = cross_ratio(mp[0], mp[1], mp[2], mp[3]).expect("cross ratio");
        let after = cross_ratio(ip[0], ip[1], ip[2], ip[3]).expect("cross ratio");
        worst_cr = worst_cr.max((before - after).abs() / before.abs().max(1.0));
        n += 1;
    }
    outcome(
        worst_proj <= 1e-6 && worst_cr <= 1e-9,
        format!("max projection error {worst_proj:.2e} of segment length, max cross-ratio change {worst_cr:.2e}"),
    )
}

fn nalgebra_dir(d: Point2) -> nalgebra::Vector3<f64> {
    nalgebra::Vector3::new(d.x, d.y, 0.0)
}

fn clean_frames(model: &FieldModel) -> Vec<LoadedFrame> {
    loaded(&SynthConfig::clean(500, 64), model, 20)
}

fn hand_weights() -> WeightVector {
    WeightVector::new(Tying::GLC, vec![1.0, -1.0, -1.0, 1.0, 1.0, 1.0]).expect("weights")
}

fn criterion_5(model: &FieldModel, frames: &[LoadedFrame]) -> Outcome {
    let cfg = PipelineConfig {
        grid: 64,
        ..Default::default()
    };
    let w = hand_weights();
    let mut exact = 0;
    let mut worst: f64 = 0.0;
    for f in frames {
        let Ok(out) = localize(f, &w, model, &cfg) else {
            worst = 1.0;
            continue;
        };
        if Some(out.result.y) == f.record.gt_hypothesis {
            exact += 1;
        }
        let gt = f.record.gt_homography.expect("ground truth");
        let v = iou(&out.result.homography, &gt, model, f.record.image_size).unwrap_or(0.0);
        worst = worst.max((1.0 - v).abs());
    }
    outcome(
        exact == frames.len() && worst <= 1e-9,
        format!("{exact}/{} exact, max |1 - IOU| {worst:.1e}", frames.len()),
    )
}

struct Benchmark {
    seconds: Vec<f64>,
    iterations: Vec<f64>,
}

fn criterion_6(model: &FieldModel) -> (Outcome, Benchmark) {
    let pc = PipelineConfig::default();
    let train_frames = loaded(&SynthConfig::noisy(10_000), model, 100);
    let val_frames = loaded(&SynthConfig::noisy(20_000), model, 50);
    let test_frames = loaded(&SynthConfig::noisy(30_000), model, 100);
    let examples: Vec<TrainingExample> = train_frames
        .iter()
        .filter_map(|f| TrainingExample::from_frame(f, model, &pc).ok())
        .collect();
    let cfg = TrainConfig {
        tying: Tying::GVHC,
        ..Default::default()
    };
    let (trained, _, scores) =
        select_c(&examples, &val_frames, model, &cfg, &pc, &[1.0, 10.0]).expect("training");
    let r = evaluate(&test_frames, &trained.weights, model, &pc);
    let (grass_nn, _) =
        evaluate_baseline(&test_frames, &train_frames, NnMode::GrassIou, model).expect("baseline");
    let (edge_nn, _) = evaluate_baseline(
        &test_frames,
        &train_frames,
        NnMode::EdgeDistanceTransform,
        model,
    )
    .expect("baseline");
    let pass =
        r.mean_iou >= 0.90 && r.median_iou >= 0.93 && r.mean_iou > grass_nn && r.mean_iou > edge_nn;
    let cs: Vec<String> = scores
        .iter()
        .map(|s| format!("C={} val {:.4}", s.c, s.mean_iou))
        .collect();
    let detail = format!(
        "mean {:.4}, median {:.4} on {} frames ({} excluded); grass NN {grass_nn:.4}, edge NN {edge_nn:.4}; {} examples, {}",
        r.mean_iou,
        r.median_iou,
        r.rows.len(),
        r.excluded.len(),
        examples.len(),
        cs.join(", ")
    );
    let bench = Benchmark {
        seconds: r.rows.iter().map(|row| row.seconds).collect(),
        iterations: r.rows.iter().map(|row| row.iterations as f64).collect(),
    };
    (outcome(pass, detail), bench)
}

fn criterion_7(b: &Benchmark) -> Outcome {
    let it = median(&b.iterations);
    let s = median(&b.seconds);
    outcome(
        it <= 1e5 && s <= 2.0,
        format!("median {it} iterations, median {s:.3} s per frame"),
    )
}

fn brute_loss(n_h: usize, n_v: usize, a: &Hypothesis, b: &Hypothesis) -> f64 {
    let inside =
        |y: &Hypothesis, i: usize, j: usize| y.0[0] <= i && i < y.0[1] && y.0[2] <= j && j < y.0[3];
    let mut agree = 0;
    let cells = (n_h - 1) * (n_v - 1);
    for i in 0..n_h - 1 {
        for j in 0..n_v - 1 {
            if inside(a, i, j) == inside(b, i, j) {
                agree += 1;
            }
        }
    }
    (cells - agree) as f64 / cells as f64
}

fn criterion_8(model: &FieldModel, frames: &[LoadedFrame]) -> Outcome {
    let pc = PipelineConfig {
        grid: 64,
        ..Default::default()
    };
    let examples: Vec<TrainingExample> = frames
        .iter()
        .map(|f| TrainingExample::from_frame(f, model, &pc).expect("example"))
        .collect();
    let cfg = TrainConfig {
        c: 1000.0,
        tying: Tying::GVHC,
        ..Default::default()
    };
    let (w, report) = train(&examples, model, &cfg).expect("training");
    let mut wrong = 0;
    for e in &examples {
        let p = e.predict(&w, model, cfg.band).expect("prediction");
        if p.y != e.y_gt {
            wrong += 1;
        }
    }
    let obj: Vec<f64> = report.rounds.iter().map(|r| r.objective).collect();
    let monotone = obj
        .windows(2)
        .all(|p| p[1] >= p[0] - 1e-9 * p[0].abs().max(1.0));

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let base = &examples[0];
    let (n_h, n_v) = (base.grid.n_h(), base.grid.n_v());
    let mut bad_loss = 0;
    for _ in 0..1000 {
        let a = random_hypothesis(&mut rng, n_h.min(n_v));
        let b = random_hypothesis(&mut rng, n_h.min(n_v));
        let ex =
            TrainingExample::new("pair", base.acc.clone(), base.grid.clone(), a).expect("example");
        let l = ex.loss(&b);
        let ok = ex.loss(&a) == 0.0
            && (0.0..=1.0).contains(&l)
            && (l - brute_loss(n_h, n_v, &a, &b)).abs() <= 1e-12;
        if !ok {
            bad_loss += 1;
        }
    }
    outcome(
        wrong == 0 && monotone && bad_loss == 0 && report.converged,
        format!(
            "{wrong}/{} training errors, {} rounds, converged {}, objective {:?} non-decreasing {monotone}, {bad_loss} bad loss pairs",
            examples.len(),
            obj.len(),
            report.converged,
            obj.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>()
        ),
    )
}

fn vp_errors(cfg: &SynthConfig, model: &FieldModel) -> Option<(f64, f64, bool)> {
    let f = synth_frame(cfg, model).ok()?;
    let c = Point2::new(
        (cfg.image_size.0 as f64 - 1.0) / 2.0,
        (cfg.image_size.1 as f64 - 1.0) / 2.0,
    );
    let r = estimate_vps(&f.segments, &f.mask, model, &VpConfig::default()).ok()?;
    Some((
        vp_angular_error(&r.vp_h, &f.vp_h, c),
        vp_angular_error(&r.vp_v, &f.vp_v, c),
        r.fallback_used,
    ))
}

fn criterion_9(model: &FieldModel) -> Outcome {
    let mut clean_ok = 0;
    let mut noisy_ok = 0;
    let mut worst_clean: f64 = 0.0;
    let mut worst_noisy: f64 = 0.0;
    for seed in 900..950 {
        let clean = SynthConfig::clean(seed, 256);
        let noisy = SynthConfig {
            noise_sigma: 1.5,
            outlier_fraction: 0.2,
            ..clean.clone()
        };
        if let Some((eh, ev, _)) = vp_errors(&clean, model) {
            worst_clean = worst_clean.max(eh.max(ev));
            clean_ok += usize::from(eh <= 0.5 && ev <= 0.5);
        }
        if let Some((eh, ev, _)) = vp_errors(&noisy, model) {
            worst_noisy = worst_noisy.max(eh.max(ev));
            noisy_ok += usize::from(eh <= 2.0 && ev <= 2.0);
        }
    }
    let mut fallback_ok = 0;
    for seed in 700..720 {
        let cfg = SynthConfig {
            center_view: true,
            noise_sigma: 1.5,
            outlier_fraction: 0.2,
            ..SynthConfig::default()
        };
        let cfg = SynthConfig { seed, ..cfg };
        if let Some((eh, ev, fallback)) = vp_errors(&cfg, model) {
            fallback_ok += usize::from(fallback && eh <= 2.0 && ev <= 2.0);
        }
    }
    let mut broadcast_ok = 0;
    for seed in 900..950 {
        let cfg = SynthConfig {
            dropout: 0.0,
            ..SynthConfig::noisy(seed)
        };
        if let Some((eh, ev, _)) = vp_errors(&cfg, model) {
            broadcast_ok += usize::from(eh <= 2.0 && ev <= 2.0);
        }
    }
    outcome(
        clean_ok == 50 && noisy_ok == 50 && fallback_ok >= 10,
        format!(
            "clean {clean_ok}/50 (max {worst_clean:.3} deg), noisy {noisy_ok}/50 (max {worst_noisy:.3} deg), center-view fallback {fallback_ok}/20; broadcast noisy, informational: {broadcast_ok}/50"
        ),
    )
}

fn main() -> ExitCode {
    // libtest passes flags such as --nocapture; none apply here.
    let model = standard_field();
    let mut all = true;
    let mut report = |k: usize, t: Instant, o: Outcome| {
        all &= o.pass;
        println!(
            "criterion {k}: {} ({}; {:.1} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    };
    let t = Instant::now();
    report(1, t, criterion_1(&model));
    let t = Instant::now();
    report(2, t, criterion_2(&model));
    let t = Instant::now();
    report(3, t, criterion_3(&model));
    let t = Instant::now();
    report(4, t, criterion_4());
    let clean = clean_frames(&model);
    let t = Instant::now();
    report(5, t, criterion_5(&model, &clean));
    let t = Instant::now();
    let (o6, bench) = criterion_6(&model);
    report(6, t, o6);
    let t = Instant::now();
    report(7, t, criterion_7(&bench));
    let t = Instant::now();
    report(8, t, criterion_8(&model, &clean));
    let t = Instant::now();
    report(9, t, criterion_9(&model));
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
