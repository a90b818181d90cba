//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use proctor_core::face::{
    euler_angles, iris_ratio, mouth_area, radial_deviation, solve_head_pose, CameraIntrinsics,
    CanonicalFaceModel, FaceConfig, SolverSettings,
};
use proctor_core::features::{apply_imputer, Preprocessor, NUM_FEATURES};
use proctor_core::hand::euclidean_distance;
use proctor_core::metrics::{confusion_at, evaluate, roc_auc, select_threshold, EvalReport};
use proctor_core::pipeline::{
    extract_session, extract_sessions, fit_preprocessor, run_experiment, score_static,
    sequence_dataset, static_dataset, train_static, train_temporal, ExperimentConfig,
    ExperimentOutcome, SessionFeatures,
};
use proctor_core::static_proctor::{train_gbdt_with_history, GbdtParams};
use proctor_core::synth::default_benchmark;
use proctor_core::temporal::{
    bce_loss, dropout_mask, forward_with_mask, lstm_backward, predict_batch, LstmParams,
    LstmWeights, StreamScorer,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Split {
    train: Vec<SessionFeatures>,
    val: Vec<SessionFeatures>,
    test: Vec<SessionFeatures>,
}

struct Run {
    split: Split,
    out: ExperimentOutcome,
    secs: f64,
}

fn run_benchmark() -> Run {
    let t = Instant::now();
    let bench = default_benchmark();
    let face = FaceConfig::default();
    let split = Split {
        train: extract_sessions(&bench.train, &face),
        val: extract_sessions(&bench.validation, &face),
        test: extract_sessions(&bench.test, &face),
    };
    let out = run_experiment(&split.train, &split.val, &split.test, &ExperimentConfig::default())
        .expect("benchmark experiment");
    Run {
        split,
        out,
        secs: t.elapsed().as_secs_f64(),
    }
}

/// Both models rescored on the test split at their own F1-optimal threshold.
fn f1_optimal_reports(run: &Run) -> (EvalReport, EvalReport) {
    let pre = &run.out.preprocessor;
    let (x, y) = static_dataset(&run.split.test, pre).unwrap();
    let s = score_static(&run.out.static_model, &x).unwrap();
    let ts = select_threshold(&s, &y).unwrap().threshold;
    let static_r = evaluate("static_gbdt", "frame", &s, &y, ts).unwrap();

    let model = &run.out.temporal.model;
    let seqs = sequence_dataset(&run.split.test, pre, model.params.window).unwrap();
    let p = predict_batch(model, &seqs).unwrap();
    let yl: Vec<bool> = seqs.iter().map(|q| q.target).collect();
    let tt = select_threshold(&p, &yl).unwrap().threshold;
    let temporal_r = evaluate("temporal_lstm", "sequence", &p, &yl, tt).unwrap();
    (static_r, temporal_r)
}

fn trend(run: &Run) -> Outcome {
    let (s, t) = f1_optimal_reports(run);
    let pass = t.roc_auc >= s.roc_auc
        && 2 * t.false_positives() <= s.false_positives()
        && run.secs <= 600.0;
    outcome(
        pass,
        format!(
            "AUC temporal {:.4} vs static {:.4}; FP temporal {} vs static {} at F1-optimal thresholds; \
             validation-threshold FP {} vs {}; {:.0}s",
            t.roc_auc,
            s.roc_auc,
            t.false_positives(),
            s.false_positives(),
            run.out.temporal_report.false_positives(),
            run.out.static_report.false_positives(),
            run.secs
        ),
    )
}

fn temporal_floor(run: &Run) -> Outcome {
    let r = &run.out.temporal_report;
    let recall = r.recall.unwrap_or(0.0);
    let (_, at_opt) = f1_optimal_reports(run);
    outcome(
        r.roc_auc >= 0.95 && recall >= 0.95,
        format!(
            "AUC {:.4}, recall {:.4} at validation threshold {:.3} (recall {:.4} at test F1-optimal)",
            r.roc_auc,
            recall,
            r.threshold,
            at_opt.recall.unwrap_or(0.0)
        ),
    )
}

fn gradient_check() -> Outcome {
    let p = LstmParams {
        input_dim: 4,
        hidden: 5,
        fc1_dim: 3,
        window: 4,
        ..LstmParams::default()
    };
    let mut worst = 0.0f64;
    for seed in 0..5u64 {
        let mut w = LstmWeights::init(&p, seed);
        w.scale(2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let seq: Vec<Vec<f64>> = (0..p.window)
            .map(|_| (0..p.input_dim).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let y = seed % 2 == 1;
        let mask = dropout_mask(p.hidden, p.dropout_rate, seed);
        let cache = forward_with_mask(&p, &w, &seq, Some(&mask)).unwrap();
        let analytic = lstm_backward(&p, &w, &cache, y);
        let loss = |w: &LstmWeights| bce_loss(forward_with_mask(&p, w, &seq, Some(&mask)).unwrap().p, y);
        let h = 1e-5;
        for t in 0..6 {
            for k in 0..analytic.tensors()[t].len() {
                let mut plus = w.clone();
                plus.tensors_mut()[t][k] += h;
                let mut minus = w.clone();
                minus.tensors_mut()[t][k] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = analytic.tensors()[t][k];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
            }
        }
    }
    outcome(worst < 1e-4, format!("worst relative error {worst:.2e} over 5 instances"))
}

fn project(model: &[[f64; 3]], angles: [f64; 3], t: [f64; 3], k: &CameraIntrinsics) -> Vec<[f64; 2]> {
    let [sp, sy, sr] = angles.map(|a: f64| a.to_radians().sin());
    let [cp, cy, cr] = angles.map(|a: f64| a.to_radians().cos());
    model
        .iter()
        .map(|&[x, y, z]| {
            let (y1, z1) = (cp * y - sp * z, sp * y + cp * z);
            let (x2, z2) = (cy * x + sy * z1, -sy * x + cy * z1);
            let (x3, y3) = (cr * x2 - sr * y1, sr * x2 + cr * y1);
            let (px, py, pz) = (x3 + t[0], y3 + t[1], z2 + t[2]);
            [k.fx * px / pz + k.cx, k.fy * py / pz + k.cy]
        })
        .collect()
}

fn pnp_recovery() -> Outcome {
    let k = CameraIntrinsics::default();
    let model = CanonicalFaceModel::default().positions();
    let settings = SolverSettings::default();
    let noise = Normal::new(0.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_clean = 0.0f64;
    let mut noisy_total = 0.0;
    let n = 200;
    for _ in 0..n {
        let angles = [0; 3].map(|_| rng.random_range(-60.0..60.0));
        let t = [rng.random_range(-80.0..80.0), rng.random_range(-60.0..60.0), rng.random_range(900.0..1400.0)];
        let clean = project(&model, angles, t, &k);
        let err = |img: &[[f64; 2]]| {
            let sol = solve_head_pose(img, &model, &k, &settings).unwrap();
            let (p, y, r) = euler_angles(&sol.rotation).unwrap();
            [p - angles[0], y - angles[1], r - angles[2]].map(f64::abs)
        };
        worst_clean = err(&clean).into_iter().fold(worst_clean, f64::max);
        let noisy: Vec<[f64; 2]> = clean
            .iter()
            .map(|p| [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)])
            .collect();
        noisy_total += err(&noisy).iter().sum::<f64>() / 3.0;
    }
    let noisy_mean = noisy_total / n as f64;
    outcome(
        worst_clean <= 0.5 && noisy_mean <= 2.0,
        format!("noiseless worst {worst_clean:.2e} deg, 1px noise mean {noisy_mean:.3} deg over {n} poses"),
    )
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut cells_ok = true;
    for _ in 0..50 {
        let n = rng.random_range(2..=1000);
        // Coarse scores force plenty of ties.
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..40) as f64) / 40.0).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let mut wins = 0.0;
        let mut pairs = 0.0;
        for i in 0..n {
            for j in 0..n {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    wins += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        worst = worst.max((roc_auc(&scores, &labels).unwrap() - wins / pairs).abs());
        for theta in [-1.0, 0.0, 0.3, 0.5, 0.975, 2.0] {
            cells_ok &= confusion_at(&scores, &labels, theta).unwrap().total() == n as u64;
        }
    }
    outcome(
        worst <= 1e-9 && cells_ok,
        format!("max |auc - pairwise| {worst:.1e}; confusion totals match n: {cells_ok}"),
    )
}

fn formula_identities() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failures.push(name.to_string());
        }
    };
    check("distance 3-4-5", close(euclidean_distance([0.0, 0.0], [3.0, 4.0]), 5.0));
    check(
        "distance symmetry",
        euclidean_distance([0.2, 0.7], [0.9, 0.1]) == euclidean_distance([0.9, 0.1], [0.2, 0.7]),
    );
    let (l, r) = ([100.0, 50.0], [60.0, 50.0]);
    check("iris at right corner", close(iris_ratio(r, l, r).unwrap(), 0.0));
    check("iris at left corner", close(iris_ratio(l, l, r).unwrap(), 1.0));
    check("iris midpoint", close(iris_ratio([80.0, 50.0], l, r).unwrap(), 0.5));
    let square = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    check("unit square", close(mouth_area(&square).unwrap(), 1.0));
    check("triangle", close(mouth_area(&[[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap(), 0.5));
    let mut reversed = square;
    reversed.reverse();
    let mut rotated = square;
    rotated.rotate_left(1);
    check("orientation invariance", close(mouth_area(&reversed).unwrap(), 1.0));
    check("start-vertex invariance", close(mouth_area(&rotated).unwrap(), 1.0));
    check("radial 3-4-0", close(radial_deviation(3.0, 4.0, 0.0), 5.0));
    let pass = failures.is_empty();
    outcome(pass, if pass { "all identities exact to 1e-12".into() } else { failures.join(", ") })
}

fn stream_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rows: Vec<Vec<Option<f64>>> = (0..30)
        .map(|i| (0..NUM_FEATURES).map(|j| Some(((i * 7 + j * 3) % 13) as f64)).collect())
        .collect();
    let pre = Preprocessor::fit(&rows).unwrap();
    let mut bad = Vec::new();
    let cases = 200;
    for case in 0..cases {
        let w = rng.random_range(1..=25);
        let n = rng.random_range(0..=60);
        let params = LstmParams {
            hidden: 4,
            fc1_dim: 3,
            window: w,
            ..LstmParams::default()
        };
        let model = proctor_core::temporal::LstmModel::new(params, LstmWeights::init(&params, case));
        let mut s = StreamScorer::new(&model, &pre).unwrap();
        let mut emitted = Vec::new();
        for i in 0..n {
            if s.push(&rows[i % rows.len()]).unwrap().is_some() {
                emitted.push(i + 1);
            }
        }
        let want = if n >= w { n - w + 1 } else { 0 };
        if emitted.len() != want || (want > 0 && emitted[0] != w) {
            bad.push(format!("N={n} w={w}"));
        }
    }
    outcome(bad.is_empty(), format!("{cases} random (N, w) cases, {} violations {:?}", bad.len(), bad))
}

fn preprocessing(run: &Run) -> Outcome {
    let rows: Vec<&Vec<Option<f64>>> = run.split.train.iter().flat_map(|s| &s.rows).collect();
    let pre = &run.out.preprocessor;
    let n = rows.len() as f64;
    let mut means_exact = true;
    for j in 0..NUM_FEATURES {
        let present: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
        let mean = present.iter().sum::<f64>() / present.len() as f64;
        means_exact &= pre.imputer.means[j] == mean;
    }
    let filled = apply_imputer(&pre.imputer, &[None; NUM_FEATURES]);
    means_exact &= filled == pre.imputer.means;
    let scaled: Vec<Vec<f64>> = rows.iter().map(|r| pre.transform(r).unwrap()).collect();
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    for j in 0..NUM_FEATURES {
        let m = scaled.iter().map(|r| r[j]).sum::<f64>() / n;
        let v = scaled.iter().map(|r| (r[j] - m).powi(2)).sum::<f64>() / n;
        worst_mean = worst_mean.max(m.abs());
        if v > 1e-6 {
            worst_var = worst_var.max((v - 1.0).abs());
        }
    }
    outcome(
        worst_mean < 1e-9 && worst_var < 1e-9 && means_exact,
        format!("max |mean| {worst_mean:.1e}, max |var-1| {worst_var:.1e}, imputer means exact: {means_exact}"),
    )
}

fn latency(run: &Run) -> Outcome {
    let face = FaceConfig::default();
    let bench = default_benchmark();
    let pre = &run.out.preprocessor;
    let mut frames = 0usize;
    let mut static_secs = 0.0;
    let mut temporal_secs = 0.0;
    for session in &bench.test {
        let mut scorer = StreamScorer::new(&run.out.temporal.model, pre).unwrap();
        let mut ex = proctor_core::pipeline::FrameExtractor::new(&face);
        for f in &session.frames {
            let t = Instant::now();
            let (_, row, _) = ex.extract(f);
            let extract = t.elapsed().as_secs_f64();
            let t = Instant::now();
            std::hint::black_box(run.out.static_model.predict_proba(&pre.transform(&row).unwrap()).unwrap());
            static_secs += extract + t.elapsed().as_secs_f64();
            let t = Instant::now();
            std::hint::black_box(scorer.push(&row).unwrap());
            temporal_secs += extract + t.elapsed().as_secs_f64();
            frames += 1;
        }
    }
    let s_ms = 1e3 * static_secs / frames as f64;
    let t_ms = 1e3 * temporal_secs / frames as f64;
    outcome(
        t_ms <= 10.0 && s_ms <= 5.0,
        format!("per frame incl. feature extraction: temporal {t_ms:.3} ms, static {s_ms:.3} ms over {frames} frames"),
    )
}

fn determinism(run: &Run) -> Outcome {
    let cfg = ExperimentConfig::default();
    let a = default_benchmark();
    let b = default_benchmark();
    let sessions_equal = a.content_hash() == b.content_hash()
        && a.test.iter().zip(&b.test).all(|(x, y)| x.to_jsonl() == y.to_jsonl());
    let face = FaceConfig::default();
    let train: Vec<SessionFeatures> = b.train.iter().map(|s| extract_session(s, &face)).collect();
    let val: Vec<SessionFeatures> = b.validation.iter().map(|s| extract_session(s, &face)).collect();
    let pre = fit_preprocessor(&train).unwrap();
    let pre_equal = pre.to_json() == run.out.preprocessor.to_json();
    let static_model = train_static(&train, &val, &pre, &cfg).unwrap();
    let static_equal = static_model.to_json() == run.out.static_model.to_json();
    let report = proctor_core::pipeline::evaluate_static(&static_model, &run.split.test, &pre).unwrap();
    let report_equal = report.to_json() == run.out.static_report.to_json();
    // Two short temporal fits; the full fit is already covered by the run above.
    let short = ExperimentConfig {
        lstm: LstmParams {
            max_epochs: 2,
            ..cfg.lstm
        },
        ..cfg
    };
    let t1 = train_temporal(&train, &val, &pre, &short).unwrap().model.to_json();
    let t2 = train_temporal(&train, &val, &pre, &short).unwrap().model.to_json();
    let temporal_equal = t1 == t2;
    outcome(
        sessions_equal && pre_equal && static_equal && report_equal && temporal_equal,
        format!(
            "sessions {sessions_equal}, preprocessor {pre_equal}, static model {static_equal}, \
             report {report_equal}, temporal model {temporal_equal}"
        ),
    )
}

fn gbdt_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // 40 rows separable on feature 1, with two noise features.
    let x: Vec<Vec<f64>> = (0..40)
        .map(|i| {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            vec![rng.random_range(-1.0..1.0), side * rng.random_range(0.2..1.0), rng.random_range(-1.0..1.0)]
        })
        .collect();
    let y: Vec<bool> = x.iter().map(|r| r[1] > 0.0).collect();
    let params = GbdtParams {
        n_trees: 50,
        ..GbdtParams::default()
    };
    let fit = train_gbdt_with_history(&x, &y, &params, 0).unwrap();
    let correct = x
        .iter()
        .zip(&y)
        .filter(|(r, &l)| (fit.model.predict_proba(r).unwrap() >= 0.5) == l)
        .count();
    // Noisy labels exercise the monotone-loss guarantee on a hard problem.
    let xn: Vec<Vec<f64>> = (0..300).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let yn: Vec<bool> = xn.iter().map(|r| r[0] + 0.8 * rng.random_range(-1.0..1.0) > 0.0).collect();
    let noisy = train_gbdt_with_history(&xn, &yn, &GbdtParams::default(), 3).unwrap();
    let monotone = |c: &[f64]| c.windows(2).all(|w| w[1] <= w[0]);
    let pass = correct == 40 && monotone(&fit.loss_curve) && monotone(&noisy.loss_curve);
    outcome(
        pass,
        format!(
            "toy accuracy {correct}/40 with 50 trees, loss non-increasing: toy {}, noisy {}",
            monotone(&fit.loss_curve),
            monotone(&noisy.loss_curve)
        ),
    )
}

fn main() {
    let run = run_benchmark();
    let results = [
        ("1 trend reproduction", trend(&run)),
        ("2 temporal quality floor", temporal_floor(&run)),
        ("3 LSTM gradient check", gradient_check()),
        ("4 PnP recovery", pnp_recovery()),
        ("5 metric oracle equivalence", metric_oracle()),
        ("6 formula identities", formula_identities()),
        ("7 streaming emission contract", stream_contract()),
        ("8 preprocessing contract", preprocessing(&run)),
        ("9 latency", latency(&run)),
        ("10 determinism", determinism(&run)),
        ("11 GBDT sanity", gbdt_sanity()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
