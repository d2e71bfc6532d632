mod common;

use proptest::prelude::*;
use telemetry_gpt::decode::DecodeConfig;
use telemetry_gpt::evalsuite::*;
use telemetry_gpt::gptcore::{train, ModelState, StepInfo, TrainConfig};
use telemetry_gpt::promptcodec::PromptTemplate;
use telemetry_gpt::rng::SeededRng;
use telemetry_gpt::telemetry::{synthesize_dataset, EnvProfile, FeatureMask};

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn random_instance(rng: &mut SeededRng) -> (Vec<f64>, Vec<f64>) {
    let n = 2 + rng.below(60);
    let labels: Vec<f64> = (0..n).map(|_| rng.gaussian(8.0, 3.0)).collect();
    let preds: Vec<f64> = labels.iter().map(|y| y + rng.gaussian(0.0, 1.0)).collect();
    (labels, preds)
}

/// Smallest error `e` with `#{x <= e} * 100 >= p * n`, by exhaustive scan.
fn percentile_oracle(errors: &[f64], p: u32) -> f64 {
    let n = errors.len();
    let mut best = f64::INFINITY;
    for &e in errors {
        let count = errors.iter().filter(|&&x| x <= e).count();
        if count * 100 >= p as usize * n && e < best {
            best = e;
        }
    }
    best
}

#[test]
fn metrics_match_brute_force() {
    let mut rng = SeededRng::new(2024);
    for _ in 0..100 {
        let (y, p) = random_instance(&mut rng);
        let n = y.len() as f64;
        let mut sq = 0.0;
        let mut ab = 0.0;
        for i in 0..y.len() {
            sq += (y[i] - p[i]).powi(2);
            ab += (y[i] - p[i]).abs();
        }
        let mean_y = y.iter().sum::<f64>() / n;
        let mut tot = 0.0;
        for v in &y {
            tot += (v - mean_y).powi(2);
        }
        assert!(rel_close(mse(&y, &p).unwrap(), sq / n, 1e-12));
        assert!(rel_close(mae(&y, &p).unwrap(), ab / n, 1e-12));
        assert!(rel_close(r2(&y, &p).unwrap(), 1.0 - sq / tot, 1e-12));
        assert!(mae(&y, &p).unwrap() <= mse(&y, &p).unwrap().sqrt());

        let errs: Vec<f64> = y.iter().zip(&p).map(|(a, b)| (a - b).abs()).collect();
        let pct = percentile_errors(&errs, &[1, 10, 25, 50, 75, 90, 99, 100]).unwrap();
        for (&k, &v) in &pct {
            assert_eq!(v, percentile_oracle(&errs, k), "rank {k}");
        }
        let curve = cdf(&errs).unwrap();
        for &(e, prob) in &curve.points {
            let below = errs.iter().filter(|&&x| x < e).count() as f64;
            let at_most = errs.iter().filter(|&&x| x <= e).count() as f64;
            assert!(prob > below / n - 1e-12 && prob <= at_most / n + 1e-12);
        }
    }
}

#[test]
fn cdf_area_equals_mean_error() {
    let mut rng = SeededRng::new(5);
    let errs: Vec<f64> = (0..500).map(|_| rng.gaussian(0.0, 2.0).abs()).collect();
    let curve = cdf(&errs).unwrap();
    let mut area = 0.0;
    let mut prev_e = 0.0;
    let mut prev_p = 0.0;
    for &(e, p) in &curve.points {
        area += (e - prev_e) * (1.0 - prev_p);
        prev_e = e;
        prev_p = p;
    }
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    assert!(rel_close(area, mean, 1e-12), "{area} vs {mean}");
}

proptest! {
    #[test]
    fn jensen_and_permutation(pairs in proptest::collection::vec((-50.0f64..50.0, -50.0f64..50.0), 1..80), seed: u64) {
        let (y, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        let m = mae(&y, &p).unwrap();
        let s = mse(&y, &p).unwrap();
        prop_assert!(m <= s.sqrt() * (1.0 + 1e-12));
        let mut idx: Vec<usize> = (0..y.len()).collect();
        SeededRng::new(seed).shuffle(&mut idx);
        let y2: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let p2: Vec<f64> = idx.iter().map(|&i| p[i]).collect();
        prop_assert!(rel_close(mae(&y2, &p2).unwrap(), m, 1e-12));
        prop_assert!(rel_close(mse(&y2, &p2).unwrap(), s, 1e-12));
        let e: Vec<f64> = y.iter().zip(&p).map(|(a, b)| (a - b).abs()).collect();
        let e2: Vec<f64> = y2.iter().zip(&p2).map(|(a, b)| (a - b).abs()).collect();
        prop_assert_eq!(percentile_errors(&e, &DEFAULT_RANKS).unwrap(), percentile_errors(&e2, &DEFAULT_RANKS).unwrap());
    }

    #[test]
    fn percentiles_are_ordered(errs in proptest::collection::vec(0.0f64..100.0, 1..100)) {
        let p = percentile_errors(&errs, &DEFAULT_RANKS).unwrap();
        let v: Vec<f64> = p.values().copied().collect();
        prop_assert!(v.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(v[3], errs.iter().copied().fold(0.0, f64::max));
        let c = cdf(&errs).unwrap();
        prop_assert!(c.points.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 <= w[1].1));
        prop_assert_eq!(c.points.last().unwrap().1, 1.0);
    }

    #[test]
    fn misaligned_never_counts(good in proptest::collection::vec((0.0f64..20.0, 0.0f64..20.0), 2..30),
                               garbage in proptest::collection::vec(-1e6f64..1e6, 1..10)) {
        let (y, p): (Vec<f64>, Vec<f64>) = good.iter().copied().unzip();
        let clean = EvalReport::from_predictions("t", &y, &p.iter().map(|&v| Some(v)).collect::<Vec<_>>()).unwrap();
        let mut y2 = y.clone();
        let mut p2: Vec<Option<f64>> = p.iter().map(|&v| Some(v)).collect();
        for (k, g) in garbage.iter().enumerate() {
            let at = (k * 7) % (y2.len() + 1);
            y2.insert(at, *g);
            p2.insert(at, None);
        }
        let dirty = EvalReport::from_predictions("t", &y2, &p2).unwrap();
        prop_assert_eq!(dirty.n_misaligned, garbage.len());
        prop_assert_eq!(dirty.per_sample.len(), dirty.n_total - dirty.n_misaligned);
        prop_assert_eq!(&dirty.per_sample, &clean.per_sample);
        prop_assert_eq!(dirty.mse_m2, clean.mse_m2);
        prop_assert_eq!(dirty.mae_m, clean.mae_m);
        prop_assert_eq!(dirty.r2, clean.r2);
        prop_assert_eq!(&dirty.percentiles, &clean.percentiles);
    }
}

#[test]
fn memorized_fixture_evaluates_perfectly_and_deterministically() {
    let samples = common::memo_samples();
    let state = common::memorized_model(&samples, 400);
    let t = PromptTemplate::default();
    let cfg = DecodeConfig::default();
    let r = evaluate(&state, &samples, &t, &cfg, "memo").unwrap();
    assert_eq!(r.n_misaligned, 0);
    assert_eq!(r.mae_m.value(), Some(0.0));
    assert_eq!(r.r2.value(), Some(1.0));
    let again = evaluate(&state, &samples, &t, &cfg, "memo").unwrap();
    assert_eq!(r.to_json().unwrap(), again.to_json().unwrap());
    let threaded = evaluate_parallel(&state, &samples, &t, &cfg, "memo", 3).unwrap();
    assert_eq!(r.to_json().unwrap(), threaded.to_json().unwrap());
    assert_eq!(
        r.per_sample.iter().map(|s| s.label_m).collect::<Vec<_>>(),
        samples.iter().map(|s| s.label_m()).collect::<Vec<_>>()
    );
}

#[test]
fn untrained_model_reports_undefined_metrics() {
    let samples = common::memo_samples();
    let state = ModelState::<f32>::init(common::small_model_cfg()).unwrap();
    let r = evaluate(&state, &samples, &PromptTemplate::default(), &DecodeConfig::default(), "raw").unwrap();
    assert_eq!(r.n_misaligned, r.n_total);
    assert_eq!(r.mae_m.value(), None);
    assert!(r.to_json().unwrap().contains("\"undefined\""));
    assert!(matches!(
        evaluate(&state, &[], &PromptTemplate::default(), &DecodeConfig::default(), "raw"),
        Err(EvalError::Empty)
    ));
}

fn ftm_fixture() -> Vec<telemetry_gpt::telemetry::TelemetrySample> {
    let mut prof = EnvProfile::corridor(3);
    prof.n_aps = 2;
    synthesize_dataset(&prof, 4, 2).unwrap()
}

#[test]
fn ablation_identity_and_order_independence() {
    let data = ftm_fixture();
    let state = ModelState::<f32>::init(common::small_model_cfg()).unwrap();
    let t = PromptTemplate::default();
    let cfg = DecodeConfig::default().with_max_new_tokens(4).unwrap();
    let forward = ablation_run(&state, &data, &FeatureMask::ALL, &t, &cfg, "", 1).unwrap();
    let reversed = [FeatureMask::RssiOnly, FeatureMask::FtmOnly, FeatureMask::Both];
    let backward = ablation_run(&state, &data, &reversed, &t, &cfg, "", 1).unwrap();
    for r in &forward {
        let twin = backward.iter().find(|b| b.mask == r.mask).unwrap();
        assert_eq!(r, twin);
    }
    let plain = evaluate(&state, &data, &t, &cfg, "BOTH").unwrap();
    assert_eq!(forward[0].report, plain);
    let tags: Vec<&str> = forward.iter().map(|r| r.report.config_tag.as_str()).collect();
    assert_eq!(tags, ["BOTH", "FTM_ONLY", "RSSI_ONLY"]);
    let csi = common::memo_samples();
    assert!(matches!(ablation_run(&state, &csi, &[FeatureMask::Both], &t, &cfg, "", 1), Err(EvalError::NotFtmRssi)));
}

#[test]
fn monitor_matches_standalone_evaluate() {
    let samples = common::memo_samples();
    let t = PromptTemplate::default();
    let dcfg = DecodeConfig::default();
    let mut mon = TrainingMonitor::new(&samples, 4, t.clone(), dcfg.clone());
    let mut snapshots = Vec::new();
    let init = ModelState::<f32>::init(common::small_model_cfg()).unwrap();
    let cfg = TrainConfig { learning_rate: 3e-3, max_iters: 300, eval_interval: 100, ..TrainConfig::default() };
    let mut err = None;
    train(init, &common::examples(&samples), &cfg, |info, st| {
        if let Err(e) = mon.observe(info, st) {
            err = Some(e);
        }
        snapshots.push(st.clone());
    })
    .unwrap();
    assert!(err.is_none());
    let recs = mon.records();
    assert_eq!(recs.iter().map(|r| r.iter).collect::<Vec<_>>(), [100, 200, 300]);
    for (rec, st) in recs.iter().zip(&snapshots) {
        let direct = evaluate(st, &samples[..4], &t, &dcfg, "x").unwrap();
        assert_eq!(rec.val_mae_m, Some(direct.mae_m));
        assert_eq!(rec.val_mse_m2, Some(direct.mse_m2));
        assert_eq!(rec.val_misaligned, Some(direct.n_misaligned));
    }
    let stale = StepInfo { iter: 300, batch_loss: 0.0, mean_loss: 0.0, grad_norm: 0.0 };
    assert!(matches!(mon.observe(&stale, &snapshots[0]), Err(EvalError::OutOfOrder { .. })));
    assert_eq!(mon.to_jsonl().unwrap().lines().count(), 3);
}

#[test]
fn monitor_without_validation_data_skips() {
    let mut mon = TrainingMonitor::new(&[], 10, PromptTemplate::default(), DecodeConfig::default());
    let state = ModelState::<f32>::init(common::small_model_cfg()).unwrap();
    let info = StepInfo { iter: 1, batch_loss: 1.0, mean_loss: 1.0, grad_norm: 0.5 };
    let rec = mon.observe(&info, &state).unwrap();
    assert_eq!(rec.n_val, 0);
    assert!(rec.val_mae_m.is_none());
}
