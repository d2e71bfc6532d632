use proptest::prelude::*;
use telemetry_gpt::baselines::*;
use telemetry_gpt::rng::SeededRng;
use telemetry_gpt::telemetry::{synthesize_dataset, EnvProfile, SPEED_OF_LIGHT_M_PER_S};

/// k nearest by repeated minimum selection over (distance, index).
fn knn_oracle(train: &[(Vec<f64>, f64)], q: &[f64], k: usize) -> f64 {
    let d: Vec<f64> = train.iter().map(|(x, _)| x.iter().zip(q).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).collect();
    let mut taken = vec![false; train.len()];
    let mut sum = 0.0;
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for i in 0..train.len() {
            if !taken[i] && best.is_none_or(|b| d[i] < d[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        taken[b] = true;
        sum += train[b].1;
    }
    sum / k as f64
}

#[test]
fn knn_matches_exhaustive_search() {
    let mut rng = SeededRng::new(11);
    for round in 0..200 {
        let n = 1 + rng.below(200);
        let dim = 1 + rng.below(6);
        // Coarse integer grids force distance ties.
        let coarse = round % 2 == 0;
        let draw = |rng: &mut SeededRng| if coarse { rng.below(4) as f64 } else { rng.gaussian(0.0, 1.0) };
        let train: Vec<(Vec<f64>, f64)> =
            (0..n).map(|_| ((0..dim).map(|_| draw(&mut rng)).collect(), rng.gaussian(8.0, 2.0))).collect();
        let q: Vec<f64> = (0..dim).map(|_| draw(&mut rng)).collect();
        let k = 1 + rng.below(n);
        assert_eq!(knn_predict(&train, &q, k).unwrap(), knn_oracle(&train, &q, k));
    }
}

#[test]
fn knn_on_synthetic_samples() {
    let data = synthesize_dataset(&EnvProfile::corridor(4), 20, 1).unwrap();
    let model = KnnModel::fit(&data, 1).unwrap();
    for s in &data {
        assert_eq!(model.predict(s).unwrap(), s.label_m());
    }
    let all = KnnModel::fit(&data, data.len()).unwrap();
    let mean = data.iter().map(|s| s.label_m()).sum::<f64>() / data.len() as f64;
    assert!((all.predict(&data[0]).unwrap() - mean).abs() < 1e-12);
    let q: Vec<f64> = model.space.transform(&data[7]).iter().map(|v| v + 0.3).collect();
    assert_eq!(knn_predict(&model.points, &q, 5).unwrap(), knn_oracle(&model.points, &q, 5));
    assert!(matches!(KnnModel::fit(&data, 21), Err(BaselineError::BadK { .. })));
    assert!(matches!(KnnModel::fit(&[], 1), Err(BaselineError::EmptyTrain)));
}

#[test]
fn pathloss_recovers_known_model() {
    let truth = PathLossFit { ref_power_dbm: -40.0, exponent: 2.0 };
    let pts: Vec<(f64, f64)> = (1..=30).map(|i| i as f64 * 0.7).map(|d| (truth.rssi_at(d), d)).collect();
    let fit = fit_pathloss(&pts).unwrap();
    assert!((fit.exponent - 2.0).abs() <= 1e-9 * 2.0, "{fit:?}");
    assert!((fit.ref_power_dbm + 40.0).abs() <= 1e-9 * 40.0);
}

#[test]
fn ftm_calibration_recovers_offset_and_light_speed() {
    let ns_per_m = 2.0 / SPEED_OF_LIGHT_M_PER_S * 1e9;
    let with_offset: Vec<(f64, f64)> = (1..=40).map(|i| i as f64 * 0.5).map(|d| (d * ns_per_m + 1000.0, d)).collect();
    let c = fit_ftm(&with_offset).unwrap();
    assert!((c.intercept_m + 1000.0 * c.slope_m_per_ns).abs() <= 1e-6);
    let zero: Vec<(f64, f64)> = (1..=40).map(|i| i as f64 * 0.5).map(|d| (d * ns_per_m, d)).collect();
    let c = fit_ftm(&zero).unwrap();
    let half_c = SPEED_OF_LIGHT_M_PER_S / 2.0 * 1e-9;
    assert!((c.slope_m_per_ns - half_c).abs() <= 1e-6 * half_c);
    assert!((c.slope_m_per_ns - 0.1499).abs() < 1e-4);
}

fn triangle() -> [(f64, f64); 3] {
    [(0.0, 0.0), (10.0, 0.0), (0.0, 8.0)]
}

fn anchors_for(target: (f64, f64), delta: f64) -> Vec<Anchor> {
    triangle().iter().map(|&(x, y)| Anchor::new(x, y, (x - target.0).hypot(y - target.1) + delta)).collect()
}

#[test]
fn trilateration_recovers_exact_point() {
    let p = trilaterate(&anchors_for((2.0, 3.0), 0.0)).unwrap();
    assert!(p.dist(Point::new(2.0, 3.0)) < 1e-6, "{p:?}");
    let at_anchor = trilaterate(&anchors_for((10.0, 0.0), 0.0)).unwrap();
    assert!(at_anchor.dist(Point::new(10.0, 0.0)) < 1e-6, "{at_anchor:?}");
    let inflated = anchors_for((2.0, 3.0), 0.8);
    let q = trilaterate(&inflated).unwrap();
    assert!(range_cost(&inflated, q) > 0.0);
}

#[test]
fn consistent_ranges_give_capped_feedback() {
    let r = error_area(&anchors_for((2.0, 3.0), 0.0)).unwrap();
    assert!(r.area_m2 <= 1e-6, "{r:?}");
    assert_eq!(r.feedback, FEEDBACK_CAP);
    assert!(r.estimate.dist(Point::new(2.0, 3.0)) < 1e-6);
}

/// Monte-Carlo area of the triangle spanned by the pairwise points.
fn monte_carlo_area(v: &[Point], n: usize, seed: u64) -> f64 {
    assert_eq!(v.len(), 3);
    let (x0, x1) = (v.iter().map(|p| p.x).fold(f64::MAX, f64::min), v.iter().map(|p| p.x).fold(f64::MIN, f64::max));
    let (y0, y1) = (v.iter().map(|p| p.y).fold(f64::MAX, f64::min), v.iter().map(|p| p.y).fold(f64::MIN, f64::max));
    let side = |a: Point, b: Point, p: (f64, f64)| (b.x - a.x) * (p.1 - a.y) - (b.y - a.y) * (p.0 - a.x);
    let mut rng = SeededRng::new(seed);
    let mut hits = 0;
    for _ in 0..n {
        let p = (x0 + (x1 - x0) * rng.uniform(), y0 + (y1 - y0) * rng.uniform());
        let s = [side(v[0], v[1], p), side(v[1], v[2], p), side(v[2], v[0], p)];
        if s.iter().all(|&x| x >= 0.0) || s.iter().all(|&x| x <= 0.0) {
            hits += 1;
        }
    }
    (x1 - x0) * (y1 - y0) * hits as f64 / n as f64
}

#[test]
fn perturbed_area_matches_monte_carlo() {
    let anchors = anchors_for((2.0, 3.0), 0.5);
    let r = error_area(&anchors).unwrap();
    assert!(r.area_m2 > 0.0 && r.feedback.is_finite());
    let (_, verts) = error_polygon(&anchors).unwrap();
    let mc = monte_carlo_area(&verts, 400_000, 3);
    assert!((mc - r.area_m2).abs() <= 0.05 * r.area_m2, "mc {mc} vs {}", r.area_m2);
}

#[test]
fn area_shrinks_with_perturbation() {
    let mut last_area = f64::INFINITY;
    let mut last_feedback = 0.0;
    for k in (0..=20).rev() {
        let delta = k as f64 * 0.05;
        let r = error_area(&anchors_for((2.0, 3.0), delta)).unwrap();
        assert!(r.area_m2 <= last_area, "delta {delta}: {} > {last_area}", r.area_m2);
        assert!(r.feedback >= last_feedback);
        last_area = r.area_m2;
        last_feedback = r.feedback;
    }
    assert!(last_area <= 1e-6);
}

proptest! {
    #[test]
    fn pathloss_inverse_is_exact(rref in -60.0f64..-20.0, n in 1.0f64..5.0, d in 0.05f64..200.0) {
        let fit = PathLossFit { ref_power_dbm: rref, exponent: n };
        prop_assert!((pathloss_invert(&fit, fit.rssi_at(d)) - d).abs() <= 1e-9 * d);
    }

    #[test]
    fn trilateration_never_worse_than_centroid(tx in 0.5f64..9.0, ty in 0.5f64..7.0, noise in proptest::collection::vec(-1.0f64..1.0, 3)) {
        let anchors: Vec<Anchor> = triangle()
            .iter()
            .zip(&noise)
            .map(|(&(x, y), e)| Anchor::new(x, y, ((x - tx).hypot(y - ty) + e).max(0.0)))
            .collect();
        let c = Point::new(10.0 / 3.0, 8.0 / 3.0);
        let p = trilaterate(&anchors).unwrap();
        prop_assert!(range_cost(&anchors, p) <= range_cost(&anchors, c));
    }

    #[test]
    fn feedback_is_floored_and_capped(tx in 0.5f64..9.0, ty in 0.5f64..7.0, delta in 0.0f64..2.0) {
        let r = error_area(&anchors_for((tx, ty), delta)).unwrap();
        prop_assert!(r.feedback <= FEEDBACK_CAP && r.feedback > 0.0);
        prop_assert_eq!(r.feedback, (1.0 / r.area_m2.max(AREA_FLOOR_M2)).min(FEEDBACK_CAP));
    }
}
