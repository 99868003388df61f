mod common;

use adapool::baselines::kmeans::kmeans;
use adapool::calibration::{apply, calibrate, scale_grid, IntervalStream};
use adapool::dataset::{DataView, Dataset, Split, WindowIndex};
use adapool::losses::{huber, pinball, LossKind};
use adapool::metrics::{split_mean_loss, test_metrics, MethodEval};
use adapool::model::{forward_point, ModelShape, Params};
use adapool::synthetic::{adjusted_rand_index, generate, SyntheticSpec};
use common::*;
use proptest::prelude::*;
use rand::Rng;

fn empirical_quantile(sample: &[f64], q: f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let k = ((q * s.len() as f64).ceil() as usize).max(1);
    s[k - 1]
}

fn mean_pinball(sample: &[f64], a: f64, q: f64) -> f64 {
    sample.iter().map(|&y| pinball(y - a, q)).sum::<f64>() / sample.len() as f64
}

#[test]
fn pinball_minimizer_is_the_sorted_quantile() {
    let mut r = rng(20);
    for _ in 0..100 {
        let n = r.random_range(5..60);
        let q = r.random_range(0.05..0.95);
        let sample = normals(&mut r, n, 2.0);
        let oracle = mean_pinball(&sample, empirical_quantile(&sample, q), q);
        // the risk is convex and piecewise linear, so a minimizer sits on a sample point
        let best = sample.iter().map(|&a| mean_pinball(&sample, a, q)).fold(f64::INFINITY, f64::min);
        assert!(best <= oracle + 1e-12);
        let (lo, hi) = sample.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        for k in 0..=500 {
            let a = lo - 1.0 + (hi - lo + 2.0) * k as f64 / 500.0;
            assert!(oracle <= mean_pinball(&sample, a, q) + 1e-12);
        }
    }
}

#[test]
fn huber_examples() {
    assert!((huber(&[0.5f64], &[0.0], 1.0) - 0.125).abs() < 1e-12);
    assert!((huber(&[2.0f64], &[0.0], 1.0) - 1.5).abs() < 1e-12);
    assert!((huber(&[0.5f64, 2.0], &[0.0, 0.0], 1.0) - 0.8125).abs() < 1e-12);
}

fn eval<'a>(mse: &'a [f64], fb: Option<&'a [bool]>) -> MethodEval<'a> {
    MethodEval {
        method: "M",
        horizon: 1,
        k: None,
        series_mse: mse,
        series_mae: mse,
        series_pinball: None,
        coverage: None,
        coverage_cal: None,
        crossings: None,
        fallback: fb,
    }
}

#[test]
fn relative_gain_and_fallback_share() {
    let row = test_metrics(&eval(&[8.0], None), &[10.0]).unwrap();
    assert!((row.delta_pct - 20.0).abs() < 1e-12);
    let fb: Vec<bool> = (0..10).map(|i| i < 3).collect();
    let mse = vec![1.0; 10];
    let row = test_metrics(&eval(&mse, Some(&fb)), &mse).unwrap();
    assert_eq!(row.fb_pct, Some(30.0));
    // ties do not count as benefited
    assert_eq!(row.ben_pct, 0.0);
    assert!(test_metrics(&eval(&mse[..3], None), &mse).is_err());
}

#[test]
fn interval_containment_and_width() {
    let mut st = IntervalStream::new(1);
    st.push(0.0, -1.0, 1.0, 0.0);
    assert_eq!(st.coverage_at(1.0), 1.0);
    let (l, u) = apply(0.0, -1.0, 1.0, 1.0);
    assert_eq!(u - l, 2.0);
    let big = 1e300;
    let mut wide = IntervalStream::new(1);
    for y in [-1e6, 0.0, 3.0, 1e9] {
        wide.push(0.0, -big, big, y);
    }
    assert_eq!(wide.coverage_at(1.0), 1.0);
    assert_eq!(apply(0.4, 0.4, 0.4, 7.0), (0.4, 0.4));
}

#[test]
fn coverage_is_monotone_over_the_grid() {
    let mut r = rng(21);
    for _ in 0..20 {
        let mut st = IntervalStream::new(1);
        for _ in 0..200 {
            let m: f64 = r.random_range(-1.0..1.0);
            let (a, b): (f64, f64) = (r.random_range(0.0..1.0), r.random_range(0.0..1.0));
            st.push(m, m - a, m + b, m + 2.0 * r.random_range(-1.0..1.0));
        }
        let cov: Vec<f64> = scale_grid().iter().map(|&s| st.coverage_at(s)).collect();
        assert!(cov.windows(2).all(|w| w[0] <= w[1]));
        let t = calibrate(&[st.clone()], 0.8).unwrap();
        let e = &t.entries[0];
        assert_eq!(e.attained, *cov.last().unwrap() >= 0.8);
        if e.attained {
            assert!(e.val_coverage >= 0.8);
        }
    }
}

#[test]
fn apply_scales_half_widths_linearly() {
    let mut r = rng(22);
    for _ in 0..1000 {
        let m: f64 = r.random_range(-5.0..5.0);
        let l = m - r.random_range(0.0..3.0);
        let u = m + r.random_range(0.0..3.0);
        let (a, b) = apply(m, l, u, 1.0);
        assert!((a - l).abs() <= 1e-15 && (b - u).abs() <= 1e-15);
        let s = r.random_range(0.0..4.0);
        let (a, b) = apply(m, l, u, s);
        assert!(((b - m) - s * (u - m)).abs() < 1e-12);
        assert!(((m - a) - s * (m - l)).abs() < 1e-12);
    }
}

#[test]
fn split_mean_loss_is_the_window_average() {
    let (t, p, w) = (12, 2, 3);
    let mut r = rng(23);
    let ds = Dataset::from_series(vec!["a".into()], vec![normals(&mut r, t * p, 1.0)], t, p).unwrap();
    let params = random_params(ModelShape::point(p, 2, 3, w), 1, 0.2);
    let view = DataView::unaudited(&ds);
    let idx = WindowIndex::build(Split::Test, 9..12, w, &[1, 6]);
    let got = split_mean_loss(&params, view, &idx, 0, 1, LossKind::Mse, 1.0).unwrap().unwrap();
    let ends = idx.ends(1);
    assert_eq!(ends, &[8, 9, 10]);
    let losses: Vec<f64> = ends
        .iter()
        .map(|&e| {
            let f = forward_point(&params, ds.rows(0, e + 1 - w..e + 1)).unwrap();
            f.iter().zip(ds.row(0, e + 1)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p as f64
        })
        .collect();
    assert!((got - losses.iter().sum::<f64>() / 3.0).abs() < 1e-12);
    // TEST has three steps, so h=6 has no target
    assert_eq!(split_mean_loss(&params, view, &idx, 0, 6, LossKind::Mse, 1.0).unwrap(), None);
    let single = WindowIndex::build(Split::Test, 11..12, w, &[1]);
    let one = split_mean_loss(&params, view, &single, 0, 1, LossKind::Mse, 1.0).unwrap().unwrap();
    assert!((one - losses[2]).abs() < 1e-15);
    let q = Params::<f64>::init(ModelShape::point(p, 2, 3, w), 0);
    assert!(split_mean_loss(&q, view, &idx, 0, 1, LossKind::Pinball, 1.0).is_err());
}

#[test]
fn kmeans_recovers_separated_blobs() {
    let mut r = rng(24);
    for seed in 0..10 {
        let mut x = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in [[-5.0, 0.0, 2.0], [5.0, 1.0, -2.0]].iter().enumerate() {
            for _ in 0..15 {
                x.push(center.iter().map(|&m| m + 0.3 * r.random_range(-1.0..1.0)).collect::<Vec<f64>>());
                truth.push(c);
            }
        }
        let res = kmeans(&x, 2, seed, 100).unwrap();
        assert_eq!(adjusted_rand_index(&res.labels, &truth).unwrap(), 1.0);
    }
}

/// ARI from explicit enumeration of all point pairs.
fn pair_count_ari(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len();
    let (mut both, mut only_a, mut only_b, mut pairs) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            let sa = a[i] == a[j];
            let sb = b[i] == b[j];
            pairs += 1.0;
            if sa && sb {
                both += 1.0;
            }
            if sa {
                only_a += 1.0;
            }
            if sb {
                only_b += 1.0;
            }
        }
    }
    let expected = only_a * only_b / pairs;
    (both - expected) / (0.5 * (only_a + only_b) - expected)
}

#[test]
fn ari_matches_pair_enumeration() {
    let constant = vec![0; 10];
    let balanced: Vec<usize> = (0..10).map(|i| i % 2).collect();
    assert_eq!(adjusted_rand_index(&constant, &balanced).unwrap(), 0.0);
    assert_eq!(adjusted_rand_index(&balanced, &balanced).unwrap(), 1.0);
    let mut r = rng(25);
    for _ in 0..200 {
        let n = r.random_range(4..40);
        let a: Vec<usize> = (0..n).map(|_| r.random_range(0..4)).collect();
        let b: Vec<usize> = (0..n).map(|_| r.random_range(0..3)).collect();
        let oracle = pair_count_ari(&a, &b);
        if oracle.is_finite() {
            assert!((adjusted_rand_index(&a, &b).unwrap() - oracle).abs() < 1e-12);
        }
    }
    assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
}

proptest! {
    #[test]
    fn ari_is_symmetric(a in proptest::collection::vec(0usize..4, 2..30), seed in any::<u64>()) {
        let mut r = rng(seed);
        let b: Vec<usize> = a.iter().map(|_| r.random_range(0..3)).collect();
        let x = adjusted_rand_index(&a, &b).unwrap();
        let y = adjusted_rand_index(&b, &a).unwrap();
        prop_assert!((x - y).abs() < 1e-12);
        prop_assert!((-1.0..=1.0 + 1e-12).contains(&x));
    }

    #[test]
    fn ari_ignores_label_names(a in proptest::collection::vec(0usize..4, 2..30), perm in Just([2usize, 0, 3, 1])) {
        let renamed: Vec<usize> = a.iter().map(|&c| perm[c]).collect();
        prop_assert_eq!(adjusted_rand_index(&a, &renamed).unwrap(), 1.0);
        let b: Vec<usize> = a.iter().rev().copied().collect();
        let x = adjusted_rand_index(&a, &b).unwrap();
        let y = adjusted_rand_index(&renamed, &b).unwrap();
        prop_assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn generator_separates_regimes_at_low_noise() {
    for seed in 0..3 {
        let syn = generate(&SyntheticSpec { noise: 0.03, seed, ..Default::default() }).unwrap();
        assert!(syn.separability > 0.9, "seed {seed}: {}", syn.separability);
    }
}

#[test]
fn generator_stays_bounded_and_balanced() {
    for seed in 0..5 {
        for alpha in [0.0, 0.5, 1.0] {
            let syn = generate(&SyntheticSpec { alpha, seed, ..Default::default() }).unwrap();
            assert!(syn.dataset.values().iter().all(|v| v.abs() < 50.0));
            let mut sizes = [0usize; 3];
            for &l in &syn.labels {
                sizes[l] += 1;
            }
            assert_eq!(sizes, [10, 10, 10]);
        }
    }
}
