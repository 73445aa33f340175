use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speakmatch::eval::{mann_whitney_u, midranks, roc_auc, PValueMethod};
use speakmatch::io::{
    label_records, load_ground_truth, load_segments, load_tracks, segment_records, track_records, write_jsonl,
};
use speakmatch::synth::{generate_scenario, ScenarioConfig};

/// Two-sided permutation p-value by enumerating every split of the pool.
fn brute_force_p(x: &[f64], y: &[f64]) -> f64 {
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let n = pooled.len();
    let k = x.len();
    let center = k as f64 * (n + 1) as f64 / 2.0;
    let observed: f64 = ranks[..k].iter().sum();
    let dev = (observed - center).abs();
    let (mut extreme, mut total) = (0u64, 0u64);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        total += 1;
        if (s - center).abs() >= dev - 1e-9 {
            extreme += 1;
        }
    }
    extreme as f64 / total as f64
}

#[test]
fn exact_mann_whitney_matches_enumeration_with_ties() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..300 {
        let n1 = rng.random_range(1..=7);
        let n2 = rng.random_range(1..=7);
        // Coarse values force ties.
        let x: Vec<f64> = (0..n1).map(|_| rng.random_range(0..4) as f64).collect();
        let y: Vec<f64> = (0..n2).map(|_| rng.random_range(0..4) as f64).collect();
        let got = mann_whitney_u(&x, &y, PValueMethod::Exact).unwrap();
        let want = brute_force_p(&x, &y);
        assert!(got.exact);
        assert!(
            (got.p_value - want).abs() < 1e-12,
            "x={x:?} y={y:?} got {} want {want}",
            got.p_value
        );
    }
}

#[test]
fn auroc_equals_normalized_u() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let n = rng.random_range(2..40);
        let scores: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 5.0).round()).collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let pos: Vec<f64> = scores
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l)
            .map(|(s, _)| *s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| !l)
            .map(|(s, _)| *s)
            .collect();
        let u = mann_whitney_u(&pos, &neg, PValueMethod::Auto).unwrap().u;
        let (auc, _) = roc_auc(&scores, &labels).unwrap();
        assert!((auc - u / (pos.len() * neg.len()) as f64).abs() < 1e-12);
    }
}

#[test]
fn normal_approximation_tracks_exact_for_moderate_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..20 {
        let x: Vec<f64> = (0..15).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..15).map(|_| rng.random::<f64>() + 0.2).collect();
        let exact = mann_whitney_u(&x, &y, PValueMethod::Exact).unwrap().p_value;
        let normal = mann_whitney_u(&x, &y, PValueMethod::Normal).unwrap().p_value;
        assert!((exact - normal).abs() < 0.02, "exact {exact} normal {normal}");
    }
}

#[test]
fn load_write_load_is_idempotent() {
    let sc = generate_scenario(&ScenarioConfig {
        num_segments: 30,
        audio_noise: 0.3,
        visual_noise: 0.3,
        offscreen_fraction: 0.2,
        seed: 12,
        ..ScenarioConfig::default()
    })
    .unwrap();
    let a = tempfile::tempdir().unwrap();
    sc.write_to(a.path()).unwrap();

    let segments = load_segments(&a.path().join("segments.jsonl")).unwrap();
    let tracks = load_tracks(&a.path().join("tracks.jsonl")).unwrap();
    let gt = load_ground_truth(&a.path().join("groundtruth.jsonl")).unwrap();
    assert_eq!(segments, sc.segments);
    assert_eq!(tracks, sc.tracks);
    assert_eq!(gt, sc.ground_truth);

    let b = tempfile::tempdir().unwrap();
    write_jsonl(&b.path().join("segments.jsonl"), &segment_records(&segments)).unwrap();
    write_jsonl(&b.path().join("tracks.jsonl"), &track_records(&tracks)).unwrap();
    write_jsonl(&b.path().join("groundtruth.jsonl"), &label_records(&gt)).unwrap();
    for f in ["segments.jsonl", "tracks.jsonl", "groundtruth.jsonl"] {
        let first = std::fs::read(a.path().join(f)).unwrap();
        let second = std::fs::read(b.path().join(f)).unwrap();
        assert_eq!(first, second, "{f} changed on rewrite");
    }
}
