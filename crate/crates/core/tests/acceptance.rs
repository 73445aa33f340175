//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=1,3` restricts the run to the listed criteria.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use speakmatch::eval::{confusion_by_group, confusion_metrics, mann_whitney_u, roc_auc, PValueMethod};
use speakmatch::identity::{build_distance_matrix, row_pearson};
use speakmatch::io::{load_assignments, load_ground_truth, load_pins, load_segments, load_tracks};
use speakmatch::pipeline::{assign, AssignConfig, AssignOutput};
use speakmatch::solver::{
    best_single_move_gain, partition_rng, random_init, solve_partition, stage1_optimize, ObjectiveCache,
};
use speakmatch::synth::{brute_force_oracle, generate_scenario, ScenarioConfig, SyntheticScenario};
use speakmatch::{corr_objective, DiagonalPolicy, DistanceMatrix, EmbeddingVector, PinSet, SolverConfig};

const OBJ_TOL: f64 = 1e-9;
const EXACT_TOL: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn scenario(cfg: ScenarioConfig) -> SyntheticScenario {
    generate_scenario(&cfg).expect("valid scenario")
}

fn run_pipeline(sc: &SyntheticScenario, pins: &PinSet, stage2: bool, seed: u64) -> AssignOutput {
    run_with_restarts(sc, pins, stage2, seed, 1)
}

fn run_with_restarts(sc: &SyntheticScenario, pins: &PinSet, stage2: bool, seed: u64, restarts: usize) -> AssignOutput {
    let mut config = AssignConfig {
        stage2,
        ..AssignConfig::default()
    };
    config.solver.seed = seed;
    config.solver.restarts = restarts;
    assign(&sc.segments, &sc.tracks, pins, &config).expect("assign succeeds")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut hits, mut exceeded, total) = (0, 0, 200);
    for inst in 0..total {
        let cfg = ScenarioConfig {
            num_segments: rng.random_range(3..=8),
            candidates_per_segment: rng.random_range(2..=3),
            audio_noise: 0.3,
            visual_noise: 0.3,
            seed: inst,
            ..ScenarioConfig::default()
        };
        let sc = scenario(cfg);
        let problem = sc.problem().unwrap();
        let (_, best) = brute_force_oracle(&problem, DiagonalPolicy::Include).unwrap();
        let config = SolverConfig {
            restarts: 5,
            seed: inst,
            ..SolverConfig::default()
        };
        let (state, _) = solve_partition(&problem, &PinSet::new(), &config, 0).unwrap();
        if state.objective > best + OBJ_TOL {
            exceeded += 1;
        }
        if (state.objective - best).abs() <= OBJ_TOL {
            hits += 1;
        }
    }
    let elapsed = start.elapsed();
    let rate = hits as f64 / total as f64;
    outcome(
        rate >= 0.90 && exceeded == 0 && elapsed < Duration::from_secs(60),
        format!("optimum hit {hits}/{total} ({rate:.3} >= 0.90), exceeded {exceeded}, {elapsed:.1?} < 60s"),
    )
}

fn monotone_and_one_opt() -> Outcome {
    let start = Instant::now();
    let (mut monotone, mut one_opt, mut worst_gain) = (0, 0, 0.0f64);
    let total = 100;
    for seed in 0..total {
        let sc = scenario(ScenarioConfig {
            num_segments: 50,
            candidates_per_segment: 3,
            audio_noise: 0.3,
            visual_noise: 0.3,
            seed,
            ..ScenarioConfig::default()
        });
        let problem = sc.problem().unwrap();
        let config = SolverConfig {
            seed,
            ..SolverConfig::default()
        };
        let init = random_init(&problem.candidate_map(), &PinSet::new(), &mut partition_rng(seed, 0, 0)).unwrap();
        let state = stage1_optimize(&problem, &init, &PinSet::new(), &config).unwrap();
        if state.epoch_history.windows(2).all(|w| w[1] >= w[0] - EXACT_TOL) {
            monotone += 1;
        }
        let gain = best_single_move_gain(&problem, &state, &PinSet::new(), DiagonalPolicy::Include).unwrap();
        worst_gain = worst_gain.max(gain);
        if gain <= OBJ_TOL {
            one_opt += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        monotone == total && one_opt == total && elapsed < Duration::from_secs(120),
        format!(
            "monotone {monotone}/{total}, 1-opt {one_opt}/{total} (max single-move gain {worst_gain:.2e}), {elapsed:.1?} < 120s"
        ),
    )
}

fn clean_recovery() -> Outcome {
    let mut f1s = Vec::new();
    for seed in 0..10 {
        let sc = scenario(ScenarioConfig {
            num_characters: 5,
            num_segments: 100,
            candidates_per_segment: 3,
            seed,
            ..ScenarioConfig::default()
        });
        let out = run_pipeline(&sc, &PinSet::new(), false, seed);
        f1s.push(confusion_metrics(&out.stage1, &sc.ground_truth).unwrap().f1());
    }
    let all = f1s.iter().all(|&f| f == 1.0);
    outcome(all, format!("stage-1 F1 per seed {f1s:?}, all == 1.0"))
}

fn random_vs_optimized() -> Outcome {
    let (mut opt, mut rand_f1) = (Vec::new(), Vec::new());
    for seed in 0..20 {
        let sc = scenario(ScenarioConfig {
            audio_noise: 0.4,
            visual_noise: 0.4,
            seed,
            ..ScenarioConfig::default()
        });
        let init = random_init(&sc.candidates, &PinSet::new(), &mut partition_rng(seed, 0, 0)).unwrap();
        rand_f1.push(confusion_metrics(&init, &sc.ground_truth).unwrap().f1());
        let out = run_pipeline(&sc, &PinSet::new(), false, seed);
        opt.push(confusion_metrics(&out.stage1, &sc.ground_truth).unwrap().f1());
    }
    let gap = mean(&opt) - mean(&rand_f1);
    outcome(
        gap >= 0.15,
        format!(
            "mean F1 optimized {:.3} vs random {:.3}, gap {gap:.3} >= 0.15",
            mean(&opt),
            mean(&rand_f1)
        ),
    )
}

fn stage2_behaviour() -> Outcome {
    let (mut aucs, mut precision_ok, mut recall_drops) = (Vec::new(), 0, Vec::new());
    let seeds = 20;
    for seed in 0..seeds {
        let sc = scenario(ScenarioConfig {
            offscreen_fraction: 0.2,
            audio_noise: 0.3,
            visual_noise: 0.3,
            seed,
            ..ScenarioConfig::default()
        });
        let out = run_pipeline(&sc, &PinSet::new(), true, seed);
        let scores: Vec<f64> = out.records.iter().map(|r| -r.score).collect();
        let offscreen: Vec<bool> = out
            .records
            .iter()
            .map(|r| sc.ground_truth[&r.segment_id].track().is_none())
            .collect();
        aucs.push(roc_auc(&scores, &offscreen).unwrap().0);
        let before = confusion_metrics(&out.stage1, &sc.ground_truth).unwrap();
        let after = confusion_metrics(&out.assignment, &sc.ground_truth).unwrap();
        if after.precision() >= before.precision() {
            precision_ok += 1;
        }
        recall_drops.push(before.recall() - after.recall());
    }
    let auc = mean(&aucs);
    let ok_rate = precision_ok as f64 / seeds as f64;
    let drop = mean(&recall_drops);
    outcome(
        auc >= 0.90 && ok_rate >= 0.90 && drop <= 0.10,
        format!(
            "(a) mean auROC {auc:.3} >= 0.90; (b) precision kept in {precision_ok}/{seeds} ({ok_rate:.2} >= 0.90), mean recall drop {drop:.3} <= 0.10"
        ),
    )
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> DistanceMatrix {
    let embeddings: Vec<EmbeddingVector> = (0..n)
        .map(|_| EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let refs: Vec<&EmbeddingVector> = embeddings.iter().collect();
    build_distance_matrix(&refs, (0..n).map(|i| format!("x{i}")).collect()).unwrap()
}

fn duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(3..30);
        let sd = random_matrix(&mut rng, n, 8);
        let fd = random_matrix(&mut rng, n, 8);
        let from_distance = corr_objective(&sd, &fd, DiagonalPolicy::Include).unwrap();
        let sim = |m: &DistanceMatrix, i: usize| m.row(i).iter().map(|d| 1.0 - d).collect::<Vec<_>>();
        let from_similarity = (0..n)
            .map(|i| row_pearson(&sim(&sd, i), &sim(&fd, i), None).unwrap())
            .sum::<f64>()
            / n as f64;
        worst = worst.max((from_distance - from_similarity).abs());
    }
    outcome(
        worst <= EXACT_TOL,
        format!("max |distance - similarity| {worst:.2e} <= 1e-12 over 100 instances"),
    )
}

fn incremental_updates() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 100;
    let dim = 16;
    let speech: Vec<EmbeddingVector> = (0..n)
        .map(|_| EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let pool: Vec<EmbeddingVector> = (0..3 * n)
        .map(|_| EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
        .collect();
    let order: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let sd = build_distance_matrix(&speech.iter().collect::<Vec<_>>(), order.clone()).unwrap();
    let mut picks: Vec<usize> = (0..n).map(|i| 3 * i).collect();
    let face = |picks: &[usize]| {
        build_distance_matrix(&picks.iter().map(|&p| &pool[p]).collect::<Vec<_>>(), order.clone()).unwrap()
    };
    let mut cache = ObjectiveCache::new(&sd, &face(&picks), DiagonalPolicy::Include).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let i = rng.random_range(0..n);
        picks[i] = 3 * i + rng.random_range(0..3);
        let column: Vec<f64> = (0..n)
            .map(|r| speakmatch::cosine_distance(&pool[picks[r]], &pool[picks[i]]).unwrap())
            .collect();
        let incremental = cache.apply_reassignment(i, &column);
        let full = corr_objective(&sd, &face(&picks), DiagonalPolicy::Include).unwrap();
        worst = worst.max((incremental - full).abs());
    }
    outcome(
        worst <= OBJ_TOL,
        format!("max |incremental - full| {worst:.2e} <= 1e-9 over 1000 moves on 100x100"),
    )
}

/// Counts of U for every arrangement of `a` x-values among `b` y-values,
/// by the classic recursion on the largest element.
fn u_counts(a: usize, b: usize, memo: &mut HashMap<(usize, usize), Vec<u128>>) -> Vec<u128> {
    if let Some(v) = memo.get(&(a, b)) {
        return v.clone();
    }
    let v = if a == 0 || b == 0 {
        vec![1]
    } else {
        // Largest value is an x (beats all b y's) or a y.
        let with_x = u_counts(a - 1, b, memo);
        let with_y = u_counts(a, b - 1, memo);
        let mut out = vec![0u128; a * b + 1];
        for (u, c) in with_x.iter().enumerate() {
            out[u + b] += c;
        }
        for (u, c) in with_y.iter().enumerate() {
            out[u] += c;
        }
        out
    };
    memo.insert((a, b), v.clone());
    v
}

fn metric_cross_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst_auc = 0.0f64;
    for _ in 0..100 {
        let n1 = rng.random_range(1..40);
        let n2 = rng.random_range(1..40);
        // Coarse scores so ties are common.
        let x: Vec<f64> = (0..n1).map(|_| rng.random_range(0..10) as f64).collect();
        let y: Vec<f64> = (0..n2).map(|_| rng.random_range(0..10) as f64).collect();
        let scores: Vec<f64> = x.iter().chain(&y).copied().collect();
        let labels: Vec<bool> = (0..n1 + n2).map(|i| i < n1).collect();
        let (auc, _) = roc_auc(&scores, &labels).unwrap();
        let mw = mann_whitney_u(&x, &y, PValueMethod::Auto).unwrap();
        worst_auc = worst_auc.max((auc - mw.u / (n1 * n2) as f64).abs());
    }

    let mut memo = HashMap::new();
    let (mut sizes, mut worst_p) = (0, 0.0f64);
    for n1 in 1..=400usize {
        for n2 in 1..=400 / n1 {
            let mut values: Vec<f64> = (0..n1 + n2).map(|v| v as f64).collect();
            for i in (1..values.len()).rev() {
                values.swap(i, rng.random_range(0..=i));
            }
            let (x, y) = values.split_at(n1);
            let mw = mann_whitney_u(x, y, PValueMethod::Exact).unwrap();
            let counts = u_counts(n1, n2, &mut memo);
            let total: u128 = counts.iter().sum();
            let center = (n1 * n2) as f64 / 2.0;
            let observed = (mw.u - center).abs();
            let extreme: u128 = counts
                .iter()
                .enumerate()
                .filter(|(u, _)| (*u as f64 - center).abs() >= observed - 1e-9)
                .map(|(_, c)| c)
                .sum();
            let p = (extreme as f64 / total as f64).min(1.0);
            worst_p = worst_p.max((p - mw.p_value).abs());
            sizes += 1;
        }
    }

    let ranked = |labels: &[bool]| -> Vec<speakmatch::eval::RankedPrediction> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| speakmatch::eval::RankedPrediction {
                unit_id: format!("u{i}"),
                score: (labels.len() - i) as f64,
                label,
                weight: 1.0,
            })
            .collect()
    };
    let ap = speakmatch::eval::average_precision(&ranked(&[true, false, true])).unwrap();
    outcome(
        worst_auc <= EXACT_TOL && worst_p <= EXACT_TOL && ap == 5.0 / 6.0,
        format!(
            "auROC vs U/(n1 n2) max err {worst_auc:.2e}; exact p vs enumeration max err {worst_p:.2e} over {sizes} size pairs; AP(1,0,1) = {ap}"
        ),
    )
}

fn per_character_f1(sc: &SyntheticScenario, out: &AssignOutput) -> HashMap<String, f64> {
    confusion_by_group(&out.stage1, &sc.ground_truth, |t| sc.track_character.get(t).cloned())
        .unwrap()
        .into_iter()
        .filter(|(c, _)| c.starts_with('c'))
        .map(|(c, counts)| (c, counts.f1()))
        .collect()
}

/// Five restarts per run, so each arm reports what the objective prefers
/// rather than which basin one random start fell into.
fn columbia_degenerate() -> Outcome {
    let mut free: HashMap<String, Vec<f64>> = HashMap::new();
    let mut pinned: HashMap<String, Vec<f64>> = HashMap::new();
    for seed in 0..10 {
        let sc = scenario(ScenarioConfig::columbia_degenerate(seed));
        for (c, f) in per_character_f1(&sc, &run_with_restarts(&sc, &PinSet::new(), false, seed, 5)) {
            free.entry(c).or_default().push(f);
        }
        let pins = sc.select_pins(0.15, seed);
        for (c, f) in per_character_f1(&sc, &run_with_restarts(&sc, &pins, false, seed, 5)) {
            pinned.entry(c).or_default().push(f);
        }
    }
    let avg = |m: &HashMap<String, Vec<f64>>| {
        let mut v: Vec<(String, f64)> = m.iter().map(|(c, f)| (c.clone(), mean(f))).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    };
    let (free, pinned) = (avg(&free), avg(&pinned));
    let pair_low = free
        .iter()
        .filter(|(c, _)| c == "c0" || c == "c1")
        .all(|(_, f)| *f < 0.5);
    let all_high = pinned.len() == 5 && pinned.iter().all(|(_, f)| *f > 0.9);
    let fmt = |v: &[(String, f64)]| {
        v.iter()
            .map(|(c, f)| format!("{c}={f:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    outcome(
        pair_low && all_high,
        format!(
            "unpinned [{}] (c0,c1 < 0.5); 15% pins [{}] (all > 0.9)",
            fmt(&free),
            fmt(&pinned)
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_speakmatch"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn round_trip(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    run_cli(
        dir,
        &[
            "synth",
            "--seed",
            "11",
            "--num-segments",
            "60",
            "--offscreen-fraction",
            "0.2",
            "--audio-noise",
            "0.3",
            "--visual-noise",
            "0.3",
            "--pin-fraction",
            "0.1",
            "--out",
            "data",
        ],
    )?;
    run_cli(
        dir,
        &[
            "assign",
            "--segments",
            "data/segments.jsonl",
            "--tracks",
            "data/tracks.jsonl",
            "--pins",
            "data/pins.jsonl",
            "--ground-truth",
            "data/groundtruth.jsonl",
            "--seed",
            "3",
            "--partition-size",
            "25",
            "--dump-matrices",
            "--out",
            "run",
        ],
    )?;
    run_cli(
        dir,
        &[
            "eval",
            "--assignments",
            "run/assignments.jsonl",
            "--ground-truth",
            "data/groundtruth.jsonl",
            "--segments",
            "data/segments.jsonl",
            "--tracks",
            "data/tracks.jsonl",
            "--out",
            "report",
        ],
    )?;

    let d = |p: &str| dir.join(p);
    load_segments(&d("data/segments.jsonl")).map_err(|e| e.to_string())?;
    load_tracks(&d("data/tracks.jsonl")).map_err(|e| e.to_string())?;
    load_ground_truth(&d("data/groundtruth.jsonl")).map_err(|e| e.to_string())?;
    load_pins(&d("data/pins.jsonl")).map_err(|e| e.to_string())?;
    load_assignments(&d("run/assignments.jsonl")).map_err(|e| e.to_string())?;
    for json in ["data/scenario.json", "run/run.json", "report/report.json"] {
        let body = std::fs::read_to_string(d(json)).map_err(|e| e.to_string())?;
        serde_json::from_str::<serde_json::Value>(&body).map_err(|e| format!("{json}: {e}"))?;
    }

    let mut files = Vec::new();
    for sub in ["data", "run", "report"] {
        let mut entries: Vec<_> = std::fs::read_dir(d(sub))
            .map_err(|e| e.to_string())?
            .flatten()
            .collect();
        entries.sort_by_key(|e| e.file_name());
        for e in entries {
            let bytes = std::fs::read(e.path()).map_err(|e| e.to_string())?;
            files.push((format!("{sub}/{}", e.file_name().to_string_lossy()), bytes));
        }
    }
    Ok(files)
}

fn determinism_and_formats() -> Outcome {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    match (round_trip(a.path()), round_trip(b.path())) {
        (Ok(first), Ok(second)) => {
            let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
            let identical = first == second;
            outcome(
                identical,
                format!(
                    "{} files re-validated, byte-identical across runs: {identical} ({})",
                    names.len(),
                    names.join(", ")
                ),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("round trip failed: {e}")),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", oracle_equivalence),
        ("monotonicity and 1-opt", monotone_and_one_opt),
        ("clean recovery", clean_recovery),
        ("random vs optimized gap", random_vs_optimized),
        ("stage-2 behaviour", stage2_behaviour),
        ("duality invariant", duality),
        ("incremental update", incremental_updates),
        ("metric cross-checks", metric_cross_checks),
        ("columbia-degenerate preset", columbia_degenerate),
        ("determinism and formats", determinism_and_formats),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|n| n.trim().parse().ok()).collect());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let result = check();
        let tag = if result.pass { "PASS" } else { "FAIL" };
        println!("{tag} [{id:>2}] {name}: {}", result.detail);
        failed += usize::from(!result.pass);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
