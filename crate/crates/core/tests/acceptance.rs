//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng as _;
use relplan::cli::bench_cases;
use relplan::exec::Exec;
use relplan::geometry::{check_feasible, collision_residuals, predicate_residuals, Layout, PlacementProblem, SolverConfig};
use relplan::labeler::{generate, GenConfig, Sample};
use relplan::net::eval::{beta_grid, beta_sweep, score};
use relplan::net::model::predict_sample;
use relplan::net::train::{backward, split_holdout, train_batch_polling, TrainConfig};
use relplan::net::{weighted_bce_loss, ModelDims, ModelParams, ParamGroup};
use relplan::planner::{
    compare, plan, predict_relevant_set, BenchCase, FixedScores, HeuristicMode, HeuristicVariant, PredictorSource,
    RelevancePredictor,
};
use relplan::rng::{derive_seed, rng_from};
use relplan::scene::{
    eval_predicate, footprints_overlap, sample_scene, GoalPredicate, ObjectId, ObjectSpec, PlacedObject, Pose2,
    PredicateKind, Scene, DEFAULT_MARGIN,
};
use relplan::labeler::sample_goal;
use relplan::symbolic::{enumerate_skeletons, Skeleton};

const PLANAR: [PredicateKind; 4] = [
    PredicateKind::OnLeft,
    PredicateKind::OnRight,
    PredicateKind::InFront,
    PredicateKind::Behind,
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Seeded small scenes with goals over every predicate kind, solvable or not.
fn small_cases(n: usize, seed: u64) -> Vec<(Scene, GoalPredicate)> {
    let mut out = Vec::with_capacity(n);
    let mut i = 0u64;
    while out.len() < n {
        let kind = PredicateKind::ALL[i as usize % PredicateKind::ALL.len()];
        let mut rng = rng_from(derive_seed(seed, &[i]));
        let objects = rng.random_range(3..=6);
        i += 1;
        let Ok(scene) = sample_scene(objects, derive_seed(seed, &[i, 7]), kind == PredicateKind::OnTop) else {
            continue;
        };
        let goal = sample_goal(&scene, kind, &mut rng);
        out.push((scene, goal));
    }
    out
}

/// Every pick/place sequence over the scene's objects, ordered by length and
/// then by object ids, keeping those that end on the subject and never pick a
/// support before its stacked object left.
fn brute_force_skeletons(scene: &Scene, g: &GoalPredicate, k_max: usize) -> Vec<Vec<ObjectId>> {
    let ids = scene.ids();
    let mut out = Vec::new();
    for pairs in 1..=k_max / 2 {
        let mut digits = vec![0usize; pairs];
        loop {
            let seq: Vec<ObjectId> = digits.iter().map(|&d| ids[d]).collect();
            let ends_on_subject = *seq.last().unwrap() == g.subject;
            let supports_ok = seq.iter().enumerate().all(|(i, o)| {
                scene
                    .on_top_of
                    .iter()
                    .filter(|&(_, s)| s == o)
                    .all(|(top, _)| seq[..i].contains(top))
            });
            if ends_on_subject && supports_ok {
                out.push(seq);
            }
            // odometer increment, last digit fastest
            let mut k = pairs;
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                digits[k] += 1;
                if digits[k] < ids.len() {
                    break;
                }
                digits[k] = 0;
            }
            if digits.iter().all(|&d| d == 0) {
                break;
            }
        }
    }
    out
}

fn first_of(items: &[String]) -> String {
    items.first().map(|m| format!(", first: {m}")).unwrap_or_default()
}

fn criterion_1() -> Outcome {
    let k_max = 6;
    let solver = SolverConfig::default();
    let cases = small_cases(200, 101);
    let mut mismatches = Vec::new();
    let mut solved = 0;
    for (idx, (scene, g)) in cases.iter().enumerate() {
        let brute = brute_force_skeletons(scene, g, k_max);
        let all: BTreeSet<ObjectId> = scene.ids().into_iter().collect();
        let listed: Vec<Vec<ObjectId>> = enumerate_skeletons(scene, g, &all, k_max)
            .unwrap()
            .map(|s| s.objects())
            .collect();
        if listed != brute {
            mismatches.push(format!("scene {idx}: enumeration differs"));
            continue;
        }
        let mut first = None;
        for (i, seq) in brute.iter().enumerate() {
            let sk = Skeleton::from_objects(seq);
            let problem = PlacementProblem::new(scene, &sk, *g, solver).unwrap();
            if check_feasible(&problem).unwrap().feasible {
                first = Some((i + 1, sk.to_string()));
                break;
            }
        }
        let m = plan(scene, g, HeuristicMode::baseline(), None, k_max, &solver).unwrap();
        let planner_first = m.solution.as_ref().map(|s| (m.feasibility_checks, s.skeleton.clone()));
        if planner_first != first || (first.is_none() && m.feasibility_checks != brute.len()) {
            mismatches.push(format!("scene {idx}: planner {planner_first:?} vs brute force {first:?}"));
        }
        solved += first.is_some() as usize;
    }
    outcome(
        mismatches.is_empty(),
        format!("{} scenes, {solved} solvable, {} mismatches{}", cases.len(), mismatches.len(), first_of(&mismatches)),
    )
}

/// Probabilities from `predictor` for every case, computed once.
fn cached_scores(predictor: &dyn RelevancePredictor, cases: &[(Scene, GoalPredicate)]) -> Vec<FixedScores> {
    cases
        .iter()
        .map(|(s, g)| FixedScores(predictor.probabilities(s, g).unwrap()))
        .collect()
}

fn criterion_2(trained: &ModelParams) -> Outcome {
    let k_max = 6;
    let solver = SolverConfig::default();
    let cases = small_cases(200, 202);
    let baseline: Vec<bool> = Exec::Parallel.map(&cases, |(s, g)| {
        plan(s, g, HeuristicMode::baseline(), None, k_max, &solver).unwrap().solved
    });
    let mut predictors: Vec<(String, Vec<Option<FixedScores>>)> = Vec::new();
    for seed in [1u64, 2] {
        let m = ModelParams::init(ModelDims::default(), &PredicateKind::ALL, seed).unwrap();
        predictors.push((format!("random model {seed}"), cached_scores(&m, &cases).into_iter().map(Some).collect()));
    }
    // the trained model has planar heads only
    predictors.push((
        "trained model".into(),
        cases
            .iter()
            .map(|(s, g)| g.kind.is_planar().then(|| FixedScores(trained.probabilities(s, g).unwrap())))
            .collect(),
    ));
    let mut rng = rng_from(9);
    predictors.push((
        "uniform scores".into(),
        cases
            .iter()
            .map(|(s, _)| Some(FixedScores(s.ids().into_iter().map(|id| (id, rng.random::<f64>())).collect())))
            .collect(),
    ));
    let betas = [0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0];
    let mut runs = 0;
    let mut fallbacks = 0;
    let mut mismatches = Vec::new();
    for (name, scores) in &predictors {
        for &beta in &betas {
            let mode = HeuristicMode::new(HeuristicVariant::Admissible, beta).unwrap();
            let idx: Vec<usize> = (0..cases.len()).filter(|&i| scores[i].is_some()).collect();
            let results = Exec::Parallel.map(&idx, |&i| {
                let (s, g) = &cases[i];
                let p: &dyn RelevancePredictor = scores[i].as_ref().unwrap();
                plan(s, g, mode, Some(p), k_max, &solver).unwrap()
            });
            for (&i, m) in idx.iter().zip(&results) {
                runs += 1;
                fallbacks += m.used_fallback as usize;
                if m.solved != baseline[i] {
                    mismatches.push(format!("{name} beta {beta}: scene {i}"));
                }
            }
        }
    }
    let solvable = baseline.iter().filter(|&&b| b).count();
    outcome(
        mismatches.is_empty(),
        format!(
            "{} scenes ({solvable} solvable), {runs} admissible runs, {fallbacks} fallbacks, {} mismatches{}",
            cases.len(),
            mismatches.len(),
            first_of(&mismatches)
        ),
    )
}

fn criterion_3() -> Outcome {
    let mut config = GenConfig::new(200, PLANAR.to_vec(), 42);
    config.object_range = (10, 10);
    let cases = bench_cases(&config, 200, Exec::Parallel).unwrap();
    let modes = [
        HeuristicMode::baseline(),
        HeuristicMode::new(HeuristicVariant::Admissible, 0.5).unwrap(),
    ];
    let cmp = compare(&cases, &modes, &PredictorSource::Oracle, config.k_max, &config.solver, Exec::Parallel).unwrap();
    let base = &cmp.summary[0];
    let adm = &cmp.summary[1];
    let speedup = adm.speedup_checks.unwrap();
    outcome(
        speedup >= 0.40 && adm.solve_rate == base.solve_rate,
        format!(
            "mean checks {:.3} -> {:.3}, speed-up {:.1}% (need >= 40%)",
            base.mean_checks,
            adm.mean_checks,
            100.0 * speedup
        ),
    )
}

fn criterion_4() -> Outcome {
    let config = GenConfig::new(500, PLANAR.to_vec(), 42);
    let g = generate(&config, Exec::Parallel).unwrap();
    let total = g.stats().total();
    let f = total.relevant_fraction();
    outcome(
        (0.08..=0.25).contains(&f),
        format!(
            "{} scenes, {} relevant / {} samples = {:.4} (need [0.08, 0.25])",
            g.scenes.len(),
            total.relevant,
            total.total(),
            f
        ),
    )
}

fn batch_loss(params: &ModelParams, batch: &[&Sample], eta: f64) -> f64 {
    batch
        .iter()
        .map(|s| weighted_bce_loss(predict_sample(params, s).unwrap(), s.label, eta))
        .sum::<f64>()
        / batch.len() as f64
}

fn criterion_5() -> Outcome {
    let mut config = GenConfig::new(4, vec![PredicateKind::OnLeft], 5);
    config.object_range = (3, 5);
    let data = generate(&config, Exec::Parallel).unwrap().dataset;
    let mut batch: Vec<&Sample> = data.samples.iter().filter(|s| s.label == 1).take(2).collect();
    batch.extend(data.samples.iter().filter(|s| s.label == 0).take(2));
    let eta = 0.86;
    let params = ModelParams::init(ModelDims::default(), &[PredicateKind::OnLeft], 7).unwrap();
    let analytic: Vec<f64> = backward(&batch, &params, eta, Exec::Parallel)
        .unwrap()
        .grads
        .dense(&params)
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.iter().copied())
        .collect();
    let mut by_group: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut off = 0;
    for (group, t) in params.tensors() {
        let entry = by_group.entry(format!("{group:?}")).or_default();
        entry.extend((off..off + t.len()).filter(|&i| analytic[i] != 0.0));
        off += t.len();
    }
    let h = 1e-4;
    let mut rng = rng_from(55);
    let mut probe = params.clone();
    let nudge = |m: &mut ModelParams, idx: usize, delta: f64| {
        let mut off = idx;
        for t in m.tensors_mut() {
            if off < t.len() {
                t[off] += delta;
                return;
            }
            off -= t.len();
        }
    };
    let mut worst: Vec<String> = Vec::new();
    let mut pass = by_group.len() == ParamGroup::ALL.len();
    for (group, candidates) in &by_group {
        let picks: Vec<usize> = (0..50.min(candidates.len()))
            .map(|_| candidates[rng.random_range(0..candidates.len())])
            .collect();
        let mut max_rel: f64 = 0.0;
        for &idx in &picks {
            nudge(&mut probe, idx, h);
            let up = batch_loss(&probe, &batch, eta);
            nudge(&mut probe, idx, -2.0 * h);
            let down = batch_loss(&probe, &batch, eta);
            nudge(&mut probe, idx, h);
            let fd = (up - down) / (2.0 * h);
            let a = analytic[idx];
            let rel = (a - fd).abs() / a.abs().max(fd.abs());
            max_rel = max_rel.max(rel);
        }
        pass &= picks.len() == 50 && max_rel <= 1e-3;
        worst.push(format!("{group} {:.1e}", max_rel));
    }
    outcome(pass, format!("50 params per group, h=1e-4, max rel error: {}", worst.join(", ")))
}

fn criterion_6() -> Outcome {
    let mut max_diff: f64 = 0.0;
    for i in 1..1000 {
        let p = i as f64 / 1000.0;
        for y in [0u8, 1] {
            let yf = f64::from(y);
            let standard = -(yf * p.ln() + (1.0 - yf) * (1.0 - p).ln());
            max_diff = max_diff.max((weighted_bce_loss(p, y, 1.0) - standard).abs());
        }
    }
    let ln2 = std::f64::consts::LN_2;
    let examples = [
        (weighted_bce_loss(0.5, 1, 1.0), ln2),
        (weighted_bce_loss(0.5, 0, 0.3), ln2),
        (weighted_bce_loss(0.5, 0, 1.0), ln2),
        (weighted_bce_loss(0.5, 1, 0.86), 0.596_107),
    ];
    let ex_err = examples.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        max_diff <= 1e-12 && ex_err <= 1e-6,
        format!("eta=1 vs standard max diff {max_diff:.1e}; examples max err {ex_err:.1e}"),
    )
}

fn criterion_7() -> (Outcome, ModelParams, relplan::labeler::Dataset) {
    let mut gen = GenConfig::new(500, PLANAR.to_vec(), 42);
    gen.object_range = (3, 6);
    let data = generate(&gen, Exec::Parallel).unwrap().dataset;
    let mut train = BTreeMap::new();
    let mut held = BTreeMap::new();
    let mut pooled = relplan::labeler::Dataset::default();
    for (k, d) in data.by_kind() {
        let (tr, te) = split_holdout(&d, 0.2);
        pooled.samples.extend(te.samples.iter().cloned());
        train.insert(k, tr);
        held.insert(k, te);
    }
    let config = TrainConfig {
        learning_rate: 1e-3,
        epochs: 20,
        seed: 42,
        ..Default::default()
    };
    let started = Instant::now();
    let (state, _) = train_batch_polling(&train, &held, &config, None, Exec::Parallel, |st, ms| {
        let (mut hits, mut n) = (0.0, 0.0);
        for m in ms {
            let e = m.heldout.as_ref().unwrap();
            hits += e.total_accuracy * e.n as f64;
            n += e.n as f64;
        }
        eprintln!(
            "    epoch {:>2} held-out accuracy {:.4} ({:.0?})",
            st.epochs_completed,
            hits / n,
            started.elapsed()
        );
        Ok(())
    })
    .unwrap();
    let m = relplan::net::evaluate(&state.params, &pooled, 0.5, Exec::Parallel).unwrap();
    (
        outcome(
            m.total_accuracy >= 0.85,
            format!(
                "{} train / {} held-out samples, 20 epochs: total {:.4} (need >= 0.85), true rel {:.4}, true irrel {:.4}",
                train.values().map(|d| d.len()).sum::<usize>(),
                m.n,
                m.total_accuracy,
                m.true_relevant_rate,
                m.true_irrelevant_rate
            ),
        ),
        state.params,
        pooled,
    )
}

fn criterion_8(model: &ModelParams, held: &relplan::labeler::Dataset) -> Outcome {
    let mut config = GenConfig::new(60, PLANAR.to_vec(), 808);
    config.object_range = (3, 6);
    let cases: Vec<BenchCase> = bench_cases(&config, 60, Exec::Parallel).unwrap();
    let betas = beta_grid(0.0, 1.0, 11).unwrap();
    let mut violations = Vec::new();
    for c in &cases {
        let scores = FixedScores(model.probabilities(&c.scene, &c.goal).unwrap());
        let relevant = c.relevant.as_ref().unwrap();
        let mut last_size = usize::MAX;
        let mut last_false = f64::NEG_INFINITY;
        for &beta in &betas {
            let set = predict_relevant_set(&c.scene, &c.goal, &scores, beta).unwrap();
            let missed = relevant.difference(&set).count() as f64 / relevant.len() as f64;
            if set.len() > last_size || missed < last_false {
                violations.push(format!("scene {} at beta {beta}", c.scene_id));
            }
            last_size = set.len();
            last_false = missed;
        }
    }
    let probs = score(model, held, Exec::Parallel).unwrap();
    let labels: Vec<u8> = held.samples.iter().map(|s| s.label).collect();
    let sweep = beta_sweep(&probs, &labels, &betas).unwrap();
    let dataset_monotone = sweep
        .windows(2)
        .all(|w| w[1].1.false_irrelevant_rate >= w[0].1.false_irrelevant_rate);
    outcome(
        violations.is_empty() && dataset_monotone,
        format!(
            "{} scenes x {} betas, {} violations; held-out false-irrelevant {:.4} -> {:.4} monotone={dataset_monotone}",
            cases.len(),
            betas.len(),
            violations.len(),
            sweep[0].1.false_irrelevant_rate,
            sweep[betas.len() - 1].1.false_irrelevant_rate
        ),
    )
}

fn relplan_cmd(args: &[&str]) -> bool {
    let out = Command::new(env!("CARGO_BIN_EXE_relplan"))
        .args(args)
        .env_remove("RELPLAN_SEED")
        .output()
        .expect("binary runs");
    if !out.status.success() {
        eprintln!("relplan {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    }
    out.status.success()
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    matches!((std::fs::read(a), std::fs::read(b)), (Ok(x), Ok(y)) if x == y)
}

fn without_wall(path: &Path) -> Vec<String> {
    let text = std::fs::read_to_string(path).unwrap_or_default();
    let mut lines = text.lines();
    let schema = lines.next().unwrap_or_default().to_string();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    let wall = header.iter().position(|&c| c == "wall_ms");
    let strip = |l: &str| {
        l.split(',')
            .enumerate()
            .filter(|(i, _)| Some(*i) != wall)
            .map(|(_, c)| c)
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = vec![schema, strip(&header.join(","))];
    out.extend(lines.map(strip));
    out
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let mut checks: Vec<(&str, bool)> = Vec::new();

    let ok = relplan_cmd(&["gen", "--predicate", "on-left,on-top", "--scenes", "12", "--max-objects", "5", "--seed", "9", "--out", &p("g1")])
        && relplan_cmd(&["gen", "--config", &p("g1/manifest.json"), "--out", &p("g2")])
        && relplan_cmd(&["gen", "--sequential", "--config", &p("g1/manifest.json"), "--out", &p("g3")]);
    let files = ["dataset.rpd", "dataset.rpd.stats.json", "dataset.rpd.scenes.jsonl"];
    checks.push((
        "gen",
        ok && files.iter().all(|f| {
            same_bytes(&dir.path().join("g1").join(f), &dir.path().join("g2").join(f))
                && same_bytes(&dir.path().join("g1").join(f), &dir.path().join("g3").join(f))
        }),
    ));

    let data = p("g1/dataset.rpd");
    let ok = relplan_cmd(&["train", "--data", &data, "--epochs", "2", "--d-model", "16", "--lr", "1e-3", "--batch", "8", "--out", &p("t1")])
        && relplan_cmd(&["train", "--config", &p("t1/manifest.json"), "--out", &p("t2")])
        && relplan_cmd(&["train", "--sequential", "--config", &p("t1/manifest.json"), "--out", &p("t3")]);
    checks.push((
        "train",
        ok && ["model.ckpt", "metrics.csv"].iter().all(|f| {
            same_bytes(&dir.path().join("t1").join(f), &dir.path().join("t2").join(f))
                && same_bytes(&dir.path().join("t1").join(f), &dir.path().join("t3").join(f))
        }),
    ));

    let model = p("t1/model.ckpt");
    let bench = |out: &str, extra: &[&str]| {
        let mut args = vec!["bench", "--modes", "baseline,admissible,non-admissible", "--model", &model];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--out", out]);
        relplan_cmd(&args)
    };
    let (b1, b2, b3) = (p("b1"), p("b2"), p("b3"));
    let ok = bench(&b1, &["--scenes", "20", "--max-objects", "6", "--seed", "4", "--beta-sweep", "0:0.6:4"])
        && bench(&b2, &["--config", &p("b1/manifest.json")])
        && bench(&b3, &["--sequential", "--config", &p("b1/manifest.json")]);
    let scenes = |d: &str| without_wall(&dir.path().join(d).join("scenes.csv"));
    checks.push(("bench", ok && scenes("b1").len() > 2 && scenes("b1") == scenes("b2") && scenes("b1") == scenes("b3")));

    outcome(
        checks.iter().all(|(_, ok)| *ok),
        checks
            .iter()
            .map(|(n, ok)| format!("{n}: {}", if *ok { "identical" } else { "DIFFERENT" }))
            .collect::<Vec<_>>()
            .join(", "),
    )
}

fn spec(id: ObjectId, hx: f64, hy: f64) -> ObjectSpec {
    ObjectSpec {
        id,
        half_extents: [hx, hy],
        color: [0.9, 0.1, 0.1],
        height_class: 0,
    }
}

fn two_objects(rng: &mut relplan::rng::Rng, snap: bool) -> Scene {
    let a = spec(0, rng.random_range(0.02..0.15), rng.random_range(0.02..0.15));
    let b = spec(1, rng.random_range(0.02..0.15), rng.random_range(0.02..0.15));
    let pa = Pose2::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
    let mut pb = Pose2::new(rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
    if snap {
        // put b exactly on a touching or margin boundary along one axis
        let gap = if rng.random_bool(0.5) { 0.0 } else { DEFAULT_MARGIN };
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        if rng.random_bool(0.5) {
            pb.x = pa.x + sign * (a.half_extents[0] + b.half_extents[0] + gap);
        } else {
            pb.y = pa.y + sign * (a.half_extents[1] + b.half_extents[1] + gap);
        }
    }
    Scene {
        objects: vec![
            PlacedObject { spec: a, pose: pa },
            PlacedObject { spec: b, pose: pb },
        ],
        on_top_of: BTreeMap::new(),
        rng_seed: 0,
    }
}

fn criterion_10() -> Outcome {
    let mut rng = rng_from(1010);
    let mut pred_bad = 0;
    let mut pred_true = 0;
    for i in 0..1000 {
        let scene = two_objects(&mut rng, i % 4 == 0);
        let kind = PLANAR[i % 4];
        let g = GoalPredicate::new(kind, 0, 1);
        let poses = BTreeMap::new();
        let r = predicate_residuals(&poses, &scene, &g, DEFAULT_MARGIN).unwrap();
        let holds = eval_predicate(&scene, &g, DEFAULT_MARGIN).unwrap();
        pred_true += holds as usize;
        if (r.max() <= 0.0) != holds {
            pred_bad += 1;
        }
    }
    let mut coll_bad = 0;
    let mut overlaps = 0;
    for i in 0..1000 {
        let scene = two_objects(&mut rng, i % 4 == 0);
        let r = collision_residuals(&Layout::from_scene(&scene), &scene).unwrap();
        let pair = r.labels.iter().position(|l| l == "collide(0,1)").unwrap();
        let (a, b) = (&scene.objects[0], &scene.objects[1]);
        let overlap = footprints_overlap((&a.spec, &a.pose), (&b.spec, &b.pose));
        overlaps += overlap as usize;
        if (r.ineq[pair] > 0.0) != overlap {
            coll_bad += 1;
        }
    }
    outcome(
        pred_bad == 0 && coll_bad == 0 && pred_true > 0 && pred_true < 1000 && overlaps > 0 && overlaps < 1000,
        format!(
            "predicate: {pred_bad}/1000 disagreements ({pred_true} hold); collision: {coll_bad}/1000 disagreements ({overlaps} overlap)"
        ),
    )
}

fn main() {
    let titles = [
        "brute-force planner equivalence",
        "admissible completeness",
        "perfect-oracle speed-up",
        "label balance",
        "gradient check",
        "loss identities",
        "desk-scale training accuracy",
        "beta monotonicity",
        "determinism",
        "residual sign cross-checks",
    ];
    let mut results: BTreeMap<usize, (Outcome, f64)> = BTreeMap::new();
    let mut timed = |n: usize, f: &mut dyn FnMut() -> Outcome| {
        eprintln!("running criterion {n}: {}", titles[n - 1]);
        let t = Instant::now();
        let o = f();
        results.insert(n, (o, t.elapsed().as_secs_f64()));
    };
    timed(10, &mut criterion_10);
    timed(6, &mut criterion_6);
    timed(5, &mut criterion_5);
    timed(1, &mut criterion_1);
    timed(4, &mut criterion_4);
    timed(3, &mut criterion_3);
    let mut trained = None;
    timed(7, &mut || {
        let (o, m, held) = criterion_7();
        trained = Some((m, held));
        o
    });
    let (model, held) = trained.expect("training ran");
    timed(2, &mut || criterion_2(&model));
    timed(8, &mut || criterion_8(&model, &held));
    timed(9, &mut criterion_9);

    println!();
    let mut failed = 0;
    for (n, (o, secs)) in &results {
        let status = if o.pass { "PASS" } else { "FAIL" };
        failed += (!o.pass) as usize;
        println!("{status} criterion {n:>2} {} [{secs:.1}s]: {}", titles[n - 1], o.detail);
    }
    println!();
    if failed > 0 {
        println!("{failed} of {} criteria failed", results.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", results.len());
}
