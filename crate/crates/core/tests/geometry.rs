use std::collections::BTreeMap;

use rand::Rng as _;
use relplan::geometry::{
    check_feasible, collision_residuals, predicate_residuals, refine_gauss_newton, Layout, PlacementProblem,
    SolverConfig, FEASIBILITY_TOL,
};
use relplan::rng::rng_from;
use relplan::scene::{
    eval_predicate, footprints_overlap, inside_workspace, sample_scene, GoalPredicate, ObjectId, ObjectSpec,
    PlacedObject, Pose2, PredicateKind, Scene, DEFAULT_MARGIN,
};
use relplan::symbolic::Skeleton;

fn rect(id: ObjectId, x: f64, y: f64, hx: f64, hy: f64) -> PlacedObject {
    PlacedObject {
        spec: ObjectSpec {
            id,
            half_extents: [hx, hy],
            color: [0.2 + 0.3 * id as f64, 0.8, 0.4],
            height_class: 0,
        },
        pose: Pose2::new(x, y),
    }
}

fn scene(objects: Vec<PlacedObject>, seed: u64) -> Scene {
    Scene {
        objects,
        on_top_of: BTreeMap::new(),
        rng_seed: seed,
    }
}

#[test]
fn feasible_start_is_a_fixed_point() {
    let s = scene(vec![rect(0, 0.2, 0.5, 0.05, 0.05), rect(1, 0.6, 0.5, 0.05, 0.05)], 1);
    let g = GoalPredicate::new(PredicateKind::OnLeft, 0, 1);
    let sk = Skeleton::from_objects(&[0]);
    let p = PlacementProblem::new(&s, &sk, g, SolverConfig::default()).unwrap();
    let init = BTreeMap::from([(0, Pose2::new(0.2, 0.5))]);
    let r = refine_gauss_newton(&p, &init).unwrap();
    assert_eq!(r.poses, init);
    assert_eq!(r.violation, 0.0);
}

#[test]
fn small_violation_converges() {
    // OnLeft residual +0.02, lots of room on the left
    let s = scene(vec![rect(0, 0.30, 0.3, 0.05, 0.05), rect(1, 0.39, 0.6, 0.05, 0.05)], 2);
    let g = GoalPredicate::new(PredicateKind::OnLeft, 0, 1);
    let start = predicate_residuals(&BTreeMap::new(), &s, &g, DEFAULT_MARGIN).unwrap();
    assert!((start.ineq[0] - 0.02).abs() < 1e-12);
    let sk = Skeleton::from_objects(&[0]);
    let p = PlacementProblem::new(&s, &sk, g, SolverConfig::default()).unwrap();
    let r = refine_gauss_newton(&p, &BTreeMap::from([(0, s.objects[0].pose)])).unwrap();
    assert!(r.violation <= 1e-6, "violation {}", r.violation);
    assert!(r.iterations <= 20);
    eprintln!("converged in {} iterations", r.iterations);
}

#[test]
fn objective_never_increases() {
    let mut rng = rng_from(77);
    let kinds = [PredicateKind::OnLeft, PredicateKind::OnRight, PredicateKind::InFront, PredicateKind::Behind];
    for t in 0..100u64 {
        let s = sample_scene(rng.random_range(3..=7), 500 + t, false).unwrap();
        let g = GoalPredicate::new(kinds[t as usize % 4], 0, 1);
        let sk = Skeleton::from_objects(&[2, 0]);
        let p = PlacementProblem::new(&s, &sk, g, SolverConfig::default()).unwrap();
        let init = BTreeMap::from([
            (0, Pose2::new(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9))),
            (2, Pose2::new(rng.random_range(0.1..0.9), rng.random_range(0.1..0.9))),
        ]);
        let r = refine_gauss_newton(&p, &init).unwrap();
        assert!(r.objective_trace.len() >= 1);
        for w in r.objective_trace.windows(2) {
            assert!(w[1] <= w[0], "problem {t}: {} -> {}", w[0], w[1]);
        }
    }
}

/// The subject fits left of the reference only where the tall blocker sits.
fn blocking_scene() -> Scene {
    scene(
        vec![
            rect(0, 0.80, 0.20, 0.05, 0.05), // subject
            rect(1, 0.20, 0.50, 0.05, 0.05), // reference
            rect(2, 0.07, 0.50, 0.07, 0.50), // blocker
        ],
        3,
    )
}

/// Grid search over subject centers: is there any spot satisfying the goal
/// without overlapping the objects that stay put?
fn grid_has_room(s: &Scene, g: &GoalPredicate, fixed: &[usize]) -> bool {
    let subj = &s.objects[0].spec;
    (0..100).any(|i| {
        (0..100).any(|j| {
            let pose = Pose2::new((i as f64 + 0.5) / 100.0, (j as f64 + 0.5) / 100.0);
            let mut moved = s.clone();
            moved.objects[0].pose = pose;
            inside_workspace(subj, &pose)
                && eval_predicate(&moved, g, DEFAULT_MARGIN).unwrap()
                && fixed
                    .iter()
                    .all(|&k| !footprints_overlap((subj, &pose), (&s.objects[k].spec, &s.objects[k].pose)))
        })
    })
}

#[test]
fn blocker_must_move_first() {
    let s = blocking_scene();
    let g = GoalPredicate::new(PredicateKind::OnLeft, 0, 1);
    assert!(!grid_has_room(&s, &g, &[1, 2]));
    assert!(grid_has_room(&s, &g, &[1]));

    let direct = Skeleton::from_objects(&[0]);
    let p = PlacementProblem::new(&s, &direct, g, SolverConfig::default()).unwrap();
    assert!(!check_feasible(&p).unwrap().feasible);

    let via = Skeleton::from_objects(&[2, 0]);
    let p = PlacementProblem::new(&s, &via, g, SolverConfig::default()).unwrap();
    let first = check_feasible(&p).unwrap();
    assert!(first.feasible);
    assert_eq!(first.manipulated, [0, 2].into_iter().collect());
    for _ in 0..5 {
        assert_eq!(check_feasible(&p).unwrap(), first);
    }
}

#[test]
fn feasible_results_pass_an_independent_residual_pass() {
    let solver = SolverConfig::default();
    let mut feasible = 0;
    for seed in 0..60u64 {
        let kind = PredicateKind::ALL[seed as usize % 5];
        let s = sample_scene(5, 900 + seed, kind == PredicateKind::OnTop).unwrap();
        let table: Vec<ObjectId> = s.ids().into_iter().filter(|i| !s.on_top_of.contains_key(i)).collect();
        let g = GoalPredicate::new(kind, s.ids()[4], table[0]);
        if g.validate(&s).is_err() {
            continue;
        }
        for objs in [vec![g.subject], vec![3, g.subject], vec![1, 2, g.subject]] {
            let sk = Skeleton::from_objects(&objs);
            let Ok(p) = PlacementProblem::new(&s, &sk, g, solver) else {
                continue;
            };
            let r = check_feasible(&p).unwrap();
            if !r.feasible {
                continue;
            }
            feasible += 1;
            let layout = Layout::after(&s, &g, &r);
            let worst = collision_residuals(&layout, &s)
                .unwrap()
                .max()
                .max(predicate_residuals(&layout.poses, &s, &g, solver.margin).unwrap().max());
            assert!(worst <= FEASIBILITY_TOL, "seed {seed} {sk}: {worst}");
        }
    }
    assert!(feasible > 20, "only {feasible} feasible checks");
}

#[test]
fn predicate_residuals_are_affine_with_unit_slope() {
    let mut rng = rng_from(5);
    let h = 1e-5;
    for _ in 0..200 {
        let s = scene(
            vec![
                rect(0, rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), 0.05, 0.07),
                rect(1, rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), 0.08, 0.04),
            ],
            0,
        );
        // (kind, axis, d residual / d subject coordinate)
        for (kind, axis, slope) in [
            (PredicateKind::OnLeft, 0, 1.0),
            (PredicateKind::OnRight, 0, -1.0),
            (PredicateKind::InFront, 1, -1.0),
            (PredicateKind::Behind, 1, 1.0),
        ] {
            let g = GoalPredicate::new(kind, 0, 1);
            let at = |d: f64| {
                let mut p = s.objects[0].pose;
                if axis == 0 {
                    p.x += d;
                } else {
                    p.y += d;
                }
                predicate_residuals(&BTreeMap::from([(0, p)]), &s, &g, DEFAULT_MARGIN).unwrap().ineq[0]
            };
            let fd = (at(h) - at(-h)) / (2.0 * h);
            assert!((fd - slope).abs() <= 1e-4 * slope.abs(), "{kind}: {fd}");
        }
    }
}
