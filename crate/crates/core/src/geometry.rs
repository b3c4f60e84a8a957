//! Continuous layer: placement sampling plus Gauss-Newton refinement over
//! inequality constraint residuals. One call to [`check_feasible`] is one
//! "NLP solve" from the planner's point of view.
//!
//! Every residual is feasible iff `≤ 0`. Objects re-placed by intermediate
//! actions land on the table; the final place of the goal subject lands in
//! the goal region (on the reference object for `OnTop`).

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::scene::{
    GoalPredicate, ObjectId, ObjectSpec, Pose2, PredicateKind, Scene, DEFAULT_MARGIN, WORKSPACE,
};
use crate::symbolic::{ActionKind, Skeleton};

pub const FEASIBILITY_TOL: f64 = 1e-6;
pub const FD_STEP: f64 = 1e-5;
pub const COST_WEIGHT: f64 = 1e-3;
/// Hinge target used during refinement: residuals are pushed to `-INTERIOR`
/// so the displacement penalty cannot hold the optimum on the boundary.
pub const INTERIOR: f64 = 2e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub margin: f64,
    pub n_samples: usize,
    pub gn_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            margin: DEFAULT_MARGIN,
            n_samples: 256,
            gn_iters: 20,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PlacementProblem<'a> {
    pub scene: &'a Scene,
    pub skeleton: &'a Skeleton,
    pub goal: GoalPredicate,
    pub config: SolverConfig,
}

impl<'a> PlacementProblem<'a> {
    pub fn new(
        scene: &'a Scene,
        skeleton: &'a Skeleton,
        goal: GoalPredicate,
        config: SolverConfig,
    ) -> Result<Self> {
        if config.n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be positive".into()));
        }
        goal.validate(scene)?;
        skeleton.replay(scene)?;
        match skeleton.actions.last() {
            Some(a) if a.kind == ActionKind::Place && a.object == goal.subject => {}
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "skeleton `{skeleton}` does not end by placing the subject"
                )))
            }
        }
        Ok(PlacementProblem {
            scene,
            skeleton,
            goal,
            config,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintResiduals {
    pub ineq: Vec<f64>,
    pub labels: Vec<String>,
}

impl ConstraintResiduals {
    fn push(&mut self, label: String, value: f64) {
        self.labels.push(label);
        self.ineq.push(value);
    }

    pub fn max(&self) -> f64 {
        self.ineq.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityResult {
    pub feasible: bool,
    pub placements: BTreeMap<ObjectId, Pose2>,
    pub cost: f64,
    pub manipulated: BTreeSet<ObjectId>,
    pub violation: f64,
}

/// Full configuration of the world: poses plus the support relation.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub poses: BTreeMap<ObjectId, Pose2>,
    pub on_top_of: BTreeMap<ObjectId, ObjectId>,
}

impl Layout {
    pub fn from_scene(scene: &Scene) -> Self {
        Layout {
            poses: scene
                .objects
                .iter()
                .map(|o| (o.spec.id, o.pose))
                .collect(),
            on_top_of: scene.on_top_of.clone(),
        }
    }

    /// Layout after a feasible result: moved objects at their placements,
    /// on the table, except the subject of an `OnTop` goal.
    pub fn after(scene: &Scene, goal: &GoalPredicate, result: &FeasibilityResult) -> Self {
        let mut layout = Layout::from_scene(scene);
        for (&id, &pose) in &result.placements {
            layout.poses.insert(id, pose);
            layout.on_top_of.remove(&id);
        }
        if goal.kind == PredicateKind::OnTop {
            layout.on_top_of.insert(goal.subject, goal.reference);
        }
        layout
    }
}

fn lookup<'s>(
    poses: &BTreeMap<ObjectId, Pose2>,
    scene: &'s Scene,
    id: ObjectId,
) -> Result<(&'s ObjectSpec, Pose2)> {
    let o = scene.object(id)?;
    let pose = poses.get(&id).copied().unwrap_or(o.pose);
    Ok((&o.spec, pose))
}

// Residual formulas shared by the labelled public evaluators and the
// index-based solver internals.

#[inline]
fn left_residual(a: &ObjectSpec, pa: Pose2, b: &ObjectSpec, pb: Pose2, margin: f64) -> f64 {
    margin - ((pb.x - b.half_extents[0]) - (pa.x + a.half_extents[0]))
}

#[inline]
fn front_residual(a: &ObjectSpec, pa: Pose2, b: &ObjectSpec, pb: Pose2, margin: f64) -> f64 {
    margin - ((pa.y - a.half_extents[1]) - (pb.y + b.half_extents[1]))
}

#[inline]
fn containment(inner: &ObjectSpec, pi: Pose2, outer: &ObjectSpec, po: Pose2) -> [f64; 4] {
    let [ix, iy] = inner.half_extents;
    let [ox, oy] = outer.half_extents;
    [
        (po.x - ox) - (pi.x - ix),
        (pi.x + ix) - (po.x + ox),
        (po.y - oy) - (pi.y - iy),
        (pi.y + iy) - (po.y + oy),
    ]
}

#[inline]
fn workspace_residuals(spec: &ObjectSpec, p: Pose2) -> [f64; 4] {
    let [hx, hy] = spec.half_extents;
    [hx - p.x, p.x + hx - WORKSPACE, hy - p.y, p.y + hy - WORKSPACE]
}

#[inline]
fn pair_residual(a: &ObjectSpec, pa: Pose2, b: &ObjectSpec, pb: Pose2) -> f64 {
    let sx = a.half_extents[0] + b.half_extents[0] - (pa.x - pb.x).abs();
    let sy = a.half_extents[1] + b.half_extents[1] - (pa.y - pb.y).abs();
    sx.min(sy)
}

fn predicate_values(
    kind: PredicateKind,
    a: &ObjectSpec,
    pa: Pose2,
    b: &ObjectSpec,
    pb: Pose2,
    margin: f64,
    out: &mut Vec<f64>,
) {
    match kind {
        PredicateKind::OnLeft => out.push(left_residual(a, pa, b, pb, margin)),
        PredicateKind::OnRight => out.push(left_residual(b, pb, a, pa, margin)),
        PredicateKind::InFront => out.push(front_residual(a, pa, b, pb, margin)),
        PredicateKind::Behind => out.push(front_residual(b, pb, a, pa, margin)),
        PredicateKind::OnTop => out.extend_from_slice(&containment(a, pa, b, pb)),
    }
}

/// Goal residuals. Planar predicates yield one residual; `OnTop` yields
/// four containment residuals of the subject in the reference footprint.
pub fn predicate_residuals(
    poses: &BTreeMap<ObjectId, Pose2>,
    scene: &Scene,
    g: &GoalPredicate,
    margin: f64,
) -> Result<ConstraintResiduals> {
    let (a, pa) = lookup(poses, scene, g.subject)?;
    let (b, pb) = lookup(poses, scene, g.reference)?;
    let mut values = Vec::with_capacity(4);
    predicate_values(g.kind, a, pa, b, pb, margin, &mut values);
    let mut out = ConstraintResiduals::default();
    if g.kind == PredicateKind::OnTop {
        for (side, v) in ["left", "right", "back", "front"].iter().zip(values) {
            out.push(format!("on-top({},{}).{side}", g.subject, g.reference), v);
        }
    } else {
        out.push(
            format!("{}({},{})", g.kind, g.subject, g.reference),
            values[0],
        );
    }
    Ok(out)
}

/// Non-penetration residuals for every pair of objects resting on the same
/// surface, plus containment in the workspace (table objects) or in the
/// support footprint (stacked objects).
pub fn collision_residuals(layout: &Layout, scene: &Scene) -> Result<ConstraintResiduals> {
    let mut out = ConstraintResiduals::default();
    let ids = scene.ids();
    let mut items = Vec::with_capacity(ids.len());
    for &id in &ids {
        let (spec, pose) = lookup(&layout.poses, scene, id)?;
        items.push((id, spec, pose, layout.on_top_of.get(&id).copied()));
    }
    for (i, (ia, sa, pa, supa)) in items.iter().enumerate() {
        for (ib, sb, pb, supb) in &items[i + 1..] {
            if supa == supb {
                out.push(format!("collide({ia},{ib})"), pair_residual(sa, *pa, sb, *pb));
            }
        }
    }
    for (id, spec, pose, support) in &items {
        match support {
            None => {
                for (side, v) in ["x-", "x+", "y-", "y+"]
                    .iter()
                    .zip(workspace_residuals(spec, *pose))
                {
                    out.push(format!("workspace({id}).{side}"), v);
                }
            }
            Some(s) => {
                let (ss, ps) = lookup(&layout.poses, scene, *s)?;
                for (side, v) in ["left", "right", "back", "front"]
                    .iter()
                    .zip(containment(spec, *pose, ss, ps))
                {
                    out.push(format!("support({id},{s}).{side}"), v);
                }
                if layout.on_top_of.contains_key(s) {
                    out.push(format!("support({s}).on-table"), 1.0);
                }
            }
        }
    }
    Ok(out)
}

/// Index-based working configuration used inside the solver.
#[derive(Clone)]
struct Config<'s> {
    specs: Vec<&'s ObjectSpec>,
    initial: Vec<Pose2>,
    pose: Vec<Pose2>,
    support: Vec<Option<usize>>,
    present: Vec<bool>,
}

impl<'s> Config<'s> {
    fn new(scene: &'s Scene) -> Self {
        let index_of = |id: ObjectId| {
            scene
                .objects
                .iter()
                .position(|o| o.spec.id == id)
                .expect("support ids exist")
        };
        Config {
            specs: scene.objects.iter().map(|o| &o.spec).collect(),
            initial: scene.objects.iter().map(|o| o.pose).collect(),
            pose: scene.objects.iter().map(|o| o.pose).collect(),
            support: scene
                .objects
                .iter()
                .map(|o| scene.on_top_of.get(&o.spec.id).map(|&s| index_of(s)))
                .collect(),
            present: vec![true; scene.objects.len()],
        }
    }

    /// Residuals restricted to constraints that involve object `i`.
    fn local_max(&self, i: usize) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        let (si, pi) = (self.specs[i], self.pose[i]);
        for j in 0..self.specs.len() {
            if j != i && self.present[j] && self.support[j] == self.support[i] {
                worst = worst.max(pair_residual(si, pi, self.specs[j], self.pose[j]));
            }
        }
        worst.max(self.surface_max(i))
    }

    fn surface_max(&self, i: usize) -> f64 {
        let r = match self.support[i] {
            None => workspace_residuals(self.specs[i], self.pose[i]),
            Some(s) => containment(self.specs[i], self.pose[i], self.specs[s], self.pose[s]),
        };
        r.into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Every residual of the configuration (goal first), in a fixed order.
    fn all(&self, goal: &Goal, out: &mut Vec<f64>) {
        out.clear();
        predicate_values(
            goal.kind,
            self.specs[goal.subject],
            self.pose[goal.subject],
            self.specs[goal.reference],
            self.pose[goal.reference],
            goal.margin,
            out,
        );
        let n = self.specs.len();
        for i in 0..n {
            for j in i + 1..n {
                if self.support[i] == self.support[j] {
                    out.push(pair_residual(
                        self.specs[i],
                        self.pose[i],
                        self.specs[j],
                        self.pose[j],
                    ));
                }
            }
        }
        for i in 0..n {
            match self.support[i] {
                None => out.extend_from_slice(&workspace_residuals(self.specs[i], self.pose[i])),
                Some(s) => {
                    out.extend_from_slice(&containment(
                        self.specs[i],
                        self.pose[i],
                        self.specs[s],
                        self.pose[s],
                    ));
                    if self.support[s].is_some() {
                        out.push(1.0);
                    }
                }
            }
        }
    }

    fn cost_of(&self, vars: &[usize]) -> f64 {
        vars.iter()
            .map(|&i| self.pose[i].dist2(&self.initial[i]))
            .sum()
    }
}

struct Goal {
    kind: PredicateKind,
    subject: usize,
    reference: usize,
    margin: f64,
}

fn max_or_zero(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0)
}

/// Outcome of a refinement run.
#[derive(Clone, Debug, PartialEq)]
pub struct Refinement {
    pub poses: BTreeMap<ObjectId, Pose2>,
    pub violation: f64,
    pub iterations: usize,
    /// Objective value before the first and after every accepted step.
    pub objective_trace: Vec<f64>,
}

struct Refiner<'c, 's> {
    cfg: &'c mut Config<'s>,
    goal: &'c Goal,
    vars: Vec<usize>,
    buf: Vec<f64>,
}

impl Refiner<'_, '_> {
    fn residuals(&mut self) -> Result<Vec<f64>> {
        let mut buf = std::mem::take(&mut self.buf);
        self.cfg.all(self.goal, &mut buf);
        if buf.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteResidual("configuration".into()));
        }
        let out = buf.clone();
        self.buf = buf;
        Ok(out)
    }

    fn objective(&self, r: &[f64]) -> f64 {
        let hinge: f64 = r.iter().map(|v| (v + INTERIOR).max(0.0).powi(2)).sum();
        hinge + COST_WEIGHT * self.cfg.cost_of(&self.vars)
    }

    fn get(&self) -> Vec<f64> {
        self.vars
            .iter()
            .flat_map(|&i| [self.cfg.pose[i].x, self.cfg.pose[i].y])
            .collect()
    }

    fn set(&mut self, x: &[f64]) {
        for (k, &i) in self.vars.iter().enumerate() {
            self.cfg.pose[i] = Pose2::new(x[2 * k], x[2 * k + 1]);
        }
    }

    fn run(&mut self, max_iters: usize) -> Result<(f64, usize, Vec<f64>)> {
        let n = 2 * self.vars.len();
        let mut x = self.get();
        let mut r = self.residuals()?;
        let mut phi = self.objective(&r);
        let mut trace = vec![phi];
        let mut iterations = 0;
        while iterations < max_iters && max_or_zero(&r) > FEASIBILITY_TOL && n > 0 {
            iterations += 1;
            let active: Vec<usize> = (0..r.len()).filter(|&i| r[i] + INTERIOR > 0.0).collect();
            // central-difference Jacobian of the active residual rows
            let mut jac = vec![0.0; active.len() * n];
            for k in 0..n {
                let mut xp = x.clone();
                xp[k] += FD_STEP;
                self.set(&xp);
                let rp = self.residuals()?;
                xp[k] = x[k] - FD_STEP;
                self.set(&xp);
                let rm = self.residuals()?;
                for (row, &i) in active.iter().enumerate() {
                    jac[row * n + k] = (rp[i] - rm[i]) / (2.0 * FD_STEP);
                }
            }
            self.set(&x);
            // normal equations: (JᵀJ + λI + μI) δ = -(Jᵀf + λ(x - x0))
            let mut a = vec![0.0; n * n];
            let mut b = vec![0.0; n];
            for (row, &i) in active.iter().enumerate() {
                let f = r[i] + INTERIOR;
                let jr = &jac[row * n..(row + 1) * n];
                for p in 0..n {
                    b[p] -= jr[p] * f;
                    for q in 0..n {
                        a[p * n + q] += jr[p] * jr[q];
                    }
                }
            }
            for (k, &i) in self.vars.iter().enumerate() {
                let p0 = self.cfg.initial[i];
                b[2 * k] -= COST_WEIGHT * (x[2 * k] - p0.x);
                b[2 * k + 1] -= COST_WEIGHT * (x[2 * k + 1] - p0.y);
            }
            for p in 0..n {
                a[p * n + p] += COST_WEIGHT + 1e-12;
            }
            let Some(step) = solve_spd(&a, &b, n) else {
                break;
            };
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..30 {
                let trial: Vec<f64> = x.iter().zip(&step).map(|(xi, si)| xi + alpha * si).collect();
                self.set(&trial);
                let rt = self.residuals()?;
                let pt = self.objective(&rt);
                if pt <= phi {
                    x = trial;
                    r = rt;
                    phi = pt;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            self.set(&x);
            if !accepted {
                break;
            }
            trace.push(phi);
        }
        Ok((max_or_zero(&r), iterations, trace))
    }
}

/// Cholesky solve of a small symmetric positive definite system.
fn solve_spd(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[i * n + k] * y[k]).sum();
        y[i] = (b[i] - s) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[k * n + i] * x[k]).sum();
        x[i] = (y[i] - s) / l[i * n + i];
    }
    Some(x)
}

fn index_of(scene: &Scene, id: ObjectId) -> Result<usize> {
    scene
        .objects
        .iter()
        .position(|o| o.spec.id == id)
        .ok_or(Error::UnknownObject(id))
}

fn moved_indices(scene: &Scene, skeleton: &Skeleton) -> Result<Vec<usize>> {
    let mut vars: Vec<usize> = skeleton
        .manipulated()
        .into_iter()
        .map(|id| index_of(scene, id))
        .collect::<Result<_>>()?;
    vars.sort_unstable();
    Ok(vars)
}

fn goal_of(scene: &Scene, problem: &PlacementProblem) -> Result<Goal> {
    Ok(Goal {
        kind: problem.goal.kind,
        subject: index_of(scene, problem.goal.subject)?,
        reference: index_of(scene, problem.goal.reference)?,
        margin: problem.config.margin,
    })
}

/// Gauss-Newton on the squared hinge of the constraint residuals plus a
/// small displacement penalty, with a finite-difference Jacobian and a
/// backtracking line search that keeps the objective non-increasing.
/// Poses of objects not listed in `init_poses` stay at their scene poses;
/// the listed objects are the optimization variables and rest on the table
/// (the subject of an `OnTop` goal rests on the reference).
pub fn refine_gauss_newton(
    problem: &PlacementProblem,
    init_poses: &BTreeMap<ObjectId, Pose2>,
) -> Result<Refinement> {
    let scene = problem.scene;
    let goal = goal_of(scene, problem)?;
    let mut cfg = Config::new(scene);
    let mut vars = Vec::with_capacity(init_poses.len());
    for (&id, &pose) in init_poses {
        let i = index_of(scene, id)?;
        cfg.pose[i] = pose;
        cfg.support[i] = None;
        vars.push(i);
    }
    if goal.kind == PredicateKind::OnTop && vars.contains(&goal.subject) {
        cfg.support[goal.subject] = Some(goal.reference);
    }
    refine_config(&mut cfg, &goal, vars, problem.config.gn_iters)
}

fn refine_config(
    cfg: &mut Config,
    goal: &Goal,
    vars: Vec<usize>,
    iters: usize,
) -> Result<Refinement> {
    let mut refiner = Refiner {
        cfg,
        goal,
        vars,
        buf: Vec::new(),
    };
    let (violation, iterations, objective_trace) = refiner.run(iters)?;
    let poses = refiner
        .vars
        .iter()
        .map(|&i| (refiner.cfg.specs[i].id, refiner.cfg.pose[i]))
        .collect();
    Ok(Refinement {
        poses,
        violation,
        iterations,
        objective_trace,
    })
}

fn sample_in(rng: &mut crate::rng::Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        0.5 * (lo + hi)
    }
}

/// Goal-region bounds `(x_lo, x_hi, y_lo, y_hi)` for the subject center
/// given the current reference pose. May be empty.
fn goal_region(cfg: &Config, goal: &Goal) -> (f64, f64, f64, f64) {
    let a = cfg.specs[goal.subject];
    let b = cfg.specs[goal.reference];
    let pb = cfg.pose[goal.reference];
    let [ax, ay] = a.half_extents;
    let [bx, by] = b.half_extents;
    let m = goal.margin;
    let (mut x0, mut x1, mut y0, mut y1) = (ax, WORKSPACE - ax, ay, WORKSPACE - ay);
    match goal.kind {
        PredicateKind::OnLeft => x1 = x1.min(pb.x - bx - m - ax),
        PredicateKind::OnRight => x0 = x0.max(pb.x + bx + m + ax),
        PredicateKind::InFront => y0 = y0.max(pb.y + by + m + ay),
        PredicateKind::Behind => y1 = y1.min(pb.y - by - m - ay),
        PredicateKind::OnTop => {
            x0 = pb.x - bx + ax;
            x1 = pb.x + bx - ax;
            y0 = pb.y - by + ay;
            y1 = pb.y + by - ay;
        }
    }
    (x0, x1, y0, y1)
}

/// Decides whether the skeleton admits collision-free placements that
/// realize the goal. Deterministic in `(scene.rng_seed, skeleton)`.
pub fn check_feasible(problem: &PlacementProblem) -> Result<FeasibilityResult> {
    let scene = problem.scene;
    let goal = goal_of(scene, problem)?;
    let vars = moved_indices(scene, problem.skeleton)?;
    let mut rng = rng_from(derive_seed(scene.rng_seed, &[problem.skeleton.digest()]));
    let mut cfg = Config::new(scene);
    let n_samples = problem.config.n_samples;
    let places: Vec<ObjectId> = problem
        .skeleton
        .actions
        .iter()
        .filter(|a| a.kind == ActionKind::Place)
        .map(|a| a.object)
        .collect();

    for (step, &id) in places.iter().enumerate() {
        let i = index_of(scene, id)?;
        let last = step + 1 == places.len();
        cfg.present[i] = false;
        cfg.support[i] = None;
        let [hx, hy] = cfg.specs[i].half_extents;
        let mut bounds = (hx, WORKSPACE - hx, hy, WORKSPACE - hy);
        if last {
            if goal.kind == PredicateKind::OnTop {
                cfg.support[i] = Some(goal.reference);
            }
            let region = goal_region(&cfg, &goal);
            // an empty goal region still yields a best-effort start for refinement
            if region.0 <= region.1 && region.2 <= region.3 {
                bounds = region;
            } else if goal.kind == PredicateKind::OnTop {
                bounds = (region.0.min(region.1), region.0.max(region.1), region.2.min(region.3), region.2.max(region.3));
            }
        }
        let mut best: Option<(f64, Pose2)> = None;
        for _ in 0..n_samples {
            let pose = Pose2::new(
                sample_in(&mut rng, bounds.0, bounds.1),
                sample_in(&mut rng, bounds.2, bounds.3),
            );
            cfg.pose[i] = pose;
            let mut worst = cfg.local_max(i);
            if last {
                let mut goal_r = Vec::with_capacity(4);
                predicate_values(
                    goal.kind,
                    cfg.specs[goal.subject],
                    cfg.pose[goal.subject],
                    cfg.specs[goal.reference],
                    cfg.pose[goal.reference],
                    goal.margin,
                    &mut goal_r,
                );
                worst = goal_r.into_iter().fold(worst, f64::max);
            }
            if best.is_none_or(|(w, _)| worst < w) {
                best = Some((worst, pose));
            }
            if worst <= 0.0 {
                break;
            }
        }
        let (_, pose) = best.expect("n_samples >= 1");
        cfg.pose[i] = pose;
        cfg.present[i] = true;
    }

    let refinement = refine_config(&mut cfg, &goal, vars.clone(), problem.config.gn_iters)?;
    let feasible = refinement.violation <= FEASIBILITY_TOL;
    Ok(FeasibilityResult {
        feasible,
        cost: cfg.cost_of(&vars),
        placements: refinement.poses,
        manipulated: problem.skeleton.manipulated(),
        violation: refinement.violation,
    })
}

/// Trajectory-cost surrogate: summed squared displacement of moved objects.
pub fn path_cost(result: &FeasibilityResult) -> Result<f64> {
    if !result.feasible {
        return Err(Error::InfeasibleResult);
    }
    Ok(result.cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{footprints_overlap, sample_scene, PlacedObject};

    pub(crate) fn rect(id: ObjectId, x: f64, y: f64, hx: f64, hy: f64) -> PlacedObject {
        PlacedObject {
            spec: ObjectSpec {
                id,
                half_extents: [hx, hy],
                color: [(id as f64 * 0.21) % 1.0, 0.9, 0.3],
                height_class: 0,
            },
            pose: Pose2::new(x, y),
        }
    }

    fn scene_of(objects: Vec<PlacedObject>) -> Scene {
        Scene {
            objects,
            on_top_of: BTreeMap::new(),
            rng_seed: 5,
        }
    }

    #[test]
    fn on_left_residual_examples() {
        let s = scene_of(vec![rect(0, 0.2, 0.5, 0.05, 0.05), rect(1, 0.5, 0.5, 0.05, 0.05)]);
        let g = GoalPredicate::new(PredicateKind::OnLeft, 0, 1);
        // gap = 0.45 - 0.25 = 0.2, margin 0.16 -> slack 0.04
        let r = predicate_residuals(&BTreeMap::new(), &s, &g, 0.16).unwrap();
        assert!((r.ineq[0] + 0.04).abs() < 1e-12);
        let mut poses = BTreeMap::new();
        poses.insert(0, Pose2::new(0.49, 0.5));
        let r = predicate_residuals(&poses, &s, &g, 0.01).unwrap();
        // right edge 0.54 vs left edge 0.45: violated by 0.09 + margin 0.01
        assert!((r.ineq[0] - 0.10).abs() < 1e-12);
        assert_eq!(r.labels.len(), r.ineq.len());
    }

    #[test]
    fn collision_residual_examples() {
        let s = scene_of(vec![rect(0, 0.3, 0.5, 0.05, 0.05), rect(1, 0.5, 0.5, 0.05, 0.05)]);
        let r = collision_residuals(&Layout::from_scene(&s), &s).unwrap();
        let i = r.labels.iter().position(|l| l == "collide(0,1)").unwrap();
        assert!((r.ineq[i] + 0.1).abs() < 1e-12);
        let s = scene_of(vec![rect(0, 0.5, 0.5, 0.05, 0.05), rect(1, 0.8, 0.8, 0.05, 0.05)]);
        let mut layout = Layout::from_scene(&s);
        layout.poses.insert(1, Pose2::new(0.5, 0.5));
        let r = collision_residuals(&layout, &s).unwrap();
        assert!((r.ineq[0] - 0.10).abs() < 1e-12);
    }

    #[test]
    fn residual_signs_match_overlap_oracle() {
        let mut rng = rng_from(77);
        for _ in 0..1000 {
            let a = rect(0, rng.random(), rng.random(), rng.random_range(0.01..0.25), rng.random_range(0.01..0.25));
            let b = rect(1, rng.random(), rng.random(), rng.random_range(0.01..0.25), rng.random_range(0.01..0.25));
            let r = pair_residual(&a.spec, a.pose, &b.spec, b.pose);
            assert_eq!(
                r <= 0.0,
                !footprints_overlap((&a.spec, &a.pose), (&b.spec, &b.pose))
            );
        }
    }

    #[test]
    fn path_cost_examples() {
        let mut res = FeasibilityResult {
            feasible: true,
            placements: BTreeMap::new(),
            cost: 0.3f64.powi(2) + 0.4f64.powi(2),
            manipulated: BTreeSet::new(),
            violation: 0.0,
        };
        assert!((path_cost(&res).unwrap() - 0.25).abs() < 1e-15);
        res.feasible = false;
        assert!(matches!(path_cost(&res), Err(Error::InfeasibleResult)));
    }

    #[test]
    fn cost_is_zero_without_displacement() {
        let s = scene_of(vec![rect(0, 0.2, 0.5, 0.05, 0.05), rect(1, 0.6, 0.5, 0.05, 0.05)]);
        let mut cfg = Config::new(&s);
        assert_eq!(cfg.cost_of(&[0, 1]), 0.0);
        cfg.pose[0] = Pose2::new(0.5, 0.9);
        cfg.pose[1] = Pose2::new(0.6, 0.6);
        let one = Pose2::new(0.2, 0.5).dist2(&Pose2::new(0.5, 0.9));
        assert!((cfg.cost_of(&[0, 1]) - (one + 0.01)).abs() < 1e-15);
    }

    #[test]
    fn spd_solver_recovers_solution() {
        let a = [4.0, 1.0, 1.0, 3.0];
        let x = solve_spd(&a, &[1.0, 2.0], 2).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-12);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-12);
        assert!(solve_spd(&[0.0], &[1.0], 1).is_none());
    }

    #[test]
    fn stacked_scene_layout_has_no_violation() {
        for seed in 0..50 {
            let s = sample_scene(6, seed, true).unwrap();
            let r = collision_residuals(&Layout::from_scene(&s), &s).unwrap();
            assert!(r.max() <= 0.0, "seed {seed}");
        }
    }
}
