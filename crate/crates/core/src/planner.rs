//! Heuristic-guided planning: unguided baseline, admissible mode (predicted
//! object set with fallback to the full set) and non-admissible mode
//! (predicted set only), plus the comparison harness behind `bench`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::{check_feasible, FeasibilityResult, PlacementProblem, SolverConfig};
use crate::net::decide_relevance;
use crate::scene::{GoalPredicate, ObjectId, Scene};
use crate::symbolic::{enumerate_skeletons, Skeleton};

pub const CSV_SCHEMA: &str = "relplan.bench.scenes/v1";
pub const SUMMARY_SCHEMA: &str = "relplan.bench.summary/v1";
pub const SWEEP_SCHEMA: &str = "relplan.bench.sweep/v1";
/// Two-sided 67 % normal quantile, Φ⁻¹(0.835).
const Z_67: f64 = 0.974_113_877_059_309_5;

/// Anything that can score every object of a scene for a goal.
pub trait RelevancePredictor: Sync {
    fn probabilities(&self, scene: &Scene, g: &GoalPredicate) -> Result<BTreeMap<ObjectId, f64>>;
}

/// Ground-truth relevance used as a perfect classifier.
#[derive(Clone, Debug, Default)]
pub struct OracleLabels {
    pub relevant: BTreeSet<ObjectId>,
}

impl RelevancePredictor for OracleLabels {
    fn probabilities(&self, scene: &Scene, _g: &GoalPredicate) -> Result<BTreeMap<ObjectId, f64>> {
        Ok(scene
            .ids()
            .into_iter()
            .map(|id| (id, if self.relevant.contains(&id) { 1.0 } else { 0.0 }))
            .collect())
    }
}

/// Fixed per-object probabilities, independent of the scene content.
#[derive(Clone, Debug, Default)]
pub struct FixedScores(pub BTreeMap<ObjectId, f64>);

impl RelevancePredictor for FixedScores {
    fn probabilities(&self, scene: &Scene, _g: &GoalPredicate) -> Result<BTreeMap<ObjectId, f64>> {
        Ok(scene
            .ids()
            .into_iter()
            .map(|id| (id, self.0.get(&id).copied().unwrap_or(0.0)))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub skeleton: String,
    pub result: FeasibilityResult,
}

#[derive(Clone, Debug, Default)]
pub struct SearchOutcome {
    pub checks: usize,
    pub enumerated: usize,
    pub solution: Option<(Skeleton, FeasibilityResult)>,
}

/// Checks skeletons over `allowed` in enumeration order and stops at the
/// first feasible one.
pub fn first_feasible(
    scene: &Scene,
    g: &GoalPredicate,
    allowed: &BTreeSet<ObjectId>,
    k_max: usize,
    solver: &SolverConfig,
) -> Result<SearchOutcome> {
    let mut out = SearchOutcome::default();
    for skeleton in enumerate_skeletons(scene, g, allowed, k_max)? {
        out.enumerated += 1;
        out.checks += 1;
        let problem = PlacementProblem::new(scene, &skeleton, *g, *solver)?;
        let result = check_feasible(&problem)?;
        if result.feasible {
            out.solution = Some((skeleton, result));
            break;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeuristicVariant {
    Baseline,
    Admissible,
    NonAdmissible,
}

impl HeuristicVariant {
    pub fn name(self) -> &'static str {
        match self {
            HeuristicVariant::Baseline => "baseline",
            HeuristicVariant::Admissible => "admissible",
            HeuristicVariant::NonAdmissible => "nonadmissible",
        }
    }
}

impl fmt::Display for HeuristicVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeuristicVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('_', "-").as_str() {
            "baseline" => Ok(HeuristicVariant::Baseline),
            "admissible" => Ok(HeuristicVariant::Admissible),
            "nonadmissible" | "non-admissible" => Ok(HeuristicVariant::NonAdmissible),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicMode {
    pub variant: HeuristicVariant,
    pub beta: f64,
}

impl HeuristicMode {
    pub fn new(variant: HeuristicVariant, beta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::InvalidArgument(format!("beta {beta} outside [0, 1]")));
        }
        Ok(HeuristicMode { variant, beta })
    }

    pub fn baseline() -> Self {
        HeuristicMode {
            variant: HeuristicVariant::Baseline,
            beta: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub feasibility_checks: usize,
    pub skeletons_enumerated: usize,
    pub wall_time: Duration,
    pub solved: bool,
    pub used_fallback: bool,
    pub relevant_set_size: usize,
    pub solution: Option<Solution>,
}

/// Objects whose predicted probability clears `beta`, plus the goal
/// subject, which every skeleton manipulates.
pub fn predict_relevant_set(
    scene: &Scene,
    g: &GoalPredicate,
    predictor: &dyn RelevancePredictor,
    beta: f64,
) -> Result<BTreeSet<ObjectId>> {
    let probs = predictor.probabilities(scene, g)?;
    let mut set: BTreeSet<ObjectId> = probs
        .into_iter()
        .filter(|&(_, p)| decide_relevance(p, beta))
        .map(|(id, _)| id)
        .collect();
    set.insert(g.subject);
    Ok(set)
}

pub fn plan(
    scene: &Scene,
    g: &GoalPredicate,
    mode: HeuristicMode,
    predictor: Option<&dyn RelevancePredictor>,
    k_max: usize,
    solver: &SolverConfig,
) -> Result<PlanMetrics> {
    g.validate(scene)?;
    let start = Instant::now();
    let full: BTreeSet<ObjectId> = scene.ids().into_iter().collect();
    let allowed = match mode.variant {
        HeuristicVariant::Baseline => full.clone(),
        _ => {
            let predictor = predictor.ok_or_else(|| {
                Error::InvalidArgument(format!("{} mode needs a predictor", mode.variant))
            })?;
            predict_relevant_set(scene, g, predictor, mode.beta)?
        }
    };
    let mut outcome = first_feasible(scene, g, &allowed, k_max, solver)?;
    let mut used_fallback = false;
    if mode.variant == HeuristicVariant::Admissible && outcome.solution.is_none() && allowed != full {
        used_fallback = true;
        let second = first_feasible(scene, g, &full, k_max, solver)?;
        outcome = SearchOutcome {
            checks: outcome.checks + second.checks,
            enumerated: outcome.enumerated + second.enumerated,
            solution: second.solution,
        };
    }
    Ok(PlanMetrics {
        feasibility_checks: outcome.checks,
        skeletons_enumerated: outcome.enumerated,
        wall_time: start.elapsed(),
        solved: outcome.solution.is_some(),
        used_fallback,
        relevant_set_size: allowed.len(),
        solution: outcome.solution.map(|(s, r)| Solution {
            skeleton: s.to_string(),
            result: r,
        }),
    })
}

/// One benchmark instance.
#[derive(Clone, Debug)]
pub struct BenchCase {
    pub scene_id: u64,
    pub scene: Scene,
    pub goal: GoalPredicate,
    /// Ground-truth relevant set when the baseline solves the scene.
    pub relevant: Option<BTreeSet<ObjectId>>,
}

/// Where guided modes get their predictions from.
pub enum PredictorSource<'a> {
    None,
    Oracle,
    Model(&'a dyn RelevancePredictor),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scene_id: u64,
    pub mode: HeuristicVariant,
    pub beta: f64,
    pub checks: usize,
    pub wall_ms: f64,
    pub solved: bool,
    pub fallback: bool,
    pub set_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub mode: HeuristicVariant,
    pub beta: f64,
    pub scenes: usize,
    pub mean_checks: f64,
    pub ci67_checks: f64,
    pub mean_wall_ms: f64,
    pub ci67_wall_ms: f64,
    pub solve_rate: f64,
    pub fallback_rate: f64,
    pub mean_set_size: f64,
    pub speedup_checks: Option<f64>,
    pub speedup_wall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub schema: String,
    pub rows: Vec<BenchRow>,
    pub summary: Vec<ModeSummary>,
}

/// Speed-up of a guided mean relative to the baseline mean.
pub fn speedup(guided_mean: f64, baseline_mean: f64) -> f64 {
    1.0 - guided_mean / baseline_mean
}

/// Mean and 67 % confidence half-width (normal approximation).
pub fn mean_ci67(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Z_67 * (var / n).sqrt())
}

/// Runs every mode on every case. Cases run in parallel; each plan call is
/// sequential.
pub fn compare(
    cases: &[BenchCase],
    modes: &[HeuristicMode],
    source: &PredictorSource,
    k_max: usize,
    solver: &SolverConfig,
    exec: Exec,
) -> Result<Comparison> {
    if cases.is_empty() {
        return Err(Error::InvalidArgument("compare needs at least one scene".into()));
    }
    let per_case = exec.map(cases, |case| -> Result<Vec<BenchRow>> {
        let oracle = OracleLabels {
            relevant: case.relevant.clone().unwrap_or_default(),
        };
        let predictor: Option<&dyn RelevancePredictor> = match source {
            PredictorSource::None => None,
            PredictorSource::Oracle => Some(&oracle),
            PredictorSource::Model(m) => Some(*m),
        };
        modes
            .iter()
            .map(|mode| {
                let m = plan(&case.scene, &case.goal, *mode, predictor, k_max, solver)?;
                Ok(BenchRow {
                    scene_id: case.scene_id,
                    mode: mode.variant,
                    beta: mode.beta,
                    checks: m.feasibility_checks,
                    wall_ms: m.wall_time.as_secs_f64() * 1e3,
                    solved: m.solved,
                    fallback: m.used_fallback,
                    set_size: m.relevant_set_size,
                })
            })
            .collect()
    });
    let mut rows = Vec::with_capacity(cases.len() * modes.len());
    for r in per_case {
        rows.extend(r?);
    }
    Ok(Comparison {
        schema: SUMMARY_SCHEMA.to_string(),
        summary: summarize(&rows, modes),
        rows,
    })
}

fn summarize(rows: &[BenchRow], modes: &[HeuristicMode]) -> Vec<ModeSummary> {
    let stats = |mode: &HeuristicMode| {
        let sel: Vec<&BenchRow> = rows
            .iter()
            .filter(|r| r.mode == mode.variant && r.beta == mode.beta)
            .collect();
        let checks: Vec<f64> = sel.iter().map(|r| r.checks as f64).collect();
        let wall: Vec<f64> = sel.iter().map(|r| r.wall_ms).collect();
        let n = sel.len().max(1) as f64;
        let (mean_checks, ci67_checks) = mean_ci67(&checks);
        let (mean_wall_ms, ci67_wall_ms) = mean_ci67(&wall);
        ModeSummary {
            mode: mode.variant,
            beta: mode.beta,
            scenes: sel.len(),
            mean_checks,
            ci67_checks,
            mean_wall_ms,
            ci67_wall_ms,
            solve_rate: sel.iter().filter(|r| r.solved).count() as f64 / n,
            fallback_rate: sel.iter().filter(|r| r.fallback).count() as f64 / n,
            mean_set_size: sel.iter().map(|r| r.set_size as f64).sum::<f64>() / n,
            speedup_checks: None,
            speedup_wall: None,
        }
    };
    let mut out: Vec<ModeSummary> = modes.iter().map(stats).collect();
    let baseline = out
        .iter()
        .find(|s| s.mode == HeuristicVariant::Baseline)
        .map(|s| (s.mean_checks, s.mean_wall_ms));
    if let Some((base_checks, base_wall)) = baseline {
        for s in out.iter_mut().filter(|s| s.mode != HeuristicVariant::Baseline) {
            s.speedup_checks = Some(speedup(s.mean_checks, base_checks));
            s.speedup_wall = Some(speedup(s.mean_wall_ms, base_wall));
        }
    }
    out
}

impl Comparison {
    /// Per-scene CSV. With `include_wall` false the wall-time column is
    /// blanked, which makes the output deterministic.
    pub fn to_csv(&self, include_wall: bool) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(["scene_id", "mode", "checks", "wall_ms", "solved", "fallback", "set_size"])
            .expect("in-memory write");
        for r in &self.rows {
            let wall = if include_wall {
                format!("{:.3}", r.wall_ms)
            } else {
                String::new()
            };
            w.write_record([
                r.scene_id.to_string(),
                r.mode.to_string(),
                r.checks.to_string(),
                wall,
                r.solved.to_string(),
                r.fallback.to_string(),
                r.set_size.to_string(),
            ])
            .expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("flush")).expect("utf8");
        format!("#schema={CSV_SCHEMA}\n{body}")
    }

    /// One row per guided mode (speed-up versus β); baseline rows are
    /// omitted because their speed-up is zero by definition.
    pub fn sweep_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record([
            "beta",
            "mode",
            "mean_checks",
            "ci67_checks",
            "speedup_checks",
            "solve_rate",
            "fallback_rate",
            "mean_set_size",
            "mean_wall_ms",
            "speedup_wall",
        ])
        .expect("in-memory write");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for s in self.summary.iter().filter(|s| s.mode != HeuristicVariant::Baseline) {
            w.write_record([
                format!("{:.4}", s.beta),
                s.mode.to_string(),
                format!("{:.6}", s.mean_checks),
                format!("{:.6}", s.ci67_checks),
                opt(s.speedup_checks),
                format!("{:.6}", s.solve_rate),
                format!("{:.6}", s.fallback_rate),
                format!("{:.6}", s.mean_set_size),
                format!("{:.6}", s.mean_wall_ms),
                opt(s.speedup_wall),
            ])
            .expect("in-memory write");
        }
        let body = String::from_utf8(w.into_inner().expect("flush")).expect("utf8");
        format!("#schema={SWEEP_SCHEMA}\n{body}")
    }

    pub fn summary_json(&self) -> String {
        let value = serde_json::json!({
            "schema": SUMMARY_SCHEMA,
            "modes": self.summary,
        });
        serde_json::to_string_pretty(&value).expect("summary serializes")
    }
}
