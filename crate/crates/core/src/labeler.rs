//! Supervised dataset generation: solve sampled scenes with the unguided
//! planner and label every object by whether the first feasible plan
//! manipulates it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::geometry::SolverConfig;
use crate::planner::first_feasible;
use crate::raster::{
    rasterize_scene, render_canonical_view, CanonicalView, SceneImage, IMAGE_LEN, IMAGE_SIZE,
    PATCH_LEN, PATCH_SIZE, VIEW_VARIANTS,
};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::scene::{sample_scene, GoalPredicate, ObjectId, PredicateKind, Scene};
use crate::symbolic::DEFAULT_K_MAX;

pub const DATASET_HEADER: &str = "relplan-dataset v1";
pub const STATS_SCHEMA: &str = "relplan.stats/v1";
const SCENE_REDRAWS: u64 = 16;
const MAX_CASE_BLOCKS: usize = 20;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Arc<SceneImage>,
    /// Subject and reference views.
    pub goal_views: [Arc<CanonicalView>; 2],
    pub query_view: Arc<CanonicalView>,
    pub predicate: PredicateKind,
    pub label: u8,
    pub scene_id: u64,
    pub query_id: ObjectId,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn kinds(&self) -> BTreeSet<PredicateKind> {
        self.samples.iter().map(|s| s.predicate).collect()
    }

    /// Splits by predicate kind, preserving order.
    pub fn by_kind(&self) -> BTreeMap<PredicateKind, Dataset> {
        let mut out: BTreeMap<PredicateKind, Dataset> = BTreeMap::new();
        for s in &self.samples {
            out.entry(s.predicate).or_default().samples.push(s.clone());
        }
        out
    }

    pub fn stats(&self) -> DatasetStats {
        let mut stats = DatasetStats::default();
        for s in &self.samples {
            stats.add(s.predicate, s.label == 1);
        }
        stats
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub relevant: u64,
    pub irrelevant: u64,
}

impl LabelCounts {
    pub fn total(&self) -> u64 {
        self.relevant + self.irrelevant
    }

    pub fn relevant_fraction(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.relevant as f64 / self.total() as f64
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetStats {
    pub per_predicate: BTreeMap<PredicateKind, LabelCounts>,
}

impl DatasetStats {
    fn add(&mut self, kind: PredicateKind, relevant: bool) {
        let c = self.per_predicate.entry(kind).or_default();
        if relevant {
            c.relevant += 1;
        } else {
            c.irrelevant += 1;
        }
    }

    pub fn total(&self) -> LabelCounts {
        self.per_predicate
            .values()
            .fold(LabelCounts::default(), |acc, c| LabelCounts {
                relevant: acc.relevant + c.relevant,
                irrelevant: acc.irrelevant + c.irrelevant,
            })
    }

    pub fn to_json(&self) -> String {
        let preds: serde_json::Map<String, serde_json::Value> = self
            .per_predicate
            .iter()
            .map(|(k, c)| {
                let frac = c.relevant_fraction();
                (
                    k.name().to_string(),
                    serde_json::json!({
                        "relevant": c.relevant,
                        "irrelevant": c.irrelevant,
                        "relevant_pct": 100.0 * frac,
                        "irrelevant_pct": if c.total() == 0 { 0.0 } else { 100.0 * (1.0 - frac) },
                    }),
                )
            })
            .collect();
        let t = self.total();
        serde_json::to_string_pretty(&serde_json::json!({
            "schema": STATS_SCHEMA,
            "predicates": preds,
            "total": { "relevant": t.relevant, "irrelevant": t.irrelevant },
        }))
        .expect("stats serialize")
    }

    /// Plain-text table with one row per predicate.
    pub fn table(&self) -> String {
        let mut s = format!("{:<12} {:>20} {:>20}\n", "predicate", "relevant (pct.)", "irrelevant (pct.)");
        for (k, c) in &self.per_predicate {
            let f = c.relevant_fraction();
            s.push_str(&format!(
                "{:<12} {:>20} {:>20}\n",
                k.name(),
                format!("{} ({:.1}%)", c.relevant, 100.0 * f),
                format!("{} ({:.1}%)", c.irrelevant, if c.total() == 0 { 0.0 } else { 100.0 * (1.0 - f) }),
            ));
        }
        s
    }
}

/// Labels a scene with the set of objects manipulated by the first feasible
/// unguided plan, or `None` when no plan exists within `k_max`.
pub fn label_scene(
    scene: &Scene,
    g: &GoalPredicate,
    k_max: usize,
    solver: &SolverConfig,
) -> Result<Option<BTreeSet<ObjectId>>> {
    let all = scene.ids().into_iter().collect();
    let outcome = first_feasible(scene, g, &all, k_max, solver)?;
    Ok(outcome.solution.map(|(_, r)| r.manipulated))
}

/// Draws a goal for `kind`. `OnTop` goals pick a table-level reference (the
/// support of the stacked object half of the time) and a subject that fits
/// on it whenever one exists.
pub fn sample_goal(scene: &Scene, kind: PredicateKind, rng: &mut Rng) -> GoalPredicate {
    let ids = scene.ids();
    if kind != PredicateKind::OnTop {
        let subject = ids[rng.random_range(0..ids.len())];
        let others: Vec<_> = ids.iter().copied().filter(|&i| i != subject).collect();
        let reference = others[rng.random_range(0..others.len())];
        return GoalPredicate::new(kind, subject, reference);
    }
    let table: Vec<ObjectId> = ids
        .iter()
        .copied()
        .filter(|i| !scene.on_top_of.contains_key(i))
        .collect();
    let support = scene.on_top_of.values().next().copied();
    let reference = match support {
        Some(s) if rng.random_bool(0.5) => s,
        _ => table[rng.random_range(0..table.len())],
    };
    let ref_ext = scene.object(reference).expect("id exists").spec.half_extents;
    let others: Vec<ObjectId> = ids.iter().copied().filter(|&i| i != reference).collect();
    let fitting: Vec<ObjectId> = others
        .iter()
        .copied()
        .filter(|&i| {
            let e = scene.object(i).expect("id exists").spec.half_extents;
            e[0] <= ref_ext[0] && e[1] <= ref_ext[1]
        })
        .collect();
    let pool = if fitting.is_empty() { &others } else { &fitting };
    let subject = pool[rng.random_range(0..pool.len())];
    GoalPredicate::new(kind, subject, reference)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_scenes: usize,
    pub kinds: Vec<PredicateKind>,
    pub object_range: (usize, usize),
    pub seed: u64,
    pub k_max: usize,
    pub solver: SolverConfig,
}

impl GenConfig {
    pub fn new(n_scenes: usize, kinds: Vec<PredicateKind>, seed: u64) -> Self {
        GenConfig {
            n_scenes,
            kinds,
            object_range: (3, 10),
            seed,
            k_max: DEFAULT_K_MAX,
            solver: SolverConfig::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 {
            return Err(Error::InvalidArgument("n_scenes must be at least 1".into()));
        }
        if self.kinds.is_empty() {
            return Err(Error::InvalidArgument("no predicate kinds requested".into()));
        }
        let (lo, hi) = self.object_range;
        if lo < 3 || hi > 10 || lo > hi {
            return Err(Error::InvalidArgument(format!(
                "object range {lo}..={hi} outside [3, 10]"
            )));
        }
        crate::symbolic::validate_k_max(self.k_max)
    }
}

/// A scene together with its goal and label outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: u64,
    pub goal: GoalPredicate,
    pub manipulated: Option<BTreeSet<ObjectId>>,
    pub scene: Scene,
}

#[derive(Clone, Debug, Default)]
pub struct Generated {
    pub dataset: Dataset,
    pub scenes: Vec<SceneRecord>,
}

impl Generated {
    pub fn stats(&self) -> DatasetStats {
        self.dataset.stats()
    }
}

/// Samples and labels one scene for one predicate kind.
/// Dense scenes occasionally run out of placement attempts; those are redrawn
/// from a derived seed so a single unlucky draw does not sink a whole run.
fn sample_scene_retrying(n: usize, seed: u64, stack_one: bool) -> Result<Scene> {
    let mut last = None;
    for attempt in 0..SCENE_REDRAWS {
        let s = if attempt == 0 { seed } else { derive_seed(seed, &[attempt]) };
        match sample_scene(n, s, stack_one) {
            Ok(scene) => return Ok(scene),
            Err(e @ Error::PlacementExhausted { .. }) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one draw"))
}

/// Scene, goal and label for one scene id, plus the generator stream
/// positioned for view sampling.
fn draw_record(config: &GenConfig, kind: PredicateKind, scene_id: u64) -> Result<(SceneRecord, Rng)> {
    let mut rng = rng_from(derive_seed(config.seed, &[kind.code() as u64, scene_id, 1]));
    let (lo, hi) = config.object_range;
    let n = rng.random_range(lo..=hi);
    let scene_seed = derive_seed(config.seed, &[kind.code() as u64, scene_id]);
    let scene = sample_scene_retrying(n, scene_seed, kind == PredicateKind::OnTop)?;
    let goal = sample_goal(&scene, kind, &mut rng);
    let manipulated = label_scene(&scene, &goal, config.k_max, &config.solver)?;
    Ok((
        SceneRecord {
            scene_id,
            goal,
            manipulated,
            scene,
        },
        rng,
    ))
}

pub fn generate_scene(
    config: &GenConfig,
    kind: PredicateKind,
    scene_id: u64,
) -> Result<(SceneRecord, Vec<Sample>)> {
    let (record, mut rng) = draw_record(config, kind, scene_id)?;
    let (scene, goal) = (&record.scene, record.goal);
    let mut samples = Vec::new();
    if let Some(relevant) = &record.manipulated {
        let image = Arc::new(rasterize_scene(scene));
        let mut cache: HashMap<(ObjectId, u8), Arc<CanonicalView>> = HashMap::new();
        let mut view = |id: ObjectId, rng: &mut Rng| {
            let idx = rng.random_range(0..VIEW_VARIANTS);
            cache
                .entry((id, idx))
                .or_insert_with(|| {
                    Arc::new(render_canonical_view(
                        &scene.object(id).expect("id exists").spec,
                        idx,
                    ))
                })
                .clone()
        };
        for q in scene.ids() {
            let subject = view(goal.subject, &mut rng);
            let reference = view(goal.reference, &mut rng);
            let query = view(q, &mut rng);
            samples.push(Sample {
                image: image.clone(),
                goal_views: [subject, reference],
                query_view: query,
                predicate: kind,
                label: relevant.contains(&q) as u8,
                scene_id,
                query_id: q,
            });
        }
    }
    Ok((record, samples))
}

/// Draws scenes with the generation protocol until `n` of them are solved
/// by the unguided planner. Scene `i` uses `config.kinds[i % len]`; the
/// returned records keep their draw index as `scene_id`. Unsolvable draws
/// carry no ground truth and are skipped.
pub fn solvable_records(config: &GenConfig, n: usize, exec: Exec) -> Result<Vec<SceneRecord>> {
    let mut probe = config.clone();
    probe.n_scenes = n;
    probe.validate()?;
    let block = n.max(1);
    let mut out = Vec::with_capacity(n);
    for b in 0..MAX_CASE_BLOCKS {
        let start = (b * block) as u64;
        let drawn = exec.map_range(block, |i| {
            let id = start + i as u64;
            let kind = config.kinds[(id % config.kinds.len() as u64) as usize];
            draw_record(config, kind, id).map(|(r, _)| r)
        });
        for r in drawn {
            let r = r?;
            if r.manipulated.is_some() && out.len() < n {
                out.push(r);
            }
        }
        if out.len() == n {
            return Ok(out);
        }
    }
    Err(Error::InvalidArgument(format!(
        "only {} of {} requested scenes were solvable after {} draws",
        out.len(),
        n,
        MAX_CASE_BLOCKS * block
    )))
}

/// Generates the labeled dataset in memory. Output order (kind, scene id,
/// query id) is independent of the execution policy.
pub fn generate(config: &GenConfig, exec: Exec) -> Result<Generated> {
    config.validate()?;
    let mut out = Generated::default();
    for &kind in &config.kinds {
        let parts = exec.map_range(config.n_scenes, |i| generate_scene(config, kind, i as u64));
        for part in parts {
            let (record, samples) = part?;
            out.scenes.push(record);
            out.dataset.samples.extend(samples);
        }
    }
    Ok(out)
}

pub fn stats_path(dataset_path: &Path) -> PathBuf {
    sidecar(dataset_path, "stats.json")
}

pub fn scenes_path(dataset_path: &Path) -> PathBuf {
    sidecar(dataset_path, "scenes.jsonl")
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

/// Generates and writes the dataset plus its `stats` and `scenes` sidecars.
pub fn generate_dataset(config: &GenConfig, out_path: &Path, exec: Exec) -> Result<DatasetStats> {
    let generated = generate(config, exec)?;
    write_dataset(out_path, &generated.dataset)?;
    let stats = generated.stats();
    let stats_file = stats_path(out_path);
    std::fs::write(&stats_file, stats.to_json() + "\n").map_err(|e| Error::io(&stats_file, e))?;
    write_scenes(&scenes_path(out_path), &generated.scenes)?;
    Ok(stats)
}

pub fn write_scenes(path: &Path, scenes: &[SceneRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in scenes {
        let value = serde_json::to_value(r).expect("record serializes");
        writeln!(w, "{}", serde_json::to_string(&value).expect("value serializes"))
            .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scenes(path: &Path) -> Result<Vec<SceneRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: SceneRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        record.scene.validate()?;
        out.push(record);
    }
    Ok(out)
}

fn encode_f32(values: &[f32]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    B64.encode(bytes)
}

fn decode_f32(s: &str, expected: usize, line: usize) -> Result<Vec<f32>> {
    let bytes = B64.decode(s).map_err(|e| Error::MalformedRecord {
        line,
        reason: format!("base64: {e}"),
    })?;
    if bytes.len() != expected * 4 {
        return Err(Error::MalformedRecord {
            line,
            reason: format!("expected {} floats, got {} bytes", expected, bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn header_line() -> String {
    format!("{DATASET_HEADER} image={IMAGE_SIZE}x{IMAGE_SIZE}x3 view={PATCH_SIZE}x{PATCH_SIZE}x3")
}

/// One header line, then one tab-separated record per sample:
/// `scene_id, predicate, query_id, label, image, subject view, reference
/// view, query view`, the arrays as base-64 little-endian f32.
pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", header_line()).map_err(io)?;
    let mut image_cache: Option<(*const SceneImage, String)> = None;
    for s in &dataset.samples {
        let ptr = Arc::as_ptr(&s.image);
        let image = match &image_cache {
            Some((p, enc)) if *p == ptr => enc.clone(),
            _ => {
                let enc = encode_f32(&s.image.grid);
                image_cache = Some((ptr, enc.clone()));
                enc
            }
        };
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            s.scene_id,
            s.predicate.name(),
            s.query_id,
            s.label,
            image,
            encode_f32(&s.goal_views[0].patch),
            encode_f32(&s.goal_views[1].patch),
            encode_f32(&s.query_view.patch),
        )
        .map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a dataset file. Images and views repeated within a scene are
/// shared rather than duplicated in memory. The file does not carry goal
/// object ids, so goal views come back with `object_id == u32::MAX`.
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io(path, e))?
        .unwrap_or_default();
    if !header.starts_with(DATASET_HEADER) {
        return Err(Error::MalformedRecord {
            line: 1,
            reason: format!("bad header `{header}`"),
        });
    }
    if header != header_line() {
        return Err(Error::MalformedRecord {
            line: 1,
            reason: format!("unsupported grid dimensions in `{header}`"),
        });
    }
    let mut samples = Vec::new();
    let mut current: Option<(u64, PredicateKind)> = None;
    let mut images: HashMap<String, Arc<SceneImage>> = HashMap::new();
    let mut views: HashMap<String, Arc<CanonicalView>> = HashMap::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let bad = |reason: &str| Error::MalformedRecord {
            line: lineno,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 8 {
            return Err(bad(&format!("expected 8 fields, got {}", fields.len())));
        }
        let scene_id: u64 = fields[0].parse().map_err(|_| bad("scene_id"))?;
        let predicate: PredicateKind = fields[1].parse().map_err(|_| bad("predicate"))?;
        let query_id: ObjectId = fields[2].parse().map_err(|_| bad("query_id"))?;
        let label: u8 = match fields[3] {
            "0" => 0,
            "1" => 1,
            _ => return Err(bad("label must be 0 or 1")),
        };
        if current != Some((scene_id, predicate)) {
            current = Some((scene_id, predicate));
            images.clear();
            views.clear();
        }
        let image = match images.get(fields[4]) {
            Some(img) => img.clone(),
            None => {
                let grid = decode_f32(fields[4], IMAGE_LEN, lineno)?;
                let img = Arc::new(SceneImage { grid });
                images.insert(fields[4].to_string(), img.clone());
                img
            }
        };
        let mut view = |field: &str, object_id: ObjectId| -> Result<Arc<CanonicalView>> {
            if let Some(v) = views.get(field) {
                if v.object_id == object_id {
                    return Ok(v.clone());
                }
            }
            let patch = decode_f32(field, PATCH_LEN, lineno)?;
            let v = Arc::new(CanonicalView { patch, object_id });
            views.insert(field.to_string(), v.clone());
            Ok(v)
        };
        let subject = view(fields[5], u32::MAX)?;
        let reference = view(fields[6], u32::MAX)?;
        let query = view(fields[7], query_id)?;
        samples.push(Sample {
            image,
            goal_views: [subject, reference],
            query_view: query,
            predicate,
            label,
            scene_id,
            query_id,
        });
    }
    Ok(Dataset { samples })
}

/// Exact label counts of a dataset file.
pub fn compute_stats(dataset_path: &Path) -> Result<DatasetStats> {
    let file = File::open(dataset_path).map_err(|e| Error::io(dataset_path, e))?;
    let mut stats = DatasetStats::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(dataset_path, e))?;
        if i == 0 {
            if !line.starts_with(DATASET_HEADER) {
                return Err(Error::MalformedRecord {
                    line: 1,
                    reason: "bad header".into(),
                });
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let mut fields = line.splitn(5, '\t');
        let bad = |reason: &str| Error::MalformedRecord {
            line: i + 1,
            reason: reason.to_string(),
        };
        let _scene = fields.next().ok_or_else(|| bad("missing scene_id"))?;
        let kind: PredicateKind = fields
            .next()
            .ok_or_else(|| bad("missing predicate"))?
            .parse()
            .map_err(|_| bad("predicate"))?;
        let _query = fields.next().ok_or_else(|| bad("missing query_id"))?;
        match fields.next() {
            Some("1") => stats.add(kind, true),
            Some("0") => stats.add(kind, false),
            _ => return Err(bad("label must be 0 or 1")),
        }
    }
    Ok(stats)
}
