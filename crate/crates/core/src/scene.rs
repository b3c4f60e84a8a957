//! Scenes, goal predicates and the planar world model.
//!
//! The workspace is the unit square. `+x` points right and `+y` points toward
//! the camera ("front"). Objects are axis-aligned rectangles; at most one
//! stacking level is modelled.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from;

pub type ObjectId = u32;

/// Workspace extent per axis. Bounds are `[0, WORKSPACE]²`.
pub const WORKSPACE: f64 = 1.0;
/// Default separation tolerance for planar predicates.
pub const DEFAULT_MARGIN: f64 = 0.01;
/// Half-extent range for table-level objects drawn by [`sample_scene`].
pub const HALF_EXTENT_RANGE: (f64, f64) = (0.05, 0.12);
/// Minimum L∞ distance between object colors (and to either background).
pub const MIN_COLOR_DISTANCE: f64 = 0.2;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;

const QUANTUM: f64 = 1e6;

/// Rounds to the 1e-6 grid used by the scene serialization, so a scene
/// survives a JSON round trip bit for bit.
pub fn quantize(v: f64) -> f64 {
    (v * QUANTUM).round() / QUANTUM
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64) -> Self {
        Pose2 { x, y }
    }

    pub fn dist2(&self, other: &Pose2) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: ObjectId,
    pub half_extents: [f64; 2],
    pub color: [f64; 3],
    /// 0 = on the table, 1 = stacked on another object.
    pub height_class: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacedObject {
    #[serde(flatten)]
    pub spec: ObjectSpec,
    pub pose: Pose2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub objects: Vec<PlacedObject>,
    /// Support relation: stacked object id -> supporting object id.
    pub on_top_of: BTreeMap<ObjectId, ObjectId>,
    pub rng_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PredicateKind {
    #[serde(rename = "on-left")]
    OnLeft,
    #[serde(rename = "on-right")]
    OnRight,
    #[serde(rename = "in-front")]
    InFront,
    #[serde(rename = "behind")]
    Behind,
    #[serde(rename = "on-top")]
    OnTop,
}

impl PredicateKind {
    pub const ALL: [PredicateKind; 5] = [
        PredicateKind::OnLeft,
        PredicateKind::OnRight,
        PredicateKind::InFront,
        PredicateKind::Behind,
        PredicateKind::OnTop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PredicateKind::OnLeft => "on-left",
            PredicateKind::OnRight => "on-right",
            PredicateKind::InFront => "in-front",
            PredicateKind::Behind => "behind",
            PredicateKind::OnTop => "on-top",
        }
    }

    /// Stable numeric code used by the binary formats.
    pub fn code(self) -> u8 {
        match self {
            PredicateKind::OnLeft => 0,
            PredicateKind::OnRight => 1,
            PredicateKind::InFront => 2,
            PredicateKind::Behind => 3,
            PredicateKind::OnTop => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// Positive-class loss weight used when nothing else is configured.
    pub fn default_eta(self) -> f64 {
        match self {
            PredicateKind::OnTop => 0.66,
            _ => 0.86,
        }
    }

    pub fn is_planar(self) -> bool {
        self != PredicateKind::OnTop
    }
}

impl fmt::Display for PredicateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PredicateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "on-left" | "on-the-left" | "onleft" | "left" => Ok(PredicateKind::OnLeft),
            "on-right" | "on-the-right" | "onright" | "right" => Ok(PredicateKind::OnRight),
            "in-front" | "infront" | "front" => Ok(PredicateKind::InFront),
            "behind" => Ok(PredicateKind::Behind),
            "on-top" | "ontop" | "on" => Ok(PredicateKind::OnTop),
            other => Err(Error::InvalidArgument(format!("unknown predicate `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalPredicate {
    pub kind: PredicateKind,
    pub subject: ObjectId,
    pub reference: ObjectId,
}

impl GoalPredicate {
    pub fn new(kind: PredicateKind, subject: ObjectId, reference: ObjectId) -> Self {
        GoalPredicate {
            kind,
            subject,
            reference,
        }
    }

    pub fn validate(&self, scene: &Scene) -> Result<()> {
        if self.subject == self.reference {
            return Err(Error::InvalidGoal(format!(
                "subject and reference are both {}",
                self.subject
            )));
        }
        scene.object(self.subject)?;
        scene.object(self.reference)?;
        Ok(())
    }
}

impl Scene {
    pub fn object(&self, id: ObjectId) -> Result<&PlacedObject> {
        self.objects
            .iter()
            .find(|o| o.spec.id == id)
            .ok_or(Error::UnknownObject(id))
    }

    pub fn ids(&self) -> Vec<ObjectId> {
        let mut ids: Vec<_> = self.objects.iter().map(|o| o.spec.id).collect();
        ids.sort_unstable();
        ids
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    /// Canonical single-line JSON with sorted keys.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("scene serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn from_json(s: &str) -> Result<Scene> {
        let scene: Scene = serde_json::from_str(s)
            .map_err(|e| Error::InvalidArgument(format!("scene json: {e}")))?;
        scene.validate()?;
        Ok(scene)
    }

    /// Checks every structural invariant of a scene.
    pub fn validate(&self) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for o in &self.objects {
            if !seen.insert(o.spec.id) {
                return Err(Error::InvalidArgument(format!("duplicate id {}", o.spec.id)));
            }
            let [hx, hy] = o.spec.half_extents;
            if !(hx > 0.0 && hy > 0.0 && hx <= WORKSPACE / 4.0 && hy <= WORKSPACE / 4.0) {
                return Err(Error::InvalidArgument(format!(
                    "object {} has invalid half extents",
                    o.spec.id
                )));
            }
            if !(o.pose.x.is_finite() && o.pose.y.is_finite()) {
                return Err(Error::InvalidArgument(format!("object {} pose", o.spec.id)));
            }
            if !inside_workspace(&o.spec, &o.pose) {
                return Err(Error::InvalidArgument(format!(
                    "object {} leaves the workspace",
                    o.spec.id
                )));
            }
        }
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                if color_distance(&a.spec.color, &b.spec.color) < MIN_COLOR_DISTANCE {
                    return Err(Error::InvalidArgument(format!(
                        "objects {} and {} have indistinct colors",
                        a.spec.id, b.spec.id
                    )));
                }
                if a.spec.height_class == 0
                    && b.spec.height_class == 0
                    && footprints_overlap((&a.spec, &a.pose), (&b.spec, &b.pose))
                {
                    return Err(Error::InvalidArgument(format!(
                        "objects {} and {} overlap",
                        a.spec.id, b.spec.id
                    )));
                }
            }
        }
        for (&top, &support) in &self.on_top_of {
            let t = self.object(top)?;
            let s = self.object(support)?;
            if t.spec.height_class != 1 || s.spec.height_class != 0 {
                return Err(Error::InvalidArgument(format!(
                    "support {top} -> {support} violates height classes"
                )));
            }
            if !contained_in(&t.spec, &t.pose, &s.spec, &s.pose) {
                return Err(Error::InvalidArgument(format!(
                    "object {top} is not contained in its support {support}"
                )));
            }
        }
        for o in &self.objects {
            if o.spec.height_class == 1 && !self.on_top_of.contains_key(&o.spec.id) {
                return Err(Error::InvalidArgument(format!(
                    "stacked object {} has no support",
                    o.spec.id
                )));
            }
        }
        Ok(())
    }
}

pub fn color_distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn inside_workspace(spec: &ObjectSpec, pose: &Pose2) -> bool {
    let [hx, hy] = spec.half_extents;
    pose.x - hx >= 0.0 && pose.x + hx <= WORKSPACE && pose.y - hy >= 0.0 && pose.y + hy <= WORKSPACE
}

fn contained_in(inner: &ObjectSpec, ip: &Pose2, outer: &ObjectSpec, op: &Pose2) -> bool {
    ip.x - inner.half_extents[0] >= op.x - outer.half_extents[0]
        && ip.x + inner.half_extents[0] <= op.x + outer.half_extents[0]
        && ip.y - inner.half_extents[1] >= op.y - outer.half_extents[1]
        && ip.y + inner.half_extents[1] <= op.y + outer.half_extents[1]
}

/// True iff the closed rectangles intersect with positive area.
pub fn footprints_overlap(a: (&ObjectSpec, &Pose2), b: (&ObjectSpec, &Pose2)) -> bool {
    let (sa, pa) = a;
    let (sb, pb) = b;
    (pa.x - pb.x).abs() < sa.half_extents[0] + sb.half_extents[0]
        && (pa.y - pb.y).abs() < sa.half_extents[1] + sb.half_extents[1]
}

/// Clearance between the right edge of `a` and the left edge of `b`.
pub(crate) fn left_gap(a: (&ObjectSpec, &Pose2), b: (&ObjectSpec, &Pose2)) -> f64 {
    (b.1.x - b.0.half_extents[0]) - (a.1.x + a.0.half_extents[0])
}

/// Clearance between the back edge of `a` and the front edge of `b`
/// (`a` is in front of `b` when positive).
pub(crate) fn front_gap(a: (&ObjectSpec, &Pose2), b: (&ObjectSpec, &Pose2)) -> f64 {
    (a.1.y - a.0.half_extents[1]) - (b.1.y + b.0.half_extents[1])
}

/// Evaluates a goal predicate on the scene's current poses.
pub fn eval_predicate(scene: &Scene, g: &GoalPredicate, margin: f64) -> Result<bool> {
    let a = scene.object(g.subject)?;
    let b = scene.object(g.reference)?;
    let pa = (&a.spec, &a.pose);
    let pb = (&b.spec, &b.pose);
    Ok(match g.kind {
        PredicateKind::OnLeft => left_gap(pa, pb) >= margin,
        PredicateKind::OnRight => left_gap(pb, pa) >= margin,
        PredicateKind::InFront => front_gap(pa, pb) >= margin,
        PredicateKind::Behind => front_gap(pb, pa) >= margin,
        PredicateKind::OnTop => scene.on_top_of.get(&g.subject) == Some(&g.reference),
    })
}

fn sample_color(rng: &mut crate::rng::Rng, taken: &[[f64; 3]]) -> [f64; 3] {
    const BLACK: [f64; 3] = [0.0; 3];
    const GRAY: [f64; 3] = [0.5; 3];
    loop {
        let c = [
            quantize(rng.random::<f64>()),
            quantize(rng.random::<f64>()),
            quantize(rng.random::<f64>()),
        ];
        if color_distance(&c, &BLACK) < MIN_COLOR_DISTANCE + 0.1
            || color_distance(&c, &GRAY) < MIN_COLOR_DISTANCE
        {
            continue;
        }
        if taken
            .iter()
            .all(|t| color_distance(t, &c) >= MIN_COLOR_DISTANCE)
        {
            return c;
        }
    }
}

/// Draws a random scene with `n_objects` objects by rejection sampling.
///
/// With `stack_one`, the last object id is stacked fully on a randomly chosen
/// table-level object.
pub fn sample_scene(n_objects: usize, seed: u64, stack_one: bool) -> Result<Scene> {
    if n_objects < 3 {
        return Err(Error::InvalidArgument(format!(
            "scenes need at least 3 objects, got {n_objects}"
        )));
    }
    let mut rng = rng_from(seed);
    let table_count = if stack_one { n_objects - 1 } else { n_objects };
    let (hmin, hmax) = HALF_EXTENT_RANGE;
    let mut objects: Vec<PlacedObject> = Vec::with_capacity(n_objects);
    let mut colors = Vec::with_capacity(n_objects);

    for id in 0..table_count as ObjectId {
        let half_extents = [
            quantize(rng.random_range(hmin..=hmax)),
            quantize(rng.random_range(hmin..=hmax)),
        ];
        let color = sample_color(&mut rng, &colors);
        colors.push(color);
        let spec = ObjectSpec {
            id,
            half_extents,
            color,
            height_class: 0,
        };
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let pose = Pose2::new(
                quantize(rng.random_range(half_extents[0]..=WORKSPACE - half_extents[0])),
                quantize(rng.random_range(half_extents[1]..=WORKSPACE - half_extents[1])),
            );
            if !inside_workspace(&spec, &pose) {
                continue;
            }
            if objects
                .iter()
                .all(|o| !footprints_overlap((&o.spec, &o.pose), (&spec, &pose)))
            {
                placed = Some(pose);
                break;
            }
        }
        let pose = placed.ok_or(Error::PlacementExhausted {
            object: id,
            attempts: MAX_PLACEMENT_ATTEMPTS,
        })?;
        objects.push(PlacedObject { spec, pose });
    }

    let mut on_top_of = BTreeMap::new();
    if stack_one {
        let id = table_count as ObjectId;
        let support_idx = rng.random_range(0..table_count);
        let support = objects[support_idx].clone();
        let half_extents = [
            quantize(support.spec.half_extents[0] * rng.random_range(0.5..0.9)),
            quantize(support.spec.half_extents[1] * rng.random_range(0.5..0.9)),
        ];
        let color = sample_color(&mut rng, &colors);
        let slack_x = support.spec.half_extents[0] - half_extents[0];
        let slack_y = support.spec.half_extents[1] - half_extents[1];
        let spec = ObjectSpec {
            id,
            half_extents,
            color,
            height_class: 1,
        };
        let mut pose = Pose2::new(
            quantize(support.pose.x + rng.random_range(-slack_x..=slack_x)),
            quantize(support.pose.y + rng.random_range(-slack_y..=slack_y)),
        );
        if !contained_in(&spec, &pose, &support.spec, &support.pose) {
            // quantization pushed an edge out; the support center always fits
            pose = support.pose;
        }
        objects.push(PlacedObject { spec, pose });
        on_top_of.insert(id, support.spec.id);
    }

    let scene = Scene {
        objects,
        on_top_of,
        rng_seed: seed,
    };
    debug_assert!(scene.validate().is_ok());
    Ok(scene)
}
