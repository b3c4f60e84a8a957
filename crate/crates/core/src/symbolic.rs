//! Discrete layer: symbolic states, pick/place actions and the ordered
//! enumeration of action skeletons.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::scene::{GoalPredicate, ObjectId, Scene};

pub const MAX_K: usize = 12;
pub const DEFAULT_K_MAX: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActionKind {
    Pick,
    Place,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Action {
    pub kind: ActionKind,
    pub object: ObjectId,
}

impl Action {
    pub fn pick(object: ObjectId) -> Self {
        Action {
            kind: ActionKind::Pick,
            object,
        }
    }

    pub fn place(object: ObjectId) -> Self {
        Action {
            kind: ActionKind::Place,
            object,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.kind {
            ActionKind::Pick => 'P',
            ActionKind::Place => 'L',
        };
        write!(f, "{tag}{}", self.object)
    }
}

/// The object an action manipulates.
pub fn theta(a: &Action) -> ObjectId {
    a.object
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SymbolicState {
    pub holding: Option<ObjectId>,
    pub moved: Vec<ObjectId>,
    pub cleared: BTreeSet<ObjectId>,
}

impl SymbolicState {
    pub fn initial() -> Self {
        Self::default()
    }

    /// An object is clear when nothing still rests on it. Re-placed objects
    /// always land on the table, so only unmoved, unheld stacked objects
    /// block their support.
    pub fn is_clear(&self, scene: &Scene, o: ObjectId) -> bool {
        !scene.on_top_of.iter().any(|(&top, &support)| {
            support == o && self.holding != Some(top) && !self.moved.contains(&top)
        })
    }

    fn can_pick(&self, scene: &Scene, o: ObjectId) -> bool {
        self.holding.is_none() && self.is_clear(scene, o)
    }

    fn pick_place(&self, o: ObjectId) -> SymbolicState {
        let mut next = self.clone();
        next.moved.push(o);
        next
    }
}

/// Actions applicable in `state`, in ascending object id order.
pub fn applicable_actions(state: &SymbolicState, scene: &Scene) -> Vec<Action> {
    match state.holding {
        Some(o) => vec![Action::place(o)],
        None => scene
            .ids()
            .into_iter()
            .filter(|&o| state.can_pick(scene, o))
            .map(Action::pick)
            .collect(),
    }
}

/// Symbolic successor. Pure: `state` is left untouched.
pub fn succ(state: &SymbolicState, scene: &Scene, a: &Action) -> Result<SymbolicState> {
    let inapplicable = || Error::InapplicableAction(a.to_string());
    let mut next = state.clone();
    match a.kind {
        ActionKind::Pick => {
            scene.object(a.object)?;
            if !state.can_pick(scene, a.object) {
                return Err(inapplicable());
            }
            next.holding = Some(a.object);
            next.cleared.insert(a.object);
        }
        ActionKind::Place => {
            if state.holding != Some(a.object) {
                return Err(inapplicable());
            }
            next.holding = None;
            next.moved.push(a.object);
            next.cleared.remove(&a.object);
        }
    }
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Skeleton {
    pub actions: Vec<Action>,
}

impl Skeleton {
    /// Builds `Pick(o), Place(o)` pairs for each object in order.
    pub fn from_objects(objects: &[ObjectId]) -> Self {
        Skeleton {
            actions: objects
                .iter()
                .flat_map(|&o| [Action::pick(o), Action::place(o)])
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Objects in pick order, one per pick/place pair.
    pub fn objects(&self) -> Vec<ObjectId> {
        self.actions
            .iter()
            .filter(|a| a.kind == ActionKind::Pick)
            .map(theta)
            .collect()
    }

    pub fn manipulated(&self) -> BTreeSet<ObjectId> {
        self.actions.iter().map(theta).collect()
    }

    /// Stable 64-bit digest used to derive per-skeleton random streams.
    pub fn digest(&self) -> u64 {
        let codes: Vec<u64> = self
            .actions
            .iter()
            .map(|a| ((a.object as u64) << 1) | (a.kind == ActionKind::Place) as u64)
            .collect();
        derive_seed(self.actions.len() as u64, &codes)
    }

    /// Applies every action from the initial state, failing on the first
    /// inapplicable one.
    pub fn replay(&self, scene: &Scene) -> Result<SymbolicState> {
        self.actions
            .iter()
            .try_fold(SymbolicState::initial(), |s, a| succ(&s, scene, a))
    }
}

impl fmt::Display for Skeleton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, a) in self.actions.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{a}")?;
        }
        Ok(())
    }
}

impl FromStr for Skeleton {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = |t: &str| Error::InvalidArgument(format!("bad skeleton token `{t}`"));
        let mut actions = Vec::new();
        for tok in s.split(';').filter(|t| !t.is_empty()) {
            let (tag, id) = tok.split_at(1);
            let object: ObjectId = id.parse().map_err(|_| bad(tok))?;
            actions.push(match tag {
                "P" => Action::pick(object),
                "L" => Action::place(object),
                _ => return Err(bad(tok)),
            });
        }
        Ok(Skeleton { actions })
    }
}

struct Frame {
    state: SymbolicState,
    next: usize,
}

/// Lazy, single-consumer skeleton sequence. See [`enumerate_skeletons`].
pub struct SkeletonIter<'a> {
    scene: &'a Scene,
    subject: ObjectId,
    allowed: Vec<ObjectId>,
    k_max: usize,
    pairs: usize,
    fresh: bool,
    stack: Vec<Frame>,
    path: Vec<ObjectId>,
}

impl SkeletonIter<'_> {
    fn pop(&mut self) {
        self.stack.pop();
        self.path.pop();
    }
}

impl Iterator for SkeletonIter<'_> {
    type Item = Skeleton;

    fn next(&mut self) -> Option<Skeleton> {
        loop {
            if self.stack.is_empty() {
                if self.fresh {
                    self.fresh = false;
                    self.stack.push(Frame {
                        state: SymbolicState::initial(),
                        next: 0,
                    });
                } else {
                    self.pairs += 1;
                    if 2 * self.pairs > self.k_max {
                        return None;
                    }
                    self.fresh = true;
                }
                continue;
            }
            let depth = self.stack.len() - 1;
            let top = self.stack.last_mut().expect("non-empty");
            if depth + 1 == self.pairs {
                let out = top.state.can_pick(self.scene, self.subject).then(|| {
                    let mut objs = self.path.clone();
                    objs.push(self.subject);
                    Skeleton::from_objects(&objs)
                });
                self.pop();
                if out.is_some() {
                    return out;
                }
                continue;
            }
            let mut chosen = None;
            while top.next < self.allowed.len() {
                let o = self.allowed[top.next];
                top.next += 1;
                if top.state.can_pick(self.scene, o) {
                    chosen = Some(o);
                    break;
                }
            }
            match chosen {
                Some(o) => {
                    let state = top.state.pick_place(o);
                    self.stack.push(Frame { state, next: 0 });
                    self.path.push(o);
                }
                None => self.pop(),
            }
        }
    }
}

pub fn validate_k_max(k_max: usize) -> Result<()> {
    if k_max < 2 || k_max > MAX_K || k_max % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "k_max must be even and within [2, {MAX_K}], got {k_max}"
        )));
    }
    Ok(())
}

/// Enumerates every symbolically valid skeleton over `allowed` that ends by
/// placing the goal subject, by increasing length and then lexicographically
/// by object id sequence.
pub fn enumerate_skeletons<'a>(
    scene: &'a Scene,
    g: &GoalPredicate,
    allowed: &BTreeSet<ObjectId>,
    k_max: usize,
) -> Result<SkeletonIter<'a>> {
    validate_k_max(k_max)?;
    if !allowed.contains(&g.subject) {
        return Err(Error::SubjectNotAllowed(g.subject));
    }
    for &o in allowed {
        scene.object(o)?;
    }
    Ok(SkeletonIter {
        scene,
        subject: g.subject,
        allowed: allowed.iter().copied().collect(),
        k_max,
        pairs: 1,
        fresh: true,
        stack: Vec::new(),
        path: Vec::new(),
    })
}
