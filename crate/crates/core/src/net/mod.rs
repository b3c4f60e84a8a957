//! Patch-attention relevance classifier with hand-written gradients.

pub mod checkpoint;
pub mod eval;
pub mod model;
pub mod params;
pub mod train;

use std::collections::BTreeMap;

use crate::error::Result;
use crate::planner::RelevancePredictor;
use crate::raster::{rasterize_scene, render_canonical_view, CanonicalView};
use crate::scene::{GoalPredicate, ObjectId, Scene};

pub use eval::{evaluate, EvalMetrics, SamplePredictor};
pub use model::{embed_inputs, forward, weighted_bce_loss, Gradients, Tokens};
pub use params::{ModelDims, ModelParams, ParamGroup};
pub use train::{adam_step, backward, train_batch_polling, AdamState, TrainConfig, TrainState};

pub const DEFAULT_BETA: f64 = 0.5;

pub fn decide_relevance(prob: f64, beta: f64) -> bool {
    prob >= beta
}

/// Views rendered for planning queries use the unrotated, full-size sprite.
const PLANNING_VIEW: u8 = 0;

impl RelevancePredictor for ModelParams {
    fn probabilities(&self, scene: &Scene, g: &GoalPredicate) -> Result<BTreeMap<ObjectId, f64>> {
        g.validate(scene)?;
        self.head(g.kind)?;
        let image = rasterize_scene(scene);
        let views: BTreeMap<ObjectId, CanonicalView> = scene
            .objects
            .iter()
            .map(|o| (o.spec.id, render_canonical_view(&o.spec, PLANNING_VIEW)))
            .collect();
        let goal = [&views[&g.subject], &views[&g.reference]];
        let mut out = BTreeMap::new();
        for (id, view) in &views {
            let patches = model::gather_patches(&image, goal, view)?;
            out.insert(*id, model::forward_trace(patches, self, g.kind)?.prob);
        }
        Ok(out)
    }
}
