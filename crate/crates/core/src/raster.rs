//! Deterministic orthographic rasterizer for scene images and canonical
//! object views.

use crate::scene::{ObjectSpec, Scene, WORKSPACE};

pub const IMAGE_SIZE: usize = 96;
pub const PATCH_SIZE: usize = 32;
pub const CHANNELS: usize = 3;
pub const PATCHES_PER_SIDE: usize = IMAGE_SIZE / PATCH_SIZE;
pub const CONTEXT_PATCHES: usize = PATCHES_PER_SIDE * PATCHES_PER_SIDE;
pub const IMAGE_LEN: usize = IMAGE_SIZE * IMAGE_SIZE * CHANNELS;
pub const PATCH_LEN: usize = PATCH_SIZE * PATCH_SIZE * CHANNELS;
pub const VIEW_VARIANTS: u8 = 4;
pub const VIEW_BACKGROUND: f32 = 0.5;

/// Sprite scale for canonical views, in pixels per workspace unit. A
/// maximal half extent (a quarter of the workspace) fills 14 of the 16
/// pixels available on either side of the patch center.
const VIEW_PIXELS_PER_UNIT: f64 = 56.0;

/// Row-major `H × W × 3` image. Row 0 is the back of the table (largest y).
#[derive(Clone, Debug, PartialEq)]
pub struct SceneImage {
    pub grid: Vec<f32>,
}

impl SceneImage {
    pub fn zeros() -> Self {
        SceneImage {
            grid: vec![0.0; IMAGE_LEN],
        }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * IMAGE_SIZE + col) * CHANNELS;
        [self.grid[i], self.grid[i + 1], self.grid[i + 2]]
    }

    /// Flattened `32×32×3` patch at grid position `index` (row-major over the
    /// 3×3 patch layout).
    pub fn patch(&self, index: usize) -> Vec<f32> {
        let pr = index / PATCHES_PER_SIDE;
        let pc = index % PATCHES_PER_SIDE;
        let mut out = Vec::with_capacity(PATCH_LEN);
        for r in 0..PATCH_SIZE {
            let row = pr * PATCH_SIZE + r;
            let start = (row * IMAGE_SIZE + pc * PATCH_SIZE) * CHANNELS;
            out.extend_from_slice(&self.grid[start..start + PATCH_SIZE * CHANNELS]);
        }
        out
    }
}

/// `32×32×3` sprite identifying one object.
#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalView {
    pub patch: Vec<f32>,
    pub object_id: u32,
}

/// Center of pixel `(row, col)` in workspace coordinates.
pub fn pixel_center(row: usize, col: usize) -> (f64, f64) {
    let cell = WORKSPACE / IMAGE_SIZE as f64;
    let x = (col as f64 + 0.5) * cell;
    let y = WORKSPACE - (row as f64 + 0.5) * cell;
    (x, y)
}

/// Paints every object as a filled rectangle on a black background.
/// Stacked objects paint after table-level ones.
pub fn rasterize_scene(scene: &Scene) -> SceneImage {
    let mut img = SceneImage::zeros();
    let mut order: Vec<_> = scene.objects.iter().collect();
    order.sort_by_key(|o| (o.spec.height_class, o.spec.id));
    let cell = WORKSPACE / IMAGE_SIZE as f64;
    for o in order {
        let [hx, hy] = o.spec.half_extents;
        let color = o.spec.color.map(|c| c as f32);
        // candidate column/row window, then the exact center test
        let c0 = (((o.pose.x - hx) / cell).floor().max(0.0)) as usize;
        let c1 = ((((o.pose.x + hx) / cell).ceil()) as usize).min(IMAGE_SIZE);
        let r0 = (((WORKSPACE - o.pose.y - hy) / cell).floor().max(0.0)) as usize;
        let r1 = ((((WORKSPACE - o.pose.y + hy) / cell).ceil()) as usize).min(IMAGE_SIZE);
        for row in r0..r1 {
            for col in c0..c1 {
                let (x, y) = pixel_center(row, col);
                if (x - o.pose.x).abs() <= hx && (y - o.pose.y).abs() <= hy {
                    let i = (row * IMAGE_SIZE + col) * CHANNELS;
                    img.grid[i..i + 3].copy_from_slice(&color);
                }
            }
        }
    }
    img
}

/// Renders one of [`VIEW_VARIANTS`] canonical views: index bit 0 rotates the
/// footprint by 90°, index bit 1 shrinks the sprite to 70 %.
pub fn render_canonical_view(spec: &ObjectSpec, view_index: u8) -> CanonicalView {
    let view_index = view_index % VIEW_VARIANTS;
    let rotated = view_index & 1 == 1;
    let scale = if view_index & 2 == 2 { 0.7 } else { 1.0 };
    let [mut hx, mut hy] = spec.half_extents;
    if rotated {
        std::mem::swap(&mut hx, &mut hy);
    }
    let hx_px = hx * VIEW_PIXELS_PER_UNIT * scale;
    let hy_px = hy * VIEW_PIXELS_PER_UNIT * scale;
    let half = PATCH_SIZE as f64 / 2.0;
    let color = spec.color.map(|c| c as f32);
    let mut patch = vec![VIEW_BACKGROUND; PATCH_LEN];
    for row in 0..PATCH_SIZE {
        let dy = row as f64 + 0.5 - half;
        for col in 0..PATCH_SIZE {
            let dx = col as f64 + 0.5 - half;
            if dx.abs() <= hx_px && dy.abs() <= hy_px {
                let i = (row * PATCH_SIZE + col) * CHANNELS;
                patch[i..i + 3].copy_from_slice(&color);
            }
        }
    }
    CanonicalView {
        patch,
        object_id: spec.id,
    }
}
