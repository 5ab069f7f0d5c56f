//! Procedural rasterizer: factors + arm state -> 3x64x64 RGB image.
//!
//! The image is 8-bit quantized and then normalized to [0,1], so every
//! pixel value is k/255 for some integer k and renders are bit-stable.

use super::env::EnvState;
use super::factors::{BgKind, FactorVector, LightDir, IMG_LEN, IMG_SIZE};

/// Frame border width; everything outside the table rectangle shows
/// background and is where distracting textures live.
pub const TABLE_MARGIN: usize = 8;

const BG_SOLID: [f32; 3] = [0.10, 0.12, 0.16];

pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Maps a world coordinate in [-1,1] onto the table's pixel span.
pub fn world_to_px(w: f32) -> i32 {
    let span = (IMG_SIZE - 2 * TABLE_MARGIN - 1) as f32;
    (TABLE_MARGIN as f32 + (w.clamp(-1.0, 1.0) + 1.0) * 0.5 * span).round() as i32
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

fn lattice(id: u8, xi: i64, yi: i64) -> f32 {
    let h = splitmix(
        (id as u64)
            .wrapping_mul(0x9e37_79b9)
            .wrapping_add((xi as u64).wrapping_mul(0x85eb_ca6b))
            .wrapping_add((yi as u64).wrapping_mul(0xc2b2_ae35)),
    );
    (h >> 40) as f32 / (1u64 << 24) as f32
}

fn value_noise(id: u8, x: f32, y: f32, cell: f32) -> f32 {
    let gx = x / cell;
    let gy = y / cell;
    let x0 = gx.floor();
    let y0 = gy.floor();
    let fx = gx - x0;
    let fy = gy - y0;
    let sx = fx * fx * (3.0 - 2.0 * fx);
    let sy = fy * fy * (3.0 - 2.0 * fy);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let v00 = lattice(id, x0, y0);
    let v10 = lattice(id, x0 + 1, y0);
    let v01 = lattice(id, x0, y0 + 1);
    let v11 = lattice(id, x0 + 1, y0 + 1);
    let a = v00 + (v10 - v00) * sx;
    let b = v01 + (v11 - v01) * sx;
    a + (b - a) * sy
}

/// Multi-octave value noise colored by two texture-id-specific anchors.
fn texture_pixel(id: u8, x: usize, y: usize) -> [f32; 3] {
    let xf = x as f32;
    let yf = y as f32;
    let t = 0.5 * value_noise(id, xf, yf, 16.0)
        + 0.3 * value_noise(id.wrapping_add(64), xf, yf, 8.0)
        + 0.2 * value_noise(id.wrapping_add(128), xf, yf, 4.0);
    let h0 = (splitmix(id as u64 + 7) >> 40) as f32 / (1u64 << 24) as f32;
    let h1 = (splitmix(id as u64 + 77) >> 40) as f32 / (1u64 << 24) as f32;
    let c0 = hsv_to_rgb(h0, 0.7, 0.9);
    let c1 = hsv_to_rgb(h1, 0.7, 0.35);
    [
        c0[0] + (c1[0] - c0[0]) * t,
        c0[1] + (c1[1] - c0[1]) * t,
        c0[2] + (c1[2] - c0[2]) * t,
    ]
}

struct Canvas {
    px: Vec<[f32; 3]>,
}

impl Canvas {
    fn new() -> Self {
        Canvas {
            px: vec![[0.0; 3]; IMG_SIZE * IMG_SIZE],
        }
    }

    fn put(&mut self, x: i32, y: i32, c: [f32; 3]) {
        if (0..IMG_SIZE as i32).contains(&x) && (0..IMG_SIZE as i32).contains(&y) {
            self.px[y as usize * IMG_SIZE + x as usize] = c;
        }
    }

    fn fill_rect(&mut self, x0: i32, y0: i32, x1: i32, y1: i32, c: [f32; 3]) {
        for y in y0.max(0)..(y1 + 1).min(IMG_SIZE as i32) {
            for x in x0.max(0)..(x1 + 1).min(IMG_SIZE as i32) {
                self.px[y as usize * IMG_SIZE + x as usize] = c;
            }
        }
    }

    fn outline_rect(&mut self, x0: i32, y0: i32, x1: i32, y1: i32, c: [f32; 3]) {
        for x in x0..=x1 {
            self.put(x, y0, c);
            self.put(x, y1, c);
        }
        for y in y0..=y1 {
            self.put(x0, y, c);
            self.put(x1, y, c);
        }
    }
}

fn light_factor(dir: LightDir, x: usize) -> f32 {
    let u = x as f32 / (IMG_SIZE - 1) as f32;
    match dir {
        LightDir::None => 1.0,
        LightDir::Left => 1.25 - 0.5 * u,
        LightDir::Right => 0.75 + 0.5 * u,
        LightDir::Middle => 0.75 + 0.5 * (1.0 - (u - 0.5).abs() * 2.0),
    }
}

/// Pixel bounding box the object square occupies; shared with the
/// rasterization tests.
pub fn object_bbox(f: &FactorVector) -> (i32, i32, i32, i32) {
    let cx = world_to_px(f.obj_x);
    let cy = world_to_px(f.obj_y);
    let side = ((f.obj_size * IMG_SIZE as f32).round() as i32).max(2);
    let half = side / 2;
    (cx - half, cy - half, cx - half + side - 1, cy - half + side - 1)
}

/// Renders the scene as quantized bytes in [C,H,W] order.
pub fn render_u8(factors: &FactorVector, state: &EnvState) -> Result<Vec<u8>, String> {
    factors.validate()?;
    let mut canvas = Canvas::new();

    // background across the whole frame
    match factors.bg_kind {
        BgKind::Solid => {
            for p in canvas.px.iter_mut() {
                *p = BG_SOLID;
            }
        }
        BgKind::Texture(id) => {
            for y in 0..IMG_SIZE {
                for x in 0..IMG_SIZE {
                    canvas.px[y * IMG_SIZE + x] = texture_pixel(id, x, y);
                }
            }
        }
    }

    // table
    let m = TABLE_MARGIN as i32;
    let table = hsv_to_rgb(factors.table_hue, 0.25, 0.55);
    canvas.fill_rect(m, m, IMG_SIZE as i32 - 1 - m, IMG_SIZE as i32 - 1 - m, table);

    // goal outline
    let gx = world_to_px(state.goal_pos[0]);
    let gy = world_to_px(state.goal_pos[1]);
    canvas.outline_rect(gx - 4, gy - 4, gx + 4, gy + 4, [0.95, 0.95, 0.95]);

    // object square
    let (x0, y0, x1, y1) = object_bbox(factors);
    canvas.fill_rect(x0, y0, x1, y1, hsv_to_rgb(factors.obj_hue, 1.0, 1.0));

    // gripper marker: a plus whose arm length tracks height, filled center
    // when closed
    let px = world_to_px(state.gripper_pos[0]);
    let py = world_to_px(state.gripper_pos[1]);
    let half = 2 + (state.gripper_pos[2].clamp(0.0, 1.0) * 3.0).round() as i32;
    let grip = [1.0, 1.0, 1.0];
    for d in -half..=half {
        canvas.put(px + d, py, grip);
        canvas.put(px, py + d, grip);
    }
    if !state.gripper_open {
        canvas.fill_rect(px - 1, py - 1, px + 1, py + 1, [0.85, 0.85, 0.85]);
    }

    // lighting, then quantize
    let mut out = vec![0u8; IMG_LEN];
    for y in 0..IMG_SIZE {
        for x in 0..IMG_SIZE {
            let lf = factors.light_intensity * light_factor(factors.light_dir, x);
            let c = canvas.px[y * IMG_SIZE + x];
            for ch in 0..3 {
                let v = (c[ch] * lf).clamp(0.0, 1.0);
                out[ch * IMG_SIZE * IMG_SIZE + y * IMG_SIZE + x] = (v * 255.0).round() as u8;
            }
        }
    }
    Ok(out)
}

pub fn render(factors: &FactorVector, state: &EnvState) -> Result<Vec<f32>, String> {
    Ok(render_u8(factors, state)?
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect())
}

/// Writes a [C,H,W] float image (or horizontal strip of them) as binary PPM.
pub fn write_ppm(path: &std::path::Path, img: &[f32], width: usize, height: usize) -> std::io::Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)?;
    write!(f, "P6\n{width} {height}\n255\n")?;
    let plane = width * height;
    let mut buf = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            buf.push((img[c * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    f.write_all(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorworld::env::EnvState;

    fn state_away() -> EnvState {
        EnvState {
            gripper_pos: [0.9, 0.9, 0.5],
            gripper_open: true,
            obj_pos: [0.0, 0.0, 0.02],
            grasped: false,
            goal_pos: [-0.9, -0.9, 0.3],
            t: 0,
        }
    }

    #[test]
    fn render_is_deterministic() {
        let f = FactorVector::training_default();
        let s = state_away();
        assert_eq!(render_u8(&f, &s).unwrap(), render_u8(&f, &s).unwrap());
    }

    #[test]
    fn red_object_block_dominates_red_channel() {
        // Independent rasterization oracle: enumerate the pixel block the
        // object must cover from its center/size, then check channel order.
        let mut f = FactorVector::training_default();
        f.obj_hue = 0.0;
        f.light_intensity = 1.0;
        f.light_dir = LightDir::None;
        let s = state_away();
        let img = render_u8(&f, &s).unwrap();
        let (x0, y0, x1, y1) = object_bbox(&f);
        assert!(x1 > x0 && y1 > y0);
        let plane = IMG_SIZE * IMG_SIZE;
        for y in y0..=y1 {
            for x in x0..=x1 {
                let i = y as usize * IMG_SIZE + x as usize;
                let (r, g, b) = (img[i], img[plane + i], img[2 * plane + i]);
                assert!(r > g && r > b, "pixel ({x},{y}): r={r} g={g} b={b}");
            }
        }
    }

    #[test]
    fn resolution_is_64() {
        let f = FactorVector::training_default();
        let img = render(&f, &state_away()).unwrap();
        assert_eq!(img.len(), 3 * 64 * 64);
    }

    #[test]
    fn out_of_range_factors_rejected() {
        let mut f = FactorVector::training_default();
        f.obj_size = 0.5;
        assert!(render(&f, &state_away()).is_err());
    }

    #[test]
    fn dbg_changes_border_not_object() {
        let mut f = FactorVector::training_default();
        let s = state_away();
        let clean = render_u8(&f, &s).unwrap();
        f.bg_kind = BgKind::Texture(3);
        let dbg = render_u8(&f, &s).unwrap();
        assert_ne!(clean, dbg);
        let (x0, y0, x1, y1) = object_bbox(&f);
        let plane = IMG_SIZE * IMG_SIZE;
        for y in y0..=y1 {
            for x in x0..=x1 {
                for c in 0..3 {
                    let i = c * plane + y as usize * IMG_SIZE + x as usize;
                    assert_eq!(clean[i], dbg[i]);
                }
            }
        }
    }
}
