//! Planar rotation of channel-major square images: exact pixel
//! permutations for 90-degree multiples, bilinear resampling (zero fill)
//! otherwise.

use crate::numcore::{NumError, Result};

use super::group::CyclicGroup;

/// Rotates a [c, s, s] image counter-clockwise by group element `elem`.
pub fn rotate(
    img: &[f32],
    channels: usize,
    height: usize,
    width: usize,
    group: &CyclicGroup,
    elem: usize,
) -> Result<Vec<f32>> {
    if height != width {
        return Err(NumError::InvalidArgument(format!(
            "rotation requires a square image, got {height}x{width}"
        )));
    }
    if img.len() != channels * height * width {
        return Err(NumError::InvalidArgument("image buffer length mismatch".into()));
    }
    let s = height;
    let quarter_turns = (elem % group.n) * 4;
    if quarter_turns % group.n == 0 {
        // multiple of 90 degrees: exact permutation
        let q = quarter_turns / group.n; // 0..4
        return Ok(rotate_quarters(img, channels, s, q));
    }
    let theta = group.angle(elem);
    Ok(rotate_bilinear(img, channels, s, theta))
}

/// q quarter-turns counter-clockwise as an exact index permutation.
fn rotate_quarters(img: &[f32], channels: usize, s: usize, q: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; img.len()];
    for c in 0..channels {
        let plane = &img[c * s * s..(c + 1) * s * s];
        let dst = &mut out[c * s * s..(c + 1) * s * s];
        for y in 0..s {
            for x in 0..s {
                // one 90-degree CCW turn: out[y][x] = in[x][s-1-y]
                let (sy, sx) = match q % 4 {
                    0 => (y, x),
                    1 => (x, s - 1 - y),
                    2 => (s - 1 - y, s - 1 - x),
                    _ => (s - 1 - x, y),
                };
                dst[y * s + x] = plane[sy * s + sx];
            }
        }
    }
    out
}

/// Inverse-mapped bilinear resampling about the image center with zero
/// fill outside the source support.
fn rotate_bilinear(img: &[f32], channels: usize, s: usize, theta: f64) -> Vec<f32> {
    let c0 = (s as f64 - 1.0) / 2.0;
    let (sin_t, cos_t) = theta.sin_cos();
    let mut out = vec![0.0f32; img.len()];
    for y in 0..s {
        for x in 0..s {
            let dx = x as f64 - c0;
            let dy = y as f64 - c0;
            // sample the source at the inverse rotation (y-down coords)
            let sx = c0 + dx * cos_t - dy * sin_t;
            let sy = c0 + dx * sin_t + dy * cos_t;
            if sx < -1.0 || sy < -1.0 || sx > s as f64 || sy > s as f64 {
                continue;
            }
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = (sx - x0) as f32;
            let fy = (sy - y0) as f32;
            for c in 0..channels {
                let plane = c * s * s;
                let v00 = sample_at(img, plane, s, y0, x0);
                let v01 = sample_at(img, plane, s, y0, x0 + 1.0);
                let v10 = sample_at(img, plane, s, y0 + 1.0, x0);
                let v11 = sample_at(img, plane, s, y0 + 1.0, x0 + 1.0);
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bot = v10 * (1.0 - fx) + v11 * fx;
                out[plane + y * s + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

fn sample_at(img: &[f32], plane: usize, s: usize, y: f64, x: f64) -> f32 {
    if y < 0.0 || x < 0.0 || y >= s as f64 || x >= s as f64 {
        return 0.0;
    }
    img[plane + (y as usize) * s + (x as usize)]
}
