//! Ground-truth generative factors of the rendered scene.

use serde::{Deserialize, Serialize};

use crate::numcore::Rng;

pub const IMG_SIZE: usize = 64;
pub const IMG_CHANNELS: usize = 3;
pub const IMG_LEN: usize = IMG_CHANNELS * IMG_SIZE * IMG_SIZE;

/// Number of procedural background textures available to DBG.
pub const NUM_TEXTURES: u8 = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BgKind {
    Solid,
    Texture(u8),
}

impl BgKind {
    /// Numeric encoding for histogram/correlation work.
    pub fn as_code(&self) -> f32 {
        match self {
            BgKind::Solid => 0.0,
            BgKind::Texture(id) => 1.0 + *id as f32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LightDir {
    None,
    Left,
    Middle,
    Right,
}

impl LightDir {
    pub fn as_code(&self) -> f32 {
        match self {
            LightDir::None => 0.0,
            LightDir::Left => 1.0,
            LightDir::Middle => 2.0,
            LightDir::Right => 3.0,
        }
    }
}

/// Independent sources of the rendered scene. The renderer is the (known)
/// generator mapping these to observations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorVector {
    pub obj_x: f32,
    pub obj_y: f32,
    pub obj_hue: f32,
    pub obj_size: f32,
    pub table_hue: f32,
    pub bg_kind: BgKind,
    pub light_intensity: f32,
    pub light_dir: LightDir,
}

/// Sampling ranges for randomized factor draws.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FactorRanges {
    pub obj_xy: (f32, f32),
    pub obj_size: (f32, f32),
    pub light_intensity: (f32, f32),
}

impl Default for FactorRanges {
    fn default() -> Self {
        FactorRanges {
            obj_xy: (-0.6, 0.6),
            obj_size: (0.05, 0.15),
            light_intensity: (0.4, 1.6),
        }
    }
}

impl FactorVector {
    /// Visual configuration used for every training demonstration:
    /// red object, fixed table, solid background, neutral lighting.
    pub fn training_default() -> Self {
        FactorVector {
            obj_x: 0.0,
            obj_y: 0.0,
            obj_hue: 0.0,
            obj_size: 0.10,
            table_hue: 0.35,
            bg_kind: BgKind::Solid,
            light_intensity: 1.0,
            light_dir: LightDir::None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let ok = (-1.0..=1.0).contains(&self.obj_x)
            && (-1.0..=1.0).contains(&self.obj_y)
            && (0.0..1.0).contains(&self.obj_hue)
            && (0.05..=0.15).contains(&self.obj_size)
            && (0.0..1.0).contains(&self.table_hue)
            && (0.4..=1.6).contains(&self.light_intensity);
        let ok = ok
            && match self.bg_kind {
                BgKind::Solid => true,
                BgKind::Texture(id) => id < NUM_TEXTURES,
            };
        if ok {
            Ok(())
        } else {
            Err(format!("factor out of range: {self:?}"))
        }
    }

    /// Every factor drawn independently from its randomization range.
    pub fn sample_randomized(rng: &mut Rng, ranges: &FactorRanges) -> Self {
        let (lo, hi) = ranges.obj_xy;
        let obj_x = rng.uniform(lo, hi);
        let obj_y = rng.uniform(lo, hi);
        let obj_hue = rng.uniform(0.0, 1.0).min(0.999_999);
        let obj_size = rng.uniform(ranges.obj_size.0, ranges.obj_size.1);
        let table_hue = rng.uniform(0.0, 1.0).min(0.999_999);
        let bg_kind = match rng.index(1 + NUM_TEXTURES as usize) {
            0 => BgKind::Solid,
            i => BgKind::Texture((i - 1) as u8),
        };
        let light_intensity = rng.uniform(ranges.light_intensity.0, ranges.light_intensity.1);
        let light_dir = match rng.index(4) {
            0 => LightDir::None,
            1 => LightDir::Left,
            2 => LightDir::Middle,
            _ => LightDir::Right,
        };
        FactorVector {
            obj_x,
            obj_y,
            obj_hue,
            obj_size,
            table_hue,
            bg_kind,
            light_intensity,
            light_dir,
        }
    }

    /// Numeric view used by the disentanglement metrics: one value per factor.
    pub fn as_numeric(&self) -> [f32; 8] {
        [
            self.obj_x,
            self.obj_y,
            self.obj_hue,
            self.obj_size,
            self.table_hue,
            self.bg_kind.as_code(),
            self.light_intensity,
            self.light_dir.as_code(),
        ]
    }

    pub const NUM_FACTORS: usize = 8;

    pub fn factor_names() -> [&'static str; 8] {
        [
            "obj_x",
            "obj_y",
            "obj_hue",
            "obj_size",
            "table_hue",
            "bg_kind",
            "light_intensity",
            "light_dir",
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn randomized_draws_stay_in_range() {
        let mut rng = Rng::new(1);
        let ranges = FactorRanges::default();
        for _ in 0..1000 {
            FactorVector::sample_randomized(&mut rng, &ranges)
                .validate()
                .unwrap();
        }
    }

    #[test]
    fn factors_are_pairwise_uncorrelated() {
        // |Pearson r| <= 0.05 over 1e4 independent draws, all pairs.
        let mut rng = Rng::new(99);
        let ranges = FactorRanges::default();
        let n = 10_000;
        let mut cols = vec![vec![0.0f64; n]; FactorVector::NUM_FACTORS];
        for i in 0..n {
            let f = FactorVector::sample_randomized(&mut rng, &ranges);
            for (j, v) in f.as_numeric().iter().enumerate() {
                cols[j][i] = *v as f64;
            }
        }
        for a in 0..cols.len() {
            for b in (a + 1)..cols.len() {
                let r = pearson(&cols[a], &cols[b]);
                assert!(
                    r.abs() <= 0.05,
                    "factors {a} and {b} correlate: r = {r}"
                );
            }
        }
    }

    fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut sxy = 0.0;
        let mut sxx = 0.0;
        let mut syy = 0.0;
        for (a, b) in x.iter().zip(y) {
            sxy += (a - mx) * (b - my);
            sxx += (a - mx) * (a - mx);
            syy += (b - my) * (b - my);
        }
        sxy / (sxx.sqrt() * syy.sqrt())
    }
}
