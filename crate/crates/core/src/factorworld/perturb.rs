//! Evaluation-time visual perturbations applied on top of the training
//! visuals. Each kind re-randomizes a disjoint set of factors and leaves
//! the rest untouched.

use serde::{Deserialize, Serialize};

use super::factors::{BgKind, FactorRanges, FactorVector, LightDir, NUM_TEXTURES};
use crate::numcore::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    None,
    Dbg,
    RandomColor,
    RandomLighting,
    DbgColor,
    DbgLightingColor,
}

pub const ALL_PERTURBATIONS: [Perturbation; 6] = [
    Perturbation::None,
    Perturbation::Dbg,
    Perturbation::RandomColor,
    Perturbation::RandomLighting,
    Perturbation::DbgColor,
    Perturbation::DbgLightingColor,
];

impl Perturbation {
    pub fn name(&self) -> &'static str {
        match self {
            Perturbation::None => "none",
            Perturbation::Dbg => "dbg",
            Perturbation::RandomColor => "random_color",
            Perturbation::RandomLighting => "random_lighting",
            Perturbation::DbgColor => "dbg_color",
            Perturbation::DbgLightingColor => "dbg_lighting_color",
        }
    }

    pub fn parse(s: &str) -> Option<Perturbation> {
        ALL_PERTURBATIONS.iter().copied().find(|p| p.name() == s)
    }

    fn dbg(&self) -> bool {
        matches!(
            self,
            Perturbation::Dbg | Perturbation::DbgColor | Perturbation::DbgLightingColor
        )
    }

    fn color(&self) -> bool {
        matches!(
            self,
            Perturbation::RandomColor | Perturbation::DbgColor | Perturbation::DbgLightingColor
        )
    }

    fn lighting(&self) -> bool {
        matches!(
            self,
            Perturbation::RandomLighting | Perturbation::DbgLightingColor
        )
    }
}

/// Applies the perturbation to a base factor configuration. Randomized
/// values are drawn once per call; geometry (position, size) never changes.
pub fn apply_perturbation(
    base: &FactorVector,
    kind: Perturbation,
    rng: &mut Rng,
    ranges: &FactorRanges,
) -> FactorVector {
    let mut f = *base;
    if kind.dbg() {
        f.bg_kind = BgKind::Texture(rng.index(NUM_TEXTURES as usize) as u8);
    }
    if kind.color() {
        f.obj_hue = rng.uniform(0.0, 1.0).min(0.999_999);
        f.table_hue = rng.uniform(0.0, 1.0).min(0.999_999);
    }
    if kind.lighting() {
        f.light_intensity = rng.uniform(ranges.light_intensity.0, ranges.light_intensity.1);
        f.light_dir = match rng.index(4) {
            0 => LightDir::None,
            1 => LightDir::Left,
            2 => LightDir::Middle,
            _ => LightDir::Right,
        };
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diff_fields(a: &FactorVector, b: &FactorVector) -> Vec<&'static str> {
        let mut out = Vec::new();
        if a.obj_x != b.obj_x {
            out.push("obj_x");
        }
        if a.obj_y != b.obj_y {
            out.push("obj_y");
        }
        if a.obj_hue != b.obj_hue {
            out.push("obj_hue");
        }
        if a.obj_size != b.obj_size {
            out.push("obj_size");
        }
        if a.table_hue != b.table_hue {
            out.push("table_hue");
        }
        if a.bg_kind != b.bg_kind {
            out.push("bg_kind");
        }
        if a.light_intensity != b.light_intensity {
            out.push("light_intensity");
        }
        if a.light_dir != b.light_dir {
            out.push("light_dir");
        }
        out
    }

    fn allowed(kind: Perturbation) -> Vec<&'static str> {
        let mut out = Vec::new();
        if kind.dbg() {
            out.push("bg_kind");
        }
        if kind.color() {
            out.push("obj_hue");
            out.push("table_hue");
        }
        if kind.lighting() {
            out.push("light_intensity");
            out.push("light_dir");
        }
        out
    }

    #[test]
    fn each_kind_touches_only_its_fields() {
        let base = FactorVector::training_default();
        let ranges = FactorRanges::default();
        let mut rng = Rng::new(7);
        for kind in ALL_PERTURBATIONS {
            for _ in 0..200 {
                let f = apply_perturbation(&base, kind, &mut rng, &ranges);
                f.validate().unwrap();
                let touched = diff_fields(&base, &f);
                let ok = allowed(kind);
                for field in &touched {
                    assert!(
                        ok.contains(field),
                        "{kind:?} changed disallowed field {field}"
                    );
                }
            }
        }
    }

    #[test]
    fn none_is_identity() {
        let base = FactorVector::training_default();
        let ranges = FactorRanges::default();
        let mut rng = Rng::new(3);
        let f = apply_perturbation(&base, Perturbation::None, &mut rng, &ranges);
        assert_eq!(f, base);
    }

    #[test]
    fn dbg_always_yields_texture() {
        let base = FactorVector::training_default();
        let ranges = FactorRanges::default();
        let mut rng = Rng::new(11);
        for _ in 0..100 {
            let f = apply_perturbation(&base, Perturbation::Dbg, &mut rng, &ranges);
            assert!(matches!(f.bg_kind, BgKind::Texture(_)));
        }
    }

    #[test]
    fn name_round_trip() {
        for kind in ALL_PERTURBATIONS {
            assert_eq!(Perturbation::parse(kind.name()), Some(kind));
        }
        assert_eq!(Perturbation::parse("bogus"), None);
    }
}
