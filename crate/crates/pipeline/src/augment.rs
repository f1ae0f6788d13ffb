//! Geometric augmentation shared by both sources of a pair.
//!
//! Only flips and quarter turns are used, so no resampling happens and the
//! two images stay pixel-aligned.

use medfuse_core::plane::Plane;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::AugmentFlags;

/// Generator for one optimizer step. It depends only on the run seed and the
/// step index, so a resumed run draws the same values.
pub fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Transform {
    pub hflip: bool,
    pub vflip: bool,
    /// Counter-clockwise quarter turns, 0..4.
    pub quarter_turns: u8,
}

impl Transform {
    pub const IDENTITY: Self = Self {
        hflip: false,
        vflip: false,
        quarter_turns: 0,
    };

    /// Always consumes three draws so disabled flags do not shift later ones.
    pub fn sample(flags: AugmentFlags, rng: &mut impl Rng) -> Self {
        let h = rng.gen_bool(0.5);
        let v = rng.gen_bool(0.5);
        let q = rng.gen_range(0..4u8);
        Self {
            hflip: flags.hflip && h,
            vflip: flags.vflip && v,
            quarter_turns: if flags.rot90 { q } else { 0 },
        }
    }

    pub fn apply(&self, p: &Plane) -> Plane {
        let mut out = p.clone();
        if self.hflip {
            out = hflip(&out);
        }
        if self.vflip {
            out = vflip(&out);
        }
        for _ in 0..self.quarter_turns {
            out = rot90(&out);
        }
        out
    }
}

/// Mirrors left to right.
pub fn hflip(p: &Plane) -> Plane {
    let w = p.width();
    Plane::from_fn(p.height(), w, |y, x| p.get(y, w - 1 - x))
}

/// Mirrors top to bottom.
pub fn vflip(p: &Plane) -> Plane {
    let h = p.height();
    Plane::from_fn(h, p.width(), |y, x| p.get(h - 1 - y, x))
}

/// Quarter turn counter-clockwise; an `H×W` plane becomes `W×H`.
pub fn rot90(p: &Plane) -> Plane {
    let w = p.width();
    Plane::from_fn(w, p.height(), |y, x| p.get(x, w - 1 - y))
}

pub fn crop(p: &Plane, top: usize, left: usize, height: usize, width: usize) -> Plane {
    assert!(top + height <= p.height() && left + width <= p.width(), "crop outside the plane");
    Plane::from_fn(height, width, |y, x| p.get(top + y, left + x))
}

/// Same random crop and transform for both sources.
pub fn augment(a: &Plane, b: &Plane, patch: usize, flags: AugmentFlags, rng: &mut impl Rng) -> (Plane, Plane) {
    let top = rng.gen_range(0..=a.height() - patch);
    let left = rng.gen_range(0..=a.width() - patch);
    let t = Transform::sample(flags, rng);
    let a = t.apply(&crop(a, top, left, patch, patch));
    let b = t.apply(&crop(b, top, left, patch, patch));
    (a, b)
}
