//! Procedural moving-object sequences.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::file::DatasetFile;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Glyph edge length of the digit sprites.
pub const GLYPH: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSpec {
    pub objects: usize,
    /// Edge of the square box an object occupies.
    pub sprite: usize,
    /// Speed range in pixels per frame.
    pub speed: [f64; 2],
    pub seed: u64,
}

impl MotionSpec {
    pub fn digits(seed: u64) -> Self {
        Self {
            objects: 2,
            sprite: GLYPH,
            speed: [1.0, 3.0],
            seed,
        }
    }

    pub fn blobs(seed: u64) -> Self {
        Self {
            objects: 2,
            sprite: 15,
            speed: [1.0, 3.0],
            seed,
        }
    }

    fn validate(&self, h: usize, w: usize) -> Result<()> {
        if self.sprite == 0 || self.sprite > h || self.sprite > w {
            return Err(Error::Config(format!(
                "sprite {} does not fit a {h}x{w} frame",
                self.sprite
            )));
        }
        let [lo, hi] = self.speed;
        if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("bad speed range [{lo}, {hi}]")));
        }
        Ok(())
    }
}

/// Position along one axis after `t` frames of motion at velocity `v` inside
/// `[0, range]` with mirror walls, and the velocity at that time.
pub fn reflect(p0: f64, v: f64, t: f64, range: f64) -> (f64, f64) {
    if range <= 0.0 {
        return (0.0, v);
    }
    let period = 2.0 * range;
    let q = (p0 + v * t).rem_euclid(period);
    if q <= range {
        (q, v)
    } else {
        (period - q, -v)
    }
}

/// One moving object: top-left corner, velocity (rows, cols), and its digit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Object {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub digit: u8,
}

impl Object {
    /// Top-left corner at frame `t` in a frame with room `range` per axis.
    pub fn at(&self, t: usize, range: [f64; 2]) -> [f64; 2] {
        [
            reflect(self.pos[0], self.vel[0], t as f64, range[0]).0,
            reflect(self.pos[1], self.vel[1], t as f64, range[1]).0,
        ]
    }
}

// seven segments: top, upper-left, upper-right, middle, lower-left, lower-right, bottom
const SEGMENTS: [[bool; 7]; 10] = [
    [true, true, true, false, true, true, true],
    [false, false, true, false, false, true, false],
    [true, false, true, true, true, false, true],
    [true, false, true, true, false, true, true],
    [false, true, true, true, false, true, false],
    [true, true, false, true, false, true, true],
    [true, true, false, true, true, true, true],
    [true, false, true, false, false, true, false],
    [true, true, true, true, true, true, true],
    [true, true, true, true, false, true, true],
];

/// 12x12 bitmap of a seven-segment digit.
pub fn glyph(digit: u8) -> [[f32; GLYPH]; GLYPH] {
    let seg = SEGMENTS[digit as usize % 10];
    let mut g = [[0.0; GLYPH]; GLYPH];
    let mut fill = |r0: usize, r1: usize, c0: usize, c1: usize| {
        for row in g.iter_mut().take(r1).skip(r0) {
            for px in row.iter_mut().take(c1).skip(c0) {
                *px = 1.0;
            }
        }
    };
    if seg[0] {
        fill(0, 2, 2, 10);
    }
    if seg[1] {
        fill(0, 7, 2, 4);
    }
    if seg[2] {
        fill(0, 7, 8, 10);
    }
    if seg[3] {
        fill(5, 7, 2, 10);
    }
    if seg[4] {
        fill(5, 12, 2, 4);
    }
    if seg[5] {
        fill(5, 12, 8, 10);
    }
    if seg[6] {
        fill(10, 12, 2, 10);
    }
    g
}

fn room(spec_sprite: usize, h: usize, w: usize) -> [f64; 2] {
    [(h - spec_sprite) as f64, (w - spec_sprite) as f64]
}

/// Renders `t` frames `[t, 1, h, w]` of digit sprites, composited by max.
pub fn render_digits(objects: &[Object], sprite: usize, t: usize, h: usize, w: usize) -> Vec<f32> {
    let range = room(sprite, h, w);
    let mut out = vec![0.0f32; t * h * w];
    for (k, frame) in out.chunks_mut(h * w).enumerate() {
        for obj in objects {
            let g = glyph(obj.digit);
            let [r, c] = obj.at(k, range);
            let (r0, c0) = (r.round() as usize, c.round() as usize);
            for i in 0..sprite {
                for j in 0..sprite {
                    // nearest-neighbour scaling of the glyph to the sprite box
                    let v = g[i * GLYPH / sprite][j * GLYPH / sprite];
                    let px = &mut frame[(r0 + i) * w + c0 + j];
                    *px = px.max(v);
                }
            }
        }
    }
    out
}

/// Gaussian width of a blob occupying a `sprite` box.
pub fn blob_sigma(sprite: usize) -> f64 {
    sprite as f64 / 5.0
}

/// Renders `t` frames of Gaussian blobs centred in their sprite boxes.
pub fn render_blobs(objects: &[Object], sprite: usize, t: usize, h: usize, w: usize) -> Vec<f32> {
    let range = room(sprite, h, w);
    let s = blob_sigma(sprite);
    let inv = 1.0 / (2.0 * s * s);
    let half = (sprite as f64 - 1.0) / 2.0;
    let mut out = vec![0.0f32; t * h * w];
    for (k, frame) in out.chunks_mut(h * w).enumerate() {
        for obj in objects {
            let [r, c] = obj.at(k, range);
            let (cr, cc) = (r + half, c + half);
            for i in 0..h {
                let dr = i as f64 - cr;
                for j in 0..w {
                    let dc = j as f64 - cc;
                    let v = (-(dr * dr + dc * dc) * inv).exp() as f32;
                    let px = &mut frame[i * w + j];
                    *px = px.max(v);
                }
            }
        }
    }
    out
}

fn sample_objects(spec: &MotionSpec, rng: &mut ChaCha8Rng, h: usize, w: usize) -> Vec<Object> {
    let range = room(spec.sprite, h, w);
    (0..spec.objects)
        .map(|_| {
            let pos = [rng.gen::<f64>() * range[0], rng.gen::<f64>() * range[1]];
            let speed = spec.speed[0] + rng.gen::<f64>() * (spec.speed[1] - spec.speed[0]);
            let angle = rng.gen::<f64>() * std::f64::consts::TAU;
            Object {
                pos,
                vel: [speed * angle.sin(), speed * angle.cos()],
                digit: rng.gen_range(0..10),
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Digits,
    Blobs,
}

pub fn generate(
    kind: Kind,
    spec: &MotionSpec,
    n: usize,
    t: usize,
    h: usize,
    w: usize,
) -> Result<DatasetFile<f32>> {
    spec.validate(h, w)?;
    if n == 0 || t == 0 {
        return Err(Error::Config("sample and frame counts must be positive".into()));
    }
    let samples: Vec<Vec<f32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let objs = sample_objects(spec, &mut rng, h, w);
            match kind {
                Kind::Digits => render_digits(&objs, spec.sprite, t, h, w),
                Kind::Blobs => render_blobs(&objs, spec.sprite, t, h, w),
            }
        })
        .collect();
    let data = Tensor::from_vec(&[n, t, 1, h, w], samples.concat())?;
    Ok(DatasetFile {
        normalized: true,
        frames: data,
    })
}

/// Seven-segment digits bouncing in an `h x w` box.
pub fn gen_moving_digits(spec: &MotionSpec, n: usize, t: usize, h: usize, w: usize) -> Result<DatasetFile<f32>> {
    generate(Kind::Digits, spec, n, t, h, w)
}

/// Gaussian blobs bouncing in an `h x w` box.
pub fn gen_bouncing_blobs(spec: &MotionSpec, n: usize, t: usize, h: usize, w: usize) -> Result<DatasetFile<f32>> {
    generate(Kind::Blobs, spec, n, t, h, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn static_sequence() {
        let o = [Object {
            pos: [10.0, 20.0],
            vel: [0.0, 0.0],
            digit: 8,
        }];
        let f = render_digits(&o, GLYPH, 5, 64, 64);
        let first = &f[..64 * 64];
        for k in 1..5 {
            assert_eq!(&f[k * 4096..(k + 1) * 4096], first);
        }
    }

    #[test]
    fn unit_velocity_steps_one_pixel() {
        let o = Object {
            pos: [5.0, 3.0],
            vel: [0.0, 1.0],
            digit: 1,
        };
        for t in 0..10 {
            assert_eq!(o.at(t, [52.0, 52.0]), [5.0, 3.0 + t as f64]);
        }
    }

    #[test]
    fn bounce_table() {
        // step-by-step mirror simulation as the oracle
        let (range, v0, p0) = (10.0, 3.0, 4.0);
        let (mut p, mut v) = (p0, v0);
        for t in 0..20 {
            let (q, u) = reflect(p0, v0, t as f64, range);
            assert_eq!(q, p, "frame {t}");
            if p > 0.0 && p < range {
                assert_eq!(u, v, "frame {t}");
            }
            p += v;
            if p > range {
                p = 2.0 * range - p;
                v = -v;
            } else if p < 0.0 {
                p = -p;
                v = -v;
            }
        }
    }

    #[test]
    fn sprites_stay_inside() {
        let spec = MotionSpec {
            objects: 3,
            sprite: 12,
            speed: [2.0, 5.0],
            seed: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let objs = sample_objects(&spec, &mut rng, 40, 30);
        for o in objs {
            for t in 0..100 {
                let [r, c] = o.at(t, room(12, 40, 30));
                assert!((0.0..=28.0).contains(&r) && (0.0..=18.0).contains(&c));
            }
        }
    }

    #[test]
    fn blob_peak_and_mass() {
        let o = [Object {
            pos: [20.0, 10.0],
            vel: [0.0, 2.0],
            digit: 0,
        }];
        let f = render_blobs(&o, 15, 4, 64, 64);
        let frame0 = &f[..4096];
        let argmax = (0..4096).max_by(|&a, &b| frame0[a].total_cmp(&frame0[b])).unwrap();
        assert_eq!((argmax / 64, argmax % 64), (27, 17));
        assert_eq!(frame0[argmax], 1.0);
        let mass = |k: usize| f[k * 4096..(k + 1) * 4096].iter().map(|&v| v as f64).sum::<f64>();
        for k in 1..4 {
            assert!((mass(k) - mass(0)).abs() < 1e-6 * mass(0));
        }
    }

    #[test]
    fn generation_is_deterministic_and_bounded() {
        let a = gen_bouncing_blobs(&MotionSpec::blobs(3), 3, 4, 32, 32).unwrap();
        let b = gen_bouncing_blobs(&MotionSpec::blobs(3), 3, 4, 32, 32).unwrap();
        assert_eq!(a.frames, b.frames);
        let d = gen_moving_digits(&MotionSpec::digits(3), 3, 4, 32, 32).unwrap();
        for f in [&a, &d] {
            assert!(f.frames.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        let too_big = MotionSpec {
            sprite: 40,
            ..MotionSpec::digits(0)
        };
        assert!(matches!(gen_moving_digits(&too_big, 1, 1, 32, 32), Err(Error::Config(_))));
    }
}
