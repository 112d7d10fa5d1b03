//! Procedural stand-in faces: a smooth radial "face" on a flat background
//! plus sensor noise. The aged variant of a face adds an oriented sinusoid
//! whose frequency and orientation identify the occupation, and a tone
//! shift.

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{AgeGroup, Role};
use super::Sample;
use crate::error::{Error, Result};
use crate::networks::Occupation;
use crate::tensor::{Shape, Tensor};

/// Wave vectors of the built-in profiles as integer `(kx, ky)` cycles per
/// image, so each texture falls on one DFT bin.
const WAVE_VECTORS: [(i32, i32); 5] = [(8, 0), (0, 8), (8, 6), (3, 4), (12, 5)];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthProfile {
    pub occupation: Occupation,
    /// Cycles per image width.
    pub frequency: f64,
    /// Degrees counter-clockwise from the x axis (y pointing down the rows).
    pub orientation: f64,
    pub amplitude: f32,
    pub tone_shift: f32,
    /// Radians; fixed per occupation so same-occupation images line up.
    pub phase: f64,
}

impl SynthProfile {
    /// Built-in profile for occupation `p` of `count` (at most five).
    pub fn standard(p: usize, count: usize, amplitude: f32) -> Result<Self> {
        let occupation = Occupation::new(p, count)?;
        if count > WAVE_VECTORS.len() {
            return Err(Error::Config(format!(
                "built-in synthetic profiles cover at most {} occupations, got {count}",
                WAVE_VECTORS.len()
            )));
        }
        let (kx, ky) = WAVE_VECTORS[p - 1];
        let (kx, ky) = (f64::from(kx), f64::from(ky));
        Ok(SynthProfile {
            occupation,
            frequency: kx.hypot(ky),
            orientation: ky.atan2(kx).to_degrees(),
            amplitude,
            tone_shift: -0.1,
            phase: 2.0 * PI * p as f64 / 7.0,
        })
    }

    /// `(kx, ky)` in cycles per image.
    pub fn wave_vector(&self) -> (f64, f64) {
        let theta = self.orientation.to_radians();
        (self.frequency * theta.cos(), self.frequency * theta.sin())
    }

    /// The additive texture alone, one `size x size` plane.
    pub fn grating(&self, size: usize) -> Vec<f32> {
        let (kx, ky) = self.wave_vector();
        let mut out = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                let phase = 2.0 * PI * (kx * x as f64 + ky * y as f64) / size as f64 + self.phase;
                out.push(self.amplitude * phase.sin() as f32);
            }
        }
        out
    }
}

/// Standard deviation of the per-pixel noise of every synthetic face.
pub const SYNTH_NOISE: f32 = 0.03;

const BACKGROUND: f32 = -0.6;
const SKIN: [f32; 3] = [0.15, -0.05, -0.2];

fn young_face(seed: u64, size: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f32;
    let cx = s / 2.0 + rng.random_range(-0.06..0.06) * s;
    let cy = s / 2.0 + rng.random_range(-0.06..0.06) * s;
    let sigma = rng.random_range(0.22..0.3) * s;
    let tone = rng.random_range(-0.1..0.1);
    let noise = Normal::new(0.0, SYNTH_NOISE).expect("valid noise scale");
    let plane = size * size;
    let mut data = vec![0.0f32; 3 * plane];
    for (c, channel) in data.chunks_exact_mut(plane).enumerate() {
        for (i, v) in channel.iter_mut().enumerate() {
            let (x, y) = ((i % size) as f32 + 0.5, (i / size) as f32 + 0.5);
            let r2 = (x - cx).powi(2) + (y - cy).powi(2);
            let face = (-r2 / (2.0 * sigma * sigma)).exp();
            *v = BACKGROUND + (SKIN[c] + tone - BACKGROUND) * face + noise.sample(&mut rng);
        }
    }
    data
}

/// One synthetic face; deterministic in all arguments.
pub fn synth_sample(profile: &SynthProfile, aged: bool, seed: u64, size: usize) -> Result<Sample> {
    if size < 16 || !size.is_power_of_two() {
        return Err(Error::Config(format!("synthetic size must be a power of two >= 16, got {size}")));
    }
    let mut data = young_face(seed, size);
    if aged {
        let grating = profile.grating(size);
        for channel in data.chunks_exact_mut(size * size) {
            for (v, g) in channel.iter_mut().zip(&grating) {
                *v += g + profile.tone_shift;
            }
        }
    }
    data.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    let image = Tensor::new(Shape::new(1, 3, size, size), data)?;
    let (role, occupation, tag) = if aged {
        (Role::Occupational, Some(profile.occupation), "aged")
    } else {
        (Role::Young, None, "young")
    };
    Ok(Sample {
        image,
        role,
        occupation,
        age_group: aged.then_some(AgeGroup::Old),
        source: format!("synth:{tag}:occ{}:seed{seed}", profile.occupation),
    })
}

/// Which pool a synthetic sample seed is drawn for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthPool {
    Young,
    HeldOut,
    Aged(Occupation),
}

/// Per-sample seed, independent across pools and indices.
pub fn sample_seed(base: u64, pool: SynthPool, index: usize) -> u64 {
    let tag: u64 = match pool {
        SynthPool::Young => 1,
        SynthPool::HeldOut => 2,
        SynthPool::Aged(p) => 16 + p.index() as u64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream((tag << 32) | index as u64);
    rng.next_u64()
}

/// Sizes and seed of a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub image_size: usize,
    pub occupations: usize,
    pub young: usize,
    pub aged_per_occupation: usize,
    pub held_out: usize,
    pub amplitude: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 64,
            occupations: 3,
            young: 120,
            aged_per_occupation: 40,
            held_out: 30,
            amplitude: 0.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn profiles(&self) -> Result<Vec<SynthProfile>> {
        (1..=self.occupations)
            .map(|p| SynthProfile::standard(p, self.occupations, self.amplitude))
            .collect()
    }

    fn pool(&self, pool: SynthPool, count: usize) -> Result<Vec<Sample>> {
        let profiles = self.profiles()?;
        let (profile, aged) = match pool {
            SynthPool::Aged(p) => (&profiles[p.channel()], true),
            _ => (&profiles[0], false),
        };
        (0..count)
            .map(|i| synth_sample(profile, aged, sample_seed(self.seed, pool, i), self.image_size))
            .collect()
    }

    pub fn young_samples(&self) -> Result<Vec<Sample>> {
        self.pool(SynthPool::Young, self.young)
    }

    pub fn held_out_samples(&self) -> Result<Vec<Sample>> {
        self.pool(SynthPool::HeldOut, self.held_out)
    }

    pub fn aged_samples(&self, p: Occupation) -> Result<Vec<Sample>> {
        self.pool(SynthPool::Aged(p), self.aged_per_occupation)
    }

    /// Occupation names used when the dataset is written to disk.
    pub fn occupation_names(&self) -> Vec<String> {
        (1..=self.occupations).map(|p| format!("occ{p}")).collect()
    }
}
