//! Images, dataset manifests, the synthetic texture dataset, spectral
//! texture classification and seeded batch sampling.

mod image;
mod manifest;
mod spectrum;
mod synth;

pub use image::{denormalize_image, load_image, normalize_image, read_png, save_image, write_png, RawImage};
pub use manifest::{load_manifest, AgeGroup, Manifest, ManifestEntry, Role};
pub use spectrum::{signed_frequency, texture_feature, NearestCentroid, Periodogram, MIN_TEXTURE_RADIUS};
pub use synth::{sample_seed, synth_sample, SynthConfig, SynthPool, SynthProfile, SYNTH_NOISE};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::losses::{QMode, StepBatch};
use crate::networks::Occupation;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// `(1, 3, H, W)` in `[-1, 1]`.
    pub image: Tensor,
    pub role: Role,
    pub occupation: Option<Occupation>,
    pub age_group: Option<AgeGroup>,
    pub source: String,
}

/// Training pools held in memory: young faces and, per occupation, aged faces.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub occupations: Vec<String>,
    pub young: Vec<Tensor>,
    /// Indexed by occupation channel.
    pub aged: Vec<Vec<Tensor>>,
}

impl Dataset {
    /// Loads every young entry and the occupational entries of `age`.
    pub fn from_manifest(manifest: &Manifest, age: AgeGroup, image_size: usize) -> Result<Self> {
        let count = manifest.occupation_count();
        let mut young = Vec::new();
        let mut aged = vec![Vec::new(); count];
        for entry in &manifest.entries {
            let wanted = match entry.role {
                Role::Young => true,
                Role::Occupational => entry.age == Some(age),
            };
            if !wanted {
                continue;
            }
            let path = manifest.resolve(entry);
            let image = load_image(&path)?;
            let s = image.shape();
            if s.h != image_size || s.w != image_size {
                return Err(Error::Format(format!(
                    "{} is {}x{}, expected {image_size}x{image_size}",
                    path.display(),
                    s.w,
                    s.h
                )));
            }
            match &entry.occupation {
                None => young.push(image),
                Some(name) => {
                    let p = manifest
                        .occupation_index(name)
                        .ok_or_else(|| Error::Domain(format!("unknown occupation {name:?}")))?;
                    aged[p.channel()].push(image);
                }
            }
        }
        let data = Dataset {
            occupations: manifest.occupations.clone(),
            young,
            aged,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn from_synth(cfg: &SynthConfig) -> Result<Self> {
        let young = cfg.young_samples()?.into_iter().map(|s| s.image).collect();
        let aged = Occupation::all(cfg.occupations)
            .map(|p| Ok(cfg.aged_samples(p)?.into_iter().map(|s| s.image).collect()))
            .collect::<Result<Vec<_>>>()?;
        let data = Dataset {
            occupations: cfg.occupation_names(),
            young,
            aged,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn occupation_count(&self) -> usize {
        self.aged.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.young.is_empty() {
            return Err(Error::Domain("young pool is empty".into()));
        }
        if self.aged.len() < 2 {
            return Err(Error::Domain(format!(
                "need at least two occupations, got {}",
                self.aged.len()
            )));
        }
        for (i, pool) in self.aged.iter().enumerate() {
            if pool.is_empty() {
                let name = self.occupations.get(i).map_or("?", String::as_str);
                return Err(Error::Domain(format!("occupational pool {} ({name}) is empty", i + 1)));
            }
        }
        Ok(())
    }
}

const EPOCH_STREAM: u64 = 1 << 62;
const STEP_STREAM: u64 = 1 << 61;

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded batch stream. Every draw depends only on `(seed, epoch)` or
/// `(seed, step)`, so any batch can be rebuilt without replaying the
/// stream, which is what makes resumed training bit-exact.
#[derive(Clone, Debug)]
pub struct BatchSampler<'a> {
    data: &'a Dataset,
    batch_size: usize,
    seed: u64,
    q_mode: QMode,
}

/// Seeded shuffled stream of [`StepBatch`]es over `data`.
pub fn batch_iterator(data: &Dataset, batch_size: usize, seed: u64, q_mode: QMode) -> Result<BatchSampler<'_>> {
    data.validate()?;
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    Ok(BatchSampler {
        data,
        batch_size,
        seed,
        q_mode,
    })
}

impl BatchSampler<'_> {
    /// One epoch is one pass over the young pool; the last batch may be short.
    pub fn steps_per_epoch(&self) -> usize {
        self.data.young.len().div_ceil(self.batch_size)
    }

    /// Order in which epoch `epoch` (0-based) visits the young pool.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.young.len()).collect();
        order.shuffle(&mut stream_rng(self.seed, EPOCH_STREAM | epoch as u64));
        order
    }

    pub fn batch(&self, epoch: usize, index: usize) -> Result<StepBatch> {
        let steps = self.steps_per_epoch();
        if index >= steps {
            return Err(Error::Domain(format!("batch {index} outside an epoch of {steps}")));
        }
        let order = self.epoch_order(epoch);
        let end = ((index + 1) * self.batch_size).min(order.len());
        let picked: Vec<Tensor> = order[index * self.batch_size..end]
            .iter()
            .map(|&i| self.data.young[i].clone())
            .collect();
        let young = Tensor::stack(&picked)?;

        let step = (epoch * steps + index) as u64;
        let mut rng = stream_rng(self.seed, STEP_STREAM | step);
        let real = self
            .data
            .aged
            .iter()
            .map(|pool| {
                let picked: Vec<Tensor> = (0..picked.len())
                    .map(|_| pool[rng.random_range(0..pool.len())].clone())
                    .collect();
                Tensor::stack(&picked)
            })
            .collect::<Result<Vec<_>>>()?;

        let count = self.data.occupation_count();
        let occupations: Vec<Occupation> = Occupation::all(count).collect();
        let wrong = occupations
            .iter()
            .map(|&p| {
                let others: Vec<Occupation> = Occupation::all(count).filter(|&q| q != p).collect();
                match self.q_mode {
                    QMode::SampleOne => vec![*others.choose(&mut rng).expect("at least two occupations")],
                    QMode::SumAll => others,
                }
            })
            .collect();
        Ok(StepBatch {
            young,
            real,
            occupations,
            wrong,
        })
    }

    pub fn epoch(&self, epoch: usize) -> impl Iterator<Item = Result<StepBatch>> + '_ {
        (0..self.steps_per_epoch()).map(move |i| self.batch(epoch, i))
    }
}
