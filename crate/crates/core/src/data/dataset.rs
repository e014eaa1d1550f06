//! Train/eval patch splits drawn from disjoint sets of synthetic scenes.
//!
//! Candidate patches from every scene form a [`PatchPool`]; rotated copies are
//! referenced by index and only rendered once selected, so the 37× augmented
//! pool never has to be held in memory.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    generate_scene, rotate_raster, sample_background_patches, sample_contour_patches, DataError, LabeledRaster, Patch,
    PatchClass, SamplerConfig, SceneSpec,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub train_scenes: usize,
    pub eval_scenes: usize,
    pub n_train: usize,
    pub n_eval: usize,
    /// Share of selected patches drawn from the contour pool.
    pub contour_share: f64,
    /// Include rotated copies of training patches in the pool.
    pub augment: bool,
    /// Scene template; each scene gets its own derived seed.
    pub scene: SceneSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train_scenes: 6,
            eval_scenes: 3,
            n_train: 200,
            n_eval: 50,
            contour_share: 0.5,
            augment: true,
            scene: SceneSpec::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        if !(0.0..=1.0).contains(&self.contour_share) {
            return Err(DataError::Config(format!("contour share {} outside [0, 1]", self.contour_share)));
        }
        self.scene.validate()
    }

    /// Named scene specs for one split. Train and eval seeds never collide.
    pub fn scene_specs(&self, split: Split, seed: u64) -> Vec<(String, SceneSpec)> {
        let (count, stream) = match split {
            Split::Train => (self.train_scenes, 0),
            Split::Eval => (self.eval_scenes, 1),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        (0..count)
            .map(|i| {
                let spec = SceneSpec { seed: rng.random(), ..self.scene.clone() };
                (format!("{}_scene_{i:03}", split.as_str()), spec)
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
        }
    }
}

/// A pool entry: an unrotated base patch plus an optional rotation index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PatchRef {
    pub base: usize,
    /// Index into the rotation set; `None` is the original orientation.
    pub rotation: Option<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct PatchPool {
    pub base: Vec<Patch>,
    pub rotation_set: Vec<f64>,
}

impl PatchPool {
    pub fn new(base: Vec<Patch>, rotation_set: Vec<f64>) -> Self {
        Self { base, rotation_set }
    }

    /// Every entry of the given class, originals first per base patch.
    pub fn refs(&self, class: PatchClass) -> Vec<PatchRef> {
        self.base
            .iter()
            .enumerate()
            .filter(|(_, p)| p.class == class)
            .flat_map(|(i, _)| {
                std::iter::once(PatchRef { base: i, rotation: None })
                    .chain((0..self.rotation_set.len()).map(move |r| PatchRef { base: i, rotation: Some(r) }))
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.base.len() * (self.rotation_set.len() + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn materialize(&self, r: PatchRef) -> Result<Patch, DataError> {
        let base = &self.base[r.base];
        match r.rotation {
            None => Ok(base.clone()),
            Some(k) => {
                let deg = self.rotation_set[k];
                Ok(Patch { rotation_deg: deg, raster: rotate_raster(&base.raster, deg)?, ..base.clone() })
            }
        }
    }
}

/// Draws `n` entries: `round(n·contour_share)` contour, the rest background.
///
/// Each class is shuffled and taken without replacement; if a class runs out
/// its shuffled list is cycled, and an empty class is replaced by the other.
pub fn select_patches(pool: &PatchPool, n: usize, contour_share: f64, rng: &mut impl Rng) -> Vec<PatchRef> {
    let mut contour = pool.refs(PatchClass::Contour);
    let mut background = pool.refs(PatchClass::Background);
    contour.shuffle(rng);
    background.shuffle(rng);
    let mut n_contour = (n as f64 * contour_share).round() as usize;
    if contour.is_empty() {
        n_contour = 0;
    } else if background.is_empty() {
        n_contour = n;
    }
    let take = |list: &[PatchRef], k: usize| list.iter().cycle().take(k).copied().collect::<Vec<_>>();
    let mut out = take(&contour, n_contour);
    out.extend(take(&background, n - n_contour));
    out.shuffle(rng);
    out
}

/// Contour and background patches of one scene, without augmentation.
pub fn scene_patches(raster: &LabeledRaster, sampler: &SamplerConfig, scene: &str) -> Result<Vec<Patch>, DataError> {
    let mut patches = sample_contour_patches(raster, sampler, scene)?;
    patches.extend(sample_background_patches(raster, sampler, scene)?);
    Ok(patches)
}

#[derive(Debug, Clone, Default)]
pub struct PatchSplit {
    pub train: Vec<Patch>,
    pub eval: Vec<Patch>,
    pub train_scenes: Vec<(String, LabeledRaster)>,
    /// Whole eval scenes, for sliding-window evaluation.
    pub eval_scenes: Vec<(String, LabeledRaster)>,
}

fn split_pool(
    config: &DatasetConfig,
    sampler: &SamplerConfig,
    split: Split,
    seed: u64,
) -> Result<(PatchPool, Vec<(String, LabeledRaster)>), DataError> {
    let mut base = Vec::new();
    let mut scenes = Vec::new();
    for (name, spec) in config.scene_specs(split, seed) {
        let raster = generate_scene(&spec)?;
        base.extend(scene_patches(&raster, sampler, &name)?);
        scenes.push((name, raster));
    }
    let rotations = if split == Split::Train && config.augment { sampler.rotation_set.clone() } else { Vec::new() };
    Ok((PatchPool::new(base, rotations), scenes))
}

/// Generates scenes, samples both pools and selects `n_train` / `n_eval`
/// patches. Deterministic in `(config, sampler, seed)`.
pub fn build_patch_split(config: &DatasetConfig, sampler: &SamplerConfig, seed: u64) -> Result<PatchSplit, DataError> {
    config.validate()?;
    sampler.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let (train_pool, train_scenes) = split_pool(config, sampler, Split::Train, seed)?;
    let (eval_pool, eval_scenes) = split_pool(config, sampler, Split::Eval, seed)?;
    let pick = |pool: &PatchPool, n: usize, rng: &mut ChaCha8Rng| -> Result<Vec<Patch>, DataError> {
        // no scenes (or no usable windows) simply yields an empty split
        if pool.is_empty() {
            return Ok(Vec::new());
        }
        select_patches(pool, n, config.contour_share, rng).into_iter().map(|r| pool.materialize(r)).collect()
    };
    let train = pick(&train_pool, config.n_train, &mut rng)?;
    let eval = pick(&eval_pool, config.n_eval, &mut rng)?;
    Ok(PatchSplit { train, eval, train_scenes, eval_scenes })
}
