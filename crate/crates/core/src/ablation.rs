//! Directional ablation: one training recipe, several direction subsets.
//!
//! Every variant of a seed sees the same scenes, the same initial backbone
//! and head weights and the same batch order; only the enabled slice
//! convolutions differ.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{gen_scenes, Sample};
use crate::error::{Error, Result};
use crate::labels::SceneConfig;
use crate::par::Exec;
use crate::rng::Rng;
use crate::slice_conv::Direction;
use crate::training::{train_with, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    /// No slice convolution.
    Baseline,
    /// Top-down and bottom-up.
    V,
    /// Vertical and horizontal pairs.
    VH,
    /// All eight directions.
    Msc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Baseline, Variant::V, Variant::VH, Variant::Msc];

    pub fn directions(self) -> Vec<Direction> {
        let n = match self {
            Variant::Baseline => 0,
            Variant::V => 2,
            Variant::VH => 4,
            Variant::Msc => 8,
        };
        Direction::ALL[..n].to_vec()
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "Baseline",
            Variant::V => "SANet_V",
            Variant::VH => "SANet_VH",
            Variant::Msc => "SANet_MSC",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AblationConfig {
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub scene: SceneConfig,
    /// Seeds the scenes, the initial weights and the batch order.
    pub seeds: Vec<u64>,
    /// Recipe shared by all variants; `directions` and `seed` are overridden.
    pub train: TrainConfig,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            train_scenes: 200,
            test_scenes: 50,
            scene: SceneConfig::default(),
            seeds: vec![0, 1, 2],
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub mean_iou: f64,
    pub mean_f1: f64,
    pub final_loss: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct AblationReport {
    pub runs: Vec<RunResult>,
}

impl AblationReport {
    /// Mean test IoU of `variant` over its seeds.
    pub fn mean_iou(&self, variant: Variant) -> Option<f64> {
        let v: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| r.mean_iou)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn summary(&self) -> BTreeMap<&'static str, f64> {
        Variant::ALL
            .iter()
            .filter_map(|&v| self.mean_iou(v).map(|m| (v.name(), m)))
            .collect()
    }
}

/// Train and test sets for one seed.
pub fn seed_data(
    cfg: &AblationConfig,
    seed: u64,
    exec: Exec,
) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let to_samples = |count, stream| -> Result<Vec<Sample>> {
        let scenes = gen_scenes(
            &cfg.scene,
            count,
            Rng::derive(seed, stream).next_u64(),
            exec,
        )?;
        Ok(scenes.iter().map(Sample::from_scene).collect())
    };
    Ok((
        to_samples(cfg.train_scenes, 0xab1)?,
        to_samples(cfg.test_scenes, 0xab2)?,
    ))
}

/// Trains every variant for every seed and scores the final model on the
/// held-out scenes. `progress` sees each run as it finishes.
pub fn run_ablation(
    cfg: &AblationConfig,
    variants: &[Variant],
    exec: Exec,
    mut progress: impl FnMut(&RunResult),
) -> Result<AblationReport> {
    if cfg.seeds.is_empty() || variants.is_empty() {
        return Err(Error::Config(
            "ablation needs at least one seed and one variant".into(),
        ));
    }
    let mut report = AblationReport::default();
    for &seed in &cfg.seeds {
        let (train_set, test_set) = seed_data(cfg, seed, exec)?;
        for &variant in variants {
            let tc = TrainConfig {
                seed,
                directions: variant.directions(),
                eval_interval: 0,
                ..cfg.train.clone()
            };
            let start = Instant::now();
            let out = train_with(&tc, &train_set, &test_set, exec, |_| Ok(()))?;
            let run = RunResult {
                variant,
                seed,
                mean_iou: out.best_report.mean_iou,
                mean_f1: out.best_report.mean_f1,
                final_loss: out.log.last().map_or(f64::NAN, |r| r.loss),
                seconds: start.elapsed().as_secs_f64(),
            };
            progress(&run);
            report.runs.push(run);
        }
    }
    Ok(report)
}
