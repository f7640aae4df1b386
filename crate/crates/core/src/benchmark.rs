//! Desk-scale denoising benchmark: moving-bar scenes with background
//! activity, a tiny model trained on one set of scenes and scored on another
//! against the classical filters.

use crate::baselines::{classical_score, FilterParams, Method};
use crate::denoise::{model_scores, DEFAULT_SEGMENT_LEN};
use crate::error::{Error, Result};
use crate::metrics::auc;
use crate::net::{ModelConfig, ModelWeights};
use crate::synth::{make_dataset, Dataset, DatasetOptions, NoiseConfig, SceneConfig, SceneData};
use crate::train::{train_on, EpochStats, TrainConfig};

/// Offset between training and held-out scene seeds.
const TEST_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct DeskBenchmark {
    pub scene: SceneConfig,
    pub noise: NoiseConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub segment_len: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub seed: u64,
}

impl Default for DeskBenchmark {
    fn default() -> Self {
        DeskBenchmark::desk()
    }
}

impl DeskBenchmark {
    /// One sharp-edged bar per 64x64, 0.5 s scene at 5 Hz/pixel background
    /// activity; tiny model with centered coordinates in units of 1/32 of
    /// the sensor.
    pub fn desk() -> Self {
        DeskBenchmark {
            scene: SceneConfig {
                random_bars: 1,
                edge: 0.1,
                contrast_range: (0.8, 1.2),
                ..SceneConfig::default()
            },
            noise: NoiseConfig::default(),
            model: ModelConfig {
                coord_scale: 32.0,
                coord_center: true,
                ..ModelConfig::tiny()
            },
            train: TrainConfig {
                lr: 3e-3,
                batch_size: 1,
                epochs: 10,
                seed: 1,
                ..TrainConfig::default()
            },
            segment_len: DEFAULT_SEGMENT_LEN,
            train_scenes: 16,
            test_scenes: 4,
            seed: 1,
        }
    }

    fn options(&self) -> DatasetOptions {
        DatasetOptions {
            segment_len: self.segment_len,
            voxel: None,
        }
    }

    pub fn train_set(&self) -> Result<Dataset> {
        make_dataset(
            &self.scene,
            &self.noise,
            self.train_scenes,
            self.seed,
            &self.options(),
        )
    }

    /// Held-out scenes; `noise` lets the same scenes be rendered at another
    /// background rate.
    pub fn test_set(&self, noise: &NoiseConfig) -> Result<Dataset> {
        make_dataset(
            &self.scene,
            noise,
            self.test_scenes,
            self.seed.wrapping_add(TEST_SEED_OFFSET),
            &self.options(),
        )
    }

    /// Trains `model` (usually `self.model` or an ablation of it) from a
    /// seeded initialization. `val` may be empty.
    pub fn fit(
        &self,
        model: &ModelConfig,
        train: &Dataset,
        val: &Dataset,
        on_epoch: Option<&mut dyn FnMut(&EpochStats)>,
    ) -> Result<(ModelWeights, Vec<EpochStats>)> {
        let init = ModelWeights::init(model, self.train.seed)?;
        train_on(
            &train.clouds,
            &val.clouds,
            init,
            model,
            &self.train,
            on_epoch,
        )
    }

    /// Pooled AUC of the model over every event of the given scenes.
    pub fn model_auc(
        &self,
        scenes: &[SceneData],
        w: &ModelWeights,
        model: &ModelConfig,
    ) -> Result<f64> {
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for s in scenes {
            scores.extend(model_scores(&s.stream, w, model, self.segment_len)?);
            labels.extend_from_slice(scene_labels(s)?);
        }
        auc(&scores, &labels)
    }

    /// Pooled AUC of each classical filter over the same events.
    pub fn classical_aucs(&self, scenes: &[SceneData]) -> Result<Vec<(Method, f64)>> {
        [Method::Baf, Method::Dwf, Method::Ts]
            .into_iter()
            .map(|m| {
                let mut scores = Vec::new();
                let mut labels = Vec::new();
                for s in scenes {
                    scores.extend(classical_score(&s.stream, &FilterParams::new(m))?);
                    labels.extend_from_slice(scene_labels(s)?);
                }
                Ok((m, auc(&scores, &labels)?))
            })
            .collect()
    }
}

fn scene_labels(s: &SceneData) -> Result<&[u8]> {
    s.stream
        .labels
        .as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("scene {} has no labels", s.seed)))
}

/// Result of [`run_desk`].
#[derive(Debug, Clone)]
pub struct DeskReport {
    pub model_auc: f64,
    pub classical: Vec<(Method, f64)>,
    pub history: Vec<EpochStats>,
    pub weights: ModelWeights,
}

impl DeskReport {
    pub fn best_classical(&self) -> (Method, f64) {
        self.classical
            .iter()
            .copied()
            .fold((Method::Baf, f64::NEG_INFINITY), |a, b| {
                if b.1 > a.1 {
                    b
                } else {
                    a
                }
            })
    }
}

/// Generates both splits, trains `model` and scores everything on the
/// held-out scenes.
pub fn run_desk(
    bench: &DeskBenchmark,
    model: &ModelConfig,
    on_epoch: Option<&mut dyn FnMut(&EpochStats)>,
) -> Result<DeskReport> {
    let train = bench.train_set()?;
    let test = bench.test_set(&bench.noise)?;
    let empty = Dataset {
        scenes: Vec::new(),
        clouds: Vec::new(),
        cloud_scene: Vec::new(),
    };
    let (weights, history) = bench.fit(model, &train, &empty, on_epoch)?;
    Ok(DeskReport {
        model_auc: bench.model_auc(&test.scenes, &weights, model)?,
        classical: bench.classical_aucs(&test.scenes)?,
        history,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_do_not_share_scenes() {
        let bench = DeskBenchmark {
            scene: SceneConfig {
                duration_s: 0.02,
                ..DeskBenchmark::desk().scene
            },
            train_scenes: 3,
            test_scenes: 3,
            ..DeskBenchmark::desk()
        };
        let tr = bench.train_set().unwrap();
        let te = bench.test_set(&bench.noise).unwrap();
        for a in &tr.scenes {
            assert!(te.scenes.iter().all(|b| b.seed != a.seed));
        }
    }

    #[test]
    fn tiny_run_is_deterministic() {
        let bench = DeskBenchmark {
            scene: SceneConfig {
                width: 16,
                height: 16,
                duration_s: 0.05,
                ..DeskBenchmark::desk().scene
            },
            train: TrainConfig {
                epochs: 1,
                ..DeskBenchmark::desk().train
            },
            segment_len: 256,
            train_scenes: 1,
            test_scenes: 1,
            ..DeskBenchmark::desk()
        };
        let a = run_desk(&bench, &bench.model, None).unwrap();
        let b = run_desk(&bench, &bench.model, None).unwrap();
        assert_eq!(a.model_auc, b.model_auc);
        assert_eq!(a.classical, b.classical);
        assert!((0.0..=1.0).contains(&a.model_auc));
    }
}
