//! End-to-end harness: reference-aligned frames for map building and the
//! paired uniform-vs-support-guided refinement runs.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{self, VariantComparison};
use crate::geometry::{pose_error, CameraIntrinsics, Pose, PoseError};
use crate::refine::{
    self, objective_weights, refine_uniform_baseline, sgis_sample, support_distribution,
    RefineOptions, RefineResult, SamplingPlan, SupportWeighting,
};
use crate::scene_sim::{
    generate_scene, oracle_residuals, perturb_pose, ClassSpec, Correspondence, PerturbationSpec,
    Scene, SceneSpec,
};
use crate::seed::{self, Stream};
use crate::support_map::{SupportMap, SupportMapParams};
use crate::{Error, Result};

/// Default cap on the number of sampled correspondences per refinement.
pub const DEFAULT_SAMPLE_CAP: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Correspondences drawn per refinement; `None` means `min(n, 2000)`.
    pub k: Option<usize>,
    pub with_replacement: bool,
    pub weighting: SupportWeighting,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            k: None,
            with_replacement: false,
            weighting: SupportWeighting::Support,
        }
    }
}

fn default_runs() -> usize {
    10
}

fn default_frames() -> usize {
    20
}

/// Everything needed to reproduce an experiment, seeds included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_runs")]
    pub n_runs: usize,
    /// Reference-aligned frames accumulated into the support map.
    #[serde(default = "default_frames")]
    pub n_frames: usize,
    pub camera: CameraIntrinsics,
    /// Reference LiDAR-to-camera extrinsics.
    pub reference: Pose,
    /// Initial-error magnitudes; per-run seeds are derived from `seed`.
    pub perturbation: PerturbationSpec,
    #[serde(default)]
    pub support_map: SupportMapParams,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub refine: RefineOptions,
    pub classes: Vec<ClassSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.scene_spec().validate()?;
        self.support_map.validate()?;
        self.refine.validate()?;
        if self.n_runs == 0 {
            return Err(Error::Config("n_runs must be >= 1".into()));
        }
        if self.sampling.k == Some(0) {
            return Err(Error::Config("sampling.k must be >= 1".into()));
        }
        let p = &self.perturbation;
        if !(p.translation_magnitude >= 0.0 && p.rotation_magnitude >= 0.0 && p.rotation_magnitude < 180.0) {
            return Err(Error::Config("perturbation magnitudes must be >= 0 (rotation < 180 deg)".into()));
        }
        Ok(())
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            intrinsics: self.camera,
            reference_extrinsics: self.reference,
            classes: self.classes.clone(),
        }
    }
}

/// One reference-aligned observation: the scene drawn for frame `t` and its residuals.
#[derive(Debug, Clone)]
pub struct Frame {
    pub scene: Scene,
    pub correspondences: Vec<Correspondence>,
}

/// Frames observed under the reference extrinsics, as used to build the support map.
pub fn simulate_reference_frames(cfg: &ExperimentConfig) -> Result<Vec<Frame>> {
    let spec = cfg.scene_spec();
    (0..cfg.n_frames as u64)
        .into_par_iter()
        .map(|t| {
            let scene = generate_scene(&spec, seed::derive(cfg.seed, Stream::FrameScene, t))?;
            let correspondences = oracle_residuals(
                &scene,
                &scene.reference_extrinsics,
                seed::derive(cfg.seed, Stream::FrameOracle, t),
            )?;
            Ok(Frame {
                scene,
                correspondences,
            })
        })
        .collect()
}

/// Accumulates the reference-aligned frames into a normalized support map.
pub fn build_reference_map(cfg: &ExperimentConfig) -> Result<SupportMap> {
    let frames = simulate_reference_frames(cfg)?;
    let corrs: Vec<Vec<Correspondence>> = frames.into_iter().map(|f| f.correspondences).collect();
    let mut map = crate::support_map::build_from_frames(
        &corrs,
        cfg.camera.width,
        cfg.camera.height,
        cfg.support_map,
    )?;
    map.normalize()?;
    Ok(map)
}

/// Outcome of one paired run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run: usize,
    pub initial_error: PoseError,
    pub correspondences: usize,
    pub uniform: RefineResult,
    pub sgis: RefineResult,
    pub uniform_error: PoseError,
    pub sgis_error: PoseError,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    /// Uniform sampling as variant `a`, support-guided sampling as variant `b`.
    pub comparison: VariantComparison,
}

fn run_once(cfg: &ExperimentConfig, map: &SupportMap, r: usize) -> Result<RunRecord> {
    let idx = r as u64;
    let spec = cfg.scene_spec();
    let scene = generate_scene(&spec, seed::derive(cfg.seed, Stream::RunScene, idx))?;
    let reference = scene.reference_extrinsics;
    let perturbation = PerturbationSpec {
        seed: seed::derive(cfg.seed, Stream::RunPerturbation, idx),
        ..cfg.perturbation
    };
    let initial = perturb_pose(&reference, &perturbation)?;
    let corrs = oracle_residuals(&scene, &initial, seed::derive(cfg.seed, Stream::RunOracle, idx))?;
    let k = cfg
        .sampling
        .k
        .unwrap_or(DEFAULT_SAMPLE_CAP)
        .min(corrs.len());

    let uniform = refine_uniform_baseline(
        &initial,
        &corrs,
        &scene.intrinsics,
        k,
        seed::derive(cfg.seed, Stream::RunUniformSample, idx),
        &cfg.refine,
    )?;

    let supports = corrs
        .iter()
        .map(|c| map.lookup(&c.u))
        .collect::<std::result::Result<Vec<f64>, _>>()?;
    let p = support_distribution(&supports)?;
    let nonzero = p.iter().filter(|x| **x > 0.0).count();
    let plan = SamplingPlan {
        k: if cfg.sampling.with_replacement { k } else { k.min(nonzero) },
        with_replacement: cfg.sampling.with_replacement,
        seed: seed::derive(cfg.seed, Stream::RunSupportSample, idx),
    };
    let sampled = sgis_sample(&p, &plan)?;
    let weights = objective_weights(&supports, cfg.sampling.weighting)?;
    let sgis = refine::refine_pose(&initial, &corrs, &weights, &scene.intrinsics, &sampled, &cfg.refine)?;

    Ok(RunRecord {
        run: r,
        initial_error: pose_error(&initial, &reference),
        correspondences: corrs.len(),
        uniform_error: pose_error(&uniform.refined, &reference),
        sgis_error: pose_error(&sgis.refined, &reference),
        uniform,
        sgis,
    })
}

/// Runs `cfg.n_runs` paired refinements against `map` and compares the variants.
///
/// Run `r` draws its scene, perturbation, residuals and both samples from seeds
/// derived from `(cfg.seed, r)`; both variants see the same correspondences.
pub fn run_experiment(cfg: &ExperimentConfig, map: &SupportMap) -> Result<ExperimentReport> {
    cfg.validate()?;
    if !map.is_normalized() {
        return Err(crate::support_map::SupportMapError::NotNormalized.into());
    }
    let runs: Vec<RunRecord> = (0..cfg.n_runs)
        .into_par_iter()
        .map(|r| run_once(cfg, map, r))
        .collect::<Result<_>>()?;
    let uniform: Vec<PoseError> = runs.iter().map(|r| r.uniform_error).collect();
    let sgis: Vec<PoseError> = runs.iter().map(|r| r.sgis_error).collect();
    let comparison = analysis::compare_variants(&uniform, &sgis)?;
    Ok(ExperimentReport { runs, comparison })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene_sim::{Extent, SemanticClass};
    use nalgebra::{Matrix3, Vector3};

    fn config(sigma: f64, translation: f64, rotation: f64) -> ExperimentConfig {
        let r = Matrix3::new(0.0, -1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 0.0, 0.0);
        ExperimentConfig {
            seed: 5,
            n_runs: 3,
            n_frames: 4,
            camera: CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap(),
            reference: Pose::new(r, Vector3::new(0.05, -0.1, 0.02)).unwrap(),
            perturbation: PerturbationSpec { translation_magnitude: translation, rotation_magnitude: rotation, seed: 0 },
            support_map: SupportMapParams::default(),
            sampling: SamplingConfig::default(),
            refine: RefineOptions::default(),
            classes: vec![ClassSpec {
                class: SemanticClass::new(0, "wall", sigma),
                count: 400,
                extent: Extent::Box { min: [6.0, -8.0, -2.0], max: [20.0, 8.0, 4.0] },
            }],
            output_dir: None,
        }
    }

    #[test]
    fn zero_noise_zero_perturbation_ties() {
        let cfg = config(0.0, 0.0, 0.0);
        let map = build_reference_map(&cfg).unwrap();
        let report = run_experiment(&cfg, &map).unwrap();
        for r in &report.runs {
            assert_eq!(r.uniform_error, PoseError::default());
            assert_eq!(r.sgis_error, PoseError::default());
        }
        assert_eq!(report.comparison.wins_a.translation + report.comparison.wins_b.translation, 0);
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = config(1.0, 0.1, 2.0);
        let map = build_reference_map(&cfg).unwrap();
        assert_eq!(map, build_reference_map(&cfg).unwrap());
        let a = run_experiment(&cfg, &map).unwrap();
        let b = run_experiment(&cfg, &map).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn config_toml_round_trip() {
        let cfg = config(1.0, 0.2, 5.0);
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let mut bad = cfg.clone();
        bad.n_runs = 0;
        assert!(matches!(ExperimentConfig::from_toml(&bad.to_toml()), Err(Error::Config(_))));
    }
}
