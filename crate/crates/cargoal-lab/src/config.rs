//! The experiment file format: one JSON document drives every pipeline
//! stage. The config carries a single mandatory global seed; each stage
//! derives its own stream from it with fixed tags, so a config file plus a
//! seed fully determines every artifact byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{EnvParams, Task};
use crate::math::rng::derive_seed;
use crate::optim::{CemConfig, SgdConfig};
use crate::pipeline::{AdaptMethod, AdaptSpec, PolicyArch, PretrainSpec};
use crate::policy::ActMode;
use crate::{Error, Result};

// Stage tags for seed derivation.
pub const STAGE_PRETRAIN: u64 = 1;
pub const STAGE_COLLECT: u64 = 2;
pub const STAGE_ADAPT: u64 = 3;
pub const STAGE_EVAL: u64 = 4;
pub const STAGE_SWEEP: u64 = 5;

/// CEM settings as stored in config files; the seed is derived from the
/// experiment seed, never stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemSettings {
    pub population: usize,
    pub elite_frac: f64,
    pub iterations: usize,
    pub init_std: f64,
    pub std_floor: f64,
}

impl CemSettings {
    pub fn with_seed(&self, seed: u64) -> CemConfig {
        CemConfig {
            population: self.population,
            elite_frac: self.elite_frac,
            iterations: self.iterations,
            init_std: self.init_std,
            std_floor: self.std_floor,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdSettings {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl SgdSettings {
    pub fn with_seed(&self, seed: u64) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            check_gradient: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainSettings {
    pub hidden: Vec<usize>,
    pub log_std: f64,
    pub cem: CemSettings,
    pub episodes_per_eval: usize,
    pub train_horizon: u32,
    pub gate_episodes: usize,
    pub gate_success: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptSettings {
    pub method: String,
    pub demo_budget: usize,
    pub alpha: f64,
    pub epsilon: f64,
    pub cem: CemSettings,
    pub sgd: SgdSettings,
    pub w_net_hidden: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub n_episodes: usize,
    /// "mean" or "sample".
    pub mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    /// "epsilon", "alpha", or "demo_budget".
    pub axis: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Global seed; every stage stream derives from it.
    pub seed: u64,
    pub env: EnvParams,
    pub base_tasks: Vec<Task>,
    pub target_task: Task,
    pub pretrain: PretrainSettings,
    pub adapt: AdaptSettings,
    pub eval: EvalSettings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSettings>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("cannot parse config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for task in self.base_tasks.iter().chain(std::iter::once(&self.target_task)) {
            task.validate(&self.env)?;
        }
        if self.base_tasks.is_empty() {
            return Err(Error::Config("config needs at least one base task".into()));
        }
        self.adapt.method.parse::<AdaptMethod>()?;
        self.eval.mode.parse::<ActMode>()?;
        if let Some(sweep) = &self.sweep {
            sweep.axis.parse::<crate::eval::SweepAxis>()?;
            if sweep.values.is_empty() {
                return Err(Error::Config("sweep needs at least one grid value".into()));
            }
        }
        if self.eval.n_episodes == 0 {
            return Err(Error::Config("eval n_episodes must be >= 1".into()));
        }
        Ok(())
    }

    /// Short content hash of the serialized config, embedded in artifact
    /// names and reports for provenance.
    pub fn config_hash(&self) -> String {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Pre-training spec for one base task, with its derived CEM stream.
    pub fn pretrain_spec(&self, task_index: usize) -> PretrainSpec {
        let stage = derive_seed(self.seed, STAGE_PRETRAIN);
        PretrainSpec {
            base_tasks: self.base_tasks.clone(),
            arch: PolicyArch {
                hidden: self.pretrain.hidden.clone(),
            },
            log_std: self.pretrain.log_std,
            cem: self.pretrain.cem.with_seed(derive_seed(stage, task_index as u64)),
            episodes_per_eval: self.pretrain.episodes_per_eval,
            train_horizon: self.pretrain.train_horizon,
            gate_episodes: self.pretrain.gate_episodes,
            gate_success: self.pretrain.gate_success,
        }
    }

    pub fn collect_seed(&self) -> u64 {
        derive_seed(self.seed, STAGE_COLLECT)
    }

    pub fn adapt_spec(&self) -> Result<AdaptSpec> {
        let stage = derive_seed(self.seed, STAGE_ADAPT);
        Ok(AdaptSpec {
            method: self.adapt.method.parse()?,
            target_task_id: self.target_task.task_id.clone(),
            demo_budget: self.adapt.demo_budget,
            alpha: self.adapt.alpha,
            epsilon: self.adapt.epsilon,
            cem: self.adapt.cem.with_seed(derive_seed(stage, 0)),
            sgd: self.adapt.sgd.with_seed(derive_seed(stage, 1)),
            w_net_hidden: self.adapt.w_net_hidden.clone(),
        })
    }

    pub fn eval_options(&self) -> Result<crate::eval::EvalOptions> {
        Ok(crate::eval::EvalOptions {
            n_episodes: self.eval.n_episodes,
            seed: derive_seed(self.seed, STAGE_EVAL),
            mode: self.eval.mode.parse()?,
            horizon: self.eval.horizon,
        })
    }

    pub fn sweep_eval_options(&self) -> Result<crate::eval::EvalOptions> {
        let mut opts = self.eval_options()?;
        opts.seed = derive_seed(self.seed, STAGE_SWEEP);
        Ok(opts)
    }

    /// The stock experiment: three base goals on a 6 m circle at 0, 120 and
    /// 240 degrees, and a target goal outside their convex hull at 60
    /// degrees, 8 m out. Optimizer sizes are chosen so the whole pipeline
    /// runs in minutes on a laptop.
    pub fn default_experiment() -> Self {
        let base_angles = [0.0f64, 120.0, 240.0];
        let base_tasks = base_angles
            .iter()
            .enumerate()
            .map(|(i, deg)| {
                let rad = deg.to_radians();
                Task::new(
                    format!("base{i}"),
                    [6.0 * rad.cos(), 6.0 * rad.sin()],
                    1.0,
                )
            })
            .collect();
        let target_rad = 60.0f64.to_radians();
        Self {
            seed: 7,
            env: EnvParams::default(),
            base_tasks,
            target_task: Task::new(
                "target",
                [8.0 * target_rad.cos(), 8.0 * target_rad.sin()],
                1.0,
            ),
            pretrain: PretrainSettings {
                hidden: vec![32, 32],
                log_std: -1.0,
                cem: CemSettings {
                    population: 64,
                    elite_frac: 0.125,
                    iterations: 60,
                    init_std: 0.2,
                    std_floor: 1e-3,
                },
                episodes_per_eval: 8,
                train_horizon: 300,
                gate_episodes: 100,
                gate_success: 0.9,
            },
            adapt: AdaptSettings {
                method: "obs_align".into(),
                demo_budget: 2000,
                alpha: 0.9,
                epsilon: 0.1,
                cem: CemSettings {
                    population: 64,
                    elite_frac: 0.125,
                    iterations: 60,
                    init_std: 0.5,
                    std_floor: 1e-3,
                },
                sgd: SgdSettings {
                    learning_rate: 1e-2,
                    batch_size: 64,
                    epochs: 200,
                },
                w_net_hidden: vec![32, 32],
            },
            eval: EvalSettings {
                n_episodes: 100,
                mode: "mean".into(),
                horizon: None,
            },
            sweep: Some(SweepSettings {
                axis: "epsilon".into(),
                values: vec![0.0, 0.05, 0.1, 0.2],
            }),
        }
    }
}
