//! Base Gaussian-MLP policies and the target policy classes built on top of
//! them: observation alignment, action alignment, action re-alignment on the
//! policy latent, and soft/hard switching over several base policies.
//!
//! Base policies are frozen black boxes during adaptation: every target
//! policy holds them behind `Arc` and only ever reads them.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{Action, ACTION_DIM};
use crate::math::rng::{standard_normal, Rng};
use crate::math::{mlp_forward, softmax, AffineTransform, GaussianHead, MlpParams};
use crate::{Error, Result};

pub const POLICY_FORMAT_VERSION: u32 = 1;
pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Whether a policy acts with its distribution mean or a sample from it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActMode {
    Mean,
    Sample,
}

impl std::str::FromStr for ActMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(ActMode::Mean),
            "sample" => Ok(ActMode::Sample),
            other => Err(Error::Config(format!(
                "unknown act mode {other:?} (expected \"mean\" or \"sample\")"
            ))),
        }
    }
}

/// A Gaussian MLP policy: mean network plus a constant per-dimension
/// log-std. Actions are tanh-squashed into [-1, 1]^2.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasePolicy {
    pub format_version: u32,
    pub body: MlpParams,
    pub log_std: Vec<f64>,
}

impl BasePolicy {
    pub fn new(body: MlpParams, log_std: Vec<f64>) -> Result<Self> {
        if body.out_dim() != ACTION_DIM || log_std.len() != ACTION_DIM {
            return Err(Error::Shape(format!(
                "base policy must output {ACTION_DIM} action dims (mean net outputs {}, log_std has {})",
                body.out_dim(),
                log_std.len()
            )));
        }
        // Reuse the head clamp so serialized policies carry in-range values.
        let head = GaussianHead::new(vec![0.0; ACTION_DIM], log_std)?;
        Ok(Self {
            format_version: POLICY_FORMAT_VERSION,
            body,
            log_std: head.log_std,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.body.in_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.body.latent_dim()
    }

    /// Pre-squash action distribution at an observation.
    pub fn pre_squash_head(&self, obs: &[f64]) -> Result<GaussianHead> {
        let fwd = mlp_forward(&self.body, obs)?;
        GaussianHead::new(fwd.output, self.log_std.clone())
    }

    /// Activation vector entering the final layer of the mean network.
    pub fn latent(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(mlp_forward(&self.body, obs)?.latent().to_vec())
    }

    /// Final layer of the mean network, viewed as an affine map on the
    /// latent. Re-alignment starts from a copy of this.
    pub fn final_layer_transform(&self) -> AffineTransform {
        let last = self.body.layers.last().unwrap();
        AffineTransform::new(last.rows, last.cols, last.weight.clone(), last.bias.clone())
            .expect("final layer is a valid affine map")
    }

    pub fn act(&self, obs: &[f64], mode: ActMode, rng: &mut Rng) -> Result<Action> {
        let head = self.pre_squash_head(obs)?;
        Ok(Action::from_vec(&squash(&head, mode, rng)))
    }

    /// Stable 64-bit digest of the parameters, used for read-only checks and
    /// for deriving per-base optimizer streams that do not depend on list
    /// order.
    pub fn param_hash(&self) -> u64 {
        use sha2::{Digest, Sha256};
        let json = serde_json::to_vec(self).expect("policy serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let policy: BasePolicy = serde_json::from_reader(std::io::BufReader::new(file))?;
        BasePolicy::new(policy.body, policy.log_std)
    }
}

/// tanh(mean) or tanh(mean + std * xi) depending on mode.
fn squash(head: &GaussianHead, mode: ActMode, rng: &mut Rng) -> Vec<f64> {
    head.mean
        .iter()
        .zip(&head.log_std)
        .map(|(&m, &ls)| {
            let u = match mode {
                ActMode::Mean => m,
                ActMode::Sample => m + ls.exp() * standard_normal(rng),
            };
            u.tanh()
        })
        .collect()
}

/// Applies a learned affine map to the observation before the base policy.
#[derive(Clone, Debug)]
pub struct ObsAlignPolicy {
    pub base: Arc<BasePolicy>,
    pub t_obs: AffineTransform,
}

impl ObsAlignPolicy {
    pub fn new(base: Arc<BasePolicy>, t_obs: AffineTransform) -> Result<Self> {
        if t_obs.in_dim != base.obs_dim() || t_obs.out_dim != base.obs_dim() {
            return Err(Error::Shape(format!(
                "obs-align transform must be square {d}x{d}",
                d = base.obs_dim()
            )));
        }
        Ok(Self { base, t_obs })
    }

    pub fn act(&self, obs: &[f64], mode: ActMode, rng: &mut Rng) -> Result<Action> {
        let aligned = self.t_obs.apply(obs)?;
        self.base.act(&aligned, mode, rng)
    }

    /// Pre-squash action distribution: the base head at the aligned
    /// observation.
    pub fn pre_squash_head(&self, obs: &[f64]) -> Result<GaussianHead> {
        self.base.pre_squash_head(&self.t_obs.apply(obs)?)
    }
}

/// Applies a learned affine map to the base policy's pre-squash action.
#[derive(Clone, Debug)]
pub struct ActionAlignPolicy {
    pub base: Arc<BasePolicy>,
    pub t_act: AffineTransform,
}

impl ActionAlignPolicy {
    pub fn new(base: Arc<BasePolicy>, t_act: AffineTransform) -> Result<Self> {
        if t_act.in_dim != ACTION_DIM || t_act.out_dim != ACTION_DIM {
            return Err(Error::Shape(format!(
                "action-align transform must be {ACTION_DIM}x{ACTION_DIM}"
            )));
        }
        Ok(Self { base, t_act })
    }

    /// Draws the base pre-squash action u, transforms it, squashes it.
    /// With the identity transform this reproduces the base policy exactly.
    pub fn act(&self, obs: &[f64], mode: ActMode, rng: &mut Rng) -> Result<Action> {
        let head = self.base.pre_squash_head(obs)?;
        let u: Vec<f64> = match mode {
            ActMode::Mean => head.mean.clone(),
            ActMode::Sample => head
                .mean
                .iter()
                .zip(&head.log_std)
                .map(|(&m, &ls)| m + ls.exp() * standard_normal(rng))
                .collect(),
        };
        let transformed = self.t_act.apply(&u)?;
        Ok(Action::from_vec(
            &transformed.iter().map(|v| v.tanh()).collect::<Vec<_>>(),
        ))
    }

    /// The transformed pre-squash distribution is an exact Gaussian:
    /// mean A mu + b, covariance A diag(sigma^2) A^T (row-major).
    pub fn pre_squash_mean_cov(&self, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let head = self.base.pre_squash_head(obs)?;
        Ok(transformed_gaussian(&self.t_act, &head))
    }
}

/// Mean A mu + b and covariance A diag(sigma^2) A^T of an affinely
/// transformed diagonal Gaussian.
pub fn transformed_gaussian(t: &AffineTransform, head: &GaussianHead) -> (Vec<f64>, Vec<f64>) {
    let mean = t.apply(&head.mean).expect("dims checked at construction");
    let d_out = t.out_dim;
    let d_in = t.in_dim;
    let var: Vec<f64> = head.log_std.iter().map(|ls| (2.0 * ls).exp()).collect();
    let mut cov = vec![0.0; d_out * d_out];
    for i in 0..d_out {
        for j in 0..d_out {
            let mut acc = 0.0;
            for k in 0..d_in {
                acc += t.a[i * d_in + k] * var[k] * t.a[j * d_in + k];
            }
            cov[i * d_out + j] = acc;
        }
    }
    (mean, cov)
}

/// Replaces the base policy's final layer with a learned affine map on the
/// latent encoding.
#[derive(Clone, Debug)]
pub struct ActionReAlignPolicy {
    pub base: Arc<BasePolicy>,
    pub t_latent: AffineTransform,
}

impl ActionReAlignPolicy {
    pub fn new(base: Arc<BasePolicy>, t_latent: AffineTransform) -> Result<Self> {
        if t_latent.in_dim != base.latent_dim() || t_latent.out_dim != ACTION_DIM {
            return Err(Error::Shape(format!(
                "re-align transform must be {ACTION_DIM}x{} (base latent width {})",
                base.latent_dim(),
                base.latent_dim()
            )));
        }
        Ok(Self { base, t_latent })
    }

    pub fn pre_squash_head(&self, obs: &[f64]) -> Result<GaussianHead> {
        let h = self.base.latent(obs)?;
        GaussianHead::new(self.t_latent.apply(&h)?, self.base.log_std.clone())
    }

    pub fn act(&self, obs: &[f64], mode: ActMode, rng: &mut Rng) -> Result<Action> {
        let head = self.pre_squash_head(obs)?;
        Ok(Action::from_vec(&squash(&head, mode, rng)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SwitchMode {
    Soft,
    Hard,
}

/// State-conditioned weighting over base policies. Soft mode mixes base
/// action distributions; hard mode commits to one base per step with
/// hysteresis: the incumbent is kept until some base's weight exceeds the
/// incumbent's by at least epsilon.
#[derive(Clone, Debug)]
pub struct SwitchingPolicy {
    pub bases: Vec<Arc<BasePolicy>>,
    pub w_net: MlpParams,
    pub mode: SwitchMode,
    pub epsilon: f64,
}

/// Per-episode mutable state of a hard-switching policy.
#[derive(Clone, Debug, Default)]
pub struct SwitchState {
    pub current: Option<usize>,
}

impl SwitchingPolicy {
    pub fn new(
        bases: Vec<Arc<BasePolicy>>,
        w_net: MlpParams,
        mode: SwitchMode,
        epsilon: f64,
    ) -> Result<Self> {
        if bases.is_empty() {
            return Err(Error::Config("switching policy needs at least one base".into()));
        }
        if w_net.out_dim() != bases.len() {
            return Err(Error::Shape(format!(
                "w_net outputs {} logits for {} bases",
                w_net.out_dim(),
                bases.len()
            )));
        }
        if !(epsilon >= 0.0) {
            return Err(Error::Config("epsilon must be >= 0".into()));
        }
        Ok(Self {
            bases,
            w_net,
            mode,
            epsilon,
        })
    }

    pub fn weights(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&mlp_forward(&self.w_net, obs)?.output))
    }

    /// Acts for one step. Returns the action, the weights (for logging), and
    /// the base index used this step (hard: the incumbent after the
    /// hysteresis update; soft sample: the sampled component; soft mean:
    /// the argmax, informational only).
    pub fn act(
        &self,
        state: &mut SwitchState,
        obs: &[f64],
        mode: ActMode,
        rng: &mut Rng,
    ) -> Result<(Action, Vec<f64>, usize)> {
        let weights = self.weights(obs)?;
        match self.mode {
            SwitchMode::Hard => {
                let next = hard_select(state.current, &weights, self.epsilon);
                state.current = Some(next);
                let action = self.bases[next].act(obs, mode, rng)?;
                Ok((action, weights, next))
            }
            SwitchMode::Soft => match mode {
                ActMode::Sample => {
                    let idx = sample_categorical(&weights, rng);
                    let action = self.bases[idx].act(obs, ActMode::Sample, rng)?;
                    Ok((action, weights, idx))
                }
                ActMode::Mean => {
                    let mut mixed = vec![0.0; ACTION_DIM];
                    for (w, base) in weights.iter().zip(&self.bases) {
                        let a = base.act(obs, ActMode::Mean, rng)?;
                        for (m, v) in mixed.iter_mut().zip(a.as_array()) {
                            *m += w * v;
                        }
                    }
                    Ok((Action::from_vec(&mixed), weights.clone(), argmax(&weights)))
                }
            },
        }
    }
}

/// Hysteresis selection rule. `current = None` (episode start) selects the
/// argmax. Otherwise the incumbent is kept unless some base's weight is at
/// least `epsilon` larger, in which case the argmax takes over. Ties go to
/// the lowest index.
pub fn hard_select(current: Option<usize>, weights: &[f64], epsilon: f64) -> usize {
    let best = argmax(weights);
    match current {
        None => best,
        Some(h) => {
            if weights[best] >= weights[h] + epsilon {
                best
            } else {
                h
            }
        }
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical(probs: &[f64], rng: &mut Rng) -> usize {
    let u = crate::math::rng::uniform(rng, 0.0, 1.0);
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// One of the five target policy classes (plus a bare base policy, used by
/// the evaluation plumbing for unadapted baselines).
#[derive(Clone, Debug)]
pub enum TargetPolicy {
    Base(Arc<BasePolicy>),
    ObsAlign(ObsAlignPolicy),
    ActionAlign(ActionAlignPolicy),
    ActionReAlign(ActionReAlignPolicy),
    Switching(SwitchingPolicy),
}

/// Per-episode mutable state for a target policy rollout.
#[derive(Clone, Debug, Default)]
pub struct EpisodeState {
    pub switch: SwitchState,
}

/// Result of one policy step during a rollout.
#[derive(Clone, Debug)]
pub struct PolicyStep {
    pub action: Action,
    pub weights: Option<Vec<f64>>,
    pub selected: Option<usize>,
}

impl TargetPolicy {
    pub fn kind(&self) -> &'static str {
        match self {
            TargetPolicy::Base(_) => "base",
            TargetPolicy::ObsAlign(_) => "obs_align",
            TargetPolicy::ActionAlign(_) => "action_align",
            TargetPolicy::ActionReAlign(_) => "action_realign",
            TargetPolicy::Switching(p) => match p.mode {
                SwitchMode::Soft => "soft_switch",
                SwitchMode::Hard => "hard_switch",
            },
        }
    }

    pub fn begin_episode(&self) -> EpisodeState {
        EpisodeState::default()
    }

    pub fn act(
        &self,
        ep: &mut EpisodeState,
        obs: &[f64],
        mode: ActMode,
        rng: &mut Rng,
    ) -> Result<PolicyStep> {
        match self {
            TargetPolicy::Base(p) => Ok(PolicyStep {
                action: p.act(obs, mode, rng)?,
                weights: None,
                selected: None,
            }),
            TargetPolicy::ObsAlign(p) => Ok(PolicyStep {
                action: p.act(obs, mode, rng)?,
                weights: None,
                selected: None,
            }),
            TargetPolicy::ActionAlign(p) => Ok(PolicyStep {
                action: p.act(obs, mode, rng)?,
                weights: None,
                selected: None,
            }),
            TargetPolicy::ActionReAlign(p) => Ok(PolicyStep {
                action: p.act(obs, mode, rng)?,
                weights: None,
                selected: None,
            }),
            TargetPolicy::Switching(p) => {
                let (action, weights, selected) = p.act(&mut ep.switch, obs, mode, rng)?;
                Ok(PolicyStep {
                    action,
                    weights: Some(weights),
                    selected: Some(selected),
                })
            }
        }
    }

    /// The base policies this target policy reads.
    pub fn bases(&self) -> Vec<&Arc<BasePolicy>> {
        match self {
            TargetPolicy::Base(p) => vec![p],
            TargetPolicy::ObsAlign(p) => vec![&p.base],
            TargetPolicy::ActionAlign(p) => vec![&p.base],
            TargetPolicy::ActionReAlign(p) => vec![&p.base],
            TargetPolicy::Switching(p) => p.bases.iter().collect(),
        }
    }
}

/// On-disk policy bundle: the kind, referenced base policy files, and the
/// learned parameters. Base policy paths are resolved relative to the
/// bundle's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyBundleFile {
    pub format_version: u32,
    pub kind: String,
    pub base_policy_files: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transform: Option<AffineTransform>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_net: Option<MlpParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<SwitchMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chosen_base: Option<usize>,
}

/// Writes a bundle. `base_files` must name one file per base the policy
/// reads, in order.
pub fn save_bundle(
    path: &Path,
    policy: &TargetPolicy,
    base_files: &[String],
    chosen_base: Option<usize>,
) -> Result<()> {
    if base_files.len() != policy.bases().len() {
        return Err(Error::Config(format!(
            "bundle needs {} base file names, got {}",
            policy.bases().len(),
            base_files.len()
        )));
    }
    let record = PolicyBundleFile {
        format_version: BUNDLE_FORMAT_VERSION,
        kind: policy.kind().to_string(),
        base_policy_files: base_files.to_vec(),
        transform: match policy {
            TargetPolicy::ObsAlign(p) => Some(p.t_obs.clone()),
            TargetPolicy::ActionAlign(p) => Some(p.t_act.clone()),
            TargetPolicy::ActionReAlign(p) => Some(p.t_latent.clone()),
            _ => None,
        },
        w_net: match policy {
            TargetPolicy::Switching(p) => Some(p.w_net.clone()),
            _ => None,
        },
        epsilon: match policy {
            TargetPolicy::Switching(p) => Some(p.epsilon),
            _ => None,
        },
        mode: match policy {
            TargetPolicy::Switching(p) => Some(p.mode),
            _ => None,
        },
        chosen_base,
    };
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &record)?;
    Ok(())
}

/// Loads a bundle and the base policies it references.
pub fn load_bundle(path: &Path) -> Result<(TargetPolicy, PolicyBundleFile)> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Config(format!("cannot open bundle {}: {e}", path.display())))?;
    let record: PolicyBundleFile = serde_json::from_reader(std::io::BufReader::new(file))
        .map_err(|e| Error::Config(format!("corrupt bundle {}: {e}", path.display())))?;
    let dir = path.parent().unwrap_or(Path::new("."));
    let bases: Vec<Arc<BasePolicy>> = record
        .base_policy_files
        .iter()
        .map(|f| {
            let base_path = dir.join(f);
            BasePolicy::load(&base_path)
                .map(Arc::new)
                .map_err(|e| Error::Config(format!("bundle base {}: {e}", base_path.display())))
        })
        .collect::<Result<_>>()?;

    let need_one_base = |kind: &str| -> Result<Arc<BasePolicy>> {
        bases
            .first()
            .cloned()
            .ok_or_else(|| Error::Config(format!("{kind} bundle references no base policy")))
    };
    let need_transform = |kind: &str| -> Result<AffineTransform> {
        record
            .transform
            .clone()
            .ok_or_else(|| Error::Config(format!("{kind} bundle is missing its transform")))
    };

    let policy = match record.kind.as_str() {
        "base" => TargetPolicy::Base(need_one_base("base")?),
        "obs_align" => {
            TargetPolicy::ObsAlign(ObsAlignPolicy::new(need_one_base("obs_align")?, need_transform("obs_align")?)?)
        }
        "action_align" => TargetPolicy::ActionAlign(ActionAlignPolicy::new(
            need_one_base("action_align")?,
            need_transform("action_align")?,
        )?),
        "action_realign" => TargetPolicy::ActionReAlign(ActionReAlignPolicy::new(
            need_one_base("action_realign")?,
            need_transform("action_realign")?,
        )?),
        "soft_switch" | "hard_switch" => {
            let w_net = record
                .w_net
                .clone()
                .ok_or_else(|| Error::Config("switching bundle is missing w_net".into()))?;
            let mode = record.mode.unwrap_or(if record.kind == "soft_switch" {
                SwitchMode::Soft
            } else {
                SwitchMode::Hard
            });
            TargetPolicy::Switching(SwitchingPolicy::new(
                bases.clone(),
                w_net,
                mode,
                record.epsilon.unwrap_or(0.0),
            )?)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown bundle kind {other:?} in {}",
                path.display()
            )))
        }
    };
    Ok((policy, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng::rng_from_seed;
    use crate::math::Activation;

    fn small_base(seed: u64) -> Arc<BasePolicy> {
        let mut rng = rng_from_seed(seed);
        let body = MlpParams::init_uniform(&[5, 8, 2], Activation::Tanh, &mut rng).unwrap();
        Arc::new(BasePolicy::new(body, vec![-1.0, -1.0]).unwrap())
    }

    fn obs() -> Vec<f64> {
        vec![1.0, -2.0, 0.8, 0.6, 0.5]
    }

    #[test]
    fn mean_mode_is_deterministic() {
        let base = small_base(1);
        let mut r1 = rng_from_seed(0);
        let mut r2 = rng_from_seed(99);
        let a1 = base.act(&obs(), ActMode::Mean, &mut r1).unwrap();
        let a2 = base.act(&obs(), ActMode::Mean, &mut r2).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn tiny_log_std_sample_close_to_mean() {
        let body = small_base(2).body.clone();
        let base = BasePolicy::new(body, vec![-10.0, -10.0]).unwrap();
        let mut rng = rng_from_seed(3);
        let mean = base.act(&obs(), ActMode::Mean, &mut rng).unwrap();
        let sample = base.act(&obs(), ActMode::Sample, &mut rng).unwrap();
        assert!((mean.steer - sample.steer).abs() <= 1e-3);
        assert!((mean.throttle - sample.throttle).abs() <= 1e-3);
    }

    #[test]
    fn samples_stay_in_unit_box() {
        let base = BasePolicy::new(small_base(4).body.clone(), vec![2.0, 2.0]).unwrap();
        let mut rng = rng_from_seed(5);
        for _ in 0..200 {
            let a = base.act(&obs(), ActMode::Sample, &mut rng).unwrap();
            assert!(a.steer.abs() <= 1.0 && a.throttle.abs() <= 1.0);
        }
    }

    #[test]
    fn identity_obs_align_reproduces_base() {
        let base = small_base(6);
        let p = ObsAlignPolicy::new(base.clone(), AffineTransform::identity(5)).unwrap();
        let mut r = rng_from_seed(0);
        for k in 0..10 {
            let o: Vec<f64> = (0..5).map(|i| ((i + k) as f64 * 0.37).sin() * 3.0).collect();
            let a = p.act(&o, ActMode::Mean, &mut r).unwrap();
            let b = base.act(&o, ActMode::Mean, &mut r).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn obs_align_composition_collapses() {
        let base = small_base(7);
        let mut rng = rng_from_seed(8);
        let rand_affine = |rng: &mut crate::math::Rng| {
            let a: Vec<f64> = (0..25)
                .map(|_| crate::math::rng::uniform(rng, -0.5, 0.5))
                .collect();
            let b: Vec<f64> = (0..5)
                .map(|_| crate::math::rng::uniform(rng, -0.5, 0.5))
                .collect();
            AffineTransform::new(5, 5, a, b).unwrap()
        };
        let t1 = rand_affine(&mut rng);
        let t2 = rand_affine(&mut rng);
        // Wrapping with T2 then T1 around the wrapper equals one wrapper with T1 composed after T2:
        // outer wrapper applies t1 first, so the stack computes base(t2(t1(x))).
        let inner = ObsAlignPolicy::new(base.clone(), t2.clone()).unwrap();
        let mut r = rng_from_seed(0);
        let x = obs();
        let stacked = inner.act(&t1.apply(&x).unwrap(), ActMode::Mean, &mut r).unwrap();
        let combined =
            ObsAlignPolicy::new(base, t2.compose(&t1).unwrap()).unwrap();
        let once = combined.act(&x, ActMode::Mean, &mut r).unwrap();
        assert!((stacked.steer - once.steer).abs() <= 1e-12);
        assert!((stacked.throttle - once.throttle).abs() <= 1e-12);
    }

    #[test]
    fn identity_action_align_reproduces_base() {
        let base = small_base(9);
        let p = ActionAlignPolicy::new(base.clone(), AffineTransform::identity(2)).unwrap();
        let mut r = rng_from_seed(0);
        let a = p.act(&obs(), ActMode::Mean, &mut r).unwrap();
        let b = base.act(&obs(), ActMode::Mean, &mut r).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn negated_action_align_flips_signs() {
        let base = small_base(10);
        let neg =
            AffineTransform::new(2, 2, vec![-1.0, 0.0, 0.0, -1.0], vec![0.0, 0.0]).unwrap();
        let p = ActionAlignPolicy::new(base.clone(), neg).unwrap();
        let mut r = rng_from_seed(0);
        let a = p.act(&obs(), ActMode::Mean, &mut r).unwrap();
        let b = base.act(&obs(), ActMode::Mean, &mut r).unwrap();
        assert!((a.steer + b.steer).abs() <= 1e-12);
        assert!((a.throttle + b.throttle).abs() <= 1e-12);
    }

    #[test]
    fn realign_with_final_layer_copy_reproduces_base() {
        let base = small_base(11);
        let p = ActionReAlignPolicy::new(base.clone(), base.final_layer_transform()).unwrap();
        let mut r = rng_from_seed(0);
        for k in 0..10 {
            let o: Vec<f64> = (0..5).map(|i| ((i * k) as f64 * 0.21).cos()).collect();
            let a = p.act(&o, ActMode::Mean, &mut r).unwrap();
            let b = base.act(&o, ActMode::Mean, &mut r).unwrap();
            assert!((a.steer - b.steer).abs() <= 1e-15);
            assert!((a.throttle - b.throttle).abs() <= 1e-15);
        }
    }

    #[test]
    fn realign_zero_transform_gives_zero_action() {
        let base = small_base(12);
        let zero = AffineTransform::new(
            2,
            base.latent_dim(),
            vec![0.0; 2 * base.latent_dim()],
            vec![0.0; 2],
        )
        .unwrap();
        let p = ActionReAlignPolicy::new(base, zero).unwrap();
        let mut r = rng_from_seed(0);
        let a = p.act(&obs(), ActMode::Mean, &mut r).unwrap();
        assert_eq!(a.steer, 0.0);
        assert_eq!(a.throttle, 0.0);
    }

    #[test]
    fn realign_latent_width_mismatch_rejected() {
        let base = small_base(13);
        let wrong = AffineTransform::new(2, 3, vec![0.0; 6], vec![0.0; 2]).unwrap();
        assert!(ActionReAlignPolicy::new(base, wrong).is_err());
    }

    #[test]
    fn hysteresis_keeps_incumbent_within_epsilon() {
        // Incumbent at 0.4, best challenger at 0.45, epsilon 0.1: stays.
        let w = vec![0.45, 0.4, 0.15];
        assert_eq!(hard_select(Some(1), &w, 0.1), 1);
        // Challenger clears the bar: switches to argmax.
        assert_eq!(hard_select(Some(1), &w, 0.05), 0);
    }

    #[test]
    fn epsilon_zero_is_per_step_argmax() {
        let w = vec![0.2, 0.5, 0.3];
        for current in [None, Some(0), Some(1), Some(2)] {
            assert_eq!(hard_select(current, &w, 0.0), 1);
        }
    }

    #[test]
    fn argmax_ties_go_to_lowest_index() {
        assert_eq!(hard_select(None, &[0.4, 0.4, 0.2], 0.0), 0);
    }

    #[test]
    fn soft_mean_with_uniform_weights_averages_base_means() {
        let bases = vec![small_base(20), small_base(21), small_base(22)];
        // Zero w_net: logits all zero, weights uniform.
        let w_net = MlpParams::zeros(&[5, 3], Activation::Tanh).unwrap();
        let p = SwitchingPolicy::new(bases.clone(), w_net, SwitchMode::Soft, 0.0).unwrap();
        let mut st = SwitchState::default();
        let mut r = rng_from_seed(0);
        let o = obs();
        let (a, w, _) = p.act(&mut st, &o, ActMode::Mean, &mut r).unwrap();
        assert!(w.iter().all(|v| (v - 1.0 / 3.0).abs() <= 1e-12));
        let mut steer = 0.0;
        let mut throttle = 0.0;
        for b in &bases {
            let ab = b.act(&o, ActMode::Mean, &mut r).unwrap();
            steer += ab.steer / 3.0;
            throttle += ab.throttle / 3.0;
        }
        assert!((a.steer - steer).abs() <= 1e-12);
        assert!((a.throttle - throttle).abs() <= 1e-12);
    }

    #[test]
    fn hard_selection_replay_is_deterministic() {
        let bases = vec![small_base(30), small_base(31)];
        let mut rng = rng_from_seed(33);
        let w_net = MlpParams::init_uniform(&[5, 6, 2], Activation::Tanh, &mut rng).unwrap();
        let p = SwitchingPolicy::new(bases, w_net, SwitchMode::Hard, 0.05).unwrap();

        let observations: Vec<Vec<f64>> = (0..40)
            .map(|k| (0..5).map(|i| ((k * 7 + i) as f64 * 0.13).sin() * 2.0).collect())
            .collect();

        let mut st = SwitchState::default();
        let mut r = rng_from_seed(0);
        let mut live = Vec::new();
        let mut weight_log = Vec::new();
        for o in &observations {
            let (_, w, sel) = p.act(&mut st, o, ActMode::Mean, &mut r).unwrap();
            live.push(sel);
            weight_log.push(w);
        }

        // Replay from the logged weights alone.
        let mut current = None;
        let replayed: Vec<usize> = weight_log
            .iter()
            .map(|w| {
                let s = hard_select(current, w, p.epsilon);
                current = Some(s);
                s
            })
            .collect();
        assert_eq!(live, replayed);
    }

    #[test]
    fn bundle_roundtrip_all_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let base = small_base(50);
        let base_file = "base0.json".to_string();
        base.save(&dir.path().join(&base_file)).unwrap();

        let policies = vec![
            TargetPolicy::Base(base.clone()),
            TargetPolicy::ObsAlign(
                ObsAlignPolicy::new(base.clone(), AffineTransform::identity(5)).unwrap(),
            ),
            TargetPolicy::ActionAlign(
                ActionAlignPolicy::new(base.clone(), AffineTransform::identity(2)).unwrap(),
            ),
            TargetPolicy::ActionReAlign(
                ActionReAlignPolicy::new(base.clone(), base.final_layer_transform()).unwrap(),
            ),
        ];
        for (i, p) in policies.iter().enumerate() {
            let path = dir.path().join(format!("bundle{i}.json"));
            save_bundle(&path, p, &[base_file.clone()], Some(0)).unwrap();
            let (loaded, record) = load_bundle(&path).unwrap();
            assert_eq!(loaded.kind(), p.kind());
            assert_eq!(record.kind, p.kind());
        }

        let w_net = MlpParams::zeros(&[5, 1], Activation::Tanh).unwrap();
        let sw = TargetPolicy::Switching(
            SwitchingPolicy::new(vec![base.clone()], w_net, SwitchMode::Hard, 0.1).unwrap(),
        );
        let path = dir.path().join("switch.json");
        save_bundle(&path, &sw, &[base_file], None).unwrap();
        let (loaded, record) = load_bundle(&path).unwrap();
        assert_eq!(loaded.kind(), "hard_switch");
        assert_eq!(record.epsilon, Some(0.1));
    }

    #[test]
    fn corrupt_bundle_is_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, "{not json").unwrap();
        match load_bundle(&path) {
            Err(Error::Config(msg)) => assert!(msg.contains("bad.json")),
            other => panic!("expected config error, got {other:?}"),
        }
    }
}
