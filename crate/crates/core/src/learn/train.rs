use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mlp::{Adam, Mlp};
use super::ppo::{gae, normalize_advantages, ppo_update, train_discriminator, Batch, GaussianPolicy, Normalizer, PpoOptimizers};
use super::{LearnError, Mode, TrainConfig};
use crate::arm::ARM_DOF;
use crate::env::{EnvConfig, Policy, PointingEnv, ReferenceMotion, ACTION_DIM, OBS_DIM, PHASE_INDEX};
use crate::mocap::{BodyFrame, Clip};
use crate::reward::{amp_reward, combined_reward};
use crate::synth::derive_seed;

const CHECKPOINT_FORMAT: &str = "deixis-checkpoint/1";
/// Transition feature length: elbow and hand relative to the shoulder, before and after.
pub(crate) const TRANSITION_DIM: usize = 12;

/// Everything a trained model needs to act.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub policy: GaussianPolicy,
    pub value: Mlp,
    pub normalizer: Normalizer,
    /// Number of `sin(kπφ)`, `cos(kπφ)` pairs appended to the normalized observation.
    pub phase_features: usize,
    pub discriminator: Option<Mlp>,
}

impl Agent {
    pub fn new<R: Rng>(cfg: &TrainConfig, mode: Mode, rng: &mut R) -> Result<Agent, LearnError> {
        let sizes = |hidden: &[usize], out: usize, input: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(out);
            s
        };
        let input = OBS_DIM + 2 * cfg.phase_features;
        let policy = GaussianPolicy {
            mean: Mlp::init(&sizes(&cfg.policy_hidden, ACTION_DIM, input), 0.01, rng)?,
            log_std: vec![cfg.init_log_std; ACTION_DIM],
        };
        let value = Mlp::init(&sizes(&cfg.value_hidden, 1, input), 1.0, rng)?;
        let discriminator = match mode {
            Mode::Amp => Some(Mlp::init(&sizes(&cfg.disc_hidden, 1, TRANSITION_DIM), 1.0, rng)?),
            _ => None,
        };
        Ok(Agent { policy, value, normalizer: Normalizer::new(OBS_DIM), phase_features: cfg.phase_features, discriminator })
    }

    /// Network input for a raw observation.
    pub fn input(&self, obs: &[f64]) -> Vec<f64> {
        let mut x = self.normalizer.apply(obs);
        let phase = obs.get(PHASE_INDEX).copied().unwrap_or(0.0);
        for k in 1..=self.phase_features {
            let a = std::f64::consts::PI * k as f64 * phase;
            x.push(a.sin());
            x.push(a.cos());
        }
        x
    }

    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>, LearnError> {
        self.policy.mean.forward(&self.input(obs))
    }

    fn check_dims(&self) -> Result<(), LearnError> {
        let m = &self.policy.mean;
        let input = OBS_DIM + 2 * self.phase_features;
        if m.input_dim() != input || self.value.input_dim() != input {
            return Err(LearnError::IncompatibleCheckpoint(format!(
                "network input size {} (expected {input} for {OBS_DIM} observations and {} phase features)",
                m.input_dim(),
                self.phase_features
            )));
        }
        if m.output_dim() != ACTION_DIM || self.policy.log_std.len() != ACTION_DIM || self.value.output_dim() != 1 {
            return Err(LearnError::IncompatibleCheckpoint(format!(
                "action size {} (environment has {ACTION_DIM})",
                m.output_dim()
            )));
        }
        if self.normalizer.mean.len() != OBS_DIM || self.normalizer.var.len() != OBS_DIM {
            return Err(LearnError::IncompatibleCheckpoint("normalizer size".into()));
        }
        if let Some(d) = &self.discriminator {
            if d.input_dim() != TRANSITION_DIM || d.output_dim() != 1 {
                return Err(LearnError::IncompatibleCheckpoint("discriminator size".into()));
            }
        }
        Ok(())
    }
}

/// Adapts an [`Agent`] to the environment's policy interface.
pub struct AgentPolicy<'a> {
    pub agent: &'a Agent,
    /// Act with the policy mean instead of sampling.
    pub deterministic: bool,
}

impl Policy for AgentPolicy<'_> {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }
    fn action_dim(&self) -> usize {
        self.agent.policy.action_dim()
    }
    fn act(&mut self, obs: &[f64], _env: &PointingEnv, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let x = self.agent.input(obs);
        let out = if self.deterministic {
            self.agent.policy.mean.forward(&x).map(|a| (a, 0.0))
        } else {
            self.agent.policy.sample(&x, rng)
        };
        out.map(|(a, _)| a).unwrap_or_else(|_| vec![0.0; ACTION_DIM])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub ppo: PpoOptimizers,
    pub disc: Option<Adam>,
}

/// Self-describing training snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub mode: Mode,
    /// Environment steps consumed.
    pub step: usize,
    pub updates: usize,
    pub config_hash: String,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub agent: Agent,
    pub optim: OptimState,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint, LearnError> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| LearnError::IncompatibleCheckpoint(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(LearnError::IncompatibleCheckpoint(format!("unknown format '{}'", ck.format)));
        }
        ck.validate()?;
        Ok(ck)
    }

    /// Checks that the checkpoint fits the simulated arm.
    pub fn validate(&self) -> Result<(), LearnError> {
        if self.obs_dim != OBS_DIM || self.action_dim != ACTION_DIM {
            return Err(LearnError::IncompatibleCheckpoint(format!(
                "dimensions {}→{} (environment is {OBS_DIM}→{ACTION_DIM})",
                self.obs_dim, self.action_dim
            )));
        }
        self.agent.check_dims()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub mean_reward: f64,
    pub mean_r_i: f64,
    pub mean_r_g: f64,
    pub kl: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscRow {
    pub step: usize,
    pub loss: f64,
    pub mean_real: f64,
    pub mean_fake: f64,
}

pub fn curves_to_csv(rows: &[CurveRow], header: bool) -> String {
    let mut s = if header { "step,mean_reward,mean_r_I,mean_r_G,kl,clip_fraction\n".to_string() } else { String::new() };
    for r in rows {
        s.push_str(&format!("{},{},{},{},{},{}\n", r.step, r.mean_reward, r.mean_r_i, r.mean_r_g, r.kl, r.clip_fraction));
    }
    s
}

pub fn disc_curves_to_csv(rows: &[DiscRow], header: bool) -> String {
    let mut s = if header { "step,loss,mean_real,mean_fake\n".to_string() } else { String::new() };
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.step, r.loss, r.mean_real, r.mean_fake));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    /// Rows produced by this call (a resumed run continues the step count).
    pub curves: Vec<CurveRow>,
    pub disc_curves: Vec<DiscRow>,
}

/// A failed run with the state after the last successful update.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: LearnError,
    pub last_good: Option<Box<TrainOutcome>>,
}

impl From<LearnError> for TrainFailure {
    fn from(error: LearnError) -> Self {
        TrainFailure { error, last_good: None }
    }
}

/// SHA-256 (hex) of the value's JSON serialization.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}

#[derive(Serialize)]
struct HashedConfig<'a> {
    env: &'a EnvConfig,
    train: TrainConfig,
    mode: Mode,
    clips: Vec<&'a str>,
}

/// Mode-specific environment (reward channels) and reference motions.
fn prepare(env_cfg: &EnvConfig, cfg: &TrainConfig, mode: Mode, clips: &[Clip]) -> Result<(EnvConfig, Vec<ReferenceMotion>, Vec<String>), LearnError> {
    let mut env_cfg = env_cfg.clone();
    env_cfg.reward = match mode {
        Mode::Dm => env_cfg.reward.with_channels(1.0, 0.0),
        Mode::TaskOnly => env_cfg.reward.with_channels(0.0, 1.0),
        Mode::DmWr | Mode::Amp => {
            let r = env_cfg.reward;
            if !(r.w_imitation > 0.0 && r.w_goal > 0.0) {
                return Err(LearnError::InvalidConfig(format!("mode {mode} needs both reward channels weighted")));
            }
            r
        }
    };
    if !mode.uses_references() {
        return Ok((env_cfg, Vec::new(), Vec::new()));
    }
    let mut chosen: Vec<&Clip> = clips.iter().collect();
    if mode == Mode::Amp {
        chosen.retain(|c| {
            let body = BodyFrame::from_clip(c);
            c.annotations.first().and_then(|a| c.targets.get(a.target)).is_some_and(|t| body.to_body(t.position).z > 0.0)
        });
    }
    if let Some(n) = cfg.clip_count {
        if chosen.len() < n {
            return Err(LearnError::InvalidConfig(format!("{n} clips requested, {} available", chosen.len())));
        }
        chosen.truncate(n);
    }
    if chosen.is_empty() {
        return Err(LearnError::InvalidConfig(format!("mode {mode} needs at least one reference clip")));
    }
    let mut refs = Vec::with_capacity(chosen.len());
    for c in &chosen {
        let end = match mode {
            Mode::Amp => {
                let a = c.annotations.first().ok_or_else(|| {
                    LearnError::InvalidConfig(format!("clip {} has no annotation to truncate at", c.id))
                })?;
                Some(a.hold_start + 1)
            }
            _ => None,
        };
        refs.push(ReferenceMotion::from_clip(c, env_cfg.hand, end)?);
    }
    let ids = chosen.iter().map(|c| c.id.clone()).collect();
    Ok((env_cfg, refs, ids))
}

/// Reference transitions at the control period, as discriminator "real" samples.
fn reference_transitions(env: &PointingEnv) -> Vec<Vec<f64>> {
    let dt = env.control_period();
    let mut out = Vec::new();
    for r in env.references() {
        let d = r.duration();
        let n = (d / dt).floor() as usize;
        for k in 0..n {
            let (a, _) = r.sample(k as f64 * dt / d);
            let (b, _) = r.sample(((k + 1) as f64 * dt / d).min(1.0));
            out.push(transition_features(env, &a, &b));
        }
    }
    out
}

fn transition_features(env: &PointingEnv, before: &[f64], after: &[f64]) -> Vec<f64> {
    let mut f = env.pose_features(before).to_vec();
    f.extend_from_slice(&env.pose_features(after));
    f
}

/// Runs PPO for `cfg.total_steps` environment steps (continuing from `resume` when given).
pub fn train(
    env_cfg: &EnvConfig,
    cfg: &TrainConfig,
    mode: Mode,
    clips: &[Clip],
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome, TrainFailure> {
    cfg.validate()?;
    let (env_cfg, refs, ids) = prepare(env_cfg, cfg, mode, clips)?;
    let hash = config_hash(&HashedConfig {
        env: &env_cfg,
        train: TrainConfig { total_steps: 0, ..cfg.clone() },
        mode,
        clips: ids.iter().map(String::as_str).collect(),
    });
    let mut env = PointingEnv::new(env_cfg, refs).map_err(LearnError::from)?;

    let mut ck = match resume {
        Some(ck) => {
            ck.validate()?;
            if ck.config_hash != hash || ck.mode != mode {
                return Err(LearnError::IncompatibleCheckpoint("config hash or mode differs from the run being resumed".into()).into());
            }
            ck
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0));
            let agent = Agent::new(cfg, mode, &mut rng)?;
            let optim = OptimState {
                ppo: PpoOptimizers::new(&agent.policy, &agent.value, cfg),
                disc: agent.discriminator.as_ref().map(|d| Adam::new(d.params().len(), cfg.disc_lr)),
            };
            Checkpoint {
                format: CHECKPOINT_FORMAT.into(),
                mode,
                step: 0,
                updates: 0,
                config_hash: hash,
                obs_dim: OBS_DIM,
                action_dim: ACTION_DIM,
                agent,
                optim,
            }
        }
    };
    let real = if mode == Mode::Amp { reference_transitions(&env) } else { Vec::new() };
    let mut curves = Vec::new();
    let mut disc_curves = Vec::new();

    while ck.step < cfg.total_steps {
        match update(&mut env, &mut ck, cfg, &real) {
            Ok((row, disc_row)) => {
                curves.push(row);
                disc_curves.extend(disc_row);
            }
            Err(error) => {
                let last_good = Some(Box::new(TrainOutcome { checkpoint: ck, curves, disc_curves }));
                return Err(TrainFailure { error, last_good });
            }
        }
    }
    Ok(TrainOutcome { checkpoint: ck, curves, disc_curves })
}

/// One collect-and-learn iteration. Leaves `ck` untouched on error.
fn update(
    env: &mut PointingEnv,
    ck: &mut Checkpoint,
    cfg: &TrainConfig,
    real: &[Vec<f64>],
) -> Result<(CurveRow, Option<DiscRow>), LearnError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1 + ck.updates as u64));
    let agent = &ck.agent;
    let reward_cfg = env.config().reward;
    let mut raw_obs = Vec::new();
    let mut batch = Batch::default();
    let (mut values, mut rewards, mut dones) = (Vec::new(), Vec::new(), Vec::new());
    let (mut r_i, mut r_g) = (Vec::new(), Vec::new());
    let mut fake = Vec::new();

    while raw_obs.len() < cfg.batch_steps {
        let mut obs = env.reset(None, None, rng.random())?;
        loop {
            let x = agent.input(&obs);
            let (a, lp) = agent.policy.sample(&x, &mut rng)?;
            let v = agent.value.forward(&x)?[0];
            let before: [f64; ARM_DOF] = env.state().q;
            let out = env.step(&a)?;
            let mut r_imit = out.reward.r_imitation;
            if let Some(disc) = &agent.discriminator {
                let f = transition_features(env, &before, &env.state().q);
                r_imit = amp_reward(disc.forward(&f)?[0]);
                fake.push(f);
            }
            rewards.push(combined_reward(r_imit, out.reward.r_goal, &reward_cfg));
            r_i.push(r_imit);
            r_g.push(out.reward.r_goal);
            values.push(v);
            dones.push(out.done);
            raw_obs.push(obs);
            batch.obs.push(x);
            batch.actions.push(a);
            batch.log_probs.push(lp);
            obs = out.observation;
            if out.done {
                break;
            }
        }
    }

    let (mut adv, returns) = gae(&rewards, &values, &dones, 0.0, cfg.gamma, cfg.lambda)?;
    normalize_advantages(&mut adv);
    batch.advantages = adv;
    batch.returns = returns;

    let mut next = ck.clone();
    let stats = ppo_update(&mut next.agent.policy, &mut next.agent.value, &mut next.optim.ppo, &batch, cfg, &mut rng)?;
    next.agent.normalizer.update(&raw_obs);
    let mut disc_row = None;
    if let (Some(disc), Some(opt)) = (next.agent.discriminator.as_mut(), next.optim.disc.as_mut()) {
        let s = train_discriminator(disc, opt, real, &fake, cfg.disc_steps, cfg.disc_minibatch, &mut rng)?;
        disc_row = Some(DiscRow { step: ck.step + raw_obs.len(), loss: s.loss, mean_real: s.mean_real, mean_fake: s.mean_fake });
    }
    next.step += raw_obs.len();
    next.updates += 1;
    let n = rewards.len() as f64;
    let row = CurveRow {
        step: next.step,
        mean_reward: rewards.iter().sum::<f64>() / n,
        mean_r_i: r_i.iter().sum::<f64>() / n,
        mean_r_g: r_g.iter().sum::<f64>() / n,
        kl: stats.approx_kl,
        clip_fraction: stats.clip_fraction,
    };
    *ck = next;
    Ok((row, disc_row))
}
