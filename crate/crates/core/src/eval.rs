//! Evaluation: per-episode pointing-reward statistics, reward-signal smoothness, side-by-side
//! model comparison on a fixed target list, and profile/plot exports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{run_episode, EnvConfig, EnvError, ExpertPolicy, Policy, PointingEnv, RandomPolicy, Trajectory};
use crate::geom::{self, GeomError, Vec3};
use crate::learn::{AgentPolicy, Checkpoint, LearnError};
use crate::geom::Hand;
use crate::mocap::{precision_profile, Clip, MocapError, Octant, ProfileBand, Segment};
use crate::reward::{self, ArmFrame};
use crate::stats::MeanSd;
use crate::synth::{derive_seed, sample_shell_target};

/// Number of time-normalized bins in exported profiles.
pub const PROFILE_BINS: usize = 100;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no input series")]
    EmptyInput,
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("incompatible checkpoint for model '{model}': {reason}")]
    IncompatibleCheckpoint { model: String, reason: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Synth(#[from] crate::synth::SynthError),
    #[error(transparent)]
    Mocap(#[from] MocapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub r_max: f64,
    pub r_min: f64,
    pub r_mean: f64,
}

pub fn reward_stats(series: &[f64]) -> Result<RewardStats, EvalError> {
    if series.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(RewardStats {
        r_max: series.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        r_min: series.iter().copied().fold(f64::INFINITY, f64::min),
        r_mean: crate::stats::mean(series),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smoothness {
    pub vel_r: f64,
    pub acc_r: f64,
    pub jerk_r: f64,
}

/// Mean absolute first, second and third finite differences of a reward series, in units
/// of `1/dt`, `1/dt²` and `1/dt³`.
pub fn smoothness(series: &[f64], dt: f64) -> Result<Smoothness, EvalError> {
    if series.len() < 4 {
        return Err(GeomError::SeriesTooShort { len: series.len(), order: 3 }.into());
    }
    let mean_abs = |order: usize| -> Result<f64, EvalError> {
        let d = geom::finite_difference(series, dt, order)?;
        Ok(d.iter().map(|x| x.abs()).sum::<f64>() / d.len() as f64)
    };
    Ok(Smoothness { vel_r: mean_abs(1)?, acc_r: mean_abs(2)?, jerk_r: mean_abs(3)? })
}

/// One evaluated episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipRow {
    pub clip: String,
    pub r_max: f64,
    pub r_min: f64,
    pub r_mean: f64,
    pub vel_r: f64,
    pub acc_r: f64,
    pub jerk_r: f64,
}

impl ClipRow {
    pub fn from_series(clip: impl Into<String>, series: &[f64], dt: f64) -> Result<ClipRow, EvalError> {
        let r = reward_stats(series)?;
        let s = smoothness(series, dt)?;
        Ok(ClipRow {
            clip: clip.into(),
            r_max: r.r_max,
            r_min: r.r_min,
            r_mean: r.r_mean,
            vel_r: s.vel_r,
            acc_r: s.acc_r,
            jerk_r: s.jerk_r,
        })
    }
}

/// Aggregate of every column across rows (sample sd).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub r_max: MeanSd,
    pub r_min: MeanSd,
    pub r_mean: MeanSd,
    pub vel_r: MeanSd,
    pub acc_r: MeanSd,
    pub jerk_r: MeanSd,
}

impl Aggregate {
    pub fn of(rows: &[ClipRow]) -> Result<Aggregate, EvalError> {
        if rows.is_empty() {
            return Err(EvalError::EmptyInput);
        }
        let col = |f: fn(&ClipRow) -> f64| MeanSd::of(&rows.iter().map(f).collect::<Vec<_>>());
        Ok(Aggregate {
            r_max: col(|r| r.r_max),
            r_min: col(|r| r.r_min),
            r_mean: col(|r| r.r_mean),
            vel_r: col(|r| r.vel_r),
            acc_r: col(|r| r.acc_r),
            jerk_r: col(|r| r.jerk_r),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    /// Time step used for the smoothness metrics (s).
    pub dt: f64,
    pub sd_convention: String,
    pub rows: Vec<ClipRow>,
    pub aggregate: Aggregate,
}

impl EvalReport {
    pub fn new(model: &str, config_hash: &str, seeds: &[u64], dt: f64, rows: Vec<ClipRow>) -> Result<EvalReport, EvalError> {
        let aggregate = Aggregate::of(&rows)?;
        Ok(EvalReport {
            model: model.into(),
            config_hash: config_hash.into(),
            seeds: seeds.to_vec(),
            dt,
            sd_convention: "sample".into(),
            rows,
            aggregate,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Per-clip rows plus one aggregate row of `mean ± sd` cells.
    pub fn to_csv(&self) -> String {
        let mut s = self.csv_preamble();
        s.push_str("model,clip,r_max,r_min,r_mean,vel_r,acc_r,jerk_r\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                self.model, r.clip, r.r_max, r.r_min, r.r_mean, r.vel_r, r.acc_r, r.jerk_r
            ));
        }
        let a = &self.aggregate;
        s.push_str(&format!(
            "{},aggregate,{},{},{},{},{},{}\n",
            self.model, a.r_max, a.r_min, a.r_mean, a.vel_r, a.acc_r, a.jerk_r
        ));
        s
    }

    fn csv_preamble(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        format!(
            "# config_hash={}\n# seeds={}\n# dt={}\n# sd={}\n",
            self.config_hash,
            seeds.join(" "),
            self.dt,
            self.sd_convention
        )
    }
}

/// Reward-statistics table (one aggregate row per model).
pub fn reward_table_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("model,r_max,r_min,r_mean\n");
    for r in reports {
        let a = &r.aggregate;
        s.push_str(&format!("{},{},{},{}\n", r.model, a.r_max, a.r_min, a.r_mean));
    }
    s
}

/// Smoothness table (one aggregate row per model).
pub fn smoothness_table_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from("model,vel_r,acc_r,jerk_r\n");
    for r in reports {
        let a = &r.aggregate;
        s.push_str(&format!("{},{},{},{}\n", r.model, a.vel_r, a.acc_r, a.jerk_r));
    }
    s
}

/// A model row of a comparison.
pub enum Model<'a> {
    Checkpoint { name: String, checkpoint: &'a Checkpoint },
    /// Analytic pointing pose for each target.
    Expert,
    /// Uniform random PD targets.
    Random,
}

impl Model<'_> {
    pub fn name(&self) -> String {
        match self {
            Model::Checkpoint { name, .. } => name.clone(),
            Model::Expert => "expert".into(),
            Model::Random => "random".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalParams {
    /// Explicit targets; when empty, `held_out_count` targets are drawn with `target_seed`.
    pub targets: Vec<Vec3>,
    pub held_out_count: usize,
    pub target_seed: u64,
    pub seeds: Vec<u64>,
    /// Episode length (s); the environment default when unset.
    pub episode_duration: Option<f64>,
}

impl Default for EvalParams {
    fn default() -> Self {
        EvalParams { targets: Vec::new(), held_out_count: 12, target_seed: 7_777, seeds: vec![0], episode_duration: None }
    }
}

/// Evaluation episodes of one model: one per (target, seed), policy mean actions.
pub struct ModelRun {
    pub report: EvalReport,
    pub episodes: Vec<(String, Trajectory)>,
}

/// `n` front-facing targets spread evenly over the front octants of the environment's arm.
pub fn held_out_targets(env: &PointingEnv, n: usize, seed: u64) -> Result<Vec<Vec3>, EvalError> {
    let cells: Vec<Octant> = Octant::ALL.iter().copied().filter(|o| o.front).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x4e4c_4f55));
    (0..n)
        .map(|i| Ok(sample_shell_target(&mut rng, env.arm(), env.body(), cells[i % cells.len()], 0.0)?))
        .collect()
}

/// Evaluation environment: task clock, pointing reward only, no references.
pub fn eval_env(env_cfg: &EnvConfig, params: &EvalParams) -> Result<PointingEnv, EvalError> {
    let mut cfg = env_cfg.clone();
    cfg.reward = cfg.reward.with_channels(0.0, 1.0);
    cfg.reference_state_init = false;
    if let Some(d) = params.episode_duration {
        cfg.episode_duration = d;
    }
    Ok(PointingEnv::new(cfg, Vec::new())?)
}

pub fn resolve_targets(env: &PointingEnv, params: &EvalParams) -> Result<Vec<Vec3>, EvalError> {
    let targets = if params.targets.is_empty() {
        held_out_targets(env, params.held_out_count, params.target_seed)?
    } else {
        params.targets.clone()
    };
    if targets.is_empty() || params.seeds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(targets)
}

/// Evaluates one model on every (target, seed) pair from identical resets.
pub fn evaluate_model(
    model: &Model<'_>,
    env: &mut PointingEnv,
    targets: &[Vec3],
    seeds: &[u64],
) -> Result<ModelRun, EvalError> {
    let name = model.name();
    let (hash, mut policy): (String, Box<dyn Policy + '_>) = match model {
        Model::Checkpoint { checkpoint, .. } => {
            checkpoint.validate().map_err(|e| EvalError::IncompatibleCheckpoint {
                model: name.clone(),
                reason: match e {
                    LearnError::IncompatibleCheckpoint(r) => r,
                    other => other.to_string(),
                },
            })?;
            (checkpoint.config_hash.clone(), Box::new(AgentPolicy { agent: &checkpoint.agent, deterministic: true }))
        }
        Model::Expert => (String::new(), Box::new(ExpertPolicy)),
        Model::Random => (String::new(), Box::new(RandomPolicy)),
    };
    let dt = env.control_period();
    let mut rows = Vec::new();
    let mut episodes = Vec::new();
    for (i, target) in targets.iter().enumerate() {
        for &seed in seeds {
            let id = if seeds.len() == 1 { format!("target-{i:02}") } else { format!("target-{i:02}-seed-{seed}") };
            let traj = run_episode(env, policy.as_mut(), Some(*target), None, seed)?;
            rows.push(ClipRow::from_series(id.clone(), &traj.goal_rewards(), dt)?);
            episodes.push((id, traj));
        }
    }
    let report = EvalReport::new(&name, &hash, seeds, dt, rows)?;
    Ok(ModelRun { report, episodes })
}

/// Evaluates each model independently; a failing model yields its error and the rest
/// continue.
pub fn compare_models(
    models: &[Model<'_>],
    env_cfg: &EnvConfig,
    params: &EvalParams,
) -> Result<Vec<Result<ModelRun, EvalError>>, EvalError> {
    let mut env = eval_env(env_cfg, params)?;
    let targets = resolve_targets(&env, params)?;
    Ok(models.iter().map(|m| evaluate_model(m, &mut env, &targets, &params.seeds)).collect())
}

/// Time-normalized mean ± sd band over the series.
pub fn export_profile(series: &[Vec<f64>], bins: usize) -> Result<ProfileBand, EvalError> {
    if series.is_empty() || series.iter().any(|s| s.is_empty()) {
        return Err(EvalError::EmptyInput);
    }
    Ok(ProfileBand::of(series, bins)?)
}

/// Velocity (hand speed) and precision profiles of evaluation episodes.
pub fn episode_profiles(env: &PointingEnv, episodes: &[&Trajectory]) -> Result<(ProfileBand, ProfileBand), EvalError> {
    let dt = env.control_period();
    let mut speeds = Vec::new();
    let mut precision = Vec::new();
    for t in episodes {
        let track: Vec<Vec3> = t
            .steps
            .iter()
            .map(|s| env.arm().positions(crate::arm::ArmAngles::from_slice(&s.q)).1)
            .collect();
        if track.len() >= 2 {
            speeds.push(geom::speeds(&track, dt));
        }
        precision.push(t.steps.iter().map(|s| s.reward.precision).collect());
    }
    Ok((export_profile(&speeds, PROFILE_BINS)?, export_profile(&precision, PROFILE_BINS)?))
}

/// Pointing reward of a recorded clip sampled every `fps/rate` frames, for the arm of
/// `hand` pointing at `target`.
pub fn clip_reward_series(clip: &Clip, hand: Hand, target: Vec3, rate: f64) -> Result<Vec<f64>, EvalError> {
    let arm = clip
        .skeleton
        .arm(hand)
        .ok_or_else(|| GeomError::InvalidSkeleton(format!("no {hand} arm designated")))?;
    let stride = ((clip.fps / rate).round() as usize).max(1);
    clip.frames
        .iter()
        .step_by(stride)
        .map(|pose| {
            let p = geom::forward_kinematics(&clip.skeleton, pose)?;
            Ok(reward::pointing_reward(&ArmFrame { elbow: p[arm.elbow], hand: p[arm.hand], target })?)
        })
        .collect()
}

/// Time-normalized precision band over segments; degenerate frames are dropped.
pub fn precision_profile_band(items: &[(&Clip, &Segment)], bins: usize) -> Result<ProfileBand, EvalError> {
    let series = items
        .iter()
        .map(|(clip, seg)| Ok(precision_profile(clip, seg)?.into_iter().flatten().collect()))
        .collect::<Result<Vec<Vec<f64>>, EvalError>>()?;
    export_profile(&series, bins)
}

/// Minimal SVG line plot: axes, one polyline per series, a legend.
pub fn svg_line_plot(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<f64>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const M: f64 = 50.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let n_max = series.iter().map(|(_, s)| s.len()).max().unwrap_or(0).max(2);
    let values = series.iter().flat_map(|(_, s)| s.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else if lo.is_finite() { (lo - 0.5, lo + 0.5) } else { (0.0, 1.0) };
    let px = |i: usize| M + (W - 2.0 * M) * i as f64 / (n_max - 1) as f64;
    let py = |v: f64| H - M - (H - 2.0 * M) * (v - lo) / (hi - lo);
    let esc = |s: &str| s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n\
         <line x1=\"{M}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{M}\" y1=\"{M}\" x2=\"{M}\" y2=\"{}\" stroke=\"black\"/>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n\
         <text x=\"15\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 15 {})\">{}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{:.3}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{:.3}</text>\n",
        W / 2.0,
        esc(title),
        H - M,
        W - M,
        H - M,
        H - M,
        W / 2.0,
        H - 12.0,
        esc(x_label),
        H / 2.0,
        H / 2.0,
        esc(y_label),
        M - 4.0,
        H - M,
        lo,
        M - 4.0,
        M + 4.0,
        hi,
    );
    for (k, (label, s)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let points: Vec<String> = s
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| format!("{:.2},{:.2}", px(i), py(*v)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            W - M - 110.0,
            M + 14.0 * (k as f64 + 1.0),
            esc(label)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_reward_stats() {
        let r = reward_stats(&[0.5; 10]).unwrap();
        assert_eq!((r.r_max, r.r_min, r.r_mean), (0.5, 0.5, 0.5));
        assert!(matches!(reward_stats(&[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn aggregate_uses_sample_sd() {
        let rows: Vec<ClipRow> = [0.4, 0.6]
            .iter()
            .enumerate()
            .map(|(i, m)| ClipRow::from_series(format!("c{i}"), &[*m; 5], 1.0).unwrap())
            .collect();
        let a = Aggregate::of(&rows).unwrap();
        assert!((a.r_mean.mean - 0.5).abs() < 1e-12);
        assert!((a.r_mean.sd - 0.02f64.sqrt()).abs() < 1e-12);
        let one = Aggregate::of(&rows[..1]).unwrap();
        assert_eq!(one.r_mean.sd, 0.0);
    }

    #[test]
    fn smoothness_of_constant_and_ramp() {
        assert_eq!(smoothness(&[0.3; 8], 1.0 / 30.0).unwrap(), Smoothness { vel_r: 0.0, acc_r: 0.0, jerk_r: 0.0 });
        let dt = 0.5;
        let ramp: Vec<f64> = (0..10).map(|i| -0.75 * i as f64 * dt).collect();
        let s = smoothness(&ramp, dt).unwrap();
        assert!((s.vel_r - 0.75).abs() < 1e-12);
        assert!(s.acc_r.abs() < 1e-12 && s.jerk_r.abs() < 1e-12);
        assert!(matches!(smoothness(&[1.0, 2.0, 3.0], 1.0), Err(EvalError::Geom(GeomError::SeriesTooShort { .. }))));
    }

    #[test]
    fn report_csv_layout() {
        let rows = vec![ClipRow::from_series("target-00", &[0.1, 0.2, 0.3, 0.4], 1.0).unwrap()];
        let rep = EvalReport::new("m", "abc", &[1, 2], 1.0, rows).unwrap();
        let csv = rep.to_csv();
        assert!(csv.starts_with("# config_hash=abc\n# seeds=1 2\n"));
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 3);
        assert!(csv.contains("m,aggregate,"));
        assert!(rep.to_json().contains("\"config_hash\": \"abc\""));
    }

    #[test]
    fn profiles_need_input() {
        assert!(matches!(export_profile(&[], 100), Err(EvalError::EmptyInput)));
        let band = export_profile(&[vec![1.0, 2.0, 3.0]], 100).unwrap();
        assert!(band.sd.iter().all(|s| *s == 0.0));
        let twin = export_profile(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]], 100).unwrap();
        assert_eq!(twin.mean, band.mean);
    }

    #[test]
    fn svg_has_one_polyline_per_series() {
        let svg = svg_line_plot("t<1>", "frame", "r", &[("a".into(), vec![0.0, 1.0, 0.5]), ("b".into(), vec![0.2; 4])]);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("t&lt;1&gt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
