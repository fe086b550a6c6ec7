//! Command implementations behind the `deixis` binary. Each command reads an
//! [`ExperimentConfig`], writes its outputs plus a config snapshot into one directory and
//! maps failures onto exit codes (see [`CliError::exit_code`]).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use deixis_core::arm::standard_skeleton;
use deixis_core::env::EnvConfig;
use deixis_core::eval::{
    self, compare_models, episode_profiles, reward_table_csv, smoothness_table_csv, svg_line_plot, EvalError,
    EvalParams, Model,
};
use deixis_core::geom::{Hand, Vec3};
use deixis_core::learn::{curves_to_csv, disc_curves_to_csv, train, Checkpoint, LearnError, Mode, TrainConfig};
use deixis_core::mocap::{
    classify_octant, count_octants, kinematic_stats, parse_bvh, parse_clip_json, segment_pointing,
    velocity_profile, write_clip_json, BodyFrame, Clip, KinematicStats, LengthUnit, MocapError, Segment,
    SegmentParams,
};
use deixis_core::stats::MeanSd;
use deixis_core::synth::{body_frame, derive_seed, generate_corpus, generate_pointing_clip, OctantWeights, SynthParams};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid input, configuration or checkpoint.
    #[error("{0}")]
    Input(String),
    /// The command ran but produced nothing.
    #[error("{0}")]
    Empty(String),
    /// Training diverged.
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Empty(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

/// Corpus shape for `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub n: usize,
    pub weights: OctantWeights,
    /// Explicit targets (one clip each, hand chosen by side); overrides `n` and `weights`.
    pub targets: Vec<Vec3>,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { n: 83, weights: OctantWeights::default(), targets: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Environment, including the reward configuration.
    pub env: EnvConfig,
    pub train: TrainConfig,
    /// Base clip parameters; corpus clips override target, hand and seed.
    pub synth: SynthParams,
    pub corpus: CorpusConfig,
    pub segment: SegmentParams,
    pub eval: EvalParams,
    pub out: Option<PathBuf>,
    /// Experiment seed: corpus sampling and training.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            env: EnvConfig::default(),
            train: TrainConfig::default(),
            synth: SynthParams::default(),
            corpus: CorpusConfig::default(),
            segment: SegmentParams::default(),
            eval: EvalParams::default(),
            out: None,
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<ExperimentConfig, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let bad = |e: serde_json::Error| CliError::Input(format!("{}: {e}", path.display()));
        let mut v: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
        // a run snapshot also records the command that produced it
        if let Some(m) = v.as_object_mut() {
            m.remove("command");
        }
        serde_json::from_value(v).map_err(bad)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.env.validate().map_err(invalid)?;
        self.train.validate().map_err(invalid)?;
        self.synth.validate().map_err(invalid)?;
        self.corpus.weights.validate().map_err(invalid)?;
        let s = &self.segment;
        if ![s.min_peak_height, s.min_prominence, s.rest_threshold].iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(CliError::Input("segment thresholds must be finite and non-negative".into()));
        }
        if self.eval.seeds.is_empty() {
            return Err(CliError::Input("eval.seeds must not be empty".into()));
        }
        if self.eval.targets.is_empty() && self.eval.held_out_count == 0 {
            return Err(CliError::Input("evaluation target set is empty".into()));
        }
        if self.eval.episode_duration.is_some_and(|d| !(d.is_finite() && d > 0.0)) {
            return Err(CliError::Input("eval.episode_duration must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn snapshot(out: &Path, cfg: &ExperimentConfig, extra: serde_json::Value) -> Result<(), CliError> {
    let mut v = serde_json::to_value(cfg).expect("config serializes");
    // Where the files land is not part of the experiment.
    if let Some(m) = v.as_object_mut() {
        m.remove("out");
    }
    v["command"] = extra;
    write(&out.join("config.json"), &(serde_json::to_string_pretty(&v).expect("json") + "\n"))
}

pub fn parse_unit(s: &str) -> Result<LengthUnit, String> {
    match s {
        "m" => Ok(LengthUnit::Meters),
        "cm" => Ok(LengthUnit::Centimeters),
        "mm" => Ok(LengthUnit::Millimeters),
        _ => Err(format!("unknown unit '{s}' (m, cm, mm)")),
    }
}

/// Reads a BVH (by extension) or native JSON clip.
pub fn load_clip(path: &Path, unit: LengthUnit) -> Result<Clip, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let is_bvh = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("bvh"));
    let parsed = if is_bvh { parse_bvh(&text, unit) } else { parse_clip_json(&text) };
    parsed.map_err(|e| match e {
        MocapError::Parse { line, message } => CliError::Input(format!("{}:{line}: {message}", path.display())),
        MocapError::UnsupportedChannel { line, channel } => {
            CliError::Input(format!("{}:{line}: unsupported channel '{channel}'", path.display()))
        }
        other => CliError::Input(format!("{}: {other}", path.display())),
    })
}

/// Expands directories into their clip files: the files listed by a synth
/// `manifest.json` when present, otherwise every `.bvh`/`.json` file (sorted). Plain files
/// pass through.
pub fn collect_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for p in inputs {
        if !p.is_dir() {
            files.push(p.clone());
            continue;
        }
        let manifest = p.join("manifest.json");
        if manifest.is_file() {
            let text = fs::read_to_string(&manifest).map_err(|e| io_err(&manifest, e))?;
            let m: Manifest =
                serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", manifest.display())))?;
            files.extend(m.clips.iter().filter_map(|c| c.file.as_ref()).map(|f| p.join(f)));
            continue;
        }
        let mut found: Vec<PathBuf> = fs::read_dir(p)
            .map_err(|e| io_err(p, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|f| {
                f.is_file() && f.extension().is_some_and(|e| e.eq_ignore_ascii_case("bvh") || e.eq_ignore_ascii_case("json"))
            })
            .collect();
        found.sort();
        files.extend(found);
    }
    Ok(files)
}

#[derive(Debug, Clone, Serialize)]
pub struct SegmentRecord {
    pub segment: Segment,
    pub stats: KinematicStats,
    pub octant: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SegmentSummary {
    pub clips: usize,
    pub segments: Vec<SegmentRecord>,
}

/// Segments every input clip and writes `segments.json`, `stats.csv`, `handedness.csv`,
/// `octants.csv` and (when anything was found) the velocity and precision profiles.
pub fn cmd_segment(
    inputs: &[PathBuf],
    unit: LengthUnit,
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<SegmentSummary, CliError> {
    cfg.validate()?;
    let files = collect_inputs(inputs)?;
    if files.is_empty() {
        return Err(CliError::Input("no input clips".into()));
    }
    let mut clips = Vec::new();
    for f in &files {
        clips.push(load_clip(f, unit)?);
    }
    let mut found: Vec<(usize, Segment)> = Vec::new();
    for (i, clip) in clips.iter().enumerate() {
        match segment_pointing(clip, &cfg.segment) {
            Ok(segs) => found.extend(segs.into_iter().map(|s| (i, s))),
            Err(MocapError::NoMovementFound | MocapError::ClipTooShort(_)) => {}
            Err(e) => return Err(CliError::Input(format!("{}: {e}", files[i].display()))),
        }
    }
    let mut records = Vec::new();
    let mut octants = Vec::new();
    for (i, seg) in &found {
        let clip = &clips[*i];
        let stats = kinematic_stats(clip, seg).map_err(invalid)?;
        let octant = seg
            .target
            .and_then(|t| clip.targets.get(t))
            .map(|t| classify_octant(t.position, &BodyFrame::from_clip(clip)));
        octants.extend(octant);
        records.push(SegmentRecord { segment: seg.clone(), stats, octant: octant.map(|o| o.to_string()) });
    }

    write(&out.join("segments.json"), &(serde_json::to_string_pretty(&records).expect("json") + "\n"))?;
    let mut csv = String::from("clip,hand,onset,peak_velocity_frame,hold_start,offset,octant,duration,rise_time,peak_velocity,mean_velocity\n");
    for r in &records {
        let s = &r.segment;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.clip_id,
            s.hand,
            s.onset,
            s.peak_velocity,
            s.hold_start,
            s.offset,
            r.octant.as_deref().unwrap_or(""),
            r.stats.duration,
            r.stats.rise_time,
            r.stats.peak_velocity,
            r.stats.mean_velocity
        );
    }
    write(&out.join("stats.csv"), &csv)?;
    write(&out.join("handedness.csv"), &handedness_csv(&records))?;
    write(&out.join("octants.csv"), &count_octants(octants).to_csv())?;
    snapshot(out, cfg, json!({ "name": "segment", "inputs": files }))?;

    if records.is_empty() {
        return Err(CliError::Empty("no pointing movement found".into()));
    }
    let items: Vec<(&Clip, &Segment)> = found.iter().map(|(i, s)| (&clips[*i], s)).collect();
    let vel = velocity_profile(&items, eval::PROFILE_BINS).map_err(invalid)?;
    write(&out.join("velocity_profile.csv"), &vel.to_csv())?;
    let targeted: Vec<(&Clip, &Segment)> = items.iter().copied().filter(|(_, s)| s.target.is_some()).collect();
    if !targeted.is_empty() {
        let prec = eval::precision_profile_band(&targeted, eval::PROFILE_BINS).map_err(invalid)?;
        write(&out.join("precision_profile.csv"), &prec.to_csv())?;
    }
    Ok(SegmentSummary { clips: clips.len(), segments: records })
}

/// Per-hand segment counts and kinematic summaries (mean ± sample sd).
fn handedness_csv(records: &[SegmentRecord]) -> String {
    let mut csv = String::from("hand,count,duration_s,rise_time_s,peak_velocity_mm_s,mean_velocity_mm_s\n");
    for hand in [Hand::Right, Hand::Left] {
        let rows: Vec<&KinematicStats> = records.iter().filter(|r| r.segment.hand == hand).map(|r| &r.stats).collect();
        if rows.is_empty() {
            let _ = writeln!(csv, "{hand},0,,,,");
            continue;
        }
        let col = |f: fn(&KinematicStats) -> f64| MeanSd::of(&rows.iter().map(|s| f(s)).collect::<Vec<_>>());
        let _ = writeln!(
            csv,
            "{hand},{},{},{},{},{}",
            rows.len(),
            col(|s| s.duration),
            col(|s| s.rise_time),
            col(|s| s.peak_velocity),
            col(|s| s.mean_velocity)
        );
    }
    csv
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub file: Option<String>,
    pub hand: Hand,
    pub target: Vec3,
    pub octant: String,
    pub annotation: Option<deixis_core::mocap::Annotation>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub clips: Vec<ManifestEntry>,
}

/// Generates the configured corpus into `<out>/clips/` with `manifest.json`.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<Manifest, CliError> {
    cfg.validate()?;
    let skel = standard_skeleton();
    let body = body_frame(&skel);
    let mut results: Vec<(String, Hand, Vec3, Result<Clip, String>)> = Vec::new();
    if cfg.corpus.targets.is_empty() {
        let corpus =
            generate_corpus(&skel, cfg.corpus.n, &cfg.corpus.weights, &cfg.synth, cfg.seed).map_err(invalid)?;
        for clip in corpus {
            let hand = clip.annotations[0].hand;
            let target = clip.targets[0].position;
            results.push((clip.id.clone(), hand, target, Ok(clip)));
        }
    } else {
        for (i, t) in cfg.corpus.targets.iter().enumerate() {
            let hand = if body.to_body(*t).x > 0.0 { Hand::Left } else { Hand::Right };
            let params = SynthParams { target: *t, hand, seed: derive_seed(cfg.seed, i as u64), ..cfg.synth };
            let id = format!("clip-{i:03}");
            let clip = generate_pointing_clip(&skel, &params).map(|mut c| {
                c.id = id.clone();
                c
            });
            results.push((id, hand, *t, clip.map_err(|e| e.to_string())));
        }
    }

    let mut entries = Vec::new();
    for (id, hand, target, clip) in results {
        let octant = classify_octant(target, &body).to_string();
        match clip {
            Ok(clip) => {
                let file = format!("clips/{id}.json");
                write(&out.join(&file), &write_clip_json(&clip))?;
                entries.push(ManifestEntry {
                    id,
                    file: Some(file),
                    hand,
                    target,
                    octant,
                    annotation: clip.annotations.first().copied(),
                    error: None,
                });
            }
            Err(e) => {
                eprintln!("{id}: {e}");
                entries.push(ManifestEntry { id, file: None, hand, target, octant, annotation: None, error: Some(e) });
            }
        }
    }
    let manifest = Manifest { seed: cfg.seed, clips: entries };
    write(&out.join("manifest.json"), &(serde_json::to_string_pretty(&manifest).expect("json") + "\n"))?;
    snapshot(out, cfg, json!({ "name": "synth" }))?;
    if manifest.clips.iter().all(|c| c.error.is_some()) {
        return Err(CliError::Empty("no clip could be generated".into()));
    }
    Ok(manifest)
}

/// Loads the clips of a directory (see [`collect_inputs`]).
pub fn load_clip_dir(dir: &Path, unit: LengthUnit) -> Result<Vec<Clip>, CliError> {
    collect_inputs(&[dir.to_path_buf()])?.iter().map(|f| load_clip(f, unit)).collect()
}

fn learn_error(e: LearnError) -> CliError {
    match e {
        LearnError::NonFiniteLoss => CliError::Numeric(e.to_string()),
        other => CliError::Input(other.to_string()),
    }
}

/// Trains one model and writes `checkpoint.json`, `curves.csv` (plus `disc_curves.csv` in
/// AMP mode) and a config snapshot. A resumed run appends to the curves already in `out`.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    mode: Mode,
    clips: &[Clip],
    resume: Option<&Path>,
    out: &Path,
) -> Result<Checkpoint, CliError> {
    cfg.validate()?;
    if mode.uses_references() && clips.is_empty() {
        return Err(CliError::Input(format!("mode {mode} needs reference clips")));
    }
    let resume_ck = match resume {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            Some(Checkpoint::from_json(&text).map_err(learn_error)?)
        }
        None => None,
    };
    let train_cfg = TrainConfig { seed: cfg.seed, ..cfg.train.clone() };
    snapshot(
        out,
        cfg,
        json!({ "name": "train", "mode": mode.to_string(), "clips": clips.iter().map(|c| c.id.clone()).collect::<Vec<_>>(),
                "resume": resume.map(|p| p.display().to_string()) }),
    )?;
    let (outcome, failure) = match train(&cfg.env, &train_cfg, mode, clips, resume_ck) {
        Ok(o) => (o, None),
        Err(f) => match f.last_good {
            Some(o) => (*o, Some(f.error)),
            None => return Err(learn_error(f.error)),
        },
    };

    let previous = |name: &str| -> Vec<String> {
        if resume.is_none() {
            return Vec::new();
        }
        fs::read_to_string(out.join(name))
            .map(|s| s.lines().skip(1).map(str::to_string).collect())
            .unwrap_or_default()
    };
    let append = |name: &str, fresh: String| -> Result<(), CliError> {
        let mut lines = fresh.lines();
        let header = lines.next().unwrap_or_default().to_string();
        let mut text = header + "\n";
        for l in previous(name).into_iter().chain(lines.map(str::to_string)) {
            text.push_str(&l);
            text.push('\n');
        }
        write(&out.join(name), &text)
    };
    write(&out.join("checkpoint.json"), &outcome.checkpoint.to_json())?;
    append("curves.csv", curves_to_csv(&outcome.curves, true))?;
    if mode == Mode::Amp {
        append("disc_curves.csv", disc_curves_to_csv(&outcome.disc_curves, true))?;
    }
    match failure {
        Some(e) => Err(learn_error(e)),
        None => Ok(outcome.checkpoint),
    }
}

/// Per-model outcome of an evaluation run.
pub struct EvalSummary {
    pub reports: Vec<eval::EvalReport>,
    pub failures: Vec<(String, String)>,
}

/// Evaluates the named checkpoints (plus the expert and random baselines when
/// `baselines`) and writes the comparison tables, per-model reports, profiles and plots.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    checkpoints: &[(String, PathBuf)],
    baselines: bool,
    out: &Path,
) -> Result<EvalSummary, CliError> {
    cfg.validate()?;
    let mut failures = Vec::new();
    let mut loaded = Vec::new();
    for (name, path) in checkpoints {
        let parsed = fs::read_to_string(path)
            .map_err(|e| e.to_string())
            .and_then(|t| Checkpoint::from_json(&t).map_err(|e| e.to_string()));
        match parsed {
            Ok(ck) => loaded.push((name.clone(), ck)),
            Err(e) => failures.push((name.clone(), format!("{}: {e}", path.display()))),
        }
    }
    let mut models: Vec<Model<'_>> =
        loaded.iter().map(|(name, ck)| Model::Checkpoint { name: name.clone(), checkpoint: ck }).collect();
    if baselines {
        models.push(Model::Expert);
        models.push(Model::Random);
    }
    if models.is_empty() && failures.is_empty() {
        return Err(CliError::Input("nothing to evaluate".into()));
    }

    let env = eval::eval_env(&cfg.env, &cfg.eval).map_err(eval_error)?;
    let targets = eval::resolve_targets(&env, &cfg.eval).map_err(eval_error)?;
    let params = EvalParams { targets: targets.clone(), ..cfg.eval.clone() };
    let runs = compare_models(&models, &cfg.env, &params).map_err(eval_error)?;

    let mut reports = Vec::new();
    let mut plots: Vec<(String, Vec<(String, Vec<f64>)>)> = Vec::new();
    for (model, run) in models.iter().zip(runs) {
        let name = model.name();
        let run = match run {
            Ok(r) => r,
            Err(e) => {
                failures.push((name, e.to_string()));
                continue;
            }
        };
        write(&out.join(format!("reports/{name}.csv")), &run.report.to_csv())?;
        write(&out.join(format!("reports/{name}.json")), &(run.report.to_json() + "\n"))?;
        let trajs: Vec<_> = run.episodes.iter().map(|(_, t)| t).collect();
        let (speed, precision) = episode_profiles(&env, &trajs).map_err(eval_error)?;
        write(&out.join(format!("profiles/{name}_velocity.csv")), &speed.to_csv())?;
        write(&out.join(format!("profiles/{name}_precision.csv")), &precision.to_csv())?;
        for (k, (id, traj)) in run.episodes.iter().enumerate() {
            if plots.len() <= k {
                plots.push((id.clone(), Vec::new()));
            }
            plots[k].1.push((name.clone(), traj.goal_rewards()));
        }
        reports.push(run.report);
    }

    let mut clips_csv = String::from("model,clip,r_max,r_min,r_mean,vel_r,acc_r,jerk_r\n");
    for r in &reports {
        for row in &r.rows {
            let _ = writeln!(
                clips_csv,
                "{},{},{},{},{},{},{},{}",
                r.model, row.clip, row.r_max, row.r_min, row.r_mean, row.vel_r, row.acc_r, row.jerk_r
            );
        }
    }
    write(&out.join("clips.csv"), &clips_csv)?;
    write(&out.join("rewards.csv"), &reward_table_csv(&reports))?;
    write(&out.join("smoothness.csv"), &smoothness_table_csv(&reports))?;
    for (id, series) in &plots {
        write(&out.join(format!("plots/{id}.svg")), &svg_line_plot(id, "step", "pointing reward", series))?;
    }
    write(&out.join("targets.json"), &(serde_json::to_string_pretty(&targets).expect("json") + "\n"))?;
    snapshot(
        out,
        cfg,
        json!({ "name": "eval", "baselines": baselines,
                "checkpoints": checkpoints.iter().map(|(n, p)| json!({ "name": n, "path": p })).collect::<Vec<_>>() }),
    )?;
    for (name, e) in &failures {
        eprintln!("{name}: {e}");
    }
    Ok(EvalSummary { reports, failures })
}

fn eval_error(e: EvalError) -> CliError {
    match e {
        EvalError::EmptyInput => CliError::Input("evaluation target set is empty".into()),
        other => CliError::Input(other.to_string()),
    }
}
