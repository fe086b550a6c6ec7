use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geom::{self, Hand, Rotation, Vec3};
use crate::stats::{self, MeanSd};

use super::clip::Clip;
use super::MocapError;

/// Displacement steps smaller than this are treated as flat when walking to rest or hold.
const FLAT_TOL: f64 = 1e-7;

/// Fraction of the peak speed below which the rise is considered to be settling.
pub const HOLD_SPEED_FRACTION: f64 = 0.1;

/// One pointing movement inside a clip; frames `[onset, offset)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub clip_id: String,
    pub hand: Hand,
    pub onset: usize,
    pub peak_velocity: usize,
    pub hold_start: usize,
    pub offset: usize,
    /// Frame of the displacement peak that produced the segment.
    pub peak: usize,
    pub target: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentParams {
    /// Minimum displacement peak height (m).
    pub min_peak_height: f64,
    /// Minimum peak prominence (m).
    pub min_prominence: f64,
    /// Displacement at or below which the hand is at rest (m).
    pub rest_threshold: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams { min_peak_height: 0.25, min_prominence: 0.15, rest_threshold: 0.05 }
    }
}

/// Per-frame hand displacement from its frame-0 position, projected onto the sagittal (Y–Z) plane.
pub fn sagittal_displacement(clip: &Clip, hand: Hand) -> Result<Vec<f64>, MocapError> {
    let arm = clip
        .skeleton
        .arm(hand)
        .ok_or_else(|| geom::GeomError::InvalidSkeleton(format!("no {hand} arm designated")))?;
    let track = clip.joint_track(arm.hand);
    Ok(displacement_of(&track))
}

fn displacement_of(track: &[Vec3]) -> Vec<f64> {
    let rest = track[0];
    track
        .iter()
        .map(|p| {
            let d = *p - rest;
            (d.y * d.y + d.z * d.z).sqrt()
        })
        .collect()
}

/// Hand speed per frame interval (m/s), length `frames - 1`.
pub fn speed_series(clip: &Clip, hand: Hand) -> Result<Vec<f64>, MocapError> {
    let arm = clip
        .skeleton
        .arm(hand)
        .ok_or_else(|| geom::GeomError::InvalidSkeleton(format!("no {hand} arm designated")))?;
    Ok(geom::speeds(&clip.joint_track(arm.hand), clip.dt()))
}

/// Local maxima (flat tops resolve to their middle sample) with their prominences.
fn find_peaks(x: &[f64]) -> Vec<(usize, f64)> {
    let n = x.len();
    let mut peaks = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut j = i + 1;
            while j < n && x[j] == x[i] {
                j += 1;
            }
            if j < n && x[j] < x[i] {
                let p = (i + j - 1) / 2;
                peaks.push((p, prominence(x, p)));
                i = j;
                continue;
            }
            i = j;
            continue;
        }
        i += 1;
    }
    peaks
}

fn prominence(x: &[f64], p: usize) -> f64 {
    let h = x[p];
    let mut left_min = h;
    for k in (0..p).rev() {
        if x[k] > h {
            break;
        }
        left_min = left_min.min(x[k]);
    }
    let mut right_min = h;
    for &v in &x[p + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Splits a clip into single pointing movements, one per qualifying displacement peak.
///
/// Each peak's rest crossings are followed along the monotone displacement run to the frame
/// where motion actually starts (onset) and ends (offset). The hold starts where the speed
/// has dropped below 10% of its peak and displacement stops growing.
pub fn segment_pointing(clip: &Clip, params: &SegmentParams) -> Result<Vec<Segment>, MocapError> {
    if clip.duration() < 1.0 - 1e-9 {
        return Err(MocapError::ClipTooShort(clip.duration()));
    }
    let positions = clip.positions();
    let mut segments: Vec<(Segment, f64)> = Vec::new();
    for hand in clip.skeleton.hands().collect::<Vec<_>>() {
        let arm = clip.skeleton.arm(hand).expect("designated");
        let track: Vec<Vec3> = positions.iter().map(|p| p[arm.hand]).collect();
        let disp = displacement_of(&track);
        let speed = geom::speeds(&track, clip.dt());
        let n = disp.len();
        let mut hand_segments: Vec<(Segment, f64)> = Vec::new();
        for (peak, prom) in find_peaks(&disp) {
            if disp[peak] < params.min_peak_height || prom < params.min_prominence {
                continue;
            }
            let crossing_before = (0..peak).rev().find(|&t| disp[t] <= params.rest_threshold).unwrap_or(0);
            let mut onset = crossing_before;
            while onset > 0 && disp[onset - 1] < disp[onset] - FLAT_TOL {
                onset -= 1;
            }
            let crossing_after = (peak + 1..n).find(|&t| disp[t] <= params.rest_threshold).unwrap_or(n - 1);
            let mut offset = crossing_after;
            while offset + 1 < n && disp[offset + 1] < disp[offset] - FLAT_TOL {
                offset += 1;
            }
            if onset >= peak {
                continue;
            }
            let pv = (onset..peak)
                .max_by(|&a, &b| speed[a].total_cmp(&speed[b]).then(b.cmp(&a)))
                .expect("nonempty rise");
            let settle = speed[pv] * HOLD_SPEED_FRACTION;
            let mut hold = (pv + 1..peak).find(|&t| speed[t] < settle).unwrap_or(peak);
            while hold < peak && disp[hold + 1] > disp[hold] + FLAT_TOL {
                hold += 1;
            }
            let hold = hold.max(pv + 1).min(offset.saturating_sub(1)).max(pv);
            let target = nearest_target(clip, positions[hold][arm.elbow], positions[hold][arm.hand]);
            let seg = Segment {
                clip_id: clip.id.clone(),
                hand,
                onset,
                peak_velocity: pv,
                hold_start: hold,
                offset: offset.max(hold + 1),
                peak,
                target,
            };
            match hand_segments.last_mut() {
                Some((prev, h)) if seg.onset < prev.offset => {
                    if disp[peak] > *h {
                        *prev = seg;
                        *h = disp[peak];
                    }
                }
                _ => hand_segments.push((seg, disp[peak])),
            }
        }
        segments.extend(hand_segments);
    }
    if segments.is_empty() {
        return Err(MocapError::NoMovementFound);
    }
    let mut segs: Vec<Segment> = segments.into_iter().map(|(s, _)| s).collect();
    segs.sort_by_key(|s| (s.onset, s.hand));
    Ok(segs)
}

/// Index of the target best aligned with the forearm ray, if the clip has targets.
fn nearest_target(clip: &Clip, elbow: Vec3, hand: Vec3) -> Option<usize> {
    let forearm = hand - elbow;
    clip.targets
        .iter()
        .enumerate()
        .filter_map(|(i, t)| geom::angle_between(t.position - hand, forearm).ok().map(|a| (i, a)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Timing and speed summary of one movement. Speeds are mm/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KinematicStats {
    pub duration: f64,
    pub rise_time: f64,
    pub peak_velocity: f64,
    pub mean_velocity: f64,
}

pub fn kinematic_stats(clip: &Clip, seg: &Segment) -> Result<KinematicStats, MocapError> {
    let speed = speed_series(clip, seg.hand)?;
    let whole = &speed[seg.onset..seg.offset.min(speed.len())];
    let rise = &speed[seg.onset..seg.hold_start.min(speed.len())];
    if whole.is_empty() || rise.is_empty() {
        return Err(MocapError::EmptyInput);
    }
    Ok(KinematicStats {
        duration: (seg.offset - seg.onset) as f64 / clip.fps,
        rise_time: (seg.hold_start - seg.onset) as f64 / clip.fps,
        peak_velocity: 1000.0 * whole.iter().copied().fold(f64::MIN, f64::max),
        mean_velocity: 1000.0 * stats::mean(rise),
    })
}

/// Pointing precision `1 − angle(V_HT, V_EH)/π` for each frame of the segment; frames where
/// either vector is degenerate are `None`.
pub fn precision_profile(clip: &Clip, seg: &Segment) -> Result<Vec<Option<f64>>, MocapError> {
    let target = seg
        .target
        .and_then(|i| clip.targets.get(i))
        .ok_or_else(|| MocapError::Schema("targets".into()))?
        .position;
    let arm = clip
        .skeleton
        .arm(seg.hand)
        .ok_or_else(|| geom::GeomError::InvalidSkeleton(format!("no {} arm designated", seg.hand)))?;
    Ok(clip.frames[seg.onset..seg.offset]
        .iter()
        .map(|pose| {
            let p = geom::forward_kinematics(&clip.skeleton, pose).expect("validated clip");
            crate::reward::pointing_precision(&crate::reward::ArmFrame {
                elbow: p[arm.elbow],
                hand: p[arm.hand],
                target,
            })
            .ok()
        })
        .collect())
}

/// Body-centred frame: midline plane x = 0, chest plane z = 0, heights absolute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyFrame {
    pub origin: Vec3,
    pub heading: Rotation,
    pub shoulder_height: f64,
}

impl BodyFrame {
    /// Frame taken from the clip's first pose: root projected to the floor, root heading,
    /// mean designated shoulder height.
    pub fn from_clip(clip: &Clip) -> BodyFrame {
        let pose = &clip.frames[0];
        let p = geom::forward_kinematics(&clip.skeleton, pose).expect("validated clip");
        let shoulders: Vec<f64> = clip
            .skeleton
            .hands()
            .map(|h| p[clip.skeleton.arm(h).expect("designated").shoulder].y)
            .collect();
        BodyFrame {
            origin: Vec3::new(pose.root.x, 0.0, pose.root.z),
            heading: pose.rotations[0],
            shoulder_height: stats::mean(&shoulders),
        }
    }

    pub fn to_body(&self, world: Vec3) -> Vec3 {
        self.heading.conjugate().rotate(world - self.origin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Octant {
    pub front: bool,
    pub top: bool,
    pub left: bool,
}

impl Octant {
    /// All cells in table order: top row then bottom row, each Front-Left, Front-Right,
    /// Back-Left, Back-Right.
    pub const ALL: [Octant; 8] = [
        Octant { front: true, top: true, left: true },
        Octant { front: true, top: true, left: false },
        Octant { front: false, top: true, left: true },
        Octant { front: false, top: true, left: false },
        Octant { front: true, top: false, left: true },
        Octant { front: true, top: false, left: false },
        Octant { front: false, top: false, left: true },
        Octant { front: false, top: false, left: false },
    ];

    pub fn index(self) -> usize {
        (!self.top as usize) * 4 + (!self.front as usize) * 2 + (!self.left as usize)
    }
}

impl fmt::Display for Octant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}-{}-{}",
            if self.front { "Front" } else { "Back" },
            if self.top { "Top" } else { "Bottom" },
            if self.left { "Left" } else { "Right" }
        )
    }
}

/// Classifies a world-space target. Ties go to Right, Bottom and Front.
pub fn classify_octant(target: Vec3, body: &BodyFrame) -> Octant {
    let p = body.to_body(target);
    Octant { front: p.z >= 0.0, top: p.y > body.shoulder_height, left: p.x > 0.0 }
}

/// Counts per octant in table order (see [`Octant::ALL`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OctantTable {
    pub counts: [usize; 8],
}

impl OctantTable {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn get(&self, o: Octant) -> usize {
        self.counts[o.index()]
    }

    /// CSV in the layout `row,front_left,front_right,back_left,back_right`.
    pub fn to_csv(&self) -> String {
        let c = &self.counts;
        format!(
            "row,front_left,front_right,back_left,back_right\ntop,{},{},{},{}\nbottom,{},{},{},{}\n",
            c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]
        )
    }
}

pub fn count_octants(octants: impl IntoIterator<Item = Octant>) -> OctantTable {
    let mut t = OctantTable::default();
    for o in octants {
        t.counts[o.index()] += 1;
    }
    t
}

/// Per-bin mean and sample sd of a set of time-normalized series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileBand {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl ProfileBand {
    pub fn of(series: &[Vec<f64>], bins: usize) -> Result<ProfileBand, MocapError> {
        if series.is_empty() || series.iter().any(|s| s.is_empty()) {
            return Err(MocapError::EmptyInput);
        }
        let resampled: Vec<Vec<f64>> = series.iter().map(|s| stats::resample(s, bins)).collect();
        let (mean, sd) = (0..bins)
            .map(|b| {
                let col: Vec<f64> = resampled.iter().map(|r| r[b]).collect();
                let m = MeanSd::of(&col);
                (m.mean, m.sd)
            })
            .unzip();
        Ok(ProfileBand { mean, sd })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin,mean,sd\n");
        for (i, (m, s)) in self.mean.iter().zip(&self.sd).enumerate() {
            out.push_str(&format!("{i},{m},{s}\n"));
        }
        out
    }
}

/// Hand-speed profile (m/s) across segments, each resampled to `bins` points over `[onset, offset)`.
pub fn velocity_profile(items: &[(&Clip, &Segment)], bins: usize) -> Result<ProfileBand, MocapError> {
    let series = items
        .iter()
        .map(|(clip, seg)| {
            let s = speed_series(clip, seg.hand)?;
            Ok(s[seg.onset..seg.offset.min(s.len())].to_vec())
        })
        .collect::<Result<Vec<_>, MocapError>>()?;
    ProfileBand::of(&series, bins)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::{standard_skeleton, ArmModel, STANDARD_ROOT};
    use crate::geom::Pose;
    use crate::mocap::Target;

    /// Clip whose right hand follows `track` (elbow down), 120 fps.
    fn clip_from_track(track: &[Vec3]) -> Clip {
        let skel = standard_skeleton();
        let rest = Pose::identity(&skel, STANDARD_ROOT);
        let arm = ArmModel::new(&skel, &rest, Hand::Right).unwrap();
        let frames = track
            .iter()
            .map(|h| {
                let (e, h) = arm.solve(*h, 0.0);
                let mut p = rest.clone();
                arm.apply(&mut p, arm.angles_from_points(e, h));
                p
            })
            .collect();
        Clip {
            id: "t".into(),
            skeleton: skel,
            fps: 120.0,
            frames,
            targets: vec![Target { label: "t".into(), position: Vec3::new(-0.5, 1.5, 1.0) }],
            annotations: vec![],
        }
    }

    fn rest_hand() -> Vec3 {
        Vec3::new(-0.18, 0.88, 0.0)
    }

    #[test]
    fn stationary_hand_has_zero_displacement() {
        let clip = clip_from_track(&vec![rest_hand(); 10]);
        assert!(sagittal_displacement(&clip, Hand::Right).unwrap().iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn lateral_motion_projects_away() {
        let start = Vec3::new(-0.18, 1.0, 0.3);
        let track: Vec<Vec3> = (0..10).map(|i| start + Vec3::new(0.01 * i as f64, 0.0, 0.0)).collect();
        let clip = clip_from_track(&track);
        let d = sagittal_displacement(&clip, Hand::Right).unwrap();
        assert!(d.iter().all(|v| v.abs() < 1e-9), "{d:?}");
    }

    #[test]
    fn raised_hand_displacement() {
        let start = Vec3::new(-0.18, 1.0, 0.3);
        let track: Vec<Vec3> = (0..=4).map(|i| start + Vec3::new(0.0, 0.1 * i as f64, 0.0)).collect();
        let clip = clip_from_track(&track);
        let d = sagittal_displacement(&clip, Hand::Right).unwrap();
        assert!((d[4] - 0.4).abs() < 1e-9, "{}", d[4]);
    }

    #[test]
    fn idle_clip_has_no_movement() {
        let clip = clip_from_track(&vec![rest_hand(); 240]);
        assert_eq!(segment_pointing(&clip, &SegmentParams::default()), Err(MocapError::NoMovementFound));
    }

    #[test]
    fn short_clip_is_rejected() {
        let clip = clip_from_track(&vec![rest_hand(); 60]);
        assert!(matches!(segment_pointing(&clip, &SegmentParams::default()), Err(MocapError::ClipTooShort(_))));
    }

    #[test]
    fn constant_speed_rise_stats() {
        // 0.5 s idle, rise at 1 m/s for 0.5 s, hold 0.5 s, fall at 1 m/s, idle
        let fps = 120.0;
        let dir = Vec3::new(0.0, 0.6, 0.8);
        let mut track = vec![rest_hand(); 60];
        for k in 1..=60 {
            track.push(rest_hand() + dir * (k as f64 / fps));
        }
        let top = *track.last().unwrap();
        track.extend(std::iter::repeat(top).take(60));
        for k in 1..=60 {
            track.push(top - dir * (k as f64 / fps));
        }
        track.extend(std::iter::repeat(rest_hand()).take(60));
        let clip = clip_from_track(&track);
        let segs = segment_pointing(&clip, &SegmentParams::default()).unwrap();
        assert_eq!(segs.len(), 1);
        let s = &segs[0];
        assert_eq!((s.onset, s.hold_start, s.offset), (59, 119, 239));
        let k = kinematic_stats(&clip, s).unwrap();
        assert!((k.peak_velocity - 1000.0).abs() < 1e-4, "{k:?}");
        assert!((k.mean_velocity - 1000.0).abs() < 1e-4, "{k:?}");
        assert!((k.rise_time - 0.5).abs() < 1e-12);
        assert!((k.duration - 1.5).abs() < 1e-12);
    }

    #[test]
    fn peak_finder_handles_plateaus() {
        let x = [0.0, 1.0, 2.0, 2.0, 2.0, 1.0, 0.0, 3.0, 0.0];
        let p = find_peaks(&x);
        assert_eq!(p, vec![(3, 2.0), (7, 3.0)]);
    }

    #[test]
    fn octant_examples() {
        let body = BodyFrame { origin: Vec3::ZERO, heading: Rotation::IDENTITY, shoulder_height: 1.45 };
        assert_eq!(classify_octant(Vec3::new(0.3, 1.65, 0.5), &body).to_string(), "Front-Top-Left");
        assert_eq!(classify_octant(Vec3::new(-0.3, 1.25, -0.5), &body).to_string(), "Back-Bottom-Right");
        assert_eq!(classify_octant(Vec3::new(0.0, 1.45, 0.0), &body).to_string(), "Front-Bottom-Right");
    }

    #[test]
    fn octant_table_layout() {
        let t = count_octants(Octant::ALL.iter().enumerate().flat_map(|(i, o)| std::iter::repeat(*o).take(i + 1)));
        assert_eq!(t.counts, [1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(t.total(), 36);
        for (i, o) in Octant::ALL.iter().enumerate() {
            assert_eq!(o.index(), i);
        }
    }

    #[test]
    fn profile_band_statistics() {
        let b = ProfileBand::of(&[vec![0.5; 30]], 100).unwrap();
        assert!(b.sd.iter().all(|s| *s == 0.0));
        let b = ProfileBand::of(&[vec![0.5; 30], vec![1.5; 50]], 100).unwrap();
        assert!(b.mean.iter().all(|m| (m - 1.0).abs() < 1e-12));
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.1).sin()).collect();
        let b = ProfileBand::of(&[x.clone(), x], 100).unwrap();
        assert!(b.sd.iter().all(|s| *s == 0.0));
        assert!(ProfileBand::of(&[], 10).is_err());
    }
}
