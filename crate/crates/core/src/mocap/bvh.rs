//! BVH (Biovision hierarchy) reader.
//!
//! Euler rotation channels are composed in their declared order, `R = R_1 · R_2 · R_3`.
//! End sites are not turned into joints. Translation channels on non-root joints are
//! accepted but ignored: the skeleton offsets stay authoritative.

use crate::geom::{Joint, Pose, Rotation, Skeleton, Vec3};

use super::clip::Clip;
use super::MocapError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Channel {
    Position(Axis),
    Rotation(Axis),
}

impl Channel {
    fn parse(token: &str) -> Option<Channel> {
        let lower = token.to_ascii_lowercase();
        let axis = lower.get(..1)?;
        let kind = lower.get(1..)?;
        let axis = match axis {
            "x" => Axis::X,
            "y" => Axis::Y,
            "z" => Axis::Z,
            _ => return None,
        };
        match kind {
            "position" => Some(Channel::Position(axis)),
            "rotation" => Some(Channel::Rotation(axis)),
            _ => None,
        }
    }
}

/// Length unit of a BVH file; everything is converted to meters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LengthUnit {
    Meters,
    #[default]
    Centimeters,
    Millimeters,
}

impl LengthUnit {
    pub fn to_meters(self) -> f64 {
        match self {
            LengthUnit::Meters => 1.0,
            LengthUnit::Centimeters => 0.01,
            LengthUnit::Millimeters => 0.001,
        }
    }
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Tokens { items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or_else(|| self.items.last())
            .map(|(l, _)| *l)
            .unwrap_or(1)
    }

    fn err(&self, msg: impl Into<String>) -> MocapError {
        MocapError::Parse { line: self.line(), message: msg.into() }
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|(_, t)| *t)
    }

    fn next(&mut self) -> Result<&'a str, MocapError> {
        let t = self.peek().ok_or_else(|| self.err("unexpected end of file"))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, word: &str) -> Result<(), MocapError> {
        let line = self.line();
        let t = self.next()?;
        if t.eq_ignore_ascii_case(word) {
            Ok(())
        } else {
            Err(MocapError::Parse { line, message: format!("expected '{word}', found '{t}'") })
        }
    }

    fn number(&mut self) -> Result<f64, MocapError> {
        let line = self.line();
        let t = self.next()?;
        t.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| MocapError::Parse { line, message: format!("expected a number, found '{t}'") })
    }
}

struct RawJoint {
    name: String,
    parent: Option<usize>,
    offset: Vec3,
    channels: Vec<Channel>,
}

fn parse_joint(tok: &mut Tokens, parent: Option<usize>, out: &mut Vec<RawJoint>) -> Result<(), MocapError> {
    let name = tok.next()?.to_string();
    tok.expect("{")?;
    tok.expect("OFFSET")?;
    let offset = Vec3::new(tok.number()?, tok.number()?, tok.number()?);
    let index = out.len();
    out.push(RawJoint { name, parent, offset, channels: Vec::new() });
    if tok.peek().is_some_and(|t| t.eq_ignore_ascii_case("CHANNELS")) {
        tok.next()?;
        let line = tok.line();
        let n = tok.number()?;
        if n < 0.0 || n.fract() != 0.0 {
            return Err(MocapError::Parse { line, message: "invalid channel count".into() });
        }
        for _ in 0..n as usize {
            let line = tok.line();
            let t = tok.next()?;
            let ch = Channel::parse(t).ok_or_else(|| {
                if t == "}" || t.eq_ignore_ascii_case("JOINT") {
                    MocapError::Parse { line, message: "fewer channels than declared".into() }
                } else {
                    MocapError::UnsupportedChannel { line, channel: t.to_string() }
                }
            })?;
            out[index].channels.push(ch);
        }
    }
    loop {
        let line = tok.line();
        match tok.next()? {
            "}" => return Ok(()),
            t if t.eq_ignore_ascii_case("JOINT") => parse_joint(tok, Some(index), out)?,
            t if t.eq_ignore_ascii_case("End") => {
                tok.expect("Site")?;
                tok.expect("{")?;
                tok.expect("OFFSET")?;
                for _ in 0..3 {
                    tok.number()?;
                }
                tok.expect("}")?;
            }
            t if t.eq_ignore_ascii_case("MOTION") => {
                return Err(MocapError::Parse { line, message: "unbalanced braces before MOTION".into() })
            }
            t => return Err(MocapError::Parse { line, message: format!("unexpected token '{t}'") }),
        }
    }
}

/// Parses BVH text into a clip (no targets).
pub fn parse_bvh(text: &str, unit: LengthUnit) -> Result<Clip, MocapError> {
    let scale = unit.to_meters();
    let mut tok = Tokens::new(text);
    tok.expect("HIERARCHY")?;
    let line = tok.line();
    let root_kw = tok.next()?;
    if !root_kw.eq_ignore_ascii_case("ROOT") {
        return Err(MocapError::Parse { line, message: format!("expected 'ROOT', found '{root_kw}'") });
    }
    let mut raw = Vec::new();
    parse_joint(&mut tok, None, &mut raw)?;
    let line = tok.line();
    match tok.next() {
        Ok(t) if t.eq_ignore_ascii_case("MOTION") => {}
        Ok(t) if t == "}" => return Err(MocapError::Parse { line, message: "unbalanced braces".into() }),
        Ok(t) => return Err(MocapError::Parse { line, message: format!("expected 'MOTION', found '{t}'") }),
        Err(e) => return Err(e),
    }
    tok.expect("Frames:")?;
    let line = tok.line();
    let n_frames = tok.number()?;
    if n_frames < 0.0 || n_frames.fract() != 0.0 {
        return Err(MocapError::Parse { line, message: "invalid frame count".into() });
    }
    let n_frames = n_frames as usize;
    tok.expect("Frame")?;
    tok.expect("Time:")?;
    let line = tok.line();
    let frame_time = tok.number()?;
    if frame_time <= 0.0 {
        return Err(MocapError::Parse { line, message: "frame time must be positive".into() });
    }

    // motion rows are line-structured
    let n_channels: usize = raw.iter().map(|j| j.channels.len()).sum();
    let mut rows: Vec<(usize, Vec<&str>)> = Vec::new();
    let mut cur_line = 0;
    for &(l, t) in &tok.items[tok.pos..] {
        if l != cur_line {
            rows.push((l, Vec::new()));
            cur_line = l;
        }
        rows.last_mut().expect("row").1.push(t);
    }
    if rows.len() != n_frames {
        let line = rows.last().map(|r| r.0).unwrap_or_else(|| tok.line());
        return Err(MocapError::Parse {
            line,
            message: format!("MOTION declares {n_frames} frames but {} rows are present", rows.len()),
        });
    }

    let joints: Vec<Joint> = raw
        .iter()
        .map(|j| Joint { name: j.name.clone(), parent: j.parent, offset: j.offset * scale })
        .collect();
    let skeleton = Skeleton::with_named_arms(joints)?;
    let root_offset = raw[0].offset * scale;

    let mut frames = Vec::with_capacity(n_frames);
    for (line, row) in &rows {
        if row.len() != n_channels {
            return Err(MocapError::Parse {
                line: *line,
                message: format!("expected {n_channels} values, found {}", row.len()),
            });
        }
        let mut values = row.iter().map(|t| {
            t.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| MocapError::Parse {
                line: *line,
                message: format!("non-numeric motion value '{t}'"),
            })
        });
        let mut root = root_offset;
        let mut rotations = Vec::with_capacity(raw.len());
        for (ji, j) in raw.iter().enumerate() {
            let mut rot = Rotation::IDENTITY;
            let mut translation = Vec3::ZERO;
            let mut has_translation = false;
            for ch in &j.channels {
                let v = values.next().expect("arity checked")?;
                match ch {
                    Channel::Position(a) => {
                        has_translation = true;
                        match a {
                            Axis::X => translation.x = v * scale,
                            Axis::Y => translation.y = v * scale,
                            Axis::Z => translation.z = v * scale,
                        }
                    }
                    Channel::Rotation(a) => {
                        let axis = match a {
                            Axis::X => Vec3::X,
                            Axis::Y => Vec3::Y,
                            Axis::Z => Vec3::Z,
                        };
                        rot = rot * Rotation::from_axis_angle(axis, v.to_radians());
                    }
                }
            }
            if ji == 0 && has_translation {
                root = root_offset + translation;
            }
            rotations.push(rot);
        }
        frames.push(Pose { root, rotations });
    }

    let clip = Clip {
        id: String::new(),
        skeleton,
        fps: 1.0 / frame_time,
        frames,
        targets: Vec::new(),
        annotations: Vec::new(),
    };
    clip.validate()?;
    Ok(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{forward_kinematics, Hand};

    const FIXTURE: &str = "HIERARCHY
ROOT RightArm
{
  OFFSET 0.0 150.0 0.0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  JOINT RightForeArm
  {
    OFFSET 0.0 -30.0 0.0
    CHANNELS 3 Zrotation Xrotation Yrotation
    JOINT RightHand
    {
      OFFSET 0.0 -25.0 0.0
      CHANNELS 3 Zrotation Xrotation Yrotation
      End Site
      {
        OFFSET 0.0 -8.0 0.0
      }
    }
  }
}
MOTION
Frames: 2
Frame Time: 0.008333333
0 0 0 0 0 0 0 0 0 0 0 0
10 0 0 90 0 0 -90 0 0 0 0 0
";

    #[test]
    fn fixture_parses_with_known_values() {
        let clip = parse_bvh(FIXTURE, LengthUnit::Centimeters).unwrap();
        assert_eq!(clip.skeleton.len(), 3);
        assert_eq!(clip.frames.len(), 2);
        assert!((clip.fps - 120.0).abs() < 1e-4);
        assert_eq!(clip.skeleton.arm(Hand::Right).unwrap().hand, 2);
        assert!(clip.skeleton.arm(Hand::Left).is_none());
        assert!((clip.skeleton.joints()[1].offset - Vec3::new(0.0, -0.3, 0.0)).norm() < 1e-12);

        let p0 = forward_kinematics(&clip.skeleton, &clip.frames[0]).unwrap();
        assert!((p0[2] - Vec3::new(0.0, 0.95, 0.0)).norm() < 1e-12);
        // frame 1: root shifted 0.1 m along x, rotated +90° about z, elbow −90° about z
        let p1 = forward_kinematics(&clip.skeleton, &clip.frames[1]).unwrap();
        assert!((p1[0] - Vec3::new(0.1, 1.5, 0.0)).norm() < 1e-12);
        assert!((p1[1] - Vec3::new(0.4, 1.5, 0.0)).norm() < 1e-12, "{}", p1[1]);
        assert!((p1[2] - Vec3::new(0.4, 1.25, 0.0)).norm() < 1e-12, "{}", p1[2]);
    }

    #[test]
    fn zero_rotations_give_identity() {
        let clip = parse_bvh(FIXTURE, LengthUnit::Centimeters).unwrap();
        assert!(clip.frames[0].rotations.iter().all(|r| *r == Rotation::IDENTITY));
    }

    #[test]
    fn euler_order_follows_declaration() {
        let text = FIXTURE.replace(
            "10 0 0 90 0 0 -90 0 0 0 0 0",
            "0 0 0 90 90 0 0 0 0 0 0 0",
        );
        let clip = parse_bvh(&text, LengthUnit::Centimeters).unwrap();
        let expect = Rotation::from_axis_angle(Vec3::Z, std::f64::consts::FRAC_PI_2)
            * Rotation::from_axis_angle(Vec3::X, std::f64::consts::FRAC_PI_2);
        assert!(clip.frames[1].rotations[0].geodesic(expect) < 1e-9);
    }

    #[test]
    fn frame_count_mismatch_is_a_parse_error() {
        let text = FIXTURE.replace("Frames: 2", "Frames: 3");
        match parse_bvh(&text, LengthUnit::Centimeters) {
            Err(MocapError::Parse { line, .. }) => assert_eq!(line, 25),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn row_arity_and_numbers_are_checked() {
        let short = FIXTURE.replace("10 0 0 90 0 0 -90 0 0 0 0 0", "10 0 0 90 0 0 -90 0 0 0 0");
        assert!(matches!(parse_bvh(&short, LengthUnit::Centimeters), Err(MocapError::Parse { line: 25, .. })));
        let nan = FIXTURE.replace("10 0 0 90", "10 0 abc 90");
        assert!(matches!(parse_bvh(&nan, LengthUnit::Centimeters), Err(MocapError::Parse { line: 25, .. })));
    }

    #[test]
    fn unbalanced_braces_are_reported() {
        let text = FIXTURE.replacen("  }\n}\nMOTION", "}\nMOTION", 1);
        assert!(matches!(parse_bvh(&text, LengthUnit::Centimeters), Err(MocapError::Parse { .. })));
        let extra = FIXTURE.replace("}\nMOTION", "}\n}\nMOTION");
        assert!(matches!(parse_bvh(&extra, LengthUnit::Centimeters), Err(MocapError::Parse { .. })));
    }

    #[test]
    fn unknown_channel_is_unsupported() {
        let text = FIXTURE.replace("CHANNELS 3 Zrotation Xrotation Yrotation\n    JOINT", "CHANNELS 3 Zrotation Xrotation Wrotation\n    JOINT");
        assert!(matches!(parse_bvh(&text, LengthUnit::Centimeters), Err(MocapError::UnsupportedChannel { .. })));
    }

    #[test]
    fn ten_declared_nine_supplied() {
        let mut text = String::from(FIXTURE.split("MOTION").next().unwrap());
        text.push_str("MOTION\nFrames: 10\nFrame Time: 0.01\n");
        for _ in 0..9 {
            text.push_str("0 0 0 0 0 0 0 0 0 0 0 0\n");
        }
        assert!(matches!(parse_bvh(&text, LengthUnit::Centimeters), Err(MocapError::Parse { .. })));
    }
}
