use serde_json::{json, Map, Value};

use crate::geom::{self, Designated, GeomError, Hand, Joint, Pose, Rotation, Skeleton, Vec3};

use super::MocapError;

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub label: String,
    pub position: Vec3,
}

/// Ground-truth segment carried by generated clips.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Annotation {
    pub hand: Hand,
    pub onset: usize,
    pub peak_velocity: usize,
    pub hold_start: usize,
    pub offset: usize,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub id: String,
    pub skeleton: Skeleton,
    pub fps: f64,
    pub frames: Vec<Pose>,
    pub targets: Vec<Target>,
    pub annotations: Vec<Annotation>,
}

impl Clip {
    pub fn validate(&self) -> Result<(), MocapError> {
        if !(self.fps > 0.0) || !self.fps.is_finite() {
            return Err(MocapError::Schema("fps".into()));
        }
        if self.frames.len() < 2 {
            return Err(MocapError::Schema("frames".into()));
        }
        for f in &self.frames {
            if f.rotations.len() != self.skeleton.len() {
                return Err(GeomError::PoseMismatch { expected: self.skeleton.len(), got: f.rotations.len() }.into());
            }
        }
        for a in &self.annotations {
            let ordered = a.onset < a.peak_velocity
                && a.peak_velocity <= a.hold_start
                && a.hold_start < a.offset
                && a.offset <= self.frames.len();
            if !ordered || (!self.targets.is_empty() && a.target >= self.targets.len()) {
                return Err(MocapError::Schema("annotations".into()));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fps
    }

    pub fn duration(&self) -> f64 {
        (self.frames.len() - 1) as f64 / self.fps
    }

    /// World position track of one joint.
    pub fn joint_track(&self, joint: usize) -> Vec<Vec3> {
        self.frames
            .iter()
            .map(|p| geom::forward_kinematics(&self.skeleton, p).expect("validated clip")[joint])
            .collect()
    }

    /// World positions of every joint for every frame.
    pub fn positions(&self) -> Vec<Vec<Vec3>> {
        self.frames
            .iter()
            .map(|p| geom::forward_kinematics(&self.skeleton, p).expect("validated clip"))
            .collect()
    }

    /// The clip restricted to frames `[start, end)`; annotations are dropped.
    pub fn slice(&self, start: usize, end: usize) -> Clip {
        Clip {
            id: self.id.clone(),
            skeleton: self.skeleton.clone(),
            fps: self.fps,
            frames: self.frames[start..end].to_vec(),
            targets: self.targets.clone(),
            annotations: Vec::new(),
        }
    }
}

fn field<'a>(obj: &'a Map<String, Value>, name: &str, path: &str) -> Result<&'a Value, MocapError> {
    obj.get(name).ok_or_else(|| MocapError::Schema(join(path, name)))
}

fn join(path: &str, name: &str) -> String {
    if path.is_empty() {
        name.to_string()
    } else {
        format!("{path}.{name}")
    }
}

fn as_f64(v: &Value, path: &str) -> Result<f64, MocapError> {
    v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| MocapError::Schema(path.to_string()))
}

fn as_array<'a>(v: &'a Value, path: &str) -> Result<&'a Vec<Value>, MocapError> {
    v.as_array().ok_or_else(|| MocapError::Schema(path.to_string()))
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a Map<String, Value>, MocapError> {
    v.as_object().ok_or_else(|| MocapError::Schema(path.to_string()))
}

fn as_vec3(v: &Value, path: &str) -> Result<Vec3, MocapError> {
    let a = as_array(v, path)?;
    if a.len() != 3 {
        return Err(MocapError::Schema(path.to_string()));
    }
    Ok(Vec3::new(as_f64(&a[0], path)?, as_f64(&a[1], path)?, as_f64(&a[2], path)?))
}

fn as_quat(v: &Value, path: &str) -> Result<Rotation, MocapError> {
    let a = as_array(v, path)?;
    if a.len() != 4 {
        return Err(MocapError::Schema(path.to_string()));
    }
    let c: Vec<f64> = a.iter().map(|x| as_f64(x, path)).collect::<Result<_, _>>()?;
    let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2] + c[3] * c[3]).sqrt();
    if (n - 1.0).abs() > 1e-6 {
        return Err(MocapError::Schema(path.to_string()));
    }
    Ok(Rotation::from_wxyz(c[0], c[1], c[2], c[3]))
}

fn as_index(v: &Value, path: &str) -> Result<usize, MocapError> {
    v.as_u64().map(|x| x as usize).ok_or_else(|| MocapError::Schema(path.to_string()))
}

/// Parses the native annotated clip document. Lengths given in millimeters
/// (`"units": "mm"`) are converted to meters.
pub fn parse_clip_json(text: &str) -> Result<Clip, MocapError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| MocapError::Json(e.to_string()))?;
    let root = as_object(&doc, "document")?;
    let id = match root.get("id") {
        Some(v) => v.as_str().ok_or_else(|| MocapError::Schema("id".into()))?.to_string(),
        None => String::new(),
    };
    let fps = as_f64(field(root, "fps", "")?, "fps")?;
    if fps <= 0.0 {
        return Err(MocapError::Schema("fps".into()));
    }
    let scale = match field(root, "units", "")?.as_str() {
        Some("m") => 1.0,
        Some("mm") => 1e-3,
        _ => return Err(MocapError::Schema("units".into())),
    };

    let skel_obj = as_object(field(root, "skeleton", "")?, "skeleton")?;
    let joints_v = as_array(field(skel_obj, "joints", "skeleton")?, "skeleton.joints")?;
    let mut joints = Vec::with_capacity(joints_v.len());
    for (i, jv) in joints_v.iter().enumerate() {
        let path = format!("skeleton.joints[{i}]");
        let jo = as_object(jv, &path)?;
        let name = field(jo, "name", &path)?
            .as_str()
            .ok_or_else(|| MocapError::Schema(join(&path, "name")))?
            .to_string();
        let parent = match field(jo, "parent", &path)? {
            Value::Null => None,
            v => Some(as_index(v, &join(&path, "parent"))?),
        };
        let offset = as_vec3(field(jo, "offset", &path)?, &join(&path, "offset"))? * scale;
        joints.push(Joint { name, parent, offset });
    }
    let skeleton = match skel_obj.get("designated") {
        Some(d) => {
            let designated: Designated =
                serde_json::from_value(d.clone()).map_err(|_| MocapError::Schema("skeleton.designated".into()))?;
            Skeleton::new(joints, designated)?
        }
        None => Skeleton::with_named_arms(joints)?,
    };

    let frames_v = as_array(field(root, "frames", "")?, "frames")?;
    let mut frames = Vec::with_capacity(frames_v.len());
    for (i, fv) in frames_v.iter().enumerate() {
        let path = format!("frames[{i}]");
        let fo = as_object(fv, &path)?;
        let root_pos = as_vec3(field(fo, "root", &path)?, &join(&path, "root"))? * scale;
        let rots_v = as_array(field(fo, "rotations", &path)?, &join(&path, "rotations"))?;
        let rotations = rots_v
            .iter()
            .enumerate()
            .map(|(k, q)| as_quat(q, &format!("{path}.rotations[{k}]")))
            .collect::<Result<Vec<_>, _>>()?;
        if rotations.len() != skeleton.len() {
            return Err(MocapError::Schema(join(&path, "rotations")));
        }
        frames.push(Pose { root: root_pos, rotations });
    }

    let mut targets = Vec::new();
    if let Some(tv) = root.get("targets") {
        for (i, t) in as_array(tv, "targets")?.iter().enumerate() {
            let path = format!("targets[{i}]");
            let to = as_object(t, &path)?;
            let label = field(to, "label", &path)?
                .as_str()
                .ok_or_else(|| MocapError::Schema(join(&path, "label")))?
                .to_string();
            let position = as_vec3(field(to, "position", &path)?, &join(&path, "position"))? * scale;
            targets.push(Target { label, position });
        }
    }

    let annotations = match root.get("annotations") {
        None | Some(Value::Null) => Vec::new(),
        Some(v) => serde_json::from_value(v.clone()).map_err(|_| MocapError::Schema("annotations".into()))?,
    };

    let clip = Clip { id, skeleton, fps, frames, targets, annotations };
    clip.validate()?;
    Ok(clip)
}

pub fn clip_to_value(clip: &Clip) -> Value {
    let joints: Vec<Value> = clip
        .skeleton
        .joints()
        .iter()
        .map(|j| json!({ "name": j.name, "parent": j.parent, "offset": j.offset.to_array() }))
        .collect();
    let frames: Vec<Value> = clip
        .frames
        .iter()
        .map(|f| {
            json!({
                "root": f.root.to_array(),
                "rotations": f.rotations.iter().map(|r| r.wxyz()).collect::<Vec<_>>(),
            })
        })
        .collect();
    let targets: Vec<Value> = clip
        .targets
        .iter()
        .map(|t| json!({ "label": t.label, "position": t.position.to_array() }))
        .collect();
    json!({
        "id": clip.id,
        "fps": clip.fps,
        "units": "m",
        "skeleton": { "joints": joints, "designated": clip.skeleton.designated() },
        "frames": frames,
        "targets": targets,
        "annotations": clip.annotations,
    })
}

/// Serializes a clip in the native format (always in meters).
pub fn write_clip_json(clip: &Clip) -> String {
    serde_json::to_string(&clip_to_value(clip)).expect("clip serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::{standard_skeleton, STANDARD_ROOT};

    fn tiny_clip() -> Clip {
        let skeleton = standard_skeleton();
        let mut f1 = Pose::identity(&skeleton, STANDARD_ROOT);
        f1.rotations[6] = Rotation::from_rotation_vector(Vec3::new(-1.1, 0.2, 0.05));
        f1.rotations[7] = Rotation::from_axis_angle(Vec3::X, -0.4);
        Clip {
            id: "tiny".into(),
            frames: vec![Pose::identity(&skeleton, STANDARD_ROOT), f1],
            skeleton,
            fps: 120.0,
            targets: vec![Target { label: "t0".into(), position: Vec3::new(-0.4, 1.6, 0.8) }],
            annotations: vec![Annotation { hand: Hand::Right, onset: 0, peak_velocity: 1, hold_start: 1, offset: 2, target: 0 }],
        }
    }

    #[test]
    fn round_trip_is_lossless() {
        let clip = tiny_clip();
        let back = parse_clip_json(&write_clip_json(&clip)).unwrap();
        assert_eq!(back, clip);
    }

    #[test]
    fn missing_fps_names_the_field() {
        let mut v = clip_to_value(&tiny_clip());
        v.as_object_mut().unwrap().remove("fps");
        match parse_clip_json(&v.to_string()) {
            Err(MocapError::Schema(f)) => assert_eq!(f, "fps"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_nested_field_is_named() {
        let mut v = clip_to_value(&tiny_clip());
        v["frames"][1]["rotations"][2] = json!([1.0, 0.0]);
        match parse_clip_json(&v.to_string()) {
            Err(MocapError::Schema(f)) => assert_eq!(f, "frames[1].rotations[2]"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn millimeter_documents_are_converted() {
        let mut v = clip_to_value(&tiny_clip());
        v["units"] = json!("mm");
        v["targets"][0]["position"] = json!([-400.0, 1600.0, 800.0]);
        for j in v["skeleton"]["joints"].as_array_mut().unwrap() {
            let o: Vec<f64> = j["offset"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap() * 1000.0).collect();
            j["offset"] = json!(o);
        }
        for f in v["frames"].as_array_mut().unwrap() {
            f["root"] = json!([0.0, 1000.0, 0.0]);
        }
        let clip = parse_clip_json(&v.to_string()).unwrap();
        assert!((clip.targets[0].position - Vec3::new(-0.4, 1.6, 0.8)).norm() < 1e-12);
        assert!((clip.skeleton.joints()[4].offset - Vec3::new(0.0, -0.3, 0.0)).norm() < 1e-12);
        assert!((clip.frames[0].root - STANDARD_ROOT).norm() < 1e-12);
    }

    #[test]
    fn skeleton_without_designation_uses_names() {
        let mut v = clip_to_value(&tiny_clip());
        v["skeleton"].as_object_mut().unwrap().remove("designated");
        let clip = parse_clip_json(&v.to_string()).unwrap();
        assert_eq!(clip.skeleton.arm(Hand::Right).unwrap().hand, 8);
        assert_eq!(clip.skeleton.arm(Hand::Left).unwrap().shoulder, 3);
    }
}
