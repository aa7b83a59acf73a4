//! Trajectory file parsing, window extraction, kinematic features,
//! per-sample normalization and rotation augmentation.

use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate record for pedestrian {ped} at frame {frame}")]
    Duplicate { frame: i64, ped: i64 },
    #[error("derive_kinematics needs at least 2 positions, got {0}")]
    TooFewPositions(usize),
    #[error("invalid dt {0}; must be > 0")]
    InvalidDt(f64),
    #[error("pedestrian {ped} not present at frame {frame}")]
    PedAbsent { frame: i64, ped: i64 },
}

/// Frame-indexed table of pedestrian world positions.
#[derive(Debug, Clone)]
pub struct Scene {
    pub scene_id: String,
    /// Seconds between consecutive frames.
    pub dt: f64,
    /// (frame, ped) -> world position in meters. BTreeMap keeps iteration
    /// deterministic.
    pub records: BTreeMap<(i64, i64), [f64; 2]>,
}

impl Scene {
    pub fn new(scene_id: impl Into<String>, dt: f64) -> Self {
        Scene {
            scene_id: scene_id.into(),
            dt,
            records: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, frame: i64, ped: i64, pos: [f64; 2]) -> Result<(), DataError> {
        if self.records.insert((frame, ped), pos).is_some() {
            return Err(DataError::Duplicate { frame, ped });
        }
        Ok(())
    }

    pub fn position(&self, frame: i64, ped: i64) -> Option<[f64; 2]> {
        self.records.get(&(frame, ped)).copied()
    }

    pub fn ped_ids(&self) -> Vec<i64> {
        let mut ids: Vec<i64> = self.records.keys().map(|&(_, p)| p).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn peds_at_frame(&self, frame: i64) -> Vec<i64> {
        self.records
            .range((frame, i64::MIN)..=(frame, i64::MAX))
            .map(|(&(_, p), _)| p)
            .collect()
    }

    /// Spacing between consecutive annotated frames. Public ETH/UCY files
    /// number frames in raw video frames (stride 10 at 2.5 Hz), so a
    /// pedestrian's consecutive observations differ by the scene stride,
    /// not by 1.
    pub fn frame_stride(&self) -> i64 {
        let mut frames: Vec<i64> = self.records.keys().map(|&(f, _)| f).collect();
        frames.sort_unstable();
        frames.dedup();
        frames
            .windows(2)
            .map(|w| w[1] - w[0])
            .min()
            .unwrap_or(1)
            .max(1)
    }
}

/// One timestep of a pedestrian: position, velocity, acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub acc: [f64; 2],
}

impl StateVector {
    pub fn zero() -> Self {
        StateVector {
            pos: [0.0; 2],
            vel: [0.0; 2],
            acc: [0.0; 2],
        }
    }

    pub fn to_array(self) -> [f64; 6] {
        [
            self.pos[0], self.pos[1], self.vel[0], self.vel[1], self.acc[0], self.acc[1],
        ]
    }
}

/// Anchor/scale pair used to normalize one sample: the pedestrian's last
/// observed position is the mean, the attention radius the standard
/// deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizationSpec {
    pub anchor: [f64; 2],
    pub scale: f64,
}

/// One pedestrian's observed window plus future labels.
#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub ped_id: i64,
    /// Frame index of the last observed step.
    pub t_last: i64,
    /// H observed states.
    pub obs: Vec<StateVector>,
    /// P future positions.
    pub future: Vec<[f64; 2]>,
    /// World position of the last observed step.
    pub anchor: [f64; 2],
}

/// Parse the plain-text interchange format: one record per line,
/// whitespace-separated `frame_id ped_id x y`, coordinates in meters.
pub fn parse_trajectory_file(text: &str, scene_id: &str, dt: f64) -> Result<Scene, DataError> {
    if dt <= 0.0 {
        return Err(DataError::InvalidDt(dt));
    }
    let mut scene = Scene::new(scene_id, dt);
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(DataError::Parse {
                line: line_no,
                reason: format!("expected 4 fields (frame ped x y), got {}", fields.len()),
            });
        }
        let num = |s: &str, what: &str| -> Result<f64, DataError> {
            s.parse::<f64>().map_err(|_| DataError::Parse {
                line: line_no,
                reason: format!("non-numeric {what} field '{s}'"),
            })
        };
        let frame = num(fields[0], "frame")? as i64;
        let ped = num(fields[1], "pedestrian id")? as i64;
        let x = num(fields[2], "x")?;
        let y = num(fields[3], "y")?;
        scene.insert(frame, ped, [x, y])?;
    }
    Ok(scene)
}

/// A raw window in world coordinates, before feature derivation.
#[derive(Debug, Clone)]
pub struct Window {
    pub ped_id: i64,
    pub t_last: i64,
    pub obs_pos: Vec<[f64; 2]>,
    pub fut_pos: Vec<[f64; 2]>,
}

/// Cut every H+P-consecutive-frame window, sliding by one frame. A missing
/// frame splits the track; no interpolation.
pub fn extract_windows(scene: &Scene, h: usize, p: usize) -> Vec<Window> {
    assert!(h >= 2, "observation length must be >= 2");
    assert!(p >= 1, "prediction length must be >= 1");
    let stride = scene.frame_stride();
    let mut out = Vec::new();
    for ped in scene.ped_ids() {
        let frames: Vec<i64> = scene
            .records
            .keys()
            .filter(|&&(_, pd)| pd == ped)
            .map(|&(f, _)| f)
            .collect();
        // records iterate (frame, ped) ordered, so frames are sorted.
        let need = h + p;
        for start_idx in 0..frames.len().saturating_sub(need - 1) {
            let start = frames[start_idx];
            let consecutive = (0..need)
                .all(|k| frames.get(start_idx + k) == Some(&(start + k as i64 * stride)));
            if !consecutive {
                continue;
            }
            let pos =
                |k: usize| scene.position(start + k as i64 * stride, ped).unwrap();
            out.push(Window {
                ped_id: ped,
                t_last: start + (h as i64 - 1) * stride,
                obs_pos: (0..h).map(pos).collect(),
                fut_pos: (h..need).map(pos).collect(),
            });
        }
    }
    out
}

/// Backward difference quotients; the first step replicates the first
/// computable value instead of zero-padding.
pub fn derive_kinematics(positions: &[[f64; 2]], dt: f64) -> Result<Vec<StateVector>, DataError> {
    if positions.len() < 2 {
        return Err(DataError::TooFewPositions(positions.len()));
    }
    if dt <= 0.0 {
        return Err(DataError::InvalidDt(dt));
    }
    let n = positions.len();
    let mut vel = vec![[0.0; 2]; n];
    for t in 1..n {
        vel[t] = [
            (positions[t][0] - positions[t - 1][0]) / dt,
            (positions[t][1] - positions[t - 1][1]) / dt,
        ];
    }
    vel[0] = vel[1];
    let mut acc = vec![[0.0; 2]; n];
    for t in 1..n {
        acc[t] = [(vel[t][0] - vel[t - 1][0]) / dt, (vel[t][1] - vel[t - 1][1]) / dt];
    }
    acc[0] = acc[1];
    Ok((0..n)
        .map(|t| StateVector {
            pos: positions[t],
            vel: vel[t],
            acc: acc[t],
        })
        .collect())
}

fn norm_state(s: &StateVector, spec: &NormalizationSpec) -> StateVector {
    StateVector {
        pos: [
            (s.pos[0] - spec.anchor[0]) / spec.scale,
            (s.pos[1] - spec.anchor[1]) / spec.scale,
        ],
        vel: [s.vel[0] / spec.scale, s.vel[1] / spec.scale],
        acc: [s.acc[0] / spec.scale, s.acc[1] / spec.scale],
    }
}

/// Shift positions by the anchor and divide everything by the scale.
/// Velocities and accelerations only divide: the anchor shift cancels in
/// differences.
pub fn normalize_sample(sample: &TrajectorySample, spec: &NormalizationSpec) -> TrajectorySample {
    assert!(spec.scale > 0.0, "normalization scale must be > 0");
    TrajectorySample {
        ped_id: sample.ped_id,
        t_last: sample.t_last,
        obs: sample.obs.iter().map(|s| norm_state(s, spec)).collect(),
        future: sample
            .future
            .iter()
            .map(|p| {
                [
                    (p[0] - spec.anchor[0]) / spec.scale,
                    (p[1] - spec.anchor[1]) / spec.scale,
                ]
            })
            .collect(),
        anchor: sample.anchor,
    }
}

/// Inverse of position normalization: `p_world = p_norm * scale + anchor`.
pub fn denormalize_prediction(pred: &[[f64; 2]], spec: &NormalizationSpec) -> Vec<[f64; 2]> {
    pred.iter()
        .map(|p| {
            [
                p[0] * spec.scale + spec.anchor[0],
                p[1] * spec.scale + spec.anchor[1],
            ]
        })
        .collect()
}

fn rotate2(v: [f64; 2], cos: f64, sin: f64) -> [f64; 2] {
    [v[0] * cos - v[1] * sin, v[0] * sin + v[1] * cos]
}

/// Rotate a normalized sample about the origin; positions, velocities,
/// accelerations and future labels all turn by the same angle.
pub fn rotate_augment(sample: &TrajectorySample, angle_degrees: f64) -> TrajectorySample {
    let rad = angle_degrees.to_radians();
    let (sin, cos) = rad.sin_cos();
    TrajectorySample {
        ped_id: sample.ped_id,
        t_last: sample.t_last,
        obs: sample
            .obs
            .iter()
            .map(|s| StateVector {
                pos: rotate2(s.pos, cos, sin),
                vel: rotate2(s.vel, cos, sin),
                acc: rotate2(s.acc, cos, sin),
            })
            .collect(),
        future: sample.future.iter().map(|&p| rotate2(p, cos, sin)).collect(),
        anchor: sample.anchor,
    }
}

/// Rotate an edge sequence by the same angle as its sample.
pub fn rotate_states(states: &[StateVector], angle_degrees: f64) -> Vec<StateVector> {
    let rad = angle_degrees.to_radians();
    let (sin, cos) = rad.sin_cos();
    states
        .iter()
        .map(|s| StateVector {
            pos: rotate2(s.pos, cos, sin),
            vel: rotate2(s.vel, cos, sin),
            acc: rotate2(s.acc, cos, sin),
        })
        .collect()
}

/// Dataset profile: frame interval, window lengths and attention radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetProfile {
    pub dt: f64,
    pub obs_len: usize,
    pub pred_len: usize,
    pub attention_radius: f64,
}

impl Default for DatasetProfile {
    fn default() -> Self {
        DatasetProfile {
            dt: 0.5,
            obs_len: 8,
            pred_len: 6,
            attention_radius: 10.0,
        }
    }
}

impl DatasetProfile {
    /// ETH/UCY benchmark convention: 2.5 Hz, observe 8 steps, predict 12.
    pub fn eth_ucy() -> Self {
        DatasetProfile {
            dt: 0.4,
            obs_len: 8,
            pred_len: 12,
            attention_radius: 10.0,
        }
    }

    /// Tiny configuration for fast experiments and checks.
    pub fn desk() -> Self {
        DatasetProfile {
            dt: 0.5,
            obs_len: 4,
            pred_len: 3,
            attention_radius: 10.0,
        }
    }
}

/// Fully prepared model input: normalized observed states, aggregated
/// neighbor edge states, normalized future labels, plus what is needed to
/// map predictions back to world coordinates.
#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub ped_id: i64,
    pub t_last: i64,
    pub obs: Vec<StateVector>,
    pub edge: Vec<StateVector>,
    pub future: Vec<[f64; 2]>,
    pub future_world: Vec<[f64; 2]>,
    pub spec: NormalizationSpec,
}

impl PreparedSample {
    pub fn rotated(&self, angle_degrees: f64) -> PreparedSample {
        let sample = TrajectorySample {
            ped_id: self.ped_id,
            t_last: self.t_last,
            obs: self.obs.clone(),
            future: self.future.clone(),
            anchor: self.spec.anchor,
        };
        let rotated = rotate_augment(&sample, angle_degrees);
        PreparedSample {
            ped_id: self.ped_id,
            t_last: self.t_last,
            obs: rotated.obs,
            edge: rotate_states(&self.edge, angle_degrees),
            future: rotated.future,
            future_world: self.future_world.clone(),
            spec: self.spec,
        }
    }
}

/// Run the full preprocessing pipeline over a scene.
pub fn prepare_samples(scene: &Scene, profile: &DatasetProfile) -> Result<Vec<PreparedSample>, DataError> {
    let windows = extract_windows(scene, profile.obs_len, profile.pred_len);
    let mut out = Vec::with_capacity(windows.len());
    for w in windows {
        let states = derive_kinematics(&w.obs_pos, scene.dt)?;
        let anchor = w.obs_pos[profile.obs_len - 1];
        let spec = NormalizationSpec {
            anchor,
            scale: profile.attention_radius,
        };
        let sample = TrajectorySample {
            ped_id: w.ped_id,
            t_last: w.t_last,
            obs: states,
            future: w.fut_pos.clone(),
            anchor,
        };
        let edge = crate::social::build_edge_sequence(scene, &sample, profile.attention_radius)?;
        let normalized = normalize_sample(&sample, &spec);
        out.push(PreparedSample {
            ped_id: w.ped_id,
            t_last: w.t_last,
            obs: normalized.obs,
            edge,
            future: normalized.future,
            future_world: w.fut_pos,
            spec,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_two_records() {
        let scene = parse_trajectory_file("0 1 0.0 0.0\n10 1 1.0 0.0", "t", 0.4).unwrap();
        assert_eq!(scene.records.len(), 2);
        assert_eq!(scene.position(10, 1), Some([1.0, 0.0]));
    }

    #[test]
    fn parse_empty_file() {
        let scene = parse_trajectory_file("", "t", 0.4).unwrap();
        assert!(scene.records.is_empty());
    }

    #[test]
    fn parse_error_names_line() {
        let err = parse_trajectory_file("0 1 abc 0.0", "t", 0.4).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn parse_rejects_duplicates() {
        let err = parse_trajectory_file("0 1 0.0 0.0\n0 1 1.0 1.0", "t", 0.4).unwrap_err();
        assert!(matches!(err, DataError::Duplicate { frame: 0, ped: 1 }));
    }

    fn straight_scene(frames: usize) -> Scene {
        let mut scene = Scene::new("s", 0.5);
        for f in 0..frames {
            scene.insert(f as i64, 1, [f as f64, 0.0]).unwrap();
        }
        scene
    }

    #[test]
    fn exact_window_yields_one_sample() {
        let scene = straight_scene(4 + 3);
        assert_eq!(extract_windows(&scene, 4, 3).len(), 1);
    }

    #[test]
    fn short_track_yields_no_sample() {
        let scene = straight_scene(4 + 3 - 1);
        assert!(extract_windows(&scene, 4, 3).is_empty());
    }

    #[test]
    fn longer_track_slides_by_one_frame() {
        let scene = straight_scene(4 + 3 + 2);
        assert_eq!(extract_windows(&scene, 4, 3).len(), 3);
    }

    #[test]
    fn gap_splits_track() {
        let mut scene = straight_scene(4 + 3 + 2);
        scene.records.remove(&(4, 1));
        // Remaining runs: frames 0..=3 (len 4) and 5..=8 (len 4), neither
        // long enough for a 7-frame window.
        assert!(extract_windows(&scene, 4, 3).is_empty());
    }

    #[test]
    fn strided_frames_are_consecutive() {
        let mut scene = Scene::new("s", 0.4);
        for k in 0..7 {
            scene.insert(k * 10, 1, [k as f64, 0.0]).unwrap();
        }
        assert_eq!(extract_windows(&scene, 4, 3).len(), 1);
    }

    #[test]
    fn kinematics_stationary() {
        let states = derive_kinematics(&[[1.0, 2.0]; 5], 0.5).unwrap();
        for s in states {
            assert_eq!(s.vel, [0.0, 0.0]);
            assert_eq!(s.acc, [0.0, 0.0]);
        }
    }

    #[test]
    fn kinematics_constant_velocity() {
        let states =
            derive_kinematics(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]], 0.5).unwrap();
        for s in &states {
            assert_eq!(s.vel, [2.0, 0.0]);
            assert_eq!(s.acc, [0.0, 0.0]);
        }
    }

    #[test]
    fn kinematics_step_change() {
        let states =
            derive_kinematics(&[[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]], 1.0).unwrap();
        let vel: Vec<[f64; 2]> = states.iter().map(|s| s.vel).collect();
        let acc: Vec<[f64; 2]> = states.iter().map(|s| s.acc).collect();
        assert_eq!(vel, vec![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(acc, vec![[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]);
    }

    #[test]
    fn kinematics_rejects_single_position() {
        assert!(matches!(
            derive_kinematics(&[[0.0, 0.0]], 0.5),
            Err(DataError::TooFewPositions(1))
        ));
    }

    fn toy_sample() -> TrajectorySample {
        let obs_pos = [[0.0, 0.0], [1.0, 0.5], [2.0, 1.0], [3.0, 1.5]];
        TrajectorySample {
            ped_id: 1,
            t_last: 3,
            obs: derive_kinematics(&obs_pos, 0.5).unwrap(),
            future: vec![[4.0, 2.0], [5.0, 2.5]],
            anchor: [3.0, 1.5],
        }
    }

    #[test]
    fn normalization_centers_last_obs() {
        let sample = toy_sample();
        let spec = NormalizationSpec {
            anchor: sample.anchor,
            scale: 10.0,
        };
        let normed = normalize_sample(&sample, &spec);
        let last = normed.obs.last().unwrap().pos;
        assert!(last[0].abs() < 1e-9 && last[1].abs() < 1e-9);
    }

    #[test]
    fn unit_radius_point() {
        let spec = NormalizationSpec {
            anchor: [0.0, 0.0],
            scale: 10.0,
        };
        let sample = TrajectorySample {
            ped_id: 1,
            t_last: 0,
            obs: vec![],
            future: vec![[10.0, 0.0]],
            anchor: [0.0, 0.0],
        };
        let normed = normalize_sample(&sample, &spec);
        assert_eq!(normed.future[0], [1.0, 0.0]);
    }

    #[test]
    fn normalize_denormalize_round_trip() {
        let sample = toy_sample();
        let spec = NormalizationSpec {
            anchor: sample.anchor,
            scale: 10.0,
        };
        let normed = normalize_sample(&sample, &spec);
        let back = denormalize_prediction(&normed.future, &spec);
        for (b, orig) in back.iter().zip(sample.future.iter()) {
            assert!((b[0] - orig[0]).abs() < 1e-9);
            assert!((b[1] - orig[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn denormalize_origin_is_anchor() {
        let spec = NormalizationSpec {
            anchor: [5.0, 5.0],
            scale: 10.0,
        };
        assert_eq!(denormalize_prediction(&[[0.0, 0.0]], &spec)[0], [5.0, 5.0]);
        assert_eq!(denormalize_prediction(&[[1.0, 1.0]], &spec)[0], [15.0, 15.0]);
    }

    #[test]
    fn full_turn_is_identity() {
        let sample = toy_sample();
        let spec = NormalizationSpec {
            anchor: sample.anchor,
            scale: 10.0,
        };
        let normed = normalize_sample(&sample, &spec);
        let turned = rotate_augment(&normed, 360.0);
        for (a, b) in normed.obs.iter().zip(turned.obs.iter()) {
            for k in 0..2 {
                assert!((a.pos[k] - b.pos[k]).abs() < 1e-9);
                assert!((a.vel[k] - b.vel[k]).abs() < 1e-9);
                assert!((a.acc[k] - b.acc[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn quarter_turn_maps_x_to_y() {
        let sample = TrajectorySample {
            ped_id: 1,
            t_last: 0,
            obs: vec![],
            future: vec![[1.0, 0.0]],
            anchor: [0.0, 0.0],
        };
        let turned = rotate_augment(&sample, 90.0);
        assert!((turned.future[0][0]).abs() < 1e-12);
        assert!((turned.future[0][1] - 1.0).abs() < 1e-12);
    }
}
