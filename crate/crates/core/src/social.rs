//! Interaction graph construction and neighbor edge-sequence aggregation.
//!
//! Neighbors are selected at the last observed frame against the attention
//! radius (world meters) and held fixed for all observed timesteps. Their
//! states are normalized by the target's anchor and scale, then summed
//! element-wise into a sequence shaped like the observed one.

use crate::data::{derive_kinematics, DataError, NormalizationSpec, Scene, StateVector, TrajectorySample};

/// Directed interaction graph at a single frame.
#[derive(Debug, Clone)]
pub struct SocialGraph {
    pub frame: i64,
    pub nodes: Vec<i64>,
    /// (j -> i): pedestrian j influences pedestrian i.
    pub edges: Vec<(i64, i64)>,
}

/// Build the graph over all pedestrians present at `frame`.
pub fn build_graph(scene: &Scene, frame: i64, radius: f64) -> SocialGraph {
    let nodes = scene.peds_at_frame(frame);
    let mut edges = Vec::new();
    for &i in &nodes {
        for &j in &nodes {
            if i == j {
                continue;
            }
            let pi = scene.position(frame, i).unwrap();
            let pj = scene.position(frame, j).unwrap();
            let d = ((pi[0] - pj[0]).powi(2) + (pi[1] - pj[1]).powi(2)).sqrt();
            if d <= radius {
                edges.push((j, i));
            }
        }
    }
    SocialGraph { frame, nodes, edges }
}

/// All other pedestrians within `radius` of `ped_id` at `frame`, in
/// ascending-id order. Distance exactly at the radius counts as a neighbor.
pub fn find_neighbors(
    scene: &Scene,
    ped_id: i64,
    frame: i64,
    radius: f64,
) -> Result<Vec<i64>, DataError> {
    assert!(radius > 0.0, "attention radius must be > 0");
    let center = scene
        .position(frame, ped_id)
        .ok_or(DataError::PedAbsent { frame, ped: ped_id })?;
    let mut out: Vec<i64> = scene
        .peds_at_frame(frame)
        .into_iter()
        .filter(|&other| {
            if other == ped_id {
                return false;
            }
            let p = scene.position(frame, other).unwrap();
            let d = ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt();
            d <= radius
        })
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Aggregate neighbor states over the sample's observed frames.
///
/// Neighbor positions are normalized by the target's anchor and scale;
/// velocities and accelerations divide by the scale like the target's own.
/// A neighbor absent at some earlier timestep contributes zero there.
pub fn build_edge_sequence(
    scene: &Scene,
    sample: &TrajectorySample,
    radius: f64,
) -> Result<Vec<StateVector>, DataError> {
    let h = sample.obs.len();
    let stride = scene.frame_stride();
    let t_first = sample.t_last - (h as i64 - 1) * stride;
    let neighbors = find_neighbors(scene, sample.ped_id, sample.t_last, radius)?;
    let spec = NormalizationSpec {
        anchor: sample.anchor,
        scale: radius,
    };

    let mut edge = vec![StateVector::zero(); h];
    for nb in neighbors {
        let states = neighbor_states(scene, nb, t_first, stride, h, &spec);
        for (e, s) in edge.iter_mut().zip(states.iter()) {
            if let Some(s) = s {
                for k in 0..2 {
                    e.pos[k] += s.pos[k];
                    e.vel[k] += s.vel[k];
                    e.acc[k] += s.acc[k];
                }
            }
        }
    }
    Ok(edge)
}

/// Normalized states of one neighbor at each observed timestep, `None`
/// where it is absent. Kinematics are derived per contiguous run of
/// presence; a run of a single frame gets zero velocity/acceleration.
fn neighbor_states(
    scene: &Scene,
    ped: i64,
    t_first: i64,
    stride: i64,
    h: usize,
    spec: &NormalizationSpec,
) -> Vec<Option<StateVector>> {
    let present: Vec<Option<[f64; 2]>> = (0..h)
        .map(|k| scene.position(t_first + k as i64 * stride, ped))
        .collect();
    let mut out: Vec<Option<StateVector>> = vec![None; h];
    let mut k = 0;
    while k < h {
        if present[k].is_none() {
            k += 1;
            continue;
        }
        let run_start = k;
        while k < h && present[k].is_some() {
            k += 1;
        }
        let run: Vec<[f64; 2]> = present[run_start..k].iter().map(|p| p.unwrap()).collect();
        let states: Vec<StateVector> = if run.len() >= 2 {
            derive_kinematics(&run, scene.dt).expect("run length checked")
        } else {
            vec![StateVector {
                pos: run[0],
                vel: [0.0; 2],
                acc: [0.0; 2],
            }]
        };
        for (offset, s) in states.iter().enumerate() {
            out[run_start + offset] = Some(StateVector {
                pos: [
                    (s.pos[0] - spec.anchor[0]) / spec.scale,
                    (s.pos[1] - spec.anchor[1]) / spec.scale,
                ],
                vel: [s.vel[0] / spec.scale, s.vel[1] / spec.scale],
                acc: [s.acc[0] / spec.scale, s.acc[1] / spec.scale],
            });
        }
    }
    out
}
