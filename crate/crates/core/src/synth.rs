//! Synthetic crowd scenarios: linear walkers, sudden turns and crossing
//! pairs where one pedestrian dodges an oncoming neighbor. Used by the
//! test harness and the `synth` CLI command so the pipeline runs without
//! redistributing benchmark datasets.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{DatasetProfile, Scene};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Constant-velocity walkers.
    Linear,
    /// Straight observation, then a sudden turn over the future window.
    Turning,
    /// A pair on conflicting paths; the target dodges away from the
    /// crosser's side during the future window.
    Crossing,
    /// Alternating linear and turning episodes.
    Mixed,
}

impl Scenario {
    pub const ALL: [&'static str; 4] = ["linear", "turning", "crossing", "mixed"];

    pub fn from_name(name: &str) -> Option<Scenario> {
        match name {
            "linear" => Some(Scenario::Linear),
            "turning" => Some(Scenario::Turning),
            "crossing" => Some(Scenario::Crossing),
            "mixed" => Some(Scenario::Mixed),
            _ => None,
        }
    }
}

pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    // Box-Muller.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

struct AgentTrack {
    ped_id: i64,
    positions: Vec<[f64; 2]>,
}

fn roll_out(
    start: [f64; 2],
    heading0: f64,
    speed: f64,
    dt: f64,
    frames: usize,
    // Heading at frame k (absolute radians).
    heading_at: impl Fn(usize) -> f64,
) -> Vec<[f64; 2]> {
    let mut pos = start;
    let mut out = Vec::with_capacity(frames);
    out.push(pos);
    for k in 1..frames {
        let th = heading0 + heading_at(k);
        pos = [pos[0] + speed * dt * th.cos(), pos[1] + speed * dt * th.sin()];
        out.push(pos);
    }
    out
}

fn linear_episode(rng: &mut ChaCha8Rng, profile: &DatasetProfile, base_id: i64) -> Vec<AgentTrack> {
    let frames = profile.obs_len + profile.pred_len;
    let start = [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)];
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = rng.gen_range(0.8..1.6);
    vec![AgentTrack {
        ped_id: base_id,
        positions: roll_out(start, heading, speed, profile.dt, frames, |_| 0.0),
    }]
}

fn turning_episode(rng: &mut ChaCha8Rng, profile: &DatasetProfile, base_id: i64) -> Vec<AgentTrack> {
    let frames = profile.obs_len + profile.pred_len;
    let h = profile.obs_len;
    let start = [rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0)];
    let heading = rng.gen_range(0.0..std::f64::consts::TAU);
    let speed = rng.gen_range(0.8..1.6);
    // The turn begins two steps before the prediction window, so the
    // observed tail reveals the direction; most of it still happens in the
    // future.
    let onset = h.saturating_sub(2);
    let turn_steps = frames - onset - 1;
    let total_turn = rng.gen_range(30.0f64..90.0).to_radians()
        * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
    let per_step = total_turn / turn_steps as f64;
    vec![AgentTrack {
        ped_id: base_id,
        positions: roll_out(start, heading, speed, profile.dt, frames, move |k| {
            if k > onset {
                per_step * (k - onset) as f64
            } else {
                0.0
            }
        }),
    }]
}

fn crossing_episode(rng: &mut ChaCha8Rng, profile: &DatasetProfile, base_id: i64) -> Vec<AgentTrack> {
    let frames = profile.obs_len + profile.pred_len;
    let h = profile.obs_len;
    let dt = profile.dt;
    let side = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };

    // Target walks roughly +x, then dodges away from the crosser's side.
    let speed = rng.gen_range(1.0..1.5);
    let jitter = rng.gen_range(-10.0f64..10.0).to_radians();
    let dodge_per_step = rng.gen_range(14.0f64..24.0).to_radians();
    let target = roll_out([0.0, 0.0], jitter, speed, dt, frames, move |k| {
        if k >= h {
            -side * dodge_per_step * (k - h + 1) as f64
        } else {
            0.0
        }
    });

    // Crosser approaches the target's path from the chosen side, timed to
    // conflict just after the observation window ends.
    let conflict = (h + 1) as f64;
    let lateral = rng.gen_range(3.5..4.5);
    let cr_start = [speed * dt * conflict * 0.3, side * lateral];
    let cr_vx = speed * 0.7;
    let cr_vy = -side * lateral / (conflict * dt);
    let cr_heading = cr_vy.atan2(cr_vx);
    let cr_speed = (cr_vx * cr_vx + cr_vy * cr_vy).sqrt();
    let crosser = roll_out(cr_start, cr_heading, cr_speed, dt, frames, |_| 0.0);

    vec![
        AgentTrack {
            ped_id: base_id,
            positions: target,
        },
        AgentTrack {
            ped_id: base_id + 1,
            positions: crosser,
        },
    ]
}

/// Generate a scene of `episodes` independent episodes at disjoint frame
/// ranges. `noise` is the per-position gaussian jitter in meters.
pub fn generate(
    scenario: Scenario,
    episodes: usize,
    noise: f64,
    seed: u64,
    profile: &DatasetProfile,
) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scene = Scene::new(format!("synth-{scenario:?}").to_lowercase(), profile.dt);
    let span = (profile.obs_len + profile.pred_len) as i64 + 3;
    for ep in 0..episodes {
        let base_id = ep as i64 * 10 + 1;
        let tracks = match scenario {
            Scenario::Linear => linear_episode(&mut rng, profile, base_id),
            Scenario::Turning => turning_episode(&mut rng, profile, base_id),
            Scenario::Crossing => crossing_episode(&mut rng, profile, base_id),
            Scenario::Mixed => {
                if ep % 2 == 0 {
                    linear_episode(&mut rng, profile, base_id)
                } else {
                    turning_episode(&mut rng, profile, base_id)
                }
            }
        };
        let frame0 = ep as i64 * span;
        for track in tracks {
            for (k, pos) in track.positions.iter().enumerate() {
                let p = [
                    pos[0] + noise * standard_normal(&mut rng),
                    pos[1] + noise * standard_normal(&mut rng),
                ];
                scene
                    .insert(frame0 + k as i64, track.ped_id, p)
                    .expect("synthetic ids are unique");
            }
        }
    }
    scene
}

pub fn scene_to_text(scene: &Scene) -> String {
    let mut out = String::new();
    for (&(frame, ped), pos) in &scene.records {
        out.push_str(&format!("{frame} {ped} {} {}\n", pos[0], pos[1]));
    }
    out
}

pub fn write_scene(scene: &Scene, path: &Path) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(scene_to_text(scene).as_bytes())
}
