//! Gaze control over a 2x1 scene with simulated people.
//!
//! Observation layout: 18 landmark heatmaps of 7x7 cells over the field of
//! view (landmark-major, then row-major with row 0 at the bottom), then a
//! 14x8 audio heatmap over the whole scene (row-major, 8 rows of 14), then
//! the view center `(x, y)`. Components: `[r_vis, r_aud, r_mov]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{clamp_action, Environment, Step};
use crate::error::{Error, Result};

pub const N_LANDMARKS: usize = 18;
pub const POSE_GRID: usize = 7;
pub const AUDIO_COLS: usize = 14;
pub const AUDIO_ROWS: usize = 8;
pub const SCENE: [f64; 2] = [2.0, 1.0];
pub const OBS_DIM: usize = N_LANDMARKS * POSE_GRID * POSE_GRID + AUDIO_COLS * AUDIO_ROWS + 2;

/// Landmark offsets from the nose in scene units, y pointing up. Order:
/// nose, neck, right shoulder, elbow, wrist, left shoulder, elbow, wrist,
/// right hip, knee, ankle, left hip, knee, ankle, right eye, left eye,
/// right ear, left ear.
pub const SKELETON: [[f64; 2]; N_LANDMARKS] = [
    [0.0, 0.0],
    [0.0, -0.06],
    [-0.05, -0.07],
    [-0.07, -0.15],
    [-0.08, -0.23],
    [0.05, -0.07],
    [0.07, -0.15],
    [0.08, -0.23],
    [-0.03, -0.27],
    [-0.03, -0.38],
    [-0.03, -0.49],
    [0.03, -0.27],
    [0.03, -0.38],
    [0.03, -0.49],
    [-0.012, 0.012],
    [0.012, 0.012],
    [-0.025, 0.005],
    [0.025, 0.005],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GazeConfig {
    pub n_people: usize,
    pub fov: [f64; 2],
    pub max_shift: [f64; 2],
    pub k_mov: f64,
    pub jitter: f64,
    pub switch_prob: f64,
    pub silence_prob: f64,
}

impl Default for GazeConfig {
    fn default() -> Self {
        GazeConfig {
            n_people: 3,
            fov: [0.4, 0.3],
            max_shift: [0.16, 0.11],
            k_mov: 16.0,
            jitter: 0.01,
            switch_prob: 0.02,
            silence_prob: 0.2,
        }
    }
}

impl GazeConfig {
    fn validate(&self) -> Result<()> {
        if self.n_people == 0 {
            return Err(Error::Config("gaze needs at least one person".into()));
        }
        if !(self.fov[0] > 0.0 && self.fov[0] <= SCENE[0] && self.fov[1] > 0.0 && self.fov[1] <= SCENE[1]) {
            return Err(Error::Config(format!("field of view {:?} must fit the 2x1 scene", self.fov)));
        }
        for p in [self.switch_prob, self.silence_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        if !(self.jitter >= 0.0 && self.k_mov >= 0.0) {
            return Err(Error::Config("gaze jitter and movement penalty must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimPerson {
    /// Nose position; the rest of the body follows [`SKELETON`].
    pub position: [f64; 2],
    /// Consecutive frames since the face was last in view; `None` if never seen.
    pub unseen_frames: Option<u64>,
}

impl SimPerson {
    pub fn landmark(&self, j: usize) -> [f64; 2] {
        [self.position[0] + SKELETON[j][0], self.position[1] + SKELETON[j][1]]
    }
}

/// Rectangle `[x0, x1] x [y0, y1]` of the view around `center`.
pub fn fov_rect(center: [f64; 2], fov: [f64; 2]) -> [f64; 4] {
    [
        center[0] - fov[0] / 2.0,
        center[0] + fov[0] / 2.0,
        center[1] - fov[1] / 2.0,
        center[1] + fov[1] / 2.0,
    ]
}

pub fn in_rect(p: [f64; 2], r: [f64; 4]) -> bool {
    p[0] >= r[0] && p[0] <= r[1] && p[1] >= r[2] && p[1] <= r[3]
}

/// Sum over visible faces of `2 - exp(-t_p)`; `None` stands for never seen.
pub fn reward_vis(timers_of_visible: &[Option<u64>]) -> f64 {
    timers_of_visible
        .iter()
        .map(|t| match t {
            Some(t) => 2.0 - (-(*t as f64)).exp(),
            None => 2.0,
        })
        .sum()
}

/// 0 when nobody speaks, -0.5 when nobody speaking is in view, otherwise
/// 2 per speaker in view.
pub fn reward_aud(n_speakers: usize, n_speakers_in_view: usize) -> f64 {
    if n_speakers == 0 {
        0.0
    } else if n_speakers_in_view == 0 {
        -0.5
    } else {
        2.0 * n_speakers_in_view as f64
    }
}

pub fn reward_mov(pan: f64, tilt: f64, k_mov: f64) -> f64 {
    -k_mov * pan.hypot(tilt)
}

#[derive(Clone, Debug)]
pub struct GazeEnv {
    config: GazeConfig,
    rng: ChaCha8Rng,
    head: [f64; 2],
    people: Vec<SimPerson>,
    speaker: Option<usize>,
}

impl GazeEnv {
    pub fn new(config: GazeConfig) -> Result<Self> {
        config.validate()?;
        let mut env = GazeEnv {
            config,
            rng: ChaCha8Rng::seed_from_u64(0),
            head: [SCENE[0] / 2.0, SCENE[1] / 2.0],
            people: Vec::new(),
            speaker: None,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn head(&self) -> [f64; 2] {
        self.head
    }

    pub fn people(&self) -> &[SimPerson] {
        &self.people
    }

    pub fn speaker(&self) -> Option<usize> {
        self.speaker
    }

    /// Places people and the speaker directly; for tests and replays.
    pub fn set_scene(&mut self, head: [f64; 2], people: Vec<SimPerson>, speaker: Option<usize>) {
        self.head = self.clamp_head(head);
        self.people = people;
        self.speaker = speaker;
    }

    pub fn fov(&self) -> [f64; 4] {
        fov_rect(self.head, self.config.fov)
    }

    fn clamp_head(&self, h: [f64; 2]) -> [f64; 2] {
        let [fw, fh] = self.config.fov;
        [
            h[0].clamp(fw / 2.0, SCENE[0] - fw / 2.0),
            h[1].clamp(fh / 2.0, SCENE[1] - fh / 2.0),
        ]
    }

    fn draw_speaker(&mut self) -> Option<usize> {
        if self.rng.random::<f64>() < self.config.silence_prob {
            None
        } else {
            Some(self.rng.random_range(0..self.config.n_people))
        }
    }

    fn face_visible(&self) -> Vec<bool> {
        let r = self.fov();
        self.people.iter().map(|p| in_rect(p.position, r)).collect()
    }

    /// Visual reward for the current frame; updates the unseen timers.
    fn update_timers(&mut self) -> f64 {
        let visible = self.face_visible();
        let mut timers = Vec::new();
        for (p, &v) in self.people.iter_mut().zip(&visible) {
            if v {
                timers.push(p.unseen_frames);
                p.unseen_frames = Some(0);
            } else {
                p.unseen_frames = p.unseen_frames.map(|t| t + 1);
            }
        }
        reward_vis(&timers)
    }

    fn move_people(&mut self) {
        let normal = Normal::new(0.0, self.config.jitter).expect("validated jitter");
        for p in &mut self.people {
            for (axis, limit) in SCENE.iter().enumerate() {
                let mut x = p.position[axis] + normal.sample(&mut self.rng);
                if x < 0.0 {
                    x = -x;
                }
                if x > *limit {
                    x = 2.0 * limit - x;
                }
                p.position[axis] = x.clamp(0.0, *limit);
            }
        }
        if self.rng.random::<f64>() < self.config.switch_prob {
            self.speaker = self.draw_speaker();
        }
    }

    pub fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; OBS_DIM];
        let r = self.fov();
        let [fw, fh] = self.config.fov;
        let (cw, ch) = (fw / POSE_GRID as f64, fh / POSE_GRID as f64);
        for p in &self.people {
            for j in 0..N_LANDMARKS {
                let l = p.landmark(j);
                if !in_rect(l, r) {
                    continue;
                }
                let u = (l[0] - r[0]) / cw;
                let v = (l[1] - r[2]) / ch;
                splat(&mut obs[j * POSE_GRID * POSE_GRID..(j + 1) * POSE_GRID * POSE_GRID], POSE_GRID, POSE_GRID, u, v);
            }
        }
        let audio_start = N_LANDMARKS * POSE_GRID * POSE_GRID;
        if let Some(s) = self.speaker {
            let pos = self.people[s].position;
            let u = pos[0] / (SCENE[0] / AUDIO_COLS as f64);
            let v = pos[1] / (SCENE[1] / AUDIO_ROWS as f64);
            splat(&mut obs[audio_start..audio_start + AUDIO_COLS * AUDIO_ROWS], AUDIO_COLS, AUDIO_ROWS, u, v);
        }
        obs[OBS_DIM - 2] = self.head[0];
        obs[OBS_DIM - 1] = self.head[1];
        obs
    }
}

/// Adds a Gaussian blob (sigma half a cell) at grid coordinates `(u, v)`,
/// measured in cells from the lower-left corner, and clips to `[0, 1]`.
fn splat(map: &mut [f64], cols: usize, rows: usize, u: f64, v: f64) {
    let sigma = 0.5;
    for row in 0..rows {
        for col in 0..cols {
            let dx = col as f64 + 0.5 - u;
            let dy = row as f64 + 0.5 - v;
            let cell = &mut map[row * cols + col];
            *cell = (*cell + (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()).min(1.0);
        }
    }
}

impl Environment for GazeEnv {
    fn obs_dim(&self) -> usize {
        OBS_DIM
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn n_components(&self) -> usize {
        3
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.head = [SCENE[0] / 2.0, SCENE[1] / 2.0];
        self.people = (0..self.config.n_people)
            .map(|_| SimPerson {
                position: [self.rng.random_range(0.0..=SCENE[0]), self.rng.random_range(0.0..=SCENE[1])],
                unseen_frames: None,
            })
            .collect();
        self.speaker = self.draw_speaker();
        self.update_timers();
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let a = clamp_action(action, 2, "gaze")?;
        let (pan, tilt) = (a[0], a[1]);
        self.head = self.clamp_head([
            self.head[0] + self.config.max_shift[0] * pan,
            self.head[1] + self.config.max_shift[1] * tilt,
        ]);
        self.move_people();
        let r_vis = self.update_timers();
        let r = self.fov();
        let in_view = self
            .speaker
            .filter(|&s| in_rect(self.people[s].position, r))
            .map_or(0, |_| 1);
        let r_aud = reward_aud(usize::from(self.speaker.is_some()), in_view);
        let r_mov = reward_mov(pan, tilt, self.config.k_mov);
        Ok(Step {
            obs: self.observe(),
            components: vec![r_vis, r_aud, r_mov],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn static_config() -> GazeConfig {
        GazeConfig {
            jitter: 0.0,
            switch_prob: 0.0,
            ..GazeConfig::default()
        }
    }

    fn person(x: f64, y: f64) -> SimPerson {
        SimPerson {
            position: [x, y],
            unseen_frames: None,
        }
    }

    #[test]
    fn observation_length_matches_layout() {
        assert_eq!(OBS_DIM, 18 * 49 + 14 * 8 + 2);
    }

    #[test]
    fn reward_examples() {
        assert_eq!(reward_vis(&[Some(0)]), 1.0);
        assert!((reward_vis(&[Some(60)]) - 2.0).abs() < 1e-12);
        assert_eq!(reward_vis(&[None]), 2.0);
        assert_eq!(reward_vis(&[]), 0.0);
        assert_eq!(reward_aud(0, 0), 0.0);
        assert_eq!(reward_aud(1, 0), -0.5);
        assert_eq!(reward_aud(2, 2), 4.0);
        assert_eq!(reward_mov(0.0, 0.0, 16.0), 0.0);
        assert_eq!(reward_mov(1.0, 0.0, 16.0), -16.0);
        assert!((reward_mov(1.0, 1.0, 16.0) - (-22.627_416_997_969_52)).abs() < 1e-9);
    }

    #[test]
    fn reset_is_centered_and_deterministic() {
        let mut env = GazeEnv::new(GazeConfig::default()).unwrap();
        let a = env.reset(4);
        assert_eq!(env.head(), [1.0, 0.5]);
        let b = env.reset(4);
        assert_eq!(a, b);
        assert!(a[..OBS_DIM - 2].iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn zero_action_keeps_head() {
        let mut env = GazeEnv::new(static_config()).unwrap();
        env.reset(1);
        let before = env.head();
        env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(env.head(), before);
    }

    #[test]
    fn continuously_visible_person_earns_one() {
        let mut env = GazeEnv::new(static_config()).unwrap();
        env.set_scene([1.0, 0.5], vec![person(1.0, 0.5), person(0.1, 0.1), person(1.9, 0.9)], None);
        let first = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(first.components[0], 2.0);
        let second = env.step(&[0.0, 0.0]).unwrap();
        assert_eq!(second.components[0], 1.0);
    }

    #[test]
    fn returning_person_earns_between_one_and_two() {
        let mut env = GazeEnv::new(static_config()).unwrap();
        env.set_scene([1.0, 0.5], vec![person(1.0, 0.5)], None);
        env.step(&[0.0, 0.0]).unwrap();
        // Pan away until the face leaves the view for 3 frames, then back.
        for pan in [1.0, 1.0, 1.0, -1.0] {
            env.step(&[pan, 0.0]).unwrap();
        }
        let back = env.step(&[-1.0, 0.0]).unwrap();
        assert!((back.components[0] - (2.0 - (-3.0f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn audio_reward_follows_speaker() {
        let mut env = GazeEnv::new(static_config()).unwrap();
        env.set_scene([1.0, 0.5], vec![person(1.0, 0.5), person(0.1, 0.1)], Some(1));
        assert_eq!(env.step(&[0.0, 0.0]).unwrap().components[1], -0.5);
        env.set_scene([1.0, 0.5], vec![person(1.0, 0.5), person(0.1, 0.1)], Some(0));
        assert_eq!(env.step(&[0.0, 0.0]).unwrap().components[1], 2.0);
        env.set_scene([1.0, 0.5], vec![person(1.0, 0.5)], None);
        assert_eq!(env.step(&[0.0, 0.0]).unwrap().components[1], 0.0);
    }

    #[test]
    fn landmarks_outside_view_leave_no_mass() {
        let mut env = GazeEnv::new(static_config()).unwrap();
        env.set_scene([1.0, 0.5], vec![person(0.1, 0.9)], None);
        let obs = env.observe();
        assert!(obs[..N_LANDMARKS * 49].iter().all(|&v| v == 0.0));
        env.set_scene([1.0, 0.5], vec![person(1.0, 0.6)], None);
        let obs = env.observe();
        assert!(obs[..49].iter().any(|&v| v > 0.5));
    }

    proptest! {
        #[test]
        fn head_stays_in_scene_and_rewards_keep_sign(seed in 0u64..500, actions in proptest::collection::vec((-1.5f64..1.5, -1.5f64..1.5), 1..30)) {
            let mut env = GazeEnv::new(GazeConfig::default()).unwrap();
            env.reset(seed);
            for (p, t) in actions {
                let s = env.step(&[p, t]).unwrap();
                let r = env.fov();
                prop_assert!(r[0] >= 0.0 && r[1] <= 2.0 && r[2] >= 0.0 && r[3] <= 1.0);
                prop_assert!(s.components[0] >= 0.0);
                prop_assert!(s.components[2] <= 0.0);
                let a = s.components[1];
                prop_assert!(a == 0.0 || a == -0.5 || a == 2.0);
                prop_assert!(s.obs[..OBS_DIM - 2].iter().all(|v| (0.0..=1.0).contains(v)));
                for p in env.people() {
                    prop_assert!(p.position[0] >= 0.0 && p.position[0] <= 2.0 && p.position[1] >= 0.0 && p.position[1] <= 1.0);
                }
            }
        }
    }
}
