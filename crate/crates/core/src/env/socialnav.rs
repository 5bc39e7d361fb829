//! Unicycle robot in a 15x10 m room shared with social-force pedestrians.
//!
//! Observation (31 floats): robot `x, y, heading, linear velocity, goal x,
//! goal y`, then for each of the 5 humans the position relative to the
//! robot (2), velocity (2) and body orientation (1). Components:
//! `[R_g, R_c, R_s, R_a, R_v]`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, PI};
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clamp_action, Environment, Step};
use crate::error::{Error, Result};

pub const ROOM: [f64; 2] = [15.0, 10.0];
pub const ROBOT_START: [f64; 2] = [14.0, 5.0];
pub const N_COMPONENTS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SocialForceParams {
    pub desired_speed: f64,
    pub relaxation: f64,
    pub strength: f64,
    pub range: f64,
    pub radius: f64,
    pub max_speed_factor: f64,
}

impl Default for SocialForceParams {
    fn default() -> Self {
        SocialForceParams {
            desired_speed: 1.3,
            relaxation: 0.5,
            strength: 2.0,
            range: 0.3,
            radius: 0.3,
            max_speed_factor: 1.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NavConfig {
    pub n_humans: usize,
    pub dt: f64,
    pub d_c: f64,
    pub d_s: f64,
    pub theta_th: f64,
    pub max_angular: f64,
    pub max_linear: f64,
    pub goal_radius: f64,
    pub waypoint_radius: f64,
    pub min_separation: f64,
    pub force: SocialForceParams,
}

impl Default for NavConfig {
    fn default() -> Self {
        NavConfig {
            n_humans: 5,
            dt: 0.1,
            d_c: 0.4,
            d_s: 1.2,
            theta_th: FRAC_PI_3,
            max_angular: 15.0,
            max_linear: 2.0,
            goal_radius: 0.3,
            waypoint_radius: 0.5,
            min_separation: 1.0,
            force: SocialForceParams::default(),
        }
    }
}

impl NavConfig {
    pub fn obs_dim(&self) -> usize {
        6 + 5 * self.n_humans
    }

    fn validate(&self) -> Result<()> {
        let f = &self.force;
        let positive = [
            self.dt,
            self.d_c,
            self.d_s,
            self.theta_th,
            self.max_angular,
            self.max_linear,
            self.goal_radius,
            self.waypoint_radius,
            f.desired_speed,
            f.relaxation,
            f.strength,
            f.range,
            f.radius,
            f.max_speed_factor,
        ];
        if self.n_humans == 0 || positive.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Config("social navigation parameters must be positive".into()));
        }
        if self.theta_th > PI {
            return Err(Error::Config("theta_th must not exceed pi".into()));
        }
        Ok(())
    }
}

/// Room diagonal; normalizes the goal distance.
pub fn room_diagonal() -> f64 {
    ROOM[0].hypot(ROOM[1])
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Robot {
    pub position: [f64; 2],
    pub heading: f64,
    pub linear_vel: f64,
    pub angular_vel: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Human {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub orientation: f64,
    pub waypoint: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    pub robot: Robot,
    pub humans: Vec<Human>,
    pub goal: [f64; 2],
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Maps an angle into `(-pi, pi]`, leaving in-range angles untouched.
fn wrap_pi(theta: f64) -> f64 {
    if theta > -PI && theta <= PI {
        return theta;
    }
    let w = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        PI
    } else {
        w
    }
}

fn clamp_room(p: [f64; 2]) -> [f64; 2] {
    [p[0].clamp(0.0, ROOM[0]), p[1].clamp(0.0, ROOM[1])]
}

pub fn reward_goal(d_rg: f64) -> f64 {
    1.0 - d_rg / room_diagonal()
}

pub fn reward_collision(distances: &[f64], d_c: f64) -> f64 {
    if distances.iter().any(|&d| d < d_c) {
        -1.0
    } else {
        0.0
    }
}

pub fn reward_social(distances: &[f64], d_s: f64) -> f64 {
    distances.iter().map(|d| d / d_s - 1.0).fold(f64::INFINITY, f64::min)
}

pub fn visibility(theta: f64, theta_th: f64) -> f64 {
    if theta < theta_th {
        1.0 - theta / theta_th
    } else {
        -(theta - theta_th) / (PI - theta_th)
    }
}

pub fn direction(theta: f64, theta_th: f64) -> f64 {
    if theta < theta_th {
        1.0 - theta / FRAC_PI_2
    } else {
        1.0
    }
}

/// Minimum over humans of visibility times direction.
pub fn reward_approach(thetas: &[f64], theta_th: f64) -> f64 {
    thetas
        .iter()
        .map(|&t| visibility(t, theta_th) * direction(t, theta_th))
        .fold(f64::INFINITY, f64::min)
}

/// Minimum over humans of `-exp(v) (1 - theta / theta_th)` for humans the
/// robot is in front of, 0 otherwise.
pub fn reward_velocity(speed: f64, thetas: &[f64], theta_th: f64) -> f64 {
    thetas
        .iter()
        .map(|&t| {
            if t < theta_th {
                -speed.exp() * (1.0 - t / theta_th)
            } else {
                0.0
            }
        })
        .fold(f64::INFINITY, f64::min)
}

/// Angle in `[0, pi]` between a human's facing direction and the direction
/// from the human to the robot. Facing is the motion direction when moving
/// faster than 0.05 m/s, otherwise the stored orientation.
pub fn bearing_angle(human: &Human, robot: [f64; 2]) -> f64 {
    let speed = human.velocity[0].hypot(human.velocity[1]);
    let facing = if speed > 0.05 {
        human.velocity[1].atan2(human.velocity[0])
    } else {
        human.orientation
    };
    let to_robot = (robot[1] - human.position[1]).atan2(robot[0] - human.position[0]);
    let d = (to_robot - facing).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// The five reward components for a state. The velocity term uses the
/// robot's absolute linear velocity.
pub fn components(state: &NavState, config: &NavConfig) -> [f64; N_COMPONENTS] {
    let r = state.robot.position;
    let distances: Vec<f64> = state.humans.iter().map(|h| dist(r, h.position)).collect();
    let thetas: Vec<f64> = state.humans.iter().map(|h| bearing_angle(h, r)).collect();
    [
        reward_goal(dist(r, state.goal)),
        reward_collision(&distances, config.d_c),
        reward_social(&distances, config.d_s),
        reward_approach(&thetas, config.theta_th),
        reward_velocity(state.robot.linear_vel.abs(), &thetas, config.theta_th),
    ]
}

#[derive(Clone, Debug)]
pub struct SocialNavEnv {
    config: NavConfig,
    rng: ChaCha8Rng,
    state: NavState,
    t: u64,
    trajectory: Vec<TrajectoryRow>,
    record: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: u64,
    pub robot: [f64; 3],
    pub humans: Vec<[f64; 2]>,
    pub components: [f64; N_COMPONENTS],
}

impl SocialNavEnv {
    pub fn new(config: NavConfig) -> Result<Self> {
        config.validate()?;
        let mut env = SocialNavEnv {
            state: NavState {
                robot: Robot {
                    position: ROBOT_START,
                    heading: PI,
                    linear_vel: 0.0,
                    angular_vel: 0.0,
                },
                humans: Vec::new(),
                goal: [0.0, 0.0],
            },
            config,
            rng: ChaCha8Rng::seed_from_u64(0),
            t: 0,
            trajectory: Vec::new(),
            record: false,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn state(&self) -> &NavState {
        &self.state
    }

    pub fn set_state(&mut self, state: NavState) {
        self.state = state;
    }

    pub fn config(&self) -> &NavConfig {
        &self.config
    }

    /// Keeps a per-step trajectory log from the next reset on.
    pub fn record_trajectory(&mut self, on: bool) {
        self.record = on;
    }

    pub fn trajectory(&self) -> &[TrajectoryRow] {
        &self.trajectory
    }

    /// CSV with columns `t, robot_x, robot_y, robot_heading, h{i}_x, h{i}_y,
    /// r_goal, r_collision, r_social, r_approach, r_velocity`.
    pub fn write_trajectory_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = vec!["t".to_string(), "robot_x".into(), "robot_y".into(), "robot_heading".into()];
        for i in 0..self.config.n_humans {
            header.push(format!("h{i}_x"));
            header.push(format!("h{i}_y"));
        }
        header.extend(["r_goal", "r_collision", "r_social", "r_approach", "r_velocity"].map(String::from));
        writeln!(out, "{}", header.join(","))?;
        for row in &self.trajectory {
            let mut fields = vec![row.t.to_string()];
            fields.extend(row.robot.iter().map(|v| v.to_string()));
            fields.extend(row.humans.iter().flat_map(|h| h.iter().map(|v| v.to_string())));
            fields.extend(row.components.iter().map(|v| v.to_string()));
            writeln!(out, "{}", fields.join(","))?;
        }
        Ok(())
    }

    fn random_point(&mut self) -> [f64; 2] {
        [self.rng.random_range(0.0..ROOM[0]), self.rng.random_range(0.0..ROOM[1])]
    }

    fn sample_goal(&mut self) -> [f64; 2] {
        [self.rng.random_range(0.0..=2.0), self.rng.random_range(0.0..=10.0)]
    }

    pub fn observe(&self) -> Vec<f64> {
        let s = &self.state;
        let r = s.robot;
        let mut obs = vec![r.position[0], r.position[1], r.heading, r.linear_vel, s.goal[0], s.goal[1]];
        for h in &s.humans {
            obs.extend([
                h.position[0] - r.position[0],
                h.position[1] - r.position[1],
                h.velocity[0],
                h.velocity[1],
                h.orientation,
            ]);
        }
        obs
    }

    fn social_force_step(&mut self) {
        let f = self.config.force.clone();
        let dt = self.config.dt;
        let robot = self.state.robot.position;
        let old = self.state.humans.clone();
        let mut new_waypoints = Vec::new();
        for (i, h) in self.state.humans.iter_mut().enumerate() {
            let to_wp = [h.waypoint[0] - h.position[0], h.waypoint[1] - h.position[1]];
            let dwp = to_wp[0].hypot(to_wp[1]).max(1e-9);
            let mut force = [
                (f.desired_speed * to_wp[0] / dwp - h.velocity[0]) / f.relaxation,
                (f.desired_speed * to_wp[1] / dwp - h.velocity[1]) / f.relaxation,
            ];
            let others = old
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, o)| o.position)
                .chain(std::iter::once(robot));
            for p in others {
                let d = [h.position[0] - p[0], h.position[1] - p[1]];
                let n = d[0].hypot(d[1]).max(1e-9);
                let mag = f.strength * ((2.0 * f.radius - n) / f.range).exp();
                force[0] += mag * d[0] / n;
                force[1] += mag * d[1] / n;
            }
            let walls = [
                (h.position[0], [1.0, 0.0]),
                (ROOM[0] - h.position[0], [-1.0, 0.0]),
                (h.position[1], [0.0, 1.0]),
                (ROOM[1] - h.position[1], [0.0, -1.0]),
            ];
            for (d, n) in walls {
                let mag = f.strength * ((f.radius - d.max(0.0)) / f.range).exp();
                force[0] += mag * n[0];
                force[1] += mag * n[1];
            }
            let mut v = [h.velocity[0] + force[0] * dt, h.velocity[1] + force[1] * dt];
            let speed = v[0].hypot(v[1]);
            let cap = f.max_speed_factor * f.desired_speed;
            if speed > cap {
                v = [v[0] * cap / speed, v[1] * cap / speed];
            }
            h.velocity = v;
            h.position = clamp_room([h.position[0] + v[0] * dt, h.position[1] + v[1] * dt]);
            if v[0].hypot(v[1]) > 0.05 {
                h.orientation = v[1].atan2(v[0]);
            }
            if dist(h.position, h.waypoint) < self.config.waypoint_radius {
                new_waypoints.push(i);
            }
        }
        for i in new_waypoints {
            let wp = self.random_point();
            self.state.humans[i].waypoint = wp;
        }
    }

    fn push_row(&mut self, comps: [f64; N_COMPONENTS]) {
        if self.record {
            let s = &self.state;
            self.trajectory.push(TrajectoryRow {
                t: self.t,
                robot: [s.robot.position[0], s.robot.position[1], s.robot.heading],
                humans: s.humans.iter().map(|h| h.position).collect(),
                components: comps,
            });
        }
    }

    /// Advances one step with physical controls (rad/s, m/s), clamped to
    /// the configured bounds. A goal reached on the previous step is
    /// replaced before moving.
    pub fn step_physical(&mut self, angular: f64, linear: f64) -> [f64; N_COMPONENTS] {
        if dist(self.state.robot.position, self.state.goal) < self.config.goal_radius {
            self.state.goal = self.sample_goal();
        }
        let w = angular.clamp(-self.config.max_angular, self.config.max_angular);
        let v = linear.clamp(-self.config.max_linear, self.config.max_linear);
        let dt = self.config.dt;
        let r = &mut self.state.robot;
        r.angular_vel = w;
        r.linear_vel = v;
        r.heading = wrap_pi(r.heading + w * dt);
        r.position = clamp_room([
            r.position[0] + v * dt * r.heading.cos(),
            r.position[1] + v * dt * r.heading.sin(),
        ]);
        self.social_force_step();
        self.t += 1;
        let comps = components(&self.state, &self.config);
        self.push_row(comps);
        comps
    }
}

impl Environment for SocialNavEnv {
    fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn n_components(&self) -> usize {
        N_COMPONENTS
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.trajectory.clear();
        let goal = self.sample_goal();
        let mut humans: Vec<Human> = Vec::with_capacity(self.config.n_humans);
        while humans.len() < self.config.n_humans {
            let p = self.random_point();
            let clear = humans.iter().all(|h| dist(h.position, p) >= self.config.min_separation)
                && dist(ROBOT_START, p) >= self.config.min_separation;
            if !clear {
                continue;
            }
            let waypoint = self.random_point();
            let orientation = self.rng.random_range(-PI..PI);
            humans.push(Human {
                position: p,
                velocity: [0.0, 0.0],
                orientation,
                waypoint,
            });
        }
        self.state = NavState {
            robot: Robot {
                position: ROBOT_START,
                heading: PI,
                linear_vel: 0.0,
                angular_vel: 0.0,
            },
            humans,
            goal,
        };
        let comps = components(&self.state, &self.config);
        self.push_row(comps);
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let a = clamp_action(action, 2, "socialnav")?;
        let comps = self.step_physical(a[0] * self.config.max_angular, a[1] * self.config.max_linear);
        Ok(Step {
            obs: self.observe(),
            components: comps.to_vec(),
        })
    }
}
