//! Deterministic synthetic LiDAR streams.
//!
//! A simulated spinning ranger sits above a textured, gently sloped ground plane with box
//! obstacles; mounting height and slope vary per stream. Obstacles
//! translate at a constant velocity between sweeps and the sensor may drive along +x, so
//! consecutive sweeps overlap but never repeat exactly (per-sweep azimuth jitter, range noise,
//! random dropouts). Intensity is a deterministic function of the hit surface plus seeded noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Point, RegionOfInterest, RigidTransform, Sweep, SweepStream, Vec3};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub beams: usize,
    pub azimuth_steps: usize,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    pub sensor_height: f64,
    /// Mounting height is drawn per stream, uniform within `sensor_height +- height_jitter`.
    pub height_jitter: f64,
    /// Ground slope per axis is drawn per stream, uniform in `[-max_grade, max_grade]`.
    pub max_grade: f64,
    pub max_range: f64,
    /// Standard deviation of the range noise, meters.
    pub range_noise: f64,
    pub dropout: f64,
    pub obstacles: usize,
    /// Velocity shared by every obstacle, m/s.
    pub obstacle_velocity: [f64; 2],
    /// Extra per-obstacle random velocity, uniform in `[-spread, spread]` per axis, m/s.
    pub velocity_spread: f64,
    pub ego_speed: f64,
    /// Seconds between sweeps.
    pub dt: f64,
    /// Standard deviation of the intensity noise, intensity units.
    pub intensity_noise: f64,
    pub roi_side: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            beams: 8,
            azimuth_steps: 96,
            elevation_min_deg: -24.0,
            elevation_max_deg: -2.5,
            sensor_height: 1.8,
            height_jitter: 0.2,
            max_grade: 0.01,
            max_range: 45.0,
            range_noise: 0.02,
            dropout: 0.05,
            obstacles: 6,
            obstacle_velocity: [0.0, 0.0],
            velocity_spread: 4.0,
            ego_speed: 3.0,
            dt: 0.1,
            intensity_noise: 2.0,
            roi_side: 400.0,
        }
    }
}

impl SceneParams {
    /// A smaller scene, used where many streams are needed.
    pub fn tiny() -> Self {
        SceneParams {
            beams: 4,
            azimuth_steps: 48,
            obstacles: 3,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
struct Obstacle {
    center: [f64; 2],
    half: [f64; 2],
    height: f64,
    velocity: [f64; 2],
    reflectance: f64,
}

/// Per-point surface label: 0 for the ground, `i + 1` for obstacle `i`.
pub type SurfaceLabel = u16;

pub fn generate_synthetic_stream(seed: u64, n_sweeps: usize, params: &SceneParams) -> SweepStream {
    generate_labeled_stream(seed, n_sweeps, params).0
}

pub fn generate_labeled_stream(
    seed: u64,
    n_sweeps: usize,
    params: &SceneParams,
) -> (SweepStream, Vec<Vec<SurfaceLabel>>) {
    assert!(n_sweeps >= 1, "a stream needs at least one sweep");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let obstacles: Vec<Obstacle> = (0..params.obstacles)
        .map(|_| {
            let r = rng.gen_range(6.0..params.max_range * 0.6);
            let a = rng.gen_range(0.0..2.0 * PI);
            let spread = params.velocity_spread;
            let jitter = |rng: &mut ChaCha8Rng| {
                if spread > 0.0 {
                    rng.gen_range(-spread..spread)
                } else {
                    0.0
                }
            };
            Obstacle {
                center: [r * a.cos(), r * a.sin()],
                half: [rng.gen_range(0.5..2.5), rng.gen_range(0.5..1.5)],
                height: rng.gen_range(1.0..3.5),
                velocity: [
                    params.obstacle_velocity[0] + jitter(&mut rng),
                    params.obstacle_velocity[1] + jitter(&mut rng),
                ],
                reflectance: rng.gen_range(60.0..240.0),
            }
        })
        .collect();
    let texture_seed: u64 = rng.gen();
    let j = params.height_jitter.abs();
    let height = if j > 0.0 {
        params.sensor_height + rng.gen_range(-j..=j)
    } else {
        params.sensor_height
    };
    let g = params.max_grade.abs();
    let grade: [f64; 2] = if g > 0.0 {
        [rng.gen_range(-g..=g), rng.gen_range(-g..=g)]
    } else {
        [0.0; 2]
    };

    let range_noise = Normal::new(0.0, params.range_noise.max(0.0)).unwrap();
    let intensity_noise = Normal::new(0.0, params.intensity_noise.max(0.0)).unwrap();
    // The sensor keeps its height above the ground while driving, so in the sensor frame the
    // ground is the same plane in every sweep.
    let ground = Ground { z0: -height, grade };

    let mut sweeps = Vec::with_capacity(n_sweeps);
    let mut labels = Vec::with_capacity(n_sweeps);
    for t in 0..n_sweeps {
        let time = t as f64 * params.dt;
        let ego_x = params.ego_speed * time;
        let ego = [ego_x, 0.0, grade[0] * ego_x];
        let boxes: Vec<([f64; 3], [f64; 3], f64)> = obstacles
            .iter()
            .map(|o| {
                // Sensor-frame AABB (the ego only translates).
                let cx = o.center[0] + o.velocity[0] * time - ego[0];
                let cy = o.center[1] + o.velocity[1] * time - ego[1];
                let base = [-1.0, 1.0]
                    .iter()
                    .flat_map(|&sx| {
                        [-1.0, 1.0].map(|sy| ground.z(cx + sx * o.half[0], cy + sy * o.half[1]))
                    })
                    .fold(f64::INFINITY, f64::min);
                (
                    [cx - o.half[0], cy - o.half[1], base],
                    [cx + o.half[0], cy + o.half[1], ground.z(cx, cy) + o.height],
                    o.reflectance,
                )
            })
            .collect();
        let phase: f64 = rng.gen();
        let mut points = Vec::new();
        let mut sweep_labels = Vec::new();
        for b in 0..params.beams {
            let frac = if params.beams > 1 {
                b as f64 / (params.beams - 1) as f64
            } else {
                0.5
            };
            let elev = (params.elevation_min_deg
                + frac * (params.elevation_max_deg - params.elevation_min_deg))
                .to_radians();
            for a in 0..params.azimuth_steps {
                let az = 2.0 * PI * (a as f64 + phase) / params.azimuth_steps as f64;
                let dir = [elev.cos() * az.cos(), elev.cos() * az.sin(), elev.sin()];
                let dropped = rng.gen::<f64>() < params.dropout;
                let dr = range_noise.sample(&mut rng);
                let di = intensity_noise.sample(&mut rng);
                if dropped {
                    continue;
                }
                let Some((range, surface, base)) =
                    cast_ray(&dir, &ground, &boxes, params.max_range)
                else {
                    continue;
                };
                let range = range + dr;
                let p = [dir[0] * range, dir[1] * range, dir[2] * range];
                let base = match base {
                    Some(r) => r,
                    None => ground_texture(texture_seed, p[0] + ego[0], p[1] + ego[1]),
                };
                let intensity = (base - 0.4 * range + di).round().clamp(0.0, 255.0) as u8;
                points.push(Point::new(p, intensity));
                sweep_labels.push(surface);
            }
        }
        sweeps.push(Sweep {
            points,
            timestamp: t as u64,
            pose: Some(RigidTransform::from_translation(ego)),
        });
        labels.push(sweep_labels);
    }
    let roi = RegionOfInterest::new(params.roi_side, [0.0; 3]).expect("positive ROI side");
    (
        SweepStream::new(roi, sweeps).expect("generated stream is valid"),
        labels,
    )
}

#[derive(Debug, Clone, Copy)]
struct Ground {
    z0: f64,
    grade: [f64; 2],
}

impl Ground {
    fn z(&self, x: f64, y: f64) -> f64 {
        self.z0 + self.grade[0] * x + self.grade[1] * y
    }
}

/// Nearest hit along `dir` from the origin: range, surface label, obstacle reflectance.
fn cast_ray(
    dir: &Vec3,
    ground: &Ground,
    boxes: &[([f64; 3], [f64; 3], f64)],
    max_range: f64,
) -> Option<(f64, SurfaceLabel, Option<f64>)> {
    let mut best: Option<(f64, SurfaceLabel, Option<f64>)> = None;
    // Solve t * dir.z = z0 + grade . (t * dir.xy); the sensor is above the plane (z0 < 0).
    let down = dir[2] - ground.grade[0] * dir[0] - ground.grade[1] * dir[1];
    if down < 0.0 {
        let t = ground.z0 / down;
        if t <= max_range {
            best = Some((t, 0, None));
        }
    }
    for (i, (lo, hi, refl)) in boxes.iter().enumerate() {
        let mut t0 = 0.0f64;
        let mut t1 = max_range;
        let mut hit = true;
        for k in 0..3 {
            if dir[k].abs() < 1e-12 {
                if 0.0 < lo[k] || 0.0 > hi[k] {
                    hit = false;
                    break;
                }
            } else {
                let a = lo[k] / dir[k];
                let b = hi[k] / dir[k];
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        if hit && t0 <= t1 && t0 > 0.0 && best.map_or(true, |(bt, _, _)| t0 < bt) {
            best = Some((t0, (i + 1) as SurfaceLabel, Some(*refl)));
        }
    }
    best
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// World-fixed ground reflectance: painted stripes every 3.5 m plus 2 m asphalt patches.
fn ground_texture(seed: u64, x: f64, y: f64) -> f64 {
    let lane = y.rem_euclid(3.5);
    if lane < 0.2 {
        return 190.0;
    }
    let ix = (x / 2.0).floor() as i64 as u64;
    let iy = (y / 2.0).floor() as i64 as u64;
    let h = splitmix(seed ^ splitmix(ix ^ splitmix(iy)));
    40.0 + (h % 40) as f64
}
