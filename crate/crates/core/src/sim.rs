//! Synthetic star-field event generator with exact ground truth.
//!
//! The camera attitude `R(t)` maps inertial directions into the camera
//! frame, so a star with inertial direction `s` is seen along `R(t)·s`.
//! Events are emitted at the projected star centres with Gaussian pixel
//! noise; uniform spurious events model sensor noise.

use std::io::{BufRead, Write};

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};

use crate::error::{Error, Result};
use crate::events::{Event, Polarity, SensorSize};
use crate::geom::{exp_vec, parse_row_major, CameraIntrinsics, Rotation, RowMajor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Star {
    pub direction: Vector3<f64>,
    pub brightness: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StarScene {
    pub stars: Vec<Star>,
    pub intrinsics: CameraIntrinsics,
    pub sensor: SensorSize,
}

/// Camera used by the simulator unless told otherwise: a 240×180 sensor.
pub fn default_camera() -> (CameraIntrinsics, SensorSize) {
    (
        CameraIntrinsics {
            fx: 250.0,
            fy: 250.0,
            cx: 120.0,
            cy: 90.0,
        },
        SensorSize {
            width: 240,
            height: 180,
        },
    )
}

/// Stars uniform on the cap of half-angle `fov_deg / 2` around the optical
/// axis, brightness uniform in `brightness_range`.
pub fn generate_scene(
    n_stars: usize,
    fov_deg: f64,
    brightness_range: (f64, f64),
    intrinsics: CameraIntrinsics,
    sensor: SensorSize,
    seed: u64,
) -> Result<StarScene> {
    if n_stars == 0 {
        return Err(Error::invalid("need at least one star"));
    }
    if !(0.0..=90.0).contains(&fov_deg) {
        return Err(Error::invalid(format!("field of view {fov_deg} outside [0, 90] degrees")));
    }
    let (b_lo, b_hi) = brightness_range;
    if !(b_lo > 0.0 && b_hi >= b_lo) {
        return Err(Error::invalid("brightness range must be positive and ordered"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cos_max = (fov_deg.to_radians() / 2.0).cos();
    let stars = (0..n_stars)
        .map(|_| {
            let cos_t = 1.0 - rng.random::<f64>() * (1.0 - cos_max);
            let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
            let phi = rng.random::<f64>() * std::f64::consts::TAU;
            let brightness = if b_hi > b_lo { rng.random_range(b_lo..=b_hi) } else { b_lo };
            Star {
                direction: Vector3::new(sin_t * phi.cos(), sin_t * phi.sin(), cos_t),
                brightness,
            }
        })
        .collect();
    Ok(StarScene {
        stars,
        intrinsics,
        sensor,
    })
}

/// Piecewise-constant angular velocity. Segment `k` applies
/// `R(t) = exp((t − t_k)·ω_k)·R(t_k)`; past the last segment its velocity
/// continues.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionProfile {
    pub segments: Vec<(u64, Vector3<f64>)>,
}

impl MotionProfile {
    pub fn new(segments: Vec<(u64, Vector3<f64>)>) -> Result<Self> {
        if segments.is_empty() || segments.iter().any(|(d, _)| *d == 0) {
            return Err(Error::invalid("motion profile needs segments of positive duration"));
        }
        Ok(MotionProfile { segments })
    }

    pub fn constant(omega: Vector3<f64>, duration_us: u64) -> Self {
        MotionProfile {
            segments: vec![(duration_us.max(1), omega)],
        }
    }

    /// Velocity alternating between `omega` and `−omega` every `period_us`.
    pub fn wobble(omega: Vector3<f64>, period_us: u64, duration_us: u64) -> Self {
        let period_us = period_us.max(1);
        let n = duration_us.div_ceil(period_us).max(1);
        let segments = (0..n)
            .map(|k| (period_us, if k % 2 == 0 { omega } else { -omega }))
            .collect();
        MotionProfile { segments }
    }

    /// Attitude at `t` microseconds; `R(0) = I`.
    pub fn attitude(&self, t_us: u64) -> Rotation {
        let mut r = Rotation::identity();
        let mut start = 0u64;
        for (i, (dur, omega)) in self.segments.iter().enumerate() {
            let last = i + 1 == self.segments.len();
            if t_us <= start + dur || last {
                let tau = (t_us - start) as f64 * 1e-6;
                return exp_vec(&(omega * tau)) * r;
            }
            r = exp_vec(&(omega * (*dur as f64 * 1e-6))) * r;
            start += dur;
        }
        r
    }

    /// True relative rotation `R(α)·R(β)ᵀ`.
    pub fn relative(&self, alpha_us: u64, beta_us: u64) -> Rotation {
        self.attitude(alpha_us) * self.attitude(beta_us).transpose()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimParams {
    pub duration_us: u64,
    pub event_rate_per_star_hz: f64,
    pub pixel_noise_sigma: f64,
    pub outlier_ratio: f64,
    /// Spacing of the ground-truth samples.
    pub dt_us: u64,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            duration_us: 1_000_000,
            event_rate_per_star_hz: 1000.0,
            pixel_noise_sigma: 0.5,
            outlier_ratio: 0.05,
            dt_us: 50_000,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if self.duration_us == 0 || self.dt_us == 0 {
            return Err(Error::invalid("duration and dt must be positive"));
        }
        if !(self.event_rate_per_star_hz > 0.0) {
            return Err(Error::invalid("event rate must be positive"));
        }
        if !(self.pixel_noise_sigma >= 0.0) {
            return Err(Error::invalid("pixel noise must be non-negative"));
        }
        if !(self.outlier_ratio >= 0.0 && self.outlier_ratio < 1.0) {
            return Err(Error::invalid(format!(
                "outlier ratio {} outside [0, 1)",
                self.outlier_ratio
            )));
        }
        Ok(())
    }
}

/// Attitudes sampled every `dt_us` from 0 to the stream duration.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub dt_us: u64,
    pub attitudes: Vec<Rotation>,
}

impl GroundTruth {
    pub fn from_profile(profile: &MotionProfile, duration_us: u64, dt_us: u64) -> Self {
        let n = duration_us / dt_us;
        GroundTruth {
            dt_us,
            attitudes: (0..=n).map(|k| profile.attitude(k * dt_us)).collect(),
        }
    }

    pub fn times(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.attitudes.len() as u64).map(|k| k * self.dt_us)
    }

    pub fn attitude(&self, t_us: u64) -> Result<Rotation> {
        if !t_us.is_multiple_of(self.dt_us) {
            return Err(Error::MissingGroundTruth(t_us));
        }
        self.attitudes
            .get((t_us / self.dt_us) as usize)
            .copied()
            .ok_or(Error::MissingGroundTruth(t_us))
    }

    pub fn relative(&self, alpha_us: u64, beta_us: u64) -> Result<Rotation> {
        Ok(self.attitude(alpha_us)? * self.attitude(beta_us)?.transpose())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_us,r00,r01,r02,r10,r11,r12,r20,r21,r22")?;
        for (t, r) in self.times().zip(&self.attitudes) {
            writeln!(w, "{t},{}", RowMajor(r))?;
        }
        Ok(())
    }

    /// Reads `t_us,r00..r22` rows; times must be consecutive multiples of a
    /// common spacing starting at 0.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let rows = read_attitude_rows(r)?;
        if rows.len() < 2 {
            return Err(Error::invalid("ground truth needs at least two samples"));
        }
        let dt = rows[1].0;
        for (k, (t, _)) in rows.iter().enumerate() {
            if dt == 0 || *t != k as u64 * dt {
                return Err(Error::invalid(format!(
                    "ground truth sample {k} at {t} us is off the {dt} us grid"
                )));
            }
        }
        Ok(GroundTruth {
            dt_us: dt,
            attitudes: rows.into_iter().map(|(_, r)| r).collect(),
        })
    }
}

/// Parses `t_us,r00..r22[,…]` rows after a header line.
pub fn read_attitude_rows<R: BufRead>(r: R) -> Result<Vec<(u64, Rotation)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with('t')) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() < 10 {
            return Err(Error::parse(lineno, format!("expected 10 fields, found {}", fields.len())));
        }
        let t = fields[0]
            .parse::<u64>()
            .map_err(|e| Error::parse(lineno, format!("bad time {:?}: {e}", fields[0])))?;
        out.push((t, parse_row_major(&fields[1..10], lineno)?));
    }
    Ok(out)
}

/// Simulated stream and what generated it.
#[derive(Clone, Debug)]
pub struct Simulation {
    pub events: Vec<Event>,
    pub ground_truth: GroundTruth,
    pub n_signal: usize,
    pub n_outliers: usize,
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Generates a time-sorted event stream. Pixel coordinates are rounded to
/// the precision of the text format so that a written and re-read stream
/// equals the in-memory one.
pub fn generate_events(
    scene: &StarScene,
    profile: &MotionProfile,
    params: &SimParams,
    seed: u64,
) -> Result<Simulation> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, params.pixel_noise_sigma.max(0.0))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let sensor = scene.sensor;
    let duration_s = params.duration_us as f64 * 1e-6;

    let mut events = Vec::new();
    for star in &scene.stars {
        let rate = params.event_rate_per_star_hz * star.brightness;
        let gap = Exp::new(rate).map_err(|e| Error::invalid(e.to_string()))?;
        let mut t = 0.0;
        let mut emitted = 0u64;
        loop {
            t += gap.sample(&mut rng);
            if t > duration_s {
                break;
            }
            let t_us = ((t * 1e6).round() as u64).min(params.duration_us);
            let ray = profile.attitude(t_us).rotate(&star.direction);
            let Ok(px) = scene.intrinsics.project(&ray) else {
                continue;
            };
            let px = px + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            let (x, y) = (round4(px.x), round4(px.y));
            if !sensor.contains(x, y) {
                continue;
            }
            let polarity = if emitted.is_multiple_of(2) {
                Polarity::Positive
            } else {
                Polarity::Negative
            };
            emitted += 1;
            events.push(Event::new(t_us, x, y, polarity));
        }
    }
    let n_signal = events.len();

    let r = params.outlier_ratio;
    let n_outliers = if r > 0.0 && n_signal > 0 {
        let mean = n_signal as f64 * r / (1.0 - r);
        Poisson::new(mean)
            .map_err(|e| Error::invalid(e.to_string()))?
            .sample(&mut rng) as usize
    } else {
        0
    };
    for _ in 0..n_outliers {
        let t_us = rng.random_range(0..=params.duration_us);
        let x = round4(rng.random::<f64>() * sensor.width as f64);
        let y = round4(rng.random::<f64>() * sensor.height as f64);
        let (x, y) = (x.min(sensor.width as f64 - 1e-4), y.min(sensor.height as f64 - 1e-4));
        let polarity = if rng.random::<bool>() {
            Polarity::Positive
        } else {
            Polarity::Negative
        };
        events.push(Event::new(t_us, x, y, polarity));
    }
    events.sort_by_key(|e| e.t);

    Ok(Simulation {
        events,
        ground_truth: GroundTruth::from_profile(profile, params.duration_us, params.dt_us),
        n_signal,
        n_outliers,
    })
}
