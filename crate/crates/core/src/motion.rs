//! Motion-compensated event images and the contrast-maximization baseline.
//!
//! Under constant angular velocity over `[α, β]`, an event at `t` is carried
//! back to `α` by the fraction `(t − α)/(β − α)` of the window's relative
//! rotation `exp(ω)`. Accumulating warped events gives an image that is
//! sharpest (highest variance) at the true `ω`.

use std::io::Write;
use std::path::Path;

use nalgebra::{Vector2, Vector3};

use crate::error::{Error, Result};
use crate::events::{Event, EventChunk, SensorSize};
use crate::geom::{exp_vec, log_rotation, CameraIntrinsics, Rotation};
use crate::hough::RelativeRotation;

/// Rotation angle and unit axis of a window's relative rotation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WarpParams {
    pub theta: f64,
    pub axis: Vector3<f64>,
    pub alpha: u64,
    pub beta: u64,
}

impl WarpParams {
    pub fn from_rotation_vector(omega: &Vector3<f64>, alpha: u64, beta: u64) -> Self {
        let theta = omega.norm();
        let axis = if theta > 0.0 { omega / theta } else { Vector3::x() };
        WarpParams {
            theta,
            axis,
            alpha,
            beta,
        }
    }

    pub fn from_rotation(r: &Rotation, alpha: u64, beta: u64) -> Self {
        let aa = log_rotation(r);
        WarpParams {
            theta: aa.angle,
            axis: aa.axis,
            alpha,
            beta,
        }
    }

    pub fn rotation_vector(&self) -> Vector3<f64> {
        self.axis * self.theta
    }

    fn fraction(&self, t: u64) -> f64 {
        (t.saturating_sub(self.alpha)) as f64 / (self.beta - self.alpha) as f64
    }
}

/// Pixel position of `e` carried back to the window start.
pub fn warp_event(e: &Event, params: &WarpParams, k: &CameraIntrinsics) -> Result<Vector2<f64>> {
    if e.t < params.alpha || e.t > params.beta || params.alpha >= params.beta {
        return Err(Error::invalid(format!(
            "event at {} outside window [{}, {}]",
            e.t, params.alpha, params.beta
        )));
    }
    let r = exp_vec(&(params.rotation_vector() * params.fraction(e.t)));
    k.project(&r.rotate(&k.backproject(&Vector2::new(e.x, e.y))))
}

/// Accumulated image on the sensor grid; pixel `(i, j)` is centred at
/// coordinates `(i, j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompensatedImage {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
    pub kernel_sigma: f64,
    pub params: WarpParams,
    pub use_polarity: bool,
}

impl CompensatedImage {
    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Writes a 16-bit binary PGM, affinely rescaled to the full range, and
    /// returns `(offset, scale)` such that `value = offset + scale · level`.
    pub fn write_pgm(&self, path: &Path) -> Result<(f64, f64)> {
        let lo = self.data.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scale = if hi > lo { (hi - lo) / 65535.0 } else { 1.0 };
        let mut out = Vec::with_capacity(self.data.len() * 2 + 32);
        write!(out, "P5\n{} {}\n65535\n", self.width, self.height)?;
        for v in &self.data {
            let level = ((v - lo) / scale).round().clamp(0.0, 65535.0) as u16;
            out.extend_from_slice(&level.to_be_bytes());
        }
        std::fs::write(path, out)?;
        let sidecar = path.with_extension("pgm.txt");
        std::fs::write(
            &sidecar,
            format!(
                "offset={lo:e}\nscale={scale:e}\nvariance={:e}\nkernel_sigma={}\nuse_polarity={}\n",
                variance_contrast(self),
                self.kernel_sigma,
                self.use_polarity
            ),
        )?;
        Ok((lo, scale))
    }
}

/// Renders the motion-compensated image of a chunk: a normalized Gaussian of
/// standard deviation `kernel_sigma` per warped event, truncated at 3σ with a
/// smooth roll-off from 2.5σ, weighted by polarity when `use_polarity` is set.
pub fn render_h_image(
    chunk: &EventChunk,
    params: &WarpParams,
    k: &CameraIntrinsics,
    kernel_sigma: f64,
    use_polarity: bool,
) -> Result<CompensatedImage> {
    let mut img = CompensatedImage {
        width: chunk.sensor.width,
        height: chunk.sensor.height,
        data: vec![0.0; chunk.sensor.width as usize * chunk.sensor.height as usize],
        kernel_sigma,
        params: *params,
        use_polarity,
    };
    let mut r = Renderer::new(chunk.sensor, kernel_sigma)?;
    r.render(&chunk.events, params, k, use_polarity, &mut img.data);
    Ok(img)
}

struct Renderer {
    sensor: SensorSize,
    sigma: f64,
    norm: f64,
    wx: Vec<f64>,
    wy: Vec<f64>,
}

impl Renderer {
    fn new(sensor: SensorSize, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(Error::invalid("kernel sigma must be positive"));
        }
        let radius = (3.0 * sigma).floor() as i64;
        let n = 2 * radius as usize + 2;
        Ok(Renderer {
            sensor,
            sigma,
            norm: 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma),
            wx: vec![0.0; n],
            wy: vec![0.0; n],
        })
    }

    fn render(&mut self, events: &[Event], params: &WarpParams, k: &CameraIntrinsics, use_polarity: bool, data: &mut [f64]) {
        data.iter_mut().for_each(|v| *v = 0.0);
        let (w, h) = (self.sensor.width as i64, self.sensor.height as i64);
        let cut = 3.0 * self.sigma;
        let inv = -0.5 / (self.sigma * self.sigma);
        for e in events {
            let Ok(p) = warp_event(e, params, k) else {
                continue;
            };
            if !(p.x.is_finite() && p.y.is_finite()) {
                continue;
            }
            let weight = if use_polarity { e.polarity.sign() } else { 1.0 } * self.norm;
            let (x0, y0) = ((p.x - cut).ceil() as i64, (p.y - cut).ceil() as i64);
            let (x1, y1) = ((p.x + cut).floor() as i64, (p.y + cut).floor() as i64);
            let (x0, y0, x1, y1) = (x0.max(0), y0.max(0), x1.min(w - 1), y1.min(h - 1));
            if x0 > x1 || y0 > y1 {
                continue;
            }
            for (i, x) in (x0..=x1).enumerate() {
                let d = x as f64 - p.x;
                self.wx[i] = (d * d * inv).exp();
            }
            for (j, y) in (y0..=y1).enumerate() {
                let d = y as f64 - p.y;
                self.wy[j] = (d * d * inv).exp();
            }
            for (j, y) in (y0..=y1).enumerate() {
                let dy = y as f64 - p.y;
                let row = (y * w) as usize;
                let wyj = self.wy[j] * weight;
                for (i, x) in (x0..=x1).enumerate() {
                    let dx = x as f64 - p.x;
                    let taper = self.taper(dx * dx + dy * dy);
                    if taper > 0.0 {
                        data[row + x as usize] += wyj * self.wx[i] * taper;
                    }
                }
            }
        }
    }

    /// 1 inside 2.5σ, 0 beyond 3σ, smoothstep in squared distance between,
    /// so the rendered image is C¹ in the warp parameters.
    #[inline]
    fn taper(&self, d2: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        let (lo, hi) = (6.25 * s2, 9.0 * s2);
        if d2 <= lo {
            1.0
        } else if d2 >= hi {
            0.0
        } else {
            let u = (d2 - lo) / (hi - lo);
            1.0 - u * u * (3.0 - 2.0 * u)
        }
    }
}

/// Population variance of the image.
pub fn variance_contrast(img: &CompensatedImage) -> f64 {
    variance(&img.data)
}

fn variance(data: &[f64]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CmOptions {
    pub kernel_sigma: f64,
    pub use_polarity: bool,
    /// Central finite-difference step, radians.
    pub fd_step: f64,
    /// First trial step of the line search, radians.
    pub initial_step: f64,
    /// Stop once the accepted step falls below this, radians.
    pub min_step: f64,
    pub max_iters: usize,
    /// Armijo sufficient-increase constant.
    pub armijo: f64,
}

impl Default for CmOptions {
    fn default() -> Self {
        CmOptions {
            kernel_sigma: 1.0,
            use_polarity: true,
            fd_step: 1e-5,
            initial_step: 1e-2,
            min_step: 1e-7,
            max_iters: 200,
            armijo: 1e-4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CmResult {
    pub relative: RelativeRotation,
    pub omega: Vector3<f64>,
    /// Objective after each accepted step, starting at ω = 0.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

/// Contrast objective of a chunk as a function of the rotation vector.
pub struct Objective<'a> {
    chunk: &'a EventChunk,
    k: &'a CameraIntrinsics,
    opts: CmOptions,
    renderer: Renderer,
    buf: Vec<f64>,
    pub evaluations: usize,
}

impl<'a> Objective<'a> {
    pub fn new(chunk: &'a EventChunk, k: &'a CameraIntrinsics, opts: CmOptions) -> Result<Self> {
        let renderer = Renderer::new(chunk.sensor, opts.kernel_sigma)?;
        Ok(Objective {
            chunk,
            k,
            opts,
            renderer,
            buf: vec![0.0; chunk.sensor.width as usize * chunk.sensor.height as usize],
            evaluations: 0,
        })
    }

    pub fn value(&mut self, omega: &Vector3<f64>) -> f64 {
        self.evaluations += 1;
        let params = WarpParams::from_rotation_vector(omega, self.chunk.alpha, self.chunk.beta);
        self.renderer
            .render(&self.chunk.events, &params, self.k, self.opts.use_polarity, &mut self.buf);
        variance(&self.buf)
    }

    /// Central finite-difference gradient with step `h`.
    pub fn gradient(&mut self, omega: &Vector3<f64>, h: f64) -> Vector3<f64> {
        let mut g = Vector3::zeros();
        for i in 0..3 {
            let mut p = *omega;
            let mut m = *omega;
            p[i] += h;
            m[i] -= h;
            g[i] = (self.value(&p) - self.value(&m)) / (2.0 * h);
        }
        g
    }
}

/// Maximizes the image variance over the window's rotation vector by
/// normalized-gradient ascent with a backtracking line search, from ω = 0.
pub fn cm_estimate(chunk: &EventChunk, k: &CameraIntrinsics, opts: &CmOptions) -> Result<CmResult> {
    if chunk.is_empty() {
        return Err(Error::EmptyChunk {
            alpha: chunk.alpha,
            beta: chunk.beta,
        });
    }
    let mut obj = Objective::new(chunk, k, *opts)?;
    let mut omega = Vector3::zeros();
    let mut f = obj.value(&omega);
    if !f.is_finite() {
        return Err(Error::OptimizerAbort(format!("objective {f} at ω = 0")));
    }
    let mut trace = vec![f];
    let mut step = opts.initial_step;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iters {
        iterations += 1;
        let g = obj.gradient(&omega, opts.fd_step);
        let gn = g.norm();
        if !gn.is_finite() {
            return Err(Error::OptimizerAbort(format!(
                "non-finite gradient at iteration {iterations}, ω = {omega:?}"
            )));
        }
        if gn == 0.0 {
            converged = true;
            break;
        }
        let dir = g / gn;
        let mut accepted = None;
        while step >= opts.min_step {
            let trial = omega + dir * step;
            let ft = obj.value(&trial);
            if !ft.is_finite() {
                return Err(Error::OptimizerAbort(format!(
                    "non-finite objective at iteration {iterations}"
                )));
            }
            if ft >= f + opts.armijo * step * gn {
                accepted = Some((trial, ft));
                break;
            }
            step /= 2.0;
        }
        match accepted {
            Some((trial, ft)) => {
                omega = trial;
                f = ft;
                trace.push(f);
                step *= 2.0;
            }
            None => {
                converged = true;
                break;
            }
        }
    }

    let rotation = exp_vec(&omega);
    Ok(CmResult {
        relative: RelativeRotation {
            rotation,
            alpha: chunk.alpha,
            beta: chunk.beta,
            n_correspondences: 0,
            n_events: chunk.events.len(),
            n_cells_over_delta: 0,
        },
        omega,
        objective: trace,
        iterations,
        evaluations: obj.evaluations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Polarity;
    use crate::geom::{angular_distance, exp_rotation};
    use crate::sim::{default_camera, generate_events, generate_scene, MotionProfile, SimParams};

    fn k() -> CameraIntrinsics {
        default_camera().0
    }

    fn chunk(events: Vec<Event>, alpha: u64, beta: u64) -> EventChunk {
        EventChunk {
            events,
            alpha,
            beta,
            sensor: default_camera().1,
        }
    }

    #[test]
    fn zero_rotation_and_window_start_are_fixed_points() {
        let e = Event::new(50, 37.25, 81.5, Polarity::Positive);
        let p = WarpParams::from_rotation_vector(&Vector3::zeros(), 0, 100);
        assert!((warp_event(&e, &p, &k()).unwrap() - Vector2::new(37.25, 81.5)).norm() < 1e-9);
        let p = WarpParams::from_rotation_vector(&Vector3::new(0.01, 0.02, -0.03), 50, 150);
        assert!((warp_event(&e, &p, &k()).unwrap() - Vector2::new(37.25, 81.5)).norm() < 1e-9);
    }

    #[test]
    fn window_end_matches_hand_composition() {
        let e = Event::new(100, 150.0, 70.0, Polarity::Negative);
        let r = exp_rotation(1f64.to_radians(), &Vector3::z());
        let p = WarpParams::from_rotation(&r, 0, 100);
        let ray = k().backproject(&Vector2::new(150.0, 70.0));
        let expect = k().project(&r.rotate(&ray)).unwrap();
        assert!((warp_event(&e, &p, &k()).unwrap() - expect).norm() < 1e-9);
        // about the optical axis the principal point stays put
        let c = Event::new(100, 120.0, 90.0, Polarity::Negative);
        assert!((warp_event(&c, &p, &k()).unwrap() - Vector2::new(120.0, 90.0)).norm() < 1e-9);
    }

    #[test]
    fn single_kernel_mass_and_peak() {
        let c = chunk(vec![Event::new(0, 60.0, 40.0, Polarity::Negative)], 0, 100);
        let p = WarpParams::from_rotation_vector(&Vector3::zeros(), 0, 100);
        let img = render_h_image(&c, &p, &k(), 1.0, false).unwrap();
        let peak = img.at(60, 40);
        assert!(img.data.iter().all(|&v| v <= peak));
        // mass beyond 2.5σ bounds what truncation removes
        let two_pi = 2.0 * std::f64::consts::PI;
        let tail = (-2.5f64 * 2.5 / 2.0).exp();
        assert!((img.sum() - two_pi * peak).abs() < tail * two_pi * peak);
    }

    #[test]
    fn opposite_polarities_cancel() {
        let c = chunk(
            vec![
                Event::new(0, 60.3, 40.7, Polarity::Negative),
                Event::new(0, 60.3, 40.7, Polarity::Positive),
            ],
            0,
            100,
        );
        let p = WarpParams::from_rotation_vector(&Vector3::zeros(), 0, 100);
        let img = render_h_image(&c, &p, &k(), 1.0, true).unwrap();
        assert!(img.data.iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn unsigned_render_is_sum_of_polarity_splits() {
        let events: Vec<Event> = (0..40)
            .map(|i| {
                let pol = if i % 3 == 0 { Polarity::Positive } else { Polarity::Negative };
                Event::new(i * 25, 20.0 + i as f64 * 3.1, 30.0 + (i as f64).sin() * 20.0, pol)
            })
            .collect();
        let p = WarpParams::from_rotation_vector(&Vector3::new(0.001, -0.002, 0.004), 0, 1000);
        let all = render_h_image(&chunk(events.clone(), 0, 1000), &p, &k(), 1.0, false).unwrap();
        let (pos, neg): (Vec<Event>, Vec<Event>) = events.into_iter().partition(|e| e.polarity == Polarity::Positive);
        let a = render_h_image(&chunk(pos, 0, 1000), &p, &k(), 1.0, false).unwrap();
        let b = render_h_image(&chunk(neg, 0, 1000), &p, &k(), 1.0, false).unwrap();
        for i in 0..all.data.len() {
            assert!((all.data[i] - a.data[i] - b.data[i]).abs() < 1e-12);
        }
    }

    fn image(data: Vec<f64>) -> CompensatedImage {
        CompensatedImage {
            width: data.len() as u32,
            height: 1,
            data,
            kernel_sigma: 1.0,
            params: WarpParams::from_rotation_vector(&Vector3::zeros(), 0, 1),
            use_polarity: false,
        }
    }

    #[test]
    fn variance_closed_forms() {
        assert_eq!(variance_contrast(&image(vec![2.5; 16])), 0.0);
        let d = 12;
        let mut v = vec![0.0; d];
        v[3] = d as f64;
        assert!((variance_contrast(&image(v.clone())) - (d as f64 - 1.0)).abs() < 1e-12);
        let shifted: Vec<f64> = v.iter().map(|x| x + 7.0).collect();
        assert!((variance_contrast(&image(shifted)) - (d as f64 - 1.0)).abs() < 1e-12);
    }

    fn moving_chunk(omega_deg: f64, seed: u64) -> (EventChunk, Rotation) {
        let (kk, s) = default_camera();
        let scene = generate_scene(10, 30.0, (1.0, 1.0), kk, s, seed).unwrap();
        let prof = MotionProfile::constant(Vector3::new(0.2, -0.4, 0.9).normalize() * omega_deg.to_radians(), 100_000);
        let params = SimParams {
            duration_us: 100_000,
            event_rate_per_star_hz: 600.0,
            pixel_noise_sigma: 0.3,
            outlier_ratio: 0.0,
            dt_us: 50_000,
        };
        let sim = generate_events(&scene, &prof, &params, seed).unwrap();
        (chunk(sim.events, 0, 100_000), prof.relative(0, 100_000))
    }

    fn unsigned() -> CmOptions {
        CmOptions {
            use_polarity: false,
            ..CmOptions::default()
        }
    }

    #[test]
    fn true_motion_is_sharper_than_none() {
        let (c, truth) = moving_chunk(20.0, 1);
        let at = |p: WarpParams| variance_contrast(&render_h_image(&c, &p, &k(), 1.0, false).unwrap());
        let zero = at(WarpParams::from_rotation_vector(&Vector3::zeros(), 0, 100_000));
        let best = at(WarpParams::from_rotation(&truth, 0, 100_000));
        assert!(best > zero, "{best} vs {zero}");
    }

    #[test]
    fn cm_recovers_motion_with_monotone_objective() {
        let (c, truth) = moving_chunk(4.0, 2);
        let r = cm_estimate(&c, &k(), &unsigned()).unwrap();
        let err = angular_distance(&r.relative.rotation, &truth).to_degrees();
        assert!(err < 0.2, "error {err} deg");
        assert!(r.objective.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn cm_static_chunk_stays_at_zero() {
        let (c, _) = moving_chunk(0.0, 3);
        let r = cm_estimate(&c, &k(), &unsigned()).unwrap();
        assert!(r.omega.norm().to_degrees() < 0.05, "{:?}", r.omega);
    }

    #[test]
    fn finite_difference_gradient_is_self_consistent() {
        let (c, _) = moving_chunk(4.0, 4);
        let kk = k();
        let mut obj = Objective::new(&c, &kk, unsigned()).unwrap();
        for omega in [Vector3::new(0.001, 0.002, -0.001), Vector3::new(-0.004, 0.0005, 0.003)] {
            let g1 = obj.gradient(&omega, 1e-5);
            let g2 = obj.gradient(&omega, 2.5e-6);
            assert!((g1 - g2).norm() <= 1e-3 * g1.norm(), "{g1:?} vs {g2:?}");
        }
    }

    #[test]
    fn empty_chunk_renders_zero_and_cm_rejects_it() {
        let c = chunk(vec![], 0, 100);
        let p = WarpParams::from_rotation_vector(&Vector3::zeros(), 0, 100);
        assert_eq!(render_h_image(&c, &p, &k(), 1.0, true).unwrap().sum(), 0.0);
        assert!(matches!(cm_estimate(&c, &k(), &CmOptions::default()), Err(Error::EmptyChunk { .. })));
    }

    #[test]
    fn pgm_round_trip_scale() {
        let dir = tempfile::tempdir().unwrap();
        let c = chunk(vec![Event::new(0, 10.0, 10.0, Polarity::Positive)], 0, 100);
        let p = WarpParams::from_rotation_vector(&Vector3::zeros(), 0, 100);
        let img = render_h_image(&c, &p, &k(), 1.0, false).unwrap();
        let path = dir.path().join("h.pgm");
        let (offset, scale) = img.write_pgm(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P5\n240 180\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        let idx = header.len() + 2 * (10 * 240 + 10);
        let level = u16::from_be_bytes([bytes[idx], bytes[idx + 1]]);
        assert_eq!(level, 65535);
        assert!((offset + scale * level as f64 - img.at(10, 10)).abs() < 1e-12);
        assert!(path.with_extension("pgm.txt").exists());
    }
}
