//! Event-triggered 3D Hough transform for relative rotation.
//!
//! Every event votes once per line direction. Each voted cell refines its
//! least-squares line incrementally; once a cell holds at least `delta`
//! votes its line yields a star correspondence (the line's pixel positions
//! at the window start and end), whose outer product of backprojected rays
//! is kept summed in the 3×3 correspondence matrix `C`. When a cell's line
//! moves, its previous outer product is subtracted before the new one is
//! added, so `C` is exact after every event. The rotation is read off `C`
//! by SVD when the window closes.

mod grid;
mod pca;

use std::ops::Range;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::events::{raw_point, to_points, Event, EventChunk, SensorSize};
use crate::geom::{CameraIntrinsics, Rotation};

pub use grid::{icosphere_vertices, roberts_matrix, roberts_project, DirectionGrid, PlaneGrid};
pub use pca::{LineMoments, LinePca};

/// Tunables of one Hough instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HoughConfig {
    pub subdivision_level: u32,
    /// Vote threshold δ.
    pub delta: u32,
    /// Edge of a (u, v) bin, in scaled units.
    pub bin_size: f64,
    /// Scaled time units per millisecond.
    pub time_scale_ms: f64,
    /// Minimum |time component| of a line direction for endpoint extraction.
    pub eps_dir: f64,
}

impl Default for HoughConfig {
    fn default() -> Self {
        HoughConfig {
            subdivision_level: 4,
            delta: 40,
            bin_size: 2.0,
            time_scale_ms: 0.3,
            eps_dir: 1e-6,
        }
    }
}

impl HoughConfig {
    /// Scaled units per microsecond.
    pub fn time_scale_us(&self) -> f64 {
        self.time_scale_ms * 1e-3
    }

    /// Configuration for windows `factor` times as long as the ones this one
    /// is tuned for: the window keeps the same scaled temporal extent and the
    /// vote threshold follows the expected number of events per track.
    pub fn rescaled(&self, factor: f64) -> HoughConfig {
        HoughConfig {
            delta: ((self.delta as f64 * factor).round() as u32).max(1),
            time_scale_ms: self.time_scale_ms / factor,
            ..*self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta == 0 {
            return Err(Error::invalid("delta must be at least 1"));
        }
        if !(self.bin_size > 0.0) || !(self.time_scale_ms > 0.0) || !(self.eps_dir >= 0.0) {
            return Err(Error::invalid(
                "bin_size and time_scale_ms must be positive, eps_dir non-negative",
            ));
        }
        Ok(())
    }
}

/// Address of a Hough cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub direction: u32,
    pub u: u32,
    pub v: u32,
}

const NO_CONTRIBUTION: u32 = u32::MAX;

fn plane_key(u: u32, v: u32) -> u64 {
    (u as u64) << 32 | v as u64
}

/// Line fit state of a cell: moments below the vote threshold, the
/// incrementally updated SVD from the threshold on.
#[derive(Clone, Debug, PartialEq)]
pub enum LineFit {
    Moments(LineMoments),
    Pca(Box<LinePca>),
}

impl LineFit {
    pub fn pca(&self) -> LinePca {
        match self {
            LineFit::Moments(m) => m.to_pca(),
            LineFit::Pca(p) => **p,
        }
    }
}

/// Votes and running line fit of one cell.
#[derive(Clone, Debug)]
pub struct HoughCell {
    pub votes: u32,
    pub fit: LineFit,
    contribution: u32,
}

impl HoughCell {
    /// Current (mean, P, Σ) of the cell's points.
    pub fn line(&self) -> LinePca {
        self.fit.pca()
    }
}

/// Rays of the correspondence a cell last added to `C`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub ray_alpha: Vector3<f64>,
    pub ray_beta: Vector3<f64>,
}

impl Contribution {
    pub fn outer(&self) -> Matrix3<f64> {
        self.ray_alpha * self.ray_beta.transpose()
    }
}

/// Operation counters; per-event work is bounded by a constant per visited
/// direction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub events: u64,
    pub directions_visited: u64,
    pub votes: u64,
    pub out_of_grid: u64,
    pub moment_updates: u64,
    pub pca_inits: u64,
    pub pca_updates: u64,
    pub qr_3x2: u64,
    pub svd_5x5: u64,
    pub endpoint_evals: u64,
    pub c_additions: u64,
    pub c_subtractions: u64,
    pub degenerate_lines: u64,
}

impl OpCounts {
    fn merge(&mut self, o: &OpCounts) {
        self.events = self.events.max(o.events);
        self.directions_visited += o.directions_visited;
        self.votes += o.votes;
        self.out_of_grid += o.out_of_grid;
        self.moment_updates += o.moment_updates;
        self.pca_inits += o.pca_inits;
        self.pca_updates += o.pca_updates;
        self.qr_3x2 += o.qr_3x2;
        self.svd_5x5 += o.svd_5x5;
        self.endpoint_evals += o.endpoint_evals;
        self.c_additions += o.c_additions;
        self.c_subtractions += o.c_subtractions;
        self.degenerate_lines += o.degenerate_lines;
    }
}

/// Rotation estimate over a window `[alpha, beta]`, mapping rays observed at
/// `beta` to rays observed at `alpha`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativeRotation {
    pub rotation: Rotation,
    pub alpha: u64,
    pub beta: u64,
    pub n_correspondences: usize,
    pub n_events: usize,
    pub n_cells_over_delta: usize,
}

/// Endpoints at `alpha` and `beta` (pixels) of a line given in recentred
/// scaled coordinates.
pub fn cell_line_endpoints(
    mean: &Vector3<f64>,
    direction: &Vector3<f64>,
    alpha: u64,
    beta: u64,
    centroid: &Vector3<f64>,
    time_scale_us: f64,
    eps_dir: f64,
) -> Result<(Vector2<f64>, Vector2<f64>)> {
    let dt = direction.z;
    if !(dt.abs() > eps_dir) {
        return Err(Error::DegenerateLine(dt));
    }
    let p = mean + centroid;
    let tau_beta = (beta - alpha) as f64 * time_scale_us;
    let xy = Vector2::new(p.x, p.y);
    let dxy = Vector2::new(direction.x, direction.y);
    let s_alpha = xy + dxy * ((0.0 - p.z) / dt);
    let s_beta = xy + dxy * ((tau_beta - p.z) / dt);
    Ok((s_alpha, s_beta))
}

/// Hough accumulator for one time window.
#[derive(Clone, Debug)]
pub struct HoughAccumulator {
    config: HoughConfig,
    grid: Arc<DirectionGrid>,
    plane: PlaneGrid,
    intrinsics: CameraIntrinsics,
    alpha: u64,
    beta: u64,
    time_scale_us: f64,
    centroid: Vector3<f64>,
    directions: Range<usize>,
    /// Per direction: packed (u, v) bin → cell.
    index: Vec<FxHashMap<u64, u32>>,
    cells: Vec<HoughCell>,
    contributions: Vec<Contribution>,
    c: Matrix3<f64>,
    cells_over_delta: usize,
    counts: OpCounts,
}

impl HoughAccumulator {
    /// Accumulator for `[alpha, beta]` recentring points by `centroid`
    /// (given in unrecentred `[x, y, (t − α)·scale]` coordinates).
    pub fn new(
        config: HoughConfig,
        grid: Arc<DirectionGrid>,
        intrinsics: CameraIntrinsics,
        sensor: SensorSize,
        alpha: u64,
        beta: u64,
        centroid: Vector3<f64>,
    ) -> Result<Self> {
        config.validate()?;
        if alpha >= beta {
            return Err(Error::invalid(format!("window [{alpha}, {beta}] is empty")));
        }
        if grid.subdivision_level() != config.subdivision_level {
            return Err(Error::invalid("direction grid does not match subdivision_level"));
        }
        let time_scale_us = config.time_scale_us();
        // any point of the sensor × window box lies within one box diagonal
        // of a centroid inside the box
        let extent = Vector3::new(
            sensor.width as f64,
            sensor.height as f64,
            (beta - alpha) as f64 * time_scale_us,
        );
        let plane = PlaneGrid::covering(extent.norm() + config.bin_size, config.bin_size);
        let n = grid.len();
        Ok(HoughAccumulator {
            config,
            grid,
            plane,
            intrinsics,
            alpha,
            beta,
            time_scale_us,
            centroid,
            directions: 0..n,
            index: vec![FxHashMap::default(); n],
            cells: Vec::new(),
            contributions: Vec::new(),
            c: Matrix3::zeros(),
            cells_over_delta: 0,
            counts: OpCounts::default(),
        })
    }

    /// Accumulator centred on the middle of the sensor × window box, for
    /// streaming use where the chunk centroid is not known in advance.
    pub fn streaming(
        config: HoughConfig,
        grid: Arc<DirectionGrid>,
        intrinsics: CameraIntrinsics,
        sensor: SensorSize,
        alpha: u64,
        beta: u64,
    ) -> Result<Self> {
        let centre = Vector3::new(
            sensor.width as f64 / 2.0,
            sensor.height as f64 / 2.0,
            (beta.saturating_sub(alpha)) as f64 * config.time_scale_us() / 2.0,
        );
        Self::new(config, grid, intrinsics, sensor, alpha, beta, centre)
    }

    /// Restricts voting to a subset of direction indices.
    pub fn with_directions(mut self, directions: Range<usize>) -> Self {
        self.directions = directions.start.min(self.grid.len())..directions.end.min(self.grid.len());
        self
    }

    pub fn config(&self) -> &HoughConfig {
        &self.config
    }

    pub fn plane(&self) -> &PlaneGrid {
        &self.plane
    }

    pub fn window(&self) -> (u64, u64) {
        (self.alpha, self.beta)
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.centroid
    }

    /// Current correspondence matrix `C`.
    pub fn correspondence_matrix(&self) -> Matrix3<f64> {
        self.c
    }

    pub fn counts(&self) -> &OpCounts {
        &self.counts
    }

    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cells_over_delta(&self) -> usize {
        self.cells_over_delta
    }

    pub fn cell(&self, key: CellKey) -> Option<&HoughCell> {
        self.index
            .get(key.direction as usize)?
            .get(&plane_key(key.u, key.v))
            .map(|&i| &self.cells[i as usize])
    }

    pub fn cells(&self) -> impl Iterator<Item = (CellKey, &HoughCell)> {
        self.index.iter().enumerate().flat_map(move |(d, m)| {
            m.iter().map(move |(&k, &i)| {
                let key = CellKey {
                    direction: d as u32,
                    u: (k >> 32) as u32,
                    v: k as u32,
                };
                (key, &self.cells[i as usize])
            })
        })
    }

    /// Correspondence currently contributed by a cell, if any.
    pub fn contribution(&self, cell: &HoughCell) -> Option<&Contribution> {
        (cell.contribution != NO_CONTRIBUTION).then(|| &self.contributions[cell.contribution as usize])
    }

    /// Recentred scaled point of an event.
    pub fn point_of(&self, e: &Event) -> Vector3<f64> {
        raw_point(e, self.alpha, self.time_scale_us) - self.centroid
    }

    fn endpoints(&self, line: &LinePca) -> Result<(Vector2<f64>, Vector2<f64>)> {
        cell_line_endpoints(
            &line.mean(),
            &line.direction(),
            self.alpha,
            self.beta,
            &self.centroid,
            self.time_scale_us,
            self.config.eps_dir,
        )
    }

    fn correspondence(&self, line: &LinePca) -> Result<Contribution> {
        let (sa, sb) = self.endpoints(line)?;
        Ok(Contribution {
            ray_alpha: self.intrinsics.backproject(&sa),
            ray_beta: self.intrinsics.backproject(&sb),
        })
    }

    /// Votes one event. Events outside the window are rejected.
    pub fn process_event(&mut self, e: &Event) -> Result<()> {
        if e.t < self.alpha || e.t > self.beta {
            return Err(Error::invalid(format!(
                "event at {} outside window [{}, {}]",
                e.t, self.alpha, self.beta
            )));
        }
        let z = self.point_of(e);
        self.vote_point(&z);
        Ok(())
    }

    /// Votes a time-ordered batch of events. Every cell sees its points in
    /// the same order as with [`process_event`](Self::process_event), so the
    /// cells end up identical; `C` differs by summation order only.
    pub fn process_events(&mut self, events: &[Event]) -> Result<()> {
        if let Some(e) = events.iter().find(|e| e.t < self.alpha || e.t > self.beta) {
            return Err(Error::invalid(format!(
                "event at {} outside window [{}, {}]",
                e.t, self.alpha, self.beta
            )));
        }
        let points: Vec<Vector3<f64>> = events.iter().map(|e| self.point_of(e)).collect();
        self.vote_points(&points);
        Ok(())
    }

    fn vote_point(&mut self, z: &Vector3<f64>) {
        self.counts.events += 1;
        for d in self.directions.clone() {
            self.vote_cell(d, z);
        }
    }

    /// Direction-major voting: one direction's cells stay hot in cache while
    /// the whole batch passes through it.
    fn vote_points(&mut self, zs: &[Vector3<f64>]) {
        self.counts.events += zs.len() as u64;
        for d in self.directions.clone() {
            for z in zs {
                self.vote_cell(d, z);
            }
        }
    }

    fn vote_cell(&mut self, d: usize, z: &Vector3<f64>) {
        let delta = self.config.delta;
        self.counts.directions_visited += 1;
        let (u, v) = self.grid.project(d, z);
        let Some((iu, iv)) = self.plane.bin(u, v) else {
            self.counts.out_of_grid += 1;
            return;
        };
        self.counts.votes += 1;
        let next = self.cells.len() as u32;
        let idx = *self.index[d].entry(plane_key(iu, iv)).or_insert(next) as usize;
        if idx == self.cells.len() {
            let fit = if delta == 1 {
                self.counts.pca_inits += 1;
                LineFit::Pca(Box::new(LinePca::from_point(z)))
            } else {
                self.counts.moment_updates += 1;
                LineFit::Moments(LineMoments::from_point(z))
            };
            self.cells.push(HoughCell {
                votes: 1,
                fit,
                contribution: NO_CONTRIBUTION,
            });
            if delta == 1 {
                self.refresh_contribution(idx);
            }
            return;
        }

        let cell = &mut self.cells[idx];
        cell.votes += 1;
        let votes = cell.votes;
        if votes > delta && cell.contribution != NO_CONTRIBUTION {
            let old = self.contributions[cell.contribution as usize].outer();
            self.c -= old;
            self.counts.c_subtractions += 1;
        }
        match &mut cell.fit {
            LineFit::Moments(m) => {
                m.update(z, votes);
                self.counts.moment_updates += 1;
                if votes >= delta {
                    cell.fit = LineFit::Pca(Box::new(m.to_pca()));
                    self.counts.pca_inits += 1;
                }
            }
            LineFit::Pca(p) => {
                p.update(z, votes);
                self.counts.pca_updates += 1;
                self.counts.qr_3x2 += 1;
                self.counts.svd_5x5 += 1;
            }
        }
        if votes >= delta {
            self.refresh_contribution(idx);
        }
    }

    /// Recomputes the correspondence of a cell at or over threshold and adds
    /// it to `C`. The previous contribution must already be subtracted.
    fn refresh_contribution(&mut self, idx: usize) {
        let cell = &self.cells[idx];
        if cell.votes == self.config.delta {
            self.cells_over_delta += 1;
        }
        self.counts.endpoint_evals += 1;
        match self.correspondence(&cell.line()) {
            Ok(contrib) => {
                self.c += contrib.outer();
                self.counts.c_additions += 1;
                let slot = cell.contribution;
                if slot == NO_CONTRIBUTION {
                    self.contributions.push(contrib);
                    self.cells[idx].contribution = (self.contributions.len() - 1) as u32;
                } else {
                    self.contributions[slot as usize] = contrib;
                }
            }
            Err(_) => {
                self.counts.degenerate_lines += 1;
                let slot = cell.contribution;
                if slot != NO_CONTRIBUTION {
                    // slot stays allocated but is no longer referenced
                    self.cells[idx].contribution = NO_CONTRIBUTION;
                }
            }
        }
    }

    /// `C` rebuilt from scratch from the current lines of all cells at or
    /// over threshold.
    pub fn recompute_correspondence_matrix(&self) -> Matrix3<f64> {
        let mut c = Matrix3::zeros();
        for cell in self.cells.iter().filter(|c| c.votes >= self.config.delta) {
            if let Ok(contrib) = self.correspondence(&cell.line()) {
                c += contrib.outer();
            }
        }
        c
    }

    /// Number of correspondences currently in `C`.
    pub fn n_correspondences(&self) -> usize {
        self.cells
            .iter()
            .filter(|c| c.contribution != NO_CONTRIBUTION)
            .count()
    }

    /// Extracts the rotation from `C`.
    pub fn finalize(&self) -> Result<RelativeRotation> {
        let rotation = rotation_from_correspondence(
            &self.c,
            self.counts.events as usize,
            self.cells_over_delta,
        )?;
        Ok(RelativeRotation {
            rotation,
            alpha: self.alpha,
            beta: self.beta,
            n_correspondences: self.n_correspondences(),
            n_events: self.counts.events as usize,
            n_cells_over_delta: self.cells_over_delta,
        })
    }
}

/// Least-squares rotation R with ray_alpha ≈ R·ray_beta for the
/// correspondences summed in `C = Σ ray_alpha·ray_betaᵀ`. Needs rank(C) ≥ 2.
pub fn rotation_from_correspondence(
    c: &Matrix3<f64>,
    n_events: usize,
    n_cells_over_delta: usize,
) -> Result<Rotation> {
    let svd = c.svd(true, true);
    let s = svd.singular_values;
    let s_max = s.max();
    let rank = if s_max <= 1e-12 {
        0
    } else {
        s.iter().filter(|&&x| x > 1e-10 * s_max).count()
    };
    let insufficient = Error::InsufficientCorrespondences {
        n_events,
        n_cells_over_delta,
        rank,
    };
    if rank < 2 {
        return Err(insufficient);
    }
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(insufficient),
    };
    let mut d = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(s.imin(), s.imin())] = -1.0;
    }
    Ok(Rotation::from_matrix_unchecked(u * d * v_t))
}

/// Estimates the relative rotation of a chunk: recentre, vote every event in
/// timestamp order, then extract the rotation.
pub fn run_chunk(
    chunk: &EventChunk,
    intrinsics: &CameraIntrinsics,
    config: &HoughConfig,
    grid: Arc<DirectionGrid>,
) -> Result<RelativeRotation> {
    let acc = accumulate_chunk(chunk, intrinsics, config, grid)?;
    acc.finalize()
}

/// Votes a whole chunk and returns the accumulator.
pub fn accumulate_chunk(
    chunk: &EventChunk,
    intrinsics: &CameraIntrinsics,
    config: &HoughConfig,
    grid: Arc<DirectionGrid>,
) -> Result<HoughAccumulator> {
    let cloud = to_points(chunk, config.time_scale_us())?;
    let mut acc = HoughAccumulator::new(
        *config,
        grid,
        *intrinsics,
        chunk.sensor,
        chunk.alpha,
        chunk.beta,
        cloud.centroid,
    )?;
    acc.vote_points(&cloud.points);
    Ok(acc)
}

/// Same result as [`run_chunk`], with the direction set split into `lanes`
/// independent accumulators whose `C` matrices are summed.
pub fn run_chunk_parallel(
    chunk: &EventChunk,
    intrinsics: &CameraIntrinsics,
    config: &HoughConfig,
    grid: Arc<DirectionGrid>,
    lanes: usize,
) -> Result<(RelativeRotation, Matrix3<f64>)> {
    let cloud = to_points(chunk, config.time_scale_us())?;
    let lanes = lanes.clamp(1, grid.len().max(1));
    let per_lane = grid.len().div_ceil(lanes);
    let base = HoughAccumulator::new(
        *config,
        grid.clone(),
        *intrinsics,
        chunk.sensor,
        chunk.alpha,
        chunk.beta,
        cloud.centroid,
    )?;
    let parts: Vec<HoughAccumulator> = (0..lanes)
        .into_par_iter()
        .map(|lane| {
            let mut acc = base
                .clone()
                .with_directions(lane * per_lane..(lane + 1) * per_lane);
            acc.vote_points(&cloud.points);
            acc
        })
        .collect();

    let mut c = Matrix3::zeros();
    let mut counts = OpCounts::default();
    let mut over = 0;
    let mut n_corr = 0;
    for part in &parts {
        c += part.c;
        counts.merge(&part.counts);
        over += part.cells_over_delta;
        n_corr += part.n_correspondences();
    }
    let rotation = rotation_from_correspondence(&c, counts.events as usize, over)?;
    Ok((
        RelativeRotation {
            rotation,
            alpha: chunk.alpha,
            beta: chunk.beta,
            n_correspondences: n_corr,
            n_events: counts.events as usize,
            n_cells_over_delta: over,
        },
        c,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Polarity;
    use crate::geom::{angular_distance, exp_rotation};

    const SENSOR: SensorSize = SensorSize {
        width: 240,
        height: 180,
    };

    fn intrinsics() -> CameraIntrinsics {
        CameraIntrinsics::new(250.0, 250.0, 120.0, 90.0).unwrap()
    }

    fn grid(level: u32) -> Arc<DirectionGrid> {
        Arc::new(DirectionGrid::build(level))
    }

    #[test]
    fn stationary_line_endpoints() {
        let (sa, sb) = cell_line_endpoints(
            &Vector3::new(0.0, 0.0, 0.0),
            &Vector3::z(),
            1000,
            101_000,
            &Vector3::new(30.0, 40.0, 50.0),
            1e-3,
            1e-6,
        )
        .unwrap();
        assert_eq!(sa, Vector2::new(30.0, 40.0));
        assert_eq!(sb, Vector2::new(30.0, 40.0));
    }

    #[test]
    fn sloped_line_endpoints() {
        // 0.1 px per scaled unit in x over a 100-unit window
        let d = Vector3::new(0.1, 0.0, 1.0).normalize();
        let (sa, sb) = cell_line_endpoints(
            &Vector3::zeros(),
            &d,
            0,
            100_000,
            &Vector3::new(100.0, 50.0, 50.0),
            1e-3,
            1e-6,
        )
        .unwrap();
        assert!((sb.x - sa.x - 10.0).abs() < 1e-12);
        assert!((sa.x - 95.0).abs() < 1e-12);
        assert_eq!(sa.y, sb.y);
    }

    #[test]
    fn horizontal_line_is_degenerate() {
        let r = cell_line_endpoints(&Vector3::zeros(), &Vector3::x(), 0, 10, &Vector3::zeros(), 1.0, 1e-6);
        assert!(matches!(r, Err(Error::DegenerateLine(_))));
    }

    #[test]
    fn rotation_from_exact_rays() {
        let r_true = exp_rotation(0.3, &Vector3::new(1.0, -2.0, 0.5).normalize());
        let mut c = Matrix3::zeros();
        for i in 0..10 {
            let f = i as f64;
            let beta_ray = Vector3::new((f * 0.7).sin() * 0.3, (f * 1.3).cos() * 0.2, 1.0).normalize();
            let alpha_ray = r_true.rotate(&beta_ray);
            c += alpha_ray * beta_ray.transpose();
        }
        let r = rotation_from_correspondence(&c, 0, 0).unwrap();
        assert!((r.matrix() - r_true.matrix()).abs().max() < 1e-9);
    }

    #[test]
    fn identical_endpoints_give_identity() {
        let mut c = Matrix3::zeros();
        for ray in [Vector3::new(0.1, 0.0, 1.0), Vector3::new(-0.2, 0.1, 1.0), Vector3::new(0.0, 0.3, 1.0)] {
            let r = ray.normalize();
            c += r * r.transpose();
        }
        let r = rotation_from_correspondence(&c, 0, 0).unwrap();
        assert!(angular_distance(&r, &Rotation::identity()) < 1e-12);
    }

    #[test]
    fn zero_and_rank_one_are_insufficient() {
        assert!(matches!(
            rotation_from_correspondence(&Matrix3::zeros(), 0, 0),
            Err(Error::InsufficientCorrespondences { rank: 0, .. })
        ));
        let r = Vector3::new(0.1, 0.2, 1.0).normalize();
        assert!(matches!(
            rotation_from_correspondence(&(r * r.transpose()), 5, 1),
            Err(Error::InsufficientCorrespondences { rank: 1, .. })
        ));
    }

    fn star_events(x0: f64, y0: f64, vx: f64, n: u64, alpha: u64, beta: u64) -> Vec<Event> {
        (0..n)
            .map(|i| {
                let t = alpha + (beta - alpha) * i / (n - 1);
                let x = x0 + vx * (t - alpha) as f64 * 1e-3;
                Event::new(t, x, y0, Polarity::Positive)
            })
            .collect()
    }

    #[test]
    fn single_star_threshold_crossing() {
        let events = star_events(100.0, 80.0, 0.0, 12, 0, 100_000);
        let config = HoughConfig {
            delta: 5,
            time_scale_ms: 1.0,
            ..HoughConfig::default()
        };
        let mut acc = HoughAccumulator::new(
            config,
            grid(2),
            intrinsics(),
            SENSOR,
            0,
            100_000,
            Vector3::new(120.0, 90.0, 50.0),
        );
        assert!(acc.is_err(), "grid level must match config");
        let config = HoughConfig {
            subdivision_level: 2,
            ..config
        };
        acc = HoughAccumulator::new(config, grid(2), intrinsics(), SENSOR, 0, 100_000, Vector3::new(120.0, 90.0, 50.0));
        let mut acc = acc.unwrap();
        for e in &events[..4] {
            acc.process_event(e).unwrap();
            assert_eq!(acc.correspondence_matrix(), Matrix3::zeros());
        }
        acc.process_event(&events[4]).unwrap();
        let c = acc.correspondence_matrix();
        assert!(acc.cells_over_delta() >= 1);
        // every correspondence is the same stationary star: C has rank one
        let sv = c.singular_values();
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        assert!(sv[0] > 0.5 && sv[1] < 1e-9 * sv[0], "{sv:?}");
        for e in &events[5..] {
            acc.process_event(e).unwrap();
        }
        assert!(acc.finalize().is_err());
        assert!(acc.process_event(&Event::new(100_001, 1.0, 1.0, Polarity::Positive)).is_err());
    }

    #[test]
    fn endpoints_straddle_window() {
        // two events at the window ends on one line: the fitted line passes
        // through both, so the endpoints reproduce them
        let alpha = 5_000;
        let beta = 105_000;
        let events = [
            Event::new(alpha, 50.0, 60.0, Polarity::Positive),
            Event::new(beta, 54.0, 63.0, Polarity::Positive),
        ];
        let config = HoughConfig {
            delta: 2,
            bin_size: 20.0,
            time_scale_ms: 1.0,
            ..HoughConfig::default()
        };
        let chunk = EventChunk {
            events: events.to_vec(),
            alpha,
            beta,
            sensor: SENSOR,
        };
        let acc = accumulate_chunk(&chunk, &intrinsics(), &config, grid(4)).unwrap();
        let mut seen = 0;
        for (_, cell) in acc.cells() {
            if cell.votes == 2 {
                let (sa, sb) = acc.endpoints(&cell.line()).unwrap();
                assert!((sa - Vector2::new(50.0, 60.0)).norm() < 1e-9);
                assert!((sb - Vector2::new(54.0, 63.0)).norm() < 1e-9);
                seen += 1;
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn empty_chunk_is_an_error() {
        let chunk = EventChunk {
            events: vec![],
            alpha: 0,
            beta: 100,
            sensor: SENSOR,
        };
        assert!(matches!(
            run_chunk(&chunk, &intrinsics(), &HoughConfig::default(), grid(4)),
            Err(Error::EmptyChunk { .. })
        ));
    }

    #[test]
    fn batch_voting_matches_event_order() {
        let mut events = star_events(60.0, 50.0, 0.3, 80, 0, 100_000);
        events.extend(star_events(150.0, 120.0, -0.2, 80, 0, 100_000));
        events.sort_by_key(|e| e.t);
        let config = HoughConfig {
            delta: 5,
            time_scale_ms: 1.0,
            subdivision_level: 2,
            ..HoughConfig::default()
        };
        let make = || HoughAccumulator::streaming(config, grid(2), intrinsics(), SENSOR, 0, 100_000).unwrap();
        let mut one = make();
        for e in &events {
            one.process_event(e).unwrap();
        }
        let mut batched = make();
        for part in events.chunks(37) {
            batched.process_events(part).unwrap();
        }
        assert_eq!(one.n_cells(), batched.n_cells());
        for (key, cell) in one.cells() {
            let other = batched.cell(key).unwrap();
            assert_eq!(cell.votes, other.votes);
            assert_eq!(cell.fit, other.fit);
        }
        let diff = one.correspondence_matrix() - batched.correspondence_matrix();
        assert!(diff.amax() < 1e-9);
        assert_eq!(one.counts(), batched.counts());
        assert!(batched.process_events(&[Event::new(200_000, 1.0, 1.0, Polarity::Positive)]).is_err());
    }
}
