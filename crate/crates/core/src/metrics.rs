//! Accuracy of relative and absolute estimates against ground truth, and
//! per-chunk runtime of the estimators.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use crate::averaging::AttitudeSolution;
use crate::bank::{EdgeSet, REFERENCE_RESOLUTION_US};
use crate::error::{Error, Result};
use crate::events::EventChunk;
use crate::geom::{angular_distance, CameraIntrinsics};
use crate::hough::{run_chunk, DirectionGrid, HoughConfig};
use crate::motion::{cm_estimate, CmOptions};
use crate::sim::GroundTruth;

/// `√(Σ e² / n)`; zero for no errors.
pub fn rms(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return 0.0;
    }
    (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt()
}

/// Error statistics of one group, in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GroupStats {
    pub n: usize,
    pub rms_deg: f64,
    /// `√(Σ e²)` without the 1/n.
    pub root_sum_sq_deg: f64,
    pub median_deg: f64,
    pub max_deg: f64,
}

impl GroupStats {
    pub fn of(errors: &[f64]) -> Self {
        let mut sorted = errors.to_vec();
        sorted.sort_by(|a, b| a.total_cmp(b));
        GroupStats {
            n: errors.len(),
            rms_deg: rms(errors),
            root_sum_sq_deg: errors.iter().map(|e| e * e).sum::<f64>().sqrt(),
            median_deg: if sorted.is_empty() { 0.0 } else { sorted[sorted.len() / 2] },
            max_deg: sorted.last().copied().unwrap_or(0.0),
        }
    }
}

/// Per-edge relative errors grouped by window duration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RelativeReport {
    /// duration → `(alpha, beta, error_deg)`
    pub groups: BTreeMap<u64, Vec<(u64, u64, f64)>>,
}

impl RelativeReport {
    pub fn stats(&self) -> BTreeMap<u64, GroupStats> {
        self.groups
            .iter()
            .map(|(r, v)| (*r, GroupStats::of(&v.iter().map(|e| e.2).collect::<Vec<_>>())))
            .collect()
    }

    /// `resolution_ms,alpha_us,beta_us,error_deg`
    pub fn write_errors_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "resolution_ms,alpha_us,beta_us,error_deg")?;
        for (r, v) in self.groups.iter().rev() {
            for (a, b, e) in v {
                writeln!(w, "{},{a},{b},{e:.9e}", *r as f64 / 1000.0)?;
            }
        }
        Ok(())
    }

    /// `resolution_ms,n,rms_deg,root_sum_sq_deg,median_deg,max_deg`
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "resolution_ms,n,rms_deg,root_sum_sq_deg,median_deg,max_deg")?;
        for (r, s) in self.stats().iter().rev() {
            writeln!(
                w,
                "{},{},{:.9e},{:.9e},{:.9e},{:.9e}",
                *r as f64 / 1000.0,
                s.n,
                s.rms_deg,
                s.root_sum_sq_deg,
                s.median_deg,
                s.max_deg
            )?;
        }
        Ok(())
    }
}

/// Angular error of every edge against `R*_α·R*_βᵀ`.
pub fn eval_relative(edges: &EdgeSet, gt: &GroundTruth) -> Result<RelativeReport> {
    let mut report = RelativeReport::default();
    for e in &edges.edges {
        let truth = gt.relative(e.alpha, e.beta)?;
        let err = angular_distance(&e.rotation, &truth).to_degrees();
        report
            .groups
            .entry(e.duration_us())
            .or_default()
            .push((e.alpha, e.beta, err));
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AbsoluteReport {
    /// `(t, error_deg)` per node.
    pub series: Vec<(u64, f64)>,
    pub stats: GroupStats,
}

impl AbsoluteReport {
    /// `t_us,error_deg`
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_us,error_deg")?;
        for (t, e) in &self.series {
            writeln!(w, "{t},{e:.9e}")?;
        }
        Ok(())
    }
}

/// Angular error of every solved attitude. Solution times must lie on the
/// ground-truth grid.
pub fn eval_absolute(solution: &AttitudeSolution, gt: &GroundTruth) -> Result<AbsoluteReport> {
    let mut series = Vec::with_capacity(solution.times.len());
    for (t, r) in solution.times.iter().zip(&solution.attitudes) {
        if *t % gt.dt_us != 0 {
            return Err(Error::invalid(format!(
                "solution time {t} us is off the {} us ground-truth grid",
                gt.dt_us
            )));
        }
        series.push((*t, angular_distance(r, &gt.attitude(*t)?).to_degrees()));
    }
    let errors: Vec<f64> = series.iter().map(|s| s.1).collect();
    Ok(AbsoluteReport {
        stats: GroupStats::of(&errors),
        series,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    Hough,
    ContrastMax,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Hough => "HT",
            Method::ContrastMax => "CM",
        }
    }
}

/// Per-chunk wall time of one method at one chunk duration.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRow {
    pub method: Method,
    pub duration_us: u64,
    /// Median of three runs, per chunk, seconds.
    pub chunk_seconds: Vec<f64>,
}

impl BenchmarkRow {
    /// Mean over chunks of the per-chunk medians.
    pub fn seconds_per_chunk(&self) -> f64 {
        if self.chunk_seconds.is_empty() {
            return 0.0;
        }
        self.chunk_seconds.iter().sum::<f64>() / self.chunk_seconds.len() as f64
    }
}

/// Settings of a runtime comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BenchmarkOptions {
    /// Hough configuration for chunks of `REFERENCE_RESOLUTION_US`, rescaled
    /// to each chunk's duration.
    pub hough: HoughConfig,
    pub cm: CmOptions,
    pub repeats: usize,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        BenchmarkOptions {
            hough: HoughConfig::default(),
            cm: CmOptions {
                use_polarity: false,
                ..CmOptions::default()
            },
            repeats: 3,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    v[v.len() / 2]
}

/// Times one method on every chunk, single-threaded, one row per chunk
/// duration. Estimation failures count as runs like any other.
pub fn benchmark(
    method: Method,
    chunks: &[EventChunk],
    intrinsics: &CameraIntrinsics,
    opts: &BenchmarkOptions,
) -> Result<Vec<BenchmarkRow>> {
    if opts.repeats == 0 {
        return Err(Error::invalid("at least one repeat is required"));
    }
    let grid = Arc::new(DirectionGrid::build(opts.hough.subdivision_level));
    let mut rows: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for chunk in chunks {
        let d = chunk.duration_us();
        let config = opts.hough.rescaled(d as f64 / REFERENCE_RESOLUTION_US as f64);
        let mut times = Vec::with_capacity(opts.repeats);
        for _ in 0..opts.repeats {
            let start = Instant::now();
            match method {
                Method::Hough => {
                    let _ = std::hint::black_box(run_chunk(chunk, intrinsics, &config, grid.clone()));
                }
                Method::ContrastMax => {
                    let _ = std::hint::black_box(cm_estimate(chunk, intrinsics, &opts.cm));
                }
            }
            times.push(start.elapsed().as_secs_f64());
        }
        rows.entry(d).or_default().push(median(times));
    }
    Ok(rows
        .into_iter()
        .map(|(duration_us, chunk_seconds)| BenchmarkRow {
            method,
            duration_us,
            chunk_seconds,
        })
        .collect())
}

/// `method,duration_ms,n_chunks,seconds_per_chunk`
pub fn write_benchmark_csv<W: Write>(rows: &[BenchmarkRow], mut w: W) -> Result<()> {
    writeln!(w, "method,duration_ms,n_chunks,seconds_per_chunk")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{:.6}",
            r.method.name(),
            r.duration_us as f64 / 1000.0,
            r.chunk_seconds.len(),
            r.seconds_per_chunk()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::Edge;
    use crate::events::{Event, Polarity};
    use crate::geom::{exp_rotation, Rotation};
    use crate::sim::{default_camera, MotionProfile};
    use nalgebra::Vector3;
    use proptest::prelude::*;

    fn gt() -> GroundTruth {
        let profile = MotionProfile::constant(Vector3::new(0.0, 0.02, 0.07), 1_000_000);
        GroundTruth::from_profile(&profile, 1_000_000, 50_000)
    }

    fn perturbed(g: &GroundTruth, a: u64, b: u64, deg: f64) -> Edge {
        Edge {
            alpha: a,
            beta: b,
            rotation: exp_rotation(deg.to_radians(), &Vector3::new(1.0, 2.0, -1.0).normalize())
                * g.relative(a, b).unwrap(),
        }
    }

    #[test]
    fn exact_edges_have_zero_error() {
        let g = gt();
        let edges = EdgeSet {
            edges: vec![perturbed(&g, 0, 100_000, 0.0), perturbed(&g, 0, 200_000, 0.0)],
        };
        let report = eval_relative(&edges, &g).unwrap();
        for s in report.stats().values() {
            assert!(s.rms_deg < 1e-9);
        }
    }

    #[test]
    fn single_edge_rms_is_its_error() {
        let g = gt();
        let edges = EdgeSet {
            edges: vec![perturbed(&g, 100_000, 200_000, 1.0)],
        };
        let s = eval_relative(&edges, &g).unwrap().stats()[&100_000];
        assert!((s.rms_deg - 1.0).abs() < 1e-9);
        assert_eq!(s.n, 1);
    }

    #[test]
    fn two_edge_rms_by_hand() {
        let g = gt();
        let edges = EdgeSet {
            edges: vec![perturbed(&g, 0, 100_000, 3.0), perturbed(&g, 50_000, 150_000, 4.0)],
        };
        let s = eval_relative(&edges, &g).unwrap().stats()[&100_000];
        assert!((s.rms_deg - 3.5355339059327378).abs() < 1e-9);
        assert!((s.root_sum_sq_deg - 5.0).abs() < 1e-9);
    }

    #[test]
    fn missing_ground_truth_is_an_error() {
        let g = gt();
        let edges = EdgeSet {
            edges: vec![Edge {
                alpha: 0,
                beta: 5_000_000,
                rotation: Rotation::identity(),
            }],
        };
        assert!(matches!(eval_relative(&edges, &g), Err(Error::MissingGroundTruth(_))));
    }

    fn solution(times: Vec<u64>, attitudes: Vec<Rotation>) -> AttitudeSolution {
        AttitudeSolution {
            times,
            attitudes,
            dummy: Rotation::identity(),
            edge_residuals: vec![],
            anchor_residuals: vec![],
            iterations: 0,
            converged: true,
            objective_trace: vec![],
        }
    }

    #[test]
    fn absolute_reports() {
        let g = gt();
        let times: Vec<u64> = (0..=20).map(|k| k * 50_000).collect();
        let exact: Vec<Rotation> = times.iter().map(|t| g.attitude(*t).unwrap()).collect();
        let perfect = eval_absolute(&solution(times.clone(), exact.clone()), &g).unwrap();
        assert!(perfect.stats.rms_deg < 1e-9);

        let q = exp_rotation(2f64.to_radians(), &Vector3::x());
        let shifted: Vec<Rotation> = exact.iter().map(|r| *r * q).collect();
        let report = eval_absolute(&solution(times, shifted), &g).unwrap();
        for (_, e) in &report.series {
            assert!((e - 2.0).abs() < 1e-9);
        }

        assert!(eval_absolute(&solution(vec![25_000], vec![Rotation::identity()]), &g).is_err());
    }

    #[test]
    fn benchmark_rows_per_method_and_duration() {
        let (k, s) = default_camera();
        let chunk = |a: u64, b: u64| EventChunk {
            events: (0..40)
                .map(|i| Event::new(a + (b - a) * i / 39, 100.0 + i as f64 * 0.01, 80.0, Polarity::Positive))
                .collect(),
            alpha: a,
            beta: b,
            sensor: s,
        };
        let chunks = [chunk(0, 100_000), chunk(0, 200_000), chunk(100_000, 200_000)];
        let opts = BenchmarkOptions {
            hough: HoughConfig {
                subdivision_level: 1,
                ..HoughConfig::default()
            },
            ..BenchmarkOptions::default()
        };
        let mut rows = benchmark(Method::Hough, &chunks, &k, &opts).unwrap();
        rows.extend(benchmark(Method::ContrastMax, &chunks, &k, &opts).unwrap());
        assert_eq!(rows.len(), 4);
        assert_eq!(rows[0].chunk_seconds.len(), 2);
        let mut buf = Vec::new();
        write_benchmark_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(1).unwrap().starts_with("HT,100,2,"));
    }

    proptest! {
        #[test]
        fn rms_matches_recomputation(errors in prop::collection::vec(0.0..10.0f64, 1..50)) {
            let direct = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
            prop_assert!((rms(&errors) - direct).abs() < 1e-12);
            let max = errors.iter().cloned().fold(0.0, f64::max);
            prop_assert!(rms(&errors) >= max / (errors.len() as f64).sqrt() - 1e-12);
        }

        #[test]
        fn grouping_partitions_edges(spans in prop::collection::vec((0u64..10, 1u64..4), 1..30)) {
            let g = gt();
            let edges = EdgeSet {
                edges: spans.iter().map(|(a, k)| perturbed(&g, a * 50_000, (a + k) * 50_000, 0.1)).collect(),
            };
            let report = eval_relative(&edges, &g).unwrap();
            let total: usize = report.groups.values().map(Vec::len).sum();
            prop_assert_eq!(total, edges.len());
            for (d, v) in &report.groups {
                prop_assert!(v.iter().all(|(a, b, _)| b - a == *d));
            }
        }
    }
}
