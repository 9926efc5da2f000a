//! Multiresolution bank: for each time resolution two lanes of Hough
//! instances staggered by half a window, restarted as each window closes.
//! Every finalized window becomes a relative-rotation edge between two nodes
//! of a common time grid.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::events::{Event, EventChunk, SensorSize};
use crate::geom::{parse_row_major, CameraIntrinsics, Rotation, RowMajor};
use crate::hough::{DirectionGrid, HoughAccumulator, HoughConfig, RelativeRotation};
use crate::motion::{cm_estimate, CmOptions};

/// Window length the default Hough configuration is tuned for.
pub const REFERENCE_RESOLUTION_US: u64 = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct BankConfig {
    pub resolutions_us: Vec<u64>,
    /// Spacing of the node grid.
    pub dt_us: u64,
    /// Hough configuration per resolution, parallel to `resolutions_us`.
    pub hough: Vec<HoughConfig>,
}

impl Default for BankConfig {
    fn default() -> Self {
        BankConfig::scaled(
            vec![400_000, 200_000, 100_000],
            50_000,
            HoughConfig::default(),
            REFERENCE_RESOLUTION_US,
        )
        .expect("default bank configuration is valid")
    }
}

impl BankConfig {
    /// One Hough configuration per resolution, derived from `base` (tuned for
    /// windows of `reference_us`) by [`HoughConfig::rescaled`].
    pub fn scaled(resolutions_us: Vec<u64>, dt_us: u64, base: HoughConfig, reference_us: u64) -> Result<Self> {
        if reference_us == 0 {
            return Err(Error::invalid("reference resolution must be positive"));
        }
        let hough = resolutions_us
            .iter()
            .map(|&r| base.rescaled(r as f64 / reference_us as f64))
            .collect();
        let config = BankConfig {
            resolutions_us,
            dt_us,
            hough,
        };
        config.validate()?;
        Ok(config)
    }

    /// The same Hough configuration at every resolution.
    pub fn uniform(resolutions_us: Vec<u64>, dt_us: u64, hough: HoughConfig) -> Result<Self> {
        let config = BankConfig {
            hough: vec![hough; resolutions_us.len()],
            resolutions_us,
            dt_us,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt_us == 0 {
            return Err(Error::invalid("grid spacing must be positive"));
        }
        if self.resolutions_us.is_empty() {
            return Err(Error::invalid("at least one resolution is required"));
        }
        if self.hough.len() != self.resolutions_us.len() {
            return Err(Error::invalid("one Hough configuration per resolution is required"));
        }
        for (i, &r) in self.resolutions_us.iter().enumerate() {
            if r == 0 || r % 2 != 0 || (r / 2) % self.dt_us != 0 {
                return Err(Error::invalid(format!(
                    "resolution {r} us: half the resolution must be a multiple of the {} us grid",
                    self.dt_us
                )));
            }
            if self.resolutions_us[..i].contains(&r) {
                return Err(Error::invalid(format!("resolution {r} us listed twice")));
            }
            self.hough[i].validate()?;
        }
        Ok(())
    }

    pub fn hough_for(&self, resolution_us: u64) -> Option<&HoughConfig> {
        let i = self.resolutions_us.iter().position(|&r| r == resolution_us)?;
        Some(&self.hough[i])
    }
}

/// One scheduled window of one lane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Window {
    pub alpha: u64,
    pub beta: u64,
    pub resolution_us: u64,
    /// 0 for windows starting at multiples of the resolution, 1 for the lane
    /// offset by half a window.
    pub lane: u8,
}

impl Window {
    pub fn contains(&self, t: u64) -> bool {
        self.alpha <= t && t <= self.beta
    }
}

/// All windows of a stream of `duration_us`, grouped by resolution in
/// configuration order and sorted by start time within a resolution.
/// Resolutions longer than the stream are skipped.
pub fn plan_instances(duration_us: u64, config: &BankConfig) -> Result<Vec<Window>> {
    config.validate()?;
    let mut plan = Vec::new();
    for &r in &config.resolutions_us {
        if duration_us < r {
            warn!("stream of {duration_us} us is shorter than the {r} us resolution; skipped");
            continue;
        }
        let mut windows = Vec::new();
        for lane in 0..2u8 {
            let mut alpha = lane as u64 * (r / 2);
            while alpha + r <= duration_us {
                windows.push(Window {
                    alpha,
                    beta: alpha + r,
                    resolution_us: r,
                    lane,
                });
                alpha += r;
            }
        }
        windows.sort();
        plan.extend(windows);
    }
    Ok(plan)
}

/// Stream length used for planning: the last timestamp rounded up to the
/// grid.
pub fn planned_duration(events: &[Event], dt_us: u64) -> u64 {
    events.last().map_or(0, |e| e.t.div_ceil(dt_us) * dt_us)
}

/// Relative-rotation estimator run on every window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Estimator {
    Hough,
    ContrastMax(CmOptions),
}

/// Outcome of one window.
#[derive(Debug)]
pub struct WindowResult {
    pub window: Window,
    pub n_events: usize,
    pub outcome: Result<RelativeRotation>,
}

/// Events a Hough instance buffers before voting them direction-major.
const VOTE_BATCH: usize = 2048;

enum Live {
    Hough {
        acc: Box<HoughAccumulator>,
        pending: Vec<Event>,
    },
    Buffer(Vec<Event>),
}

#[derive(Clone)]
struct Context {
    estimator: Estimator,
    hough: HoughConfig,
    grid: Option<Arc<DirectionGrid>>,
    intrinsics: CameraIntrinsics,
    sensor: SensorSize,
}

/// The consecutive windows of one (resolution, lane) pair, of which at most
/// one is live.
struct Lane {
    ctx: Context,
    windows: Vec<Window>,
    next: usize,
    live: Option<Live>,
    n_events: usize,
    /// Events at the end of the live window, which also open the next one.
    carry: Vec<Event>,
}

impl Lane {
    fn open(&mut self, w: Window) -> Result<()> {
        let live = match (&self.ctx.estimator, &self.ctx.grid) {
            (Estimator::Hough, Some(grid)) => Live::Hough {
                acc: Box::new(HoughAccumulator::streaming(
                    self.ctx.hough,
                    grid.clone(),
                    self.ctx.intrinsics,
                    self.ctx.sensor,
                    w.alpha,
                    w.beta,
                )?),
                pending: Vec::with_capacity(VOTE_BATCH),
            },
            _ => Live::Buffer(Vec::new()),
        };
        self.live = Some(live);
        self.n_events = 0;
        let carry = std::mem::take(&mut self.carry);
        for e in carry.iter().filter(|e| w.contains(e.t)) {
            self.feed(e, w)?;
        }
        Ok(())
    }

    fn feed(&mut self, e: &Event, w: Window) -> Result<()> {
        match self.live.as_mut() {
            Some(Live::Hough { acc, pending }) => {
                pending.push(*e);
                if pending.len() == VOTE_BATCH {
                    acc.process_events(pending)?;
                    pending.clear();
                }
            }
            Some(Live::Buffer(buf)) => buf.push(*e),
            None => unreachable!("feed without a live window"),
        }
        self.n_events += 1;
        if e.t == w.beta {
            self.carry.push(*e);
        }
        Ok(())
    }

    /// Forwards an event; returns whether some window of the lane took it.
    fn push(&mut self, e: &Event, out: &mut Vec<WindowResult>) -> Result<bool> {
        loop {
            let Some(&w) = self.windows.get(self.next) else {
                return Ok(false);
            };
            if e.t > w.beta {
                self.close(out)?;
                continue;
            }
            if e.t < w.alpha {
                return Ok(false);
            }
            if self.live.is_none() {
                self.open(w)?;
            }
            self.feed(e, w)?;
            return Ok(true);
        }
    }

    fn close(&mut self, out: &mut Vec<WindowResult>) -> Result<()> {
        let w = self.windows[self.next];
        if self.live.is_none() && !self.carry.is_empty() {
            self.open(w)?;
        }
        let outcome = match self.live.take() {
            None => {
                self.n_events = 0;
                Err(Error::EmptyChunk {
                    alpha: w.alpha,
                    beta: w.beta,
                })
            }
            Some(Live::Hough { mut acc, pending }) => {
                acc.process_events(&pending)?;
                acc.finalize()
            }
            Some(Live::Buffer(events)) => {
                let opts = match self.ctx.estimator {
                    Estimator::ContrastMax(opts) => opts,
                    Estimator::Hough => unreachable!("Hough lanes hold accumulators"),
                };
                let chunk = EventChunk {
                    events,
                    alpha: w.alpha,
                    beta: w.beta,
                    sensor: self.ctx.sensor,
                };
                cm_estimate(&chunk, &self.ctx.intrinsics, &opts).map(|r| r.relative)
            }
        };
        out.push(WindowResult {
            window: w,
            n_events: self.n_events,
            outcome,
        });
        self.n_events = 0;
        self.next += 1;
        Ok(())
    }

    fn finish(&mut self, out: &mut Vec<WindowResult>) -> Result<()> {
        while self.next < self.windows.len() {
            self.close(out)?;
        }
        Ok(())
    }
}

fn build_lanes(
    plan: &[Window],
    config: &BankConfig,
    estimator: Estimator,
    intrinsics: CameraIntrinsics,
    sensor: SensorSize,
) -> Result<Vec<Lane>> {
    config.validate()?;
    let mut grids: BTreeMap<u32, Arc<DirectionGrid>> = BTreeMap::new();
    let mut lanes = Vec::new();
    for (i, &r) in config.resolutions_us.iter().enumerate() {
        let hough = config.hough[i];
        let grid = match estimator {
            Estimator::Hough => Some(
                grids
                    .entry(hough.subdivision_level)
                    .or_insert_with(|| Arc::new(DirectionGrid::build(hough.subdivision_level)))
                    .clone(),
            ),
            Estimator::ContrastMax(_) => None,
        };
        for lane in 0..2u8 {
            let windows: Vec<Window> = plan
                .iter()
                .filter(|w| w.resolution_us == r && w.lane == lane)
                .copied()
                .collect();
            if windows.is_empty() {
                continue;
            }
            lanes.push(Lane {
                ctx: Context {
                    estimator,
                    hough,
                    grid: grid.clone(),
                    intrinsics,
                    sensor,
                },
                windows,
                next: 0,
                live: None,
                n_events: 0,
                carry: Vec::new(),
            });
        }
    }
    Ok(lanes)
}

fn plan_order(plan: &[Window], results: &mut [WindowResult]) {
    let rank: BTreeMap<Window, usize> = plan.iter().enumerate().map(|(i, w)| (*w, i)).collect();
    results.sort_by_key(|r| rank.get(&r.window).copied().unwrap_or(usize::MAX));
}

/// Event-by-event dispatch to every live instance whose window contains the
/// event. Instances finalize when an event past their window arrives and the
/// lane restarts on its next window.
pub struct Bank {
    plan: Vec<Window>,
    lanes: Vec<Lane>,
    finished: Vec<WindowResult>,
    dropped: u64,
    last_t: Option<u64>,
}

/// Everything a bank produced over a stream.
#[derive(Debug)]
pub struct BankOutput {
    /// One result per planned window, in plan order.
    pub results: Vec<WindowResult>,
    /// Events that fell in no window.
    pub dropped: u64,
}

impl Bank {
    pub fn new(
        plan: Vec<Window>,
        config: &BankConfig,
        estimator: Estimator,
        intrinsics: CameraIntrinsics,
        sensor: SensorSize,
    ) -> Result<Self> {
        let lanes = build_lanes(&plan, config, estimator, intrinsics, sensor)?;
        Ok(Bank {
            plan,
            lanes,
            finished: Vec::new(),
            dropped: 0,
            last_t: None,
        })
    }

    /// Dispatches one event. Events must arrive in non-decreasing time.
    pub fn push(&mut self, e: &Event) -> Result<()> {
        if self.last_t.is_some_and(|t| e.t < t) {
            return Err(Error::invalid(format!(
                "event at {} us arrived after {} us",
                e.t,
                self.last_t.unwrap_or(0)
            )));
        }
        self.last_t = Some(e.t);
        let mut taken = false;
        for lane in &mut self.lanes {
            taken |= lane.push(e, &mut self.finished)?;
        }
        if !taken {
            self.dropped += 1;
        }
        Ok(())
    }

    /// Number of instances currently holding state.
    pub fn live_instances(&self) -> usize {
        self.lanes.iter().filter(|l| l.live.is_some()).count()
    }

    /// Windows finalized since the last call.
    pub fn drain_finished(&mut self) -> Vec<WindowResult> {
        std::mem::take(&mut self.finished)
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    /// Closes all remaining windows.
    pub fn finish(mut self) -> Result<BankOutput> {
        for lane in &mut self.lanes {
            lane.finish(&mut self.finished)?;
        }
        let mut results = self.finished;
        plan_order(&self.plan, &mut results);
        Ok(BankOutput {
            results,
            dropped: self.dropped,
        })
    }
}

/// Runs a whole stream through the bank, lanes in parallel. Produces the same
/// results as pushing every event through a [`Bank`].
pub fn run_bank(
    events: &[Event],
    plan: &[Window],
    config: &BankConfig,
    estimator: Estimator,
    intrinsics: CameraIntrinsics,
    sensor: SensorSize,
) -> Result<BankOutput> {
    if events.windows(2).any(|p| p[1].t < p[0].t) {
        return Err(Error::invalid("events must be sorted by time"));
    }
    let lanes = build_lanes(plan, config, estimator, intrinsics, sensor)?;
    let per_lane: Vec<Result<Vec<WindowResult>>> = lanes
        .into_par_iter()
        .map(|mut lane| {
            let mut out = Vec::new();
            let (start, end) = (lane.windows[0].alpha, lane.windows[lane.windows.len() - 1].beta);
            let lo = events.partition_point(|e| e.t < start);
            let hi = events.partition_point(|e| e.t <= end);
            for e in &events[lo..hi] {
                lane.push(e, &mut out)?;
            }
            lane.finish(&mut out)?;
            Ok(out)
        })
        .collect();
    let mut results = Vec::new();
    for r in per_lane {
        results.extend(r?);
    }
    plan_order(plan, &mut results);
    let dropped = events.iter().filter(|e| !plan.iter().any(|w| w.contains(e.t))).count() as u64;
    Ok(BankOutput { results, dropped })
}

/// Relative rotation `R_alpha · R_betaᵀ` between two grid nodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Edge {
    pub alpha: u64,
    pub beta: u64,
    pub rotation: Rotation,
}

impl Edge {
    pub fn duration_us(&self) -> u64 {
        self.beta - self.alpha
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EdgeSet {
    pub edges: Vec<Edge>,
}

impl EdgeSet {
    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Edges keyed by window duration.
    pub fn by_resolution(&self) -> BTreeMap<u64, Vec<&Edge>> {
        let mut groups: BTreeMap<u64, Vec<&Edge>> = BTreeMap::new();
        for e in &self.edges {
            groups.entry(e.duration_us()).or_default().push(e);
        }
        groups
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "alpha_us,beta_us,r00,r01,r02,r10,r11,r12,r20,r21,r22")?;
        for e in &self.edges {
            writeln!(w, "{},{},{}", e.alpha, e.beta, RowMajor(&e.rotation))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut edges = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("alpha")) {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 11 {
                return Err(Error::parse(lineno, format!("expected 11 fields, found {}", fields.len())));
            }
            let time = |s: &str| {
                s.parse::<u64>()
                    .map_err(|e| Error::parse(lineno, format!("bad time {s:?}: {e}")))
            };
            let (alpha, beta) = (time(fields[0])?, time(fields[1])?);
            if alpha >= beta {
                return Err(Error::parse(lineno, format!("window [{alpha}, {beta}] is empty")));
            }
            edges.push(Edge {
                alpha,
                beta,
                rotation: parse_row_major(&fields[2..], lineno)?,
            });
        }
        Ok(EdgeSet { edges })
    }
}

/// Checks that the edge windows cover their time span without a gap. Nodes
/// of the staggered lanes are not all linked by edges (odd multiples of half
/// the finest resolution only meet each other), so the attitude graph is tied
/// together by anchors; coverage is what the bank itself can guarantee.
pub fn check_coverage(edges: &[Edge]) -> Result<()> {
    if edges.is_empty() {
        return Err(Error::invalid("no relative rotations to connect"));
    }
    let mut sorted: Vec<&Edge> = edges.iter().collect();
    sorted.sort_by_key(|e| (e.alpha, e.beta));
    let mut reach = sorted[0].beta;
    for e in &sorted[1..] {
        if e.alpha > reach {
            return Err(Error::Disconnected {
                gap_start_us: reach,
                gap_end_us: e.alpha,
            });
        }
        reach = reach.max(e.beta);
    }
    Ok(())
}

/// One edge per successful window, in plan order; failed windows are logged
/// and left out. The windows must still cover the stream without a gap.
pub fn collect_edges(results: &[WindowResult], dt_us: u64) -> Result<EdgeSet> {
    let mut edges = Vec::new();
    for r in results {
        match &r.outcome {
            Ok(rel) => {
                if rel.alpha % dt_us != 0 || rel.beta % dt_us != 0 {
                    return Err(Error::invalid(format!(
                        "window [{}, {}] is off the {dt_us} us grid",
                        rel.alpha, rel.beta
                    )));
                }
                edges.push(Edge {
                    alpha: rel.alpha,
                    beta: rel.beta,
                    rotation: rel.rotation,
                });
            }
            Err(e) => warn!("window [{}, {}] dropped: {e}", r.window.alpha, r.window.beta),
        }
    }
    check_coverage(&edges)?;
    Ok(EdgeSet { edges })
}

/// `window_start_us,window_end_us,n_events,n_cells_over_delta,r00..r22`, one
/// row per window. Failed windows carry `nan` rotation entries.
pub fn write_diagnostics<W: Write>(results: &[WindowResult], mut w: W) -> Result<()> {
    writeln!(
        w,
        "window_start_us,window_end_us,n_events,n_cells_over_delta,r00,r01,r02,r10,r11,r12,r20,r21,r22"
    )?;
    for r in results {
        match &r.outcome {
            Ok(rel) => writeln!(
                w,
                "{},{},{},{},{}",
                r.window.alpha,
                r.window.beta,
                r.n_events,
                rel.n_cells_over_delta,
                RowMajor(&rel.rotation)
            )?,
            Err(e) => {
                let over = match e {
                    Error::InsufficientCorrespondences { n_cells_over_delta, .. } => *n_cells_over_delta,
                    _ => 0,
                };
                writeln!(
                    w,
                    "{},{},{},{over},{}",
                    r.window.alpha,
                    r.window.beta,
                    r.n_events,
                    ["nan"; 9].join(",")
                )?
            }
        }
    }
    Ok(())
}
