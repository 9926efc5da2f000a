//! Event data model, text ingestion and time-window chunking.
//!
//! File format: a header line `# evstar v1 width=<int> height=<int> time_unit=us`
//! followed by one `<t>,<x>,<y>,<p>` record per line, where `p` is `0`
//! (negative) or `1` (positive).

use std::io::{BufRead, Write};

use log::warn;
use nalgebra::Vector3;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }

    fn from_bit(bit: &str) -> Option<Self> {
        match bit {
            "1" => Some(Polarity::Positive),
            "0" => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => 0,
        }
    }
}

/// A single event: timestamp in microseconds, pixel position and polarity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Event {
    pub t: u64,
    pub x: f64,
    pub y: f64,
    pub polarity: Polarity,
}

impl Event {
    pub fn new(t: u64, x: f64, y: f64, polarity: Polarity) -> Self {
        Event { t, x, y, polarity }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SensorSize {
    pub width: u32,
    pub height: u32,
}

impl SensorSize {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x < self.width as f64 && y < self.height as f64
    }
}

/// Parsed event file.
#[derive(Clone, Debug)]
pub struct EventStream {
    pub sensor: SensorSize,
    pub events: Vec<Event>,
    /// Set when the file was not in timestamp order and had to be sorted.
    pub resorted: bool,
}

impl EventStream {
    pub fn duration_us(&self) -> u64 {
        self.events.last().map_or(0, |e| e.t)
    }
}

fn parse_header(line: &str) -> Result<SensorSize> {
    let mut tokens = line.split_whitespace();
    if tokens.next() != Some("#") || tokens.next() != Some("evstar") || tokens.next() != Some("v1")
    {
        return Err(Error::parse(1, "expected header '# evstar v1 ...'"));
    }
    let (mut width, mut height, mut unit) = (None, None, None);
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::parse(1, format!("bad header field {tok:?}")))?;
        match k {
            "width" => width = v.parse::<u32>().ok(),
            "height" => height = v.parse::<u32>().ok(),
            "time_unit" => unit = Some(v.to_string()),
            _ => return Err(Error::parse(1, format!("unknown header field {k:?}"))),
        }
    }
    if unit.as_deref() != Some("us") {
        return Err(Error::parse(1, "time_unit must be 'us'"));
    }
    match (width, height) {
        (Some(width), Some(height)) if width > 0 && height > 0 => Ok(SensorSize { width, height }),
        _ => Err(Error::parse(1, "header needs positive width and height")),
    }
}

fn parse_record(line: &str, lineno: usize, sensor: &SensorSize) -> Result<Event> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 4 {
        return Err(Error::parse(
            lineno,
            format!("expected 4 fields, found {}", fields.len()),
        ));
    }
    let t: u64 = fields[0]
        .parse()
        .map_err(|_| Error::parse(lineno, format!("bad timestamp {:?}", fields[0])))?;
    let x: f64 = fields[1]
        .parse()
        .map_err(|_| Error::parse(lineno, format!("bad x {:?}", fields[1])))?;
    let y: f64 = fields[2]
        .parse()
        .map_err(|_| Error::parse(lineno, format!("bad y {:?}", fields[2])))?;
    let polarity = Polarity::from_bit(fields[3])
        .ok_or_else(|| Error::parse(lineno, format!("polarity must be 0 or 1, got {:?}", fields[3])))?;
    if !sensor.contains(x, y) {
        return Err(Error::parse(
            lineno,
            format!(
                "pixel ({x}, {y}) outside {}x{} sensor",
                sensor.width, sensor.height
            ),
        ));
    }
    Ok(Event { t, x, y, polarity })
}

/// Reads an event file. Out-of-order timestamps are stably sorted with a
/// warning.
pub fn parse_event_stream<R: BufRead>(reader: R) -> Result<EventStream> {
    let mut lines = reader.lines();
    let header = match lines.next() {
        Some(line) => line?,
        None => return Err(Error::EmptyStream),
    };
    let sensor = parse_header(header.trim())?;

    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        events.push(parse_record(trimmed, i + 2, &sensor)?);
    }
    if events.is_empty() {
        return Err(Error::EmptyStream);
    }

    let resorted = events.windows(2).any(|w| w[1].t < w[0].t);
    if resorted {
        warn!("event timestamps are not monotone; sorting {} events", events.len());
        events.sort_by_key(|e| e.t);
    }
    Ok(EventStream {
        sensor,
        events,
        resorted,
    })
}

pub fn write_event_stream<W: Write>(mut w: W, sensor: SensorSize, events: &[Event]) -> Result<()> {
    writeln!(
        w,
        "# evstar v1 width={} height={} time_unit=us",
        sensor.width, sensor.height
    )?;
    for e in events {
        writeln!(w, "{},{:.4},{:.4},{}", e.t, e.x, e.y, e.polarity.bit())?;
    }
    Ok(())
}

/// Events inside a closed time window `[alpha, beta]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EventChunk {
    pub events: Vec<Event>,
    pub alpha: u64,
    pub beta: u64,
    pub sensor: SensorSize,
}

impl EventChunk {
    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn duration_us(&self) -> u64 {
        self.beta - self.alpha
    }
}

/// Selects the events with `alpha <= t <= beta` from a time-sorted slice.
pub fn chunk_stream(events: &[Event], alpha: u64, beta: u64, sensor: SensorSize) -> Result<EventChunk> {
    if alpha >= beta {
        return Err(Error::invalid(format!(
            "window start {alpha} must precede end {beta}"
        )));
    }
    let lo = events.partition_point(|e| e.t < alpha);
    let hi = events.partition_point(|e| e.t <= beta);
    let selected = if lo < hi { events[lo..hi].to_vec() } else { Vec::new() };
    Ok(EventChunk {
        events: selected,
        alpha,
        beta,
        sensor,
    })
}

/// Recentred spatio-temporal point set of a chunk.
///
/// Each point is `[x, y, (t − α)·time_scale] − centroid`; `time_scale` is in
/// scaled units per microsecond.
#[derive(Clone, Debug)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub centroid: Vector3<f64>,
    pub alpha: u64,
    pub beta: u64,
    pub time_scale: f64,
}

impl PointCloud {
    /// Original `(x, y, t − α)` of a point, with time in microseconds.
    pub fn restore(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let q = p + self.centroid;
        Vector3::new(q.x, q.y, q.z / self.time_scale)
    }
}

pub(crate) fn raw_point(e: &Event, alpha: u64, time_scale: f64) -> Vector3<f64> {
    Vector3::new(e.x, e.y, (e.t - alpha) as f64 * time_scale)
}

pub fn to_points(chunk: &EventChunk, time_scale: f64) -> Result<PointCloud> {
    if chunk.is_empty() {
        return Err(Error::EmptyChunk {
            alpha: chunk.alpha,
            beta: chunk.beta,
        });
    }
    if !(time_scale > 0.0) {
        return Err(Error::invalid("time scale must be positive"));
    }
    let raw: Vec<Vector3<f64>> = chunk
        .events
        .iter()
        .map(|e| raw_point(e, chunk.alpha, time_scale))
        .collect();
    let n = raw.len() as f64;
    let centroid = raw.iter().fold(Vector3::zeros(), |acc, p| acc + p) / n;
    let points = raw.into_iter().map(|p| p - centroid).collect();
    Ok(PointCloud {
        points,
        centroid,
        alpha: chunk.alpha,
        beta: chunk.beta,
        time_scale,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SENSOR: SensorSize = SensorSize {
        width: 240,
        height: 180,
    };

    fn ev(t: u64) -> Event {
        Event::new(t, 10.0, 20.0, Polarity::Positive)
    }

    fn parse(text: &str) -> Result<EventStream> {
        parse_event_stream(text.as_bytes())
    }

    #[test]
    fn parses_single_record() {
        let s = parse("# evstar v1 width=240 height=180 time_unit=us\n1000,120.0,60.0,1\n").unwrap();
        assert_eq!(s.sensor, SENSOR);
        assert_eq!(s.events, vec![Event::new(1000, 120.0, 60.0, Polarity::Positive)]);
        assert!(!s.resorted);
    }

    #[test]
    fn zero_bit_is_negative() {
        let s = parse("# evstar v1 width=240 height=180 time_unit=us\n500,10,20,0\n").unwrap();
        assert_eq!(s.events[0].polarity, Polarity::Negative);
    }

    #[test]
    fn unsorted_input_is_stably_sorted() {
        let s = parse(
            "# evstar v1 width=240 height=180 time_unit=us\n30,1,1,1\n10,2,2,1\n20,3,3,0\n10,4,4,0\n",
        )
        .unwrap();
        assert!(s.resorted);
        let mut oracle = vec![(30, 1.0), (10, 2.0), (20, 3.0), (10, 4.0)];
        oracle.sort_by_key(|&(t, _)| t);
        let got: Vec<(u64, f64)> = s.events.iter().map(|e| (e.t, e.x)).collect();
        assert_eq!(got, oracle);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = parse("# evstar v1 width=240 height=180 time_unit=us\n1,1,1,1\n2,abc,1,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = parse("# evstar v1 width=240 height=180 time_unit=us\n1,1,1,2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse("# evstar v1 width=240 height=180 time_unit=us\n1,240,1,1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(parse(""), Err(Error::EmptyStream)));
        assert!(matches!(
            parse("# evstar v1 width=240 height=180 time_unit=us\n"),
            Err(Error::EmptyStream)
        ));
        assert!(matches!(parse("# evstar v1 width=240 time_unit=us\n1,1,1,1\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn write_then_parse() {
        let events = vec![
            Event::new(0, 1.25, 2.5, Polarity::Negative),
            Event::new(7, 239.5, 179.0, Polarity::Positive),
        ];
        let mut buf = Vec::new();
        write_event_stream(&mut buf, SENSOR, &events).unwrap();
        let s = parse_event_stream(buf.as_slice()).unwrap();
        assert_eq!(s.events, events);
    }

    #[test]
    fn chunk_interval_membership() {
        let events = vec![ev(10), ev(50), ev(90)];
        let c = chunk_stream(&events, 40, 100, SENSOR).unwrap();
        assert_eq!(c.events.iter().map(|e| e.t).collect::<Vec<_>>(), vec![50, 90]);
        let c = chunk_stream(&events, 50, 90, SENSOR).unwrap();
        assert_eq!(c.events.len(), 2, "both boundaries included");
        let c = chunk_stream(&[], 0, 100, SENSOR).unwrap();
        assert!(c.is_empty());
        assert!(chunk_stream(&events, 100, 100, SENSOR).is_err());
        assert!(chunk_stream(&events, 100, 40, SENSOR).is_err());
    }

    #[test]
    fn symmetric_pair_about_origin() {
        let chunk = EventChunk {
            events: vec![
                Event::new(1000, 50.0, 60.0, Polarity::Positive),
                Event::new(3000, 50.0, 60.0, Polarity::Negative),
            ],
            alpha: 1000,
            beta: 3000,
            sensor: SENSOR,
        };
        let s = 0.01;
        let pc = to_points(&chunk, s).unwrap();
        assert_eq!(pc.points[0], -pc.points[1]);
        assert!((pc.points[1].z - pc.points[0].z - 2000.0 * s).abs() < 1e-12);
        assert_eq!(pc.points[0].x, 0.0);
    }

    #[test]
    fn single_event_at_origin_and_empty_error() {
        let chunk = EventChunk {
            events: vec![Event::new(5, 3.0, 4.0, Polarity::Positive)],
            alpha: 0,
            beta: 10,
            sensor: SENSOR,
        };
        let pc = to_points(&chunk, 1.0).unwrap();
        assert_eq!(pc.points[0], Vector3::zeros());
        let empty = EventChunk { events: vec![], ..chunk };
        assert!(matches!(to_points(&empty, 1.0), Err(Error::EmptyChunk { .. })));
    }

    fn events_strategy() -> impl Strategy<Value = Vec<Event>> {
        prop::collection::vec((0u64..100_000, 0.0..240.0f64, 0.0..180.0f64, any::<bool>()), 1..200)
            .prop_map(|mut v| {
                v.sort_by_key(|e| e.0);
                v.into_iter()
                    .map(|(t, x, y, p)| {
                        Event::new(t, x, y, if p { Polarity::Positive } else { Polarity::Negative })
                    })
                    .collect()
            })
    }

    proptest! {
        #[test]
        fn recentred_mean_is_zero_and_restorable(events in events_strategy()) {
            let chunk = chunk_stream(&events, 0, 100_000, SENSOR).unwrap();
            let pc = to_points(&chunk, 1e-3).unwrap();
            // independent recomputation of the mean
            let n = pc.points.len() as f64;
            for axis in 0..3 {
                let mean: f64 = pc.points.iter().map(|p| p[axis]).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-9);
            }
            for (p, e) in pc.points.iter().zip(&chunk.events) {
                let r = pc.restore(p);
                prop_assert!((r.x - e.x).abs() < 1e-9);
                prop_assert!((r.y - e.y).abs() < 1e-9);
                prop_assert!((r.z - (e.t - chunk.alpha) as f64).abs() < 1e-9);
            }
        }

        #[test]
        fn chunking_is_idempotent(events in events_strategy(), a in 0u64..50_000, len in 1u64..50_000) {
            let c1 = chunk_stream(&events, a, a + len, SENSOR).unwrap();
            let c2 = chunk_stream(&c1.events, a, a + len, SENSOR).unwrap();
            prop_assert_eq!(c1, c2);
        }

        #[test]
        fn half_open_partition_covers_once(events in events_strategy(), cuts in prop::collection::btree_set(1u64..99_999, 0..6)) {
            let mut bounds = vec![0u64];
            bounds.extend(cuts);
            bounds.push(100_000);
            let mut count = 0;
            for (i, w) in bounds.windows(2).enumerate() {
                let c = chunk_stream(&events, w[0], w[1], SENSOR).unwrap();
                let last = i + 2 == bounds.len();
                // interior boundaries are half-open: [a, b)
                count += c.events.iter().filter(|e| last || e.t < w[1]).count();
            }
            prop_assert_eq!(count, events.len());
        }
    }
}
