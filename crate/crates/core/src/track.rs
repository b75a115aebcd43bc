//! Telemetry ingestion and preprocessing: CSV parsing, regular-interval
//! validation and burst splitting, interpolation, thinning, and step
//! decomposition.

use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};

use crate::error::{Error, Result};
use crate::geodata::{CovariateStack, Point};
use crate::io::{atomic_write, fmt_f64};
use crate::numcore::wrap_angle;

/// Steps shorter than this are floored to it for density evaluation and
/// carry no heading.
pub const MIN_STEP_LENGTH: f64 = 1e-3;

/// Time-ordered planar relocations of one animal.
///
/// At least one location; a single-location track (e.g. after aggressive
/// thinning) is representable but [`Track::is_usable`] returns false.
#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: String,
    times: Vec<i64>,
    coords: Vec<Point>,
}

impl Track {
    pub fn new(id: impl Into<String>, times: Vec<i64>, coords: Vec<Point>) -> Result<Self> {
        let id = id.into();
        if times.is_empty() || times.len() != coords.len() {
            return Err(Error::InvalidParameter(format!(
                "track {id}: need matching non-empty times and coordinates"
            )));
        }
        if let Some(w) = times.windows(2).find(|w| w[1] <= w[0]) {
            return Err(if w[1] == w[0] {
                Error::DuplicateTimestamp { id, t: w[0] }
            } else {
                Error::InvalidParameter(format!("track {id}: times not increasing"))
            });
        }
        if coords.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "track {id}: non-finite coordinate"
            )));
        }
        Ok(Track { id, times, coords })
    }

    pub fn times(&self) -> &[i64] {
        &self.times
    }

    pub fn coords(&self) -> &[Point] {
        &self.coords
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// At least two locations, so at least one step.
    pub fn is_usable(&self) -> bool {
        self.len() >= 2
    }

    fn slice(&self, from: usize, to: usize) -> Track {
        Track {
            id: self.id.clone(),
            times: self.times[from..to].to_vec(),
            coords: self.coords[from..to].to_vec(),
        }
    }
}

fn parse_time(s: &str) -> Option<i64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<i64>() {
        return Some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%SZ"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Some(dt.and_utc().timestamp());
        }
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .ok()
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .map(|dt| dt.and_utc().timestamp())
}

/// Parse a track CSV with header `id,t,x,y`. Times are integer epoch seconds
/// or ISO-8601 UTC. One track per id, in order of first appearance, each
/// sorted by time.
pub fn read_track_csv(path: impl AsRef<Path>) -> Result<Vec<Track>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_track_csv(&text, path)
}

pub fn parse_track_csv(text: &str, origin: &Path) -> Result<Vec<Track>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| Error::parse(origin, 1, e.to_string()))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols != ["id", "t", "x", "y"] {
        return Err(Error::parse(
            origin,
            1,
            format!("expected header `id,t,x,y`, found `{}`", cols.join(",")),
        ));
    }
    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(i64, Point)>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(origin, line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let id = rec[0].to_string();
        let t = parse_time(&rec[1])
            .ok_or_else(|| Error::parse(origin, line, format!("bad time `{}`", &rec[1])))?;
        let num = |i: usize, name: &str| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::parse(origin, line, format!("bad {name} `{}`", &rec[i])))
        };
        let (x, y) = (num(2, "x")?, num(3, "y")?);
        if !(x.is_finite() && y.is_finite()) {
            return Err(Error::NonFiniteCoordinate { line });
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        rows.entry(id).or_default().push((t, Point::new(x, y)));
    }
    order
        .into_iter()
        .map(|id| {
            let mut r = rows.remove(&id).unwrap_or_default();
            r.sort_by_key(|(t, _)| *t);
            if let Some(w) = r.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(Error::DuplicateTimestamp { id, t: w[0].0 });
            }
            let (times, coords) = r.into_iter().unzip();
            Track::new(id, times, coords)
        })
        .collect()
}

pub fn track_csv_string(tracks: &[Track]) -> String {
    let mut s = String::from("id,t,x,y\n");
    for tr in tracks {
        for (t, p) in tr.times.iter().zip(&tr.coords) {
            s.push_str(&format!("{},{},{},{}\n", tr.id, t, fmt_f64(p.x), fmt_f64(p.y)));
        }
    }
    s
}

pub fn write_track_csv(tracks: &[Track], path: impl AsRef<Path>) -> Result<()> {
    atomic_write(path.as_ref(), track_csv_string(tracks).as_bytes())
}

/// Regular runs of a track.
#[derive(Debug, Clone, PartialEq)]
pub struct Bursts {
    pub bursts: Vec<Track>,
    /// Locations isolated between two irregular gaps, which form no burst.
    pub dropped_singletons: usize,
}

/// Split `track` wherever a gap differs from `interval_s` by more than
/// `tol_fraction * interval_s`.
pub fn validate_regular(track: &Track, interval_s: i64, tol_fraction: f64) -> Result<Bursts> {
    if interval_s <= 0 || !(0.0..0.5).contains(&tol_fraction) {
        return Err(Error::InvalidParameter(format!(
            "need interval > 0 and 0 <= tol < 0.5, got {interval_s}, {tol_fraction}"
        )));
    }
    let allowed = tol_fraction * interval_s as f64;
    let mut bursts = Vec::new();
    let mut dropped = 0;
    let mut start = 0;
    let n = track.len();
    for i in 1..=n {
        let split = i == n || ((track.times[i] - track.times[i - 1] - interval_s) as f64).abs() > allowed;
        if split {
            if i - start >= 2 {
                bursts.push(track.slice(start, i));
            } else {
                dropped += 1;
            }
            start = i;
        }
    }
    Ok(Bursts {
        bursts,
        dropped_singletons: dropped,
    })
}

/// Linear interpolation onto the lattice `t0 + k * interval_s`. Lattice
/// points inside an observation gap longer than `max_gap_s` are omitted.
pub fn interpolate_regular(track: &Track, interval_s: i64, max_gap_s: i64) -> Result<Track> {
    if interval_s <= 0 {
        return Err(Error::InvalidParameter(format!(
            "interval must be > 0, got {interval_s}"
        )));
    }
    let t0 = track.times[0];
    let t_end = *track.times.last().unwrap_or(&t0);
    let mut times = Vec::new();
    let mut coords = Vec::new();
    let mut i = 0;
    let mut t = t0;
    while t <= t_end {
        while i + 1 < track.len() && track.times[i + 1] <= t {
            i += 1;
        }
        if track.times[i] == t {
            times.push(t);
            coords.push(track.coords[i]);
        } else if i + 1 < track.len() {
            let (ta, tb) = (track.times[i], track.times[i + 1]);
            if tb - ta <= max_gap_s {
                let w = (t - ta) as f64 / (tb - ta) as f64;
                let (a, b) = (track.coords[i], track.coords[i + 1]);
                times.push(t);
                coords.push(Point::new(a.x + w * (b.x - a.x), a.y + w * (b.y - a.y)));
            }
        }
        t += interval_s;
    }
    Track::new(track.id.clone(), times, coords)
}

/// Keep locations 0, k, 2k, ...
pub fn thin(track: &Track, k: usize) -> Result<Track> {
    if k == 0 {
        return Err(Error::InvalidParameter("thinning factor must be >= 1".into()));
    }
    Ok(Track {
        id: track.id.clone(),
        times: track.times.iter().copied().step_by(k).collect(),
        coords: track.coords.iter().copied().step_by(k).collect(),
    })
}

/// One displacement between consecutive locations of a burst.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    /// Index into [`StepSeries::burst_ids`].
    pub burst: usize,
    pub t_start: i64,
    pub t_end: i64,
    pub start: Point,
    pub end: Point,
    /// Euclidean length in meters, unfloored.
    pub length: f64,
    /// Counterclockwise from east; `None` for steps shorter than
    /// [`MIN_STEP_LENGTH`].
    pub heading: Option<f64>,
    /// Heading of the preceding step in the same burst.
    pub prev_heading: Option<f64>,
    /// Wrapped heading change in (-pi, pi]; `None` on the first step of a
    /// burst or next to a floored step.
    pub turn: Option<f64>,
    /// Covariates at the end point, aligned with
    /// [`StepSeries::covariate_names`]; `None` marks nodata.
    pub covariates: Vec<Option<f64>>,
}

impl Step {
    pub fn interval(&self) -> i64 {
        self.t_end - self.t_start
    }

    pub fn length_floored(&self) -> f64 {
        self.length.max(MIN_STEP_LENGTH)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepSeries {
    pub covariate_names: Vec<String>,
    /// Track id of each burst.
    pub burst_ids: Vec<String>,
    pub steps: Vec<Step>,
}

impl StepSeries {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn n_bursts(&self) -> usize {
        self.burst_ids.len()
    }

    /// Contiguous steps of each burst, in order.
    pub fn bursts(&self) -> impl Iterator<Item = &[Step]> {
        self.steps.chunk_by(|a, b| a.burst == b.burst)
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Append another series with the same covariates, renumbering bursts.
    pub fn concat(mut self, other: StepSeries) -> Result<StepSeries> {
        if self.covariate_names != other.covariate_names {
            return Err(Error::InvalidParameter("step series covariates differ".into()));
        }
        let offset = self.burst_ids.len();
        self.burst_ids.extend(other.burst_ids);
        self.steps.extend(other.steps.into_iter().map(|mut s| {
            s.burst += offset;
            s
        }));
        Ok(self)
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("id,burst,t_start,t_end,x_start,y_start,x_end,y_end,length,heading,turn");
        for n in &self.covariate_names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), fmt_f64);
        for st in &self.steps {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}",
                self.burst_ids[st.burst],
                st.burst,
                st.t_start,
                st.t_end,
                fmt_f64(st.start.x),
                fmt_f64(st.start.y),
                fmt_f64(st.end.x),
                fmt_f64(st.end.y),
                fmt_f64(st.length),
                opt(st.heading),
                opt(st.turn)
            ));
            for c in &st.covariates {
                s.push(',');
                s.push_str(&opt(*c));
            }
            s.push('\n');
        }
        s
    }
}

/// Decompose bursts into steps, extracting covariates at each end point.
pub fn to_steps(bursts: &[Track], grids: &CovariateStack) -> Result<StepSeries> {
    let mut steps = Vec::new();
    let mut burst_ids = Vec::new();
    for tr in bursts.iter().filter(|b| b.is_usable()) {
        let burst = burst_ids.len();
        burst_ids.push(tr.id.clone());
        let mut prev_heading: Option<f64> = None;
        for i in 0..tr.len() - 1 {
            let (a, b) = (tr.coords[i], tr.coords[i + 1]);
            let length = a.dist(b);
            let heading = (length >= MIN_STEP_LENGTH).then(|| (b.y - a.y).atan2(b.x - a.x));
            let turn = match (prev_heading, heading) {
                (Some(p), Some(h)) if i > 0 => Some(wrap_angle(h - p)),
                _ => None,
            };
            let covariates = grids.extract(b).map_err(|e| match e {
                Error::OutOfExtent { x, y, .. } => Error::OutOfExtent {
                    x,
                    y,
                    step: Some(steps.len()),
                },
                other => other,
            })?;
            steps.push(Step {
                burst,
                t_start: tr.times[i],
                t_end: tr.times[i + 1],
                start: a,
                end: b,
                length,
                heading,
                prev_heading: if i > 0 { prev_heading } else { None },
                turn,
                covariates,
            });
            prev_heading = heading;
        }
    }
    Ok(StepSeries {
        covariate_names: grids.names().to_vec(),
        burst_ids,
        steps,
    })
}
