//! Event streams and fixed-window accumulation.
//!
//! Binary layout (little-endian): `"DVE1"`, `u16 width`, `u16 height`, then
//! 13-byte records `u64 t_us, u16 x, u16 y, i8 p`. The CSV form has the
//! header `t_us,x,y,p`, optionally preceded by `# width=W height=H`.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::imageio::GrayImage;
use crate::par::Exec;

const MAGIC: &[u8; 3] = b"DVE";
const VERSION: u8 = b'1';
const HEADER_LEN: usize = 8;
const RECORD_LEN: usize = 13;
pub const CSV_HEADER: &str = "t_us,x,y,p";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventRecord {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    /// `+1` or `-1`.
    pub p: i8,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<EventRecord>,
}

impl EventStream {
    /// Validates bounds, polarity, and time order.
    pub fn new(width: u16, height: u16, events: Vec<EventRecord>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Data(format!(
                "sensor resolution {width}×{height} must be positive"
            )));
        }
        for (i, e) in events.iter().enumerate() {
            if e.x >= width || e.y >= height {
                return Err(Error::Data(format!(
                    "event {i}: ({}, {}) outside {width}×{height} sensor",
                    e.x, e.y
                )));
            }
            if e.p != 1 && e.p != -1 {
                return Err(Error::Data(format!("event {i}: polarity {} not ±1", e.p)));
            }
            if i > 0 && e.t < events[i - 1].t {
                return Err(Error::Data(format!(
                    "event {i}: timestamp {} precedes {}",
                    e.t,
                    events[i - 1].t
                )));
            }
        }
        Ok(EventStream {
            width,
            height,
            events,
        })
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn flip_polarity(&self) -> EventStream {
        let events = self
            .events
            .iter()
            .map(|e| EventRecord { p: -e.p, ..*e })
            .collect();
        EventStream { events, ..*self }
    }
}

pub fn write_binary(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + RECORD_LEN * stream.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&stream.width.to_le_bytes());
    out.extend_from_slice(&stream.height.to_le_bytes());
    for e in &stream.events {
        out.extend_from_slice(&e.t.to_le_bytes());
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.p.to_le_bytes());
    }
    out
}

pub fn parse_binary(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < 4 || &bytes[..3] != MAGIC {
        return Err(Error::Format("not an event file (bad magic)".into()));
    }
    if bytes[3] != VERSION {
        return Err(Error::Format(format!(
            "unsupported event file version {:?}",
            bytes[3] as char
        )));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("truncated event file header".into()));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let (width, height) = (u16_at(4), u16_at(6));
    let body = &bytes[HEADER_LEN..];
    if !body.len().is_multiple_of(RECORD_LEN) {
        return Err(Error::Format(format!(
            "event payload of {} bytes is not a whole number of {RECORD_LEN}-byte records",
            body.len()
        )));
    }
    let events = body
        .chunks_exact(RECORD_LEN)
        .map(|r| EventRecord {
            t: u64::from_le_bytes(r[..8].try_into().expect("8 bytes")),
            x: u16::from_le_bytes([r[8], r[9]]),
            y: u16::from_le_bytes([r[10], r[11]]),
            p: r[12] as i8,
        })
        .collect();
    EventStream::new(width, height, events)
}

pub fn write_csv(stream: &EventStream) -> String {
    let mut out = format!(
        "# width={} height={}\n{CSV_HEADER}\n",
        stream.width, stream.height
    );
    for e in &stream.events {
        writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.p).expect("write to String");
    }
    out
}

fn parse_resolution(line: &str) -> Result<(u16, u16)> {
    let mut w = None;
    let mut h = None;
    for tok in line.trim_start_matches('#').split_whitespace() {
        match tok.split_once('=') {
            Some(("width", v)) => w = v.parse().ok(),
            Some(("height", v)) => h = v.parse().ok(),
            _ => {}
        }
    }
    w.zip(h)
        .ok_or_else(|| Error::Format(format!("bad resolution comment {line:?}")))
}

/// Parses the CSV form. Without a resolution comment the sensor size is the
/// bounding box of the events.
pub fn parse_csv(text: &str) -> Result<EventStream> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .peekable();
    let mut resolution = None;
    if let Some(l) = lines.peek() {
        if l.starts_with('#') {
            resolution = Some(parse_resolution(l)?);
            lines.next();
        }
    }
    match lines.next() {
        Some(h) if h.replace(' ', "") == CSV_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "expected CSV header {CSV_HEADER:?}, found {other:?}"
            )));
        }
    }
    let mut events = Vec::new();
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = || Error::Format(format!("event {i}: malformed record {line:?}"));
        if f.len() != 4 {
            return Err(bad());
        }
        events.push(EventRecord {
            t: f[0].parse().map_err(|_| bad())?,
            x: f[1].parse().map_err(|_| bad())?,
            y: f[2].parse().map_err(|_| bad())?,
            p: f[3].trim_start_matches('+').parse().map_err(|_| bad())?,
        });
    }
    let (w, h) = match resolution {
        Some(r) => r,
        None => {
            let w = events.iter().map(|e| e.x as u32 + 1).max().unwrap_or(0);
            let h = events.iter().map(|e| e.y as u32 + 1).max().unwrap_or(0);
            if w == 0 {
                return Err(Error::Format(
                    "CSV without resolution comment has no events to size the sensor".into(),
                ));
            }
            let fit = |v: u32| {
                u16::try_from(v)
                    .map_err(|_| Error::Data("coordinate exceeds u16 resolution".into()))
            };
            (fit(w)?, fit(h)?)
        }
    };
    EventStream::new(w, h, events)
}

/// Reads either format, choosing by content.
pub fn parse_events(path: &Path) -> Result<EventStream> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) {
        return parse_binary(&bytes);
    }
    let text = std::str::from_utf8(&bytes).map_err(|_| {
        Error::Format(format!(
            "{}: neither a binary event file nor UTF-8 CSV",
            path.display()
        ))
    })?;
    parse_csv(text)
}

/// Which events a frame counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PolarityFilter {
    #[default]
    Any,
    On,
    Off,
}

impl PolarityFilter {
    fn accepts(self, p: i8) -> bool {
        match self {
            PolarityFilter::Any => true,
            PolarityFilter::On => p > 0,
            PolarityFilter::Off => p < 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountFrame {
    pub index: usize,
    pub window_us: u64,
    pub width: usize,
    pub height: usize,
    /// Row-major per-pixel event counts.
    pub counts: Vec<u32>,
}

impl CountFrame {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.counts[y * self.width + x]
    }
}

/// Number of half-open windows `[iΔt, (i+1)Δt)` covering the stream.
pub fn frame_count(stream: &EventStream, dt_us: u64) -> usize {
    match stream.events.last() {
        None => 0,
        Some(e) => (e.t / dt_us + 1) as usize,
    }
}

pub fn accumulate(stream: &EventStream, dt_us: u64) -> Result<Vec<CountFrame>> {
    accumulate_with(stream, dt_us, PolarityFilter::Any, Exec::default())
}

pub fn accumulate_with(
    stream: &EventStream,
    dt_us: u64,
    filter: PolarityFilter,
    exec: Exec,
) -> Result<Vec<CountFrame>> {
    if dt_us == 0 {
        return Err(Error::Contract(
            "accumulation window must be positive".into(),
        ));
    }
    let n = frame_count(stream, dt_us);
    // sorted stream: each window is a contiguous run of records
    let mut bounds = vec![0usize; n + 1];
    let mut pos = 0;
    for (i, b) in bounds.iter_mut().enumerate().skip(1) {
        let end = (i as u64).saturating_mul(dt_us);
        while pos < stream.events.len() && stream.events[pos].t < end {
            pos += 1;
        }
        *b = pos;
    }
    let (w, h) = (stream.width as usize, stream.height as usize);
    Ok(exec.map_range(n, |i| {
        let mut counts = vec![0u32; w * h];
        for e in &stream.events[bounds[i]..bounds[i + 1]] {
            if filter.accepts(e.p) {
                counts[e.y as usize * w + e.x as usize] += 1;
            }
        }
        CountFrame {
            index: i,
            window_us: dt_us,
            width: w,
            height: h,
            counts,
        }
    }))
}

/// `round(255 · min(count, clip) / clip)` per pixel.
pub fn normalize_frame(frame: &CountFrame, clip: u32) -> Result<GrayImage> {
    if clip == 0 {
        return Err(Error::Contract("clip must be at least 1".into()));
    }
    let data = frame
        .counts
        .iter()
        .map(|&c| (255.0 * c.min(clip) as f64 / clip as f64).round() as u8)
        .collect();
    GrayImage::new(frame.width, frame.height, data)
}
