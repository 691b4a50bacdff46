//! Lane key-point annotations, the ego-relative class rule, mask
//! rasterisation, and a synthetic event-camera scene generator.
//!
//! Coordinates are continuous with pixel `(i, j)` covering
//! `[i, i+1) × [j, j+1)`; its centre is `(i + 0.5, j + 0.5)`.

mod raster;
mod scene;

pub use raster::{rasterize, DEFAULT_WIDTH_PX};
pub use scene::{gen_scene, Scene, SceneConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Key points sorted top to bottom with strictly increasing `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct LanePolyline {
    points: Vec<[f64; 2]>,
}

impl LanePolyline {
    /// Sorts by `y` and keeps the first point of any run with equal `y`.
    pub fn new(mut points: Vec<[f64; 2]>) -> Result<Self> {
        if let Some(p) = points
            .iter()
            .find(|p| !(p[0].is_finite() && p[1].is_finite()))
        {
            return Err(Error::Data(format!("non-finite key point {p:?}")));
        }
        points.sort_by(|a, b| a[1].total_cmp(&b[1]));
        points.dedup_by(|b, a| a[1] == b[1]);
        if points.len() < 2 {
            return Err(Error::Data(
                "a lane needs at least two key points with distinct y".into(),
            ));
        }
        Ok(LanePolyline { points })
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    /// `x` where the lowest segment, extended, meets row `bottom_y`.
    pub fn bottom_intercept(&self, bottom_y: f64) -> f64 {
        let n = self.points.len();
        let ([x1, y1], [x2, y2]) = (self.points[n - 2], self.points[n - 1]);
        x1 + (x2 - x1) * (bottom_y - y1) / (y2 - y1)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> LanePolyline {
        LanePolyline {
            points: self.points.iter().map(|p| [p[0] + dx, p[1] + dy]).collect(),
        }
    }

    /// Euclidean distance from `(x, y)` to the nearest segment.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        self.points
            .windows(2)
            .map(|s| segment_distance([x, y], s[0], s[1]))
            .fold(f64::INFINITY, f64::min)
    }
}

impl TryFrom<Vec<[f64; 2]>> for LanePolyline {
    type Error = Error;

    fn try_from(v: Vec<[f64; 2]>) -> Result<Self> {
        LanePolyline::new(v)
    }
}

impl From<LanePolyline> for Vec<[f64; 2]> {
    fn from(p: LanePolyline) -> Self {
        p.points
    }
}

pub(crate) fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    let (ex, ey) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    (ex * ex + ey * ey).sqrt()
}

/// One annotation line: `{"class": c, "points": [[x, y], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lane {
    pub class: u8,
    pub points: LanePolyline,
}

pub const MAX_LANES: usize = 4;

/// Labels 1–4 from bottom-edge intercepts relative to `ego_x`: nearest left
/// 2, nearest right 3, next left 1, next right 4. Lanes beyond two on one
/// side take the unused labels, outer (1, 4) before inner (2, 3).
pub fn assign_classes(lanes: &[LanePolyline], ego_x: f64, bottom_y: f64) -> Result<Vec<u8>> {
    if lanes.len() > MAX_LANES {
        return Err(Error::Data(format!(
            "{} lanes, at most {MAX_LANES} are labelled",
            lanes.len()
        )));
    }
    let intercepts: Vec<f64> = lanes.iter().map(|l| l.bottom_intercept(bottom_y)).collect();
    for i in 0..intercepts.len() {
        for j in i + 1..intercepts.len() {
            if intercepts[i] == intercepts[j] {
                return Err(Error::Data(format!(
                    "lanes {i} and {j} tie at bottom intercept {}; perturb one",
                    intercepts[i]
                )));
            }
        }
    }
    let by_distance = |left: bool| {
        let mut side: Vec<usize> = (0..lanes.len())
            .filter(|&i| (intercepts[i] < ego_x) == left)
            .collect();
        side.sort_by(|&a, &b| {
            (ego_x - intercepts[a])
                .abs()
                .total_cmp(&(ego_x - intercepts[b]).abs())
        });
        side
    };
    let mut classes = vec![0u8; lanes.len()];
    let mut used = [false; 5];
    let mut extras = Vec::new();
    for (side, labels) in [(by_distance(true), [2u8, 1]), (by_distance(false), [3, 4])] {
        for (rank, &i) in side.iter().enumerate() {
            match labels.get(rank) {
                Some(&c) => {
                    classes[i] = c;
                    used[c as usize] = true;
                }
                None => extras.push(i),
            }
        }
    }
    let mut spare = [1u8, 4, 2, 3].into_iter().filter(|&c| !used[c as usize]);
    for i in extras {
        classes[i] = spare.next().expect("at most four lanes");
    }
    Ok(classes)
}

pub fn write_annotations(lanes: &[Lane]) -> String {
    lanes
        .iter()
        .map(|l| serde_json::to_string(l).expect("lane serializes") + "\n")
        .collect()
}

pub fn parse_annotations(text: &str) -> Result<Vec<Lane>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let lane: Lane = serde_json::from_str(l)
                .map_err(|e| Error::Format(format!("annotation line {}: {e}", i + 1)))?;
            if !(1..=4).contains(&lane.class) {
                return Err(Error::Data(format!(
                    "annotation line {}: class {} not in 1..=4",
                    i + 1,
                    lane.class
                )));
            }
            Ok(lane)
        })
        .collect()
}
