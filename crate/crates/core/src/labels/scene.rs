use serde::{Deserialize, Serialize};

use super::{assign_classes, rasterize, Lane, LanePolyline, DEFAULT_WIDTH_PX, MAX_LANES};
use crate::error::{Error, Result};
use crate::imageio::GrayImage;
use crate::mask::ClassMask;
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Exact number of lanes, 1 to 4.
    pub lanes: usize,
    /// Horizontal vanishing-point jitter as a fraction of the width.
    pub vp_jitter: f64,
    pub occluders: usize,
    /// Occluder width range as fractions of the image width.
    pub occluder_size: [f64; 2],
    /// Probability that a pixel fires as speckle noise.
    pub noise: f64,
    /// Marking half-width at the bottom row, in pixels.
    pub stroke: f64,
    /// Probability that a marking edge pixel fires.
    pub density: f64,
    /// Probability that a lane is dashed.
    pub dashed: f64,
    pub label_width: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 128,
            height: 128,
            lanes: 4,
            vp_jitter: 0.1,
            occluders: 2,
            occluder_size: [0.15, 0.3],
            noise: 0.003,
            stroke: 2.5,
            density: 0.6,
            dashed: 0.5,
            label_width: DEFAULT_WIDTH_PX,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_LANES).contains(&self.lanes) {
            return Err(Error::Config(format!(
                "lane count {} not in 1..={MAX_LANES}",
                self.lanes
            )));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config(format!(
                "scene size {}×{} below 16×16",
                self.width, self.height
            )));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.noise) || !unit(self.density) || !unit(self.dashed) || !unit(self.vp_jitter) {
            return Err(Error::Config(
                "noise, density, dashed and vp_jitter must lie in [0, 1]".into(),
            ));
        }
        let [lo, hi] = self.occluder_size;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "occluder size range {lo}..{hi} invalid"
            )));
        }
        if !(self.stroke > 0.0 && self.label_width > 0.0) {
            return Err(Error::Config(
                "stroke and label width must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: GrayImage,
    pub lanes: Vec<Lane>,
    pub mask: ClassMask,
}

struct Road {
    vp_x: f64,
    horizon: f64,
    curve: f64,
}

impl Road {
    fn depth(&self, y: f64, h: f64) -> f64 {
        ((y - self.horizon) / (h - self.horizon)).clamp(0.0, 1.0)
    }

    fn x_at(&self, bottom_x: f64, t: f64, w: f64) -> f64 {
        self.vp_x + (bottom_x - self.vp_x) * t + self.curve * w * (1.0 - t) * (1.0 - t)
    }
}

const KEY_POINTS: usize = 6;
const EVENT_LEVELS: [u8; 3] = [255, 170, 85];

fn event_value(rng: &mut Rng) -> u8 {
    EVENT_LEVELS[rng.below(3)]
}

/// Picks which of the four bottom slots (outer-left, ego-left, ego-right,
/// outer-right) carry a lane.
fn pick_slots(n: usize, rng: &mut Rng) -> Vec<usize> {
    match n {
        1 => vec![1 + rng.below(2)],
        2 if rng.bernoulli(0.7) => vec![1, 2],
        2 => {
            let s = rng.below(3);
            vec![s, s + 1]
        }
        3 => {
            if rng.bernoulli(0.5) {
                vec![0, 1, 2]
            } else {
                vec![1, 2, 3]
            }
        }
        _ => vec![0, 1, 2, 3],
    }
}

/// Key points on the longest in-image run of rows, or `None` if the lane is
/// barely visible.
fn lane_points(
    road: &Road,
    bottom_x: f64,
    y_start: usize,
    w: usize,
    h: usize,
) -> Option<LanePolyline> {
    let (wf, hf) = (w as f64, h as f64);
    let mut best = (0, 0);
    let mut run_start = None;
    for y in y_start..=h + 1 {
        let inside = y <= h && {
            let x = road.x_at(bottom_x, road.depth(y as f64, hf), wf);
            (0.0..=wf).contains(&x)
        };
        match (inside, run_start) {
            (true, None) => run_start = Some(y),
            (false, Some(s)) => {
                if y - s > best.1 - best.0 {
                    best = (s, y);
                }
                run_start = None;
            }
            _ => {}
        }
    }
    let (a, b) = (best.0, best.1 - 1);
    if b < a + h / 8 {
        return None;
    }
    let pts = (0..KEY_POINTS)
        .map(|k| {
            let y = (a as f64 + (b - a) as f64 * k as f64 / (KEY_POINTS - 1) as f64).round();
            [road.x_at(bottom_x, road.depth(y, hf), wf), y]
        })
        .collect();
    LanePolyline::new(pts).ok()
}

fn layout(cfg: &SceneConfig, rng: &mut Rng) -> Option<(Road, Vec<LanePolyline>)> {
    let (wf, hf) = (cfg.width as f64, cfg.height as f64);
    let road = Road {
        vp_x: wf / 2.0 + cfg.vp_jitter * wf * rng.range(-1.0, 1.0),
        horizon: hf * rng.range(0.25, 0.35),
        curve: rng.range(-0.15, 0.15),
    };
    let spacing = wf * rng.range(0.45, 0.65);
    let centre = wf / 2.0 + spacing * rng.range(-0.2, 0.2);
    let y_start = (road.horizon + rng.range(0.12, 0.2) * (hf - road.horizon)).ceil() as usize;
    let lanes = pick_slots(cfg.lanes, rng)
        .into_iter()
        .map(|s| {
            let bottom_x = centre + (s as f64 - 1.5) * spacing;
            lane_points(&road, bottom_x, y_start, cfg.width, cfg.height)
        })
        .collect::<Option<Vec<_>>>()?;
    Some((road, lanes))
}

fn draw_markings(
    img: &mut GrayImage,
    mask: &ClassMask,
    road: &Road,
    lane: &LanePolyline,
    cfg: &SceneConfig,
    rng: &mut Rng,
) {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let dashed = rng.bernoulli(cfg.dashed);
    let phase = rng.uniform();
    let mut world = phase;
    let plot = |img: &mut GrayImage, x: f64, y: f64, p: f64, rng: &mut Rng| {
        if x < 0.0 || y < 0.0 || x >= w || y >= h {
            return;
        }
        let (px, py) = (x as usize, y as usize);
        if mask.get(px, py) != 0 && rng.bernoulli(p) {
            let v = event_value(rng);
            if v > img.get(px, py) {
                img.set(px, py, v);
            }
        }
    };
    for s in lane.points().windows(2) {
        let (a, b) = (s[0], s[1]);
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        let steps = (len * 2.0).ceil().max(1.0) as usize;
        for k in 0..steps {
            let f = k as f64 / steps as f64;
            let (x, y) = (a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1]));
            let t = road.depth(y, h).max(0.05);
            world += len / steps as f64 / (24.0 * t);
            if dashed && world.fract() > 0.55 {
                continue;
            }
            let m = (cfg.stroke * (0.3 + 0.7 * t)).max(0.6);
            plot(img, x - m, y, cfg.density, rng);
            plot(img, x + m, y, cfg.density, rng);
            plot(img, x + rng.range(-m, m), y, cfg.density * 0.15, rng);
        }
    }
}

fn draw_occluder(img: &mut GrayImage, lane: &LanePolyline, cfg: &SceneConfig, rng: &mut Rng) {
    let pts = lane.points();
    let seg = rng.below(pts.len() - 1);
    let f = rng.uniform();
    let cx = pts[seg][0] + f * (pts[seg + 1][0] - pts[seg][0]);
    let cy = pts[seg][1] + f * (pts[seg + 1][1] - pts[seg][1]);
    let rw = cfg.width as f64 * rng.range(cfg.occluder_size[0], cfg.occluder_size[1]);
    let rh = rw * rng.range(0.5, 0.9);
    let clampx = |v: f64| v.clamp(0.0, cfg.width as f64) as usize;
    let clampy = |v: f64| v.clamp(0.0, cfg.height as f64) as usize;
    let (x0, x1) = (clampx(cx - rw / 2.0), clampx(cx + rw / 2.0));
    let (y0, y1) = (clampy(cy - rh / 2.0), clampy(cy + rh / 2.0));
    for y in y0..y1 {
        for x in x0..x1 {
            let edge = x == x0 || x + 1 == x1 || y == y0 || y + 1 == y1;
            let p = if edge { 0.5 } else { 0.04 };
            let v = if rng.bernoulli(p) {
                event_value(rng)
            } else {
                0
            };
            img.set(x, y, v);
        }
    }
}

/// Renders a semi-dense event-style road scene. Lane masks are rasterised
/// from the full key-point polylines, so parts hidden by occluders stay
/// labelled.
pub fn gen_scene(cfg: &SceneConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let (w, h) = (cfg.width, cfg.height);
    for _ in 0..256 {
        let Some((road, polylines)) = layout(cfg, &mut rng) else {
            continue;
        };
        let Ok(classes) = assign_classes(&polylines, w as f64 / 2.0, h as f64) else {
            continue;
        };
        let lanes: Vec<Lane> = polylines
            .into_iter()
            .zip(classes)
            .map(|(points, class)| Lane { class, points })
            .collect();
        let (mask, _) = rasterize(&lanes, cfg.label_width, w, h)?;
        let mut image = GrayImage::zeros(w, h);
        for lane in &lanes {
            draw_markings(&mut image, &mask, &road, &lane.points, cfg, &mut rng);
        }
        for _ in 0..cfg.occluders {
            let lane = &lanes[rng.below(lanes.len())];
            draw_occluder(&mut image, &lane.points, cfg, &mut rng);
        }
        if cfg.noise > 0.0 {
            for v in image.data_mut() {
                if rng.bernoulli(cfg.noise) {
                    *v = event_value(&mut rng);
                }
            }
        }
        return Ok(Scene { image, lanes, mask });
    }
    Err(Error::Config(format!(
        "could not lay out {} visible lanes in a {w}×{h} scene",
        cfg.lanes
    )))
}
