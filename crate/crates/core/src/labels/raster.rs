use super::{segment_distance, Lane};
use crate::error::{Error, Result};
use crate::mask::ClassMask;

pub const DEFAULT_WIDTH_PX: f64 = 20.0;

fn check_bounds(lanes: &[Lane], width: usize, height: usize) -> Result<()> {
    for (i, lane) in lanes.iter().enumerate() {
        if !(1..=4).contains(&lane.class) {
            return Err(Error::Data(format!(
                "lane {i}: class {} not in 1..=4",
                lane.class
            )));
        }
        for p in lane.points.points() {
            if !(0.0..=width as f64).contains(&p[0]) || !(0.0..=height as f64).contains(&p[1]) {
                return Err(Error::Data(format!(
                    "lane {i}: key point {p:?} outside {width}×{height} image"
                )));
            }
        }
    }
    Ok(())
}

/// Pixel containing `p`; points on the far edge map to the last pixel.
fn pixel_of(p: [f64; 2], width: usize, height: usize) -> (i64, i64) {
    (
        (p[0].floor() as i64).min(width as i64 - 1),
        (p[1].floor() as i64).min(height as i64 - 1),
    )
}

fn bresenham(a: (i64, i64), b: (i64, i64), mut plot: impl FnMut(i64, i64)) {
    let (dx, dy) = ((b.0 - a.0).abs(), -(b.1 - a.1).abs());
    let (sx, sy) = ((b.0 - a.0).signum(), (b.1 - a.1).signum());
    let (mut x, mut y, mut err) = (a.0, a.1, dx + dy);
    loop {
        plot(x, y);
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Capsule dilation of every lane to radius `width_px / 2`, measured from
/// pixel centres. Where capsules overlap the nearest centreline wins, ties
/// going to the smaller class. `width_px ≤ 1` draws Bresenham lines instead.
/// Returns the class mask and its binary (`> 0`) counterpart.
pub fn rasterize(
    lanes: &[Lane],
    width_px: f64,
    width: usize,
    height: usize,
) -> Result<(ClassMask, ClassMask)> {
    if !(width_px.is_finite() && width_px > 0.0) {
        return Err(Error::Config(format!(
            "lane width {width_px} must be positive"
        )));
    }
    check_bounds(lanes, width, height)?;
    let mut mask = ClassMask::zeros(width, height);
    if width_px <= 1.0 {
        let mut order: Vec<&Lane> = lanes.iter().collect();
        // smaller classes drawn last so they win shared pixels
        order.sort_by_key(|l| std::cmp::Reverse(l.class));
        for lane in order {
            for s in lane.points.points().windows(2) {
                bresenham(
                    pixel_of(s[0], width, height),
                    pixel_of(s[1], width, height),
                    |x, y| mask.set(x as usize, y as usize, lane.class),
                );
            }
        }
        let binary = mask.binary();
        return Ok((mask, binary));
    }
    let r = width_px / 2.0;
    let mut best = vec![f64::INFINITY; width * height];
    for lane in lanes {
        for s in lane.points.points().windows(2) {
            let (a, b) = (s[0], s[1]);
            let x0 = ((a[0].min(b[0]) - r - 0.5).floor().max(0.0)) as usize;
            let x1 = ((a[0].max(b[0]) + r).ceil() as usize).min(width);
            let y0 = ((a[1].min(b[1]) - r - 0.5).floor().max(0.0)) as usize;
            let y1 = ((a[1].max(b[1]) + r).ceil() as usize).min(height);
            for y in y0..y1 {
                for x in x0..x1 {
                    let d = segment_distance([x as f64 + 0.5, y as f64 + 0.5], a, b);
                    let i = y * width + x;
                    let cur = mask.data()[i];
                    if d <= r && (d < best[i] || (d == best[i] && lane.class < cur)) {
                        best[i] = d;
                        mask.data_mut()[i] = lane.class;
                    }
                }
            }
        }
    }
    let binary = mask.binary();
    Ok((mask, binary))
}
