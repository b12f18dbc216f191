use crate::world::*;

pub const BACKGROUND: f64 = 0.05;

const SUPERSAMPLE: usize = 2;
const CENTER: f64 = 16.0;
const MOUTH_Y: f64 = 21.0;
const MOUTH_HALF_WIDTH: f64 = 4.5;
const MOUTH_CURVE: f64 = 0.13;

/// Side information from a render.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RenderInfo {
    /// Indices of parameters that fell outside `[-1, 1]` and were clamped.
    pub clamped: Vec<usize>,
}

struct Geometry {
    half_width: f64,
    top: f64,
    bottom: f64,
    cy: f64,
    hair_lift: f64,
    skin: f64,
    eye_dx: f64,
    eye_ry: f64,
    brow_tilt: f64,
    nose_end: f64,
    smile: f64,
    wrinkle: f64,
    beard: f64,
    cos: f64,
    sin: f64,
}

impl Geometry {
    fn new(q: &[f64; PARAM_DIM]) -> Self {
        let angle = 0.2 * q[TILT];
        Self {
            half_width: 9.0 + 1.5 * q[FACE_WIDTH],
            top: 11.5,
            bottom: 11.5 + 1.5 * q[CHIN_SHAPE],
            cy: 16.5,
            hair_lift: 1.0 + 1.2 * (q[HAIR] + 1.0),
            skin: 0.58 + 0.14 * q[SKIN_TONE],
            eye_dx: 4.6 + q[EYE_SPACING],
            eye_ry: 0.45 + 0.5 * (q[EYE_OPEN] + 1.0),
            brow_tilt: q[BROW],
            nose_end: 17.5 + 1.5 * q[NOSE_LENGTH],
            smile: q[SMILE],
            wrinkle: 0.3 * 0.5 * (q[WRINKLE] + 1.0),
            beard: 0.45 * 0.5 * (q[FACIAL_HAIR] + 1.0),
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }
}

/// Antialiased coverage of a shape with signed distance `sd` (pixels).
fn coverage(sd: f64) -> f64 {
    let t = (0.5 - sd).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn ellipse_sd(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    let r = ((x - cx) / rx).hypot((y - cy) / ry);
    (r - 1.0) * rx.min(ry)
}

fn segment_sd(x: f64, y: f64, a: (f64, f64), b: (f64, f64), half: f64) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let t = (((x - a.0) * dx + (y - a.1) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
    (x - a.0 - t * dx).hypot(y - a.1 - t * dy) - half
}

fn mix(base: f64, ink: f64, alpha: f64) -> f64 {
    base + (ink - base) * alpha
}

fn shade(g: &Geometry, sx: f64, sy: f64) -> f64 {
    // rotate the sample into the upright face frame
    let (rx, ry) = (sx - CENTER, sy - CENTER);
    let x = CENTER + g.cos * rx + g.sin * ry;
    let y = CENTER - g.sin * rx + g.cos * ry;

    let mut v = BACKGROUND;
    let hair = ellipse_sd(x, y, CENTER, g.cy - g.hair_lift, g.half_width + 0.8, g.top);
    v = mix(v, 0.28, coverage(hair));
    let ry_head = if y < g.cy { g.top } else { g.bottom };
    let head = coverage(ellipse_sd(x, y, CENTER, g.cy, g.half_width, ry_head));
    if head == 0.0 {
        return v;
    }
    let mut f = g.skin;

    // facial hair stipple on the lower face
    let lower = ((y - 18.5) / 2.0).clamp(0.0, 1.0);
    let stipple = 0.5 + 0.5 * (2.7 * x).sin() * (3.1 * y).sin();
    f = mix(f, 0.15, g.beard * lower * stipple);

    // forehead and nasolabial lines
    let mut lines: f64 = 0.0;
    for ly in [6.8, 8.3] {
        lines = lines.max(coverage(segment_sd(x, y, (12.0, ly), (20.0, ly), 0.3)));
    }
    for s in [-1.0, 1.0] {
        let a = (CENTER + s * 3.2, 17.5);
        let b = (CENTER + s * 4.8, 21.5);
        lines = lines.max(coverage(segment_sd(x, y, a, b, 0.3)));
    }
    f = mix(f, 0.2, g.wrinkle * lines);

    for s in [-1.0, 1.0] {
        let cx = CENTER + s * g.eye_dx;
        f = mix(f, 0.1, coverage(ellipse_sd(x, y, cx, 13.5, 1.9, g.eye_ry)));
        let inner = (cx - s * 2.2, 10.3 + g.brow_tilt);
        let outer = (cx + s * 2.2, 10.3 - g.brow_tilt);
        f = mix(f, 0.15, coverage(segment_sd(x, y, inner, outer, 0.5)));
    }

    f = mix(
        f,
        g.skin * 0.6,
        coverage(segment_sd(x, y, (CENTER, 14.5), (CENTER, g.nose_end), 0.45)),
    );

    let dx = (x - CENTER).clamp(-MOUTH_HALF_WIDTH, MOUTH_HALF_WIDTH);
    let curve_y = MOUTH_Y - g.smile * MOUTH_CURVE * dx * dx;
    let slope = -2.0 * g.smile * MOUTH_CURVE * dx;
    let overshoot = (x - CENTER).abs() - MOUTH_HALF_WIDTH;
    let vertical = (y - curve_y).abs() / (1.0 + slope * slope).sqrt();
    let mouth_sd = if overshoot > 0.0 {
        overshoot.hypot(y - curve_y)
    } else {
        vertical
    } - 0.55;
    f = mix(f, 0.12, coverage(mouth_sd));

    mix(v, f, head)
}

/// Renders `p` (clamped to `[-1, 1]`) at 2x supersampling, box-filtered to
/// 32x32.
pub fn render_face(p: &FaceParams) -> (ImageGrid, RenderInfo) {
    let mut q = p.0;
    let mut info = RenderInfo::default();
    for (i, v) in q.iter_mut().enumerate() {
        let c = v.clamp(-1.0, 1.0);
        if c != *v {
            info.clamped.push(i);
        }
        *v = c;
    }
    let g = Geometry::new(&q);
    let n = IMAGE_SIDE;
    let step = 1.0 / SUPERSAMPLE as f64;
    let norm = 1.0 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
    let mut pixels = vec![0.0; n * n];
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = col as f64 + (sx as f64 + 0.5) * step;
                    let y = row as f64 + (sy as f64 + 0.5) * step;
                    acc += shade(&g, x, y);
                }
            }
            pixels[row * n + col] = (acc * norm).clamp(0.0, 1.0);
        }
    }
    (
        ImageGrid {
            height: n,
            width: n,
            pixels,
        },
        info,
    )
}

/// Mean intensity of the rows just below the mouth baseline.
pub fn mouth_band_mean(img: &ImageGrid) -> f64 {
    let rows = MOUTH_Y as usize..MOUTH_Y as usize + 3;
    let cols = 11..21;
    let n = (rows.len() * cols.len()) as f64;
    rows.flat_map(|r| cols.clone().map(move |c| (r, c)))
        .map(|(r, c)| img.get(r, c))
        .sum::<f64>()
        / n
}
