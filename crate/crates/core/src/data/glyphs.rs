//! Stroke font for the 36 class characters and a jittered rasterizer.
//!
//! Glyphs live on a 4×6 grid (x right, y down). Every glyph is a single
//! 8-connected stroke set once rasterized, so the largest-component mask in the
//! preprocessing pipeline keeps the whole character.

use crate::imaging::GrayImage;

type Polyline = &'static [(f64, f64)];

const ZERO_OUTLINE: Polyline = &[
    (1.0, 0.0),
    (3.0, 0.0),
    (3.8, 1.0),
    (3.8, 5.0),
    (3.0, 6.0),
    (1.0, 6.0),
    (0.2, 5.0),
    (0.2, 1.0),
    (1.0, 0.0),
];
const O_OUTLINE: Polyline = &[
    (1.5, 0.0),
    (2.5, 0.0),
    (4.0, 1.5),
    (4.0, 4.5),
    (2.5, 6.0),
    (1.5, 6.0),
    (0.0, 4.5),
    (0.0, 1.5),
    (1.5, 0.0),
];
const P_BOWL: Polyline = &[
    (0.0, 6.0),
    (0.0, 0.0),
    (3.0, 0.0),
    (4.0, 1.0),
    (4.0, 2.0),
    (3.0, 3.0),
    (0.0, 3.0),
];

/// Stroke polylines for one class name.
pub fn strokes(ch: char) -> Option<&'static [Polyline]> {
    Some(match ch {
        '0' => &[ZERO_OUTLINE, &[(3.8, 1.0), (0.2, 5.0)]],
        '1' => &[
            &[(1.0, 1.0), (2.0, 0.0), (2.0, 6.0)],
            &[(1.0, 6.0), (3.0, 6.0)],
        ],
        '2' => &[&[
            (0.0, 1.0),
            (1.0, 0.0),
            (3.0, 0.0),
            (4.0, 1.0),
            (4.0, 2.0),
            (0.0, 6.0),
            (4.0, 6.0),
        ]],
        '3' => &[&[
            (0.0, 0.0),
            (4.0, 0.0),
            (2.0, 2.5),
            (3.0, 2.5),
            (4.0, 3.5),
            (4.0, 5.0),
            (3.0, 6.0),
            (1.0, 6.0),
            (0.0, 5.0),
        ]],
        '4' => &[&[(3.0, 6.0), (3.0, 0.0), (0.0, 4.0), (4.0, 4.0)]],
        '5' => &[&[
            (4.0, 0.0),
            (0.0, 0.0),
            (0.0, 2.5),
            (3.0, 2.5),
            (4.0, 3.5),
            (4.0, 5.0),
            (3.0, 6.0),
            (0.0, 6.0),
        ]],
        '6' => &[&[
            (3.0, 0.0),
            (1.0, 0.0),
            (0.0, 1.0),
            (0.0, 5.0),
            (1.0, 6.0),
            (3.0, 6.0),
            (4.0, 5.0),
            (4.0, 3.5),
            (3.0, 2.5),
            (0.0, 2.5),
        ]],
        '7' => &[&[(0.0, 0.0), (4.0, 0.0), (1.5, 6.0)]],
        '8' => &[
            &[
                (1.0, 0.0),
                (3.0, 0.0),
                (4.0, 1.0),
                (4.0, 2.0),
                (3.0, 3.0),
                (1.0, 3.0),
                (0.0, 2.0),
                (0.0, 1.0),
                (1.0, 0.0),
            ],
            &[
                (1.0, 3.0),
                (3.0, 3.0),
                (4.0, 4.0),
                (4.0, 5.0),
                (3.0, 6.0),
                (1.0, 6.0),
                (0.0, 5.0),
                (0.0, 4.0),
                (1.0, 3.0),
            ],
        ],
        '9' => &[&[
            (4.0, 3.5),
            (1.0, 3.5),
            (0.0, 2.5),
            (0.0, 1.0),
            (1.0, 0.0),
            (3.0, 0.0),
            (4.0, 1.0),
            (4.0, 5.0),
            (3.0, 6.0),
            (1.0, 6.0),
        ]],
        'A' => &[
            &[(0.0, 6.0), (2.0, 0.0), (4.0, 6.0)],
            &[(0.83, 3.5), (3.17, 3.5)],
        ],
        'B' => &[
            &[
                (0.0, 0.0),
                (0.0, 6.0),
                (3.0, 6.0),
                (4.0, 5.0),
                (4.0, 4.0),
                (3.0, 3.0),
                (0.0, 3.0),
            ],
            &[(0.0, 0.0), (3.0, 0.0), (4.0, 1.0), (4.0, 2.0), (3.0, 3.0)],
        ],
        'C' => &[&[
            (4.0, 1.0),
            (3.0, 0.0),
            (1.0, 0.0),
            (0.0, 1.0),
            (0.0, 5.0),
            (1.0, 6.0),
            (3.0, 6.0),
            (4.0, 5.0),
        ]],
        'D' => &[&[
            (0.0, 0.0),
            (0.0, 6.0),
            (2.5, 6.0),
            (4.0, 4.5),
            (4.0, 1.5),
            (2.5, 0.0),
            (0.0, 0.0),
        ]],
        'E' => &[
            &[(4.0, 0.0), (0.0, 0.0), (0.0, 6.0), (4.0, 6.0)],
            &[(0.0, 3.0), (3.0, 3.0)],
        ],
        'F' => &[
            &[(4.0, 0.0), (0.0, 0.0), (0.0, 6.0)],
            &[(0.0, 3.0), (3.0, 3.0)],
        ],
        'G' => &[&[
            (4.0, 1.0),
            (3.0, 0.0),
            (1.0, 0.0),
            (0.0, 1.0),
            (0.0, 5.0),
            (1.0, 6.0),
            (3.0, 6.0),
            (4.0, 5.0),
            (4.0, 3.0),
            (2.0, 3.0),
        ]],
        'H' => &[
            &[(0.0, 0.0), (0.0, 6.0)],
            &[(4.0, 0.0), (4.0, 6.0)],
            &[(0.0, 3.0), (4.0, 3.0)],
        ],
        'I' => &[
            &[(1.0, 0.0), (3.0, 0.0)],
            &[(2.0, 0.0), (2.0, 6.0)],
            &[(1.0, 6.0), (3.0, 6.0)],
        ],
        'J' => &[
            &[(1.0, 0.0), (4.0, 0.0)],
            &[(3.0, 0.0), (3.0, 5.0), (2.0, 6.0), (1.0, 6.0), (0.0, 5.0)],
        ],
        'K' => &[
            &[(0.0, 0.0), (0.0, 6.0)],
            &[(4.0, 0.0), (0.0, 3.0), (4.0, 6.0)],
        ],
        'L' => &[&[(0.0, 0.0), (0.0, 6.0), (4.0, 6.0)]],
        'M' => &[&[(0.0, 6.0), (0.0, 0.0), (2.0, 3.0), (4.0, 0.0), (4.0, 6.0)]],
        'N' => &[&[(0.0, 6.0), (0.0, 0.0), (4.0, 6.0), (4.0, 0.0)]],
        'O' => &[O_OUTLINE],
        'P' => &[P_BOWL],
        'Q' => &[O_OUTLINE, &[(2.2, 4.2), (4.0, 6.2)]],
        'R' => &[P_BOWL, &[(2.0, 3.0), (4.0, 6.0)]],
        'S' => &[&[
            (4.0, 1.0),
            (3.0, 0.0),
            (1.0, 0.0),
            (0.0, 1.0),
            (0.0, 2.0),
            (1.0, 3.0),
            (3.0, 3.0),
            (4.0, 4.0),
            (4.0, 5.0),
            (3.0, 6.0),
            (1.0, 6.0),
            (0.0, 5.0),
        ]],
        'T' => &[&[(0.0, 0.0), (4.0, 0.0)], &[(2.0, 0.0), (2.0, 6.0)]],
        'U' => &[&[
            (0.0, 0.0),
            (0.0, 5.0),
            (1.0, 6.0),
            (3.0, 6.0),
            (4.0, 5.0),
            (4.0, 0.0),
        ]],
        'V' => &[&[(0.0, 0.0), (2.0, 6.0), (4.0, 0.0)]],
        'W' => &[&[(0.0, 0.0), (1.0, 6.0), (2.0, 2.0), (3.0, 6.0), (4.0, 0.0)]],
        'X' => &[&[(0.0, 0.0), (4.0, 6.0)], &[(4.0, 0.0), (0.0, 6.0)]],
        'Y' => &[
            &[(0.0, 0.0), (2.0, 3.0), (4.0, 0.0)],
            &[(2.0, 3.0), (2.0, 6.0)],
        ],
        'Z' => &[&[(0.0, 0.0), (4.0, 0.0), (0.0, 6.0), (4.0, 6.0)]],
        _ => return None,
    })
}

/// Placement of a glyph on the canvas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jitter {
    pub rotation_deg: f64,
    pub scale: f64,
    pub dx: f64,
    pub dy: f64,
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        rotation_deg: 0.0,
        scale: 1.0,
        dx: 0.0,
        dy: 0.0,
    };
}

/// Canvas pixels per glyph grid unit at scale 1.
const UNIT_PX: f64 = 22.0;
/// Half the stroke width, in grid units.
const HALF_STROKE: f64 = 0.45;

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let (wx, wy) = (p.0 - a.0, p.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((wx * vx + wy * vy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * vx - p.0, a.1 + t * vy - p.1);
    (cx * cx + cy * cy).sqrt()
}

/// Rasterizes `ch` as white strokes on black, centered on a `size`×`size`
/// canvas and transformed by `jitter`.
pub fn render_glyph(ch: char, size: usize, jitter: Jitter) -> Option<GrayImage> {
    let lines = strokes(ch)?;
    let segments: Vec<((f64, f64), (f64, f64))> = lines
        .iter()
        .flat_map(|line| line.windows(2).map(|w| (w[0], w[1])))
        .collect();
    let (sin, cos) = jitter.rotation_deg.to_radians().sin_cos();
    let px_per_unit = UNIT_PX * jitter.scale;
    let center = size as f64 / 2.0;
    // Canvas pixel center -> glyph grid coordinates (inverse of scale, rotate, shift).
    let to_glyph = |x: usize, y: usize| {
        let u = x as f64 + 0.5 - center - jitter.dx;
        let v = y as f64 + 0.5 - center - jitter.dy;
        let (ru, rv) = (cos * u + sin * v, -sin * u + cos * v);
        (ru / px_per_unit + 2.0, rv / px_per_unit + 3.0)
    };
    // Everything lies within this radius of the glyph center, in pixels.
    let reach = ((2.0f64 + HALF_STROKE).hypot(3.0 + HALF_STROKE + 0.2)) * px_per_unit;
    let lo = |c: f64| (c - reach).floor().max(0.0) as usize;
    let hi = |c: f64| ((c + reach).ceil().max(0.0) as usize).min(size);
    let (x0, x1) = (lo(center + jitter.dx), hi(center + jitter.dx));
    let (y0, y1) = (lo(center + jitter.dy), hi(center + jitter.dy));
    let mut pixels = vec![0u8; size * size];
    for y in y0..y1 {
        for x in x0..x1 {
            let p = to_glyph(x, y);
            if segments
                .iter()
                .any(|&(a, b)| segment_distance(p, a, b) <= HALF_STROKE)
            {
                pixels[y * size + x] = 255;
            }
        }
    }
    GrayImage::new(size, size, pixels).ok()
}
