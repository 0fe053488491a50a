//! Stroke skeletons for the 26 lowercase letters.
//!
//! Coordinates: `x` in `[0, 1]` across the glyph box, `y` in x-height units
//! with the baseline at 0, x-height at 1, ascenders at 1.6 and descenders
//! at −0.6.

use std::f64::consts::PI;

pub type Point = (f64, f64);
pub type Polyline = Vec<Point>;

pub const ASCENDER: f64 = 1.6;
pub const DESCENDER: f64 = -0.6;

pub struct Skeleton {
    /// Box width relative to the x-height.
    pub width: f64,
    pub strokes: Vec<Polyline>,
}

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, from_deg: f64, to_deg: f64) -> Polyline {
    let steps = (((to_deg - from_deg).abs() / 15.0).ceil() as usize).max(2);
    (0..=steps)
        .map(|i| {
            let t = (from_deg + (to_deg - from_deg) * i as f64 / steps as f64) * PI / 180.0;
            (cx + rx * t.cos(), cy + ry * t.sin())
        })
        .collect()
}

fn line(points: &[Point]) -> Polyline {
    points.to_vec()
}

fn bowl(cx: f64) -> Polyline {
    arc(cx, 0.5, 0.42, 0.5, 0.0, 360.0)
}

/// Skeleton for a lowercase ASCII letter.
pub fn skeleton(ch: char) -> Option<Skeleton> {
    let (width, strokes) = match ch {
        'a' => (0.9, vec![bowl(0.45), line(&[(0.9, 1.0), (0.9, 0.0)])]),
        'b' => (0.9, vec![line(&[(0.1, ASCENDER), (0.1, 0.0)]), bowl(0.55)]),
        'c' => (0.8, vec![arc(0.5, 0.5, 0.45, 0.5, 40.0, 320.0)]),
        'd' => (0.9, vec![bowl(0.45), line(&[(0.9, ASCENDER), (0.9, 0.0)])]),
        'e' => (
            0.85,
            vec![
                line(&[(0.06, 0.5), (0.94, 0.5)]),
                arc(0.5, 0.5, 0.44, 0.5, 0.0, 320.0),
            ],
        ),
        'f' => (
            0.6,
            vec![
                {
                    let mut s = line(&[(0.35, 0.0), (0.35, 1.3)]);
                    s.extend(arc(0.65, 1.3, 0.3, 0.3, 180.0, 60.0).into_iter().skip(1));
                    s
                },
                line(&[(0.05, 1.0), (0.75, 1.0)]),
            ],
        ),
        'g' => (
            0.9,
            vec![bowl(0.45), {
                let mut s = line(&[(0.9, 1.0), (0.9, -0.3)]);
                s.extend(arc(0.5, -0.3, 0.4, 0.3, 0.0, -160.0).into_iter().skip(1));
                s
            }],
        ),
        'h' => (
            0.9,
            vec![line(&[(0.1, ASCENDER), (0.1, 0.0)]), {
                let mut s = arc(0.5, 0.6, 0.4, 0.4, 180.0, 0.0);
                s.push((0.9, 0.0));
                s
            }],
        ),
        'i' => (
            0.35,
            vec![
                line(&[(0.5, 1.0), (0.5, 0.0)]),
                line(&[(0.5, 1.35), (0.5, 1.45)]),
            ],
        ),
        'j' => (
            0.45,
            vec![
                {
                    let mut s = line(&[(0.65, 1.0), (0.65, -0.3)]);
                    s.extend(arc(0.35, -0.3, 0.3, 0.3, 0.0, -150.0).into_iter().skip(1));
                    s
                },
                line(&[(0.65, 1.35), (0.65, 1.45)]),
            ],
        ),
        'k' => (
            0.85,
            vec![
                line(&[(0.1, ASCENDER), (0.1, 0.0)]),
                line(&[(0.9, 1.0), (0.1, 0.35)]),
                line(&[(0.38, 0.58), (0.92, 0.0)]),
            ],
        ),
        'l' => (0.35, vec![line(&[(0.5, ASCENDER), (0.5, 0.0)])]),
        'm' => (
            1.4,
            vec![
                line(&[(0.05, 1.0), (0.05, 0.0)]),
                {
                    let mut s = arc(0.275, 0.6, 0.225, 0.4, 180.0, 0.0);
                    s.push((0.5, 0.0));
                    s
                },
                {
                    let mut s = arc(0.725, 0.6, 0.225, 0.4, 180.0, 0.0);
                    s.push((0.95, 0.0));
                    s
                },
            ],
        ),
        'n' => (
            0.9,
            vec![line(&[(0.1, 1.0), (0.1, 0.0)]), {
                let mut s = arc(0.5, 0.6, 0.4, 0.4, 180.0, 0.0);
                s.push((0.9, 0.0));
                s
            }],
        ),
        'o' => (0.9, vec![arc(0.5, 0.5, 0.45, 0.5, 0.0, 360.0)]),
        'p' => (0.9, vec![line(&[(0.1, 1.0), (0.1, DESCENDER)]), bowl(0.55)]),
        'q' => (0.9, vec![bowl(0.45), line(&[(0.9, 1.0), (0.9, DESCENDER)])]),
        'r' => (
            0.65,
            vec![
                line(&[(0.1, 1.0), (0.1, 0.0)]),
                arc(0.6, 0.45, 0.5, 0.5, 180.0, 80.0),
            ],
        ),
        's' => (
            0.75,
            vec![{
                let mut s = arc(0.5, 0.75, 0.4, 0.25, 20.0, 270.0);
                s.extend(arc(0.5, 0.25, 0.4, 0.25, 90.0, -160.0).into_iter().skip(1));
                s
            }],
        ),
        't' => (
            0.6,
            vec![
                {
                    let mut s = line(&[(0.35, 1.4), (0.35, 0.2)]);
                    s.extend(arc(0.6, 0.2, 0.25, 0.2, 180.0, 290.0).into_iter().skip(1));
                    s
                },
                line(&[(0.05, 1.0), (0.8, 1.0)]),
            ],
        ),
        'u' => (
            0.9,
            vec![
                {
                    let mut s = line(&[(0.1, 1.0), (0.1, 0.4)]);
                    s.extend(arc(0.5, 0.4, 0.4, 0.4, 180.0, 360.0).into_iter().skip(1));
                    s
                },
                line(&[(0.9, 1.0), (0.9, 0.0)]),
            ],
        ),
        'v' => (0.9, vec![line(&[(0.0, 1.0), (0.5, 0.0), (1.0, 1.0)])]),
        'w' => (
            1.35,
            vec![line(&[
                (0.0, 1.0),
                (0.25, 0.0),
                (0.5, 0.8),
                (0.75, 0.0),
                (1.0, 1.0),
            ])],
        ),
        'x' => (
            0.85,
            vec![
                line(&[(0.0, 1.0), (1.0, 0.0)]),
                line(&[(0.0, 0.0), (1.0, 1.0)]),
            ],
        ),
        'y' => (
            0.9,
            vec![
                line(&[(0.0, 1.0), (0.5, 0.0)]),
                line(&[(1.0, 1.0), (0.3, DESCENDER)]),
            ],
        ),
        'z' => (
            0.8,
            vec![line(&[(0.0, 1.0), (1.0, 1.0), (0.0, 0.0), (1.0, 0.0)])],
        ),
        _ => return None,
    };
    Some(Skeleton { width, strokes })
}
