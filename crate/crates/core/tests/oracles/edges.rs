use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sketchplan_core::geometry::{canny, EdgeMap, GrayImage};

/// Straightforward second implementation: full 2D Gaussian in f64, Sobel,
/// slope-based direction bins, suppression, and hysteresis by fixpoint
/// iteration.
pub fn reference_canny(img: &[f64], w: usize, h: usize, low: f64, high: f64, sigma: f64) -> Vec<bool> {
    let at = |buf: &[f64], x: i64, y: i64| {
        let cx = x.clamp(0, w as i64 - 1) as usize;
        let cy = y.clamp(0, h as i64 - 1) as usize;
        buf[cy * w + cx]
    };

    let mut kernel = [[0f64; 5]; 5];
    let mut total = 0.0;
    for (j, row) in kernel.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let (dx, dy) = (i as f64 - 2.0, j as f64 - 2.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let mut smooth = vec![0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for j in 0..5 {
                for i in 0..5 {
                    acc += kernel[j][i] / total * at(img, x as i64 + i as i64 - 2, y as i64 + j as i64 - 2);
                }
            }
            smooth[y * w + x] = acc;
        }
    }

    let sx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
    let sy = [[-1.0, -2.0, -1.0], [0.0, 0.0, 0.0], [1.0, 2.0, 1.0]];
    let mut mag = vec![0f64; w * h];
    let mut step = vec![(0i64, 0i64); w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..3 {
                for i in 0..3 {
                    let v = at(&smooth, x as i64 + i as i64 - 1, y as i64 + j as i64 - 1);
                    gx += sx[j][i] * v;
                    gy += sy[j][i] * v;
                }
            }
            mag[y * w + x] = (gx * gx + gy * gy).sqrt() / 4.0;
            let t = 22.5f64.to_radians().tan();
            step[y * w + x] = if gy.abs() <= t * gx.abs() {
                (1, 0)
            } else if gx.abs() <= t * gy.abs() {
                (0, 1)
            } else if gx * gy > 0.0 {
                (1, 1)
            } else {
                (-1, 1)
            };
        }
    }

    let get = |x: i64, y: i64| {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut kept = vec![0f64; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let m = get(x, y);
            let (ox, oy) = step[y as usize * w + x as usize];
            if m >= low && m > get(x + ox, y + oy) && m >= get(x - ox, y - oy) {
                kept[y as usize * w + x as usize] = m;
            }
        }
    }

    let mut edge: Vec<bool> = kept.iter().map(|&m| m >= high).collect();
    loop {
        let mut changed = false;
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let i = y as usize * w + x as usize;
                if edge[i] || kept[i] < low {
                    continue;
                }
                let linked = (-1..=1).any(|dy| {
                    (-1..=1).any(|dx| {
                        let (nx, ny) = (x + dx, y + dy);
                        nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 && edge[ny as usize * w + nx as usize]
                    })
                });
                if linked {
                    edge[i] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return edge;
        }
    }
}

fn random_shape(rng: &mut ChaCha8Rng, w: u32, h: u32) -> Vec<f64> {
    let background: f64 = rng.random_range(0.0..0.3);
    let mut img = vec![background; (w * h) as usize];
    for _ in 0..rng.random_range(1..4) {
        let level: f64 = rng.random_range(0.5..1.0);
        let (cx, cy) = (rng.random_range(10.0..w as f64 - 10.0), rng.random_range(10.0..h as f64 - 10.0));
        let (rx, ry) = (rng.random_range(4.0..20.0), rng.random_range(4.0..20.0));
        let ellipse = rng.random_bool(0.5);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = ((x as f64 + 0.5 - cx) / rx, (y as f64 + 0.5 - cy) / ry);
                let inside = if ellipse { u * u + v * v <= 1.0 } else { u.abs() <= 1.0 && v.abs() <= 1.0 };
                if inside {
                    img[(y * w + x) as usize] = level;
                }
            }
        }
    }
    img
}

fn run(img: &[f64], w: u32, h: u32) -> EdgeMap {
    let gray = GrayImage::new(w, h, img.iter().map(|&v| v as f32).collect()).unwrap();
    canny(&gray, 0.1, 0.3).unwrap()
}

pub fn filled_square_ring() {
    let (w, h) = (64u32, 64u32);
    let (lo, hi) = (20.0, 44.0);
    let img: Vec<f64> = (0..w * h)
        .map(|i| {
            let (x, y) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            if x > lo && x < hi && y > lo && y < hi { 1.0 } else { 0.0 }
        })
        .collect();
    let edges = run(&img, w, h);
    assert!(!edges.is_empty());
    // Chebyshev distance from a pixel center to the square outline.
    let to_border = |x: u32, y: u32| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let outside = (lo - px).max(px - hi).max(lo - py).max(py - hi);
        if outside > 0.0 { outside } else { -outside }
    };
    for y in 0..h {
        for x in 0..w {
            if edges.as_mask().get(x, y) {
                assert!(to_border(x, y) <= 1.0, "stray edge at ({x}, {y})");
            }
        }
    }
    // Every border crossing is covered by an edge pixel within one pixel.
    for t in (lo as u32)..(hi as u32) {
        for (bx, by) in [(t, lo as u32), (t, hi as u32), (lo as u32, t), (hi as u32, t)] {
            let near = (-1i64..=1).any(|dy| {
                (-1i64..=1).any(|dx| edges.as_mask().get_signed(bx as i64 + dx - 1, by as i64 + dy) || edges.as_mask().get_signed(bx as i64 + dx, by as i64 + dy - 1))
            });
            assert!(near, "border point ({bx}, {by}) has no edge nearby");
        }
    }
}

/// Share of edge pixels, from either map, that have a partner in the other
/// map within one pixel. Step edges tie exactly on both sides before
/// rounding, so the two implementations may keep opposite sides.
fn matched_within_one(a: &[bool], b: &[bool], w: usize, h: usize) -> f64 {
    let near = |m: &[bool], x: usize, y: usize| {
        (y.saturating_sub(1)..=(y + 1).min(h - 1)).any(|ny| (x.saturating_sub(1)..=(x + 1).min(w - 1)).any(|nx| m[ny * w + nx]))
    };
    let (mut total, mut hit) = (0usize, 0usize);
    for (from, to) in [(a, b), (b, a)] {
        for i in (0..w * h).filter(|&i| from[i]) {
            total += 1;
            hit += near(to, i % w, i / w) as usize;
        }
    }
    if total == 0 { 1.0 } else { hit as f64 / total as f64 }
}

/// Pixel agreement and tolerant edge agreement for each of 20 random shapes.
pub fn reference_agreement() -> Vec<(f64, f64)> {
    let (w, h) = (64u32, 64u32);
    let mut rng = ChaCha8Rng::seed_from_u64(0xca77);
    (0..20)
        .map(|_| {
            let img = random_shape(&mut rng, w, h);
            let ours = run(&img, w, h);
            let theirs = reference_canny(&img, w as usize, h as usize, 0.1, 0.3, 1.4);
            let ours = ours.as_mask().bits();
            let same = ours.iter().zip(&theirs).filter(|(a, b)| a == b).count();
            (same as f64 / ours.len() as f64, matched_within_one(ours, &theirs, w as usize, h as usize))
        })
        .collect()
}

pub fn agrees_with_reference() {
    for (i, (pixels, edge_iou)) in reference_agreement().into_iter().enumerate() {
        assert!(pixels >= 0.95, "shape {i}: pixel agreement {pixels}");
        assert!(edge_iou >= 0.95, "shape {i}: edge match {edge_iou}");
    }
}

