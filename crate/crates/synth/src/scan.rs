//! Procedural stand-ins for scans and background textures.

use cpdewarp_core::ImageBuffer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Canvas {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Canvas {
    /// Blends `value` into the axis-aligned box `[x0, x1] x [y0, y1]` with
    /// area coverage, so edges land between pixels without aliasing.
    fn fill_rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, value: f64) {
        let cx0 = x0.floor().max(0.0) as usize;
        let cy0 = y0.floor().max(0.0) as usize;
        let cx1 = (x1.ceil().max(0.0) as usize).min(self.width);
        let cy1 = (y1.ceil().max(0.0) as usize).min(self.height);
        for y in cy0..cy1 {
            let cov_y = (y1.min(y as f64 + 1.0) - y0.max(y as f64)).max(0.0);
            for x in cx0..cx1 {
                let cov = cov_y * (x1.min(x as f64 + 1.0) - x0.max(x as f64)).max(0.0);
                let v = &mut self.data[y * self.width + x];
                *v += (value - *v) * cov;
            }
        }
    }
}

/// Word-like strokes drawn as glyph bars starting at `(x, baseline)`; returns the end x.
fn draw_word(canvas: &mut Canvas, rng: &mut ChaCha8Rng, x: f64, baseline: f64, size: f64, ink: f64, limit: f64) -> f64 {
    let glyphs = rng.random_range(2..9);
    let stroke = (size * 0.11).max(0.8);
    let x_height = size * 0.48;
    let mut cx = x;
    for _ in 0..glyphs {
        let advance = size * rng.random_range(0.42..0.62);
        if cx + advance > limit {
            break;
        }
        let tall = rng.random_bool(0.25);
        let top = baseline - if tall { size * 0.72 } else { x_height };
        let bottom = if rng.random_bool(0.08) { baseline + size * 0.22 } else { baseline };
        canvas.fill_rect(cx, top, cx + stroke, bottom, ink);
        match rng.random_range(0..4) {
            0 => canvas.fill_rect(cx, baseline - x_height, cx + advance - stroke, baseline - x_height + stroke, ink),
            1 => canvas.fill_rect(cx, baseline - stroke, cx + advance - stroke, baseline, ink),
            2 => canvas.fill_rect(cx + advance - 2.0 * stroke, baseline - x_height, cx + advance - stroke, baseline, ink),
            _ => {}
        }
        cx += advance;
    }
    cx
}

/// A white page with a title, justified text lines and the occasional figure.
pub fn procedural_scan(width: u32, height: u32, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let paper = rng.random_range(238.0..252.0);
    let mut canvas = Canvas {
        width: width as usize,
        height: height as usize,
        data: vec![paper; width as usize * height as usize],
    };
    let margin_x = w * rng.random_range(0.06..0.1);
    let margin_y = h * rng.random_range(0.05..0.08);
    let line = (h / rng.random_range(38.0..52.0)).max(6.0);
    let ink = rng.random_range(15.0..45.0);

    let mut y = margin_y + line * 1.6;
    draw_words(&mut canvas, &mut rng, margin_x, y, line * 1.5, ink, w * 0.7);
    y += line * 2.5;
    while y < h - margin_y {
        if rng.random_bool(0.04) && y + line * 8.0 < h - margin_y {
            let fx1 = margin_x + (w - 2.0 * margin_x) * rng.random_range(0.4..1.0);
            let fy1 = y + line * rng.random_range(4.0..8.0);
            let tone = rng.random_range(90.0..200.0);
            canvas.fill_rect(margin_x, y - line * 0.6, fx1, fy1, ink);
            canvas.fill_rect(margin_x + 2.0, y - line * 0.6 + 2.0, fx1 - 2.0, fy1 - 2.0, tone);
            let bands = rng.random_range(2..6);
            for b in 0..bands {
                let bx = margin_x + 2.0 + (fx1 - margin_x - 4.0) * b as f64 / bands as f64;
                canvas.fill_rect(bx, y + line, bx + 3.0, fy1 - 2.0, paper);
            }
            y = fy1 + line * 1.5;
            continue;
        }
        let end = if rng.random_bool(0.12) { w * rng.random_range(0.3..0.8) } else { w - margin_x };
        draw_words(&mut canvas, &mut rng, margin_x, y, line * 0.8, ink, end);
        y += line * if rng.random_bool(0.1) { 2.0 } else { 1.0 };
    }

    let data = canvas
        .data
        .iter()
        .flat_map(|&v| {
            let g = v.round().clamp(0.0, 255.0) as u8;
            [g, g, g.saturating_sub(4)]
        })
        .collect();
    ImageBuffer::new(width, height, 3, data).expect("buffer size matches")
}

fn draw_words(canvas: &mut Canvas, rng: &mut ChaCha8Rng, x0: f64, baseline: f64, size: f64, ink: f64, limit: f64) -> f64 {
    let mut x = x0;
    while x < limit - size {
        x = draw_word(canvas, rng, x, baseline, size, ink, limit) + size * rng.random_range(0.4..0.7);
    }
    x
}

/// Low-frequency colored texture with fine grain, standing in for a desk or table.
pub fn procedural_background(width: u32, height: u32, rng: &mut impl Rng) -> ImageBuffer {
    let base: [f64; 3] = [rng.random_range(40.0..200.0), rng.random_range(40.0..200.0), rng.random_range(40.0..200.0)];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.002..0.03),
                rng.random_range(0.002..0.03),
                rng.random_range(0.0..std::f64::consts::TAU),
                rng.random_range(5.0..25.0),
            )
        })
        .collect();
    let grain_seed: u64 = rng.random();
    let mut data = Vec::with_capacity(width as usize * height as usize * 3);
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            let wave: f64 = waves.iter().map(|&(a, b, p, amp)| amp * (a * xf + b * yf + p).sin()).sum();
            let grain = (hash3(grain_seed, x, y) % 17) as f64 - 8.0;
            for (k, b) in base.iter().enumerate() {
                let tint = if k == 1 { 0.9 } else { 1.0 };
                data.push((b + tint * wave + grain).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageBuffer::new(width, height, 3, data).expect("buffer size matches")
}

fn hash3(seed: u64, x: u32, y: u32) -> u64 {
    let mut z = seed ^ ((x as u64) << 32 | y as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
