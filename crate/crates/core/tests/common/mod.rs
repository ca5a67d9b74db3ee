#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use udc_core::raw::merge_bayer;
use udc_core::{BayerRaw, ChannelStack, Plane};

/// Procedural linear-intensity scene: a colour gradient, random rectangles
/// and disks, and a sinusoidal texture patch. Values stay in [0.03, 0.95].
/// Channels are rescaled to equal means (gray world) before clamping.
pub fn scene_stack(rows: usize, cols: usize, seed: u64) -> ChannelStack {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [[f64; 3]; 4] = std::array::from_fn(|_| std::array::from_fn(|_| rng.random_range(0.1..0.6)));
    let shapes: Vec<(bool, f64, f64, f64, f64, [f64; 3])> = (0..8)
        .map(|_| {
            (
                rng.random_bool(0.5),
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.05..0.3),
                rng.random_range(0.05..0.3),
                std::array::from_fn(|_| rng.random_range(0.05..0.9)),
            )
        })
        .collect();
    let (tx, ty, tf, ta) = (
        rng.random_range(0.2..0.6),
        rng.random_range(0.2..0.6),
        rng.random_range(0.05..0.2),
        rng.random_range(0.05..0.15),
    );
    let rgb = |r: usize, c: usize| -> [f64; 3] {
        let (y, x) = (r as f64 / rows as f64, c as f64 / cols as f64);
        let mut v: [f64; 3] = std::array::from_fn(|k| {
            base[0][k] * (1.0 - x) * (1.0 - y) + base[1][k] * x * (1.0 - y) + base[2][k] * (1.0 - x) * y + base[3][k] * x * y
        });
        for &(disk, cx, cy, w, h, col) in &shapes {
            let inside = if disk {
                ((x - cx) / w).powi(2) + ((y - cy) / w).powi(2) < 1.0
            } else {
                (x - cx).abs() < w / 2.0 && (y - cy).abs() < h / 2.0
            };
            if inside {
                v = col;
            }
        }
        if (x - tx).abs() < 0.15 && (y - ty).abs() < 0.15 {
            let t = ta * ((r as f64 * tf * 6.0).sin() * (c as f64 * tf * 4.0).cos());
            for k in &mut v {
                *k += t;
            }
        }
        v.map(|k| k.clamp(0.03, 0.95))
    };
    let planes: [Plane; 3] = std::array::from_fn(|k| Plane::from_shape_fn((rows, cols), |(r, c)| rgb(r, c)[k]));
    let means = planes.clone().map(|p| p.mean().unwrap());
    let target = means.iter().sum::<f64>() / 3.0;
    let [red, green, blue] = [0, 1, 2].map(|k| planes[k].mapv(|v| (v * target / means[k]).clamp(0.03, 0.95)));
    ChannelStack::new([red, green.clone(), green, blue]).unwrap()
}

pub fn scene_raw(rows: usize, cols: usize, seed: u64) -> BayerRaw {
    merge_bayer(&scene_stack(rows, cols, seed), u16::MAX).unwrap()
}
