//! Seeded photo-like test images: smooth illumination, overlapping shapes
//! with soft edges, fine texture and sensor-like noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// A `[1, 3, h, w]` image in `[0, 1]`, fully determined by `seed`.
pub fn photo_like(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plane = h * w;
    let mut img = vec![0.0f64; 3 * plane];

    // background: tilted colour gradient
    let base: [f64; 3] = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
    let tilt: [(f64, f64); 3] = std::array::from_fn(|_| (rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3)));
    for c in 0..3 {
        for i in 0..h {
            for j in 0..w {
                let (u, v) = (i as f64 / h as f64 - 0.5, j as f64 / w as f64 - 0.5);
                img[c * plane + i * w + j] = base[c] + tilt[c].0 * u + tilt[c].1 * v;
            }
        }
    }

    // soft-edged ellipses and rectangles
    let shapes = rng.gen_range(4..10);
    for _ in 0..shapes {
        let colour: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.0..1.0));
        let (ci, cj) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
        let (ri, rj) = (
            rng.gen_range(0.05..0.35) * h as f64,
            rng.gen_range(0.05..0.35) * w as f64,
        );
        let ellipse = rng.gen_bool(0.5);
        let alpha = rng.gen_range(0.5..0.95);
        let softness = rng.gen_range(0.5..3.0);
        for i in 0..h {
            for j in 0..w {
                let (di, dj) = ((i as f64 - ci) / ri, (j as f64 - cj) / rj);
                let d = if ellipse {
                    (di * di + dj * dj).sqrt()
                } else {
                    di.abs().max(dj.abs())
                };
                // distance outside the boundary in pixels, mapped through a smooth step
                let edge = (d - 1.0) * ri.min(rj) / softness;
                let a = alpha / (1.0 + edge.exp());
                if a > 1e-4 {
                    for c in 0..3 {
                        let p = &mut img[c * plane + i * w + j];
                        *p = *p * (1.0 - a) + colour[c] * a;
                    }
                }
            }
        }
    }

    // oriented texture and noise
    let (fi, fj) = (rng.gen_range(0.05..0.6), rng.gen_range(0.05..0.6));
    let amp = rng.gen_range(0.01..0.05);
    let sigma = rng.gen_range(0.005..0.02);
    for i in 0..h {
        for j in 0..w {
            let t = amp * (fi * i as f64 + fj * j as f64).sin() * (0.3 * fj * i as f64).cos();
            for c in 0..3 {
                // approximately Gaussian noise from a sum of uniforms
                let n: f64 = (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * sigma * 0.866;
                let p = &mut img[c * plane + i * w + j];
                *p = (*p + t + n).clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new(vec![1, 3, h, w], img.into_iter().map(|v| v as f32).collect()).expect("image shape")
}
