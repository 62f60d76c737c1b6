//! Seeded synthetic images: linear gradients, circles on flat or graded
//! backgrounds, and checkerboards. Diverse enough to force the key codes to
//! spread, with no external data involved.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

use crate::img::ImageBuf;
use crate::scalar::mix_seed;

fn channel_color(rng: &mut ChaCha8Rng, c: usize) -> Vec<f64> {
    (0..c).map(|_| rng.random::<f64>()).collect()
}

fn paint_gradient(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Vec<f64> {
    let base = channel_color(rng, c);
    let dx: Vec<f64> = (0..c).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    let dy: Vec<f64> = (0..c).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect();
    let mut data = Vec::with_capacity(h * w * c);
    for i in 0..h {
        for j in 0..w {
            let y = i as f64 / (h - 1).max(1) as f64;
            let x = j as f64 / (w - 1).max(1) as f64;
            for k in 0..c {
                data.push((base[k] + dx[k] * x + dy[k] * y).clamp(0.0, 1.0));
            }
        }
    }
    data
}

fn paint_circles(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Vec<f64> {
    // Half the time the circles sit on a gradient instead of a flat fill.
    let mut data = if rng.random::<f64>() < 0.5 {
        paint_gradient(rng, h, w, c)
    } else {
        let bg = channel_color(rng, c);
        (0..h * w).flat_map(|_| bg.clone()).collect()
    };
    let n_circles = rng.random_range(1..=3);
    for _ in 0..n_circles {
        let cy = rng.random::<f64>() * h as f64;
        let cx = rng.random::<f64>() * w as f64;
        let radius = (0.1 + 0.3 * rng.random::<f64>()) * h.min(w) as f64;
        let color = channel_color(rng, c);
        for i in 0..h {
            for j in 0..w {
                let d = ((i as f64 + 0.5 - cy).powi(2) + (j as f64 + 0.5 - cx).powi(2)).sqrt();
                if d <= radius {
                    for k in 0..c {
                        data[(i * w + j) * c + k] = color[k];
                    }
                }
            }
        }
    }
    data
}

fn paint_checkerboard(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Vec<f64> {
    let cell = rng.random_range(2..=8usize);
    let (pi, pj) = (rng.random_range(0..cell), rng.random_range(0..cell));
    let a = channel_color(rng, c);
    let b = channel_color(rng, c);
    let mut data = Vec::with_capacity(h * w * c);
    for i in 0..h {
        for j in 0..w {
            let on = ((i + pi) / cell + (j + pj) / cell) % 2 == 0;
            data.extend(if on { a.iter() } else { b.iter() });
        }
    }
    data
}

/// Deterministic image set: index i is always the same image for a given
/// seed, independent of n.
pub fn synthetic_dataset(n: usize, h: usize, w: usize, c: usize, seed: u64) -> Vec<ImageBuf> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, i as u64));
            let data = match i % 3 {
                0 => paint_gradient(&mut rng, h, w, c),
                1 => paint_circles(&mut rng, h, w, c),
                _ => paint_checkerboard(&mut rng, h, w, c),
            };
            ImageBuf::new(h, w, c, data.into_iter().map(|v| v as f32).collect())
                .expect("generator emits matching shapes")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_in_range_and_deterministic() {
        let a = synthetic_dataset(9, 16, 12, 3, 42);
        let b = synthetic_dataset(9, 16, 12, 3, 42);
        assert_eq!(a, b);
        for img in &a {
            assert_eq!((img.h, img.w, img.c), (16, 12, 3));
            assert!(img.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        // Prefix stability: the first images don't depend on n.
        let c = synthetic_dataset(3, 16, 12, 3, 42);
        assert_eq!(&a[..3], &c[..]);
    }

    #[test]
    fn different_seeds_differ_and_kinds_vary() {
        let a = synthetic_dataset(3, 16, 16, 3, 1);
        let b = synthetic_dataset(3, 16, 16, 3, 2);
        assert_ne!(a, b);
        // A checkerboard has few distinct values; a gradient has many.
        let distinct = |img: &ImageBuf| {
            let mut vals: Vec<u32> = img.data.iter().map(|v| v.to_bits()).collect();
            vals.sort_unstable();
            vals.dedup();
            vals.len()
        };
        assert!(distinct(&a[0]) > distinct(&a[2]));
    }

    #[test]
    fn grayscale_variant_works() {
        let a = synthetic_dataset(3, 8, 8, 1, 5);
        assert!(a.iter().all(|img| img.c == 1));
    }
}
