//! Template "0" and "1" digits with seeded pixel noise, for running the
//! whole pipeline without MNIST files.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MnistImage;
use crate::models::{IMAGE_PIXELS, IMAGE_SIDE};

pub const SYNTH_NOISE: f64 = 0.1;

fn zero_template() -> Vec<f64> {
    let c = (IMAGE_SIDE as f64 - 1.0) / 2.0;
    let mut px = vec![0.0; IMAGE_PIXELS];
    for y in 0..IMAGE_SIDE {
        for x in 0..IMAGE_SIDE {
            let dx = (x as f64 - c) / 6.0;
            let dy = (y as f64 - c) / 9.0;
            let r = (dx * dx + dy * dy).sqrt();
            if (0.72..=1.12).contains(&r) {
                px[y * IMAGE_SIDE + x] = 1.0;
            }
        }
    }
    px
}

fn one_template() -> Vec<f64> {
    let mut px = vec![0.0; IMAGE_PIXELS];
    for y in 4..24 {
        for x in 12..16 {
            px[y * IMAGE_SIDE + x] = 1.0;
        }
    }
    px
}

/// `n` noisy zeros and `n` noisy ones.
pub fn synth_digits(n: usize, seed: u64) -> (Vec<MnistImage>, Vec<MnistImage>) {
    synth_digits_with_noise(n, seed, SYNTH_NOISE)
}

pub fn synth_digits_with_noise(
    n: usize,
    seed: u64,
    amplitude: f64,
) -> (Vec<MnistImage>, Vec<MnistImage>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |template: &[f64], label: u8, offset: usize| -> Vec<MnistImage> {
        (0..n)
            .map(|i| MnistImage {
                pixels: template
                    .iter()
                    .map(|&t| {
                        let noise = if amplitude > 0.0 {
                            rng.gen_range(-amplitude..=amplitude)
                        } else {
                            0.0
                        };
                        (t + noise).clamp(0.0, 1.0)
                    })
                    .collect(),
                label,
                source_index: offset + i,
            })
            .collect()
    };
    let zeros = make(&zero_template(), 0, 0);
    let ones = make(&one_template(), 1, n);
    (zeros, ones)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synth_digits(4, 9), synth_digits(4, 9));
        assert_ne!(synth_digits(4, 9), synth_digits(4, 10));
    }

    #[test]
    fn zero_noise_gives_templates() {
        let (zeros, ones) = synth_digits_with_noise(2, 1, 0.0);
        assert_eq!(zeros[1].pixels, zero_template());
        assert_eq!(ones[0].pixels, one_template());
        assert_eq!((zeros[0].label, ones[0].label), (0, 1));
    }

    #[test]
    fn pixels_clipped_to_unit_range() {
        let (zeros, ones) = synth_digits(20, 3);
        for im in zeros.iter().chain(&ones) {
            assert_eq!(im.pixels.len(), IMAGE_PIXELS);
            assert!(im.pixels.iter().all(|p| (0.0..=1.0).contains(p)));
        }
        // noise actually moves background pixels
        assert!(zeros[0].pixels.iter().any(|&p| p > 0.0 && p < 0.2));
    }

    #[test]
    fn templates_differ() {
        let z = zero_template();
        let o = one_template();
        let ink = |t: &[f64]| t.iter().filter(|&&p| p > 0.5).count();
        assert!(ink(&z) > 60 && ink(&o) == 80);
        // the bar only crosses the ring at its top and bottom
        let overlap = z.iter().zip(&o).filter(|(a, b)| **a > 0.5 && **b > 0.5).count();
        assert!(overlap < ink(&o) / 2, "{overlap}");
    }
}
