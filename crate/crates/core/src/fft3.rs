//! Three-dimensional complex FFTs by successive one-dimensional passes.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Smallest m ≥ n whose only prime factors are 2, 3 and 5.
pub fn next_smooth(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

pub struct Fft3 {
    dims: [usize; 3],
    forward: [Arc<dyn Fft<f64>>; 3],
    inverse: [Arc<dyn Fft<f64>>; 3],
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("dims", &self.dims).finish()
    }
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = dims.map(|d| planner.plan_fft_forward(d));
        let inverse = dims.map(|d| planner.plan_fft_inverse(d));
        Fft3 {
            dims,
            forward,
            inverse,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [Complex<f64>]) {
        self.run(data, &self.forward);
    }

    /// Unnormalized inverse; divide by `len()` to invert `forward`.
    pub fn inverse(&self, data: &mut [Complex<f64>]) {
        self.run(data, &self.inverse);
    }

    fn run(&self, data: &mut [Complex<f64>], plans: &[Arc<dyn Fft<f64>>; 3]) {
        let [d0, d1, d2] = self.dims;
        assert_eq!(data.len(), d0 * d1 * d2);
        plans[2].process(data);
        let mut line = vec![Complex::new(0.0, 0.0); d1.max(d0)];
        for i in 0..d0 {
            for k in 0..d2 {
                for j in 0..d1 {
                    line[j] = data[(i * d1 + j) * d2 + k];
                }
                plans[1].process(&mut line[..d1]);
                for j in 0..d1 {
                    data[(i * d1 + j) * d2 + k] = line[j];
                }
            }
        }
        let plane = d1 * d2;
        for jk in 0..plane {
            for i in 0..d0 {
                line[i] = data[i * plane + jk];
            }
            plans[0].process(&mut line[..d0]);
            for i in 0..d0 {
                data[i * plane + jk] = line[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_sizes() {
        assert_eq!(next_smooth(1), 1);
        assert_eq!(next_smooth(7), 8);
        assert_eq!(next_smooth(31), 32);
        assert_eq!(next_smooth(97), 100);
        assert_eq!(next_smooth(121), 125);
    }

    #[test]
    fn round_trip_and_single_mode() {
        let f = Fft3::new([4, 6, 5]);
        let n = f.len();
        let orig: Vec<Complex<f64>> = (0..n).map(|i| Complex::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let mut d = orig.clone();
        f.forward(&mut d);
        f.inverse(&mut d);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a / n as f64 - b).norm() < 1e-13);
        }
        let mut delta = vec![Complex::new(0.0, 0.0); n];
        delta[0] = Complex::new(1.0, 0.0);
        f.forward(&mut delta);
        assert!(delta.iter().all(|c| (c - Complex::new(1.0, 0.0)).norm() < 1e-14));
    }
}
