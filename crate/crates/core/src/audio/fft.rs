use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;

struct Plans {
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

fn plans(len: usize) -> (Arc<dyn RealToComplex<f64>>, Arc<dyn ComplexToReal<f64>>) {
    static CACHE: OnceLock<Mutex<(RealFftPlanner<f64>, HashMap<usize, Plans>)>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new((RealFftPlanner::new(), HashMap::new())));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    let (planner, map) = &mut *guard;
    if !map.contains_key(&len) {
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        map.insert(len, Plans { forward, inverse });
    }
    let p = &map[&len];
    (p.forward.clone(), p.inverse.clone())
}

/// Real-input FFT of one frame. `frame` is consumed as scratch.
pub(crate) fn forward(frame: &mut [f64]) -> Vec<Complex64> {
    let (fwd, _) = plans(frame.len());
    let mut out = fwd.make_output_vec();
    fwd.process(frame, &mut out)
        .expect("forward fft buffer sizes are fixed by the plan");
    out
}

/// Unnormalized inverse of a half spectrum. The imaginary parts of the DC and
/// Nyquist bins are ignored.
pub(crate) fn inverse(spectrum: &mut [Complex64], len: usize) -> Vec<f64> {
    let (_, inv) = plans(len);
    spectrum[0].im = 0.0;
    if len % 2 == 0 {
        spectrum[len / 2].im = 0.0;
    }
    let mut out = inv.make_output_vec();
    inv.process(spectrum, &mut out)
        .expect("inverse fft buffer sizes are fixed by the plan");
    out
}

/// `Re( sum_{k=0}^{len/2} g_k * exp(2*pi*i*k*n/len) )` for every `n`, i.e. the
/// adjoint of the half-spectrum forward transform. Used for backpropagation.
pub(crate) fn half_spectrum_adjoint(grad: &[Complex64], len: usize) -> Vec<f64> {
    let half = len / 2;
    let mut scaled: Vec<Complex64> = grad
        .iter()
        .enumerate()
        .map(|(k, g)| {
            if k == 0 || (len % 2 == 0 && k == half) {
                Complex64::new(g.re, 0.0)
            } else {
                g * 0.5
            }
        })
        .collect();
    inverse(&mut scaled, len)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjoint_matches_direct_sum() {
        let len = 16;
        let grad: Vec<Complex64> = (0..=len / 2)
            .map(|k| Complex64::new(0.3 * k as f64 - 1.0, 0.1 * (k * k) as f64))
            .collect();
        let fast = half_spectrum_adjoint(&grad, len);
        for (n, value) in fast.iter().enumerate() {
            let direct: f64 = grad
                .iter()
                .enumerate()
                .map(|(k, g)| {
                    let theta = 2.0 * std::f64::consts::PI * (k * n) as f64 / len as f64;
                    g.re * theta.cos() - g.im * theta.sin()
                })
                .sum();
            assert!((value - direct).abs() < 1e-12, "n={n}: {value} vs {direct}");
        }
    }
}
