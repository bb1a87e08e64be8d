//! Real FFT pair and the adjoints used by the frequency expert's backward
//! pass.
//!
//! Convention: the forward transform is unnormalized and the inverse carries
//! the `1/n` factor, so `irfft(rfft(x), n) == x`.

use std::cell::RefCell;

use rustfft::FftPlanner;

pub use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Number of half-spectrum bins for a real signal of length `n`.
#[inline]
pub fn rfft_bins(n: usize) -> usize {
    n / 2 + 1
}

fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    if buf.len() <= 1 {
        return;
    }
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        let plan = if inverse {
            p.plan_fft_inverse(buf.len())
        } else {
            p.plan_fft_forward(buf.len())
        };
        plan.process(buf);
    });
}

/// Bin weight in the Hermitian half spectrum: DC and (for even `n`) Nyquist
/// appear once in the full spectrum, every other bin twice.
#[inline]
pub fn hermitian_weight(k: usize, n: usize) -> f64 {
    if k == 0 || (n.is_multiple_of(2) && k == n / 2) {
        1.0
    } else {
        2.0
    }
}

#[inline]
fn is_self_conjugate(k: usize, n: usize) -> bool {
    k == 0 || (n.is_multiple_of(2) && k == n / 2)
}

/// Half-spectrum DFT of a real signal, `floor(n/2)+1` bins.
pub fn rfft(signal: &[f64]) -> Vec<Complex64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let mut buf: Vec<Complex64> = signal.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_in_place(&mut buf, false);
    buf.truncate(rfft_bins(n));
    for (k, b) in buf.iter_mut().enumerate() {
        if is_self_conjugate(k, n) {
            b.im = 0.0;
        }
    }
    buf
}

/// Inverse of [`rfft`]. Imaginary parts of the DC and Nyquist bins are
/// ignored, as they have no real-signal counterpart.
pub fn irfft(spectrum: &[Complex64], n: usize) -> Result<Vec<f64>> {
    let bins = rfft_bins(n);
    if n == 0 || spectrum.len() != bins {
        return Err(Error::LengthMismatch {
            n,
            expected: bins,
            got: spectrum.len(),
        });
    }
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    for (k, s) in spectrum.iter().enumerate() {
        let v = if is_self_conjugate(k, n) {
            Complex64::new(s.re, 0.0)
        } else {
            *s
        };
        full[k] = v;
        if k != 0 && n - k != k {
            full[n - k] = v.conj();
        }
    }
    fft_in_place(&mut full, true);
    let inv = 1.0 / n as f64;
    Ok(full.iter().map(|c| c.re * inv).collect())
}

/// Adjoint of `y = irfft(t, n)` with respect to the real and imaginary parts
/// of `t`: returns `dL/dt` packed as complex numbers.
pub fn irfft_adjoint(grad_signal: &[f64]) -> Vec<Complex64> {
    let n = grad_signal.len();
    let inv = 1.0 / n as f64;
    let mut g = rfft(grad_signal);
    for (k, v) in g.iter_mut().enumerate() {
        *v *= hermitian_weight(k, n) * inv;
    }
    g
}

/// Adjoint of `s = rfft(x)` with respect to `x`, given `dL/ds` as complex
/// numbers (real part = gradient of `Re s`, imaginary part = gradient of
/// `Im s`).
pub fn rfft_adjoint(grad_spectrum: &[Complex64], n: usize) -> Vec<f64> {
    let mut full = vec![Complex64::new(0.0, 0.0); n];
    for (k, g) in grad_spectrum.iter().enumerate().take(n) {
        // Im of self-conjugate bins is pinned to zero in the forward pass.
        full[k] = if is_self_conjugate(k, n) {
            Complex64::new(g.re, 0.0)
        } else {
            *g
        };
    }
    fft_in_place(&mut full, true);
    full.iter().map(|c| c.re).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Complex64, re: f64, im: f64) -> bool {
        (a.re - re).abs() < 1e-12 && (a.im - im).abs() < 1e-12
    }

    #[test]
    fn constant_signal() {
        let s = rfft(&[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(s.len(), 3);
        assert!(close(s[0], 4.0, 0.0));
        assert!(close(s[1], 0.0, 0.0));
        assert!(close(s[2], 0.0, 0.0));
    }

    #[test]
    fn half_nyquist_cosine() {
        let s = rfft(&[1.0, 0.0, -1.0, 0.0]);
        assert!(close(s[0], 0.0, 0.0));
        assert!(close(s[1], 2.0, 0.0));
        assert!(close(s[2], 0.0, 0.0));
    }

    #[test]
    fn length_one_and_mismatch() {
        assert_eq!(rfft(&[3.5]), vec![Complex64::new(3.5, 0.0)]);
        assert_eq!(irfft(&[Complex64::new(3.5, 0.0)], 1).unwrap(), vec![3.5]);
        assert!(matches!(
            irfft(&[Complex64::new(0.0, 0.0)], 4).unwrap_err(),
            Error::LengthMismatch { expected: 3, got: 1, .. }
        ));
    }

    #[test]
    fn odd_round_trip() {
        let x: Vec<f64> = (0..15).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.5).collect();
        let y = irfft(&rfft(&x), 15).unwrap();
        let err = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }
}
