//! Complex FFT for arbitrary lengths.
//!
//! Power-of-two sizes use an iterative radix-2 transform. Every other size
//! goes through Bluestein's chirp-z algorithm on a padded power-of-two
//! transform, so the analytic-signal envelope can run on a full clip of any
//! length.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// A planned transform of a fixed length. Inverse transforms are unscaled.
#[derive(Debug, Clone)]
pub struct Fft {
    len: usize,
    kind: Kind,
}

#[derive(Debug, Clone)]
enum Kind {
    Identity,
    Radix2(Radix2Plan),
    Bluestein { inner: Radix2Plan, chirp: Vec<Complex64>, kernel_spec: Vec<Complex64> },
}

#[derive(Debug, Clone)]
struct Radix2Plan {
    len: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<usize>,
}

impl Radix2Plan {
    fn new(len: usize) -> Self {
        debug_assert!(len.is_power_of_two());
        let twiddles = (0..len / 2)
            .map(|k| {
                let theta = -2.0 * PI * k as f64 / len as f64;
                Complex64::new(libm::cos(theta), libm::sin(theta))
            })
            .collect();
        let bits = len.trailing_zeros();
        let bitrev = (0..len)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        Radix2Plan { len, twiddles, bitrev }
    }

    fn process(&self, buf: &mut [Complex64], dir: Direction) {
        radix2(buf, &self.twiddles, &self.bitrev, dir);
        debug_assert_eq!(buf.len(), self.len);
    }
}

fn radix2(buf: &mut [Complex64], twiddles: &[Complex64], bitrev: &[usize], dir: Direction) {
    let n = buf.len();
    for i in 0..n {
        let j = bitrev[i];
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let stride = n / size;
        for start in (0..n).step_by(size) {
            for k in 0..half {
                let mut w = twiddles[k * stride];
                if dir == Direction::Inverse {
                    w = w.conj();
                }
                let a = buf[start + k];
                let b = buf[start + k + half] * w;
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        size *= 2;
    }
}

impl Fft {
    pub fn new(len: usize) -> Self {
        let kind = if len <= 1 {
            Kind::Identity
        } else if len.is_power_of_two() {
            Kind::Radix2(Radix2Plan::new(len))
        } else {
            let m = (2 * len - 1).next_power_of_two();
            let inner = Radix2Plan::new(m);
            // chirp[k] = exp(-i*pi*k^2/n); k^2 reduced mod 2n keeps the angle small.
            let chirp: Vec<Complex64> = (0..len)
                .map(|k| {
                    let k2 = ((k as u128 * k as u128) % (2 * len as u128)) as f64;
                    let theta = -PI * k2 / len as f64;
                    Complex64::new(libm::cos(theta), libm::sin(theta))
                })
                .collect();
            let mut kernel = vec![Complex64::new(0.0, 0.0); m];
            kernel[0] = chirp[0].conj();
            for k in 1..len {
                kernel[k] = chirp[k].conj();
                kernel[m - k] = chirp[k].conj();
            }
            inner.process(&mut kernel, Direction::Forward);
            Kind::Bluestein { inner, chirp, kernel_spec: kernel }
        };
        Fft { len, kind }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place transform. `buf.len()` must equal the planned length.
    pub fn process(&self, buf: &mut [Complex64], dir: Direction) {
        assert_eq!(buf.len(), self.len, "fft length mismatch");
        match &self.kind {
            Kind::Identity => {}
            Kind::Radix2(plan) => plan.process(buf, dir),
            Kind::Bluestein { inner, chirp, kernel_spec } => {
                let m = inner.len;
                let n = self.len;
                // Inverse transform via conjugation: ifft(x) = conj(fft(conj(x))).
                let conj_io = dir == Direction::Inverse;
                let mut work = vec![Complex64::new(0.0, 0.0); m];
                for k in 0..n {
                    let x = if conj_io { buf[k].conj() } else { buf[k] };
                    work[k] = x * chirp[k];
                }
                inner.process(&mut work, Direction::Forward);
                for (w, h) in work.iter_mut().zip(kernel_spec) {
                    *w *= h;
                }
                inner.process(&mut work, Direction::Inverse);
                let scale = 1.0 / m as f64;
                for k in 0..n {
                    let y = work[k] * chirp[k] * scale;
                    buf[k] = if conj_io { y.conj() } else { y };
                }
            }
        }
    }
}
