//! Short-time Fourier analysis shared by feature extraction and the
//! spectral losses, including the vector-Jacobian product of the magnitude.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::resample::hann;

/// Power floor applied before the square root in loss spectrograms.
pub const LOSS_POWER_FLOOR: f64 = 1e-7;

/// Centred STFT: Hann window of `win_length` zero-padded to `fft_size`,
/// reflection padding of `fft_size / 2` at both ends.
pub struct StftPlan {
    pub fft_size: usize,
    pub win_length: usize,
    pub hop: usize,
    /// Magnitudes are `sqrt(max(power, power_floor))`.
    pub power_floor: f64,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftPlan")
            .field("fft_size", &self.fft_size)
            .field("win_length", &self.win_length)
            .field("hop", &self.hop)
            .field("power_floor", &self.power_floor)
            .finish()
    }
}

/// Spectra kept from the forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct StftCache {
    pub spectra: Vec<Complex<f64>>,
    pub input_len: usize,
}

/// Mirror index into `[0, len)` with period `2 (len - 1)`.
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let m = i.rem_euclid(period);
    if m < len as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

impl StftPlan {
    pub fn new(fft_size: usize, win_length: usize, hop: usize, power_floor: f64) -> Result<Self> {
        if fft_size == 0 || hop == 0 || win_length == 0 || win_length > fft_size {
            return Err(Error::InvalidArgument(format!(
                "stft: fft {fft_size}, window {win_length}, hop {hop}"
            )));
        }
        let mut window = vec![0.0; fft_size];
        let off = (fft_size - win_length) / 2;
        window[off..off + win_length].copy_from_slice(&hann(win_length));
        let fft = FftPlanner::new().plan_fft_forward(fft_size);
        Ok(Self { fft_size, win_length, hop, power_floor, window, fft })
    }

    pub fn shared(fft_size: usize, win_length: usize, hop: usize, power_floor: f64) -> Result<Arc<StftPlan>> {
        type Cache = Mutex<HashMap<(usize, usize, usize, u64), Arc<StftPlan>>>;
        static CACHE: OnceLock<Cache> = OnceLock::new();
        let key = (fft_size, win_length, hop, power_floor.to_bits());
        let cache = CACHE.get_or_init(Default::default);
        if let Some(p) = cache.lock().unwrap().get(&key) {
            return Ok(p.clone());
        }
        let p = Arc::new(StftPlan::new(fft_size, win_length, hop, power_floor)?);
        cache.lock().unwrap().insert(key, p.clone());
        Ok(p)
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    fn pad(&self) -> usize {
        self.fft_size / 2
    }

    pub fn frames(&self, len: usize) -> usize {
        let padded = len + 2 * self.pad();
        if padded >= self.fft_size {
            1 + (padded - self.fft_size) / self.hop
        } else {
            1
        }
    }

    /// Input index feeding padded position `p`, if any.
    fn source(&self, p: usize, len: usize) -> Option<usize> {
        if len == 0 {
            return None;
        }
        let i = p as isize - self.pad() as isize;
        if len >= 2 || (0..len as isize).contains(&i) {
            Some(reflect(i, len))
        } else {
            None
        }
    }

    /// Complex spectra, `frames x bins`.
    pub fn spectra(&self, x: &[f64]) -> Vec<Complex<f64>> {
        let frames = self.frames(x.len());
        let bins = self.bins();
        let mut out = Vec::with_capacity(frames * bins);
        let mut buf = vec![Complex::new(0.0, 0.0); self.fft_size];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for f in 0..frames {
            let start = f * self.hop;
            for (n, slot) in buf.iter_mut().enumerate() {
                let v = self.source(start + n, x.len()).map_or(0.0, |i| x[i]);
                *slot = Complex::new(v * self.window[n], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            out.extend_from_slice(&buf[..bins]);
        }
        out
    }

    fn magnitude(&self, c: &Complex<f64>) -> f64 {
        c.norm_sqr().max(self.power_floor).sqrt()
    }

    /// Magnitude spectrogram `[frames, bins]` plus the cache for backward.
    pub fn forward(&self, x: &[f64]) -> (Tensor, StftCache) {
        let spectra = self.spectra(x);
        let mags = spectra.iter().map(|c| self.magnitude(c)).collect();
        let t = Tensor::new(vec![self.frames(x.len()), self.bins()], mags).expect("stft shape");
        (t, StftCache { spectra, input_len: x.len() })
    }

    pub fn magnitude_only(&self, x: &[f64]) -> Tensor {
        self.forward(x).0
    }

    /// Vector-Jacobian product of the magnitude spectrogram.
    pub fn backward(&self, cache: &StftCache, grad: &Tensor) -> Vec<f64> {
        let bins = self.bins();
        let n = self.fft_size;
        let mut gx = vec![0.0; cache.input_len];
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for (f, (spec, g)) in cache.spectra.chunks(bins).zip(grad.data().chunks(bins)).enumerate() {
            buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
            let mut any = false;
            for k in 0..bins {
                let p = spec[k].norm_sqr();
                if g[k] == 0.0 || p <= self.power_floor {
                    continue;
                }
                // d|X_k|/dx_n = Re(conj(X_k) w_n e^{-2 pi i k n / N}) / |X_k|
                buf[k] = spec[k].conj() * (g[k] / p.sqrt());
                any = true;
            }
            if !any {
                continue;
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            let start = f * self.hop;
            for (m, c) in buf.iter().enumerate() {
                if let Some(i) = self.source(start + m, cache.input_len) {
                    gx[i] += c.re * self.window[m];
                }
            }
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_matches_numpy_semantics() {
        let got: Vec<usize> = (-4..8).map(|i| reflect(i, 4)).collect();
        assert_eq!(got, vec![2, 3, 2, 1, 0, 1, 2, 3, 2, 1, 0, 1]);
    }

    #[test]
    fn frame_count_centered() {
        let p = StftPlan::new(2048, 2048, 240, 0.0).unwrap();
        assert_eq!(p.frames(48000), 201);
        let q = StftPlan::new(64, 32, 16, 0.0).unwrap();
        assert_eq!(q.frames(5), 1);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let plan = StftPlan::new(16, 12, 4, LOSS_POWER_FLOOR).unwrap();
        let x: Vec<f64> = (0..37).map(|i| ((i * 29 % 17) as f64 / 8.0 - 1.0) * 0.7).collect();
        let (mag, cache) = plan.forward(&x);
        let g = Tensor::new(mag.shape().to_vec(), (0..mag.len()).map(|i| ((i * 3 % 7) as f64) / 3.0 - 1.0).collect()).unwrap();
        let gx = plan.backward(&cache, &g);
        let obj = |x: &[f64]| -> f64 { plan.magnitude_only(x).data().iter().zip(g.data()).map(|(a, b)| a * b).sum() };
        let h = 1e-6;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += h;
            let mut xm = x.clone();
            xm[i] -= h;
            let fd = (obj(&xp) - obj(&xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() < 1e-6 * fd.abs().max(1.0), "{i}: {fd} vs {}", gx[i]);
        }
    }
}
