use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::clip::AudioClip;
use crate::error::{AudioError, Result};

pub const WINDOW: usize = 1024;
pub const HOP: usize = 512;

/// One-sided complex spectrogram, `frames × bins` row-major.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub window: usize,
    pub hop: usize,
    pub sample_rate: u32,
    pub data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    /// Squared magnitudes, `frames × bins`.
    pub fn power(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn bin_frequency(&self, k: usize) -> f64 {
        k as f64 * self.sample_rate as f64 / self.window as f64
    }

    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect()
}

/// Pads by `pad` samples on both sides, mirroring about the end samples
/// (the end samples themselves are not repeated).
pub fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let idx = |i: isize| -> usize {
        let period = 2 * (n as isize - 1);
        if period == 0 {
            return 0;
        }
        let m = i.rem_euclid(period);
        if m < n as isize { m as usize } else { (period - m) as usize }
    };
    (-(pad as isize)..(n + pad) as isize).map(|i| x[idx(i)]).collect()
}

pub fn frame_count(samples: usize, hop: usize) -> usize {
    1 + samples / hop
}

/// Centered short-time Fourier transform with a Hann window.
pub fn stft(clip: &AudioClip, window: usize, hop: usize) -> Result<Spectrogram> {
    if clip.len() < window {
        return Err(AudioError::TooShort { len: clip.len(), window });
    }
    let padded = reflect_pad(&clip.samples, window / 2);
    let frames = 1 + (padded.len() - window) / hop;
    let bins = window / 2 + 1;
    let win = hann(window);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(window);
    let mut buf = vec![Complex64::new(0.0, 0.0); window];
    let mut data = Vec::with_capacity(frames * bins);
    for t in 0..frames {
        let seg = &padded[t * hop..t * hop + window];
        for ((b, &s), &w) in buf.iter_mut().zip(seg).zip(&win) {
            *b = Complex64::new(s * w, 0.0);
        }
        fft.process(&mut buf);
        data.extend_from_slice(&buf[..bins]);
    }
    Ok(Spectrogram { frames, bins, window, hop, sample_rate: clip.sample_rate, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_pad_mirrors_without_edge_repeat() {
        assert_eq!(reflect_pad(&[1.0, 2.0, 3.0, 4.0], 2), vec![3.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 2.0]);
    }

    #[test]
    fn rejects_short_clip() {
        let clip = AudioClip::new(vec![0.0; 1000], 22_050);
        assert!(matches!(stft(&clip, WINDOW, HOP), Err(AudioError::TooShort { len: 1000, window: 1024 })));
    }

    #[test]
    fn silence_has_zero_magnitude() {
        let s = stft(&AudioClip::silence(1.0, 22_050), WINDOW, HOP).unwrap();
        assert!(s.power().iter().all(|&p| p == 0.0));
    }
}
