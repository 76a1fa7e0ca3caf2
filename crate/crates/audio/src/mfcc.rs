use std::f64::consts::PI;

use crate::stft::Spectrogram;

pub const N_MELS: usize = 40;
pub const N_MFCC: usize = 20;
pub const DELTA_WIDTH: usize = 9;
const LOG_FLOOR: f64 = 1e-10;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters spanning 0 Hz to Nyquist, `n_mels × bins`.
pub fn mel_filterbank(n_mels: usize, bins: usize, sample_rate: u32, window: usize) -> Vec<Vec<f64>> {
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * sample_rate as f64 / window as f64;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Mel-band power per frame, `frames × n_mels`.
pub fn mel_power(spec: &Spectrogram, n_mels: usize) -> Vec<Vec<f64>> {
    let bank = mel_filterbank(n_mels, spec.bins, spec.sample_rate, spec.window);
    let power = spec.power();
    power
        .chunks(spec.bins)
        .map(|frame| bank.iter().map(|f| f.iter().zip(frame).map(|(w, p)| w * p).sum()).collect())
        .collect()
}

/// Orthonormal type-II DCT, first `keep` coefficients.
pub fn dct2(x: &[f64], keep: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..keep)
        .map(|k| {
            let s = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            s * x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2.0 * n)).cos())
                .sum::<f64>()
        })
        .collect()
}

/// Cepstral coefficients per frame: log mel power followed by a DCT.
pub fn mfcc(spec: &Spectrogram) -> Vec<Vec<f64>> {
    mel_power(spec, N_MELS)
        .iter()
        .map(|bands| {
            let logs: Vec<f64> = bands.iter().map(|p| p.max(LOG_FLOOR).log10()).collect();
            dct2(&logs, N_MFCC)
        })
        .collect()
}

/// First-order delta by least-squares slope over a centered window of
/// `width` frames (odd). Frames beyond the edges repeat the edge frame.
pub fn delta(track: &[Vec<f64>], width: usize) -> Vec<Vec<f64>> {
    let half = (width / 2) as isize;
    let norm: f64 = 2.0 * (1..=half).map(|n| (n * n) as f64).sum::<f64>();
    let last = track.len() as isize - 1;
    let at = |t: isize| &track[t.clamp(0, last) as usize];
    (0..track.len() as isize)
        .map(|t| {
            let dim = track[t as usize].len();
            (0..dim)
                .map(|j| (1..=half).map(|n| n as f64 * (at(t + n)[j] - at(t - n)[j])).sum::<f64>() / norm)
                .collect()
        })
        .collect()
}

pub fn mfcc_delta(spec: &Spectrogram) -> Vec<Vec<f64>> {
    delta(&mfcc(spec), DELTA_WIDTH)
}
