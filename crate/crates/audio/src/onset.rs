//! Spectral-flux onset envelope, autocorrelation tempo estimate and the
//! derived beat / peak indicator tracks.

use crate::mfcc::{mel_power, N_MELS};
use crate::stft::Spectrogram;

pub const MIN_BPM: f64 = 60.0;
pub const MAX_BPM: f64 = 180.0;
const BPM_STEP: f64 = 0.05;
const COMB_TAPS: usize = 4;
const TOP_DB: f64 = 80.0;
const SMOOTH_SIGMA: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OnsetTracks {
    /// Max-normalized positive spectral flux, one value per frame.
    pub envelope: Vec<f64>,
    pub beats: Vec<f64>,
    pub peaks: Vec<f64>,
    /// `None` for a silent clip.
    pub tempo_bpm: Option<f64>,
}

impl OnsetTracks {
    pub fn beat_frames(&self) -> Vec<usize> {
        indicator_frames(&self.beats)
    }

    pub fn peak_frames(&self) -> Vec<usize> {
        indicator_frames(&self.peaks)
    }
}

fn indicator_frames(track: &[f64]) -> Vec<usize> {
    track.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(i, _)| i).collect()
}

/// Half-wave rectified frame-to-frame increase of log mel power, averaged
/// over bands and scaled so the clip maximum is 1.
pub fn onset_envelope(spec: &Spectrogram) -> Vec<f64> {
    let mel = mel_power(spec, N_MELS);
    let db: Vec<Vec<f64>> = mel.iter().map(|b| b.iter().map(|p| 10.0 * p.max(1e-10).log10()).collect()).collect();
    let peak = db.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = peak - TOP_DB;
    let db: Vec<Vec<f64>> = db.into_iter().map(|b| b.into_iter().map(|v| v.max(floor)).collect()).collect();

    let mut env = vec![0.0; db.len()];
    for t in 1..db.len() {
        env[t] = db[t].iter().zip(&db[t - 1]).map(|(a, b)| (a - b).max(0.0)).sum::<f64>() / N_MELS as f64;
    }
    let max = env.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        env.iter_mut().for_each(|v| *v /= max);
    }
    env
}

/// Mean-removed autocorrelation for lags `0..max_lag`.
fn autocorrelation(env: &[f64], max_lag: usize) -> Vec<f64> {
    let mean = env.iter().sum::<f64>() / env.len() as f64;
    let x: Vec<f64> = env.iter().map(|v| v - mean).collect();
    (0..max_lag.min(x.len())).map(|l| x.iter().zip(&x[l..]).map(|(a, b)| a * b).sum()).collect()
}

/// Widens frame-quantized pulses so that fractional beat periods still land
/// on a smooth autocorrelation peak.
fn gaussian_smooth(x: &[f64], sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let n = x.len() as isize;
    (0..n)
        .map(|t| {
            (-radius..=radius)
                .filter(|&o| (0..n).contains(&(t + o)))
                .map(|o| x[(t + o) as usize] * kernel[(o + radius) as usize])
                .sum()
        })
        .collect()
}

fn interp(acf: &[f64], lag: f64) -> Option<f64> {
    let lo = lag.floor() as usize;
    if lo + 1 >= acf.len() {
        return None;
    }
    let w = lag - lo as f64;
    Some(acf[lo] + w * (acf[lo + 1] - acf[lo]))
}

/// Tempo in BPM from the envelope's autocorrelation. Each candidate tempo is
/// scored by the autocorrelation summed at the first few multiples of its
/// (fractional) beat period, which favors the true period over its
/// subdivisions. Returns `None` when the envelope carries no energy.
pub fn estimate_tempo(env: &[f64], frame_rate: f64) -> Option<f64> {
    if env.iter().all(|&v| v == 0.0) || env.len() < 4 {
        return None;
    }
    let acf = autocorrelation(&gaussian_smooth(env, SMOOTH_SIGMA), env.len());
    if acf[0] <= 0.0 {
        return None;
    }
    let steps = ((MAX_BPM - MIN_BPM) / BPM_STEP).round() as usize;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..=steps {
        let bpm = MIN_BPM + i as f64 * BPM_STEP;
        let period = 60.0 * frame_rate / bpm;
        let taps: Vec<f64> = (1..=COMB_TAPS).map_while(|k| interp(&acf, k as f64 * period)).collect();
        if taps.is_empty() {
            continue;
        }
        let score = taps.iter().sum::<f64>() / COMB_TAPS as f64;
        if best.is_none_or(|(_, s)| score > s) {
            best = Some((bpm, score));
        }
    }
    best.map(|(bpm, _)| bpm)
}

/// Beat grid at `bpm` whose phase maximizes the envelope mass it lands on.
pub fn place_beats(env: &[f64], frame_rate: f64, bpm: f64) -> Vec<usize> {
    let period = 60.0 * frame_rate / bpm;
    let grid = |phase: f64| (0..).map(move |k| (phase + k as f64 * period).round() as usize).take_while(|&f| f < env.len());
    let mut best = (0.0, f64::NEG_INFINITY);
    let mut phase = 0.0;
    while phase < period {
        let score: f64 = grid(phase).map(|f| env[f]).sum();
        if score > best.1 {
            best = (phase, score);
        }
        phase += 0.25;
    }
    grid(best.0).collect()
}

/// Local maxima of the envelope that exceed mean + one standard deviation.
pub fn pick_peaks(env: &[f64]) -> Vec<usize> {
    let n = env.len() as f64;
    let mean = env.iter().sum::<f64>() / n;
    let std = (env.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let thresh = mean + std;
    (0..env.len())
        .filter(|&t| {
            let left = t == 0 || env[t] > env[t - 1];
            let right = t + 1 == env.len() || env[t] >= env[t + 1];
            left && right && env[t] > thresh
        })
        .collect()
}

pub fn onset_tracks(spec: &Spectrogram) -> OnsetTracks {
    let envelope = onset_envelope(spec);
    let n = envelope.len();
    let tempo_bpm = estimate_tempo(&envelope, spec.frame_rate());
    let mut beats = vec![0.0; n];
    if let Some(bpm) = tempo_bpm {
        for f in place_beats(&envelope, spec.frame_rate(), bpm) {
            beats[f] = 1.0;
        }
    }
    let mut peaks = vec![0.0; n];
    for f in pick_peaks(&envelope) {
        peaks[f] = 1.0;
    }
    OnsetTracks { envelope, beats, peaks, tempo_bpm }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tempo_of_ideal_pulse_train() {
        let fr = 22_050.0 / 512.0;
        for bpm in [80.0, 100.0, 123.0, 150.0, 170.0] {
            let period = 60.0 * fr / bpm;
            let mut env = vec![0.0; 517];
            let mut t: f64 = 3.0;
            while (t as usize) < env.len() {
                env[t.round() as usize] = 1.0;
                t += period;
            }
            let est = estimate_tempo(&env, fr).unwrap();
            assert!((est - bpm).abs() <= 2.0, "{bpm} -> {est}");
        }
    }

    #[test]
    fn flat_envelope_has_no_tempo_or_peaks() {
        assert_eq!(estimate_tempo(&[0.0; 100], 43.0), None);
        assert!(pick_peaks(&[0.0; 100]).is_empty());
    }

    #[test]
    fn peaks_respect_threshold() {
        let env = [0.0, 0.1, 0.0, 1.0, 0.0, 0.1, 0.0, 0.9, 0.2, 0.0];
        assert_eq!(pick_peaks(&env), vec![3, 7]);
    }
}
