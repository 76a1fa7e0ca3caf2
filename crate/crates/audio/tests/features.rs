use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tdr_audio::chroma::chroma;
use tdr_audio::features::{BEAT_COL, CHROMA_COLS, ENVELOPE_COL, MFCC_DELTA_COLS, PEAK_COL};
use tdr_audio::mfcc::mfcc;
use tdr_audio::onset::onset_tracks;
use tdr_audio::stft::hann;
use tdr_audio::*;

const SR: u32 = 22_050;

fn sine(freq: f64, seconds: f64) -> AudioClip {
    let n = (seconds * SR as f64).round() as usize;
    AudioClip::new((0..n).map(|i| 0.5 * (2.0 * PI * freq * i as f64 / SR as f64).sin()).collect(), SR)
}

/// Click track: a 15 ms decaying 2 kHz burst on every beat, starting at
/// `offset` seconds, plus optional low-level noise.
fn clicks(bpm: f64, seconds: f64, offset: f64, noise: f64, seed: u64) -> (AudioClip, Vec<usize>) {
    let n = (seconds * SR as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s: Vec<f64> = (0..n).map(|_| noise * rng.random_range(-1.0..1.0)).collect();
    let mut onsets = Vec::new();
    let mut t = offset;
    while t < seconds {
        let start = (t * SR as f64).round() as usize;
        onsets.push(start);
        for i in 0..(0.015 * SR as f64) as usize {
            if start + i < n {
                let tt = i as f64 / SR as f64;
                s[start + i] += 0.8 * (-tt / 0.004).exp() * (2.0 * PI * 2000.0 * tt).sin();
            }
        }
        t += 60.0 / bpm;
    }
    (AudioClip::new(s, SR), onsets)
}

#[test]
fn twelve_second_clip_has_517_frames() {
    let spec = stft(&sine(440.0, 12.0), WINDOW, HOP).unwrap();
    assert_eq!(spec.frames, 517);
    assert_eq!(spec.bins, 513);
}

#[test]
fn stft_matches_numpy_reference() {
    // Reference magnitudes from numpy's rfft over reflect-padded, Hann
    // windowed frames of the same two-tone signal.
    let n = 12 * SR as usize;
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / SR as f64;
            0.5 * (2.0 * PI * 440.0 * t).sin() + 0.25 * (2.0 * PI * 1234.5 * t + 0.3).sin()
        })
        .collect();
    let spec = stft(&AudioClip::new(x, SR), WINDOW, HOP).unwrap();
    let expected = [
        (0, 20, 51.77788175837325),
        (100, 20, 113.21671437611495),
        (100, 57, 59.627390673572656),
        (516, 20, 113.06189401838668),
        (250, 0, 0.00863813858763511),
    ];
    for (t, k, mag) in expected {
        let got = spec.frame(t)[k].norm();
        assert!((got - mag).abs() < 1e-9 * mag.max(1.0), "frame {t} bin {k}: {got} vs {mag}");
    }
}

#[test]
fn parseval_per_frame() {
    let (clip, _) = clicks(120.0, 3.0, 0.1, 0.05, 3);
    let spec = stft(&clip, WINDOW, HOP).unwrap();
    let padded = tdr_audio::stft::reflect_pad(&clip.samples, WINDOW / 2);
    let w = hann(WINDOW);
    for t in [0, 5, 40, spec.frames - 1] {
        let seg = &padded[t * HOP..t * HOP + WINDOW];
        let time_energy: f64 = seg.iter().zip(&w).map(|(s, w)| (s * w).powi(2)).sum::<f64>() * WINDOW as f64;
        let f = spec.frame(t);
        let freq_energy: f64 = f[0].norm_sqr()
            + f[WINDOW / 2].norm_sqr()
            + 2.0 * f[1..WINDOW / 2].iter().map(|c| c.norm_sqr()).sum::<f64>();
        assert!((freq_energy - time_energy).abs() / time_energy < 1e-6, "frame {t}");
    }
}

#[test]
fn silence_features() {
    let f = extract_music_features(&AudioClip::silence(12.0, SR), None).unwrap();
    assert_eq!(f.frames.shape(), &[517, 35]);
    for r in 0..f.len() {
        let row = f.frames.row(r);
        assert!(row[MFCC_DELTA_COLS].iter().all(|&v| v == 0.0));
        assert!(row[CHROMA_COLS].iter().all(|&v| v == 1.0 / 12.0));
        assert_eq!(row[ENVELOPE_COL], 0.0);
        assert_eq!(row[PEAK_COL], 0.0);
        assert_eq!(row[BEAT_COL], 0.0);
    }
    assert_eq!(f.tempo_bpm, None);
}

#[test]
fn chroma_identifies_a_and_c() {
    for (freq, class) in [(440.0, 9), (261.63, 0)] {
        let spec = stft(&sine(freq, 12.0), WINDOW, HOP).unwrap();
        let rows = chroma(&spec);
        let interior = &rows[2..rows.len() - 2];
        let hits = interior
            .iter()
            .filter(|r| r.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 == class)
            .count();
        assert!(hits as f64 >= 0.95 * interior.len() as f64, "{freq} Hz: {hits}/{}", interior.len());
    }
}

#[test]
fn chroma_rows_are_distributions() {
    let (clip, _) = clicks(97.0, 4.0, 0.2, 0.1, 1);
    let spec = stft(&clip, WINDOW, HOP).unwrap();
    for row in chroma(&spec) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn noise_and_tone_cepstra_differ() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let noise = AudioClip::new((0..12 * SR as usize).map(|_| rng.random_range(-0.5..0.5)).collect(), SR);
    let stats = |clip: &AudioClip| {
        let c1: Vec<f64> = mfcc(&stft(clip, WINDOW, HOP).unwrap()).iter().map(|r| r[1]).collect();
        let m = c1.iter().sum::<f64>() / c1.len() as f64;
        let sd = (c1.iter().map(|v| (v - m).powi(2)).sum::<f64>() / c1.len() as f64).sqrt();
        (m, sd)
    };
    let (mn, sn) = stats(&noise);
    let (mt, st) = stats(&sine(440.0, 12.0));
    // Separation of the two coefficient-1 distributions in pooled std units.
    assert!((mn - mt).abs() > 10.0 * (sn + st).max(1e-9), "noise {mn}±{sn}, tone {mt}±{st}");
}

#[test]
fn metronome_at_120_bpm() {
    let (clip, onsets) = clicks(120.0, 12.0, 0.25, 0.0, 0);
    let spec = stft(&clip, WINDOW, HOP).unwrap();
    let tracks = onset_tracks(&spec);
    let bpm = tracks.tempo_bpm.unwrap();
    assert!((bpm - 120.0).abs() <= 2.0, "estimated {bpm}");
    let click_frames: Vec<i64> = onsets.iter().map(|&s| (s as f64 / HOP as f64).round() as i64).collect();
    let beats = tracks.beat_frames();
    assert!(beats.len() >= click_frames.len() - 1);
    for b in beats {
        let nearest = click_frames.iter().map(|&c| (c - b as i64).abs()).min().unwrap();
        assert!(nearest <= 1, "beat at frame {b} is {nearest} frames from a click");
    }
    assert_eq!(tracks.envelope.iter().copied().fold(0.0, f64::max), 1.0);
}

#[test]
fn tempo_on_click_tracks_within_two_bpm() {
    let mut ok = 0;
    let mut total = 0;
    let mut misses = Vec::new();
    for i in 0..10 {
        let bpm = 80.0 + 10.0 * i as f64;
        for seed in 0..5u64 {
            let offset = 0.05 + 0.09 * seed as f64;
            let (clip, _) = clicks(bpm, 12.0, offset, 0.02, seed);
            let f = extract_music_features(&clip, None).unwrap();
            total += 1;
            match f.tempo_bpm {
                Some(est) if (est - bpm).abs() <= 2.0 => ok += 1,
                other => misses.push((bpm, seed, other)),
            }
        }
    }
    assert!(ok as f64 >= 0.9 * total as f64, "{ok}/{total}, misses {misses:?}");
}

#[test]
fn one_hot_columns_are_binary_and_envelope_max_is_one() {
    let (clip, _) = clicks(133.0, 12.0, 0.3, 0.05, 9);
    let f = extract_music_features(&clip, None).unwrap();
    for c in [BEAT_COL, PEAK_COL] {
        assert!(f.column(c).iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(f.column(c).iter().any(|&v| v == 1.0));
    }
    assert_eq!(f.column(ENVELOPE_COL).iter().copied().fold(0.0, f64::max), 1.0);
}

#[test]
fn extraction_is_deterministic_and_checks_duration() {
    let (clip, _) = clicks(101.0, 12.0, 0.1, 0.1, 4);
    let a = extract_music_features(&clip, None).unwrap();
    let b = extract_music_features(&clip.clone(), None).unwrap();
    assert!(a.frames.data().iter().zip(b.frames.data()).all(|(x, y)| x.to_bits() == y.to_bits()));

    let short = sine(440.0, 11.0);
    assert!(matches!(extract_music_features(&short, None), Err(AudioError::WrongDuration { .. })));
}

#[test]
fn standardization_and_stats_sidecar() {
    let feats: Vec<MusicFeatures> = [90.0, 140.0]
        .iter()
        .enumerate()
        .map(|(i, &bpm)| extract_music_features(&clicks(bpm, 12.0, 0.1, 0.05, i as u64).0, None).unwrap())
        .collect();
    let stats = FeatureStats::compute("train", &feats).unwrap();
    assert_eq!(stats.n_frames, 2 * 517);
    assert!(stats.std.iter().all(|&s| s > 0.0));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("stats.json");
    stats.save(&path).unwrap();
    assert_eq!(FeatureStats::load(&path).unwrap(), stats);

    let mut pooled = Vec::new();
    for f in &feats {
        let mut g = f.clone();
        g.standardize(&stats);
        pooled.extend(g.column(ENVELOPE_COL));
    }
    let m = pooled.iter().sum::<f64>() / pooled.len() as f64;
    let v = pooled.iter().map(|x| (x - m).powi(2)).sum::<f64>() / pooled.len() as f64;
    assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
    assert!(FeatureStats::compute("train", std::iter::empty()).is_err());
}

#[test]
fn wav_round_trip_within_quantization() {
    let clip = sine(330.0, 0.5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.wav");
    clip.write_wav(&path).unwrap();
    let back = AudioClip::read_wav(&path).unwrap();
    assert_eq!(back.sample_rate, SR);
    assert_eq!(back.len(), clip.len());
    assert!(back.samples.iter().zip(&clip.samples).all(|(a, b)| (a - b).abs() <= 1.0 / 32767.0));
}
