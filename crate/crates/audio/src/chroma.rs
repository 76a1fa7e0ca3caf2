use crate::stft::Spectrogram;

pub const N_CHROMA: usize = 12;
/// Bins below this frequency are too coarse to assign a pitch class.
const MIN_FREQ: f64 = 32.7;

/// Pitch class of a frequency with A440 as reference and C at index 0.
pub fn pitch_class(freq: f64) -> usize {
    let semis = (12.0 * (freq / 440.0).log2()).round() as i64;
    (semis + 9).rem_euclid(12) as usize
}

/// Power folded onto 12 pitch classes and L1-normalized per frame. A frame
/// with no energy becomes the uniform distribution.
pub fn chroma(spec: &Spectrogram) -> Vec<Vec<f64>> {
    let classes: Vec<Option<usize>> = (0..spec.bins)
        .map(|k| {
            let f = spec.bin_frequency(k);
            (f >= MIN_FREQ).then(|| pitch_class(f))
        })
        .collect();
    (0..spec.frames)
        .map(|t| {
            let mut row = vec![0.0; N_CHROMA];
            for (c, class) in spec.frame(t).iter().zip(&classes) {
                if let Some(pc) = class {
                    row[*pc] += c.norm_sqr();
                }
            }
            let total: f64 = row.iter().sum();
            if total > 0.0 {
                row.iter_mut().for_each(|v| *v /= total);
            } else {
                row.fill(1.0 / N_CHROMA as f64);
            }
            row
        })
        .collect()
}
