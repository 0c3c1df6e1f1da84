//! Band-limited windowed-sinc resampling.

use super::AudioClip;
use crate::error::{Error, Result};

/// Zero crossings of the sinc kernel on each side, at the lower of the two
/// rates. More taps, better stopband.
const KERNEL_ZEROS: f64 = 24.0;

fn blackman(v: f64) -> f64 {
    // v in [-1, 1]
    0.42 + 0.5 * (std::f64::consts::PI * v).cos() + 0.08 * (2.0 * std::f64::consts::PI * v).cos()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Parameter("target rate must be positive".into()));
    }
    if target_rate == clip.sample_rate {
        return Ok(clip.clone());
    }
    let ratio = target_rate as f64 / clip.sample_rate as f64;
    let out_len = ((clip.samples.len() as f64 * ratio).round() as usize).max(1);
    // Cut off at the lower Nyquist; stretch the kernel accordingly when
    // downsampling.
    let cutoff = ratio.min(1.0);
    let half_width = KERNEL_ZEROS / cutoff;
    let src = &clip.samples;
    let mut out = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let t = n as f64 / ratio;
        let lo = ((t - half_width).ceil() as isize).max(0) as usize;
        let hi = ((t + half_width).floor() as isize).min(src.len() as isize - 1) as usize;
        let mut acc = 0.0;
        for (m, &x) in src.iter().enumerate().take(hi + 1).skip(lo) {
            let u = m as f64 - t;
            acc += x * cutoff * sinc(cutoff * u) * blackman(u / half_width);
        }
        out.push(acc);
    }
    AudioClip::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, secs: f64) -> AudioClip {
        let n = (rate as f64 * secs) as usize;
        let samples = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect();
        AudioClip::new(samples, rate).unwrap()
    }

    #[test]
    fn same_rate_is_identity() {
        let clip = sine(440.0, 22050, 0.1);
        let out = resample(&clip, 22050).unwrap();
        assert_eq!(out.samples, clip.samples);
    }

    #[test]
    fn halving_the_rate_halves_the_length() {
        let clip = sine(440.0, 44100, 1.0);
        let out = resample(&clip, 22050).unwrap();
        assert_eq!(out.samples.len(), 22050);
        assert_eq!(out.sample_rate, 22050);
    }

    #[test]
    fn zero_target_rate_is_rejected() {
        let clip = sine(440.0, 44100, 0.01);
        assert!(matches!(resample(&clip, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn sine_survives_downsampling_at_the_same_frequency() {
        // Direct DFT summation on a windowed slice of the output: the
        // dominant bin must still be within one bin of 440 Hz.
        let clip = sine(440.0, 44100, 1.0);
        let out = resample(&clip, 22050).unwrap();
        let n = 4096usize;
        let slice = &out.samples[1000..1000 + n];
        let mut best = (0usize, 0.0f64);
        for k in 1..n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &x) in slice.iter().enumerate() {
                // Hann analysis window to tame leakage.
                let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
                let ph = 2.0 * std::f64::consts::PI * k as f64 * i as f64 / n as f64;
                re += x * w * ph.cos();
                im -= x * w * ph.sin();
            }
            let p = re * re + im * im;
            if p > best.1 {
                best = (k, p);
            }
        }
        let bin_hz = 22050.0 / n as f64;
        let freq = best.0 as f64 * bin_hz;
        assert!(
            (freq - 440.0).abs() <= bin_hz,
            "dominant bin at {freq} Hz, want 440 +- {bin_hz}"
        );
    }

    #[test]
    fn upsampling_preserves_duration_within_one_period() {
        let clip = sine(100.0, 8000, 0.25);
        let out = resample(&clip, 11025).unwrap();
        let want = 0.25;
        assert!((out.duration_secs() - want).abs() <= 1.0 / 8000.0);
    }
}
