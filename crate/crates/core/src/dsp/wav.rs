//! RIFF/WAVE reading and writing: PCM 16-bit and IEEE float 32-bit, mono
//! or stereo. Stereo is averaged to mono on load.

use std::fs;
use std::path::Path;

use super::AudioClip;
use crate::error::{Error, Result};

const FMT_PCM: u16 = 1;
const FMT_IEEE_FLOAT: u16 = 3;
// WAVE_FORMAT_EXTENSIBLE wraps the real format in a sub-format GUID.
const FMT_EXTENSIBLE: u16 = 0xFFFE;

fn le_u16(b: &[u8], off: usize) -> Result<u16> {
    b.get(off..off + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| Error::Format("unexpected end of file".into()))
}

fn le_u32(b: &[u8], off: usize) -> Result<u32> {
    b.get(off..off + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| Error::Format("unexpected end of file".into()))
}

pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let bytes = fs::read(path)?;
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format(format!(
            "{}: not a RIFF/WAVE file",
            path.display()
        )));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // (format, channels, rate, bits)
    let mut data: Option<(usize, usize)> = None; // (offset, declared length)
    let mut off = 12usize;
    while off + 8 <= bytes.len() {
        let id = &bytes[off..off + 4];
        let size = le_u32(&bytes, off + 4)? as usize;
        let body = off + 8;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::Format("fmt chunk too small".into()));
                }
                let mut audio_format = le_u16(&bytes, body)?;
                let channels = le_u16(&bytes, body + 2)?;
                let rate = le_u32(&bytes, body + 4)?;
                let bits = le_u16(&bytes, body + 14)?;
                if audio_format == FMT_EXTENSIBLE && size >= 40 {
                    audio_format = le_u16(&bytes, body + 24)?;
                }
                fmt = Some((audio_format, channels, rate, bits));
            }
            b"data" => {
                if body + size > bytes.len() {
                    return Err(Error::Format(format!(
                        "data chunk declares {} bytes but only {} remain",
                        size,
                        bytes.len() - body
                    )));
                }
                data = Some((body, size));
            }
            _ => {}
        }
        // Chunks are word-aligned.
        off = body + size + (size & 1);
    }

    let (audio_format, channels, rate, bits) =
        fmt.ok_or_else(|| Error::Format("missing fmt chunk".into()))?;
    let (data_off, data_len) = data.ok_or_else(|| Error::Format("missing data chunk".into()))?;
    if channels == 0 || channels > 2 {
        return Err(Error::Unsupported(format!("{channels} channels")));
    }
    if rate == 0 {
        return Err(Error::Format("zero sample rate".into()));
    }

    let payload = &bytes[data_off..data_off + data_len];
    let interleaved: Vec<f64> = match (audio_format, bits) {
        (FMT_PCM, 16) => payload
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
            .collect(),
        (FMT_IEEE_FLOAT, 32) => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect(),
        (f, b) => {
            return Err(Error::Unsupported(format!(
                "audio format {f} with {b} bits per sample"
            )))
        }
    };

    let ch = channels as usize;
    let samples: Vec<f64> = if ch == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(ch)
            .map(|frame| frame.iter().sum::<f64>() / ch as f64)
            .collect()
    };
    if samples.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{}: no samples in data chunk",
            path.display()
        )));
    }
    AudioClip::new(samples, rate)
}

/// Write mono 16-bit PCM.
pub fn write_wav_pcm16(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyInput("nothing to write".into()));
    }
    let data_len = samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FMT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_bytes(channels: u16, rate: u32, frames: &[i16]) -> Vec<u8> {
        let data_len = frames.len() * 2;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&rate.to_le_bytes());
        out.extend_from_slice(&(rate * channels as u32 * 2).to_le_bytes());
        out.extend_from_slice(&(channels * 2).to_le_bytes());
        out.extend_from_slice(&16u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for &v in frames {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    #[test]
    fn mono_pcm16_header_arithmetic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let frames: Vec<i16> = vec![0; 22050];
        std::fs::write(&p, wav_bytes(1, 22050, &frames)).unwrap();
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.samples.len(), 22050);
        assert_eq!(clip.sample_rate, 22050);
    }

    #[test]
    fn stereo_opposite_channels_cancel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.wav");
        let mut frames = Vec::new();
        for _ in 0..100 {
            frames.push(16384i16); // 0.5
            frames.push(-16384i16); // -0.5
        }
        std::fs::write(&p, wav_bytes(2, 8000, &frames)).unwrap();
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.samples.len(), 100);
        assert!(clip.samples.iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn truncated_data_chunk_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.wav");
        let mut bytes = wav_bytes(1, 8000, &[1, 2, 3, 4]);
        bytes.truncate(bytes.len() - 3);
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_wav(&p), Err(Error::Format(_))));
    }

    #[test]
    fn unsupported_encoding_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("u.wav");
        let mut bytes = wav_bytes(1, 8000, &[0; 4]);
        bytes[20] = 7; // mu-law
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_wav(&p), Err(Error::Unsupported(_))));
    }

    #[test]
    fn empty_data_chunk_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.wav");
        std::fs::write(&p, wav_bytes(1, 8000, &[])).unwrap();
        assert!(matches!(load_wav(&p), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn pcm16_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.wav");
        let samples: Vec<f64> = (0..500)
            .map(|i| (i as f64 * 0.05).sin() * 0.8)
            .collect();
        write_wav_pcm16(&p, &samples, 16000).unwrap();
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.sample_rate, 16000);
        assert_eq!(clip.samples.len(), 500);
        for (a, b) in clip.samples.iter().zip(&samples) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn float32_payload_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.wav");
        let vals: Vec<f32> = vec![0.25, -0.5, 1.0];
        let data_len = vals.len() * 4;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&(36 + data_len as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&3u16.to_le_bytes());
        out.extend_from_slice(&1u16.to_le_bytes());
        out.extend_from_slice(&8000u32.to_le_bytes());
        out.extend_from_slice(&32000u32.to_le_bytes());
        out.extend_from_slice(&4u16.to_le_bytes());
        out.extend_from_slice(&32u16.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for v in &vals {
            out.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&p, out).unwrap();
        let clip = load_wav(&p).unwrap();
        assert_eq!(clip.samples, vec![0.25, -0.5, 1.0]);
    }
}
