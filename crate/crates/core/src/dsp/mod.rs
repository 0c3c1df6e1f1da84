//! Audio feature extraction: WAV in, 3x224x224 feature image out.
//!
//! All operations are pure functions of their inputs; corpus featurization
//! can run data-parallel per file.

mod delta;
mod image;
mod mel;
mod resample;
mod stft;
mod wav;

pub use delta::delta;
pub use image::{assemble_image, bilinear_resize, read_image, write_image, IMG_SIDE};
pub use mel::{log_mel, mel_filterbank, mfcc, power_to_db};
pub use resample::resample;
pub use stft::{hann_window, stft_magnitude};
pub use wav::{load_wav, write_wav_pcm16};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("audio clip has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if !samples.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("audio clip contains non-finite samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinKind {
    /// Linear power-spectrum bins straight from the STFT.
    Spectrum,
    Mel,
    Mfcc,
}

/// A `n_bins x n_frames` spectro-temporal matrix, row-major per bin.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub values: Vec<f64>,
    pub n_bins: usize,
    pub n_frames: usize,
    pub bin_kind: BinKind,
    pub frame_hop: usize,
}

impl FeatureMatrix {
    pub fn new(
        values: Vec<f64>,
        n_bins: usize,
        n_frames: usize,
        bin_kind: BinKind,
        frame_hop: usize,
    ) -> Result<Self> {
        if values.len() != n_bins * n_frames {
            return Err(Error::Shape(format!(
                "feature matrix: {} values for {}x{}",
                values.len(),
                n_bins,
                n_frames
            )));
        }
        if n_frames == 0 || n_bins == 0 {
            return Err(Error::EmptyInput("feature matrix has zero extent".into()));
        }
        Ok(Self {
            values,
            n_bins,
            n_frames,
            bin_kind,
            frame_hop,
        })
    }

    #[inline]
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.n_frames + frame]
    }

    pub fn row(&self, bin: usize) -> &[f64] {
        &self.values[bin * self.n_frames..(bin + 1) * self.n_frames]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Per-channel mapping back to pre-normalization values:
/// `original = pixel * scale + shift`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelNorm {
    pub shift: f64,
    pub scale: f64,
}

/// The 3x224x224 network input: (base, delta, delta-delta) channels.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrogramImage {
    data: Vec<f32>,
    pub norm: [ChannelNorm; 3],
}

impl SpectrogramImage {
    pub fn new(data: Vec<f32>, norm: [ChannelNorm; 3]) -> Result<Self> {
        if data.len() != 3 * IMG_SIDE * IMG_SIDE {
            return Err(Error::Shape(format!(
                "image has {} values, want 3x{}x{}",
                data.len(),
                IMG_SIDE,
                IMG_SIDE
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("image contains non-finite values".into()));
        }
        if norm.iter().any(|c| c.scale == 0.0) {
            return Err(Error::Parameter("channel norm scale must be nonzero".into()));
        }
        Ok(Self { data, norm })
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        &self.data[c * IMG_SIDE * IMG_SIDE..(c + 1) * IMG_SIDE * IMG_SIDE]
    }
}

/// Which base matrix fills channel 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    LogMel,
    Mfcc,
}

/// Channel normalization applied after the per-channel min-max scaling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalize {
    /// Min-max to `[0, 1]` only.
    Unit,
    /// Min-max, then shift/scale by standard image-model statistics.
    ImageNet,
}

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub f_min: f64,
    /// Defaults to Nyquist when absent.
    pub f_max: Option<f64>,
    pub delta_width: usize,
    pub top_db: f64,
    pub normalize: Normalize,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self {
            sample_rate: 22050,
            n_fft: 2048,
            hop: 512,
            n_mels: 256,
            n_mfcc: 20,
            f_min: 0.0,
            f_max: None,
            delta_width: 9,
            top_db: 80.0,
            normalize: Normalize::Unit,
        }
    }
}

impl DspConfig {
    pub fn f_max(&self) -> f64 {
        self.f_max
            .unwrap_or(self.sample_rate as f64 / 2.0)
    }
}

/// Full clip-to-image pipeline: resample, base matrix, image assembly.
pub fn featurize_clip(
    clip: &AudioClip,
    cfg: &DspConfig,
    kind: InputKind,
) -> Result<SpectrogramImage> {
    let clip = resample(clip, cfg.sample_rate)?;
    let base = match kind {
        InputKind::LogMel => log_mel(&clip, cfg)?,
        InputKind::Mfcc => mfcc(&clip, cfg)?,
    };
    assemble_image(&base, cfg)
}
