//! Complex baseband containers and the numeric primitives shared by the
//! simulator and the feature extractors.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::error::{Error, Result};

/// One complex baseband sample (I + jQ).
pub type ComplexSample = Complex64;

/// Highest BLE channel index (data channels 0..=36).
pub const MAX_CHANNEL_INDEX: u32 = 36;

/// Labels attached to a frame as it moves through the pipeline.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_index: Option<u32>,
    #[serde(default)]
    pub domain_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdu_bits: Option<Bits>,
}

impl FrameMeta {
    pub fn validate(&self) -> Result<()> {
        match self.channel_index {
            Some(ch) if ch > MAX_CHANNEL_INDEX => Err(Error::ChannelOutOfRange(ch)),
            _ => Ok(()),
        }
    }

    /// Copy of the labels without the (potentially long) payload bits.
    pub fn labels_only(&self) -> FrameMeta {
        FrameMeta {
            pdu_bits: None,
            ..self.clone()
        }
    }
}

/// A non-empty run of finite complex samples at a known sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct IqFrame {
    samples: Vec<ComplexSample>,
    sample_rate_hz: f64,
    pub meta: FrameMeta,
}

impl IqFrame {
    pub fn new(samples: Vec<ComplexSample>, sample_rate_hz: f64) -> Result<Self> {
        Self::with_meta(samples, sample_rate_hz, FrameMeta::default())
    }

    pub fn with_meta(
        samples: Vec<ComplexSample>,
        sample_rate_hz: f64,
        meta: FrameMeta,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyFrame);
        }
        if !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
            return Err(Error::InvalidSampleRate(sample_rate_hz));
        }
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::NonFiniteSample(i));
        }
        meta.validate()?;
        Ok(Self {
            samples,
            sample_rate_hz,
            meta,
        })
    }

    pub fn samples(&self) -> &[ComplexSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<ComplexSample> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean per-sample power, `mean(|x|^2)`.
    pub fn mean_power(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Multiplies every sample by `gain` (which may be complex).
    pub fn scaled(&self, gain: ComplexSample) -> IqFrame {
        self.map_samples(|_, s| s * gain)
    }

    /// Applies `f(n, sample)` element-wise, keeping rate and labels.
    pub fn map_samples(&self, f: impl Fn(usize, ComplexSample) -> ComplexSample) -> IqFrame {
        IqFrame {
            samples: self.samples.iter().enumerate().map(|(n, &s)| f(n, s)).collect(),
            sample_rate_hz: self.sample_rate_hz,
            meta: self.meta.clone(),
        }
    }

    /// The first `len` samples (errors if the frame is shorter).
    pub fn head(&self, len: usize) -> Result<IqFrame> {
        if len == 0 || len > self.samples.len() {
            return Err(Error::WindowExceedsFrame {
                window: len,
                frame: self.samples.len(),
            });
        }
        Ok(IqFrame {
            samples: self.samples[..len].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
            meta: self.meta.clone(),
        })
    }
}

/// Phase values in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSeq {
    pub values: Vec<f64>,
    pub wrapped: bool,
}

/// Four-quadrant phase of every sample, in (-pi, pi]. `angle(0) = 0`.
pub fn angle(frame: &IqFrame) -> PhaseSeq {
    PhaseSeq {
        values: frame.samples().iter().map(|&s| sample_angle(s)).collect(),
        wrapped: true,
    }
}

#[inline]
pub(crate) fn sample_angle(s: ComplexSample) -> f64 {
    if s.re == 0.0 && s.im == 0.0 {
        return 0.0;
    }
    let a = s.im.atan2(s.re);
    // atan2 returns -pi for (-x, -0.0); fold it onto +pi.
    if a == -PI {
        PI
    } else {
        a
    }
}

/// Removes 2pi jumps: a correction is accumulated whenever two consecutive
/// values differ by strictly more than pi.
pub fn unwrap(phases: &PhaseSeq) -> PhaseSeq {
    PhaseSeq {
        values: unwrap_values(&phases.values),
        wrapped: false,
    }
}

pub(crate) fn unwrap_values(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let Some(&first) = values.first() else {
        return out;
    };
    out.push(first);
    let mut correction = 0.0;
    for w in values.windows(2) {
        let d = w[1] - w[0];
        if d.abs() > PI {
            correction -= 2.0 * PI * (d / (2.0 * PI)).round();
        }
        out.push(w[1] + correction);
    }
    out
}

/// Unnormalized forward DFT, `X[k] = sum x[n] e^{-j 2 pi k n / N}`.
/// The length must be a power of two.
pub fn fft(x: &[ComplexSample]) -> Result<Vec<ComplexSample>> {
    if !x.len().is_power_of_two() {
        return Err(Error::NonPowerOfTwoLength(x.len()));
    }
    let mut buf = x.to_vec();
    let plan = FftPlanner::<f64>::new().plan_fft_forward(buf.len());
    plan.process(&mut buf);
    Ok(buf)
}

/// Periodogram `|FFT(x padded to nfft)|^2 / nfft`, length `nfft`.
pub fn psd(frame: &IqFrame, nfft: usize) -> Result<Vec<f64>> {
    if !nfft.is_power_of_two() {
        return Err(Error::NonPowerOfTwoLength(nfft));
    }
    if frame.len() > nfft {
        return Err(Error::NfftTooShort {
            nfft,
            len: frame.len(),
        });
    }
    let mut padded = frame.samples().to_vec();
    padded.resize(nfft, ComplexSample::new(0.0, 0.0));
    let spectrum = fft(&padded)?;
    Ok(spectrum
        .iter()
        .map(|x| x.norm_sqr() / nfft as f64)
        .collect())
}

/// Rescales the frame to unit mean power. Phases are untouched.
pub fn normalize_power(frame: &IqFrame) -> Result<IqFrame> {
    let p = frame.mean_power();
    if p <= 0.0 || !p.is_finite() {
        return Err(Error::ZeroEnergyFrame);
    }
    let g = 1.0 / p.sqrt();
    Ok(frame.map_samples(|_, s| ComplexSample::new(s.re * g, s.im * g)))
}
