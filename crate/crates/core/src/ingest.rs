//! Reading and writing raw interleaved IQ captures.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iq::{ComplexSample, FrameMeta, IqFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SampleLayout {
    #[default]
    InterleavedF32,
    InterleavedF64,
}

impl SampleLayout {
    /// Bytes per complex sample.
    pub fn sample_bytes(self) -> usize {
        match self {
            SampleLayout::InterleavedF32 => 8,
            SampleLayout::InterleavedF64 => 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum Framing {
    Preframed {
        frame_len: usize,
    },
    EnergyDetect {
        threshold_rel: f64,
        min_gap_samples: usize,
        /// Samples kept per detected burst; `None` keeps the whole burst.
        #[serde(default)]
        frame_len: Option<usize>,
        /// Shift applied to each detected start (manual alignment).
        #[serde(default)]
        align_offset: i64,
        #[serde(default = "default_smoothing")]
        smoothing: usize,
    },
}

fn default_smoothing() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureSpec {
    pub path: PathBuf,
    pub sample_rate_hz: f64,
    #[serde(default)]
    pub layout: SampleLayout,
    pub framing: Framing,
}

impl CaptureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::InvalidSampleRate(self.sample_rate_hz));
        }
        match self.framing {
            Framing::Preframed { frame_len: 0 } => {
                Err(Error::InvalidConfig("frame_len must be positive".into()))
            }
            Framing::EnergyDetect {
                threshold_rel,
                smoothing,
                frame_len,
                ..
            } if !(threshold_rel > 0.0 && threshold_rel < 1.0)
                || smoothing == 0
                || frame_len == Some(0) =>
            {
                Err(Error::InvalidConfig(
                    "energy detector needs 0 < threshold_rel < 1, smoothing > 0, frame_len > 0".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

/// Per-frame entry of the sidecar manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    /// Offset in samples from the start of the file.
    pub offset: usize,
    pub length: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel_index: Option<u32>,
    #[serde(default)]
    pub domain_label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureManifest {
    pub sample_rate_hz: f64,
    pub layout: SampleLayout,
    #[serde(default, rename = "frame")]
    pub frames: Vec<FrameEntry>,
}

/// `<capture>.manifest.toml`
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.toml");
    PathBuf::from(s)
}

pub fn read_manifest(path: &Path) -> Result<CaptureManifest> {
    let text = fs::read_to_string(manifest_path(path))?;
    Ok(toml::from_str(&text)?)
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedFile {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Decodes little-endian interleaved I,Q pairs.
pub fn decode_samples(bytes: &[u8], layout: SampleLayout) -> Option<Vec<ComplexSample>> {
    if bytes.len() % layout.sample_bytes() != 0 {
        return None;
    }
    let out = match layout {
        SampleLayout::InterleavedF32 => bytes
            .chunks_exact(8)
            .map(|c| {
                let i = f32::from_le_bytes(c[..4].try_into().unwrap());
                let q = f32::from_le_bytes(c[4..].try_into().unwrap());
                ComplexSample::new(f64::from(i), f64::from(q))
            })
            .collect(),
        SampleLayout::InterleavedF64 => bytes
            .chunks_exact(16)
            .map(|c| {
                let i = f64::from_le_bytes(c[..8].try_into().unwrap());
                let q = f64::from_le_bytes(c[8..].try_into().unwrap());
                ComplexSample::new(i, q)
            })
            .collect(),
    };
    Some(out)
}

pub fn encode_samples(samples: &[ComplexSample], layout: SampleLayout) -> Vec<u8> {
    let mut out = Vec::with_capacity(samples.len() * layout.sample_bytes());
    for s in samples {
        match layout {
            SampleLayout::InterleavedF32 => {
                out.extend_from_slice(&(s.re as f32).to_le_bytes());
                out.extend_from_slice(&(s.im as f32).to_le_bytes());
            }
            SampleLayout::InterleavedF64 => {
                out.extend_from_slice(&s.re.to_le_bytes());
                out.extend_from_slice(&s.im.to_le_bytes());
            }
        }
    }
    out
}

/// Burst `[start, end)` intervals where the smoothed power exceeds
/// `threshold_rel` times its maximum. Bursts separated by fewer than
/// `min_gap_samples` quiet samples are merged.
pub fn detect_bursts(
    samples: &[ComplexSample],
    threshold_rel: f64,
    min_gap_samples: usize,
    smoothing: usize,
) -> Vec<(usize, usize)> {
    let n = samples.len();
    if n == 0 {
        return Vec::new();
    }
    // centered moving average of |x|^2 via prefix sums
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for s in samples {
        prefix.push(prefix.last().unwrap() + s.norm_sqr());
    }
    let half = smoothing / 2;
    let smoothed: Vec<f64> = (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + smoothing - half).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect();
    let peak = smoothed.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Vec::new();
    }
    let thr = threshold_rel * peak;
    let mut bursts: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < n {
        if smoothed[i] > thr {
            let start = i;
            while i < n && smoothed[i] > thr {
                i += 1;
            }
            match bursts.last_mut() {
                Some(last) if start - last.1 < min_gap_samples => last.1 = i,
                _ => bursts.push((start, i)),
            }
        } else {
            i += 1;
        }
    }
    bursts
}

/// Reads a capture into frames. Labels come from the sidecar manifest when
/// one exists and the framing is `Preframed`.
pub fn read_capture(spec: &CaptureSpec) -> Result<Vec<IqFrame>> {
    spec.validate()?;
    let bytes = fs::read(&spec.path)?;
    let samples = decode_samples(&bytes, spec.layout).ok_or_else(|| {
        malformed(
            &spec.path,
            format!(
                "{} bytes is not a multiple of {}",
                bytes.len(),
                spec.layout.sample_bytes()
            ),
        )
    })?;
    if let Some((i, _)) = samples
        .iter()
        .enumerate()
        .find(|(_, s)| !(s.re.is_finite() && s.im.is_finite()))
    {
        return Err(malformed(&spec.path, format!("non-finite sample at {i}")));
    }
    let fs_hz = spec.sample_rate_hz;

    match spec.framing {
        Framing::Preframed { frame_len } => {
            let manifest = manifest_path(&spec.path)
                .exists()
                .then(|| read_manifest(&spec.path))
                .transpose()?;
            match manifest {
                Some(m) => m
                    .frames
                    .iter()
                    .map(|e| {
                        let chunk = samples.get(e.offset..e.offset + e.length).ok_or_else(|| {
                            malformed(&spec.path, format!("frame at {} runs past end", e.offset))
                        })?;
                        let meta = FrameMeta {
                            device_id: e.device_id,
                            channel_index: e.channel_index,
                            domain_label: e.domain_label.clone(),
                            pdu_bits: None,
                        };
                        IqFrame::with_meta(chunk.to_vec(), fs_hz, meta)
                    })
                    .collect(),
                None => {
                    if samples.len() < frame_len {
                        return Err(Error::NoFramesDetected);
                    }
                    samples
                        .chunks_exact(frame_len)
                        .map(|c| IqFrame::new(c.to_vec(), fs_hz))
                        .collect()
                }
            }
        }
        Framing::EnergyDetect {
            threshold_rel,
            min_gap_samples,
            frame_len,
            align_offset,
            smoothing,
        } => {
            let frames: Vec<IqFrame> = detect_bursts(&samples, threshold_rel, min_gap_samples, smoothing)
                .into_iter()
                .filter_map(|(start, end)| {
                    let start = start as i64 + align_offset;
                    if start < 0 {
                        return None;
                    }
                    let start = start as usize;
                    let end = match frame_len {
                        Some(len) => start + len,
                        None => end.max(start + 1),
                    };
                    (end <= samples.len()).then(|| IqFrame::new(samples[start..end].to_vec(), fs_hz))
                })
                .collect::<Result<_>>()?;
            if frames.is_empty() {
                return Err(Error::NoFramesDetected);
            }
            Ok(frames)
        }
    }
}

/// Writes frames back-to-back plus a sidecar manifest carrying their labels.
pub fn write_capture(frames: &[IqFrame], path: &Path, layout: SampleLayout) -> Result<CaptureManifest> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidConfig("no frames to write".into()))?;
    let sample_rate_hz = first.sample_rate_hz();
    let mut bytes = Vec::new();
    let mut entries = Vec::with_capacity(frames.len());
    let mut offset = 0;
    for f in frames {
        if f.sample_rate_hz() != sample_rate_hz {
            return Err(Error::InvalidConfig("frames disagree on sample rate".into()));
        }
        bytes.extend(encode_samples(f.samples(), layout));
        entries.push(FrameEntry {
            offset,
            length: f.len(),
            device_id: f.meta.device_id,
            channel_index: f.meta.channel_index,
            domain_label: f.meta.domain_label.clone(),
        });
        offset += f.len();
    }
    let manifest = CaptureManifest {
        sample_rate_hz,
        layout,
        frames: entries,
    };
    fs::write(path, bytes)?;
    fs::write(manifest_path(path), toml::to_string(&manifest)?)?;
    Ok(manifest)
}
