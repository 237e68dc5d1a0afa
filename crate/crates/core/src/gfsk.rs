//! BLE 1M-PHY GFSK baseband synthesis with transmitter/receiver impairments.
//!
//! The phase trajectory is `phi[n] = phi[n-1] + 2 pi f_dev g[n] / fs`, where
//! `g` is the sample-and-hold NRZ stream smoothed by a truncated Gaussian
//! filter. An impaired frame is
//!
//! ```text
//! y_I = (1 - eps) cos(phi - p/2) + I_dc
//! y_Q = (1 + eps) sin(phi + p/2) + Q_dc
//! y   = (y_I + j y_Q) * ramp[n] * exp(j (2 pi cfo n / fs + theta))
//! ```
//!
//! with a short power-up ramp ahead of the preamble.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::error::{Error, Result};
use crate::iq::{FrameMeta, IqFrame};

pub const SPEED_OF_LIGHT_M_S: f64 = 299_792_458.0;

/// Modulator parameters. Defaults follow the BLE 1M PHY sampled at 6 MS/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GfskConfig {
    pub sample_rate_hz: f64,
    pub symbol_rate_hz: f64,
    pub bt_nominal: f64,
    /// Peak frequency deviation.
    pub f_m_hz: f64,
    pub filter_span_symbols: usize,
    pub transient_symbols: usize,
    pub preamble_bits: Bits,
}

impl Default for GfskConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 6e6,
            symbol_rate_hz: 1e6,
            bt_nominal: 0.5,
            f_m_hz: 250e3,
            filter_span_symbols: 3,
            transient_symbols: 1,
            preamble_bits: "01010101".parse().expect("static bit string"),
        }
    }
}

impl GfskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.sample_rate_hz > 0.0 && self.symbol_rate_hz > 0.0) {
            return bad("sample and symbol rates must be positive".into());
        }
        let ratio = self.sample_rate_hz / self.symbol_rate_hz;
        if ratio < 1.0 || (ratio - ratio.round()).abs() > 1e-9 {
            return bad(format!(
                "sample rate {} is not an integer multiple of symbol rate {}",
                self.sample_rate_hz, self.symbol_rate_hz
            ));
        }
        if !(self.bt_nominal > 0.0 && self.bt_nominal <= 1.0) {
            return Err(Error::InvalidBt(self.bt_nominal));
        }
        if !(self.f_m_hz > 0.0 && self.f_m_hz.is_finite()) {
            return bad(format!("peak deviation must be positive, got {}", self.f_m_hz));
        }
        if self.filter_span_symbols < 1 {
            return bad("filter span must be at least one symbol".into());
        }
        Ok(())
    }

    /// Samples per symbol.
    pub fn sps(&self) -> usize {
        (self.sample_rate_hz / self.symbol_rate_hz).round() as usize
    }

    pub fn transient_samples(&self) -> usize {
        self.transient_symbols * self.sps()
    }
}

/// Per-device (or per-receiver) hardware signature.
///
/// `theta_po_rad` is the oscillator phase; geometric phase is added by the
/// channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpairmentSet {
    pub cfo_hz: f64,
    pub iq_amp: f64,
    pub iq_phase_rad: f64,
    pub i_dc: f64,
    pub q_dc: f64,
    pub delta_f_hz: f64,
    pub bt_actual: f64,
    pub theta_po_rad: f64,
}

impl Default for ImpairmentSet {
    fn default() -> Self {
        Self {
            cfo_hz: 0.0,
            iq_amp: 0.0,
            iq_phase_rad: 0.0,
            i_dc: 0.0,
            q_dc: 0.0,
            delta_f_hz: 0.0,
            bt_actual: 0.5,
            theta_po_rad: 0.0,
        }
    }
}

impl ImpairmentSet {
    /// No impairment relative to `cfg`.
    pub fn ideal(cfg: &GfskConfig) -> Self {
        Self {
            bt_actual: cfg.bt_nominal,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = ImpairmentField::ALL.map(|f| f.get(self));
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidImpairment("non-finite field".into()));
        }
        if self.iq_amp.abs() >= 1.0 {
            return Err(Error::InvalidImpairment(format!(
                "|iq_amp| must be < 1, got {}",
                self.iq_amp
            )));
        }
        if !(self.bt_actual > 0.0 && self.bt_actual <= 1.0) {
            return Err(Error::InvalidImpairment(format!(
                "bt_actual must lie in (0, 1], got {}",
                self.bt_actual
            )));
        }
        Ok(())
    }
}

/// Names one field of [`ImpairmentSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ImpairmentField {
    CfoHz,
    IqAmp,
    IqPhase,
    IDc,
    QDc,
    DeltaF,
    BtActual,
    ThetaPo,
}

impl ImpairmentField {
    pub const ALL: [ImpairmentField; 8] = [
        Self::CfoHz,
        Self::IqAmp,
        Self::IqPhase,
        Self::IDc,
        Self::QDc,
        Self::DeltaF,
        Self::BtActual,
        Self::ThetaPo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::CfoHz => "cfo_hz",
            Self::IqAmp => "iq_amp",
            Self::IqPhase => "iq_phase_rad",
            Self::IDc => "i_dc",
            Self::QDc => "q_dc",
            Self::DeltaF => "delta_f_hz",
            Self::BtActual => "bt_actual",
            Self::ThetaPo => "theta_po_rad",
        }
    }

    pub fn get(self, imp: &ImpairmentSet) -> f64 {
        match self {
            Self::CfoHz => imp.cfo_hz,
            Self::IqAmp => imp.iq_amp,
            Self::IqPhase => imp.iq_phase_rad,
            Self::IDc => imp.i_dc,
            Self::QDc => imp.q_dc,
            Self::DeltaF => imp.delta_f_hz,
            Self::BtActual => imp.bt_actual,
            Self::ThetaPo => imp.theta_po_rad,
        }
    }

    pub fn set(self, imp: &mut ImpairmentSet, value: f64) {
        let slot = match self {
            Self::CfoHz => &mut imp.cfo_hz,
            Self::IqAmp => &mut imp.iq_amp,
            Self::IqPhase => &mut imp.iq_phase_rad,
            Self::IDc => &mut imp.i_dc,
            Self::QDc => &mut imp.q_dc,
            Self::DeltaF => &mut imp.delta_f_hz,
            Self::BtActual => &mut imp.bt_actual,
            Self::ThetaPo => &mut imp.theta_po_rad,
        };
        *slot = value;
    }
}

impl FromStr for ImpairmentField {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim().to_ascii_lowercase().as_str() {
            "cfo" | "cfo_hz" => Self::CfoHz,
            "iq_amp" => Self::IqAmp,
            "iq_phase" | "iq_phase_rad" => Self::IqPhase,
            "i_dc" => Self::IDc,
            "q_dc" => Self::QDc,
            "delta_f" | "delta_f_hz" | "mfd" => Self::DeltaF,
            "bt" | "bt_actual" => Self::BtActual,
            "theta_po" | "theta_po_rad" | "phase_offset" => Self::ThetaPo,
            _ => return Err(Error::UnknownImpairmentField(s.to_string())),
        })
    }
}

impl TryFrom<String> for ImpairmentField {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ImpairmentField> for String {
    fn from(f: ImpairmentField) -> String {
        f.name().to_string()
    }
}

impl fmt::Display for ImpairmentField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Line-of-sight narrowband channel `alpha * exp(j theta)` plus optional AWGN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelParams {
    pub alpha: f64,
    pub theta_channel_rad: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    pub distance_m: f64,
    pub carrier_hz: f64,
}

impl ChannelParams {
    pub fn identity() -> Self {
        Self {
            alpha: 1.0,
            theta_channel_rad: 0.0,
            snr_db: None,
            distance_m: 0.0,
            carrier_hz: 0.0,
        }
    }

    /// Total phase rotation `theta_channel - 2 pi fc d / c`.
    pub fn phase_rad(&self) -> f64 {
        self.theta_channel_rad - 2.0 * PI * self.carrier_hz * self.distance_m / SPEED_OF_LIGHT_M_S
    }
}

/// Maps 1 to +1 and 0 to -1.
pub fn nrz_encode(bits: &Bits) -> Result<Vec<f64>> {
    if bits.is_empty() {
        return Err(Error::EmptyBits);
    }
    Ok(bits
        .as_slice()
        .iter()
        .map(|&b| if b == 1 { 1.0 } else { -1.0 })
        .collect())
}

/// The `a` parameter of the Gaussian pulse, `sqrt(ln 2 / 2) / BT`, in symbols.
pub fn gaussian_a(bt: f64) -> f64 {
    (std::f64::consts::LN_2 / 2.0).sqrt() / bt
}

/// Gaussian pulse `h(t) = sqrt(pi)/a * exp(-pi^2 t^2 / a^2)` sampled at
/// `sps` samples per symbol over `span` symbols, renormalized to unit sum.
pub fn gaussian_taps(bt: f64, sps: usize, span_symbols: usize) -> Result<Vec<f64>> {
    if !(bt > 0.0 && bt.is_finite()) {
        return Err(Error::InvalidBt(bt));
    }
    if sps == 0 || span_symbols == 0 {
        return Err(Error::InvalidConfig(
            "sps and filter span must be at least 1".into(),
        ));
    }
    let a = gaussian_a(bt);
    let half = (span_symbols * sps / 2) as isize;
    let mut taps: Vec<f64> = (-half..=half)
        .map(|i| {
            let t = i as f64 / sps as f64;
            PI.sqrt() / a * (-(PI * PI) * t * t / (a * a)).exp()
        })
        .collect();
    // Mirror the right half so symmetry holds bit-for-bit.
    let n = taps.len();
    for i in 0..n / 2 {
        taps[n - 1 - i] = taps[i];
    }
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    Ok(taps)
}

/// Gaussian-smoothed NRZ stream. The input is held for `sps` samples per
/// symbol and edge-replicated by half a filter on each side, so the first
/// and last symbols see their own value outside the frame.
fn shaped_nrz(levels: &[f64], taps: &[f64], sps: usize) -> Vec<f64> {
    let half = taps.len() / 2;
    let held = levels.iter().flat_map(|&v| std::iter::repeat_n(v, sps));
    let first = levels[0];
    let last = levels[levels.len() - 1];
    let padded: Vec<f64> = std::iter::repeat_n(first, half)
        .chain(held)
        .chain(std::iter::repeat_n(last, half))
        .collect();
    padded
        .windows(taps.len())
        .map(|w| w.iter().zip(taps).map(|(x, h)| x * h).sum())
        .collect()
}

/// Phase trajectory for `bits`, extended backward by `lead_symbols` copies of
/// the first bit. The phase is zero at the first sample of `bits`.
fn phase_trajectory(
    bits: &Bits,
    cfg: &GfskConfig,
    bt: f64,
    deviation_hz: f64,
    lead_symbols: usize,
) -> Result<Vec<f64>> {
    let sps = cfg.sps();
    let nrz = nrz_encode(bits)?;
    let mut levels = vec![nrz[0]; lead_symbols];
    levels.extend_from_slice(&nrz);
    let taps = gaussian_taps(bt, sps, cfg.filter_span_symbols)?;
    let g = shaped_nrz(&levels, &taps, sps);
    let step = 2.0 * PI * deviation_hz / cfg.sample_rate_hz;

    let anchor = lead_symbols * sps;
    let mut phi = vec![0.0; g.len()];
    for n in anchor + 1..g.len() {
        phi[n] = phi[n - 1] + step * g[n];
    }
    for n in (0..anchor).rev() {
        phi[n] = phi[n + 1] - step * g[n + 1];
    }
    Ok(phi)
}

/// Ideal unit-envelope GFSK baseband for `bits`.
pub fn modulate(bits: &Bits, cfg: &GfskConfig) -> Result<IqFrame> {
    cfg.validate()?;
    let phi = phase_trajectory(bits, cfg, cfg.bt_nominal, cfg.f_m_hz, 0)?;
    let samples = phi
        .iter()
        .map(|&p| Complex64::new(p.cos(), p.sin()))
        .collect();
    IqFrame::with_meta(
        samples,
        cfg.sample_rate_hz,
        FrameMeta {
            pdu_bits: None,
            ..Default::default()
        },
    )
}

/// Preamble followed by the payload.
pub fn build_frame_bits(cfg: &GfskConfig, pdu_bits: &Bits) -> Bits {
    cfg.preamble_bits.concat(pdu_bits)
}

/// Raised-cosine power-up ramp. The sample points sit strictly inside
/// (0, 1) so the first transient sample is never exactly zero.
pub fn transient_ramp(len: usize) -> Vec<f64> {
    (0..len)
        .map(|k| 0.5 * (1.0 - (PI * (k + 1) as f64 / (len + 1) as f64).cos()))
        .collect()
}

/// Impaired frame: transient ramp, preamble, then `pdu_bits`.
pub fn modulate_frame(pdu_bits: &Bits, cfg: &GfskConfig, imp: &ImpairmentSet) -> Result<IqFrame> {
    cfg.validate()?;
    imp.validate()?;
    let bits = build_frame_bits(cfg, pdu_bits);
    let phi = phase_trajectory(
        &bits,
        cfg,
        imp.bt_actual,
        cfg.f_m_hz + imp.delta_f_hz,
        cfg.transient_symbols,
    )?;
    let ramp = transient_ramp(cfg.transient_samples());
    let half_phase = imp.iq_phase_rad / 2.0;
    let cfo_step = 2.0 * PI * imp.cfo_hz / cfg.sample_rate_hz;

    let samples = phi
        .iter()
        .enumerate()
        .map(|(n, &p)| {
            let i = (1.0 - imp.iq_amp) * (p - half_phase).cos() + imp.i_dc;
            let q = (1.0 + imp.iq_amp) * (p + half_phase).sin() + imp.q_dc;
            let gain = ramp.get(n).copied().unwrap_or(1.0);
            let rot = Complex64::from_polar(1.0, cfo_step * n as f64 + imp.theta_po_rad);
            Complex64::new(i * gain, q * gain) * rot
        })
        .collect();
    IqFrame::with_meta(
        samples,
        cfg.sample_rate_hz,
        FrameMeta {
            pdu_bits: Some(pdu_bits.clone()),
            ..Default::default()
        },
    )
}

/// Scales and rotates by `alpha * exp(j theta)` and, when `snr_db` is set,
/// adds circular complex Gaussian noise seeded by `seed`.
pub fn apply_channel(frame: &IqFrame, ch: &ChannelParams, seed: u64) -> Result<IqFrame> {
    if !(ch.alpha > 0.0 && ch.alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "path loss alpha must be positive, got {}",
            ch.alpha
        )));
    }
    let gain = Complex64::from_polar(ch.alpha, ch.phase_rad());
    let scaled = frame.scaled(gain);
    let Some(snr_db) = ch.snr_db else {
        return Ok(scaled);
    };
    let noise_power = scaled.mean_power() / 10f64.powf(snr_db / 10.0);
    let sigma = (noise_power / 2.0).sqrt();
    if sigma == 0.0 {
        return Ok(scaled);
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::InvalidConfig(format!("noise level: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noisy: Vec<Complex64> = scaled
        .samples()
        .iter()
        .map(|&s| s + Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect();
    IqFrame::with_meta(noisy, scaled.sample_rate_hz(), scaled.meta)
}

/// One frame per value of `field`, all other impairments held at `base`.
pub fn impairment_sweep(
    field: ImpairmentField,
    values: &[f64],
    cfg: &GfskConfig,
    base: &ImpairmentSet,
    pdu_bits: &Bits,
) -> Result<Vec<(f64, IqFrame)>> {
    values
        .iter()
        .map(|&v| {
            let mut imp = *base;
            field.set(&mut imp, v);
            modulate_frame(pdu_bits, cfg, &imp).map(|f| (v, f))
        })
        .collect()
}
