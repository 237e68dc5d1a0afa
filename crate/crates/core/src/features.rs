//! Classifier input representations.
//!
//! * `TPD`: first difference of the unwrapped phase over the transient and
//!   preamble window (1 x (L-1)).
//! * `TP`: raw I and Q over the same window (2 x L).
//! * `MBED`: magnitude, phase and periodogram of the window (3 x L).
//! * `RAWIQ`: I and Q over the whole frame (2 x N).
//!
//! Every extractor normalizes the frame to unit mean power first.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gfsk::GfskConfig;
use crate::iq::{self, FrameMeta, IqFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureMethod {
    #[serde(rename = "TPD")]
    Tpd,
    #[serde(rename = "TP")]
    Tp,
    #[serde(rename = "MBED")]
    Mbed,
    #[serde(rename = "RAWIQ")]
    RawIq,
}

impl FeatureMethod {
    pub const ALL: [FeatureMethod; 4] = [Self::Tpd, Self::Tp, Self::Mbed, Self::RawIq];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tpd => "TPD",
            Self::Tp => "TP",
            Self::Mbed => "MBED",
            Self::RawIq => "RAWIQ",
        }
    }

    pub fn channels(self) -> usize {
        match self {
            Self::Tpd => 1,
            Self::Tp | Self::RawIq => 2,
            Self::Mbed => 3,
        }
    }
}

impl fmt::Display for FeatureMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "TPD" => Ok(Self::Tpd),
            "TP" => Ok(Self::Tp),
            "MBED" => Ok(Self::Mbed),
            "RAWIQ" | "RAW_IQ" | "RAW" => Ok(Self::RawIq),
            other => Err(format!("unknown feature method {other:?}")),
        }
    }
}

/// A `channels x length` real array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    pub method: FeatureMethod,
    pub channels: usize,
    pub length: usize,
    pub data: Vec<f64>,
    pub meta: FrameMeta,
}

impl FeatureTensor {
    fn from_rows(method: FeatureMethod, rows: Vec<Vec<f64>>, meta: &FrameMeta) -> Self {
        let channels = rows.len();
        let length = rows[0].len();
        debug_assert!(rows.iter().all(|r| r.len() == length));
        debug_assert_eq!(channels, method.channels());
        Self {
            method,
            channels,
            length,
            data: rows.concat(),
            meta: meta.labels_only(),
        }
    }

    pub fn row(&self, channel: usize) -> &[f64] {
        &self.data[channel * self.length..(channel + 1) * self.length]
    }

    /// Zero-pads or truncates every channel to `length` samples.
    pub fn fit_length(&self, length: usize) -> FeatureTensor {
        let mut data = Vec::with_capacity(self.channels * length);
        for c in 0..self.channels {
            let row = self.row(c);
            data.extend((0..length).map(|i| row.get(i).copied().unwrap_or(0.0)));
        }
        FeatureTensor {
            length,
            data,
            ..self.clone()
        }
    }
}

/// Number of samples spanning the transient and the preamble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub len: usize,
}

/// `(transient_symbols + preamble bits) * sps`.
pub fn window_length(cfg: &GfskConfig) -> Result<WindowSpec> {
    cfg.validate()?;
    let len = (cfg.transient_symbols + cfg.preamble_bits.len()) * cfg.sps();
    if len < 2 {
        return Err(Error::InvalidConfig(format!(
            "transient and preamble window of {len} samples is too short"
        )));
    }
    Ok(WindowSpec { len })
}

/// Extractor knobs that are not part of the feature definitions themselves.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureOptions {
    /// Unwrap the MBED phase channel (ablation; the reference form is wrapped).
    pub mbed_unwrap_phase: bool,
}

fn normalized_window(frame: &IqFrame, w: WindowSpec) -> Result<IqFrame> {
    if w.len > frame.len() || w.len == 0 {
        return Err(Error::WindowExceedsFrame {
            window: w.len,
            frame: frame.len(),
        });
    }
    iq::normalize_power(frame)?.head(w.len)
}

/// Transient-and-preamble phase derivative, length `L - 1`.
pub fn tpd(frame: &IqFrame, w: WindowSpec) -> Result<FeatureTensor> {
    let x = normalized_window(frame, w)?;
    let sigma = iq::unwrap(&iq::angle(&x)).values;
    let diff = sigma.windows(2).map(|p| p[1] - p[0]).collect();
    Ok(FeatureTensor::from_rows(FeatureMethod::Tpd, vec![diff], &frame.meta))
}

/// Raw I/Q of the transient-and-preamble window.
pub fn tp(frame: &IqFrame, w: WindowSpec) -> Result<FeatureTensor> {
    let x = normalized_window(frame, w)?;
    Ok(FeatureTensor::from_rows(
        FeatureMethod::Tp,
        split_iq(&x),
        &frame.meta,
    ))
}

/// Magnitude, phase and periodogram stacked over the window. The periodogram
/// uses `nfft = next_pow2(L)` and keeps the first `L` bins.
pub fn mbed(frame: &IqFrame, w: WindowSpec, opts: FeatureOptions) -> Result<FeatureTensor> {
    let x = normalized_window(frame, w)?;
    let magnitude = x.samples().iter().map(|s| s.norm()).collect();
    let wrapped = iq::angle(&x);
    let phase = if opts.mbed_unwrap_phase {
        iq::unwrap(&wrapped).values
    } else {
        wrapped.values
    };
    let mut spectrum = iq::psd(&x, w.len.next_power_of_two())?;
    spectrum.truncate(w.len);
    Ok(FeatureTensor::from_rows(
        FeatureMethod::Mbed,
        vec![magnitude, phase, spectrum],
        &frame.meta,
    ))
}

/// I and Q of the entire frame.
pub fn raw_iq(frame: &IqFrame) -> Result<FeatureTensor> {
    let x = iq::normalize_power(frame)?;
    Ok(FeatureTensor::from_rows(
        FeatureMethod::RawIq,
        split_iq(&x),
        &frame.meta,
    ))
}

/// Dispatches to the extractor for `method`.
pub fn extract(
    method: FeatureMethod,
    frame: &IqFrame,
    w: WindowSpec,
    opts: FeatureOptions,
) -> Result<FeatureTensor> {
    match method {
        FeatureMethod::Tpd => tpd(frame, w),
        FeatureMethod::Tp => tp(frame, w),
        FeatureMethod::Mbed => mbed(frame, w, opts),
        FeatureMethod::RawIq => raw_iq(frame),
    }
}

fn split_iq(x: &IqFrame) -> Vec<Vec<f64>> {
    vec![
        x.samples().iter().map(|s| s.re).collect(),
        x.samples().iter().map(|s| s.im).collect(),
    ]
}

pub const CSV_HEADER: [&str; 4] = ["method", "device_id", "channel_index", "domain_label"];

/// Writes tensors as CSV: the fixed header, then one row per tensor channel
/// (`method,device_id,channel_index,domain_label,v0,v1,...`).
pub fn write_csv<W: Write>(out: W, tensors: &[FeatureTensor]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for t in tensors {
        for c in 0..t.channels {
            let mut rec = vec![
                t.method.name().to_string(),
                t.meta.device_id.map(|d| d.to_string()).unwrap_or_default(),
                t.meta.channel_index.map(|d| d.to_string()).unwrap_or_default(),
                t.meta.domain_label.clone(),
            ];
            rec.extend(t.row(c).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::Bits;
    use crate::gfsk::{modulate_frame, ImpairmentSet};
    use num_complex::Complex64;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn default_frame(imp: &ImpairmentSet) -> IqFrame {
        let cfg = GfskConfig::default();
        modulate_frame(&"1001110100101100".parse::<Bits>().unwrap(), &cfg, imp).unwrap()
    }

    fn w54() -> WindowSpec {
        window_length(&GfskConfig::default()).unwrap()
    }

    #[test]
    fn window_lengths() {
        assert_eq!(w54().len, 54);
        let cfg = GfskConfig {
            sample_rate_hz: 2e6,
            ..Default::default()
        };
        assert_eq!(window_length(&cfg).unwrap().len, 18);
        let cfg = GfskConfig {
            preamble_bits: "0101010101010101".parse().unwrap(),
            ..Default::default()
        };
        assert_eq!(window_length(&cfg).unwrap().len, 102);
    }

    #[test]
    fn window_exceeding_frame_is_rejected() {
        let f = IqFrame::new(vec![c(1.0, 0.0); 10], 6e6).unwrap();
        for m in [FeatureMethod::Tpd, FeatureMethod::Tp, FeatureMethod::Mbed] {
            assert!(matches!(
                extract(m, &f, w54(), FeatureOptions::default()),
                Err(Error::WindowExceedsFrame { window: 54, frame: 10 })
            ));
        }
        let z = IqFrame::new(vec![c(0.0, 0.0); 60], 6e6).unwrap();
        assert!(matches!(tpd(&z, w54()), Err(Error::ZeroEnergyFrame)));
        assert!(matches!(raw_iq(&z), Err(Error::ZeroEnergyFrame)));
    }

    #[test]
    fn tpd_of_pure_carrier_is_constant() {
        let fs = 6e6;
        let f_off = 37e3;
        let frame = IqFrame::new(
            (0..80)
                .map(|n| Complex64::from_polar(1.0, 2.0 * PI * f_off * n as f64 / fs))
                .collect(),
            fs,
        )
        .unwrap();
        let t = tpd(&frame, w54()).unwrap();
        assert_eq!((t.channels, t.length), (1, 53));
        for v in &t.data {
            assert!((v - 2.0 * PI * f_off / fs).abs() < 1e-12);
        }
    }

    #[test]
    fn tpd_ignores_static_rotation() {
        let f = default_frame(&ImpairmentSet {
            cfo_hz: 12e3,
            iq_amp: 0.03,
            i_dc: 0.01,
            ..Default::default()
        });
        let a = tpd(&f, w54()).unwrap();
        let b = tpd(&f.scaled(Complex64::from_polar(1.0, 1.234)), w54()).unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tpd_cfo_difference_is_constant() {
        let base = ImpairmentSet::default();
        let a = tpd(&default_frame(&base), w54()).unwrap();
        let b = tpd(
            &default_frame(&ImpairmentSet {
                cfo_hz: 10e3,
                ..base
            }),
            w54(),
        )
        .unwrap();
        for (x, y) in a.data.iter().zip(&b.data) {
            assert!((y - x - 0.010_471_975_511_965_976).abs() < 1e-9);
        }
    }

    #[test]
    fn tp_examples() {
        let f = IqFrame::new(vec![c(1.0, 0.0); 8], 1.0).unwrap();
        let t = tp(&f, WindowSpec { len: 4 }).unwrap();
        assert_eq!(t.row(0), &[1.0; 4]);
        assert_eq!(t.row(1), &[0.0; 4]);

        let f = default_frame(&ImpairmentSet::default());
        let a = tp(&f, w54()).unwrap();
        let b = tp(&f.scaled(c(0.0, 1.0)), w54()).unwrap();
        assert_eq!((a.channels, a.length), (2, 54));
        for n in 0..54 {
            assert!((b.row(0)[n] + a.row(1)[n]).abs() < 1e-15);
            assert!((b.row(1)[n] - a.row(0)[n]).abs() < 1e-15);
        }
    }

    #[test]
    fn mbed_examples() {
        let f = default_frame(&ImpairmentSet::default());
        let m = mbed(&f, w54(), FeatureOptions::default()).unwrap();
        assert_eq!((m.channels, m.length), (3, 54));
        // unit envelope past the ramp (up to the window-vs-frame power ratio)
        let mag = m.row(0);
        let tail_mean = mag[6..].iter().sum::<f64>() / 48.0;
        assert!(mag[6..].iter().all(|v| (v - tail_mean).abs() < 1e-12));
        assert!((tail_mean - 1.0).abs() < 0.05);

        let theta = 2.2;
        let r = mbed(
            &f.scaled(Complex64::from_polar(1.0, theta)),
            w54(),
            FeatureOptions::default(),
        )
        .unwrap();
        for n in 0..54 {
            assert!((r.row(0)[n] - m.row(0)[n]).abs() < 1e-12);
            assert!((r.row(2)[n] - m.row(2)[n]).abs() < 1e-12 * m.row(2)[n].abs().max(1.0));
            let d = (r.row(1)[n] - m.row(1)[n] - theta).rem_euclid(2.0 * PI);
            assert!(d.min(2.0 * PI - d) < 1e-12);
        }
        // the phase channel does move under rotation
        let moved = (0..54).map(|n| (r.row(1)[n] - m.row(1)[n]).abs()).fold(0.0, f64::max);
        assert!(moved > 1.0);

        let u = mbed(&f, w54(), FeatureOptions { mbed_unwrap_phase: true }).unwrap();
        assert!(u.row(1).windows(2).all(|p| (p[1] - p[0]).abs() <= PI));
    }

    #[test]
    fn raw_iq_shapes_and_content() {
        let f = IqFrame::new(vec![c(0.5, -0.5); 54], 6e6).unwrap();
        let r = raw_iq(&f).unwrap();
        assert_eq!((r.channels, r.length), (2, 54));

        let cfg = GfskConfig::default();
        let imp = ImpairmentSet::default();
        let a = modulate_frame(&"11110000".parse().unwrap(), &cfg, &imp).unwrap();
        let b = modulate_frame(&"00001111".parse().unwrap(), &cfg, &imp).unwrap();
        let (ra, rb) = (raw_iq(&a).unwrap(), raw_iq(&b).unwrap());
        let payload = 54 + 12..54 + 36;
        assert!(payload.clone().any(|n| (ra.row(0)[n] - rb.row(0)[n]).abs() > 0.1));

        // 257-byte PDU frame at 2 MS/s: preamble + access address + PDU + CRC
        // = 8 + 32 + 2056 + 24 = 2120 symbols -> 4240 samples per channel.
        let cfg2 = GfskConfig {
            sample_rate_hz: 2e6,
            transient_symbols: 0,
            ..Default::default()
        };
        let body = Bits::new(vec![1; 32 + 257 * 8 + 24]).unwrap();
        let big = modulate_frame(&body, &cfg2, &ImpairmentSet::default()).unwrap();
        assert_eq!(raw_iq(&big).unwrap().length, 4240);
    }

    #[test]
    fn csv_layout() {
        let mut f = default_frame(&ImpairmentSet::default());
        f.meta.device_id = Some(3);
        f.meta.channel_index = Some(1);
        f.meta.domain_label = "wired-ch1".into();
        let t = tp(&f, w54()).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &[t]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "method,device_id,channel_index,domain_label");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("TP,3,1,wired-ch1,"));
        assert_eq!(lines[1].split(',').count(), 4 + 54);
    }

    fn arb_frame() -> impl Strategy<Value = IqFrame> {
        (
            proptest::collection::vec(0u8..=1, 0..24),
            -50e3..50e3f64,
            -0.05..0.05f64,
            -0.05..0.05f64,
            -0.02..0.02f64,
            -0.02..0.02f64,
            -25e3..25e3f64,
            0.45..0.55f64,
            -PI..PI,
        )
            .prop_map(|(b, cfo, ia, ip, idc, qdc, df, bt, th)| {
                let imp = ImpairmentSet {
                    cfo_hz: cfo,
                    iq_amp: ia,
                    iq_phase_rad: ip,
                    i_dc: idc,
                    q_dc: qdc,
                    delta_f_hz: df,
                    bt_actual: bt,
                    theta_po_rad: th,
                };
                modulate_frame(&Bits::new(b).unwrap(), &GfskConfig::default(), &imp).unwrap()
            })
    }

    proptest! {
        #[test]
        fn tpd_phase_and_amplitude_invariance(f in arb_frame(), theta in -PI..PI, alpha in 0.1..10.0f64) {
            let a = tpd(&f, w54()).unwrap();
            let r = tpd(&f.scaled(Complex64::from_polar(1.0, theta)), w54()).unwrap();
            let s = tpd(&f.scaled(c(alpha, 0.0)), w54()).unwrap();
            for ((x, y), z) in a.data.iter().zip(&r.data).zip(&s.data) {
                prop_assert!((x - y).abs() < 1e-12);
                prop_assert!((x - z).abs() < 1e-12);
            }
        }

        #[test]
        fn tpd_cfo_equivariance(f in arb_frame(), df in -100e3..100e3f64) {
            let fs = f.sample_rate_hz();
            let g = f.map_samples(|n, s| s * Complex64::from_polar(1.0, 2.0 * PI * df * n as f64 / fs));
            let a = tpd(&f, w54()).unwrap();
            let b = tpd(&g, w54()).unwrap();
            for (x, y) in a.data.iter().zip(&b.data) {
                prop_assert!((y - x - 2.0 * PI * df / fs).abs() < 1e-9);
            }
        }

        #[test]
        fn extractors_are_total_and_finite(f in arb_frame()) {
            for m in FeatureMethod::ALL {
                let t = extract(m, &f, w54(), FeatureOptions::default()).unwrap();
                prop_assert_eq!(t.channels, m.channels());
                prop_assert!(t.data.iter().all(|v| v.is_finite()));
                let again = extract(m, &f, w54(), FeatureOptions::default()).unwrap();
                prop_assert_eq!(&t.data, &again.data);
            }
        }
    }
}
