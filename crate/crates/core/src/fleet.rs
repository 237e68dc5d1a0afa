//! Synthetic device populations and the domain scenarios that transform
//! their emissions (channel hop, environment, receiver).

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::Bits;
use crate::error::{Error, Result};
use crate::gfsk::{self, ChannelParams, GfskConfig, ImpairmentSet};
use crate::ingest;
use crate::iq::{IqFrame, MAX_CHANNEL_INDEX};
use crate::seed::derive_seed;

/// Center frequency of BLE data channel `index` (0..=36).
pub fn channel_center_hz(index: u32) -> Result<f64> {
    let mhz = match index {
        0..=10 => 2404 + 2 * index,
        11..=MAX_CHANNEL_INDEX => 2428 + 2 * (index - 11),
        _ => return Err(Error::ChannelOutOfRange(index)),
    };
    Ok(f64::from(mhz) * 1e6)
}

/// Uniform sampling bounds `[min, max]` for each impairment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImpairmentRanges {
    pub cfo_hz: (f64, f64),
    pub iq_amp: (f64, f64),
    pub iq_phase_rad: (f64, f64),
    pub i_dc: (f64, f64),
    pub q_dc: (f64, f64),
    pub delta_f_hz: (f64, f64),
    pub bt_actual: (f64, f64),
    pub theta_po_rad: (f64, f64),
}

impl Default for ImpairmentRanges {
    fn default() -> Self {
        Self {
            cfo_hz: (-50e3, 50e3),
            iq_amp: (-0.05, 0.05),
            iq_phase_rad: (-0.05, 0.05),
            i_dc: (-0.02, 0.02),
            q_dc: (-0.02, 0.02),
            delta_f_hz: (-25e3, 25e3),
            bt_actual: (0.45, 0.55),
            theta_po_rad: (-PI, PI),
        }
    }
}

impl ImpairmentRanges {
    /// Every range collapsed onto the value in `imp`.
    pub fn point(imp: &ImpairmentSet) -> Self {
        let p = |v: f64| (v, v);
        Self {
            cfo_hz: p(imp.cfo_hz),
            iq_amp: p(imp.iq_amp),
            iq_phase_rad: p(imp.iq_phase_rad),
            i_dc: p(imp.i_dc),
            q_dc: p(imp.q_dc),
            delta_f_hz: p(imp.delta_f_hz),
            bt_actual: p(imp.bt_actual),
            theta_po_rad: p(imp.theta_po_rad),
        }
    }

    fn fields(&self) -> [(&'static str, (f64, f64)); 8] {
        [
            ("cfo_hz", self.cfo_hz),
            ("iq_amp", self.iq_amp),
            ("iq_phase_rad", self.iq_phase_rad),
            ("i_dc", self.i_dc),
            ("q_dc", self.q_dc),
            ("delta_f_hz", self.delta_f_hz),
            ("bt_actual", self.bt_actual),
            ("theta_po_rad", self.theta_po_rad),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in self.fields() {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::InvalidRanges(format!("{name}: [{lo}, {hi}]")));
            }
        }
        if self.iq_amp.0 <= -1.0 || self.iq_amp.1 >= 1.0 {
            return Err(Error::InvalidRanges("iq_amp must stay inside (-1, 1)".into()));
        }
        if self.bt_actual.0 <= 0.0 || self.bt_actual.1 > 1.0 {
            return Err(Error::InvalidRanges("bt_actual must stay inside (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FleetSpec {
    pub n_devices: usize,
    pub seed: u64,
    pub ranges: ImpairmentRanges,
}

impl Default for FleetSpec {
    fn default() -> Self {
        Self {
            n_devices: 10,
            seed: 2025,
            ranges: ImpairmentRanges::default(),
        }
    }
}

/// A synthetic transmitter. `imp.theta_po_rad` is its oscillator phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviceSignature {
    pub device_id: u32,
    pub imp: ImpairmentSet,
}

/// Draws `n_devices` signatures. Device `k` depends only on `(seed, k)`, so
/// a smaller fleet is always a prefix of a larger one.
pub fn sample_fleet(spec: &FleetSpec) -> Result<Vec<DeviceSignature>> {
    if spec.n_devices < 2 {
        return Err(Error::InvalidRanges(format!(
            "a fleet needs at least 2 devices, got {}",
            spec.n_devices
        )));
    }
    spec.ranges.validate()?;
    (0..spec.n_devices as u32)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, &[0xF1EE7, u64::from(id)]));
            let mut draw = |(lo, hi): (f64, f64)| {
                if lo == hi {
                    lo
                } else {
                    rng.random_range(lo..=hi)
                }
            };
            let r = &spec.ranges;
            let imp = ImpairmentSet {
                cfo_hz: draw(r.cfo_hz),
                iq_amp: draw(r.iq_amp),
                iq_phase_rad: draw(r.iq_phase_rad),
                i_dc: draw(r.i_dc),
                q_dc: draw(r.q_dc),
                delta_f_hz: draw(r.delta_f_hz),
                bt_actual: draw(r.bt_actual),
                theta_po_rad: draw(r.theta_po_rad),
            };
            imp.validate()?;
            Ok(DeviceSignature { device_id: id, imp })
        })
        .collect()
}

/// How each frame's payload is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PduPolicy {
    Fixed { bits: Bits },
    Random { min_bytes: usize, max_bytes: usize },
}

impl PduPolicy {
    fn draw(&self, rng: &mut ChaCha8Rng) -> Bits {
        match self {
            PduPolicy::Fixed { bits } => bits.clone(),
            PduPolicy::Random {
                min_bytes,
                max_bytes,
            } => {
                let n = rng.random_range(*min_bytes..=*max_bytes);
                let bytes: Vec<u8> = (0..n).map(|_| rng.random()).collect();
                Bits::from_bytes_lsb_first(&bytes)
            }
        }
    }
}

/// Channel, environment and receiver context for a capture campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainScenario {
    pub name: String,
    pub channel_index: u32,
    /// Tx-Rx path length in metres (electrical length for cabled setups).
    pub distance_m: f64,
    #[serde(default = "unit_alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    /// Per-frame SNR jitter, uniform in `[-j, +j]` dB.
    #[serde(default)]
    pub snr_jitter_db: f64,
    /// Receiver-side terms; only CFO, IQ, DC and phase are used.
    #[serde(default = "zero_receiver")]
    pub receiver_imp: ImpairmentSet,
    pub pdu_policy: PduPolicy,
}

fn unit_alpha() -> f64 {
    1.0
}

fn zero_receiver() -> ImpairmentSet {
    ImpairmentSet::default()
}

impl DomainScenario {
    pub fn validate(&self) -> Result<()> {
        if self.channel_index > MAX_CHANNEL_INDEX {
            return Err(Error::ChannelOutOfRange(self.channel_index));
        }
        if !(self.distance_m >= 0.0 && self.alpha > 0.0 && self.snr_jitter_db >= 0.0) {
            return Err(Error::InvalidScenario(format!(
                "{}: distance, alpha or SNR jitter out of range",
                self.name
            )));
        }
        if let PduPolicy::Random {
            min_bytes,
            max_bytes,
        } = self.pdu_policy
        {
            if min_bytes > max_bytes {
                return Err(Error::InvalidScenario(format!(
                    "{}: pdu byte range [{min_bytes}, {max_bytes}]",
                    self.name
                )));
            }
        }
        Ok(())
    }

    pub fn carrier_hz(&self) -> Result<f64> {
        channel_center_hz(self.channel_index)
    }

    /// Channel applied to every frame, before per-frame SNR jitter.
    pub fn channel_params(&self) -> Result<ChannelParams> {
        Ok(ChannelParams {
            alpha: self.alpha,
            theta_channel_rad: 0.0,
            snr_db: self.snr_db,
            distance_m: self.distance_m,
            carrier_hz: self.carrier_hz()?,
        })
    }

    pub fn without_noise(&self) -> Self {
        Self {
            snr_db: None,
            snr_jitter_db: 0.0,
            ..self.clone()
        }
    }
}

/// Device impairments with receiver terms added on top. BT and peak
/// deviation belong to the transmitter and are left alone.
pub fn combine(device: &ImpairmentSet, receiver: &ImpairmentSet) -> ImpairmentSet {
    ImpairmentSet {
        cfo_hz: device.cfo_hz + receiver.cfo_hz,
        iq_amp: device.iq_amp + receiver.iq_amp,
        iq_phase_rad: device.iq_phase_rad + receiver.iq_phase_rad,
        i_dc: device.i_dc + receiver.i_dc,
        q_dc: device.q_dc + receiver.q_dc,
        theta_po_rad: device.theta_po_rad + receiver.theta_po_rad,
        ..*device
    }
}

/// Labelled items with the scenario that produced them.
#[derive(Debug, Clone)]
pub struct LabeledDataset<T> {
    pub items: Vec<(T, u32)>,
    pub scenario: DomainScenario,
    /// Seed used for each item, parallel to `items`.
    pub frame_seeds: Vec<u64>,
    pub seed: u64,
}

impl<T> LabeledDataset<T> {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.items.iter().map(|(_, l)| *l).collect()
    }

    pub fn try_map<U: Send, F>(&self, f: F) -> Result<LabeledDataset<U>>
    where
        T: Sync,
        F: Fn(&T) -> Result<U> + Sync,
    {
        let items = self
            .items
            .par_iter()
            .map(|(x, l)| f(x).map(|u| (u, *l)))
            .collect::<Result<Vec<_>>>()?;
        Ok(LabeledDataset {
            items,
            scenario: self.scenario.clone(),
            frame_seeds: self.frame_seeds.clone(),
            seed: self.seed,
        })
    }
}

/// Synthesizes `frames_per_device` frames per device under `scenario`.
///
/// Frame `(device, k)` is seeded by `derive_seed(seed, [device, k])`;
/// output is ordered by `(device_id, k)`.
pub fn generate_dataset(
    fleet: &[DeviceSignature],
    scenario: &DomainScenario,
    frames_per_device: usize,
    cfg: &GfskConfig,
    seed: u64,
) -> Result<LabeledDataset<IqFrame>> {
    if frames_per_device == 0 || fleet.is_empty() {
        return Err(Error::InvalidScenario(
            "dataset needs at least one device and one frame per device".into(),
        ));
    }
    scenario.validate()?;
    cfg.validate()?;
    let base_channel = scenario.channel_params()?;
    let jobs: Vec<(DeviceSignature, usize)> = fleet
        .iter()
        .flat_map(|d| (0..frames_per_device).map(move |k| (*d, k)))
        .collect();

    let generated = jobs
        .par_iter()
        .map(|&(device, k)| {
            let frame_seed = derive_seed(seed, &[u64::from(device.device_id), k as u64]);
            let mut rng = ChaCha8Rng::seed_from_u64(frame_seed);
            let pdu = scenario.pdu_policy.draw(&mut rng);
            let jitter = if scenario.snr_jitter_db > 0.0 {
                rng.random_range(-scenario.snr_jitter_db..=scenario.snr_jitter_db)
            } else {
                0.0
            };
            let imp = combine(&device.imp, &scenario.receiver_imp);
            let mut frame = gfsk::modulate_frame(&pdu, cfg, &imp)?;
            frame.meta.device_id = Some(device.device_id);
            frame.meta.channel_index = Some(scenario.channel_index);
            frame.meta.domain_label = scenario.name.clone();
            let ch = ChannelParams {
                snr_db: base_channel.snr_db.map(|s| s + jitter),
                ..base_channel
            };
            let frame = gfsk::apply_channel(&frame, &ch, derive_seed(frame_seed, &[0x401_5E]))?;
            Ok(((frame, device.device_id), frame_seed))
        })
        .collect::<Result<Vec<_>>>()?;

    let (items, frame_seeds) = generated.into_iter().unzip();
    Ok(LabeledDataset {
        items,
        scenario: scenario.clone(),
        frame_seeds,
        seed,
    })
}

/// Per-frame record of a dataset written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFrame {
    /// Offset in samples inside the capture file.
    pub offset: usize,
    pub length: usize,
    pub device_id: u32,
    /// Hex, since TOML integers are signed 64-bit.
    pub frame_seed: String,
}

/// Everything needed to regenerate a dataset, plus where its frames sit in
/// the capture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub fleet: FleetSpec,
    pub scenario: DomainScenario,
    pub gfsk: GfskConfig,
    pub seed: u64,
    pub frames_per_device: usize,
    pub capture: PathBuf,
    #[serde(rename = "frame")]
    pub frames: Vec<DatasetFrame>,
}

/// Writes the frames as an F64 capture at `capture` and the dataset
/// manifest at `manifest`.
pub fn write_dataset(
    ds: &LabeledDataset<IqFrame>,
    fleet: &FleetSpec,
    cfg: &GfskConfig,
    capture: &Path,
    manifest: &Path,
) -> Result<DatasetManifest> {
    let frames: Vec<IqFrame> = ds.items.iter().map(|(f, _)| f.clone()).collect();
    let cap = ingest::write_capture(&frames, capture, ingest::SampleLayout::InterleavedF64)?;
    let per_device = ds.items.iter().filter(|(_, l)| *l == ds.items[0].1).count();
    let m = DatasetManifest {
        fleet: fleet.clone(),
        scenario: ds.scenario.clone(),
        gfsk: cfg.clone(),
        seed: ds.seed,
        frames_per_device: per_device,
        capture: capture.to_path_buf(),
        frames: cap
            .frames
            .iter()
            .zip(&ds.items)
            .zip(&ds.frame_seeds)
            .map(|((e, (_, l)), s)| DatasetFrame {
                offset: e.offset,
                length: e.length,
                device_id: *l,
                frame_seed: format!("{s:016x}"),
            })
            .collect(),
    };
    std::fs::write(manifest, toml::to_string(&m)?)?;
    Ok(m)
}

/// Electrical length assumed for the cabled (wired) presets.
pub const WIRED_CABLE_LENGTH_M: f64 = 2.0;
pub const WIRED_SNR_DB: f64 = 40.0;
/// SNR at 1 m for the outdoor presets; falls off as 20 log10(d).
pub const WIRELESS_SNR_AT_1M_DB: f64 = 30.0;

/// Fixed payload for a hard-coded channel: a shared first header byte, a
/// channel-dependent second header byte, a shared 8-byte body and a 24-bit
/// trailer that stands in for the channel-dependent CRC.
pub fn channel_pdu(channel_index: u32) -> Bits {
    const BODY: [u8; 8] = [0x1e, 0xff, 0x06, 0x00, 0x01, 0x09, 0x20, 0x02];
    let mut bytes = vec![0x02, channel_index as u8];
    bytes.extend_from_slice(&BODY);
    let crc = derive_seed(0xC7C, &[u64::from(channel_index)]).to_le_bytes();
    bytes.extend_from_slice(&crc[..3]);
    Bits::from_bytes_lsb_first(&bytes)
}

/// Receiver-side terms of the second receiver preset.
pub fn rx2_receiver_imp() -> ImpairmentSet {
    ImpairmentSet {
        cfo_hz: 1e3,
        iq_amp: 0.02,
        iq_phase_rad: 0.02,
        i_dc: 0.01,
        q_dc: -0.01,
        delta_f_hz: 0.0,
        bt_actual: 0.5,
        theta_po_rad: 1.0,
    }
}

fn wired(channel_index: u32) -> DomainScenario {
    DomainScenario {
        name: format!("wired-ch{channel_index}"),
        channel_index,
        distance_m: WIRED_CABLE_LENGTH_M,
        alpha: 1.0,
        snr_db: Some(WIRED_SNR_DB),
        snr_jitter_db: 0.0,
        receiver_imp: ImpairmentSet::default(),
        pdu_policy: PduPolicy::Fixed {
            bits: channel_pdu(channel_index),
        },
    }
}

fn outdoor(name: &str, distance_m: f64) -> DomainScenario {
    DomainScenario {
        name: name.to_string(),
        channel_index: 1,
        distance_m,
        alpha: 1.0 / distance_m,
        snr_db: Some(WIRELESS_SNR_AT_1M_DB - 20.0 * distance_m.log10()),
        snr_jitter_db: 2.0,
        receiver_imp: ImpairmentSet::default(),
        pdu_policy: PduPolicy::Fixed {
            bits: channel_pdu(1),
        },
    }
}

/// The channel, environment and receiver presets.
pub fn make_paper_scenarios() -> Vec<DomainScenario> {
    let mut v: Vec<DomainScenario> = [1, 2, 14, 32].into_iter().map(wired).collect();
    for (i, d) in [1.0, 1.5, 2.0, 3.0].into_iter().enumerate() {
        v.push(outdoor(&format!("loc{}", i + 1), d));
    }
    v.push(DomainScenario {
        name: "rx2".into(),
        receiver_imp: rx2_receiver_imp(),
        ..wired(1)
    });
    v
}

/// Looks up a preset by (case-insensitive) name.
pub fn scenario_by_name(name: &str) -> Result<DomainScenario> {
    let key = name.trim().to_ascii_lowercase();
    let key = if key == "rx1" { "wired-ch1".to_string() } else { key };
    make_paper_scenarios()
        .into_iter()
        .find(|s| s.name == key)
        .ok_or_else(|| Error::InvalidScenario(format!("unknown scenario {name:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{tpd, window_length};

    #[test]
    fn channel_map() {
        let ghz = |i| channel_center_hz(i).unwrap() / 1e9;
        assert_eq!(ghz(1), 2.406);
        assert_eq!(ghz(2), 2.408);
        assert_eq!(ghz(14), 2.434);
        assert_eq!(ghz(32), 2.470);
        assert_eq!(ghz(0), 2.404);
        assert_eq!(ghz(11), 2.428);
        assert_eq!(ghz(10), 2.424);
        assert_eq!(ghz(36), 2.478);
        assert!(matches!(channel_center_hz(37), Err(Error::ChannelOutOfRange(37))));
    }

    #[test]
    fn channel_map_matches_2mhz_grid_skipping_advertising_slot() {
        // Oracle: walk the 2 MHz grid from 2402 MHz, skipping the
        // advertising-channel slots at 2402, 2426 and 2480 MHz.
        let grid: Vec<u32> = (0..40)
            .map(|k| 2402 + 2 * k)
            .filter(|f| ![2402, 2426, 2480].contains(f))
            .collect();
        for (i, f) in grid.iter().enumerate() {
            assert_eq!(channel_center_hz(i as u32).unwrap(), f64::from(*f) * 1e6);
        }
    }

    #[test]
    fn fleet_determinism_and_prefix() {
        let spec = FleetSpec {
            n_devices: 2,
            seed: 5,
            ..Default::default()
        };
        assert_eq!(sample_fleet(&spec).unwrap(), sample_fleet(&spec).unwrap());
        let big = sample_fleet(&FleetSpec {
            n_devices: 6,
            ..spec.clone()
        })
        .unwrap();
        assert_eq!(&big[..2], &sample_fleet(&spec).unwrap()[..]);
        assert!(sample_fleet(&FleetSpec {
            n_devices: 1,
            ..spec
        })
        .is_err());
    }

    #[test]
    fn collapsed_ranges_give_identical_devices() {
        let imp = ImpairmentSet {
            cfo_hz: 3e3,
            ..Default::default()
        };
        let spec = FleetSpec {
            n_devices: 4,
            seed: 1,
            ranges: ImpairmentRanges::point(&imp),
        };
        let fleet = sample_fleet(&spec).unwrap();
        for (i, d) in fleet.iter().enumerate() {
            assert_eq!(d.device_id, i as u32);
            assert_eq!(d.imp, imp);
        }
    }

    #[test]
    fn default_fleet_signatures_are_distinct() {
        let fleet = sample_fleet(&FleetSpec {
            n_devices: 31,
            ..Default::default()
        })
        .unwrap();
        for a in &fleet {
            assert!(a.imp.validate().is_ok());
            for b in &fleet {
                if a.device_id != b.device_id {
                    assert!((a.imp.cfo_hz - b.imp.cfo_hz).abs() > 0.0);
                    assert_ne!(a.imp, b.imp);
                }
            }
        }
    }

    #[test]
    fn invalid_ranges_rejected() {
        let mut r = ImpairmentRanges::default();
        r.cfo_hz = (1.0, -1.0);
        let spec = FleetSpec {
            ranges: r,
            ..Default::default()
        };
        assert!(matches!(sample_fleet(&spec), Err(Error::InvalidRanges(_))));
        let mut r = ImpairmentRanges::default();
        r.bt_actual = (0.0, 0.5);
        assert!(r.validate().is_err());
    }

    #[test]
    fn presets() {
        let s = scenario_by_name("loc3").unwrap();
        assert_eq!(s.distance_m, 2.0);
        assert_eq!(s.channel_index, 1);
        let ch32 = scenario_by_name("wired-ch32").unwrap();
        assert_eq!(ch32.carrier_hz().unwrap(), 2.470e9);
        let rx2 = scenario_by_name("rx2").unwrap();
        let ch1 = scenario_by_name("wired-ch1").unwrap();
        assert_eq!(rx2.channel_index, ch1.channel_index);
        assert_eq!(rx2.distance_m, ch1.distance_m);
        assert_eq!(rx2.snr_db, ch1.snr_db);
        assert_eq!(rx2.pdu_policy, ch1.pdu_policy);
        assert_ne!(rx2.receiver_imp, ImpairmentSet::default());
        let names: Vec<String> = make_paper_scenarios().into_iter().map(|s| s.name).collect();
        assert_eq!(
            names,
            [
                "wired-ch1", "wired-ch2", "wired-ch14", "wired-ch32", "loc1", "loc2", "loc3",
                "loc4", "rx2"
            ]
        );
        // per-channel payloads share their first byte but not their content
        let (a, b) = (channel_pdu(1), channel_pdu(32));
        assert_eq!(a.len(), b.len());
        assert_eq!(a.as_slice()[..8], b.as_slice()[..8]);
        assert_ne!(a, b);
        assert!(scenario_by_name("loc9").is_err());
    }

    fn noiseless(name: &str) -> DomainScenario {
        scenario_by_name(name).unwrap().without_noise()
    }

    #[test]
    fn dataset_labels_order_and_determinism() {
        let fleet = sample_fleet(&FleetSpec {
            n_devices: 3,
            ..Default::default()
        })
        .unwrap();
        let cfg = GfskConfig::default();
        let sc = scenario_by_name("loc2").unwrap();
        let a = generate_dataset(&fleet, &sc, 4, &cfg, 9).unwrap();
        let b = generate_dataset(&fleet, &sc, 4, &cfg, 9).unwrap();
        assert_eq!(a.len(), 12);
        assert_eq!(a.labels(), vec![0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2]);
        for ((fa, la), (fb, _)) in a.items.iter().zip(&b.items) {
            assert_eq!(fa.samples(), fb.samples());
            assert_eq!(fa.meta.device_id, Some(*la));
            assert_eq!(fa.meta.domain_label, "loc2");
        }
        assert_eq!(a.frame_seeds, b.frame_seeds);
        assert!(generate_dataset(&fleet, &sc, 0, &cfg, 9).is_err());
    }

    #[test]
    fn label_integrity() {
        // A fleet whose devices differ only in CFO: each frame's TPD mean
        // must reveal the CFO of the device it is labelled with.
        let mut fleet = sample_fleet(&FleetSpec {
            n_devices: 4,
            seed: 3,
            ranges: ImpairmentRanges::point(&ImpairmentSet::default()),
        })
        .unwrap();
        for (i, d) in fleet.iter_mut().enumerate() {
            d.imp.cfo_hz = 20e3 * i as f64;
        }
        let cfg = GfskConfig::default();
        let zero = ImpairmentSet::default();
        let ds = generate_dataset(&fleet, &noiseless("wired-ch1"), 2, &cfg, 1).unwrap();
        let w = window_length(&cfg).unwrap();
        let reference = tpd(&gfsk::modulate_frame(&channel_pdu(1), &cfg, &zero).unwrap(), w).unwrap();
        for (frame, label) in &ds.items {
            let t = tpd(frame, w).unwrap();
            let shift: f64 = t.data.iter().zip(&reference.data).map(|(a, b)| a - b).sum::<f64>()
                / t.length as f64;
            let cfo = shift * cfg.sample_rate_hz / (2.0 * PI);
            assert!((cfo - fleet[*label as usize].imp.cfo_hz).abs() < 1e-3);
        }
    }

    #[test]
    fn fixed_pdu_noiseless_frames_differ_only_by_device() {
        let fleet = sample_fleet(&FleetSpec {
            n_devices: 3,
            ..Default::default()
        })
        .unwrap();
        let cfg = GfskConfig::default();
        let mut sc = noiseless("wired-ch1");
        sc.distance_m = 0.0;
        let ds = generate_dataset(&fleet, &sc, 2, &cfg, 4).unwrap();
        for (frame, label) in &ds.items {
            let direct = gfsk::modulate_frame(&channel_pdu(1), &cfg, &fleet[*label as usize].imp).unwrap();
            assert_eq!(frame.samples(), direct.samples());
        }
    }

    #[test]
    fn channel_hop_leaves_tpd_unchanged() {
        let fleet = sample_fleet(&FleetSpec {
            n_devices: 4,
            ..Default::default()
        })
        .unwrap();
        let cfg = GfskConfig::default();
        let w = window_length(&cfg).unwrap();
        let a = generate_dataset(&fleet, &noiseless("wired-ch1"), 2, &cfg, 1).unwrap();
        let b = generate_dataset(&fleet, &noiseless("wired-ch32"), 2, &cfg, 1).unwrap();
        for ((fa, _), (fb, _)) in a.items.iter().zip(&b.items) {
            let (ta, tb) = (tpd(fa, w).unwrap(), tpd(fb, w).unwrap());
            let mad = ta.data.iter().zip(&tb.data).map(|(x, y)| (x - y).abs()).sum::<f64>()
                / ta.length as f64;
            assert!(mad < 1e-6, "mean abs diff {mad}");
        }
    }

    #[test]
    fn random_pdus_change_payload_but_not_window_head() {
        let fleet = sample_fleet(&FleetSpec {
            n_devices: 2,
            ..Default::default()
        })
        .unwrap();
        let cfg = GfskConfig::default();
        let w = window_length(&cfg).unwrap();
        let mut sc = noiseless("wired-ch1");
        sc.pdu_policy = PduPolicy::Random {
            min_bytes: 4,
            max_bytes: 4,
        };
        let ds = generate_dataset(&fleet, &sc, 6, &cfg, 2).unwrap();
        let frames: Vec<&IqFrame> = ds.items.iter().filter(|(_, l)| *l == 0).map(|(f, _)| f).collect();
        let first = tpd(frames[0], w).unwrap();
        // The Gaussian filter reaches half a span past the preamble; the
        // samples before that are independent of the payload.
        let settled = w.len - 1 - cfg.filter_span_symbols * cfg.sps() / 2;
        let mut payload_differs = false;
        for f in &frames[1..] {
            let t = tpd(f, w).unwrap();
            for n in 0..settled {
                assert!((t.data[n] - first.data[n]).abs() < 1e-12);
            }
            payload_differs |= f.samples()[w.len..] != frames[0].samples()[w.len..];
        }
        assert!(payload_differs);
    }

    #[test]
    fn dataset_manifest_round_trip() {
        let spec = FleetSpec {
            n_devices: 2,
            ..Default::default()
        };
        let fleet = sample_fleet(&spec).unwrap();
        let cfg = GfskConfig::default();
        let ds = generate_dataset(&fleet, &scenario_by_name("wired-ch14").unwrap(), 3, &cfg, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (cap, man) = (dir.path().join("d.iq"), dir.path().join("d.toml"));
        let m = write_dataset(&ds, &spec, &cfg, &cap, &man).unwrap();
        assert_eq!(m.frames.len(), 6);
        assert_eq!(m.frames_per_device, 3);
        let text = std::fs::read_to_string(&man).unwrap();
        assert_eq!(toml::from_str::<DatasetManifest>(&text).unwrap(), m);
        let back = ingest::read_capture(&ingest::CaptureSpec {
            path: cap,
            sample_rate_hz: cfg.sample_rate_hz,
            layout: ingest::SampleLayout::InterleavedF64,
            framing: ingest::Framing::Preframed { frame_len: 1 },
        })
        .unwrap();
        for (f, (orig, label)) in back.iter().zip(&ds.items) {
            assert_eq!(f.samples(), orig.samples());
            assert_eq!(f.meta.device_id, Some(*label));
        }
    }

    #[test]
    fn nearest_centroid_separates_noiseless_fleet() {
        let fleet = sample_fleet(&FleetSpec {
            n_devices: 31,
            ..Default::default()
        })
        .unwrap();
        let cfg = GfskConfig::default();
        let w = window_length(&cfg).unwrap();
        let ds = generate_dataset(&fleet, &noiseless("wired-ch1"), 3, &cfg, 8).unwrap();
        let feats: Vec<(Vec<f64>, u32)> = ds
            .items
            .iter()
            .map(|(f, l)| (tpd(f, w).unwrap().data, *l))
            .collect();
        let mut centroids = vec![vec![0.0; w.len - 1]; 31];
        for (x, l) in &feats {
            for (c, v) in centroids[*l as usize].iter_mut().zip(x) {
                *c += v / 3.0;
            }
        }
        for (x, l) in &feats {
            let best = (0..31)
                .min_by(|&a, &b| {
                    let da: f64 = centroids[a].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                    let db: f64 = centroids[b].iter().zip(x).map(|(c, v)| (c - v).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .unwrap();
            assert_eq!(best as u32, *l);
        }
    }
}
