//! Acceptance suite. Prints one `[PASS]` or `[FAIL]` line per criterion and
//! exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use blefp_core::features::{self, window_length, FeatureMethod, WindowSpec};
use blefp_core::fleet::{self, FleetSpec};
use blefp_core::gfsk::{self, modulate_frame};
use blefp_core::iq::{self, angle, unwrap};
use blefp_core::{Bits, ChannelParams, ComplexSample, GfskConfig, ImpairmentField, ImpairmentSet, IqFrame, PhaseSeq};
use blefp_eval::{run_experiment, timing_report, write_results, ExperimentSpec, ResultTable};
use blefp_nn::layers::{conv1d_forward, ConvShape};
use blefp_nn::{NetworkConfig, Padding, Tensor};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn window() -> WindowSpec {
    window_length(&GfskConfig::default()).expect("default window")
}

fn tpd_values(frame: &IqFrame) -> Result<Vec<f64>, String> {
    Ok(features::tpd(frame, window()).map_err(err)?.data)
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_pdu(rng: &mut ChaCha8Rng) -> Bits {
    let n = rng.random_range(2..40);
    let bytes: Vec<u8> = (0..n).map(|_| rng.random()).collect();
    Bits::from_bytes_lsb_first(&bytes)
}

fn fig4_base() -> ImpairmentSet {
    ImpairmentSet::ideal(&GfskConfig::default())
}

fn pdu_fixed() -> Bits {
    fleet::channel_pdu(1)
}

// 1
fn tpd_invariance() -> Outcome {
    let cfg = GfskConfig::default();
    let devices = fleet::sample_fleet(&FleetSpec {
        n_devices: 100,
        seed: 11,
        ..FleetSpec::default()
    })
    .map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for d in &devices {
        let pdu = random_pdu(&mut rng);
        let clean = modulate_frame(&pdu, &cfg, &d.imp).map_err(err)?;
        let ch = ChannelParams {
            snr_db: Some(rng.random_range(5.0..40.0)),
            ..ChannelParams::identity()
        };
        let frame = gfsk::apply_channel(&clean, &ch, rng.random()).map_err(err)?;
        let alpha = rng.random_range(0.1..10.0);
        let theta = rng.random_range(-PI..PI);
        let rotated = frame.scaled(Complex64::from_polar(alpha, theta));
        worst = worst.max(linf(&tpd_values(&frame)?, &tpd_values(&rotated)?));
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:.3e} > 1e-12"))?;
    Ok(format!("100 frames, max deviation {worst:.2e}"))
}

// 2
fn cfo_shift_law() -> Outcome {
    let cfg = GfskConfig::default();
    let devices = fleet::sample_fleet(&FleetSpec {
        n_devices: 20,
        seed: 21,
        ..FleetSpec::default()
    })
    .map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst: f64 = 0.0;
    for d in &devices {
        let pdu = random_pdu(&mut rng);
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let df = sign * rng.random_range(100.0..=50e3);
        let mut shifted = d.imp;
        shifted.cfo_hz += df;
        let a = tpd_values(&modulate_frame(&pdu, &cfg, &d.imp).map_err(err)?)?;
        let b = tpd_values(&modulate_frame(&pdu, &cfg, &shifted).map_err(err)?)?;
        let expected = 2.0 * PI * df / cfg.sample_rate_hz;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max(((y - x) - expected).abs() / expected.abs());
        }
    }
    ensure(worst <= 1e-9, || format!("max relative error {worst:.3e} > 1e-9"))?;
    Ok(format!("20 pairs, max relative error {worst:.2e}"))
}

fn sweep_tpd(field: ImpairmentField, values: &[f64]) -> Result<Vec<Vec<f64>>, String> {
    gfsk::impairment_sweep(field, values, &GfskConfig::default(), &fig4_base(), &pdu_fixed())
        .map_err(err)?
        .iter()
        .map(|(_, f)| tpd_values(f))
        .collect()
}

fn preamble_range() -> std::ops::Range<usize> {
    let cfg = GfskConfig::default();
    cfg.transient_samples()..window().len - 1
}

/// Mean rising-edge slope minus mean falling-edge slope magnitude of the
/// preamble TPD.
fn slope_balance(tpd: &[f64]) -> f64 {
    let pre = &tpd[preamble_range()];
    let (mut up, mut nu, mut down, mut nd) = (0.0, 0usize, 0.0, 0usize);
    for w in pre.windows(2) {
        let s = w[1] - w[0];
        if s > 0.0 {
            up += s;
            nu += 1;
        } else if s < 0.0 {
            down -= s;
            nd += 1;
        }
    }
    up / nu.max(1) as f64 - down / nd.max(1) as f64
}

// 3
fn fig4_suite() -> Outcome {
    let fs = GfskConfig::default().sample_rate_hz;
    let cfo_values = [-40e3, -20e3, 0.0, 20e3, 40e3];
    let curves = sweep_tpd(ImpairmentField::CfoHz, &cfo_values)?;
    let mut worst: f64 = 0.0;
    for (v, c) in cfo_values.iter().zip(&curves) {
        let offset = 2.0 * PI * v / fs;
        for (a, b) in c.iter().zip(&curves[2]) {
            worst = worst.max((a - b - offset).abs());
        }
    }
    ensure(worst < 1e-9, || format!("CFO curves deviate from translates by {worst:.3e}"))?;

    let bt = sweep_tpd(ImpairmentField::BtActual, &[0.3, 0.5])?;
    let peak = |t: &[f64]| t[preamble_range()].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (p3, p5) = (peak(&bt[0]), peak(&bt[1]));
    ensure(p3 < p5, || format!("BT 0.3 peak {p3:.5} not below BT 0.5 peak {p5:.5}"))?;

    let eps = 0.05;
    let iq = sweep_tpd(ImpairmentField::IqAmp, &[-eps, 0.0, eps])?;
    let base = slope_balance(&iq[1]);
    let neg = slope_balance(&iq[0]) - base;
    let pos = slope_balance(&iq[2]) - base;
    ensure(pos.abs() > 1e-6 && neg.abs() > 1e-6, || {
        format!("IQ-amp slope asymmetry vanishes: +{eps} -> {pos:.3e}, -{eps} -> {neg:.3e}")
    })?;
    ensure(pos.signum() != neg.signum(), || {
        format!("IQ-amp slope asymmetry does not flip sign: {pos:.3e} vs {neg:.3e}")
    })?;
    Ok(format!(
        "translate err {worst:.1e}; peaks BT0.3 {p3:.4} < BT0.5 {p5:.4}; slope asymmetry +{eps}: {pos:+.2e}, -{eps}: {neg:+.2e}"
    ))
}

// 4
fn phase_offset_comparison() -> Outcome {
    let cfg = GfskConfig::default();
    let values = [0.0, 1.0, 2.0, 3.0];
    let frames = gfsk::impairment_sweep(ImpairmentField::ThetaPo, &values, &cfg, &fig4_base(), &pdu_fixed())
        .map_err(err)?;
    let mut tpds = Vec::new();
    let mut raw_i = Vec::new();
    for (_, f) in &frames {
        tpds.push(tpd_values(f)?);
        raw_i.push(features::raw_iq(f).map_err(err)?.row(0).to_vec());
    }
    let (mut d_tpd, mut d_raw) = (0.0f64, 0.0f64);
    for i in 0..values.len() {
        for j in i + 1..values.len() {
            d_tpd = d_tpd.max(linf(&tpds[i], &tpds[j]));
            d_raw = d_raw.max(linf(&raw_i[i], &raw_i[j]));
        }
    }
    ensure(d_tpd < 1e-9, || format!("TPD spread {d_tpd:.3e} >= 1e-9"))?;
    ensure(d_raw > 0.1, || format!("raw I spread {d_raw:.3e} <= 0.1"))?;
    Ok(format!("TPD spread {d_tpd:.2e}, raw I spread {d_raw:.3}"))
}

fn naive_dft(x: &[ComplexSample]) -> Vec<ComplexSample> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(m, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * ((k * m) % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

// Add or subtract whole turns until each step is at most pi.
fn unwrap_oracle(x: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    let mut correction = 0.0;
    for (i, &v) in x.iter().enumerate() {
        if i > 0 {
            let mut d = v - x[i - 1];
            while d > PI {
                d -= 2.0 * PI;
                correction -= 2.0 * PI;
            }
            while d < -PI {
                d += 2.0 * PI;
                correction += 2.0 * PI;
            }
        }
        out.push(v + correction);
    }
    out
}

fn conv_loops(x: &Tensor, w: &[f64], bias: &[f64], s: ConvShape) -> Vec<f64> {
    let [batch, c_in, len] = x.shape();
    let (pad, out_len) = match s.padding {
        Padding::Valid => (0isize, len + 1 - s.kernel),
        Padding::Same => (((s.kernel - 1) / 2) as isize, len),
    };
    let mut y = Vec::new();
    for b in 0..batch {
        for f in 0..s.filters {
            for t in 0..out_len {
                let mut acc = bias[f];
                for c in 0..c_in {
                    for k in 0..s.kernel {
                        let i = t as isize + k as isize - pad;
                        if (0..len as isize).contains(&i) {
                            acc += w[(f * c_in + c) * s.kernel + k] * x.row(b, c)[i as usize];
                        }
                    }
                }
                y.push(acc);
            }
        }
    }
    y
}

// 5
fn numerical_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut fft_err: f64 = 0.0;
    for n in [1usize, 2, 4, 8, 16, 32, 64] {
        for _ in 0..5 {
            let x: Vec<ComplexSample> = (0..n)
                .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let got = iq::fft(&x).map_err(err)?;
            for (a, b) in got.iter().zip(naive_dft(&x)) {
                fft_err = fft_err.max((a - b).norm());
            }
        }
    }
    ensure(fft_err <= 1e-10, || format!("FFT error {fft_err:.3e} > 1e-10"))?;

    for _ in 0..200 {
        let n = rng.random_range(1..200);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-PI..PI)).collect();
        let got = unwrap(&PhaseSeq { values: values.clone(), wrapped: true }).values;
        ensure(got == unwrap_oracle(&values), || "unwrap differs from oracle".into())?;
    }
    let cfg = GfskConfig::default();
    let frame = modulate_frame(&random_pdu(&mut rng), &cfg, &fig4_base()).map_err(err)?;
    let wrapped = angle(&frame).values;
    ensure(unwrap(&angle(&frame)).values == unwrap_oracle(&wrapped), || {
        "unwrap differs from oracle on a modulated frame".into()
    })?;

    let mut conv_err: f64 = 0.0;
    for padding in [Padding::Valid, Padding::Same] {
        for _ in 0..20 {
            let s = ConvShape {
                filters: rng.random_range(1..5),
                in_channels: rng.random_range(1..4),
                kernel: rng.random_range(1..8),
                padding,
            };
            let len = rng.random_range(s.kernel..s.kernel + 30);
            let batch = rng.random_range(1..4);
            let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            let x = Tensor::new([batch, s.in_channels, len], draw(batch * s.in_channels * len)).map_err(err)?;
            let w = draw(s.weight_len());
            let b = draw(s.filters);
            let y = conv1d_forward(&x, &w, &b, s).map_err(err)?;
            conv_err = conv_err.max(linf(y.data(), &conv_loops(&x, &w, &b, s)));
        }
    }
    ensure(conv_err <= 1e-12, || format!("conv1d error {conv_err:.3e} > 1e-12"))?;

    let mut grad_err: f64 = 0.0;
    for seed in 1..=3 {
        let report = blefp_nn::gradcheck::gradcheck(seed).map_err(err)?;
        ensure(report.passed(), || {
            format!("gradcheck seed {seed}: {} of {} params off", report.failures, report.n_params)
        })?;
        grad_err = grad_err.max(report.max_rel_err);
    }
    Ok(format!(
        "fft {fft_err:.1e}, unwrap exact, conv {conv_err:.1e}, grad rel {grad_err:.1e}"
    ))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

// 6
fn clustering() -> Outcome {
    let cfg = GfskConfig::default();
    let devices = fleet::sample_fleet(&FleetSpec {
        n_devices: 20,
        ..FleetSpec::default()
    })
    .map_err(err)?;
    let mut per_channel = Vec::new();
    for name in ["wired-ch1", "wired-ch32"] {
        let sc = fleet::scenario_by_name(name).map_err(err)?.without_noise();
        let ds = fleet::generate_dataset(&devices, &sc, 1, &cfg, 61).map_err(err)?;
        let t: Vec<Vec<f64>> = ds.items.iter().map(|(f, _)| tpd_values(f)).collect::<Result<_, _>>()?;
        per_channel.push(t);
    }
    let n = devices.len();
    let same = (0..n).map(|i| euclid(&per_channel[0][i], &per_channel[1][i])).sum::<f64>() / n as f64;
    let (mut cross, mut pairs) = (0.0, 0usize);
    for ch in &per_channel {
        for i in 0..n {
            for j in i + 1..n {
                cross += euclid(&ch[i], &ch[j]);
                pairs += 1;
            }
        }
    }
    let cross = cross / pairs as f64;
    ensure(same < 0.2 * cross, || format!("same-device {same:.3e} >= 0.2 x cross-device {cross:.3e}"))?;
    Ok(format!("same-device {same:.2e}, cross-device {cross:.3}"))
}

fn shared_experiment() -> &'static Result<(ResultTable, Duration), String> {
    static TABLE: OnceLock<Result<(ResultTable, Duration), String>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let spec = ExperimentSpec {
            test_scenarios: vec!["wired-ch1".into(), "wired-ch32".into(), "rx2".into()],
            ..ExperimentSpec::desk(10)
        };
        let t0 = Instant::now();
        let table = run_experiment(&spec).map_err(err)?;
        Ok((table, t0.elapsed()))
    })
}

fn acc(table: &ResultTable, m: FeatureMethod, sc: &str) -> Result<f64, String> {
    table
        .accuracy(m, sc)
        .ok_or_else(|| format!("no cell for {} on {sc}", m.name()))
}

fn shared_runtime_ok() -> Result<&'static ResultTable, String> {
    let (table, elapsed) = shared_experiment().as_ref().map_err(Clone::clone)?;
    ensure(*elapsed < Duration::from_secs(600), || format!("experiment took {elapsed:?}"))?;
    Ok(table)
}

// 7
fn domain_shift_trend() -> Outcome {
    let table = shared_runtime_ok()?;
    let tpd_cross = acc(table, FeatureMethod::Tpd, "wired-ch32")?;
    let tpd_same = acc(table, FeatureMethod::Tpd, "wired-ch1")?;
    let mut parts = vec![format!("TPD ch1 {tpd_same:.3} ch32 {tpd_cross:.3}")];
    for m in [FeatureMethod::RawIq, FeatureMethod::Tp, FeatureMethod::Mbed] {
        let a = acc(table, m, "wired-ch32")?;
        ensure(tpd_cross >= a + 0.10, || {
            format!("TPD {tpd_cross:.3} not 10 points above {} {a:.3} on ch32", m.name())
        })?;
        parts.push(format!("{} {a:.3}", m.name()));
    }
    ensure(tpd_cross >= tpd_same - 0.10, || {
        format!("TPD cross-channel {tpd_cross:.3} more than 10 points below same-channel {tpd_same:.3}")
    })?;
    Ok(parts.join(", "))
}

// 8
fn receiver_shift_trend() -> Outcome {
    let table = shared_runtime_ok()?;
    let t = acc(table, FeatureMethod::Tpd, "rx2")?;
    let tp = acc(table, FeatureMethod::Tp, "rx2")?;
    let mb = acc(table, FeatureMethod::Mbed, "rx2")?;
    ensure(t >= tp && t >= mb, || format!("rx2: TPD {t:.3}, TP {tp:.3}, MBED {mb:.3}"))?;
    let elapsed = shared_experiment().as_ref().map(|(_, e)| *e).unwrap_or_default();
    Ok(format!("rx2: TPD {t:.3}, TP {tp:.3}, MBED {mb:.3}; reuses the experiment run of {elapsed:.1?}"))
}

// 9
fn timing_orderings() -> Outcome {
    let spec = ExperimentSpec {
        frames_per_device_train: 60,
        frames_per_device_test: 20,
        test_scenarios: vec!["wired-ch1".into()],
        ..ExperimentSpec::desk(10)
    };
    let t = timing_report(&spec).map_err(err)?;
    let get = |m: FeatureMethod| t.get(&m).copied().ok_or_else(|| format!("no timing for {}", m.name()));
    let (tp, mbed, tpd, raw) = (
        get(FeatureMethod::Tp)?,
        get(FeatureMethod::Mbed)?,
        get(FeatureMethod::Tpd)?,
        get(FeatureMethod::RawIq)?,
    );
    ensure(tp.preprocessing_s < mbed.preprocessing_s, || {
        format!("preprocessing TP {:.4}s >= MBED {:.4}s", tp.preprocessing_s, mbed.preprocessing_s)
    })?;
    ensure(raw.training_s > tpd.training_s, || {
        format!("training RAWIQ {:.2}s <= TPD {:.2}s", raw.training_s, tpd.training_s)
    })?;
    Ok(format!(
        "prep TP {:.4}s < MBED {:.4}s; train RAWIQ {:.2}s > TPD {:.2}s",
        tp.preprocessing_s, mbed.preprocessing_s, raw.training_s, tpd.training_s
    ))
}

fn read_outputs(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(err)? {
        let path = entry.map_err(err)?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        if name != "timing.csv" {
            out.insert(name, std::fs::read(&path).map_err(err)?);
        }
    }
    Ok(out)
}

// 10
fn determinism() -> Outcome {
    let spec = ExperimentSpec {
        frames_per_device_train: 30,
        frames_per_device_test: 15,
        nn_config: NetworkConfig {
            epochs: 3,
            ..NetworkConfig::desk(4)
        },
        test_scenarios: vec!["wired-ch1".into(), "wired-ch32".into(), "loc2".into()],
        ..ExperimentSpec::desk(4)
    };
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().map_err(err)?;
        let table = run_experiment(&spec).map_err(err)?;
        write_results(&table, dir.path()).map_err(err)?;
        snapshots.push(read_outputs(dir.path())?);
    }
    ensure(!snapshots[0].is_empty(), || "no outputs written".into())?;
    ensure(snapshots[0] == snapshots[1], || {
        let differing: Vec<&String> = snapshots[0]
            .iter()
            .filter(|(k, v)| snapshots[1].get(*k) != Some(v))
            .map(|(k, _)| k)
            .collect();
        format!("outputs differ: {differing:?}")
    })?;
    Ok(format!("{} files byte-identical across reruns", snapshots[0].len()))
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion { id: 1, name: "TPD invariance", limit: Some(secs(5)), run: tpd_invariance },
        Criterion { id: 2, name: "CFO shift law", limit: Some(secs(5)), run: cfo_shift_law },
        Criterion { id: 3, name: "impairment sweep shapes", limit: Some(secs(30)), run: fig4_suite },
        Criterion { id: 4, name: "phase-offset comparison", limit: Some(secs(5)), run: phase_offset_comparison },
        Criterion { id: 5, name: "numerical oracles", limit: Some(secs(60)), run: numerical_oracles },
        Criterion { id: 6, name: "channel-agnostic clustering", limit: Some(secs(60)), run: clustering },
        Criterion { id: 7, name: "domain-shift trend", limit: None, run: domain_shift_trend },
        Criterion { id: 8, name: "receiver-shift trend", limit: None, run: receiver_shift_trend },
        Criterion { id: 9, name: "timing orderings", limit: Some(secs(900)), run: timing_orderings },
        Criterion { id: 10, name: "determinism", limit: None, run: determinism },
    ];
    let only: Vec<u8> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect())
        .unwrap_or_default();

    let mut failed = 0;
    for c in criteria.iter().filter(|c| only.is_empty() || only.contains(&c.id)) {
        let t0 = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(c.run))
            .unwrap_or_else(|p| Err(format!("panicked: {:?}", p.downcast_ref::<String>().map(String::as_str).or(p.downcast_ref::<&str>().copied()))));
        let elapsed = t0.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if elapsed > limit => Err(format!("runtime {elapsed:.2?} over {limit:?}")),
            (o, _) => o,
        };
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            failed += 1;
        }
        println!("[{tag}] {:>2} {}: {detail} ({elapsed:.2?})", c.id, c.name);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
