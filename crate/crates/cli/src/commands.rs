use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use blefp_core::features::{self, FeatureMethod, FeatureTensor};
use blefp_core::fleet::{self, LabeledDataset};
use blefp_core::gfsk::{self, ImpairmentField, ImpairmentSet};
use blefp_core::ingest::{self, CaptureSpec, Framing, SampleLayout};
use blefp_core::{Bits, IqFrame};
use blefp_eval::{self as eval, resolve_scenario};
use blefp_nn::{checkpoint, gradcheck as gc};

use crate::config::RunConfig;
use crate::exit::CliError;

fn out_or(out: Option<PathBuf>, default: &str) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(default))
}

fn parse_pdu(hex: &str) -> Result<Bits, CliError> {
    let hex: String = hex.chars().filter(|c| !c.is_whitespace() && *c != '_').collect();
    if hex.len() % 2 != 0 {
        return Err(CliError::Config(format!("odd-length hex PDU {hex:?}")));
    }
    let bytes = (0..hex.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
        .collect::<Result<Vec<u8>, _>>()
        .map_err(|e| CliError::Config(format!("bad hex PDU: {e}")))?;
    Ok(Bits::from_bytes_lsb_first(&bytes))
}

fn parse_assignments(set: &[String]) -> Result<ImpairmentSet, CliError> {
    let mut imp = ImpairmentSet::default();
    for a in set {
        let (k, v) = a
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("expected field=value, got {a:?}")))?;
        let field: ImpairmentField = k.parse()?;
        let value: f64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("bad number in {a:?}")))?;
        field.set(&mut imp, value);
    }
    imp.validate()?;
    Ok(imp)
}

fn parent_dirs(path: &Path) -> Result<(), CliError> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn write_manifest(cfg: &RunConfig, dir: &Path) -> Result<(), CliError> {
    fs::write(dir.join("manifest.toml"), cfg.to_toml()?)?;
    Ok(())
}

pub fn synth(
    cfg: &RunConfig,
    pdu_hex: &str,
    set: &[String],
    scenario: Option<&str>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let imp = parse_assignments(set)?;
    let mut frame = gfsk::modulate_frame(&parse_pdu(pdu_hex)?, &cfg.gfsk, &imp)?;
    if let Some(name) = scenario {
        let sc = resolve_scenario(&cfg.experiment_spec(), name)?;
        frame = gfsk::apply_channel(&frame, &sc.channel_params()?, cfg.seed)?;
    }
    let path = out_or(out, "synth.csv");
    parent_dirs(&path)?;
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["n", "i", "q"])?;
    for (n, s) in frame.samples().iter().enumerate() {
        w.write_record([n.to_string(), s.re.to_string(), s.im.to_string()])?;
    }
    w.flush()?;
    println!("wrote {} samples to {}", frame.len(), path.display());
    Ok(())
}

fn labelled(mut t: FeatureTensor, label: String) -> FeatureTensor {
    t.meta.domain_label = label;
    t
}

pub fn sweep(
    cfg: &RunConfig,
    impairment: &str,
    values: &[f64],
    pdu_hex: &str,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let field: ImpairmentField = impairment.parse()?;
    let pdu = parse_pdu(pdu_hex)?;
    let base = ImpairmentSet::ideal(&cfg.gfsk);
    let frames = gfsk::impairment_sweep(field, values, &cfg.gfsk, &base, &pdu)?;
    let w = features::window_length(&cfg.gfsk)?;
    let label = |v: f64| format!("{}={v}", field.name());
    let tpd = frames
        .iter()
        .map(|(v, f)| Ok(labelled(features::tpd(f, w)?, label(*v))))
        .collect::<Result<Vec<_>, CliError>>()?;
    let path = out_or(out, &format!("sweep_{}.csv", field.name()));
    parent_dirs(&path)?;
    features::write_csv(fs::File::create(&path)?, &tpd)?;
    println!("wrote {} TPD curves to {}", tpd.len(), path.display());
    if field == ImpairmentField::ThetaPo {
        let raw = frames
            .iter()
            .map(|(v, f)| Ok(labelled(features::raw_iq(&f.head(w.len)?)?, label(*v))))
            .collect::<Result<Vec<_>, CliError>>()?;
        let raw_path = path.with_extension("rawiq.csv");
        features::write_csv(fs::File::create(&raw_path)?, &raw)?;
        println!("wrote raw IQ curves to {}", raw_path.display());
    }
    Ok(())
}

pub fn fleet(
    cfg: &RunConfig,
    scenario: Option<&str>,
    frames: Option<usize>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let dir = out_or(out, "fleet");
    fs::create_dir_all(&dir)?;
    let devices = fleet::sample_fleet(&cfg.fleet)?;
    let mut w = csv::Writer::from_path(dir.join("devices.csv"))?;
    let mut header = vec!["device_id".to_string()];
    header.extend(ImpairmentField::ALL.iter().map(|f| f.name().to_string()));
    w.write_record(&header)?;
    for d in &devices {
        let mut rec = vec![d.device_id.to_string()];
        rec.extend(ImpairmentField::ALL.iter().map(|f| f.get(&d.imp).to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    println!("wrote {} devices to {}", devices.len(), dir.join("devices.csv").display());

    if scenario.is_some() || frames.is_some() {
        let name = scenario.unwrap_or(&cfg.experiment.train_scenario);
        let sc = resolve_scenario(&cfg.experiment_spec(), name)?;
        let n = frames.unwrap_or(cfg.experiment.frames_per_device_train);
        let ds = fleet::generate_dataset(&devices, &sc, n, &cfg.gfsk, cfg.seed)?;
        let capture = dir.join(format!("{}.iq", sc.name));
        let manifest = dir.join(format!("{}.dataset.toml", sc.name));
        fleet::write_dataset(&ds, &cfg.fleet, &cfg.gfsk, &capture, &manifest)?;
        println!("wrote {} frames to {}", ds.len(), capture.display());
    }
    write_manifest(cfg, &dir)
}

fn synthetic_train_set(cfg: &RunConfig) -> Result<LabeledDataset<IqFrame>, CliError> {
    let spec = cfg.experiment_spec();
    let devices = fleet::sample_fleet(&spec.fleet)?;
    let sc = resolve_scenario(&spec, &spec.train_scenario)?;
    Ok(fleet::generate_dataset(
        &devices,
        &sc,
        spec.frames_per_device_train,
        &spec.gfsk,
        spec.seed,
    )?)
}

pub fn extract(
    cfg: &RunConfig,
    method: FeatureMethod,
    capture: Option<PathBuf>,
    layout: SampleLayout,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    let frames: Vec<IqFrame> = match (capture, &cfg.capture) {
        (Some(path), _) => {
            let rate = ingest::read_manifest(&path)
                .map(|m| m.sample_rate_hz)
                .unwrap_or(cfg.gfsk.sample_rate_hz);
            ingest::read_capture(&CaptureSpec {
                path,
                sample_rate_hz: rate,
                layout,
                framing: Framing::Preframed { frame_len: 1 },
            })?
        }
        (None, Some(spec)) => ingest::read_capture(spec)?,
        (None, None) => synthetic_train_set(cfg)?.items.into_iter().map(|(f, _)| f).collect(),
    };
    let w = features::window_length(&cfg.gfsk)?;
    let tensors = frames
        .iter()
        .map(|f| features::extract(method, f, w, cfg.features))
        .collect::<Result<Vec<_>, _>>()?;
    let path = out_or(out, "features.csv");
    parent_dirs(&path)?;
    features::write_csv(fs::File::create(&path)?, &tensors)?;
    println!("wrote {} {method} tensors to {}", tensors.len(), path.display());
    Ok(())
}

pub fn train(cfg: &RunConfig, method: FeatureMethod, out: Option<PathBuf>) -> Result<(), CliError> {
    let ds = synthetic_train_set(cfg)?;
    let w = features::window_length(&cfg.gfsk)?;
    let raw_len = ds.items.iter().map(|(f, _)| f.len()).min().unwrap_or(0);
    let feats = ds.try_map(|f| {
        let t = features::extract(method, f, w, cfg.features)?;
        Ok(if method == FeatureMethod::RawIq { t.fit_length(raw_len) } else { t })
    })?;
    let (x, y) = blefp_nn::dataset_tensor(&feats)?;
    let net = cfg.experiment_spec().network();
    let (model, report) = blefp_nn::fit(&x, &y, &net)?;
    let acc = blefp_nn::accuracy(&model, &x, &y)?;
    let path = out_or(out, "model.bin");
    parent_dirs(&path)?;
    checkpoint::save(&model, &path)?;
    let loss_path = path.with_extension("loss.csv");
    let mut lw = csv::Writer::from_path(&loss_path)?;
    lw.write_record(["epoch", "loss"])?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        lw.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    lw.flush()?;
    println!(
        "trained {method} model: {} parameters, train accuracy {acc:.4}, saved to {}",
        model.n_params(),
        path.display()
    );
    Ok(())
}

pub fn experiment(cfg: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    cfg.validate()?;
    let dir = out_or(out, "results");
    let table = eval::run_experiment(&cfg.experiment_spec())?;
    eval::write_results(&table, &dir)?;
    write_manifest(cfg, &dir)?;
    for c in &table.cells {
        println!(
            "{:<6} {} -> {:<12} accuracy {:.4}",
            c.method.name(),
            table.train_scenario,
            c.test_scenario,
            c.accuracy
        );
    }
    println!("results in {}", dir.display());
    Ok(())
}

pub fn scalability(cfg: &RunConfig, counts: &[usize], out: Option<PathBuf>) -> Result<(), CliError> {
    cfg.validate()?;
    let counts = if counts.is_empty() {
        &cfg.scalability.device_counts[..]
    } else {
        counts
    };
    let dir = out_or(out, "scalability");
    fs::create_dir_all(&dir)?;
    let tables = eval::scalability_sweep(&cfg.experiment_spec(), counts)?;
    let mut w = csv::Writer::from_path(dir.join("scalability.csv"))?;
    w.write_record(["n_devices", "method", "test_scenario", "accuracy"])?;
    for (n, t) in &tables {
        for c in &t.cells {
            w.write_record([
                n.to_string(),
                c.method.name().to_string(),
                c.test_scenario.clone(),
                format!("{:.6}", c.accuracy),
            ])?;
            println!("{n:>3} devices {:<6} {:<12} {:.4}", c.method.name(), c.test_scenario, c.accuracy);
        }
    }
    w.flush()?;
    write_manifest(cfg, &dir)
}

pub fn timing(cfg: &RunConfig, out: Option<PathBuf>) -> Result<(), CliError> {
    cfg.validate()?;
    let t = eval::timing_report(&cfg.experiment_spec())?;
    let path = out_or(out, "timing.csv");
    parent_dirs(&path)?;
    eval::write_timing_csv(&t, &path)?;
    for (m, v) in &t {
        println!(
            "{:<6} preprocessing {:.6}s  training {:.3}s  inference {:.4}s",
            m.name(),
            v.preprocessing_s,
            v.training_s,
            v.inference_s
        );
    }
    Ok(())
}

pub fn gradcheck(seed: u64, trials: u64) -> Result<(), CliError> {
    let mut failed = 0;
    for s in seed..seed + trials.max(1) {
        let r = gc::gradcheck(s)?;
        println!(
            "seed {s}: {} parameters, {} failures, max relative error {:.3e}",
            r.n_params, r.failures, r.max_rel_err
        );
        failed += r.failures;
    }
    if failed > 0 {
        return Err(CliError::Validation(format!("{failed} gradients disagree")));
    }
    Ok(())
}

pub struct IngestArgs {
    pub capture: Option<PathBuf>,
    pub sample_rate: Option<f64>,
    pub layout: Option<SampleLayout>,
    pub frame_len: Option<usize>,
    pub threshold: Option<f64>,
    pub min_gap: usize,
    pub align: i64,
}

pub fn ingest(cfg: &RunConfig, a: IngestArgs, out: Option<PathBuf>) -> Result<(), CliError> {
    let spec = match (&a.capture, &cfg.capture) {
        (Some(path), base) => {
            let framing = match (a.threshold, a.frame_len) {
                (Some(threshold_rel), frame_len) => Framing::EnergyDetect {
                    threshold_rel,
                    min_gap_samples: a.min_gap,
                    frame_len,
                    align_offset: a.align,
                    smoothing: 5,
                },
                (None, Some(frame_len)) => Framing::Preframed { frame_len },
                (None, None) => match base {
                    Some(b) => b.framing,
                    None => {
                        return Err(CliError::Config(
                            "ingest needs --threshold or --frame-len".into(),
                        ))
                    }
                },
            };
            CaptureSpec {
                path: path.clone(),
                sample_rate_hz: a
                    .sample_rate
                    .or(base.as_ref().map(|b| b.sample_rate_hz))
                    .unwrap_or(cfg.gfsk.sample_rate_hz),
                layout: a.layout.or(base.as_ref().map(|b| b.layout)).unwrap_or_default(),
                framing,
            }
        }
        (None, Some(spec)) => spec.clone(),
        (None, None) => return Err(CliError::Config("no capture given".into())),
    };
    let frames = ingest::read_capture(&spec)?;
    let path = out_or(out, "ingested.iq");
    parent_dirs(&path)?;
    ingest::write_capture(&frames, &path, SampleLayout::InterleavedF64)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(CliError::Other)?;
    println!("{} frames from {} written to {}", frames.len(), spec.path.display(), path.display());
    Ok(())
}
