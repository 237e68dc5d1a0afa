use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use blefp_core::features::{self, FeatureMethod, FeatureOptions, FeatureTensor, WindowSpec};
use blefp_core::fleet::{self, DomainScenario, FleetSpec, LabeledDataset};
use blefp_core::seed::derive_seed;
use blefp_core::{GfskConfig, IqFrame};
use blefp_nn::{train, NetworkConfig, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TRAIN_TAG: u64 = 0x7EA1;
const TEST_TAG: u64 = 0x7E57;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub fleet: FleetSpec,
    #[serde(default)]
    pub gfsk: GfskConfig,
    pub train_scenario: String,
    pub test_scenarios: Vec<String>,
    pub methods: Vec<FeatureMethod>,
    /// `n_classes` is overwritten with the fleet size.
    pub nn_config: NetworkConfig,
    pub frames_per_device_train: usize,
    pub frames_per_device_test: usize,
    pub seed: u64,
    #[serde(default)]
    pub features: FeatureOptions,
    /// Extra scenarios, looked up by name before the presets.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scenarios: Vec<DomainScenario>,
}

impl ExperimentSpec {
    /// Channel-shift experiment at desk scale.
    pub fn desk(n_devices: usize) -> Self {
        Self {
            fleet: FleetSpec {
                n_devices,
                ..FleetSpec::default()
            },
            gfsk: GfskConfig::default(),
            train_scenario: "wired-ch1".into(),
            test_scenarios: vec!["wired-ch1".into(), "wired-ch32".into()],
            methods: FeatureMethod::ALL.to_vec(),
            nn_config: NetworkConfig::desk(n_devices),
            frames_per_device_train: 200,
            frames_per_device_test: 100,
            seed: 2025,
            features: FeatureOptions::default(),
            scenarios: Vec::new(),
        }
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            n_classes: self.fleet.n_devices,
            ..self.nn_config.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.test_scenarios.is_empty() {
            return Err(Error::EmptySelection);
        }
        if self.frames_per_device_train == 0 || self.frames_per_device_test == 0 {
            return Err(blefp_core::Error::InvalidScenario("frames per device must be positive".into()).into());
        }
        self.gfsk.validate()?;
        self.network().validate()?;
        for name in std::iter::once(&self.train_scenario).chain(&self.test_scenarios) {
            resolve_scenario(self, name)?.validate()?;
        }
        Ok(())
    }
}

pub fn resolve_scenario(spec: &ExperimentSpec, name: &str) -> Result<DomainScenario> {
    if let Some(s) = spec.scenarios.iter().find(|s| s.name == name) {
        return Ok(s.clone());
    }
    fleet::scenario_by_name(name).map_err(|_| Error::UnknownScenario(name.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub method: FeatureMethod,
    pub test_scenario: String,
    pub accuracy: f64,
    /// `confusion[label][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Wall-clock seconds per phase.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct MethodTiming {
    pub preprocessing_s: f64,
    pub training_s: f64,
    pub inference_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultTable {
    pub train_scenario: String,
    pub test_scenarios: Vec<String>,
    pub n_classes: usize,
    pub cells: Vec<CellResult>,
    pub timing: BTreeMap<FeatureMethod, MethodTiming>,
}

impl ResultTable {
    pub fn cell(&self, method: FeatureMethod, scenario: &str) -> Option<&CellResult> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.test_scenario == scenario)
    }

    pub fn accuracy(&self, method: FeatureMethod, scenario: &str) -> Option<f64> {
        self.cell(method, scenario).map(|c| c.accuracy)
    }

    pub fn methods(&self) -> Vec<FeatureMethod> {
        let mut m: Vec<FeatureMethod> = Vec::new();
        for c in &self.cells {
            if !m.contains(&c.method) {
                m.push(c.method);
            }
        }
        m
    }
}

/// `counts[label][predicted]`.
pub fn confusion(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(blefp_nn::Error::LabelOutOfRange {
                label: p.max(l),
                n_classes,
            }
            .into());
        }
        m[l][p] += 1;
    }
    Ok(m)
}

fn trace_accuracy(m: &[Vec<u64>]) -> f64 {
    let total: u64 = m.iter().flatten().sum();
    let hits: u64 = m.iter().enumerate().map(|(i, r)| r[i]).sum();
    hits as f64 / total.max(1) as f64
}

struct Data {
    train: LabeledDataset<IqFrame>,
    tests: Vec<LabeledDataset<IqFrame>>,
    window: WindowSpec,
}

fn generate(spec: &ExperimentSpec) -> Result<Data> {
    spec.validate()?;
    let devices = fleet::sample_fleet(&spec.fleet)?;
    let train_sc = resolve_scenario(spec, &spec.train_scenario)?;
    let train = fleet::generate_dataset(
        &devices,
        &train_sc,
        spec.frames_per_device_train,
        &spec.gfsk,
        derive_seed(spec.seed, &[TRAIN_TAG]),
    )?;
    let train_seeds: HashSet<u64> = train.frame_seeds.iter().copied().collect();
    let mut tests = Vec::new();
    for (i, name) in spec.test_scenarios.iter().enumerate() {
        let ds = fleet::generate_dataset(
            &devices,
            &resolve_scenario(spec, name)?,
            spec.frames_per_device_test,
            &spec.gfsk,
            derive_seed(spec.seed, &[TEST_TAG, i as u64]),
        )?;
        if let Some(s) = ds.frame_seeds.iter().find(|s| train_seeds.contains(s)) {
            return Err(Error::SeedOverlap(*s));
        }
        tests.push(ds);
    }
    Ok(Data {
        train,
        tests,
        window: features::window_length(&spec.gfsk)?,
    })
}

/// Features for a dataset; RAWIQ tensors are fitted to `raw_len`.
fn featurize(
    ds: &LabeledDataset<IqFrame>,
    method: FeatureMethod,
    w: WindowSpec,
    opts: FeatureOptions,
    raw_len: Option<usize>,
) -> Result<LabeledDataset<FeatureTensor>> {
    Ok(ds.try_map(|f| {
        let t = features::extract(method, f, w, opts)?;
        Ok(match (method, raw_len) {
            (FeatureMethod::RawIq, Some(n)) if t.length != n => t.fit_length(n),
            _ => t,
        })
    })?)
}

fn raw_length(ds: &LabeledDataset<IqFrame>) -> usize {
    ds.items.iter().map(|(f, _)| f.len()).min().unwrap_or(0)
}

fn labels(ds: &LabeledDataset<FeatureTensor>) -> Vec<usize> {
    ds.items.iter().map(|(_, l)| *l as usize).collect()
}

fn inputs(ds: &LabeledDataset<FeatureTensor>) -> Result<Tensor> {
    Ok(blefp_nn::dataset_tensor(ds)?.0)
}

/// Generates train and test sets, trains one model per method and scores it
/// on every test scenario. Everything except `timing` is a pure function
/// of the spec.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    let data = generate(spec)?;
    let cfg = spec.network();
    let n = cfg.n_classes;
    let raw_len = Some(raw_length(&data.train));
    let mut cells = Vec::new();
    let mut timing = BTreeMap::new();
    for &method in &spec.methods {
        let t0 = Instant::now();
        let train_feats = featurize(&data.train, method, data.window, spec.features, raw_len)?;
        let preprocessing_s = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let model = train(&train_feats, &cfg)?;
        let training_s = t0.elapsed().as_secs_f64();

        let mut inference_s = 0.0;
        for (name, test) in spec.test_scenarios.iter().zip(&data.tests) {
            let feats = featurize(test, method, data.window, spec.features, raw_len)?;
            let x = inputs(&feats)?;
            let t0 = Instant::now();
            let pred = model.predict(&x)?;
            inference_s += t0.elapsed().as_secs_f64();
            let m = confusion(&pred, &labels(&feats), n)?;
            cells.push(CellResult {
                method,
                test_scenario: name.clone(),
                accuracy: trace_accuracy(&m),
                confusion: m,
            });
        }
        timing.insert(
            method,
            MethodTiming {
                preprocessing_s,
                training_s,
                inference_s,
            },
        );
    }
    Ok(ResultTable {
        train_scenario: spec.train_scenario.clone(),
        test_scenarios: spec.test_scenarios.clone(),
        n_classes: n,
        cells,
        timing,
    })
}

/// One table per device count; each fleet is a prefix of the full one.
pub fn scalability_sweep(spec: &ExperimentSpec, counts: &[usize]) -> Result<Vec<(usize, ResultTable)>> {
    for &count in counts {
        if count > spec.fleet.n_devices {
            return Err(Error::CountExceedsFleet {
                count,
                fleet: spec.fleet.n_devices,
            });
        }
    }
    counts
        .iter()
        .map(|&count| {
            let sub = ExperimentSpec {
                fleet: FleetSpec {
                    n_devices: count,
                    ..spec.fleet.clone()
                },
                ..spec.clone()
            };
            Ok((count, run_experiment(&sub)?))
        })
        .collect()
}

fn median3(mut v: [f64; 3]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[1]
}

/// Median-of-3 wall-clock per phase: sequential feature extraction of the
/// train set, 10 training epochs, and inference on the first test set.
pub fn timing_report(spec: &ExperimentSpec) -> Result<BTreeMap<FeatureMethod, MethodTiming>> {
    let data = generate(spec)?;
    let cfg = NetworkConfig {
        epochs: 10,
        ..spec.network()
    };
    let raw_len = raw_length(&data.train);
    let mut out = BTreeMap::new();
    for &method in &spec.methods {
        let mut runs = [MethodTiming::default(); 3];
        for run in &mut runs {
            let t0 = Instant::now();
            let mut feats = Vec::with_capacity(data.train.len());
            for (f, _) in &data.train.items {
                feats.push(features::extract(method, f, data.window, spec.features)?);
            }
            run.preprocessing_s = t0.elapsed().as_secs_f64();

            if method == FeatureMethod::RawIq {
                for t in &mut feats {
                    *t = t.fit_length(raw_len);
                }
            }
            let refs: Vec<&FeatureTensor> = feats.iter().collect();
            let x = blefp_nn::train::stack_features(&refs)?;
            let y: Vec<usize> = data.train.items.iter().map(|(_, l)| *l as usize).collect();
            let t0 = Instant::now();
            let (model, _) = blefp_nn::fit(&x, &y, &cfg)?;
            run.training_s = t0.elapsed().as_secs_f64();

            let test = featurize(&data.tests[0], method, data.window, spec.features, Some(raw_len))?;
            let xt = inputs(&test)?;
            let t0 = Instant::now();
            model.predict(&xt)?;
            run.inference_s = t0.elapsed().as_secs_f64();
        }
        out.insert(
            method,
            MethodTiming {
                preprocessing_s: median3(runs.map(|r| r.preprocessing_s)),
                training_s: median3(runs.map(|r| r.training_s)),
                inference_s: median3(runs.map(|r| r.inference_s)),
            },
        );
    }
    Ok(out)
}

/// Mean accuracy per `(method, test scenario)` over several experiment seeds.
pub fn mean_accuracy_over_seeds(
    spec: &ExperimentSpec,
    seeds: &[u64],
) -> Result<BTreeMap<(FeatureMethod, String), f64>> {
    let mut sums: BTreeMap<(FeatureMethod, String), f64> = BTreeMap::new();
    for &seed in seeds {
        let table = run_experiment(&ExperimentSpec {
            seed,
            ..spec.clone()
        })?;
        for c in table.cells {
            *sums.entry((c.method, c.test_scenario)).or_default() += c.accuracy;
        }
    }
    for v in sums.values_mut() {
        *v /= seeds.len().max(1) as f64;
    }
    Ok(sums)
}
