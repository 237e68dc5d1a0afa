//! CSV outputs. Accuracy grids have one row per training scenario and one
//! column per test scenario; confusion matrices have one row per true label.

use std::fs;
use std::path::Path;

use blefp_core::features::FeatureMethod;

use crate::error::Result;
use crate::experiment::{MethodTiming, ResultTable};
use std::collections::BTreeMap;

pub fn write_accuracy_csv(table: &ResultTable, method: FeatureMethod, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["train_scenario".to_string()];
    header.extend(table.test_scenarios.iter().cloned());
    w.write_record(&header)?;
    let mut row = vec![table.train_scenario.clone()];
    for s in &table.test_scenarios {
        row.push(
            table
                .accuracy(method, s)
                .map(|a| format!("{a:.6}"))
                .unwrap_or_default(),
        );
    }
    w.write_record(&row)?;
    w.flush()?;
    Ok(())
}

pub fn write_confusion_csvs(table: &ResultTable, dir: &Path) -> Result<()> {
    for c in &table.cells {
        let path = dir.join(format!("confusion_{}_{}.csv", c.method, c.test_scenario));
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["label".to_string()];
        header.extend((0..table.n_classes).map(|j| format!("pred_{j}")));
        w.write_record(&header)?;
        for (i, row) in c.confusion.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(u64::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn write_timing_csv(timing: &BTreeMap<FeatureMethod, MethodTiming>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["method", "preprocessing_s", "training_s", "inference_s"])?;
    for (m, t) in timing {
        w.write_record([
            m.name().to_string(),
            format!("{:.9}", t.preprocessing_s),
            format!("{:.9}", t.training_s),
            format!("{:.9}", t.inference_s),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `accuracy_<METHOD>.csv`, `confusion_<METHOD>_<scenario>.csv` and
/// `timing.csv` under `dir`. Only the timing file varies between reruns.
pub fn write_results(table: &ResultTable, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for m in table.methods() {
        write_accuracy_csv(table, m, &dir.join(format!("accuracy_{m}.csv")))?;
    }
    write_confusion_csvs(table, dir)?;
    write_timing_csv(&table.timing, &dir.join("timing.csv"))?;
    Ok(())
}
