//! Rolling-window driver and result files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use factor_connect::bootstrap::{bootstrap_connectedness, BandedSeries};
use factor_connect::connectedness::ConnectednessTable;
use factor_connect::factor::ModelOrder;
use factor_connect::ingest::{
    assemble_panel, read_long_csv, rolling_windows, Panel, RollingWindowSpec, Window,
};
use factor_connect::pipeline::Estimator;
use factor_connect::spectral::BandConnectedness;
use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{OrderMode, RunConfig, SelectionScope};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot read input {path}: {source}")]
    Input {
        path: PathBuf,
        source: factor_connect::Error,
    },
    #[error(transparent)]
    Estimation(#[from] factor_connect::Error),
    #[error("cannot write {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("all {0} windows failed; see manifest.json for the reasons")]
    AllFailed(usize),
}

impl RunError {
    fn output(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
        move |source| RunError::Output {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Read and align the input named by the configuration.
pub fn load_panel(cfg: &RunConfig) -> Result<Panel, RunError> {
    let wrap = |source| RunError::Input {
        path: cfg.input.clone(),
        source,
    };
    let file = File::open(&cfg.input).map_err(|e| wrap(e.into()))?;
    let series = read_long_csv(std::io::BufReader::new(file), cfg.input_kind, cfg.transform)
        .map_err(wrap)?;
    assemble_panel(&series).map_err(wrap)
}

struct WindowResult {
    order: ModelOrder,
    glasso_penalty: f64,
    swc: [f64; 3],
    spectral: Vec<BandConnectedness>,
    table: Option<ConnectednessTable>,
    bands: Option<BandedSeries>,
}

struct WindowOutcome {
    index: usize,
    end_date: NaiveDate,
    result: Result<WindowResult, String>,
}

#[derive(Serialize)]
struct ManifestWindow {
    index: usize,
    end_date: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    order: Option<ModelOrder>,
    #[serde(skip_serializing_if = "Option::is_none")]
    glasso_penalty: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap_replications: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bootstrap_failures: Option<usize>,
}

#[derive(Serialize)]
struct ManifestInput {
    path: String,
    series: Vec<String>,
    observations: usize,
    first_date: String,
    last_date: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    window_limit: Option<usize>,
    global_order: Option<ModelOrder>,
    input: ManifestInput,
    windows: Vec<ManifestWindow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSummary {
    pub windows: usize,
    pub failed: usize,
}

/// Estimate every window (optionally only the first `limit`) and write
/// `swc.csv`, `spectral.csv`, `bands.csv`, `pairwise/` and `manifest.json`.
pub fn run(cfg: &RunConfig, limit: Option<usize>) -> Result<RunSummary, RunError> {
    let panel = load_panel(cfg)?;
    let spec = RollingWindowSpec::new(cfg.window_length, cfg.step)?;
    let mut windows = rolling_windows(&panel, spec)?;
    if let Some(n) = limit {
        windows.truncate(n);
    }
    info!(
        "{} series, {} observations, {} windows",
        panel.n_series(),
        panel.n_obs(),
        windows.len()
    );
    let estimator = Estimator::new(cfg.estimation())?;
    let global_order = match cfg.order {
        OrderMode::Fixed { r, p_f, p_xi } => Some(ModelOrder::new(r, p_f, p_xi)?),
        OrderMode::Select {
            scope: SelectionScope::Global,
            ..
        } => {
            let bounds = cfg.order.bounds().expect("select mode has bounds");
            let sel = estimator.select_order(panel.values(), bounds)?;
            info!("selected order {:?} on the full panel", sel.order);
            Some(sel.order)
        }
        OrderMode::Select {
            scope: SelectionScope::Window,
            ..
        } => None,
    };

    let outcomes: Vec<WindowOutcome> = windows
        .par_iter()
        .map(|w| WindowOutcome {
            index: w.index,
            end_date: w.end_date,
            result: estimate_window(cfg, &estimator, global_order, w).map_err(|e| {
                warn!("window ending {} failed: {e}", w.end_date);
                e.to_string()
            }),
        })
        .collect();

    write_outputs(cfg, &panel, limit, global_order, &outcomes)?;
    let failed = outcomes.iter().filter(|o| o.result.is_err()).count();
    if failed == outcomes.len() {
        return Err(RunError::AllFailed(failed));
    }
    Ok(RunSummary {
        windows: outcomes.len(),
        failed,
    })
}

fn estimate_window(
    cfg: &RunConfig,
    estimator: &Estimator,
    global_order: Option<ModelOrder>,
    w: &Window,
) -> factor_connect::Result<WindowResult> {
    let x = w.panel.values();
    let order = match global_order {
        Some(o) => o,
        None => {
            let bounds = cfg.order.bounds().expect("select mode has bounds");
            estimator.select_order(x, bounds)?.order
        }
    };
    let est = estimator.estimate(x, order)?;
    let bands = if cfg.bootstrap.enabled {
        Some(bootstrap_connectedness(
            estimator,
            &est,
            &cfg.bootstrap_config(),
            w.index as u64,
        )?)
    } else {
        None
    };
    info!("window ending {} done", w.end_date);
    Ok(WindowResult {
        order,
        glasso_penalty: est.precision.penalty,
        swc: [est.table.swc, est.table.swc_mkt, est.table.swc_ids],
        spectral: est.spectral.map(|s| s.bands).unwrap_or_default(),
        table: cfg.pairwise.then_some(est.table),
        bands,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, RunError> {
    let file = File::create(path).map_err(RunError::output(path))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> RunError + '_ {
    move |e| RunError::Output {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

fn write_outputs(
    cfg: &RunConfig,
    panel: &Panel,
    limit: Option<usize>,
    global_order: Option<ModelOrder>,
    outcomes: &[WindowOutcome],
) -> Result<(), RunError> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(RunError::output(dir))?;

    let path = dir.join("swc.csv");
    let fail = csv_error(&path);
    let mut w = csv_writer(&path)?;
    w.write_record(["end_date", "swc", "swc_mkt", "swc_ids"])
        .map_err(&fail)?;
    for o in outcomes {
        let date = o.end_date.to_string();
        match &o.result {
            Ok(r) => w.write_record([
                date,
                r.swc[0].to_string(),
                r.swc[1].to_string(),
                r.swc[2].to_string(),
            ]),
            Err(_) => w.write_record([date.as_str(), "", "", ""]),
        }
        .map_err(&fail)?;
    }
    w.flush().map_err(RunError::output(&path))?;

    if cfg.spectral.enabled {
        let path = dir.join("spectral.csv");
        let fail = csv_error(&path);
        let mut w = csv_writer(&path)?;
        w.write_record(["end_date", "band", "swc", "swc_mkt", "swc_ids"])
            .map_err(&fail)?;
        for o in outcomes {
            let date = o.end_date.to_string();
            for (k, band) in cfg.spectral.bands.iter().enumerate() {
                match &o.result {
                    Ok(r) => {
                        let m = &r.spectral[k].measures;
                        w.write_record([
                            date.clone(),
                            band.name.clone(),
                            m.swc.to_string(),
                            m.swc_mkt.to_string(),
                            m.swc_ids.to_string(),
                        ])
                    }
                    Err(_) => w.write_record([date.as_str(), band.name.as_str(), "", "", ""]),
                }
                .map_err(&fail)?;
            }
        }
        w.flush().map_err(RunError::output(&path))?;
    }

    if cfg.bootstrap.enabled {
        let path = dir.join("bands.csv");
        let fail = csv_error(&path);
        let mut w = csv_writer(&path)?;
        w.write_record(["end_date", "measure", "point", "lower", "upper"])
            .map_err(&fail)?;
        for o in outcomes {
            let Ok(WindowResult { bands: Some(b), .. }) = &o.result else {
                continue;
            };
            for m in &b.measures {
                w.write_record([
                    o.end_date.to_string(),
                    m.measure.clone(),
                    m.band.point.to_string(),
                    m.band.lower.to_string(),
                    m.band.upper.to_string(),
                ])
                .map_err(&fail)?;
            }
        }
        w.flush().map_err(RunError::output(&path))?;
    }

    if cfg.pairwise {
        let pdir = dir.join("pairwise");
        fs::create_dir_all(&pdir).map_err(RunError::output(&pdir))?;
        for o in outcomes {
            if let Ok(WindowResult { table: Some(t), .. }) = &o.result {
                let path = pdir.join(format!("{}.csv", o.end_date));
                let file = File::create(&path).map_err(RunError::output(&path))?;
                t.write_csv(BufWriter::new(file), panel.names())?;
            }
        }
    }

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        window_limit: limit,
        global_order,
        input: ManifestInput {
            path: cfg.input.display().to_string(),
            series: panel.names().to_vec(),
            observations: panel.n_obs(),
            first_date: panel.dates()[0].to_string(),
            last_date: panel.last_date().to_string(),
        },
        windows: outcomes
            .iter()
            .map(|o| match &o.result {
                Ok(r) => ManifestWindow {
                    index: o.index,
                    end_date: o.end_date.to_string(),
                    status: "ok",
                    error: None,
                    order: Some(r.order),
                    glasso_penalty: Some(r.glasso_penalty),
                    bootstrap_replications: r.bands.as_ref().map(|b| b.replications),
                    bootstrap_failures: r.bands.as_ref().map(|b| b.failed),
                },
                Err(e) => ManifestWindow {
                    index: o.index,
                    end_date: o.end_date.to_string(),
                    status: "failed",
                    error: Some(e.clone()),
                    order: None,
                    glasso_penalty: None,
                    bootstrap_replications: None,
                    bootstrap_failures: None,
                },
            })
            .collect(),
    };
    let path = dir.join("manifest.json");
    let mut file = BufWriter::new(File::create(&path).map_err(RunError::output(&path))?);
    serde_json::to_writer_pretty(&mut file, &manifest).map_err(|e| RunError::Output {
        path: path.clone(),
        source: e.into(),
    })?;
    file.write_all(b"\n")
        .and_then(|_| file.flush())
        .map_err(RunError::output(&path))?;
    Ok(())
}
