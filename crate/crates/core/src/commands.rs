//! File-level commands behind the CLI subcommands. Each one is a pure
//! function of its inputs so that repeated runs produce byte-identical
//! artifacts, and running the standalone stages over a simulation's outputs
//! reproduces the simulation's own artifacts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::events::{read_events, write_events, Event};
use crate::metrics::{build_report, render_report, MetricsWindow, ReportDoc};
use crate::model::{load_snapshot, save_snapshot, ModelState};
use crate::p2d::{generate_table, load_catalog, save_catalog, save_table, Catalog};
use crate::pipeline::{train_period, ExamplePipeline};
use crate::sim::experiment::run_experiment;
use crate::sim::world::{WorldConfig, WorldModel};
use crate::util::stream_seed;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct SimulateOptions {
    pub config_path: PathBuf,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

pub struct SimulateArtifacts {
    pub out_dir: PathBuf,
    pub events: PathBuf,
    pub catalog: PathBuf,
    pub model: PathBuf,
    pub table: PathBuf,
    pub report_txt: PathBuf,
    pub report_json: PathBuf,
    pub report: ReportDoc,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    seed: u64,
    ticks: u64,
    model_version: String,
    skipped_events: u64,
    report: &'a ReportDoc,
}

fn load_configs(config_path: &Path) -> Result<(ExperimentConfig, WorldConfig)> {
    let config = ExperimentConfig::load(config_path)?;
    let world_path = config.world_path(config_path);
    if !world_path.exists() {
        return Err(Error::config(
            "world",
            format!("world config `{}` does not exist", world_path.display()),
        ));
    }
    let world = WorldConfig::load(&world_path)?;
    Ok((config, world))
}

/// Full pipeline: generate the world, run the experiment, write the event
/// log, catalog, final model snapshot, final distribution table, and the
/// report.
pub fn run_simulate(options: &SimulateOptions) -> Result<SimulateArtifacts> {
    let (mut config, world_config) = load_configs(&options.config_path)?;
    if let Some(seed) = options.seed {
        config.seed = seed;
    }
    let out_dir = options
        .out_dir
        .clone()
        .or_else(|| config.out_dir.clone())
        .ok_or_else(|| Error::config("out_dir", "set out_dir in the config or pass --out-dir"))?;
    fs::create_dir_all(&out_dir)?;

    let world = WorldModel::generate(&world_config)?;
    let output = run_experiment(config.clone(), world)?;

    let events_path = out_dir.join("events.jsonl");
    write_events(&events_path, &output.events)?;
    let catalog_path = out_dir.join("catalog.jsonl");
    save_catalog(&output.catalog, &catalog_path)?;
    let model_path = out_dir.join("model.jsonl");
    save_snapshot(&output.model, &model_path)?;
    let table_path = out_dir.join("table.tsv");
    let table = output
        .table
        .as_ref()
        .expect("a finished run always has a table");
    save_table(table, &table_path)?;

    let report = report_doc(&config, &output.events, &output.catalog)?;
    let report_txt = out_dir.join("report.txt");
    fs::write(&report_txt, render_report(&report))?;
    let report_json = out_dir.join("report.json");
    let json = ReportJson {
        seed: config.seed,
        ticks: config.ticks,
        model_version: output.model.version(),
        skipped_events: output.model.skipped_events(),
        report: &report,
    };
    fs::write(&report_json, serde_json::to_string_pretty(&json)? + "\n")?;

    Ok(SimulateArtifacts {
        out_dir,
        events: events_path,
        catalog: catalog_path,
        model: model_path,
        table: table_path,
        report_txt,
        report_json,
        report,
    })
}

fn report_doc(config: &ExperimentConfig, events: &[Event], catalog: &Catalog) -> Result<ReportDoc> {
    let window = MetricsWindow {
        start: config.report.window_start.unwrap_or(0),
        end: config.report.window_end.unwrap_or(config.ticks),
    };
    let target = config
        .report_target()
        .ok_or_else(|| Error::config("report.target_bucket", "no conversion-dco bucket to default to"))?;
    let baselines = config.report_baselines(&target);
    build_report(events, catalog, &config.buckets, window, &target, &baselines)
}

/// Replays incremental training over an event log, reproducing the in-loop
/// schedule: one batch per `period_ticks` of report time plus a final partial
/// batch, with the downsampling RNG seeded from the config seed.
pub fn run_train(
    config_path: &Path,
    events_path: &Path,
    catalog_path: &Path,
    out_model: &Path,
) -> Result<ModelState> {
    let (config, world_config) = load_configs(config_path)?;
    let events = read_events(events_path)?;
    let catalog = load_catalog(catalog_path)?;
    train_from_log(&config, &world_config, &events, &catalog, Some(out_model))
}

pub(crate) fn train_from_log(
    config: &ExperimentConfig,
    world_config: &WorldConfig,
    events: &[Event],
    catalog: &Catalog,
    out_model: Option<&Path>,
) -> Result<ModelState> {
    let structure = config.structure_for(world_config.segment_keys.len());
    let mut model = ModelState::new(structure, world_config.segment_keys.clone(), config.seed)?;
    let mut train_rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, "train"));
    let pipeline = ExamplePipeline {
        catalog,
        segment_keys: &world_config.segment_keys,
        downsample: config.training.downsample,
    };
    let period = config.training.period_ticks;
    let periods = config.ticks.div_ceil(period);
    let mut cursor = 0usize;
    for g in 0..periods {
        let end_tick = ((g + 1) * period).min(config.ticks);
        let mut upper = cursor;
        while upper < events.len() && events[upper].report_tick() < end_tick {
            upper += 1;
        }
        let examples = pipeline.label_and_sample(&events[cursor..upper], &mut train_rng)?;
        train_period(&mut model, &examples)?;
        cursor = upper;
    }
    if let Some(path) = out_model {
        save_snapshot(&model, path)?;
    }
    Ok(model)
}

/// Standalone table generation from a model snapshot and a catalog; given the
/// artifacts of a simulation it reproduces the simulation's table byte for
/// byte.
pub fn run_p2d(
    config_path: &Path,
    model_path: &Path,
    catalog_path: &Path,
    out_table: &Path,
) -> Result<()> {
    let (config, world_config) = load_configs(config_path)?;
    let model = load_snapshot(model_path)?;
    let catalog = load_catalog(catalog_path)?;
    if model.user_features() != world_config.segment_keys {
        return Err(Error::Structural(format!(
            "snapshot user features {:?} do not match the configured segment keys {:?}",
            model.user_features(),
            world_config.segment_keys
        )));
    }
    let table = generate_table(
        &model,
        &catalog.dco_ads(),
        &world_config.segment_domains,
        &config.p2d_params(),
    )?;
    save_table(&table, out_table)?;
    Ok(())
}

pub struct ReportOptions {
    pub config_path: PathBuf,
    pub events_paths: Vec<PathBuf>,
    pub catalog_path: PathBuf,
    pub window: Option<(u64, u64)>,
    pub out_dir: Option<PathBuf>,
}

/// Renders the lift report for one or more event logs. Returns the
/// human-readable table; optionally writes report.txt and report.json.
pub fn run_report(options: &ReportOptions) -> Result<(ReportDoc, String)> {
    let (mut config, _world_config) = load_configs(&options.config_path)?;
    if let Some((start, end)) = options.window {
        config.report.window_start = Some(start);
        config.report.window_end = Some(end);
    }
    let mut events = Vec::new();
    for path in &options.events_paths {
        events.extend(read_events(path)?);
    }
    let catalog = load_catalog(&options.catalog_path)?;
    let report = report_doc(&config, &events, &catalog)?;
    let rendered = render_report(&report);
    if let Some(out_dir) = &options.out_dir {
        fs::create_dir_all(out_dir)?;
        fs::write(out_dir.join("report.txt"), &rendered)?;
        let json = ReportJson {
            seed: config.seed,
            ticks: config.ticks,
            model_version: String::new(),
            skipped_events: 0,
            report: &report,
        };
        fs::write(
            out_dir.join("report.json"),
            serde_json::to_string_pretty(&json)? + "\n",
        )?;
    }
    Ok((report, rendered))
}

/// Byte-compares two artifacts; used by determinism checks.
pub fn files_identical(a: &Path, b: &Path) -> Result<bool> {
    Ok(fs::read(a)? == fs::read(b)?)
}
