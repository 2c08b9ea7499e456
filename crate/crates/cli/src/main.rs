use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use radiomap::datasetio::{evaluate_dirs, export_dataset, SampleRecord, TARGET_FILE, TX_FILE};
use radiomap::exec::{with_threads, Execution};
use radiomap::features::{synthesize, FeatureBounds, FeatureFamily};
use radiomap::pipeline::{self, PatternRef, PipelineConfig};
use radiomap::placement::{place_transmitters, SearchParams, TxConfig};
use radiomap::propagation::{simulate_radio_map, SimParams};
use radiomap::scene::load_scene_dir;
use radiomap::synth::{generate_synthetic_scene, SyntheticSpec};
use radiomap::visibility::los_maps;

#[derive(Parser)]
#[command(
    name = "radiomap",
    version,
    about = "Synthetic radio-map dataset generation"
)]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    /// Overrides the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pipeline config (JSON); supplies defaults to every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic scene directory.
    GenScene {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        grid_size: usize,
        #[arg(long, default_value_t = 8)]
        n_buildings: usize,
        #[arg(long, default_value_t = 6.0)]
        height_min: f64,
        #[arg(long, default_value_t = 24.0)]
        height_max: f64,
        #[arg(long, default_value_t = 0.05)]
        vegetation_density: f64,
    },
    /// Enumerate valid rooftop transmitter configurations.
    PlaceTx {
        #[arg(long)]
        scene: PathBuf,
        /// Built-in pattern indices (default: all, or the config's list).
        #[arg(long, value_delimiter = ',')]
        patterns: Option<Vec<usize>>,
        #[arg(long)]
        azimuth_step: Option<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        tilts: Option<Vec<f64>>,
        #[arg(long)]
        min_coverage: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate the radio map of one transmitter.
    Simulate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        tx: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Simulation parameters (JSON); missing fields take defaults.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Line-of-sight maps of one transmitter.
    Los {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        tx: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Feature channels of one transmitter.
    Features {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        tx: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Comma-separated families, e.g. basic,cylindrical,los_abs.
        #[arg(long, value_delimiter = ',')]
        families: Option<Vec<String>>,
        /// Keep physical units instead of [-1, 1].
        #[arg(long)]
        raw: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Package sample directories into a dataset with a manifest.
    ExportDataset {
        /// Sample directories, or directories containing them.
        #[arg(long = "samples", required = true, num_args = 1..)]
        samples: Vec<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare predicted and true gray maps.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value_t = MetricArg::Rmse)]
        metric: MetricArg,
    },
    /// Full pipeline: scenes → placement → simulation → features → export.
    Run {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Rmse,
    Nmse,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn pick_tx(path: &Path, index: usize) -> Result<TxConfig> {
    let txs: Vec<TxConfig> = read_json(path)?;
    match txs.into_iter().nth(index) {
        Some(tx) => Ok(tx),
        None => bail!("{} has no entry {index}", path.display()),
    }
}

fn sample_dirs(roots: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for root in roots {
        if root.join(TARGET_FILE).exists() {
            out.push(root.clone());
            continue;
        }
        let mut children: Vec<PathBuf> = fs::read_dir(root)
            .with_context(|| format!("listing {}", root.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(TARGET_FILE).exists())
            .collect();
        if children.is_empty() {
            bail!("no sample directories under {}", root.display());
        }
        children.sort();
        out.extend(children);
    }
    Ok(out)
}

fn execute(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let exec = Execution::Parallel;

    match cli.command {
        Command::GenScene {
            out,
            grid_size,
            n_buildings,
            height_min,
            height_max,
            vegetation_density,
        } => {
            let spec = SyntheticSpec {
                grid_size,
                n_buildings,
                height_range: [height_min, height_max],
                vegetation_density,
                seed: cfg.seed,
                ..SyntheticSpec::default()
            };
            let id = out
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "scene".into());
            generate_synthetic_scene(id, &spec)?.save(&out)?;
            println!("wrote scene {}", out.display());
        }
        Command::PlaceTx {
            scene,
            patterns,
            azimuth_step,
            tilts,
            min_coverage,
            out,
        } => {
            let scene = load_scene_dir(&scene)?;
            let params = SearchParams {
                azimuth_step: azimuth_step.unwrap_or(cfg.placement.azimuth_step),
                tilts: tilts.unwrap_or(cfg.placement.tilts.clone()),
                min_coverage: min_coverage.unwrap_or(cfg.placement.min_coverage),
            };
            let refs: Vec<PatternRef> = match patterns {
                Some(ids) => ids.into_iter().map(PatternRef::Table).collect(),
                None => cfg.patterns.clone(),
            };
            let mut all = Vec::new();
            for (pid, r) in refs.iter().enumerate() {
                let pattern = r.resolve()?;
                all.extend(place_transmitters(&scene, &pattern, pid, &params, exec)?);
            }
            write_json(&out, &all)?;
            println!(
                "{} transmitter configurations -> {}",
                all.len(),
                out.display()
            );
        }
        Command::Simulate {
            scene,
            tx,
            index,
            params,
            out,
        } => {
            let scene = load_scene_dir(&scene)?;
            let tx = pick_tx(&tx, index)?;
            let params: SimParams = match params {
                Some(p) => read_json(&p)?,
                None => cfg.sim.clone(),
            };
            let map = simulate_radio_map(&scene, &tx, &params)?;
            fs::create_dir_all(&out)?;
            map.gray.write(out.join(TARGET_FILE))?;
            map.pl_db.write(out.join("pl_db.f32"))?;
            write_json(&out.join(TX_FILE), &tx)?;
            println!("wrote radio map to {}", out.display());
        }
        Command::Los {
            scene,
            tx,
            index,
            out,
        } => {
            let scene = load_scene_dir(&scene)?;
            let tx = pick_tx(&tx, index)?;
            let maps = los_maps(&scene, &tx, &cfg.los, exec)?;
            let dir = out.join("los");
            fs::create_dir_all(&dir)?;
            maps.ground.to_f64().write(dir.join("ground.f32"))?;
            maps.top.to_f64().write(dir.join("top.f32"))?;
            maps.min_visible.write(dir.join("min_visible.f32"))?;
            maps.cone_mask.to_f64().write(dir.join("cone.f32"))?;
            println!("wrote LoS maps to {}", dir.display());
        }
        Command::Features {
            scene,
            tx,
            index,
            families,
            raw,
            out,
        } => {
            let scene = load_scene_dir(&scene)?;
            let tx = pick_tx(&tx, index)?;
            let families: Vec<FeatureFamily> = match families {
                Some(names) => names.iter().map(|n| n.parse()).collect::<Result<_, _>>()?,
                None => cfg.features.clone(),
            };
            let los = if families.iter().any(FeatureFamily::needs_los) {
                Some(los_maps(&scene, &tx, &cfg.los, exec)?)
            } else {
                None
            };
            // same gain range as a pipeline run with this config
            let bounds = match cfg.bounds.gain_db {
                Some(_) => cfg.bounds.clone(),
                None => {
                    let patterns = cfg
                        .patterns
                        .iter()
                        .map(PatternRef::resolve)
                        .collect::<Result<Vec<_>, _>>()?;
                    FeatureBounds {
                        gain_db: FeatureBounds::covering(&patterns).gain_db,
                        ..cfg.bounds.clone()
                    }
                }
            }
            .widen_to(&tx.pattern);
            let mut stack = synthesize(
                &scene,
                &tx,
                los.as_ref(),
                cfg.los.ceiling,
                &families,
                &bounds,
                exec,
            )?;
            if !raw {
                stack = stack.normalize()?;
            }
            stack.write(&out)?;
            write_json(&out.join(TX_FILE), &tx)?;
            println!("{} channels -> {}", stack.len(), out.display());
        }
        Command::ExportDataset {
            samples,
            params,
            out,
        } => {
            let params: SimParams = match params {
                Some(p) => read_json(&p)?,
                None => cfg.sim.clone(),
            };
            let records = sample_dirs(&samples)?
                .iter()
                .map(|d| SampleRecord::open_or_infer(d))
                .collect::<Result<Vec<_>, _>>()?;
            let m = export_dataset(
                &records,
                &out,
                cfg.split_seed.unwrap_or(cfg.seed),
                &params,
                exec,
            )?;
            println!(
                "exported {} samples ({} train / {} val / {} test scenes) -> {}",
                m.samples.len(),
                m.splits.train.len(),
                m.splits.val.len(),
                m.splits.test.len(),
                out.display()
            );
        }
        Command::Evaluate {
            pred,
            truth,
            metric,
        } => {
            let r = evaluate_dirs(&pred, &truth)?;
            match metric {
                MetricArg::Rmse => println!(
                    "rmse_gray {:.6} rmse_db {:.4} ({} maps)",
                    r.rmse_gray, r.rmse_db, r.n_maps
                ),
                MetricArg::Nmse => println!("nmse {:.6e} ({} maps)", r.nmse_db, r.n_maps),
            }
        }
        Command::Run { out } => {
            let m = pipeline::run(&cfg, &out, cli.jobs)?;
            println!("{} samples -> {}", m.samples.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs;
    match with_threads(jobs, || execute(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            ExitCode::FAILURE
        }
    }
}
