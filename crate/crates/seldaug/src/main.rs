//! Pipeline driver: simulate RIR banks, extract and purge events from an
//! annotated dataset, enhance the survivors, and render new labeled folds.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seldaug::array::ArraySpec;
use seldaug::augment::{generate_folds, RirBank, SourceBank, SourceEntry};
use seldaug::config::PipelineConfig;
use seldaug::dsp::stft::stft;
use seldaug::eliminate::{eliminate, AcceptAll, Detector, PredictionsFile};
use seldaug::enhance::{cgmm_masks, mvdr_enhance};
use seldaug::extract::{extract_events, load_segments, save_segments};
use seldaug::io::geometry::read_geometry;
use seldaug::io::metadata::read_metadata;
use seldaug::io::wav::read_wav;
use seldaug::room::{
    simulate_sh_rir, Placement, RoomSpec, Rotation, ShIr, SimOptions,
};

#[derive(Parser)]
#[command(name = "seldaug", version, about = "Spatial audio fold augmentation pipeline")]
struct Cli {
    /// Pipeline configuration file (TOML); defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread count; all cores by default.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate rooms and write the spherical-harmonic RIR bank.
    SimulateRir {
        /// Total RIR count (rooms x placements scaled to fit); must be > 0.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Extract static single-source events from the annotated dataset.
    Extract {
        /// Directory to write the extracted segment bank into.
        #[arg(long, default_value = "banks/extracted")]
        out: PathBuf,
    },
    /// Purge interfered segments (detection first, then eigenvalue test).
    Eliminate {
        /// Extracted segment bank.
        #[arg(long, default_value = "banks/extracted")]
        input: PathBuf,
        /// Directory for the surviving segments.
        #[arg(long, default_value = "banks/kept")]
        out: PathBuf,
        /// Optional per-clip detector predictions file; every labeled frame
        /// counts as detected when absent.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
    /// CGMM-masked MVDR enhancement of kept segments into the source bank.
    Enhance {
        #[arg(long, default_value = "banks/kept")]
        input: PathBuf,
    },
    /// Render the configured folds from the source and RIR banks.
    Augment,
    /// Print bank statistics and the elimination report when present.
    Inspect,
    /// Run every stage in order against the shared configuration.
    RunAll {
        /// Detector predictions file for the elimination stage.
        #[arg(long)]
        predictions: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .is_err()
        {
            eprintln!("error: could not configure {jobs} worker threads");
            return ExitCode::from(2);
        }
    }
    let cfg = match load_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(&cli.command, &cfg) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)
            .with_context(|| format!("loading {}", path.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.master_seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_array(cfg: &PipelineConfig) -> anyhow::Result<ArraySpec> {
    match &cfg.geometry_file {
        Some(path) => Ok(read_geometry(path, cfg.sample_rate)?),
        None => Ok(ArraySpec::default_em32()),
    }
}

fn run(cmd: &Command, cfg: &PipelineConfig) -> anyhow::Result<()> {
    match cmd {
        Command::SimulateRir { count } => cmd_simulate_rir(cfg, *count),
        Command::Extract { out } => cmd_extract(cfg, out),
        Command::Eliminate {
            input,
            out,
            predictions,
        } => cmd_eliminate(cfg, input, out, predictions.as_deref()),
        Command::Enhance { input } => cmd_enhance(cfg, input),
        Command::Augment => cmd_augment(cfg),
        Command::Inspect => cmd_inspect(cfg),
        Command::RunAll { predictions } => {
            let extracted = PathBuf::from("banks/extracted");
            let kept = PathBuf::from("banks/kept");
            cmd_simulate_rir(cfg, None)?;
            cmd_extract(cfg, &extracted)?;
            cmd_eliminate(cfg, &extracted, &kept, predictions.as_deref())?;
            cmd_enhance(cfg, &kept)?;
            cmd_augment(cfg)
        }
    }
}

/// Sample rooms and placements from the configured ranges and simulate the
/// bank. An existing index is trusted and left in place.
fn cmd_simulate_rir(cfg: &PipelineConfig, count: Option<usize>) -> anyhow::Result<()> {
    if count == Some(0) {
        bail!("--count must be positive");
    }
    if cfg.paths.rir_bank.join("index.toml").exists() {
        println!(
            "RIR bank {} already exists, skipping",
            cfg.paths.rir_bank.display()
        );
        return Ok(());
    }
    let array = load_array(cfg)?;
    let total = count.unwrap_or(cfg.rooms.room_count * cfg.rooms.sources_per_room);
    let rooms = cfg.rooms.room_count.min(total).max(1);
    let per_room = total.div_ceil(rooms);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.master_seed ^ 0x5249_5242); // "RIRB"
    let mut jobs: Vec<(usize, RoomSpec, Placement, u64)> = Vec::with_capacity(total);
    for room_id in 0..rooms {
        let dims = [
            rng.gen_range(cfg.rooms.dim_x_range[0]..=cfg.rooms.dim_x_range[1]),
            rng.gen_range(cfg.rooms.dim_y_range[0]..=cfg.rooms.dim_y_range[1]),
            rng.gen_range(cfg.rooms.dim_z_range[0]..=cfg.rooms.dim_z_range[1]),
        ];
        let rt60 = rng.gen_range(cfg.rooms.rt60_range[0]..=cfg.rooms.rt60_range[1]);
        let room = RoomSpec::new(dims, rt60)?;
        let array_pos = sample_point(&mut rng, dims, 0.5);
        for _ in 0..per_room {
            if jobs.len() == total {
                break;
            }
            let source_pos = loop {
                let p = sample_point(&mut rng, dims, 0.3);
                let d = (0..3).map(|a| (p[a] - array_pos[a]).powi(2)).sum::<f64>();
                if d.sqrt() >= 0.5 {
                    break p;
                }
            };
            let mut placement = Placement::new(source_pos, array_pos);
            placement.array_orientation =
                Rotation::from_yaw(rng.gen_range(0.0..std::f64::consts::TAU));
            placement.validate(&room)?;
            jobs.push((room_id, room.clone(), placement, rng.gen()));
        }
    }

    println!("simulating {} RIRs in {rooms} rooms", jobs.len());
    let irs: Vec<(usize, ShIr)> = {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|(room_id, room, placement, seed)| {
                let length =
                    ((1.3 * room.rt60 + 0.05) * cfg.sample_rate as f64).ceil() as usize;
                let ir = simulate_sh_rir(
                    room,
                    placement,
                    &array,
                    &cfg.encoding,
                    length,
                    &SimOptions::default(),
                    *seed,
                )?;
                Ok((*room_id, ir))
            })
            .collect::<seldaug::Result<Vec<_>>>()?
    };
    let bank = RirBank::from_sh_irs(irs)?;
    bank.save(&cfg.paths.rir_bank)?;
    println!(
        "wrote {} RIRs to {}",
        bank.entries.len(),
        cfg.paths.rir_bank.display()
    );
    Ok(())
}

fn sample_point(rng: &mut ChaCha8Rng, dims: [f64; 3], margin: f64) -> [f64; 3] {
    let mut p = [0.0; 3];
    for axis in 0..3 {
        let m = margin.min(dims[axis] / 4.0);
        p[axis] = rng.gen_range(m..dims[axis] - m);
    }
    p
}

/// Walk the dataset for (clip.wav, clip.csv) pairs and extract static
/// single-source segments from each.
fn cmd_extract(cfg: &PipelineConfig, out: &PathBuf) -> anyhow::Result<()> {
    let root = &cfg.paths.dataset_root;
    if !root.is_dir() {
        bail!("dataset root {} is not a directory", root.display());
    }
    let mut wavs: Vec<PathBuf> = Vec::new();
    for entry in walk(root)? {
        if entry.extension().is_some_and(|e| e == "wav")
            && entry.with_extension("csv").exists()
        {
            wavs.push(entry);
        }
    }
    wavs.sort();
    if wavs.is_empty() {
        bail!("no wav/csv pairs under {}", root.display());
    }
    let mut segments = Vec::new();
    for path in &wavs {
        let wav = read_wav(path).with_context(|| path.display().to_string())?;
        let labels = read_metadata(path.with_extension("csv"))?;
        let clip_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        segments.extend(extract_events(
            &wav.channels,
            wav.sample_rate,
            &labels,
            &clip_id,
            &cfg.extraction,
        )?);
    }
    println!("extracted {} segments from {} clips", segments.len(), wavs.len());
    save_segments(out, &segments)?;
    Ok(())
}

fn walk(dir: &std::path::Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    Ok(out)
}

fn cmd_eliminate(
    cfg: &PipelineConfig,
    input: &PathBuf,
    out: &PathBuf,
    predictions: Option<&std::path::Path>,
) -> anyhow::Result<()> {
    let segments = load_segments(input)?;
    let detector: Box<dyn Detector> = match predictions {
        Some(path) => Box::new(PredictionsFile::read(path)?),
        None => Box::new(AcceptAll),
    };
    let (kept, report) = eliminate(segments, detector.as_ref(), &cfg.elimination)?;
    print!("{}", report.render());
    save_segments(out, &kept)?;
    std::fs::write(out.join("report.txt"), report.render())?;
    Ok(())
}

fn cmd_enhance(cfg: &PipelineConfig, input: &PathBuf) -> anyhow::Result<()> {
    let segments = load_segments(input)?;
    if segments.is_empty() {
        bail!("no segments to enhance in {}", input.display());
    }
    let sample_rate = segments[0].sample_rate;
    use rayon::prelude::*;
    let entries: Vec<SourceEntry> = segments
        .par_iter()
        .map(|seg| {
            let spec = stft(
                &seg.audio,
                cfg.elimination.stft_frame_len,
                cfg.elimination.stft_hop,
                seg.sample_rate,
            )?;
            let masks = cgmm_masks(&spec, cfg.cgmm_iters)?;
            let enhanced = mvdr_enhance(&spec, &masks, 0, seg.class_id, &seg.id())?;
            Ok(SourceEntry {
                id: enhanced.provenance,
                class_id: enhanced.class_id,
                audio: enhanced.audio,
            })
        })
        .collect::<seldaug::Result<Vec<_>>>()?;
    let bank = SourceBank {
        entries,
        sample_rate,
    };
    bank.save(&cfg.paths.source_bank)?;
    println!(
        "enhanced {} segments into {}",
        bank.entries.len(),
        cfg.paths.source_bank.display()
    );
    Ok(())
}

fn cmd_augment(cfg: &PipelineConfig) -> anyhow::Result<()> {
    let sources = SourceBank::load(&cfg.paths.source_bank)
        .with_context(|| format!("loading {}", cfg.paths.source_bank.display()))?;
    let rirs = RirBank::load(&cfg.paths.rir_bank)
        .with_context(|| format!("loading {}", cfg.paths.rir_bank.display()))?;
    let manifests = generate_folds(cfg, &sources, &rirs, &cfg.paths.output)?;
    for m in &manifests {
        println!("wrote {}", m.display());
    }
    Ok(())
}

fn cmd_inspect(cfg: &PipelineConfig) -> anyhow::Result<()> {
    if let Ok(bank) = RirBank::load(&cfg.paths.rir_bank) {
        let rooms: std::collections::BTreeSet<usize> =
            bank.entries.iter().map(|e| e.room_id).collect();
        println!(
            "rir bank: {} RIRs, {} rooms, {} Hz",
            bank.entries.len(),
            rooms.len(),
            bank.sample_rate
        );
    } else {
        println!("rir bank: absent ({})", cfg.paths.rir_bank.display());
    }
    if let Ok(bank) = SourceBank::load(&cfg.paths.source_bank) {
        let mut classes: std::collections::BTreeMap<u32, usize> =
            std::collections::BTreeMap::new();
        for e in &bank.entries {
            *classes.entry(e.class_id).or_default() += 1;
        }
        println!(
            "source bank: {} sources over {} classes",
            bank.entries.len(),
            classes.len()
        );
        for (class, n) in classes {
            println!("  class {class}: {n}");
        }
    } else {
        println!("source bank: absent ({})", cfg.paths.source_bank.display());
    }
    for dir in ["banks/kept", "banks/extracted"] {
        let report = std::path::Path::new(dir).join("report.txt");
        if let Ok(text) = std::fs::read_to_string(&report) {
            println!("--- {} ---", report.display());
            print!("{text}");
            break;
        }
    }
    Ok(())
}
