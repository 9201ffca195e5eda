//! Mixture planning and rendering: sample (source, RIR) combinations,
//! convolve, overlay, add diffuse noise, and emit labeled FOA clips in
//! fold directories.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{FoldConfig, PipelineConfig};
use crate::dsp::fft_convolve;
use crate::error::{Error, Result};
use crate::io::metadata::{format_metadata, LabelRow, LABEL_HOP_SECS};
use crate::io::wav::{read_wav, write_wav_f32, WavData};
use crate::room::ShIrMeta;
use crate::special::SphDirection;

/// Peak level above which a rendered clip is renormalized.
const CLIP_CEILING: f64 = 0.99;

// ---------------------------------------------------------------------------
// banks

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceIndexEntry {
    pub id: String,
    pub class_id: u32,
    pub file: String,
}

#[derive(Debug, Clone)]
pub struct SourceEntry {
    pub id: String,
    pub class_id: u32,
    pub audio: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SourceBank {
    pub entries: Vec<SourceEntry>,
    pub sample_rate: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct SourceIndex {
    sample_rate: u32,
    entries: Vec<SourceIndexEntry>,
}

impl SourceBank {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut index = SourceIndex {
            sample_rate: self.sample_rate,
            entries: Vec::new(),
        };
        for (i, e) in self.entries.iter().enumerate() {
            let file = format!("src_{i:05}.wav");
            write_wav_f32(
                dir.join(&file),
                &WavData {
                    channels: vec![e.audio.clone()],
                    sample_rate: self.sample_rate,
                },
            )?;
            index.entries.push(SourceIndexEntry {
                id: e.id.clone(),
                class_id: e.class_id,
                file,
            });
        }
        // the index is the completion marker, written last
        let text = toml::to_string(&index).map_err(|e| Error::config(e.to_string()))?;
        std::fs::write(dir.join("index.toml"), text)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join("index.toml"))?;
        let index: SourceIndex = toml::from_str(&text).map_err(|e| Error::Parse {
            path: dir.join("index.toml"),
            line: 0,
            msg: e.message().to_string(),
        })?;
        let mut entries = Vec::with_capacity(index.entries.len());
        for e in &index.entries {
            let wav = read_wav(dir.join(&e.file))?;
            if wav.sample_rate != index.sample_rate {
                return Err(Error::config(format!(
                    "{}: sample rate {} does not match bank rate {}",
                    e.file, wav.sample_rate, index.sample_rate
                )));
            }
            entries.push(SourceEntry {
                id: e.id.clone(),
                class_id: e.class_id,
                audio: wav.channels.into_iter().next().unwrap_or_default(),
            });
        }
        Ok(SourceBank {
            entries,
            sample_rate: index.sample_rate,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RirIndexEntry {
    pub id: String,
    pub room_id: usize,
    pub file: String,
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub distance: f64,
    pub rt60: f64,
}

#[derive(Debug, Clone)]
pub struct RirEntry {
    pub id: String,
    pub room_id: usize,
    pub channels: Vec<Vec<f64>>,
    pub doa: SphDirection,
    pub distance: f64,
    pub rt60: f64,
}

#[derive(Debug, Clone)]
pub struct RirBank {
    pub entries: Vec<RirEntry>,
    pub sample_rate: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct RirIndex {
    sample_rate: u32,
    entries: Vec<RirIndexEntry>,
}

impl RirBank {
    pub fn from_sh_irs(irs: Vec<(usize, crate::room::ShIr)>) -> Result<Self> {
        if irs.is_empty() {
            return Err(Error::config("no RIRs"));
        }
        let sample_rate = irs[0].1.sample_rate;
        let entries = irs
            .into_iter()
            .enumerate()
            .map(|(i, (room_id, ir))| {
                let meta: &ShIrMeta = &ir.meta;
                RirEntry {
                    id: format!("rir_{i:05}"),
                    room_id,
                    doa: meta.source_doa,
                    distance: meta.source_distance,
                    rt60: meta.room.rt60,
                    channels: ir.channels,
                }
            })
            .collect();
        Ok(RirBank {
            entries,
            sample_rate,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let mut index = RirIndex {
            sample_rate: self.sample_rate,
            entries: Vec::new(),
        };
        for (i, e) in self.entries.iter().enumerate() {
            let file = format!("rir_{i:05}.wav");
            write_wav_f32(
                dir.join(&file),
                &WavData {
                    channels: e.channels.clone(),
                    sample_rate: self.sample_rate,
                },
            )?;
            index.entries.push(RirIndexEntry {
                id: e.id.clone(),
                room_id: e.room_id,
                file,
                azimuth_deg: e.doa.azimuth.to_degrees(),
                elevation_deg: e.doa.elevation.to_degrees(),
                distance: e.distance,
                rt60: e.rt60,
            });
        }
        let text = toml::to_string(&index).map_err(|e| Error::config(e.to_string()))?;
        std::fs::write(dir.join("index.toml"), text)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let text = std::fs::read_to_string(dir.join("index.toml"))?;
        let index: RirIndex = toml::from_str(&text).map_err(|e| Error::Parse {
            path: dir.join("index.toml"),
            line: 0,
            msg: e.message().to_string(),
        })?;
        let mut entries = Vec::with_capacity(index.entries.len());
        for e in &index.entries {
            let wav = read_wav(dir.join(&e.file))?;
            entries.push(RirEntry {
                id: e.id.clone(),
                room_id: e.room_id,
                channels: wav.channels,
                doa: SphDirection::from_degrees(e.azimuth_deg, e.elevation_deg)?,
                distance: e.distance,
                rt60: e.rt60,
            });
        }
        Ok(RirBank {
            entries,
            sample_rate: index.sample_rate,
        })
    }

    pub fn room_ids(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self.entries.iter().map(|e| e.room_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

// ---------------------------------------------------------------------------
// planning

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedEvent {
    pub source_idx: usize,
    pub rir_idx: usize,
    /// Onset in samples.
    pub onset: usize,
    pub gain_db: f64,
    /// Label track id, distinct among time-overlapping events.
    pub track: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePlan {
    pub clip_id: String,
    pub fold: usize,
    pub room_id: usize,
    pub seed: u64,
    pub events: Vec<PlannedEvent>,
    /// (noise seed, SNR in dB) when noise is enabled.
    pub noise: Option<(u64, f64)>,
    pub duration: usize,
}

/// Per-clip RNG seed derived from the master seed and clip coordinates so
/// parallel rendering order never changes output.
pub fn clip_seed(master_seed: u64, fold: usize, clip: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update((fold as u64).to_le_bytes());
    h.update((clip as u64).to_le_bytes());
    let digest = h.finalize();
    // keep within i64 range so seeds survive a TOML manifest round trip
    u64::from_le_bytes(digest[..8].try_into().unwrap()) & (i64::MAX as u64)
}

/// Count of events sounding at any instant if `candidate` is added.
fn peak_polyphony(intervals: &[(usize, usize)], candidate: (usize, usize)) -> usize {
    let mut edges: Vec<(usize, i32)> = Vec::with_capacity(2 * intervals.len() + 2);
    for &(s, e) in intervals.iter().chain(std::iter::once(&candidate)) {
        edges.push((s, 1));
        edges.push((e, -1));
    }
    edges.sort();
    let mut depth = 0;
    let mut peak = 0;
    for (_, d) in edges {
        depth += d;
        peak = peak.max(depth);
    }
    peak as usize
}

/// Draw a mixture plan for one clip.
pub fn sample_plan(
    master_seed: u64,
    fold: usize,
    clip: usize,
    sources: &SourceBank,
    rirs: &RirBank,
    cfg: &FoldConfig,
    sample_rate: u32,
) -> Result<MixturePlan> {
    if sources.entries.is_empty() {
        return Err(Error::config("source bank is empty"));
    }
    if rirs.entries.is_empty() {
        return Err(Error::config("RIR bank is empty"));
    }
    let seed = clip_seed(master_seed, fold, clip);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rooms = rirs.room_ids();
    let room_id = rooms[rng.gen_range(0..rooms.len())];
    let room_rirs: Vec<usize> = rirs
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.room_id == room_id)
        .map(|(i, _)| i)
        .collect();

    let duration = (cfg.clip_duration_secs * sample_rate as f64).round() as usize;
    let target_events =
        (cfg.events_per_minute * cfg.clip_duration_secs / 60.0).round() as usize;
    let mut events = Vec::new();
    let mut intervals: Vec<(usize, usize)> = Vec::new();
    for _ in 0..target_events {
        let source_idx = rng.gen_range(0..sources.entries.len());
        let rir_idx = room_rirs[rng.gen_range(0..room_rirs.len())];
        let gain_db = rng.gen_range(cfg.gain_range_db[0]..=cfg.gain_range_db[1]);
        let wet_len = sources.entries[source_idx].audio.len()
            + rirs.entries[rir_idx].channels[0].len()
            - 1;
        if wet_len >= duration {
            continue;
        }
        // bounded retries against the polyphony cap
        for _ in 0..30 {
            let onset = rng.gen_range(0..duration - wet_len);
            if peak_polyphony(&intervals, (onset, onset + wet_len)) <= cfg.polyphony_cap {
                intervals.push((onset, onset + wet_len));
                events.push(PlannedEvent {
                    source_idx,
                    rir_idx,
                    onset,
                    gain_db,
                    track: 0,
                });
                break;
            }
        }
    }
    events.sort_by_key(|e| e.onset);
    assign_tracks(&mut events, sources);
    let noise = cfg.noise.enabled.then(|| {
        (
            rng.gen::<u64>(),
            rng.gen_range(cfg.noise.snr_range_db[0]..=cfg.noise.snr_range_db[1]),
        )
    });
    Ok(MixturePlan {
        clip_id: format!("fold{}_room{}_mix{:03}", fold, room_id, clip),
        fold,
        room_id,
        seed,
        events,
        noise,
        duration,
    })
}

/// Give overlapping events distinct label tracks (greedy, by onset).
fn assign_tracks(events: &mut [PlannedEvent], sources: &SourceBank) {
    let spans: Vec<(usize, usize)> = events
        .iter()
        .map(|e| (e.onset, e.onset + sources.entries[e.source_idx].audio.len()))
        .collect();
    for i in 0..events.len() {
        let mut used: Vec<u32> = Vec::new();
        for j in 0..i {
            if spans[j].1 > spans[i].0 && spans[i].1 > spans[j].0 {
                used.push(events[j].track);
            }
        }
        let mut track = 0;
        while used.contains(&track) {
            track += 1;
        }
        events[i].track = track;
    }
}

// ---------------------------------------------------------------------------
// rendering

#[derive(Debug, Clone)]
pub struct RenderedClip {
    /// FOA channels (W, Y, Z, X), `duration` samples.
    pub audio: Vec<Vec<f64>>,
    pub labels: Vec<LabelRow>,
    /// Gain applied to avoid clipping, dB (negative), if any.
    pub trim_db: Option<f64>,
}

fn gaussian_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (-2.0 * u1.ln()).sqrt();
    (r * u2.cos(), r * u2.sin())
}

pub fn render_clip(
    plan: &MixturePlan,
    sources: &SourceBank,
    rirs: &RirBank,
) -> Result<RenderedClip> {
    if sources.sample_rate != rirs.sample_rate {
        return Err(Error::config("source and RIR banks disagree on sample rate"));
    }
    let sr = sources.sample_rate;
    let foa_channels = rirs
        .entries
        .first()
        .map(|e| e.channels.len())
        .ok_or_else(|| Error::config("RIR bank is empty"))?;
    let mut audio = vec![vec![0.0; plan.duration]; foa_channels];
    let mut labels = Vec::new();
    let hop = (LABEL_HOP_SECS * sr as f64).round() as usize;

    for ev in &plan.events {
        let src = sources
            .entries
            .get(ev.source_idx)
            .ok_or_else(|| Error::config("plan references missing source"))?;
        let rir = rirs
            .entries
            .get(ev.rir_idx)
            .ok_or_else(|| Error::config("plan references missing RIR"))?;
        let gain = 10f64.powf(ev.gain_db / 20.0);
        let wet = fft_convolve(&src.audio, &rir.channels);
        for (ch, out) in audio.iter_mut().enumerate() {
            for (i, &v) in wet[ch].iter().enumerate() {
                let t = ev.onset + i;
                if t < plan.duration {
                    out[t] += gain * v;
                }
            }
        }
        // labels cover the dry event span at the RIR's stored direction
        let first_frame = ev.onset.div_ceil(hop);
        let last_frame = (ev.onset + src.audio.len()) / hop;
        for frame in first_frame..last_frame {
            labels.push(LabelRow {
                frame: frame as u32,
                class: src.class_id,
                track: ev.track,
                azimuth: rir.doa.azimuth.to_degrees().round() as i32,
                elevation: rir.doa.elevation.to_degrees().round() as i32,
            });
        }
    }

    if let Some((noise_seed, snr_db)) = plan.noise {
        let signal_power = audio[0].iter().map(|v| v * v).sum::<f64>()
            / plan.duration as f64;
        if signal_power > 0.0 {
            let noise_power = signal_power / 10f64.powf(snr_db / 10.0);
            let sigma = noise_power.sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
            // diffuse model: independent noise per SH channel, first-order
            // channels 3 dB below W
            for (ch, out) in audio.iter_mut().enumerate() {
                let level = if ch == 0 {
                    sigma
                } else {
                    sigma * 10f64.powf(-3.0 / 20.0)
                };
                let mut i = 0;
                while i < out.len() {
                    let (a, b) = gaussian_pair(&mut rng);
                    out[i] += level * a;
                    if i + 1 < out.len() {
                        out[i + 1] += level * b;
                    }
                    i += 2;
                }
            }
        }
    }

    let peak = audio
        .iter()
        .flat_map(|c| c.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut trim_db = None;
    if peak > CLIP_CEILING {
        let scale = CLIP_CEILING / peak;
        for c in audio.iter_mut() {
            for v in c.iter_mut() {
                *v *= scale;
            }
        }
        trim_db = Some(20.0 * scale.log10());
    }
    if audio.iter().flat_map(|c| c.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Numerical("rendered clip contains non-finite samples".into()));
    }
    labels.sort_by_key(|r| (r.frame, r.track, r.class));
    Ok(RenderedClip {
        audio,
        labels,
        trim_db,
    })
}

// ---------------------------------------------------------------------------
// fold generation

#[derive(Debug, Serialize, Deserialize)]
pub struct ClipRecord {
    pub clip_id: String,
    pub seed: u64,
    pub wav: String,
    pub csv: String,
    pub trim_db: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FoldManifest {
    pub fold: usize,
    pub master_seed: u64,
    pub source_bank_hash: String,
    pub rir_bank_hash: String,
    pub clips: Vec<ClipRecord>,
}

fn index_hash(dir: &Path) -> Result<String> {
    let bytes = std::fs::read(dir.join("index.toml"))?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

/// Render every clip of every fold into the output directory. Existing
/// clip files are reused (the contract is byte-identical regeneration), and
/// each fold's manifest is written only after all of its clips.
pub fn generate_folds(
    cfg: &PipelineConfig,
    sources: &SourceBank,
    rirs: &RirBank,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir)?;
    let src_hash = index_hash(&cfg.paths.source_bank).unwrap_or_default();
    let rir_hash = index_hash(&cfg.paths.rir_bank).unwrap_or_default();
    let mut manifests = Vec::new();
    for fold in 1..=cfg.folds.fold_count {
        let plans: Vec<MixturePlan> = (0..cfg.folds.clips_per_fold)
            .map(|clip| {
                sample_plan(
                    cfg.master_seed,
                    fold,
                    clip,
                    sources,
                    rirs,
                    &cfg.folds,
                    cfg.sample_rate,
                )
            })
            .collect::<Result<_>>()?;
        let rendered: Vec<(String, String, Option<f64>, u64)> = {
            use rayon::prelude::*;
            plans
                .par_iter()
                .map(|plan| {
                    let wav_name = format!("{}.wav", plan.clip_id);
                    let csv_name = format!("{}.csv", plan.clip_id);
                    let wav_path = out_dir.join(&wav_name);
                    let csv_path = out_dir.join(&csv_name);
                    let clip = render_clip(plan, sources, rirs)?;
                    if !wav_path.exists() || !csv_path.exists() {
                        write_wav_f32(
                            &wav_path,
                            &WavData {
                                channels: clip.audio.clone(),
                                sample_rate: cfg.sample_rate,
                            },
                        )?;
                        std::fs::write(&csv_path, format_metadata(&clip.labels))?;
                    }
                    Ok((wav_name, csv_name, clip.trim_db, plan.seed))
                })
                .collect::<Result<_>>()?
        };
        let manifest = FoldManifest {
            fold,
            master_seed: cfg.master_seed,
            source_bank_hash: src_hash.clone(),
            rir_bank_hash: rir_hash.clone(),
            clips: plans
                .iter()
                .zip(rendered)
                .map(|(plan, (wav, csv, trim_db, seed))| ClipRecord {
                    clip_id: plan.clip_id.clone(),
                    seed,
                    wav,
                    csv,
                    trim_db,
                })
                .collect(),
        };
        let path = out_dir.join(format!("fold{fold}_manifest.toml"));
        let text =
            toml::to_string_pretty(&manifest).map_err(|e| Error::config(e.to_string()))?;
        std::fs::write(&path, text)?;
        manifests.push(path);
    }
    Ok(manifests)
}
