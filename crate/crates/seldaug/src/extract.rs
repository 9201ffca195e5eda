//! Label-based extraction of non-overlapping, static event segments from
//! annotated multichannel clips.
//!
//! A segment is a maximal run of label frames in which exactly one
//! (class, track) pair is active and its direction stays within a
//! great-circle tolerance of the run's mean direction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::metadata::{LabelRow, LABEL_HOP_SECS};
use crate::special::SphDirection;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractConfig {
    /// Maximum great-circle deviation from the run mean, degrees.
    pub staticity_tol_deg: f64,
    /// Minimum run length in label frames.
    pub min_frames: usize,
    /// Guard padding on each side, label frames, clipped to neighbors.
    pub guard_frames: usize,
    /// STFT frame length in samples; shorter padded segments are dropped.
    pub stft_frame_len: usize,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        ExtractConfig {
            staticity_tol_deg: 10.0,
            min_frames: 3,
            guard_frames: 1,
            stft_frame_len: 480,
        }
    }
}

/// Elimination verdicts attached to a segment as it moves through the
/// pipeline. `None` means the stage has not run yet.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Verdicts {
    pub label_ok: bool,
    pub detection_kept: Option<bool>,
    pub eigen_kept: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct EventSegment {
    /// C x samples slice of the source clip.
    pub audio: Vec<Vec<f64>>,
    pub class_id: u32,
    pub track_id: u32,
    pub doa: SphDirection,
    pub source_clip: String,
    /// Slice bounds in samples of the source clip.
    pub start: usize,
    pub end: usize,
    pub sample_rate: u32,
    pub verdicts: Verdicts,
    pub overlap_ratio: Option<f64>,
}

impl EventSegment {
    pub fn id(&self) -> String {
        format!("{}:{}-{}", self.source_clip, self.start, self.end)
    }

    pub fn duration_secs(&self) -> f64 {
        (self.end - self.start) as f64 / self.sample_rate as f64
    }
}

fn circular_mean(dirs: &[SphDirection]) -> SphDirection {
    let mut acc = [0.0; 3];
    for d in dirs {
        let u = d.unit_vector();
        acc[0] += u[0];
        acc[1] += u[1];
        acc[2] += u[2];
    }
    SphDirection::from_unit_vector(acc)
}

struct Run {
    class: u32,
    track: u32,
    /// Label frame indices, contiguous.
    first_frame: u32,
    dirs: Vec<SphDirection>,
}

/// Extract static single-source events from one clip.
///
/// `labels` must be sorted by frame (as produced by the metadata reader).
pub fn extract_events(
    audio: &[Vec<f64>],
    sample_rate: u32,
    labels: &[LabelRow],
    clip_id: &str,
    cfg: &ExtractConfig,
) -> Result<Vec<EventSegment>> {
    if audio.is_empty() || audio[0].is_empty() {
        return Err(Error::config("clip has no audio"));
    }
    let clip_len = audio[0].len();
    if audio.iter().any(|c| c.len() != clip_len) {
        return Err(Error::config("clip channels have unequal lengths"));
    }
    if labels.windows(2).any(|w| w[0].frame > w[1].frame) {
        return Err(Error::config("labels not sorted by frame"));
    }

    // group rows per frame; frames with != 1 active event break runs
    let mut runs: Vec<Run> = Vec::new();
    let mut current: Option<Run> = None;
    let mut i = 0;
    while i < labels.len() {
        let frame = labels[i].frame;
        let mut j = i;
        while j < labels.len() && labels[j].frame == frame {
            j += 1;
        }
        let solo = if j - i == 1 { Some(&labels[i]) } else { None };
        let continues = match (&current, solo) {
            (Some(run), Some(row)) => {
                run.class == row.class
                    && run.track == row.track
                    && run.first_frame + run.dirs.len() as u32 == frame
            }
            _ => false,
        };
        if !continues {
            if let Some(run) = current.take() {
                runs.push(run);
            }
        }
        if let Some(row) = solo {
            let dir = SphDirection::from_degrees(row.azimuth as f64, row.elevation as f64)?;
            match &mut current {
                Some(run) => run.dirs.push(dir),
                None => {
                    current = Some(Run {
                        class: row.class,
                        track: row.track,
                        first_frame: frame,
                        dirs: vec![dir],
                    })
                }
            }
        }
        i = j;
    }
    if let Some(run) = current {
        runs.push(run);
    }

    let hop_samples = (LABEL_HOP_SECS * sample_rate as f64).round() as usize;
    let tol = cfg.staticity_tol_deg.to_radians();
    let mut segments = Vec::new();
    let mut prev_end_frame = 0usize;
    for run in &runs {
        if run.dirs.len() < cfg.min_frames {
            continue;
        }
        let mean = circular_mean(&run.dirs);
        if run.dirs.iter().any(|d| d.angle_to(&mean) > tol) {
            continue;
        }
        let first = run.first_frame as usize;
        let last = first + run.dirs.len();
        // guard padding, clipped so padded regions never reach a frame
        // where another event is active; the earlier segment wins a
        // contested gap frame
        let pad_lo = guard_clip_low(labels, first, cfg.guard_frames);
        let pad_hi = guard_clip_high(labels, last, cfg.guard_frames);
        let start_frame = (first - pad_lo).max(prev_end_frame);
        let start = start_frame * hop_samples;
        let end = ((last + pad_hi) * hop_samples).min(clip_len);
        if start >= end || end - start < cfg.stft_frame_len {
            continue;
        }
        prev_end_frame = last + pad_hi;
        segments.push(EventSegment {
            audio: audio.iter().map(|c| c[start..end].to_vec()).collect(),
            class_id: run.class,
            track_id: run.track,
            doa: mean,
            source_clip: clip_id.to_string(),
            start,
            end,
            sample_rate,
            verdicts: Verdicts {
                label_ok: true,
                detection_kept: None,
                eigen_kept: None,
            },
            overlap_ratio: None,
        });
    }
    Ok(segments)
}

fn frame_active(labels: &[LabelRow], frame: usize) -> bool {
    labels.iter().any(|r| r.frame as usize == frame)
}

fn guard_clip_low(labels: &[LabelRow], first: usize, guard: usize) -> usize {
    let mut pad = 0;
    while pad < guard && first > pad && !frame_active(labels, first - pad - 1) {
        pad += 1;
    }
    pad
}

fn guard_clip_high(labels: &[LabelRow], last: usize, guard: usize) -> usize {
    let mut pad = 0;
    while pad < guard && !frame_active(labels, last + pad) {
        pad += 1;
    }
    pad
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentIndexEntry {
    id: String,
    file: String,
    class_id: u32,
    track_id: u32,
    azimuth_deg: f64,
    elevation_deg: f64,
    source_clip: String,
    start: usize,
    end: usize,
    label_ok: bool,
    detection_kept: Option<bool>,
    eigen_kept: Option<bool>,
    overlap_ratio: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct SegmentIndex {
    sample_rate: u32,
    entries: Vec<SegmentIndexEntry>,
}

/// Write segments as multichannel WAVs plus an index; the index is the
/// completion marker and is written last.
pub fn save_segments(dir: impl AsRef<std::path::Path>, segments: &[EventSegment]) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let sample_rate = segments.first().map_or(24000, |s| s.sample_rate);
    let mut index = SegmentIndex {
        sample_rate,
        entries: Vec::new(),
    };
    for (i, seg) in segments.iter().enumerate() {
        let file = format!("seg_{i:05}.wav");
        crate::io::wav::write_wav_f32(
            dir.join(&file),
            &crate::io::wav::WavData {
                channels: seg.audio.clone(),
                sample_rate: seg.sample_rate,
            },
        )?;
        index.entries.push(SegmentIndexEntry {
            id: seg.id(),
            file,
            class_id: seg.class_id,
            track_id: seg.track_id,
            azimuth_deg: seg.doa.azimuth.to_degrees(),
            elevation_deg: seg.doa.elevation.to_degrees(),
            source_clip: seg.source_clip.clone(),
            start: seg.start,
            end: seg.end,
            label_ok: seg.verdicts.label_ok,
            detection_kept: seg.verdicts.detection_kept,
            eigen_kept: seg.verdicts.eigen_kept,
            overlap_ratio: seg.overlap_ratio,
        });
    }
    let text = toml::to_string(&index).map_err(|e| Error::config(e.to_string()))?;
    std::fs::write(dir.join("index.toml"), text)?;
    Ok(())
}

pub fn load_segments(dir: impl AsRef<std::path::Path>) -> Result<Vec<EventSegment>> {
    let dir = dir.as_ref();
    let text = std::fs::read_to_string(dir.join("index.toml"))?;
    let index: SegmentIndex = toml::from_str(&text).map_err(|e| Error::Parse {
        path: dir.join("index.toml"),
        line: 0,
        msg: e.message().to_string(),
    })?;
    let mut out = Vec::with_capacity(index.entries.len());
    for e in &index.entries {
        let wav = crate::io::wav::read_wav(dir.join(&e.file))?;
        out.push(EventSegment {
            audio: wav.channels,
            class_id: e.class_id,
            track_id: e.track_id,
            doa: SphDirection::from_degrees(e.azimuth_deg, e.elevation_deg)?,
            source_clip: e.source_clip.clone(),
            start: e.start,
            end: e.end,
            sample_rate: wav.sample_rate,
            verdicts: Verdicts {
                label_ok: e.label_ok,
                detection_kept: e.detection_kept,
                eigen_kept: e.eigen_kept,
            },
            overlap_ratio: e.overlap_ratio,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hop() -> usize {
        2400
    }

    fn clip(frames: usize) -> Vec<Vec<f64>> {
        vec![vec![0.1; frames * hop()]; 4]
    }

    fn row(frame: u32, class: u32, track: u32, az: i32, el: i32) -> LabelRow {
        LabelRow {
            frame,
            class,
            track,
            azimuth: az,
            elevation: el,
        }
    }

    #[test]
    fn single_static_event() {
        // 2 s event (frames 10..30) in a 60-frame clip
        let labels: Vec<LabelRow> = (10..30).map(|f| row(f, 3, 0, 45, 10)).collect();
        let segs = extract_events(
            &clip(60),
            24000,
            &labels,
            "clip0",
            &ExtractConfig::default(),
        )
        .unwrap();
        assert_eq!(segs.len(), 1);
        let s = &segs[0];
        assert_eq!(s.class_id, 3);
        // guard of 1 frame each side
        assert_eq!(s.start, 9 * hop());
        assert_eq!(s.end, 31 * hop());
        assert!(s.doa.angle_to(&SphDirection::from_degrees(45.0, 10.0).unwrap()) < 1e-9);
        assert!(s.verdicts.label_ok);
        assert_eq!(s.audio.len(), 4);
        assert_eq!(s.audio[0].len(), s.end - s.start);
    }

    #[test]
    fn overlapped_frames_yield_nothing() {
        let mut labels: Vec<LabelRow> = (0..10).map(|f| row(f, 1, 0, 0, 0)).collect();
        labels.extend((0..10).map(|f| row(f, 2, 1, 90, 0)));
        labels.sort_by_key(|r| (r.frame, r.track));
        let segs = extract_events(
            &clip(20),
            24000,
            &labels,
            "clip0",
            &ExtractConfig::default(),
        )
        .unwrap();
        assert!(segs.is_empty());
    }

    #[test]
    fn partial_overlap_splits_run() {
        // event A frames 0..10; event B frames 5..8 overlaps the middle
        let mut labels: Vec<LabelRow> = (0..10).map(|f| row(f, 1, 0, 0, 0)).collect();
        labels.extend((5..8).map(|f| row(f, 2, 1, 90, 0)));
        labels.sort_by_key(|r| (r.frame, r.track));
        let segs = extract_events(
            &clip(20),
            24000,
            &labels,
            "clip0",
            &ExtractConfig::default(),
        )
        .unwrap();
        // frames 0..5 survive as a run; frames 8..10 are too short
        assert_eq!(segs.len(), 1);
        assert_eq!(segs[0].start, 0);
        // the high guard must not extend into frame 5 where B starts
        assert_eq!(segs[0].end, 5 * hop());
    }

    #[test]
    fn moving_event_excluded() {
        let labels: Vec<LabelRow> = (0..10)
            .map(|f| row(f, 1, 0, (f as i32) * 4, 0))
            .collect();
        let segs = extract_events(
            &clip(20),
            24000,
            &labels,
            "clip0",
            &ExtractConfig::default(),
        )
        .unwrap();
        assert!(segs.is_empty(), "40 degree sweep is not static");
    }

    #[test]
    fn jitter_within_tolerance_kept() {
        let labels: Vec<LabelRow> = (0..10)
            .map(|f| row(f, 1, 0, if f % 2 == 0 { 42 } else { 48 }, 10))
            .collect();
        let segs = extract_events(
            &clip(20),
            24000,
            &labels,
            "clip0",
            &ExtractConfig::default(),
        )
        .unwrap();
        assert_eq!(segs.len(), 1);
    }

    #[test]
    fn short_runs_dropped() {
        let labels: Vec<LabelRow> = (0..2).map(|f| row(f, 1, 0, 0, 0)).collect();
        let segs = extract_events(
            &clip(10),
            24000,
            &labels,
            "clip0",
            &ExtractConfig::default(),
        )
        .unwrap();
        assert!(segs.is_empty());
    }

    #[test]
    fn segments_never_overlap_and_idempotent() {
        let mut labels = Vec::new();
        labels.extend((0..8).map(|f| row(f, 1, 0, 10, 0)));
        labels.extend((9..15).map(|f| row(f, 2, 0, -60, 20)));
        labels.extend((20..28).map(|f| row(f, 1, 1, 120, -30)));
        let a = extract_events(
            &clip(40),
            24000,
            &labels,
            "clip0",
            &ExtractConfig::default(),
        )
        .unwrap();
        assert_eq!(a.len(), 3);
        for w in a.windows(2) {
            assert!(w[0].end <= w[1].start, "segments overlap");
        }
        let b = extract_events(
            &clip(40),
            24000,
            &labels,
            "clip0",
            &ExtractConfig::default(),
        )
        .unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.start, y.start);
            assert_eq!(x.end, y.end);
            assert_eq!(x.audio, y.audio);
        }
    }

    #[test]
    fn unsorted_labels_rejected() {
        let labels = vec![row(5, 1, 0, 0, 0), row(2, 1, 0, 0, 0)];
        assert!(extract_events(
            &clip(10),
            24000,
            &labels,
            "clip0",
            &ExtractConfig::default()
        )
        .is_err());
    }
}
