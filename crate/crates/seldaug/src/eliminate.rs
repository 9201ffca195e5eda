//! Two-stage purge of interference-contaminated event segments:
//! detection-based elimination first, then eigenvalue-based elimination.
//!
//! A segment counts as overlapped when too many frequency bins inside the
//! analysis band carry a second significant eigenvalue in the per-bin
//! spatial covariance.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::{normalized_eigenvalues, spatial_covariance, stft};
use crate::error::{Error, Result};
use crate::extract::EventSegment;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EliminationConfig {
    /// Normalized-eigenvalue threshold for calling a bin overlapped.
    pub alpha: f64,
    /// Overlapped-bin fraction above which a segment is eliminated.
    pub beta: f64,
    /// Analysis band, Hz.
    pub f_min: f64,
    pub f_max: f64,
    /// Fraction of frames in which the labeled class must be detected.
    pub detect_keep_fraction: f64,
    pub stft_frame_len: usize,
    pub stft_hop: usize,
}

impl Default for EliminationConfig {
    fn default() -> Self {
        EliminationConfig {
            alpha: 0.3,
            beta: 0.4,
            f_min: 100.0,
            f_max: 4000.0,
            detect_keep_fraction: 0.5,
            stft_frame_len: 480,
            stft_hop: 240,
        }
    }
}

impl EliminationConfig {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) || self.alpha <= 0.0 {
            return Err(Error::config(format!("alpha {} outside (0,1)", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.beta) || self.beta <= 0.0 {
            return Err(Error::config(format!("beta {} outside (0,1)", self.beta)));
        }
        let nyquist = sample_rate as f64 / 2.0;
        if self.f_min >= self.f_max || self.f_max > nyquist {
            return Err(Error::config(format!(
                "band [{}, {}] must satisfy f_min < f_max <= {nyquist}",
                self.f_min, self.f_max
            )));
        }
        if self.detect_keep_fraction <= 0.0 || self.detect_keep_fraction > 1.0 {
            return Err(Error::config("detect_keep_fraction outside (0,1]"));
        }
        Ok(())
    }
}

/// Per-frame class detection over one segment.
///
/// Implementations must be deterministic for fixed inputs.
pub trait Detector: Sync {
    /// Returns, per STFT-aligned label frame of the segment, the set of
    /// detected class ids.
    fn detect(&self, segment: &EventSegment) -> Result<Vec<Vec<u32>>>;
}

/// Keeps everything: reports the labeled class in every frame.
pub struct AcceptAll;

impl Detector for AcceptAll {
    fn detect(&self, segment: &EventSegment) -> Result<Vec<Vec<u32>>> {
        Ok(vec![vec![segment.class_id]; frame_count(segment)])
    }
}

/// Eliminates everything: detects nothing in any frame.
pub struct RejectAll;

impl Detector for RejectAll {
    fn detect(&self, segment: &EventSegment) -> Result<Vec<Vec<u32>>> {
        Ok(vec![Vec::new(); frame_count(segment)])
    }
}

fn frame_count(segment: &EventSegment) -> usize {
    let hop = (crate::io::metadata::LABEL_HOP_SECS * segment.sample_rate as f64).round()
        as usize;
    (segment.audio[0].len() / hop).max(1)
}

/// Detections exported by an external model as text rows
/// `clip_id,frame_index,class_id`, with frame indices in label-frame units
/// of the source clip.
pub struct PredictionsFile {
    by_clip: HashMap<String, Vec<(u32, u32)>>,
}

impl PredictionsFile {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut by_clip: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let fail = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                msg,
            };
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(fail(format!("expected 3 fields, found {}", fields.len())));
            }
            let frame: u32 = fields[1]
                .parse()
                .map_err(|_| fail(format!("bad frame index '{}'", fields[1])))?;
            let class: u32 = fields[2]
                .parse()
                .map_err(|_| fail(format!("bad class id '{}'", fields[2])))?;
            by_clip
                .entry(fields[0].to_string())
                .or_default()
                .push((frame, class));
        }
        Ok(PredictionsFile { by_clip })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path)?, path)
    }
}

impl Detector for PredictionsFile {
    fn detect(&self, segment: &EventSegment) -> Result<Vec<Vec<u32>>> {
        let preds = self.by_clip.get(&segment.source_clip).ok_or_else(|| {
            Error::Detector {
                segment: segment.id(),
                msg: format!("no predictions for clip '{}'", segment.source_clip),
            }
        })?;
        let hop = (crate::io::metadata::LABEL_HOP_SECS * segment.sample_rate as f64)
            .round() as usize;
        let first_frame = (segment.start / hop) as u32;
        let frames = frame_count(segment);
        let mut out = vec![Vec::new(); frames];
        for &(frame, class) in preds {
            if frame >= first_frame && ((frame - first_frame) as usize) < frames {
                out[(frame - first_frame) as usize].push(class);
            }
        }
        Ok(out)
    }
}

/// Naive self-contained detector: reports the labeled class in frames
/// whose energy exceeds `threshold` times the segment's mean frame energy.
pub struct EnergyThreshold {
    pub threshold: f64,
}

impl Detector for EnergyThreshold {
    fn detect(&self, segment: &EventSegment) -> Result<Vec<Vec<u32>>> {
        let hop = (crate::io::metadata::LABEL_HOP_SECS * segment.sample_rate as f64)
            .round() as usize;
        let frames = frame_count(segment);
        let energy: Vec<f64> = (0..frames)
            .map(|f| {
                let lo = f * hop;
                let hi = ((f + 1) * hop).min(segment.audio[0].len());
                segment
                    .audio
                    .iter()
                    .flat_map(|c| &c[lo..hi])
                    .map(|v| v * v)
                    .sum()
            })
            .collect();
        let mean = energy.iter().sum::<f64>() / frames as f64;
        Ok(energy
            .iter()
            .map(|&e| {
                if e > self.threshold * mean {
                    vec![segment.class_id]
                } else {
                    Vec::new()
                }
            })
            .collect())
    }
}

/// Fraction of analysis-band bins whose per-bin covariance has at least
/// two normalized eigenvalues above alpha, computed over the whole segment.
pub fn overlap_ratio(segment: &EventSegment, cfg: &EliminationConfig) -> Result<f64> {
    cfg.validate(segment.sample_rate)?;
    let spec = stft(
        &segment.audio,
        cfg.stft_frame_len,
        cfg.stft_hop,
        segment.sample_rate,
    )?;
    let cov = spatial_covariance(&spec, 0..spec.frames)?;
    let lo = spec.freq_bin(cfg.f_min);
    let hi = spec.freq_bin(cfg.f_max);
    if hi <= lo {
        return Err(Error::config("analysis band narrower than one bin"));
    }
    let mut k_overlap = 0usize;
    let mut k_focus = 0usize;
    for bin in lo..=hi {
        k_focus += 1;
        let gammas = normalized_eigenvalues(&cov.mats[bin]);
        if gammas.iter().filter(|&&g| g > cfg.alpha).count() >= 2 {
            k_overlap += 1;
        }
    }
    Ok(k_overlap as f64 / k_focus as f64)
}

/// Partition by overlap_ratio > beta, storing the ratio on every segment.
pub fn eigenvalue_eliminate(
    segments: Vec<EventSegment>,
    cfg: &EliminationConfig,
) -> Result<(Vec<EventSegment>, Vec<EventSegment>)> {
    let mut kept = Vec::new();
    let mut eliminated = Vec::new();
    for mut seg in segments {
        let ratio = overlap_ratio(&seg, cfg)?;
        seg.overlap_ratio = Some(ratio);
        let keep = ratio <= cfg.beta;
        seg.verdicts.eigen_kept = Some(keep);
        if keep {
            kept.push(seg);
        } else {
            eliminated.push(seg);
        }
    }
    Ok((kept, eliminated))
}

/// Keep a segment iff the detector reports its labeled class in at least
/// `detect_keep_fraction` of its frames.
pub fn detection_eliminate(
    segments: Vec<EventSegment>,
    detector: &dyn Detector,
    cfg: &EliminationConfig,
) -> Result<(Vec<EventSegment>, Vec<EventSegment>)> {
    let mut kept = Vec::new();
    let mut eliminated = Vec::new();
    for mut seg in segments {
        let detections = detector.detect(&seg)?;
        if detections.is_empty() {
            return Err(Error::Detector {
                segment: seg.id(),
                msg: "detector returned no frames".into(),
            });
        }
        let hits = detections
            .iter()
            .filter(|classes| classes.contains(&seg.class_id))
            .count();
        let keep = hits as f64 / detections.len() as f64 >= cfg.detect_keep_fraction;
        seg.verdicts.detection_kept = Some(keep);
        if keep {
            kept.push(seg);
        } else {
            eliminated.push(seg);
        }
    }
    Ok((kept, eliminated))
}

/// Full purge in pipeline order: detection-based first, then
/// eigenvalue-based. Returns (kept, report).
pub fn eliminate(
    segments: Vec<EventSegment>,
    detector: &dyn Detector,
    cfg: &EliminationConfig,
) -> Result<(Vec<EventSegment>, EliminationReport)> {
    let extracted = segments.len();
    let (after_detect, detect_dropped) = detection_eliminate(segments, detector, cfg)?;
    let (kept, eigen_dropped) = eigenvalue_eliminate(after_detect, cfg)?;
    let mut rows: Vec<ReportRow> = Vec::new();
    for seg in kept.iter().chain(&eigen_dropped).chain(&detect_dropped) {
        rows.push(ReportRow {
            segment: seg.id(),
            detection_kept: seg.verdicts.detection_kept,
            eigen_kept: seg.verdicts.eigen_kept,
            overlap_ratio: seg.overlap_ratio,
        });
    }
    rows.sort_by(|a, b| a.segment.cmp(&b.segment));
    let report = EliminationReport {
        extracted,
        detection_eliminated: detect_dropped.len(),
        eigen_eliminated: eigen_dropped.len(),
        kept: kept.len(),
        rows,
    };
    Ok((kept, report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRow {
    pub segment: String,
    pub detection_kept: Option<bool>,
    pub eigen_kept: Option<bool>,
    pub overlap_ratio: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EliminationReport {
    pub extracted: usize,
    pub detection_eliminated: usize,
    pub eigen_eliminated: usize,
    pub kept: usize,
    pub rows: Vec<ReportRow>,
}

impl EliminationReport {
    pub fn render(&self) -> String {
        let mut out = String::new();
        writeln!(out, "extracted: {}", self.extracted).unwrap();
        writeln!(out, "detection-eliminated: {}", self.detection_eliminated).unwrap();
        writeln!(out, "eigenvalue-eliminated: {}", self.eigen_eliminated).unwrap();
        writeln!(out, "kept: {}", self.kept).unwrap();
        writeln!(out, "segment\tdetection\teigen\toverlap_ratio").unwrap();
        for r in &self.rows {
            let fmt = |v: Option<bool>| match v {
                Some(true) => "kept",
                Some(false) => "eliminated",
                None => "-",
            };
            let ratio = r
                .overlap_ratio
                .map_or("-".to_string(), |x| format!("{x:.4}"));
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                r.segment,
                fmt(r.detection_kept),
                fmt(r.eigen_kept),
                ratio
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::real_sn3d_harmonics;
    use crate::extract::Verdicts;
    use crate::special::SphDirection;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Broadband plane wave rendered straight into FOA channels: white
    /// noise scaled by the real SN3D harmonics of the direction.
    fn foa_plane_wave(doa: &SphDirection, len: usize, rng: &mut StdRng) -> Vec<Vec<f64>> {
        let y = real_sn3d_harmonics(1, doa);
        let noise: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        y.iter()
            .map(|&g| noise.iter().map(|&v| g * v).collect())
            .collect()
    }

    fn segment(audio: Vec<Vec<f64>>, class_id: u32) -> EventSegment {
        EventSegment {
            audio,
            class_id,
            track_id: 0,
            doa: SphDirection::new(0.0, 0.0).unwrap(),
            source_clip: "test".into(),
            start: 0,
            end: 0,
            sample_rate: 24000,
            verdicts: Verdicts {
                label_ok: true,
                detection_kept: None,
                eigen_kept: None,
            },
            overlap_ratio: None,
        }
    }

    fn mix(a: &[Vec<f64>], b: &[Vec<f64>], gain_b: f64) -> Vec<Vec<f64>> {
        a.iter()
            .zip(b)
            .map(|(ca, cb)| ca.iter().zip(cb).map(|(x, y)| x + gain_b * y).collect())
            .collect()
    }

    #[test]
    fn single_plane_wave_ratio_near_zero() {
        let mut rng = StdRng::seed_from_u64(11);
        let doa = SphDirection::from_degrees(30.0, 10.0).unwrap();
        let seg = segment(foa_plane_wave(&doa, 24000, &mut rng), 0);
        let ratio = overlap_ratio(&seg, &EliminationConfig::default()).unwrap();
        assert!(ratio < 0.05, "rank-1 field gave ratio {ratio}");
    }

    #[test]
    fn two_equal_sources_ratio_near_one() {
        let mut rng = StdRng::seed_from_u64(12);
        let a = foa_plane_wave(
            &SphDirection::from_degrees(0.0, 0.0).unwrap(),
            24000,
            &mut rng,
        );
        let b = foa_plane_wave(
            &SphDirection::from_degrees(120.0, 30.0).unwrap(),
            24000,
            &mut rng,
        );
        let seg = segment(mix(&a, &b, 1.0), 0);
        let ratio = overlap_ratio(&seg, &EliminationConfig::default()).unwrap();
        assert!(ratio > 0.9, "two equal sources gave ratio {ratio}");
    }

    #[test]
    fn alpha_one_boundary_gives_zero() {
        let mut rng = StdRng::seed_from_u64(13);
        let a = foa_plane_wave(
            &SphDirection::from_degrees(0.0, 0.0).unwrap(),
            24000,
            &mut rng,
        );
        let b = foa_plane_wave(
            &SphDirection::from_degrees(120.0, 30.0).unwrap(),
            24000,
            &mut rng,
        );
        let seg = segment(mix(&a, &b, 1.0), 0);
        let cfg = EliminationConfig {
            alpha: 0.9999999,
            ..Default::default()
        };
        let ratio = overlap_ratio(&seg, &cfg).unwrap();
        assert_eq!(ratio, 0.0, "gamma > ~1 impossible after normalization");
    }

    #[test]
    fn ratio_gain_invariant() {
        let mut rng = StdRng::seed_from_u64(14);
        let a = foa_plane_wave(
            &SphDirection::from_degrees(0.0, 0.0).unwrap(),
            24000,
            &mut rng,
        );
        let b = foa_plane_wave(
            &SphDirection::from_degrees(90.0, -20.0).unwrap(),
            24000,
            &mut rng,
        );
        let mixed = mix(&a, &b, 0.5);
        let scaled: Vec<Vec<f64>> = mixed
            .iter()
            .map(|c| c.iter().map(|v| v * 17.3).collect())
            .collect();
        let cfg = EliminationConfig::default();
        let r1 = overlap_ratio(&segment(mixed, 0), &cfg).unwrap();
        let r2 = overlap_ratio(&segment(scaled, 0), &cfg).unwrap();
        assert!((r1 - r2).abs() < 1e-12);
    }

    #[test]
    fn sir_sweep_monotone() {
        let mut rng = StdRng::seed_from_u64(15);
        let a = foa_plane_wave(
            &SphDirection::from_degrees(-45.0, 0.0).unwrap(),
            24000,
            &mut rng,
        );
        let b = foa_plane_wave(
            &SphDirection::from_degrees(60.0, 40.0).unwrap(),
            24000,
            &mut rng,
        );
        let cfg = EliminationConfig::default();
        let ratio_at = |sir_db: f64| {
            let gain = 10f64.powf(-sir_db / 20.0);
            overlap_ratio(&segment(mix(&a, &b, gain), 0), &cfg).unwrap()
        };
        // the ratio peaks where the two sources are comparable and falls
        // off once either one dominates: the covariance turns rank-1 again
        // at strongly negative SIR, so the sweep is monotone only from the
        // balanced point upward
        let mut prev = f64::INFINITY;
        for sir_db in [0.0, 10.0, 20.0] {
            let ratio = ratio_at(sir_db);
            assert!(
                ratio <= prev + 1e-12,
                "ratio {ratio} at SIR {sir_db} dB exceeds previous {prev}"
            );
            prev = ratio;
        }
        assert!(ratio_at(0.0) > cfg.beta);
        assert!(ratio_at(-20.0) < ratio_at(0.0));
    }

    #[test]
    fn eigenvalue_partition_and_bookkeeping() {
        let mut rng = StdRng::seed_from_u64(16);
        let clean = segment(
            foa_plane_wave(
                &SphDirection::from_degrees(10.0, 5.0).unwrap(),
                24000,
                &mut rng,
            ),
            1,
        );
        let a = foa_plane_wave(
            &SphDirection::from_degrees(0.0, 0.0).unwrap(),
            24000,
            &mut rng,
        );
        let b = foa_plane_wave(
            &SphDirection::from_degrees(150.0, -30.0).unwrap(),
            24000,
            &mut rng,
        );
        let dirty = segment(mix(&a, &b, 1.0), 2);
        let cfg = EliminationConfig::default();
        let (kept, dropped) = eigenvalue_eliminate(vec![clean, dirty], &cfg).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(dropped.len(), 1);
        assert_eq!(kept[0].class_id, 1);
        assert_eq!(kept[0].verdicts.eigen_kept, Some(true));
        assert!(kept[0].overlap_ratio.unwrap() <= cfg.beta);
        assert!(dropped[0].overlap_ratio.unwrap() > cfg.beta);
    }

    #[test]
    fn detector_stubs() {
        let mut rng = StdRng::seed_from_u64(17);
        let mut seg = || {
            segment(
                foa_plane_wave(
                    &SphDirection::from_degrees(10.0, 5.0).unwrap(),
                    24000,
                    &mut rng,
                ),
                3,
            )
        };
        let cfg = EliminationConfig::default();
        let (kept, dropped) = detection_eliminate(vec![seg()], &AcceptAll, &cfg).unwrap();
        assert_eq!((kept.len(), dropped.len()), (1, 0));
        assert_eq!(kept[0].verdicts.detection_kept, Some(true));
        let (kept, dropped) = detection_eliminate(vec![seg()], &RejectAll, &cfg).unwrap();
        assert_eq!((kept.len(), dropped.len()), (0, 1));
    }

    #[test]
    fn predictions_file_fraction_rule() {
        let mut rng = StdRng::seed_from_u64(18);
        // 10 label frames of audio
        let mut seg = segment(
            foa_plane_wave(
                &SphDirection::from_degrees(10.0, 5.0).unwrap(),
                24000,
                &mut rng,
            ),
            7,
        );
        seg.source_clip = "clipA".into();
        // class 7 detected in 8 of 10 frames
        let mut text = String::new();
        for f in 0..8 {
            text.push_str(&format!("clipA,{f},7\n"));
        }
        let det = PredictionsFile::parse(&text, Path::new("mem")).unwrap();
        let cfg = EliminationConfig::default();
        let (kept, _) = detection_eliminate(vec![seg], &det, &cfg).unwrap();
        assert_eq!(kept.len(), 1, "80% detection rate with 50% threshold");

        // missing clip is a detector failure naming the segment
        let mut orphan = segment(vec![vec![0.0; 4800]; 4], 1);
        orphan.source_clip = "unknown".into();
        match detection_eliminate(vec![orphan], &det, &cfg) {
            Err(Error::Detector { segment, .. }) => {
                assert!(segment.contains("unknown"));
            }
            other => panic!("expected detector error, got {other:?}"),
        }
    }

    #[test]
    fn full_pipeline_report() {
        let mut rng = StdRng::seed_from_u64(19);
        let clean = segment(
            foa_plane_wave(
                &SphDirection::from_degrees(10.0, 5.0).unwrap(),
                24000,
                &mut rng,
            ),
            1,
        );
        let a = foa_plane_wave(
            &SphDirection::from_degrees(0.0, 0.0).unwrap(),
            24000,
            &mut rng,
        );
        let b = foa_plane_wave(
            &SphDirection::from_degrees(150.0, -30.0).unwrap(),
            24000,
            &mut rng,
        );
        let dirty = segment(mix(&a, &b, 1.0), 2);
        let cfg = EliminationConfig::default();
        let (kept, report) = eliminate(vec![clean, dirty], &AcceptAll, &cfg).unwrap();
        assert_eq!(kept.len(), 1);
        assert_eq!(report.extracted, 2);
        assert_eq!(report.detection_eliminated, 0);
        assert_eq!(report.eigen_eliminated, 1);
        assert_eq!(report.kept, 1);
        let text = report.render();
        assert!(text.contains("extracted: 2"));
        assert!(text.contains("eigenvalue-eliminated: 1"));
        // empty input
        let (kept, report) = eliminate(Vec::new(), &AcceptAll, &cfg).unwrap();
        assert!(kept.is_empty());
        assert_eq!(report.extracted, 0);
    }
}
