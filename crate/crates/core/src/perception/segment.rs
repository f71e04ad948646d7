use image::RgbImage;

use super::{load_rgb, BackgroundModel, BackgroundModelParams, FrameRef, PerceptionError, TransitionSegment};
use crate::subtitle::SubtitleTrack;

/// Partitions timestamp-sorted frames by subtitle cue. A frame belongs to
/// the last cue starting at or before it, so a frame on a shared boundary
/// goes to the cue that starts there, frames in gaps stay with the
/// preceding cue, and frames before the first cue join the first cue.
/// Cues without frames produce no segment.
pub fn segment_by_cues(frames: &[FrameRef], track: &SubtitleTrack) -> Vec<(usize, Vec<FrameRef>)> {
    if track.is_empty() {
        return vec![(0, frames.to_vec())];
    }
    let mut out: Vec<(usize, Vec<FrameRef>)> = Vec::new();
    for frame in frames {
        let cue = track.cues.partition_point(|c| c.start_ms <= frame.timestamp_ms).saturating_sub(1);
        match out.last_mut() {
            Some((idx, list)) if *idx == cue => list.push(frame.clone()),
            _ => out.push((cue, vec![frame.clone()])),
        }
    }
    out
}

/// Maximal runs of `true`, as inclusive index ranges.
pub fn changing_runs(flags: &[bool]) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut open: Option<usize> = None;
    for (i, &changing) in flags.iter().enumerate() {
        match (changing, open) {
            (true, None) => open = Some(i),
            (false, Some(s)) => {
                runs.push((s, i - 1));
                open = None;
            }
            _ => {}
        }
    }
    if let Some(s) = open {
        runs.push((s, flags.len() - 1));
    }
    runs
}

/// (start, end) frame positions for each changing run: the frame before the
/// run and the first stable frame after it, falling back to the run's own
/// first/last frame at the sequence edges.
pub fn transitions_from_flags(flags: &[bool]) -> Vec<(usize, usize)> {
    changing_runs(flags)
        .into_iter()
        .map(|(a, b)| (a.saturating_sub(1), if b + 1 < flags.len() { b + 1 } else { b }))
        .collect()
}

/// Runs a fresh background model over in-memory frames.
pub fn transitions_from_images(images: &[RgbImage], params: &BackgroundModelParams) -> Vec<(usize, usize)> {
    let Some(first) = images.first() else {
        return Vec::new();
    };
    let mut model = BackgroundModel::new(*params, first.width(), first.height());
    let mut flags = Vec::with_capacity(images.len());
    for img in images {
        let fg = model.apply(img);
        flags.push(model.is_changing(fg));
    }
    transitions_from_flags(&flags)
}

/// Transitions within one cue segment. The background model starts fresh
/// for every segment.
pub fn detect_transitions(
    frames: &[FrameRef],
    cue_index: usize,
    params: &BackgroundModelParams,
) -> Result<Vec<TransitionSegment>, PerceptionError> {
    if frames.len() < 2 {
        return Ok(Vec::new());
    }
    let mut model = BackgroundModel::new(*params, frames[0].image.width, frames[0].image.height);
    let mut flags = Vec::with_capacity(frames.len());
    for frame in frames {
        let img = load_rgb(frame)?;
        if img.dimensions() != (frames[0].image.width, frames[0].image.height) {
            return Err(PerceptionError::SizeMismatch {
                path: frame.image.path.clone(),
                got: img.dimensions(),
                expected: (frames[0].image.width, frames[0].image.height),
            });
        }
        let fg = model.apply(&img);
        flags.push(model.is_changing(fg));
    }
    Ok(transitions_from_flags(&flags)
        .into_iter()
        .map(|(s, e)| TransitionSegment { cue_index, start_frame: frames[s].clone(), end_frame: frames[e].clone() })
        .collect())
}

/// Segments frames by cue, detects transitions per segment and returns the
/// transitions with their deduplicated, chronological keyframes.
pub fn extract_keyframes(
    frames: &[FrameRef],
    track: &SubtitleTrack,
    params: &BackgroundModelParams,
) -> Result<(Vec<TransitionSegment>, Vec<FrameRef>), PerceptionError> {
    if frames.is_empty() {
        return Err(PerceptionError::EmptyVideo);
    }
    let mut transitions = Vec::new();
    for (cue, segment) in segment_by_cues(frames, track) {
        transitions.extend(detect_transitions(&segment, cue, params)?);
    }
    let keyframes = keyframes_of(&transitions);
    Ok((transitions, keyframes))
}

/// Start and end frames of every transition in order, emitting a frame
/// shared by consecutive transitions once.
pub fn keyframes_of(transitions: &[TransitionSegment]) -> Vec<FrameRef> {
    let mut out: Vec<FrameRef> = Vec::with_capacity(transitions.len() * 2);
    for t in transitions {
        for f in [&t.start_frame, &t.end_frame] {
            if out.last().is_none_or(|last| last.frame_index < f.frame_index) {
                out.push(f.clone());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use std::path::PathBuf;

    use super::*;
    use crate::perception::ImageRef;
    use crate::subtitle::SubtitleCue;

    fn frame(i: usize, t: u64) -> FrameRef {
        FrameRef { frame_index: i, timestamp_ms: t, image: ImageRef { path: PathBuf::from(format!("{i}.png")), width: 4, height: 4 } }
    }

    fn track(cues: &[(u64, u64)]) -> SubtitleTrack {
        SubtitleTrack::from_cues(cues.iter().map(|&(s, e)| SubtitleCue::new(0, s, e, "x")).collect())
    }

    #[test]
    fn empty_track_is_one_segment() {
        let frames: Vec<_> = (0..5).map(|i| frame(i, i as u64 * 500)).collect();
        let segs = segment_by_cues(&frames, &SubtitleTrack::default());
        assert_eq!(segs, vec![(0, frames)]);
    }

    #[test]
    fn split_at_cue_boundary() {
        let frames: Vec<_> = (0..100).map(|i| frame(i, i as u64 * 100)).collect();
        let segs = segment_by_cues(&frames, &track(&[(0, 5_000), (5_000, 10_000)]));
        assert_eq!(segs.len(), 2);
        assert!(segs[0].1.iter().all(|f| f.timestamp_ms < 5_000));
        assert!(segs[1].1.iter().all(|f| f.timestamp_ms >= 5_000));
        assert_eq!(segs[0].1.len() + segs[1].1.len(), 100);
        // the boundary frame belongs to the cue starting there
        assert_eq!(segs[1].1[0].timestamp_ms, 5_000);
    }

    #[test]
    fn gaps_and_leading_frames() {
        let frames = vec![frame(0, 0), frame(1, 1_500), frame(2, 2_500), frame(3, 4_000)];
        let segs = segment_by_cues(&frames, &track(&[(1_000, 2_000), (3_000, 5_000)]));
        let ids: Vec<(usize, Vec<usize>)> =
            segs.iter().map(|(c, fs)| (*c, fs.iter().map(|f| f.frame_index).collect())).collect();
        assert_eq!(ids, vec![(0, vec![0, 1, 2]), (1, vec![3])]);
    }

    #[test]
    fn run_grouping() {
        let f = [false, false, true, true, false, false, true, false, true];
        assert_eq!(changing_runs(&f), vec![(2, 3), (6, 6), (8, 8)]);
        assert_eq!(transitions_from_flags(&f), vec![(1, 4), (5, 7), (7, 8)]);
        assert!(transitions_from_flags(&[false; 4]).is_empty());
    }

    #[test]
    fn shared_boundary_frame_emitted_once() {
        let f: Vec<_> = (0..6).map(|i| frame(i, i as u64 * 500)).collect();
        let t = |a: usize, b: usize| TransitionSegment { cue_index: 0, start_frame: f[a].clone(), end_frame: f[b].clone() };
        let kf = keyframes_of(&[t(0, 2), t(2, 4), t(4, 5)]);
        assert_eq!(kf.iter().map(|f| f.frame_index).collect::<Vec<_>>(), vec![0, 2, 4, 5]);
        let kf = keyframes_of(&[t(0, 1), t(2, 3)]);
        assert_eq!(kf.len(), 4);
    }
}
