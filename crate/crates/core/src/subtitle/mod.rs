//! Subtitle tracks: parsing WebVTT / SubRip, transcript cleaning, sentence
//! merging and timestamp context lookup.

mod clean;
mod parse;

pub use clean::{clean_line, clean_transcript, clean_transcript_with, split_sentences, CleanOptions};
pub use parse::{parse_subtitles, parse_timestamp, FormatHint, ParsedSubtitles};

use serde::{Deserialize, Serialize};

/// Silence gap that forces a sentence boundary in unpunctuated captions.
pub const DEFAULT_GAP_THRESHOLD_MS: u64 = 1_500;

/// Character budget for a cleaned transcript.
pub const TRANSCRIPT_CHAR_LIMIT: usize = 10_000;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum SubtitleError {
    #[error("input is neither WebVTT nor SubRip")]
    UnrecognizedFormat,
    #[error("subtitle track has no cues")]
    EmptyTrack,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtitleCue {
    pub index: usize,
    pub start_ms: u64,
    pub end_ms: u64,
    pub text: String,
}

impl SubtitleCue {
    pub fn new(index: usize, start_ms: u64, end_ms: u64, text: impl Into<String>) -> Self {
        Self { index, start_ms, end_ms, text: text.into() }
    }

    pub fn contains(&self, t: u64) -> bool {
        self.start_ms <= t && t <= self.end_ms
    }

    /// Distance from `t` to the closed interval `[start_ms, end_ms]`.
    pub fn distance_to(&self, t: u64) -> u64 {
        if t < self.start_ms {
            self.start_ms - t
        } else {
            t.saturating_sub(self.end_ms)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SubtitleOrigin {
    #[default]
    Manual,
    AutoGenerated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SubtitleTrack {
    pub cues: Vec<SubtitleCue>,
    /// BCP-47 tag when the file declares one.
    pub language: Option<String>,
    pub origin: SubtitleOrigin,
}

impl SubtitleTrack {
    /// Builds a track from cues, sorting by start time and renumbering.
    pub fn from_cues(mut cues: Vec<SubtitleCue>) -> Self {
        cues.sort_by_key(|c| c.start_ms);
        for (i, cue) in cues.iter_mut().enumerate() {
            cue.index = i;
        }
        Self { cues, language: None, origin: SubtitleOrigin::Manual }
    }

    pub fn is_empty(&self) -> bool {
        self.cues.is_empty()
    }

    pub fn len(&self) -> usize {
        self.cues.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CleanTranscript {
    /// One sentence per line.
    pub text: String,
    /// Byte ranges of each sentence within `text`.
    pub sentence_spans: Vec<(usize, usize)>,
}

impl CleanTranscript {
    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &str> {
        self.sentence_spans.iter().map(|&(s, e)| &self.text[s..e])
    }
}

/// Local narration around a timestamp: the sentence being spoken plus its
/// neighbours.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SubtitleContext {
    pub preceding: String,
    pub current: String,
    pub following: String,
}

/// Merges adjacent cues until a sentence ends or the silence between two
/// cues exceeds `gap_threshold_ms`. Merged cues span the combined time range.
pub fn merge_sentences(track: &SubtitleTrack, gap_threshold_ms: u64) -> SubtitleTrack {
    let mut merged: Vec<SubtitleCue> = Vec::with_capacity(track.cues.len());
    let mut open: Option<SubtitleCue> = None;

    for cue in &track.cues {
        match open.as_mut() {
            Some(acc) => {
                let gap = cue.start_ms.saturating_sub(acc.end_ms);
                if ends_sentence(&acc.text) || gap > gap_threshold_ms {
                    merged.push(open.take().unwrap());
                    open = Some(cue.clone());
                } else {
                    let tail = flatten(&cue.text);
                    if !tail.is_empty() {
                        let head = flatten(&acc.text);
                        acc.text = if head.is_empty() { tail } else { format!("{head} {tail}") };
                    }
                    acc.end_ms = acc.end_ms.max(cue.end_ms);
                }
            }
            None => open = Some(cue.clone()),
        }
    }
    merged.extend(open);
    for (i, cue) in merged.iter_mut().enumerate() {
        cue.index = i;
    }
    SubtitleTrack { cues: merged, language: track.language.clone(), origin: track.origin }
}

fn flatten(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// True when `text` ends with `.`, `!` or `?`, allowing trailing closing
/// quotes or brackets.
pub fn ends_sentence(text: &str) -> bool {
    text.trim_end()
        .trim_end_matches(['"', '\'', ')', ']', '”', '’'])
        .ends_with(['.', '!', '?'])
}

/// Index of the cue nearest to `t`; cues covering `t` win, ties go to the
/// earlier cue.
pub fn nearest_cue(track: &SubtitleTrack, t: u64) -> Option<usize> {
    track
        .cues
        .iter()
        .enumerate()
        .min_by_key(|(i, cue)| (cue.distance_to(t), *i))
        .map(|(i, _)| i)
}

pub fn context_at(track: &SubtitleTrack, t: u64) -> Result<SubtitleContext, SubtitleError> {
    let i = nearest_cue(track, t).ok_or(SubtitleError::EmptyTrack)?;
    let text_of = |j: Option<usize>| {
        j.and_then(|j| track.cues.get(j)).map(|c| flatten(&c.text)).unwrap_or_default()
    };
    Ok(SubtitleContext {
        preceding: text_of(i.checked_sub(1)),
        current: flatten(&track.cues[i].text),
        following: text_of(Some(i + 1)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn track(cues: &[(u64, u64, &str)]) -> SubtitleTrack {
        SubtitleTrack::from_cues(
            cues.iter().map(|&(s, e, t)| SubtitleCue::new(0, s, e, t)).collect(),
        )
    }

    #[test]
    fn merges_until_terminal_punctuation() {
        let t = track(&[(0, 1000, "click on"), (1000, 2000, "the File menu.")]);
        let merged = merge_sentences(&t, DEFAULT_GAP_THRESHOLD_MS);
        assert_eq!(merged.cues.len(), 1);
        assert_eq!(merged.cues[0].text, "click on the File menu.");
        assert_eq!((merged.cues[0].start_ms, merged.cues[0].end_ms), (0, 2000));
    }

    #[test]
    fn sentence_aligned_track_is_a_fixed_point() {
        let t = track(&[(0, 1000, "Open GIMP."), (1200, 2000, "Click Colors!"), (2100, 3000, "Done?")]);
        assert_eq!(merge_sentences(&t, DEFAULT_GAP_THRESHOLD_MS), t);
    }

    #[test]
    fn gap_over_threshold_splits() {
        let t = track(&[(0, 1000, "click on"), (2501, 3000, "the File menu")]);
        assert_eq!(merge_sentences(&t, 1500).cues.len(), 2);
        // exactly at the threshold still merges
        let t = track(&[(0, 1000, "click on"), (2500, 3000, "the File menu")]);
        assert_eq!(merge_sentences(&t, 1500).cues.len(), 1);
    }

    #[test]
    fn context_single_cue() {
        let t = track(&[(1000, 2000, "only one")]);
        for at in [0, 1500, 99_999] {
            let ctx = context_at(&t, at).unwrap();
            assert_eq!(ctx, SubtitleContext { preceding: "".into(), current: "only one".into(), following: "".into() });
        }
    }

    #[test]
    fn context_inside_middle_cue() {
        let t = track(&[(0, 1000, "a."), (1000, 2000, "b."), (2000, 3000, "c.")]);
        let ctx = context_at(&t, 1500).unwrap();
        assert_eq!((ctx.preceding.as_str(), ctx.current.as_str(), ctx.following.as_str()), ("a.", "b.", "c."));
    }

    #[test]
    fn context_gap_tie_goes_to_earlier() {
        let t = track(&[(0, 1000, "first."), (3000, 4000, "second.")]);
        assert_eq!(context_at(&t, 2000).unwrap().current, "first.");
        assert_eq!(context_at(&t, 2001).unwrap().current, "second.");
    }

    #[test]
    fn context_on_empty_track() {
        assert_eq!(context_at(&SubtitleTrack::default(), 10), Err(SubtitleError::EmptyTrack));
    }
}
