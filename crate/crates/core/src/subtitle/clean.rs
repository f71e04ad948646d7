use std::sync::LazyLock;

use regex::Regex;

use super::{CleanTranscript, SubtitleTrack, DEFAULT_GAP_THRESHOLD_MS, TRANSCRIPT_CHAR_LIMIT};

static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^<>]*>").unwrap());
static TIMESTAMP: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?:\d+:)?\d+:\d+[.,]\d+").unwrap());
static CUE_SETTING: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(?:align|position|line|size|vertical|region):\S+").unwrap());
static MARKER_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:WEBVTT\b.*|NOTE\b.*|(?:Kind|Language|Style|Region):.*|\d+)$").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CleanOptions {
    pub max_chars: usize,
    pub gap_threshold_ms: u64,
}

impl Default for CleanOptions {
    fn default() -> Self {
        Self { max_chars: TRANSCRIPT_CHAR_LIMIT, gap_threshold_ms: DEFAULT_GAP_THRESHOLD_MS }
    }
}

/// Strips tags, timestamps, cue arrows and cue settings from one line and
/// normalizes whitespace. Repeats until nothing changes, since removing one
/// span can expose another.
pub fn clean_line(line: &str) -> String {
    let mut current = line.to_string();
    loop {
        let next = TAG.replace_all(&current, "");
        let next = TIMESTAMP.replace_all(&next, "");
        let next = CUE_SETTING.replace_all(&next, "");
        let next = next.replace("-->", " ");
        let next = next.split_whitespace().collect::<Vec<_>>().join(" ");
        if next == current {
            return next;
        }
        current = next;
    }
}

fn is_marker(line: &str) -> bool {
    MARKER_LINE.is_match(line)
}

/// Splits at `.`, `!` or `?` (plus closing quotes/brackets) followed by
/// whitespace or the end of the text.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i].1, '.' | '!' | '?') {
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '.' | '!' | '?' | '"' | '\'' | ')' | ']' | '”' | '’') {
                j += 1;
            }
            if j == chars.len() || chars[j].1.is_whitespace() {
                let end = chars.get(j).map_or(text.len(), |c| c.0);
                push_trimmed(&mut out, &text[start..end]);
                start = end;
                i = j;
                continue;
            }
            i = j;
            continue;
        }
        i += 1;
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, piece: &str) {
    let piece = piece.trim();
    if !piece.is_empty() {
        out.push(piece.to_string());
    }
}

pub fn clean_transcript(track: &SubtitleTrack) -> CleanTranscript {
    clean_transcript_with(track, &CleanOptions::default())
}

pub fn clean_transcript_with(track: &SubtitleTrack, opts: &CleanOptions) -> CleanTranscript {
    // Lines in narration order; the flag marks a forced boundary before the line.
    let mut lines: Vec<(String, bool)> = Vec::new();
    let mut prev_end: Option<u64> = None;
    for cue in &track.cues {
        let mut gap = prev_end.is_some_and(|end| cue.start_ms.saturating_sub(end) > opts.gap_threshold_ms);
        prev_end = Some(prev_end.map_or(cue.end_ms, |e| e.max(cue.end_ms)));
        for raw in cue.text.lines() {
            let line = clean_line(raw);
            if line.is_empty() || is_marker(&line) {
                continue;
            }
            if lines.last().is_some_and(|(last, _)| *last == line) {
                continue;
            }
            lines.push((line, gap));
            gap = false;
        }
    }

    let mut chunks: Vec<String> = Vec::new();
    let mut buffer = String::new();
    for (line, boundary) in lines {
        if boundary && !buffer.is_empty() {
            chunks.push(std::mem::take(&mut buffer));
        }
        if !buffer.is_empty() {
            buffer.push(' ');
        }
        buffer.push_str(&line);
    }
    if !buffer.is_empty() {
        chunks.push(buffer);
    }

    let mut sentences: Vec<String> = chunks.iter().flat_map(|c| split_sentences(c)).collect();
    // Joining lines can assemble a tag or timestamp out of two halves, and
    // removing one can expose a new sentence break; iterate to a fixed point.
    loop {
        let mut next: Vec<String> = Vec::with_capacity(sentences.len());
        for sentence in &sentences {
            for piece in split_sentences(&clean_line(sentence)) {
                if is_marker(&piece) || next.last() == Some(&piece) {
                    continue;
                }
                next.push(piece);
            }
        }
        if next == sentences {
            break;
        }
        sentences = next;
    }

    truncate(sentences, opts.max_chars)
}

fn truncate(sentences: Vec<String>, max_chars: usize) -> CleanTranscript {
    let mut text = String::new();
    let mut spans = Vec::new();
    let mut used = 0usize;
    for sentence in sentences {
        let sep = usize::from(!text.is_empty());
        let len = sentence.chars().count();
        if used + sep + len > max_chars {
            if text.is_empty() {
                // a single sentence longer than the budget is hard-cut
                let cut: String = sentence.chars().take(max_chars).collect();
                let cut = cut.trim_end();
                spans.push((0, cut.len()));
                text.push_str(cut);
            }
            break;
        }
        if sep == 1 {
            text.push('\n');
        }
        let start = text.len();
        text.push_str(&sentence);
        spans.push((start, text.len()));
        used += sep + len;
    }
    CleanTranscript { text, sentence_spans: spans }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subtitle::SubtitleCue;

    fn track(cues: &[(u64, u64, &str)]) -> SubtitleTrack {
        SubtitleTrack::from_cues(cues.iter().map(|&(s, e, t)| SubtitleCue::new(0, s, e, t)).collect())
    }

    #[test]
    fn empty_track() {
        let out = clean_transcript(&SubtitleTrack::default());
        assert_eq!(out.text, "");
        assert!(out.sentence_spans.is_empty());
    }

    #[test]
    fn strips_tags_and_collapses_duplicates() {
        let t = track(&[(0, 1000, "click <b>File</b>"), (1000, 2000, "click File"), (2000, 3000, "then Save")]);
        let out = clean_transcript(&t);
        assert_eq!(out.text, "click File then Save");
        assert_eq!(out.sentence_spans, vec![(0, out.text.len())]);
    }

    #[test]
    fn rolling_auto_captions() {
        let t = track(&[
            (0, 2000, "so first we open"),
            (2000, 4000, "so first we open\nthe colors menu."),
            (4000, 6000, "the colors menu.\nThen pick curves."),
        ]);
        assert_eq!(clean_transcript(&t).text, "so first we open the colors menu.\nThen pick curves.");
    }

    #[test]
    fn long_silence_breaks_a_sentence() {
        let t = track(&[(0, 1000, "open the file"), (5000, 6000, "now export it")]);
        assert_eq!(clean_transcript(&t).text, "open the file\nnow export it");
    }

    #[test]
    fn markers_and_timestamps_removed() {
        let t = track(&[(0, 1000, "WEBVTT\n12\n00:00:01.000 --> 00:00:02.000 align:start\nhello there.")]);
        assert_eq!(clean_transcript(&t).text, "hello there.");
    }

    #[test]
    fn unbalanced_brackets_stay() {
        let t = track(&[(0, 1000, "if a < b then press Enter")]);
        assert_eq!(clean_transcript(&t).text, "if a < b then press Enter");
    }

    #[test]
    fn tag_assembled_across_cues_is_removed() {
        let t = track(&[(0, 1000, "press <"), (1000, 2000, "b> now")]);
        let out = clean_transcript(&t);
        assert!(!TAG.is_match(&out.text), "{}", out.text);
    }

    #[test]
    fn truncates_at_sentence_boundary() {
        let sentence = "Click the Colors menu and choose Curves to adjust the image. ";
        let body = sentence.repeat(30_000 / sentence.len() + 1);
        let t = track(&[(0, 1000, body.as_str())]);
        let out = clean_transcript(&t);
        assert!(out.text.chars().count() <= TRANSCRIPT_CHAR_LIMIT);
        assert!(out.text.ends_with("image."));
        // sentences are deduplicated consecutively, so make each one distinct
        let body: String = (0..600).map(|i| format!("Step {i} opens another dialog window here. ")).collect();
        let out = clean_transcript(&track(&[(0, 1000, body.as_str())]));
        assert!(body.len() > 25_000);
        let n = out.text.chars().count();
        assert!(n <= TRANSCRIPT_CHAR_LIMIT && n > TRANSCRIPT_CHAR_LIMIT - 60, "{n}");
        assert!(out.text.ends_with("here."));
    }

    #[test]
    fn hard_cut_for_one_giant_sentence() {
        let body = "word ".repeat(3_000);
        let out = clean_transcript(&track(&[(0, 1000, body.as_str())]));
        assert!(out.text.chars().count() <= TRANSCRIPT_CHAR_LIMIT);
        assert!(out.text.chars().count() >= TRANSCRIPT_CHAR_LIMIT - 5);
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(split_sentences("Open it. Then 3.5 px? Yes!\"  ok"), vec!["Open it.", "Then 3.5 px?", "Yes!\"", "ok"]);
    }
}
