use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{SubtitleCue, SubtitleError, SubtitleOrigin, SubtitleTrack};

static TIMESTAMP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:(\d+):)?(\d{1,2}):(\d{2})[.,](\d{1,3})$").unwrap());
// Word-level timing tags embedded in auto-generated cues, e.g. `<00:00:01.520>`.
static INLINE_TIMESTAMP: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"<(?:\d+:)?\d{1,2}:\d{2}[.,]\d{1,3}>").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FormatHint {
    Vtt,
    Srt,
    #[default]
    Auto,
}

impl std::str::FromStr for FormatHint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vtt" | "webvtt" => Ok(Self::Vtt),
            "srt" | "subrip" => Ok(Self::Srt),
            "auto" => Ok(Self::Auto),
            other => Err(format!("unknown subtitle format `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedSubtitles {
    pub track: SubtitleTrack,
    /// Number of malformed cue blocks that were dropped.
    pub skipped: usize,
}

/// Parses `HH:MM:SS.mmm`, `MM:SS.mmm` or the SubRip `HH:MM:SS,mmm` form into
/// milliseconds.
pub fn parse_timestamp(raw: &str) -> Option<u64> {
    let caps = TIMESTAMP.captures(raw.trim())?;
    let hours: u64 = caps.get(1).map_or(Ok(0), |m| m.as_str().parse()).ok()?;
    let minutes: u64 = caps[2].parse().ok()?;
    let seconds: u64 = caps[3].parse().ok()?;
    if minutes >= 60 || seconds >= 60 {
        return None;
    }
    let frac = &caps[4];
    let millis: u64 = frac.parse::<u64>().ok()? * 10u64.pow(3 - frac.len() as u32);
    Some(((hours * 60 + minutes) * 60 + seconds) * 1000 + millis)
}

fn parse_timing(line: &str) -> Option<(u64, u64)> {
    let (start, rest) = line.split_once("-->")?;
    // cue settings (`align:start position:0%`) follow the end timestamp
    let end = rest.split_whitespace().next()?;
    let start = parse_timestamp(start)?;
    let end = parse_timestamp(end)?;
    (start <= end).then_some((start, end))
}

fn blocks(text: &str) -> Vec<Vec<&str>> {
    let mut out = Vec::new();
    let mut current = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
        } else {
            current.push(line.trim_end());
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

fn payload(lines: &[&str]) -> String {
    lines
        .iter()
        .map(|l| INLINE_TIMESTAMP.replace_all(l, "").trim().to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn parse_subtitles(raw: &[u8], hint: FormatHint) -> Result<ParsedSubtitles, SubtitleError> {
    let decoded = String::from_utf8_lossy(raw);
    let text = decoded.trim_start_matches('\u{feff}').replace("\r\n", "\n").replace('\r', "\n");
    if text.trim().is_empty() {
        return Ok(ParsedSubtitles { track: SubtitleTrack::default(), skipped: 0 });
    }

    let has_header = text.trim_start().starts_with("WEBVTT");
    let has_timing = text.contains("-->");
    let format = match hint {
        FormatHint::Auto if has_header => FormatHint::Vtt,
        FormatHint::Auto if has_timing => FormatHint::Srt,
        FormatHint::Auto => return Err(SubtitleError::UnrecognizedFormat),
        explicit if has_header || has_timing => explicit,
        _ => return Err(SubtitleError::UnrecognizedFormat),
    };

    let blocks = blocks(&text);
    let (mut track, skipped) = match format {
        FormatHint::Vtt => parse_vtt(&blocks),
        _ => parse_srt(&blocks),
    };
    if skipped > 0 {
        tracing::warn!(skipped, "dropped malformed subtitle cues");
    }
    track.cues.sort_by_key(|c| c.start_ms);
    for (i, cue) in track.cues.iter_mut().enumerate() {
        cue.index = i;
    }
    Ok(ParsedSubtitles { track, skipped })
}

fn parse_vtt(blocks: &[Vec<&str>]) -> (SubtitleTrack, usize) {
    let mut track = SubtitleTrack::default();
    let mut skipped = 0;
    let mut word_timed = false;

    for (n, block) in blocks.iter().enumerate() {
        let first = block[0].trim_start();
        if n == 0 && first.starts_with("WEBVTT") {
            for line in &block[1..] {
                if let Some(("Language", value)) = line.split_once(':') {
                    track.language = Some(value.trim().to_string());
                }
            }
            continue;
        }
        if ["NOTE", "STYLE", "REGION"].iter().any(|k| first == *k || first.starts_with(&format!("{k} "))) {
            continue;
        }
        let Some(timing_at) = block.iter().position(|l| l.contains("-->")) else {
            skipped += 1;
            continue;
        };
        // at most one identifier line may precede the timing line
        if timing_at > 1 {
            skipped += 1;
            continue;
        }
        let Some((start_ms, end_ms)) = parse_timing(block[timing_at]) else {
            skipped += 1;
            continue;
        };
        let body = &block[timing_at + 1..];
        word_timed |= body.iter().any(|l| INLINE_TIMESTAMP.is_match(l));
        track.cues.push(SubtitleCue::new(0, start_ms, end_ms, payload(body)));
    }
    // `Kind: captions` is also used by manual tracks; only inline word timing
    // marks a track as machine generated
    if word_timed {
        track.origin = SubtitleOrigin::AutoGenerated;
    }
    (track, skipped)
}

fn parse_srt(blocks: &[Vec<&str>]) -> (SubtitleTrack, usize) {
    let mut track = SubtitleTrack::default();
    let mut skipped = 0;

    for block in blocks {
        let (timing_line, body) = if block[0].contains("-->") {
            (block[0], &block[1..])
        } else if block.len() >= 2 && block[1].contains("-->") {
            if block[0].trim().parse::<u64>().is_err() {
                skipped += 1;
                continue;
            }
            (block[1], &block[2..])
        } else {
            skipped += 1;
            continue;
        };
        match parse_timing(timing_line) {
            Some((start_ms, end_ms)) => track.cues.push(SubtitleCue::new(0, start_ms, end_ms, payload(body))),
            None => skipped += 1,
        }
    }
    (track, skipped)
}
