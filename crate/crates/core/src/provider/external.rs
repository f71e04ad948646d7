//! Live backends that shell out to standard command-line tools: a video
//! platform metadata/downloader (yt-dlp), a media decoder (ffmpeg), a
//! speech recognizer (whisper CLI) and a user-supplied UI element detector.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

use super::{
    ElementDetector, FrameExtractor, MediaFetcher, MediaRef, ProviderError, SearchProvider, SubtitleSource, Transcriber,
};
use crate::perception::{write_frame_index, FrameRef, ImageRef};
use crate::retrieval::VideoCandidate;
use crate::subtitle::{parse_subtitles, FormatHint, SubtitleTrack};

fn run(cmd: &mut Command) -> Result<Vec<u8>, ProviderError> {
    let program = format!("{:?}", cmd.get_program());
    let out = cmd.output().map_err(|e| ProviderError::Config(format!("cannot run {program}: {e}")))?;
    if !out.status.success() {
        let stderr = String::from_utf8_lossy(&out.stderr);
        return Err(ProviderError::Transient(format!("{program} exited with {}: {}", out.status, stderr.trim())));
    }
    Ok(out.stdout)
}

fn scratch_dir(tag: &str, id: &str) -> Result<PathBuf, ProviderError> {
    let dir = std::env::temp_dir().join(format!("guide-{tag}-{}-{id}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>, ProviderError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some(ext))
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct YtDlp {
    pub binary: String,
    pub sub_langs: String,
}

impl Default for YtDlp {
    fn default() -> Self {
        Self { binary: "yt-dlp".into(), sub_langs: "en.*,en".into() }
    }
}

impl YtDlp {
    fn candidate(record: &Value) -> Option<VideoCandidate> {
        let id = record.get("id")?.as_str()?.to_string();
        let url = record
            .get("webpage_url")
            .or_else(|| record.get("url"))
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("https://www.youtube.com/watch?v={id}"));
        let has_subtitles = ["subtitles", "automatic_captions"]
            .iter()
            .filter_map(|k| record.get(*k))
            .map(|v| v.as_object().is_some_and(|o| !o.is_empty()))
            .reduce(|a, b| a || b)
            // flat search listings carry no caption info; Stage 1 checks later
            .unwrap_or(true);
        Some(VideoCandidate {
            video_id: id,
            url,
            title: record.get("title").and_then(Value::as_str).unwrap_or_default().to_string(),
            duration_s: record.get("duration").and_then(Value::as_f64).unwrap_or(0.0),
            has_subtitles,
        })
    }
}

impl SearchProvider for YtDlp {
    fn search(&self, query: &str, max: usize) -> Result<Vec<VideoCandidate>, ProviderError> {
        let stdout = run(Command::new(&self.binary)
            .args(["--dump-json", "--flat-playlist", "--skip-download", "--no-warnings"])
            .arg(format!("ytsearch{max}:{query}")))
        .map_err(|e| ProviderError::SearchUnavailable(e.to_string()))?;
        Ok(String::from_utf8_lossy(&stdout)
            .lines()
            .filter_map(|l| serde_json::from_str::<Value>(l).ok())
            .filter_map(|v| Self::candidate(&v))
            .collect())
    }
}

impl SubtitleSource for YtDlp {
    fn fetch(&self, candidate: &VideoCandidate) -> Result<Option<Vec<u8>>, ProviderError> {
        let dir = scratch_dir("subs", &candidate.video_id)?;
        run(Command::new(&self.binary)
            .args(["--skip-download", "--write-subs", "--write-auto-subs", "--sub-format", "vtt", "--no-warnings"])
            .args(["--sub-langs", &self.sub_langs])
            .arg("-o")
            .arg(dir.join("%(id)s.%(ext)s"))
            .arg(&candidate.url))?;
        // prefer the shortest language suffix (`en` over `en-orig`)
        let mut files = files_with_ext(&dir, "vtt")?;
        files.sort_by_key(|p| (p.as_os_str().len(), p.clone()));
        let bytes = files.first().map(std::fs::read).transpose()?;
        let _ = std::fs::remove_dir_all(&dir);
        Ok(bytes)
    }
}

impl MediaFetcher for YtDlp {
    fn fetch(&self, candidate: &VideoCandidate, dir: &Path) -> Result<MediaRef, ProviderError> {
        std::fs::create_dir_all(dir)?;
        run(Command::new(&self.binary)
            .args(["-f", "bv*[height<=1080][ext=mp4]+ba[ext=m4a]/b[height<=1080]/b", "--no-warnings"])
            .args(["--merge-output-format", "mp4", "-o"])
            .arg(dir.join(format!("{}.%(ext)s", candidate.video_id)))
            .arg(&candidate.url))?;
        let local = files_with_ext(dir, "mp4")?
            .into_iter()
            .find(|p| p.file_stem().is_some_and(|s| s == candidate.video_id.as_str()))
            .ok_or_else(|| ProviderError::DecodeFailure(format!("download of {} produced no mp4", candidate.video_id)))?;
        Ok(MediaRef { video_id: candidate.video_id.clone(), url: candidate.url.clone(), local_path: Some(local) })
    }
}

#[derive(Debug, Clone)]
pub struct Ffmpeg {
    pub binary: String,
}

impl Default for Ffmpeg {
    fn default() -> Self {
        Self { binary: "ffmpeg".into() }
    }
}

impl FrameExtractor for Ffmpeg {
    fn extract(&self, media: &MediaRef, fps: f64, out_dir: &Path) -> Result<Vec<FrameRef>, ProviderError> {
        let input = media
            .local_path
            .as_ref()
            .ok_or_else(|| ProviderError::DecodeFailure(format!("{} has not been downloaded", media.video_id)))?;
        std::fs::create_dir_all(out_dir)?;
        run(Command::new(&self.binary)
            .args(["-v", "error", "-nostdin", "-y", "-i"])
            .arg(input)
            .arg("-vf")
            .arg(format!("fps={fps}"))
            .arg(out_dir.join("%06d.png")))
        .map_err(|e| ProviderError::DecodeFailure(e.to_string()))?;
        let mut frames = Vec::new();
        for (i, path) in files_with_ext(out_dir, "png")?.into_iter().enumerate() {
            let (width, height) =
                image::image_dimensions(&path).map_err(|e| ProviderError::DecodeFailure(format!("{}: {e}", path.display())))?;
            let timestamp_ms = (i as f64 * 1000.0 / fps).round() as u64;
            frames.push(FrameRef { frame_index: i, timestamp_ms, image: ImageRef { path, width, height } });
        }
        write_frame_index(out_dir, &frames)?;
        Ok(frames)
    }
}

/// Word-timestamped transcription through the `whisper` command-line tool.
#[derive(Debug, Clone)]
pub struct WhisperCli {
    pub binary: String,
    pub model: String,
}

impl Default for WhisperCli {
    fn default() -> Self {
        Self { binary: "whisper".into(), model: "small".into() }
    }
}

impl Transcriber for WhisperCli {
    fn transcribe(&self, media: &MediaRef) -> Result<SubtitleTrack, ProviderError> {
        let input = media
            .local_path
            .as_ref()
            .ok_or_else(|| ProviderError::DecodeFailure(format!("{} has not been downloaded", media.video_id)))?;
        let dir = scratch_dir("asr", &media.video_id)?;
        run(Command::new(&self.binary)
            .arg(input)
            .args(["--model", &self.model, "--output_format", "vtt", "--word_timestamps", "True", "--output_dir"])
            .arg(&dir))?;
        let vtt = files_with_ext(&dir, "vtt")?
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::ModelFailure("transcriber wrote no VTT file".into()))?;
        let raw = std::fs::read(&vtt)?;
        let _ = std::fs::remove_dir_all(&dir);
        parse_subtitles(&raw, FormatHint::Vtt).map(|p| p.track).map_err(|e| ProviderError::DecodeFailure(e.to_string()))
    }
}

/// Runs an external detector command per image. Every `{image}` in the
/// argument list is replaced by the frame path; stdout must be the element
/// JSON array.
#[derive(Debug, Clone)]
pub struct CommandElements {
    pub program: String,
    pub args: Vec<String>,
}

impl ElementDetector for CommandElements {
    fn detect(&self, _video_id: &str, frame: &FrameRef) -> Result<Vec<u8>, ProviderError> {
        let image = frame.image.path.to_string_lossy();
        let args: Vec<String> = self.args.iter().map(|a| a.replace("{image}", &image)).collect();
        run(Command::new(&self.program).args(&args))
    }
}
