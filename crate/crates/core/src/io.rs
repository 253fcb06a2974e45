//! PCM16 mono WAV, the F0 text format, frame-feature CSV and generic CSV
//! output. Every writer goes through a temp file and a rename.
//!
//! F0 files look like
//!
//! ```text
//! frame_shift_ms=5
//! 0
//! 120.5
//! 121
//! ```
//!
//! Feature files use the same header followed by one comma-separated row of
//! values per frame.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{NsfError, Result, WavErrorKind};
use crate::signal::{FrameSequence, Waveform};

/// Frame-level F0 contour in Hz; 0 marks an unvoiced frame.
#[derive(Debug, Clone, PartialEq)]
pub struct F0Track {
    values: Vec<f64>,
    frame_shift: f64,
}

impl F0Track {
    pub fn new(values: Vec<f64>, frame_shift: f64) -> Result<Self> {
        if !(frame_shift > 0.0) {
            return Err(NsfError::InvalidInput("frame_shift must be > 0".into()));
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(NsfError::InvalidInput(format!(
                "f0 frame {i} is negative or non-finite"
            )));
        }
        Ok(Self {
            values,
            frame_shift,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn frame_shift(&self) -> f64 {
        self.frame_shift
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_voiced(&self, n: usize) -> bool {
        self.values[n] > 0.0
    }

    /// Sample-level F0 by repetition (F0 is never smoothed).
    pub fn upsample(&self, sample_rate: u32) -> Result<Vec<f64>> {
        let factor = crate::signal::upsample_factor(self.frame_shift, sample_rate)?;
        Ok(self
            .values
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, factor))
            .collect())
    }

    pub fn to_frames(&self) -> Result<FrameSequence> {
        FrameSequence::from_column(self.values.clone(), self.frame_shift)
    }
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| NsfError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| NsfError::io(&tmp, e))?;
    f.sync_all().map_err(|e| NsfError::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| NsfError::io(path, e))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| NsfError::io(path, e))
}

// ---------------------------------------------------------------- WAV

fn wav_err(offset: usize, kind: WavErrorKind) -> NsfError {
    NsfError::Wav {
        offset: offset as u64,
        kind,
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

/// Parses a RIFF/WAVE PCM16 mono byte buffer.
pub fn parse_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 {
        return Err(wav_err(bytes.len(), WavErrorKind::Truncated("RIFF header")));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(wav_err(0, WavErrorKind::NotRiff));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(wav_err(8, WavErrorKind::NotWave));
    }
    let mut pos = 12;
    let mut sample_rate = None;
    while pos < bytes.len() {
        if bytes.len() - pos < 8 {
            return Err(wav_err(pos, WavErrorKind::Truncated("chunk header")));
        }
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4);
        let body = pos + 8;
        let available = (bytes.len() - body) as u64;
        if size as u64 > available {
            return Err(wav_err(
                pos + 4,
                WavErrorKind::ChunkLengthMismatch {
                    chunk: String::from_utf8_lossy(id).into_owned(),
                    declared: size,
                    available,
                },
            ));
        }
        let size = size as usize;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(wav_err(body, WavErrorKind::Truncated("fmt chunk")));
                }
                let format = u16_at(bytes, body);
                let channels = u16_at(bytes, body + 2);
                let rate = u32_at(bytes, body + 4);
                let block_align = u16_at(bytes, body + 12);
                let bits = u16_at(bytes, body + 14);
                if format != 1 {
                    return Err(wav_err(body, WavErrorKind::UnsupportedFormat(format)));
                }
                if channels != 1 {
                    return Err(wav_err(body + 2, WavErrorKind::UnsupportedChannels(channels)));
                }
                if rate == 0 {
                    return Err(wav_err(body + 4, WavErrorKind::ZeroSampleRate));
                }
                if bits != 16 {
                    return Err(wav_err(body + 14, WavErrorKind::UnsupportedBitDepth(bits)));
                }
                if block_align != 2 {
                    return Err(wav_err(body + 12, WavErrorKind::BadBlockAlign(block_align)));
                }
                sample_rate = Some(rate);
            }
            b"data" => {
                let rate = sample_rate.ok_or_else(|| wav_err(pos, WavErrorKind::MissingChunk("fmt ")))?;
                if !size.is_multiple_of(2) {
                    return Err(wav_err(
                        pos + 4,
                        WavErrorKind::ChunkLengthMismatch {
                            chunk: "data".into(),
                            declared: size as u32,
                            available,
                        },
                    ));
                }
                let samples = bytes[body..body + size]
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return Waveform::new(samples, rate);
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(wav_err(
        bytes.len(),
        WavErrorKind::MissingChunk(if sample_rate.is_some() { "data" } else { "fmt " }),
    ))
}

/// PCM16 mono WAV bytes; samples are clipped to [-1, 1).
pub fn encode_wav(waveform: &Waveform) -> Vec<u8> {
    let n = waveform.len();
    let data_len = (n * 2) as u32;
    let mut out = Vec::with_capacity(44 + n * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&waveform.sample_rate().to_le_bytes());
    out.extend_from_slice(&(waveform.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &v in waveform.samples() {
        let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<Waveform> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| NsfError::io(path, e))?;
    parse_wav(&bytes)
}

pub fn write_wav(path: impl AsRef<Path>, waveform: &Waveform) -> Result<()> {
    write_atomic(path.as_ref(), &encode_wav(waveform))
}

// ---------------------------------------------------------------- F0 / features

const SHIFT_KEY: &str = "frame_shift_ms=";

fn parse_shift_header(line: Option<&str>) -> std::result::Result<f64, String> {
    let line = line.ok_or("missing header line")?.trim();
    let value = line
        .strip_prefix(SHIFT_KEY)
        .ok_or_else(|| format!("expected header '{SHIFT_KEY}<ms>', found '{line}'"))?;
    let ms: f64 = value
        .trim()
        .parse()
        .map_err(|_| format!("bad frame shift '{value}'"))?;
    if !(ms > 0.0) || !ms.is_finite() {
        return Err(format!("frame shift must be > 0, got {ms}"));
    }
    Ok(ms / 1000.0)
}

fn format_shift_header(frame_shift: f64) -> String {
    format!("{SHIFT_KEY}{}\n", frame_shift * 1000.0)
}

pub fn parse_f0(text: &str) -> Result<F0Track> {
    let mut lines = text.lines();
    let frame_shift = parse_shift_header(lines.next())
        .map_err(|message| NsfError::F0Parse { line: 1, message })?;
    let mut values = Vec::new();
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        let v: f64 = s.parse().map_err(|_| NsfError::F0Parse {
            line: line_no,
            message: format!("not a number: '{s}'"),
        })?;
        if !v.is_finite() {
            return Err(NsfError::F0Parse {
                line: line_no,
                message: format!("non-finite value '{s}'"),
            });
        }
        if v < 0.0 {
            return Err(NsfError::F0Parse {
                line: line_no,
                message: format!("negative f0 {v}"),
            });
        }
        values.push(v);
    }
    if values.is_empty() {
        return Err(NsfError::F0Parse {
            line: text.lines().count().max(1),
            message: "no frames".into(),
        });
    }
    F0Track::new(values, frame_shift)
}

pub fn format_f0(track: &F0Track) -> String {
    let mut s = format_shift_header(track.frame_shift());
    for v in track.values() {
        s.push_str(&format!("{v}\n"));
    }
    s
}

pub fn read_f0(path: impl AsRef<Path>) -> Result<F0Track> {
    parse_f0(&read_to_string(path.as_ref())?)
}

pub fn write_f0(path: impl AsRef<Path>, track: &F0Track) -> Result<()> {
    write_atomic(path.as_ref(), format_f0(track).as_bytes())
}

pub fn parse_features(text: &str) -> Result<FrameSequence> {
    let mut lines = text.lines();
    let frame_shift = parse_shift_header(lines.next())
        .map_err(|message| NsfError::FeatureParse { line: 1, message })?;
    let mut data = Vec::new();
    let mut dims = None;
    let mut frames = 0;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let s = line.trim();
        if s.is_empty() {
            continue;
        }
        let row = s
            .split(',')
            .map(|v| {
                v.trim().parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| {
                    NsfError::FeatureParse {
                        line: line_no,
                        message: format!("bad value '{}'", v.trim()),
                    }
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        match dims {
            None => dims = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(NsfError::FeatureParse {
                    line: line_no,
                    message: format!("expected {d} values, found {}", row.len()),
                })
            }
            _ => {}
        }
        data.extend(row);
        frames += 1;
    }
    let dims = dims.ok_or(NsfError::FeatureParse {
        line: 1,
        message: "no frames".into(),
    })?;
    FrameSequence::new(data, frames, dims, frame_shift)
}

pub fn format_features(frames: &FrameSequence) -> String {
    let mut s = format_shift_header(frames.frame_shift());
    for n in 0..frames.num_frames() {
        let row: Vec<String> = frames.frame(n).iter().map(|v| format!("{v}")).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FrameSequence> {
    parse_features(&read_to_string(path.as_ref())?)
}

pub fn write_features(path: impl AsRef<Path>, frames: &FrameSequence) -> Result<()> {
    write_atomic(path.as_ref(), format_features(frames).as_bytes())
}

/// Plain CSV with a header row; values use Rust's shortest round-trip format.
pub fn write_csv<I>(path: impl AsRef<Path>, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut s = header.join(",");
    s.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    write_atomic(path.as_ref(), s.as_bytes())
}
