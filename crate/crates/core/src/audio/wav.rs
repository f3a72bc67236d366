//! RIFF/WAVE reading and writing for 16-bit PCM and 32-bit float.

use super::{AudioError, Waveform};

const TAG_PCM: u16 = 0x0001;
const TAG_FLOAT: u16 = 0x0003;
const TAG_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleFormat {
    Pcm16,
    Float32,
}

impl SampleFormat {
    fn bits(self) -> u16 {
        match self {
            SampleFormat::Pcm16 => 16,
            SampleFormat::Float32 => 32,
        }
    }

    fn tag(self) -> u16 {
        match self {
            SampleFormat::Pcm16 => TAG_PCM,
            SampleFormat::Float32 => TAG_FLOAT,
        }
    }
}

struct Fmt {
    format: SampleFormat,
    channels: u16,
    sample_rate: u32,
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

fn malformed(msg: impl Into<String>) -> AudioError {
    AudioError::MalformedWav(msg.into())
}

fn parse_fmt(body: &[u8]) -> Result<Fmt, AudioError> {
    if body.len() < 16 {
        return Err(malformed("fmt chunk shorter than 16 bytes"));
    }
    let mut tag = u16_at(body, 0);
    let channels = u16_at(body, 2);
    let sample_rate = u32_at(body, 4);
    let bits = u16_at(body, 14);
    if tag == TAG_EXTENSIBLE {
        // cbSize, valid bits, channel mask, then the sub-format GUID whose
        // first two bytes carry the effective tag.
        if body.len() < 40 {
            return Err(malformed("extensible fmt chunk shorter than 40 bytes"));
        }
        tag = u16_at(body, 24);
    }
    let format = match (tag, bits) {
        (TAG_PCM, 16) => SampleFormat::Pcm16,
        (TAG_FLOAT, 32) => SampleFormat::Float32,
        _ => return Err(AudioError::UnsupportedFormat { tag, bits }),
    };
    if !(1..=2).contains(&channels) {
        return Err(AudioError::UnsupportedChannels(channels));
    }
    if sample_rate == 0 {
        return Err(malformed("sample rate is zero"));
    }
    Ok(Fmt {
        format,
        channels,
        sample_rate,
    })
}

/// Decodes a WAV file into a mono waveform (channel mean). Integer samples
/// are scaled by 1/32768.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform, AudioError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(malformed("missing RIFF/WAVE header"));
    }
    let mut fmt = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let available = bytes.len() - body_start;
        match id {
            b"fmt " => {
                if size > available {
                    return Err(malformed("truncated fmt chunk"));
                }
                fmt = Some(parse_fmt(&bytes[body_start..body_start + size])?);
            }
            b"data" => {
                let fmt = fmt.ok_or_else(|| malformed("data chunk before fmt chunk"))?;
                if size > available {
                    return Err(AudioError::TruncatedData {
                        expected: size,
                        found: available,
                    });
                }
                return decode_frames(&fmt, &bytes[body_start..body_start + size]);
            }
            _ => {}
        }
        pos = body_start.saturating_add(size).saturating_add(size & 1);
    }
    Err(malformed(if fmt.is_some() {
        "no data chunk"
    } else {
        "no fmt chunk"
    }))
}

fn decode_frames(fmt: &Fmt, data: &[u8]) -> Result<Waveform, AudioError> {
    let width = (fmt.format.bits() / 8) as usize;
    let frame = width * fmt.channels as usize;
    if !data.len().is_multiple_of(frame) {
        return Err(malformed(format!(
            "data chunk of {} bytes is not a whole number of {frame}-byte frames",
            data.len()
        )));
    }
    let sample = |b: &[u8]| -> f32 {
        match fmt.format {
            SampleFormat::Pcm16 => i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0,
            SampleFormat::Float32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]),
        }
    };
    let samples: Vec<f32> = data
        .chunks_exact(frame)
        .map(|f| {
            let sum: f32 = f.chunks_exact(width).map(sample).sum();
            sum / fmt.channels as f32
        })
        .collect();
    Waveform::new(samples, fmt.sample_rate)
}

/// Encodes interleaved samples. PCM values are rounded and clipped to the
/// 16-bit range.
pub fn encode_wav(
    interleaved: &[f32],
    channels: u16,
    sample_rate: u32,
    format: SampleFormat,
) -> Vec<u8> {
    let width = (format.bits() / 8) as usize;
    let data_len = interleaved.len() * width;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.tag().to_le_bytes());
    out.extend_from_slice(&channels.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    let block_align = channels as u32 * width as u32;
    out.extend_from_slice(&(sample_rate * block_align).to_le_bytes());
    out.extend_from_slice(&(block_align as u16).to_le_bytes());
    out.extend_from_slice(&format.bits().to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &v in interleaved {
        match format {
            SampleFormat::Pcm16 => {
                let q = (v as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            SampleFormat::Float32 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}
