use std::path::Path;

use super::{AudioError, SAMPLE_RATE};

/// Reads a 16 kHz mono PCM16 WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<Vec<f32>, AudioError> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(AudioError::UnsupportedSampleRate(spec.sample_rate));
    }
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
    {
        return Err(AudioError::WavFormat(format!(
            "{} channel(s), {}-bit {:?}",
            spec.channels, spec.bits_per_sample, spec.sample_format
        )));
    }
    reader
        .samples::<i16>()
        .map(|s| Ok(f32::from(s?) / 32768.0))
        .collect()
}

const SPEC: hound::WavSpec = hound::WavSpec {
    channels: 1,
    sample_rate: SAMPLE_RATE,
    bits_per_sample: 16,
    sample_format: hound::SampleFormat::Int,
};

fn write_samples<W: std::io::Write + std::io::Seek>(out: W, samples: &[f32]) -> Result<(), AudioError> {
    let mut writer = hound::WavWriter::new(out, SPEC)?;
    for &s in samples {
        writer.write_sample(to_i16(s))?;
    }
    writer.finalize()?;
    Ok(())
}

/// Writes samples as a 16 kHz mono PCM16 WAV file.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f32]) -> Result<(), AudioError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_samples(file, samples)
}

/// Encodes samples as an in-memory 16 kHz mono PCM16 WAV file.
pub fn wav_bytes(samples: &[f32]) -> Vec<u8> {
    let mut buf = std::io::Cursor::new(Vec::new());
    write_samples(&mut buf, samples).expect("writing to memory");
    buf.into_inner()
}

fn to_i16(s: f32) -> i16 {
    (s.clamp(-1.0, 1.0) * 32767.0).round() as i16
}

/// Decodes little-endian PCM16. A trailing odd byte is ignored.
pub fn pcm16_le_to_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(2)
        .map(|b| f32::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0)
        .collect()
}

pub fn f32_to_pcm16_le(samples: &[f32]) -> Vec<u8> {
    samples.iter().flat_map(|&s| to_i16(s).to_le_bytes()).collect()
}
