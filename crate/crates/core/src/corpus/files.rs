use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::dsp::{MelSpectrogram, Waveform};
use crate::error::{Error, Result};

/// Write mono 16-bit PCM. Samples are clamped to `[-1, 1]` and scaled by
/// 32767, matching the quantization applied when utterances are rendered.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Audio(format!("create {}: {e}", path.display())))?;
    for &s in &wave.samples {
        let q = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer
            .write_sample(q)
            .map_err(|e| Error::Audio(format!("write {}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Audio(format!("finalize {}: {e}", path.display())))?;
    Ok(())
}

/// Read mono 16-bit PCM back into `f64` samples.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let mut reader = hound::WavReader::open(path)
        .map_err(|e| Error::Audio(format!("open {}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 {
        return Err(Error::Audio(format!(
            "{}: want mono 16-bit PCM, got {} ch / {} bit",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples: std::result::Result<Vec<i16>, _> = reader.samples::<i16>().collect();
    let samples = samples.map_err(|e| Error::Audio(format!("read {}: {e}", path.display())))?;
    if samples.is_empty() {
        return Err(Error::Audio(format!("{}: empty audio", path.display())));
    }
    Ok(Waveform::new(
        samples.iter().map(|&v| v as f64 / 32767.0).collect(),
        spec.sample_rate,
    ))
}

/// Write mel frames as little-endian `f32`, row-major M×B, with a text
/// sidecar `<path>.meta` recording frames, bands, hop, window and sample
/// rate.
pub fn write_mel(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    let mut buf = Vec::with_capacity(mel.frames.len() * 4);
    for v in mel.frames.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    std::fs::write(path, &buf).map_err(|e| Error::io(path, e))?;

    let meta = format!(
        "frames={}\nbands={}\nhop_ms={}\nwindow_ms={}\nsample_rate={}\n",
        mel.n_frames(),
        mel.n_bands(),
        mel.hop_ms,
        mel.window_ms,
        mel.sample_rate
    );
    let meta_path = sidecar_path(path);
    std::fs::write(&meta_path, meta).map_err(|e| Error::io(meta_path, e))?;
    Ok(())
}

pub fn read_mel(path: &Path) -> Result<MelSpectrogram> {
    let meta_path = sidecar_path(path);
    let meta = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut frames = None;
    let mut bands = None;
    let mut hop_ms = None;
    let mut window_ms = None;
    let mut sample_rate = None;
    for line in meta.lines() {
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        match k.trim() {
            "frames" => frames = v.trim().parse::<usize>().ok(),
            "bands" => bands = v.trim().parse::<usize>().ok(),
            "hop_ms" => hop_ms = v.trim().parse::<f64>().ok(),
            "window_ms" => window_ms = v.trim().parse::<f64>().ok(),
            "sample_rate" => sample_rate = v.trim().parse::<u32>().ok(),
            _ => {
                return Err(Error::Audio(format!(
                    "{}: unknown mel header key {k:?}",
                    meta_path.display()
                )))
            }
        }
    }
    let (frames, bands) = match (frames, bands) {
        (Some(f), Some(b)) if f > 0 && b > 0 => (f, b),
        _ => {
            return Err(Error::Audio(format!(
                "{}: missing or invalid frames/bands",
                meta_path.display()
            )))
        }
    };

    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    if buf.len() != frames * bands * 4 {
        return Err(Error::Audio(format!(
            "{}: {} bytes, expected {} ({}x{} f32)",
            path.display(),
            buf.len(),
            frames * bands * 4,
            frames,
            bands
        )));
    }
    let mut data = Vec::with_capacity(frames * bands);
    for chunk in buf.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]) as f64);
    }
    Ok(MelSpectrogram {
        frames: Array2::from_shape_vec((frames, bands), data)
            .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?,
        hop_ms: hop_ms.unwrap_or(12.5),
        window_ms: window_ms.unwrap_or(50.0),
        sample_rate: sample_rate.unwrap_or(16000),
    })
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_os_string();
    os.push(".meta");
    std::path::PathBuf::from(os)
}

/// Space-separated symbol ids, one utterance per file.
pub fn write_transcript(path: &Path, symbols: &[u16]) -> Result<()> {
    let line: Vec<String> = symbols.iter().map(|s| s.to_string()).collect();
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    writeln!(f, "{}", line.join(" ")).map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_transcript(path: &Path) -> Result<Vec<u16>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.split_whitespace()
        .map(|tok| {
            tok.parse::<u16>()
                .map_err(|e| Error::Audio(format!("{}: bad symbol {tok:?}: {e}", path.display())))
        })
        .collect()
}
