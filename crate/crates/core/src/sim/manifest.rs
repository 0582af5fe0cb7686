//! Scenario manifests: one JSON line per case, with audio in WAV files
//! next to the manifest.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Scenario, SimCase, SimError};
use crate::audio::{read_wav, write_wav, Language, Utterance};
use crate::turn::GroundTruth;

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub language: Language,
    pub transcript: String,
    pub primary_wav: String,
    /// Speech interval within the primary clip.
    pub primary_speech: (f64, f64),
    pub primary_start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_wav: Option<String>,
    #[serde(default)]
    pub noise_start: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interferer_wav: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interferer_speech: Option<(f64, f64)>,
    pub interferer_offset: f64,
    pub snr_noise_db: f64,
    pub snr_interferer_db: f64,
    pub enrollment_wav: String,
    pub ground_truth: GroundTruth,
}

/// Writes WAVs under `dir/audio/` and the manifest at `dir/manifest.jsonl`.
pub fn write_manifest(dir: &Path, cases: &[SimCase]) -> Result<(), SimError> {
    let audio = dir.join("audio");
    fs::create_dir_all(&audio)?;
    let mut out = fs::File::create(dir.join(MANIFEST_FILE))?;
    for c in cases {
        let s = &c.scenario;
        let wav = |suffix: &str, samples: &[f32]| -> Result<String, SimError> {
            let name = format!("audio/{}-{suffix}.wav", c.id);
            write_wav(dir.join(&name), samples)?;
            Ok(name)
        };
        let entry = ManifestEntry {
            id: c.id.clone(),
            seed: s.seed,
            language: s.primary.language,
            transcript: s.primary.transcript.clone(),
            primary_wav: wav("primary", &s.primary.samples)?,
            primary_speech: s.primary.speech_interval(),
            primary_start: s.primary_start,
            noise_wav: s.noise.as_ref().map(|n| wav("noise", n)).transpose()?,
            noise_start: s.noise_start,
            interferer_wav: s.interferer.as_ref().map(|i| wav("interferer", &i.samples)).transpose()?,
            interferer_speech: s.interferer.as_ref().map(Utterance::speech_interval),
            interferer_offset: s.interferer_offset,
            snr_noise_db: s.snr_noise_db,
            snr_interferer_db: s.snr_interferer_db,
            enrollment_wav: wav("enroll", &c.enrollment)?,
            ground_truth: s.ground_truth.clone(),
        };
        let line = serde_json::to_string(&entry).map_err(std::io::Error::from)?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Loads every case of a manifest; WAV paths resolve against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<SimCase>, SimError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let reader = BufReader::new(fs::File::open(path)?);
    let mut cases = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| SimError::Manifest { line: i + 1, message };
        let e: ManifestEntry = serde_json::from_str(&line).map_err(|err| bad(err.to_string()))?;
        let primary = Utterance {
            samples: read_wav(base.join(&e.primary_wav))?,
            transcript: e.transcript.clone(),
            language: e.language,
            speech: Some(e.primary_speech),
        };
        let interferer = match (&e.interferer_wav, e.interferer_speech) {
            (Some(p), speech) => Some(Utterance {
                samples: read_wav(base.join(p))?,
                transcript: String::new(),
                language: e.language,
                speech,
            }),
            (None, _) => None,
        };
        let noise = e.noise_wav.as_ref().map(|p| read_wav(base.join(p))).transpose()?;
        if noise.is_some() != e.ground_truth.noise_present {
            return Err(bad("noise_wav disagrees with ground_truth.noise_present".into()));
        }
        cases.push(SimCase {
            id: e.id,
            scenario: Scenario {
                seed: e.seed,
                primary,
                primary_start: e.primary_start,
                noise_present: noise.is_some(),
                noise,
                noise_start: e.noise_start,
                interferer,
                interferer_offset: e.interferer_offset,
                snr_noise_db: e.snr_noise_db,
                snr_interferer_db: e.snr_interferer_db,
                ground_truth: e.ground_truth,
            },
            enrollment: read_wav(base.join(&e.enrollment_wav))?,
        });
    }
    Ok(cases)
}
