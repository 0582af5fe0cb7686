//! Evaluation scenarios: a primary utterance with optional background noise
//! starting before its onset and a quieter second speaker near its end.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SimError;
use crate::audio::{add_scaled, clip_in_place, snr_gain, Utterance, FRAME_SAMPLES, FRAME_SECONDS, SAMPLE_RATE};
use crate::pvad::fit_length;
use crate::turn::GroundTruth;

pub const SNR_NOISE_DB: f64 = 5.0;
pub const SNR_INTERFERER_DB: f64 = 20.0;
pub const NOISE_PROBABILITY: f64 = 0.5;
/// Half-width of the window around the primary end in which the second
/// speaker starts.
pub const INTERFERER_WINDOW: f64 = 1.0;
pub const MIN_PRIMARY_SECONDS: f64 = 0.5;
/// Range of how long the noise runs before the primary onset.
pub const NOISE_LEAD: (f64, f64) = (0.1, 0.5);

/// Clips to draw noise and second speakers from.
#[derive(Debug, Clone, Default)]
pub struct ScenarioPool {
    pub noise: Vec<Vec<f32>>,
    pub interferers: Vec<Utterance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub primary: Utterance,
    /// Timeline position of the primary clip's first sample.
    pub primary_start: f64,
    pub noise_present: bool,
    /// Noise already fitted to its span on the timeline.
    pub noise: Option<Vec<f32>>,
    pub noise_start: f64,
    pub interferer: Option<Utterance>,
    /// Interferer speech onset relative to the primary speech end.
    pub interferer_offset: f64,
    pub snr_noise_db: f64,
    pub snr_interferer_db: f64,
    pub ground_truth: GroundTruth,
}

/// Which sources are active in one 10 ms frame.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrameLabel {
    pub primary: bool,
    pub interferer: bool,
    pub noise: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScenario {
    pub samples: Vec<f32>,
    pub labels: Vec<FrameLabel>,
    pub clipped: usize,
}

impl RenderedScenario {
    /// Primary activity as per-frame probabilities.
    pub fn primary_track(&self) -> Vec<f32> {
        self.labels.iter().map(|l| if l.primary { 1.0 } else { 0.0 }).collect()
    }
}

fn snap(t: f64) -> f64 {
    (t / FRAME_SECONDS).round() * FRAME_SECONDS
}

fn to_sample(t: f64) -> usize {
    (t * f64::from(SAMPLE_RATE)).round().max(0.0) as usize
}

impl Scenario {
    /// Primary speech interval on the timeline.
    pub fn primary_interval(&self) -> (f64, f64) {
        let (a, b) = self.primary.speech_interval();
        (self.primary_start + a, self.primary_start + b)
    }

    /// Timeline position of the interferer clip's first sample.
    pub fn interferer_start(&self) -> Option<f64> {
        let i = self.interferer.as_ref()?;
        Some(self.primary_interval().1 + self.interferer_offset - i.speech_interval().0)
    }

    pub fn noise_interval(&self) -> Option<(f64, f64)> {
        let n = self.noise.as_ref()?;
        Some((self.noise_start, self.noise_start + n.len() as f64 / f64::from(SAMPLE_RATE)))
    }

    /// Timeline length in seconds.
    pub fn duration(&self) -> f64 {
        let mut end = self.primary_start + self.primary.duration();
        if let (Some(s), Some(i)) = (self.interferer_start(), &self.interferer) {
            end = end.max(s + i.duration());
        }
        if let Some((_, e)) = self.noise_interval() {
            end = end.max(e);
        }
        end
    }

    pub fn n_frames(&self) -> usize {
        (self.duration() / FRAME_SECONDS - 1e-9).ceil() as usize
    }

    /// Ground truth with the primary speaker removed.
    pub fn silent_ground_truth(&self) -> GroundTruth {
        GroundTruth {
            primary_onset: None,
            primary_end: None,
            ..self.ground_truth.clone()
        }
    }
}

/// Draws noise presence, clips and the interferer offset for `primary`.
pub fn generate_scenario(primary: Utterance, pool: &ScenarioPool, seed: u64) -> Result<Scenario, SimError> {
    let (p0, p1) = primary.speech_interval();
    if p1 - p0 + 1e-9 < MIN_PRIMARY_SECONDS {
        return Err(SimError::PrimaryTooShort { seconds: p1 - p0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise_present = rng.gen_bool(NOISE_PROBABILITY) && !pool.noise.is_empty();
    let noise_idx = rng.gen_range(0..pool.noise.len().max(1));
    let noise_lead = snap(rng.gen_range(NOISE_LEAD.0..NOISE_LEAD.1));
    let interferer_idx = rng.gen_range(0..pool.interferers.len().max(1));
    let interferer_offset = rng.gen_range(-INTERFERER_WINDOW..=INTERFERER_WINDOW);
    let interferer = pool.interferers.get(interferer_idx).cloned();

    // shift the primary right until nothing starts before zero
    let mut primary_start: f64 = 0.0;
    if noise_present {
        primary_start = primary_start.max(noise_lead - p0);
    }
    if let Some(i) = &interferer {
        primary_start = primary_start.max(i.speech_interval().0 - (p1 + interferer_offset));
    }
    let primary_start = (primary_start / FRAME_SECONDS - 1e-9).ceil().max(0.0) * FRAME_SECONDS;
    let (onset, end) = (primary_start + p0, primary_start + p1);

    let noise_start = if noise_present { onset - noise_lead } else { 0.0 };
    let noise = noise_present.then(|| fit_length(&pool.noise[noise_idx], to_sample(end) - to_sample(noise_start)));
    let interferer_interval = interferer.as_ref().map(|i| {
        let (a, b) = i.speech_interval();
        (end + interferer_offset, end + interferer_offset + (b - a))
    });
    Ok(Scenario {
        seed,
        primary,
        primary_start,
        noise_present,
        noise,
        noise_start,
        interferer,
        interferer_offset,
        snr_noise_db: SNR_NOISE_DB,
        snr_interferer_db: SNR_INTERFERER_DB,
        ground_truth: GroundTruth {
            primary_onset: Some(onset),
            primary_end: Some(end),
            interferer_interval,
            noise_present,
        },
    })
}

fn overlaps(frame: usize, interval: Option<(f64, f64)>) -> bool {
    let Some((a, b)) = interval else { return false };
    let (s, e) = (frame as f64 * FRAME_SECONDS, (frame + 1) as f64 * FRAME_SECONDS);
    s < b - 1e-9 && e > a + 1e-9
}

/// Mixes the scenario; `include_primary = false` renders the same noise and
/// interferer at the same levels with the primary speaker muted.
pub fn render_scenario_with(s: &Scenario, include_primary: bool) -> Result<RenderedScenario, SimError> {
    let n_frames = s.n_frames();
    let mut out = vec![0.0f32; n_frames * FRAME_SAMPLES];
    let (onset, end) = s.primary_interval();
    let p_off = to_sample(s.primary_start);
    let (pa, pb) = {
        let (a, b) = s.primary.speech_interval();
        (to_sample(a), to_sample(b).min(s.primary.samples.len()))
    };
    let primary_speech = &s.primary.samples[pa..pb];
    if include_primary {
        add_scaled(&mut out, &s.primary.samples, 1.0, p_off);
    }
    if let Some(noise) = &s.noise {
        // level is set over the region where noise and primary speech overlap
        let n_off = to_sample(s.noise_start);
        let (ov_a, ov_b) = (to_sample(onset).max(n_off), to_sample(end).min(n_off + noise.len()));
        if ov_b <= ov_a {
            return Err(SimError::NoOverlap);
        }
        let sig = &s.primary.samples[ov_a - p_off..ov_b - p_off];
        let gain = snr_gain(sig, &noise[ov_a - n_off..ov_b - n_off], s.snr_noise_db)?;
        add_scaled(&mut out, noise, gain, n_off);
    }
    if let (Some(i), Some(start)) = (&s.interferer, s.interferer_start()) {
        let (a, b) = i.speech_interval();
        let speech = &i.samples[to_sample(a)..to_sample(b).min(i.samples.len())];
        let gain = snr_gain(primary_speech, speech, s.snr_interferer_db)?;
        add_scaled(&mut out, &i.samples, gain, to_sample(start));
    }
    let clipped = clip_in_place(&mut out);
    let gt = &s.ground_truth;
    let labels = (0..n_frames)
        .map(|k| FrameLabel {
            primary: include_primary && overlaps(k, Some((onset, end))),
            interferer: overlaps(k, gt.interferer_interval),
            noise: overlaps(k, s.noise_interval()),
        })
        .collect();
    Ok(RenderedScenario {
        samples: out,
        labels,
        clipped,
    })
}

pub fn render_scenario(s: &Scenario) -> Result<RenderedScenario, SimError> {
    render_scenario_with(s, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{db_ratio, rms, Language};
    use crate::sim::{noise_clip, synthesize_utterance, NoiseKind, Voice};

    fn pool() -> ScenarioPool {
        ScenarioPool {
            noise: vec![noise_clip(NoiseKind::Pink, 1.0, 0.05, 1), noise_clip(NoiseKind::White, 0.7, 0.05, 2)],
            interferers: vec![synthesize_utterance(&Voice::preset(2), Language::En, 0.1, 2.0, 0.1, 5)],
        }
    }

    fn primary(seed: u64) -> Utterance {
        synthesize_utterance(&Voice::preset(0), Language::En, 0.2, 1.2, 0.2, seed)
    }

    #[test]
    fn same_seed_same_scenario() {
        assert_eq!(generate_scenario(primary(1), &pool(), 7).unwrap(), generate_scenario(primary(1), &pool(), 7).unwrap());
    }

    #[test]
    fn short_primary_is_rejected() {
        let p = synthesize_utterance(&Voice::preset(0), Language::En, 0.1, 0.4, 0.1, 1);
        assert!(matches!(generate_scenario(p, &pool(), 1), Err(SimError::PrimaryTooShort { .. })));
    }

    #[test]
    fn noise_only_and_bare_primary_render_as_is() {
        let s = generate_scenario(primary(3), &ScenarioPool::default(), 11).unwrap();
        assert_eq!(s.primary_start, 0.0);
        let r = render_scenario(&s).unwrap();
        assert_eq!(r.samples, s.primary.samples);
        assert_eq!(r.labels.len(), s.primary.samples.len() / FRAME_SAMPLES);
    }

    #[test]
    fn noise_precedes_onset_at_five_db() {
        let p = pool();
        let s = (0..50)
            .map(|seed| generate_scenario(primary(seed), &p, seed).unwrap())
            .find(|s| s.noise_present)
            .unwrap();
        let (onset, end) = s.primary_interval();
        assert!(s.noise_start < onset);
        let mut quiet = s.clone();
        quiet.interferer = None;
        let mixed = render_scenario(&quiet).unwrap().samples;
        let (a, b) = (to_sample(onset), to_sample(end));
        let p_off = to_sample(s.primary_start);
        let clean: Vec<f32> = s.primary.samples[a - p_off..b - p_off].to_vec();
        let resid: Vec<f32> = mixed[a..b].iter().zip(&clean).map(|(m, c)| m - c).collect();
        assert!((db_ratio(rms(&clean), rms(&resid)) - 5.0).abs() < 0.1);
        let first = render_scenario(&quiet).unwrap().labels.iter().position(|l| l.noise).unwrap();
        assert!((first as f64) * FRAME_SECONDS < onset);
    }

    #[test]
    fn labels_cover_the_timeline() {
        let p = pool();
        for seed in 0..20 {
            let s = generate_scenario(primary(seed), &p, seed).unwrap();
            let r = render_scenario(&s).unwrap();
            assert_eq!(r.labels.len(), (s.duration() / FRAME_SECONDS - 1e-9).ceil() as usize);
            let (onset, _) = s.primary_interval();
            let first = r.labels.iter().position(|l| l.primary).unwrap();
            assert!(((first as f64) * FRAME_SECONDS - onset).abs() < 1e-9);
            assert!(r.samples.iter().all(|v| v.abs() <= 1.0));
            let silent = render_scenario_with(&s, false).unwrap();
            assert!(silent.labels.iter().all(|l| !l.primary));
        }
    }
}
