//! A small formant synthesizer giving distinct, reproducible voices.
//!
//! A glottal pulse train at the speaker's pitch is passed through three
//! cascaded vowel resonators whose centre frequencies scale with the
//! speaker's vocal-tract length. Syllables are short vowels preceded by a
//! fricative burst.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{rms, Language, Utterance, FRAME_SAMPLES, SAMPLE_RATE};

/// Formant centre frequencies in Hz for five vowels.
const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [530.0, 1840.0, 2480.0],
    [270.0, 2290.0, 3010.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
];
const BANDWIDTHS: [f64; 3] = [80.0, 100.0, 120.0];

const EN_PHRASES: [&str; 8] = [
    "what is the weather like today",
    "please play some music",
    "tell me a story about the sea",
    "how far is the station from here",
    "set a timer for ten minutes",
    "can you recommend a good book",
    "remind me to call my sister",
    "what time does the shop close",
];
const ZH_PHRASES: [&str; 8] = [
    "今天天气怎么样",
    "请播放一些音乐",
    "给我讲一个关于大海的故事",
    "火车站离这里有多远",
    "设置一个十分钟的计时器",
    "你能推荐一本好书吗",
    "提醒我给姐姐打电话",
    "商店几点关门",
];

/// Speaker parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Voice {
    /// Mean pitch in Hz.
    pub f0: f64,
    /// Multiplier on all formant frequencies; larger means a shorter tract.
    pub formant_scale: f64,
    /// Fraction of aspiration noise mixed into the glottal source.
    pub breathiness: f64,
    /// Target RMS of voiced speech.
    pub level: f64,
}

impl Voice {
    /// Built-in speakers; `0` and `1` are the usual primary voices, the rest
    /// serve as interferers.
    pub const PRESETS: [Voice; 4] = [
        Voice {
            f0: 115.0,
            formant_scale: 1.0,
            breathiness: 0.05,
            level: 0.08,
        },
        Voice {
            f0: 220.0,
            formant_scale: 1.18,
            breathiness: 0.1,
            level: 0.08,
        },
        Voice {
            f0: 165.0,
            formant_scale: 1.32,
            breathiness: 0.25,
            level: 0.08,
        },
        Voice {
            f0: 90.0,
            formant_scale: 0.86,
            breathiness: 0.02,
            level: 0.08,
        },
    ];

    pub fn preset(i: usize) -> Voice {
        Self::PRESETS[i % Self::PRESETS.len()]
    }
}

/// Two-pole resonator with roughly unity gain at its centre frequency.
struct Resonator {
    a1: f64,
    a2: f64,
    g: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bw: f64) -> Self {
        let fs = f64::from(SAMPLE_RATE);
        let r = (-std::f64::consts::PI * bw / fs).exp();
        let theta = 2.0 * std::f64::consts::PI * freq / fs;
        Self {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            g: (1.0 - r) * (1.0 - 2.0 * r * (2.0 * theta).cos() + r * r).sqrt(),
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn step(&mut self, x: f64) -> f64 {
        let y = self.g * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn envelope(i: usize, n: usize, ramp: usize) -> f64 {
    let ramp = ramp.min(n / 2).max(1);
    if i < ramp {
        i as f64 / ramp as f64
    } else if i + ramp > n {
        (n - i) as f64 / ramp as f64
    } else {
        1.0
    }
}

/// Synthesizes about `seconds` of speech; the length is rounded to whole
/// 10 ms frames and the first and last frames are voiced.
pub fn synthesize_speech(voice: &Voice, seconds: f64, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = f64::from(SAMPLE_RATE);
    let n_frames = ((seconds * 100.0).round() as usize).max(1);
    let total = n_frames * FRAME_SAMPLES;
    let mut out = Vec::with_capacity(total);
    let mut phase = 0.0f64;
    let mut t = 0usize;
    while out.len() < total {
        let vowel = VOWELS[rng.gen_range(0..VOWELS.len())];
        let syl = ((rng.gen_range(0.12..0.26) * fs) as usize).min(total - out.len());
        let burst = if rng.gen_bool(0.5) { (rng.gen_range(0.02..0.04) * fs) as usize } else { 0 };
        let burst = burst.min(syl / 3);
        let mut res: Vec<Resonator> = vowel
            .iter()
            .zip(BANDWIDTHS)
            .map(|(&f, bw)| Resonator::new(f * voice.formant_scale, bw))
            .collect();
        let mut hiss = Resonator::new(4500.0 * voice.formant_scale, 1500.0);
        let glide = rng.gen_range(-0.08..0.08);
        let stress = rng.gen_range(0.7..1.3);
        let mut syllable = Vec::with_capacity(syl);
        for i in 0..syl {
            let time = t as f64 / fs;
            let pos = i as f64 / syl as f64;
            let f0 = voice.f0 * (1.0 + 0.02 * (2.0 * std::f64::consts::PI * 5.0 * time).sin() + glide * pos);
            phase += f0 / fs;
            if phase >= 1.0 {
                phase -= 1.0;
            }
            let noise: f64 = rng.gen_range(-1.0..1.0);
            let sample = if i < burst {
                0.5 * hiss.step(noise) * envelope(i, burst, burst / 4)
            } else {
                let pulse = if phase < 0.4 { (std::f64::consts::PI * phase / 0.4).sin().powi(2) } else { 0.0 };
                let src = (1.0 - voice.breathiness) * (pulse - 0.3) + voice.breathiness * noise;
                let y = res.iter_mut().fold(src, |x, r| r.step(x));
                y * envelope(i - burst, syl - burst, (0.015 * fs) as usize).max(0.05)
            };
            syllable.push(sample);
            t += 1;
        }
        // vowels differ widely in resonator gain; level each syllable
        let level = rms_f64(&syllable);
        let gain = if level > 0.0 { stress / level } else { 0.0 };
        out.extend(syllable.iter().map(|v| v * gain));
    }
    let level = rms_f64(&out);
    let gain = if level > 0.0 { voice.level / level } else { 0.0 };
    out.iter().map(|&v| (v * gain).clamp(-1.0, 1.0) as f32).collect()
}

fn rms_f64(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt()
}

/// An utterance with `lead` seconds of silence before and `tail` after the
/// speech, all on the 10 ms grid.
pub fn synthesize_utterance(voice: &Voice, language: Language, lead: f64, speech_seconds: f64, tail: f64, seed: u64) -> Utterance {
    let frames = |s: f64| (s * 100.0).round() as usize * FRAME_SAMPLES;
    let speech = synthesize_speech(voice, speech_seconds, seed);
    let mut samples = vec![0.0f32; frames(lead)];
    let start = samples.len() as f64 / f64::from(SAMPLE_RATE);
    samples.extend_from_slice(&speech);
    let end = samples.len() as f64 / f64::from(SAMPLE_RATE);
    samples.resize(samples.len() + frames(tail), 0.0);
    let phrases = match language {
        Language::En => &EN_PHRASES,
        Language::Zh => &ZH_PHRASES,
    };
    Utterance {
        samples,
        transcript: phrases[(seed % phrases.len() as u64) as usize].to_string(),
        language,
        speech: Some((start, end)),
    }
}

/// Measured RMS of an utterance's speech interval.
pub fn speech_rms(u: &Utterance) -> f64 {
    let (a, b) = u.speech_interval();
    let fs = f64::from(SAMPLE_RATE);
    let (a, b) = ((a * fs).round() as usize, ((b * fs).round() as usize).min(u.samples.len()));
    rms(&u.samples[a..b])
}
