use serde::{Deserialize, Serialize};

use crate::audio::frame_time;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherConfig {
    pub onset_thresh: f32,
    pub offset_thresh: f32,
    /// Consecutive frames at or above `onset_thresh` before an onset.
    pub onset_frames: u32,
    /// Consecutive frames below `offset_thresh` before an offset.
    pub hangover_frames: u32,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            onset_thresh: 0.6,
            offset_thresh: 0.4,
            onset_frames: 3,
            hangover_frames: 30,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.onset_thresh) || !(0.0..=1.0).contains(&self.offset_thresh) {
            return Err("thresholds must lie in [0, 1]".into());
        }
        if self.onset_thresh < self.offset_thresh {
            return Err(format!(
                "onset_thresh {} is below offset_thresh {}",
                self.onset_thresh, self.offset_thresh
            ));
        }
        if self.onset_frames == 0 {
            return Err("onset_frames must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentKind {
    PrimarySpeech,
}

/// A closed interval of primary-speaker speech, in stream seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeechSegment {
    pub start: f64,
    pub end: f64,
    pub kind: SegmentKind,
}

impl SpeechSegment {
    pub fn new(start: f64, end: f64) -> Self {
        Self {
            start,
            end,
            kind: SegmentKind::PrimarySpeech,
        }
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VadEvent {
    /// Timestamped at the first frame of the qualifying run.
    SpeechOnset { time: f64 },
    SpeechOffset { time: f64, segment: SpeechSegment },
}

/// Debounce/hangover automaton turning per-frame probabilities into
/// onset/offset events.
#[derive(Debug, Clone)]
pub struct Smoother {
    config: SmootherConfig,
    next_frame: u64,
    in_speech: bool,
    run_start: u64,
    above: u32,
    below: u32,
    first_below: u64,
    onset_time: f64,
    last_voice_end: Option<f64>,
}

impl Smoother {
    pub fn new(config: SmootherConfig) -> Self {
        Self {
            config,
            next_frame: 0,
            in_speech: false,
            run_start: 0,
            above: 0,
            below: 0,
            first_below: 0,
            onset_time: 0.0,
            last_voice_end: None,
        }
    }

    pub fn config(&self) -> &SmootherConfig {
        &self.config
    }

    pub fn in_speech(&self) -> bool {
        self.in_speech
    }

    /// End time of the most recent frame that counted as voice.
    pub fn last_voice_time(&self) -> Option<f64> {
        self.last_voice_end
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.config.clone());
    }

    /// Consumes the probability for the next frame.
    pub fn push(&mut self, prob: f32) -> Option<VadEvent> {
        let frame = self.next_frame;
        self.next_frame += 1;
        if !self.in_speech {
            if prob >= self.config.onset_thresh {
                if self.above == 0 {
                    self.run_start = frame;
                }
                self.above += 1;
                if self.above >= self.config.onset_frames {
                    self.in_speech = true;
                    self.above = 0;
                    self.below = 0;
                    self.onset_time = frame_time(self.run_start);
                    self.last_voice_end = Some(frame_time(frame + 1));
                    return Some(VadEvent::SpeechOnset {
                        time: self.onset_time,
                    });
                }
            } else {
                self.above = 0;
            }
            return None;
        }

        if prob < self.config.offset_thresh {
            if self.below == 0 {
                self.first_below = frame;
            }
            self.below += 1;
            if self.below >= self.config.hangover_frames.max(1) {
                let time = frame_time(self.first_below + u64::from(self.config.hangover_frames));
                return Some(self.close(time));
            }
        } else {
            self.below = 0;
            self.last_voice_end = Some(frame_time(frame + 1));
        }
        None
    }

    /// Closes an open segment at the end of the stream.
    pub fn finish(&mut self) -> Option<VadEvent> {
        if self.in_speech {
            let time = frame_time(self.next_frame).max(self.onset_time + frame_time(1));
            Some(self.close(time))
        } else {
            None
        }
    }

    fn close(&mut self, time: f64) -> VadEvent {
        self.in_speech = false;
        self.below = 0;
        self.above = 0;
        VadEvent::SpeechOffset {
            time,
            segment: SpeechSegment::new(self.onset_time, time),
        }
    }
}

/// Offline form of [`Smoother`]: runs the whole probability sequence and
/// returns the events together with the segments they delimit.
pub fn smooth_and_segment(
    probabilities: &[f32],
    config: &SmootherConfig,
) -> (Vec<VadEvent>, Vec<SpeechSegment>) {
    let mut smoother = Smoother::new(config.clone());
    let mut events: Vec<VadEvent> = probabilities
        .iter()
        .filter_map(|&p| smoother.push(p))
        .collect();
    events.extend(smoother.finish());
    let segments = events
        .iter()
        .filter_map(|e| match e {
            VadEvent::SpeechOffset { segment, .. } => Some(*segment),
            VadEvent::SpeechOnset { .. } => None,
        })
        .collect();
    (events, segments)
}
