//! Retention of the raw (never denoised) microphone capture, and extraction
//! of primary-speaker segments from it.

use std::collections::VecDeque;

use thiserror::Error;

use crate::audio::{AudioFrame, FRAME_SECONDS};
use crate::pvad::SpeechSegment;

/// Seconds of raw capture kept per session.
pub const RAW_CAPTURE_SECONDS: f64 = 60.0;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("segment [{start:.3}, {end:.3}) is empty or reversed")]
    Empty { start: f64, end: f64 },
    #[error("segment [{start:.3}, {end:.3}) lies outside recorded audio [{first:.3}, {last:.3})")]
    OutOfRange { start: f64, end: f64, first: f64, last: f64 },
}

fn first_frame_at_or_after(t: f64) -> u64 {
    // frames are 10 ms apart; tolerate representation error in `t`
    (t / FRAME_SECONDS - 1e-6).ceil().max(0.0) as u64
}

/// Returns the frames of `original` whose start time lies in
/// `[segment.start, segment.end)`. `original` must be contiguous.
pub fn extract_segment(original: &[AudioFrame], segment: &SpeechSegment) -> Result<Vec<AudioFrame>, SegmentError> {
    let (start, end) = (segment.start, segment.end);
    if !(end > start) {
        return Err(SegmentError::Empty { start, end });
    }
    let (first, last) = match (original.first(), original.last()) {
        (Some(a), Some(b)) => (a.start_time(), b.end_time()),
        _ => (0.0, 0.0),
    };
    if original.is_empty() || start < first - 1e-9 || end > last + 1e-9 {
        return Err(SegmentError::OutOfRange { start, end, first, last });
    }
    let base = original[0].index();
    let a = (first_frame_at_or_after(start) - base) as usize;
    let b = ((first_frame_at_or_after(end) - base) as usize).min(original.len());
    Ok(original[a..b].to_vec())
}

/// Bounded ring buffer of the most recent raw capture.
#[derive(Debug, Clone)]
pub struct RawCapture {
    frames: VecDeque<AudioFrame>,
    capacity: usize,
}

impl Default for RawCapture {
    fn default() -> Self {
        Self::with_seconds(RAW_CAPTURE_SECONDS)
    }
}

impl RawCapture {
    pub fn with_seconds(seconds: f64) -> Self {
        let capacity = (seconds / FRAME_SECONDS).round().max(1.0) as usize;
        Self {
            frames: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn push(&mut self, frame: AudioFrame) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn extract(&mut self, segment: &SpeechSegment) -> Result<Vec<AudioFrame>, SegmentError> {
        extract_segment(self.frames.make_contiguous(), segment)
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }
}
