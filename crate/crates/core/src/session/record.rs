//! Newline-delimited JSON recordings of frames, and replay.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{flags, Engine, Frame, Mode, SessionConfig, SessionError};

pub struct Recorder {
    out: BufWriter<File>,
    since_flush: u32,
}

impl Recorder {
    pub fn create(path: impl AsRef<Path>) -> Result<Self, SessionError> {
        Ok(Self {
            out: BufWriter::new(File::create(path)?),
            since_flush: 0,
        })
    }

    pub fn write(&mut self, frame: &Frame) -> Result<(), SessionError> {
        serde_json::to_writer(&mut self.out, frame)?;
        self.out.write_all(b"\n")?;
        self.since_flush += 1;
        if self.since_flush >= 3000 {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), SessionError> {
        self.since_flush = 0;
        Ok(self.out.flush()?)
    }
}

/// Writes `frames` as a recording.
pub fn write_recording(path: impl AsRef<Path>, frames: &[Frame]) -> Result<(), SessionError> {
    let mut r = Recorder::create(path)?;
    for f in frames {
        r.write(f)?;
    }
    r.flush()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub frames: Vec<Frame>,
    /// The last line was cut short and skipped.
    pub truncated: bool,
}

/// Parses a recording. A malformed final line without a terminating newline
/// counts as truncation; any other malformed line is an error.
pub fn parse_recording(text: &str) -> Result<Recording, SessionError> {
    let mut frames = Vec::new();
    let mut truncated = false;
    let complete = text.ends_with('\n');
    let lines: Vec<&str> = text.lines().collect();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<Frame>(line) {
            Ok(f) => frames.push(f),
            Err(_) if i + 1 == lines.len() && !complete => truncated = true,
            Err(e) => {
                return Err(SessionError::Recording {
                    line: i + 1,
                    msg: e.to_string(),
                })
            }
        }
    }
    Ok(Recording { frames, truncated })
}

pub fn read_recording(path: impl AsRef<Path>) -> Result<Recording, SessionError> {
    parse_recording(&std::fs::read_to_string(path)?)
}

/// Re-runs a recorded session under `cfg`.
///
/// Recorded `key_pos` values are fed back as the key input (a dropout frame
/// feeds a non-finite reading) and overrun flags are carried over. Sweep
/// sessions ignore the key and are regenerated, keeping the recorded ticks.
pub fn replay(cfg: &SessionConfig, frames: &[Frame]) -> Result<Vec<Frame>, SessionError> {
    let mut engine = Engine::new(cfg)?;
    let mut out = Vec::with_capacity(frames.len());
    if cfg.mode == Mode::Sweep {
        let wanted: BTreeSet<u64> = frames.iter().map(|f| f.tick).collect();
        let last = wanted.last().copied().unwrap_or(0);
        for n in 1..=last {
            let fl = engine.advance(None, 0);
            let stop = fl & flags::FAULT != 0;
            if wanted.contains(&n) || stop {
                out.push(engine.frame(fl));
            }
            if stop {
                break;
            }
        }
        return Ok(out);
    }
    for rec in frames {
        let input = if rec.has(flags::DROPOUT) { f64::NAN } else { rec.key_pos };
        let f = engine.tick(Some(input), rec.flags & flags::OVERRUN);
        let stop = f.has(flags::FAULT);
        out.push(f);
        if stop {
            break;
        }
    }
    Ok(out)
}

/// Index of the first frame whose serialized form differs, or of the first
/// frame present in only one of the two lists.
pub fn first_difference(a: &[Frame], b: &[Frame]) -> Option<usize> {
    a.iter()
        .zip(b)
        .position(|(x, y)| x.to_json() != y.to_json())
        .or((a.len() != b.len()).then(|| a.len().min(b.len())))
}
