use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleShape {
    /// Linear rise to the peak over the warmup steps, then linear decay to 0.
    WarmupLinear,
    Constant,
    /// Linear decay from the peak to 0 with no warmup.
    LinearDecay,
}

impl fmt::Display for ScheduleShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleShape::WarmupLinear => "warmup-linear",
            ScheduleShape::Constant => "constant",
            ScheduleShape::LinearDecay => "linear-decay",
        })
    }
}

impl FromStr for ScheduleShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warmup-linear" => Ok(ScheduleShape::WarmupLinear),
            "constant" => Ok(ScheduleShape::Constant),
            "linear-decay" => Ok(ScheduleShape::LinearDecay),
            other => Err(Error::Parameter(format!("unknown schedule `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub shape: ScheduleShape,
}

impl LrSchedule {
    pub fn new(shape: ScheduleShape, peak: f64, warmup_steps: usize, total_steps: usize) -> Result<Self> {
        let s = LrSchedule {
            peak,
            warmup_steps,
            total_steps,
            shape,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn constant(peak: f64, total_steps: usize) -> Self {
        LrSchedule {
            peak,
            warmup_steps: 0,
            total_steps,
            shape: ScheduleShape::Constant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.peak >= 0.0 && self.peak.is_finite()) {
            return Err(Error::Parameter(format!("peak rate {} must be non-negative", self.peak)));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::Parameter(format!(
                "warmup of {} steps exceeds the {} total",
                self.warmup_steps, self.total_steps
            )));
        }
        Ok(())
    }

    /// Learning rate at `step`, for `0 <= step <= total_steps`.
    pub fn lr_at(&self, step: usize) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::Parameter(format!(
                "step {step} beyond the schedule's {} steps",
                self.total_steps
            )));
        }
        let warmup = match self.shape {
            ScheduleShape::Constant => return Ok(self.peak),
            ScheduleShape::LinearDecay => 0,
            ScheduleShape::WarmupLinear => self.warmup_steps,
        };
        if step < warmup {
            return Ok(self.peak * (step as f64 / warmup as f64));
        }
        let span = self.total_steps - warmup;
        if span == 0 {
            return Ok(if step == warmup && warmup > 0 { self.peak } else { 0.0 });
        }
        // the ratio is exactly 1 at the warmup boundary, so the peak is hit exactly
        Ok(self.peak * ((self.total_steps - step) as f64 / span as f64))
    }
}
