use crate::calendar::Day;
use crate::error::{Error, Result};

use super::panel::{GapPolicy, StreamPanel};

/// A gap-free run of `n ≥ 3` consecutive daily values ending on `end`.
/// Day indices run 1..=n.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    values: Vec<f64>,
    end: Day,
}

impl Window {
    pub fn new(values: Vec<f64>, end: Day) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::invalid(format!(
                "window needs at least 3 values, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!(
                "window value {v} must be finite and non-negative"
            )));
        }
        Ok(Window { values, end })
    }

    /// Builds a window with an arbitrary end date, for callers that only
    /// care about the values.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        Window::new(values, Day::from_epoch_days(0))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn end_date(&self) -> Day {
        self.end
    }

    pub fn start_date(&self) -> Day {
        self.end - (self.values.len() as i32 - 1)
    }

    /// Calendar date of 1-based day index `i`.
    pub fn date_of(&self, i: usize) -> Day {
        self.start_date() + (i as i32 - 1)
    }

    /// Weekday (Mon = 0) of 1-based day index `i`.
    pub fn weekday_of(&self, i: usize) -> usize {
        self.date_of(i).weekday()
    }
}

/// The `n` most recent values of (`region`, `stream`) ending on `end`.
pub fn extract_window(
    panel: &StreamPanel,
    region: &str,
    stream: &str,
    end: Day,
    n: usize,
    policy: GapPolicy,
) -> Result<Window> {
    if n < 3 {
        return Err(Error::invalid(format!("window size {n} < 3")));
    }
    let series = panel.series_checked(region, stream)?;
    let from = end - (n as i32 - 1);
    let values = series.resolve(from, end, policy)?;
    Window::new(values, end)
}
