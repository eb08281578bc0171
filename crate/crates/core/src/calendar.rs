//! Calendar days as integer offsets from 1970-01-01.

use std::fmt;
use std::ops::{Add, Sub};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

const EPOCH_DAYS_FROM_CE: i32 = 719_163;

/// A calendar date stored as days since the Unix epoch. Serialized as
/// an ISO-8601 `YYYY-MM-DD` string.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Day(i32);

impl Day {
    pub const fn from_epoch_days(days: i32) -> Self {
        Day(days)
    }

    pub fn from_ymd(year: i32, month: u32, day: u32) -> Result<Self> {
        NaiveDate::from_ymd_opt(year, month, day)
            .map(Self::from_naive)
            .ok_or_else(|| Error::invalid(format!("invalid date {year:04}-{month:02}-{day:02}")))
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        NaiveDate::parse_from_str(s, "%Y-%m-%d")
            .map(Self::from_naive)
            .map_err(|_| Error::invalid(format!("unparseable date `{s}`")))
    }

    /// Parses the compact `YYYYMMDD` integer form used by epidata responses.
    pub fn from_compact(value: i64) -> Result<Self> {
        let year = (value / 10_000) as i32;
        let month = ((value / 100) % 100) as u32;
        let day = (value % 100) as u32;
        Self::from_ymd(year, month, day)
    }

    pub fn compact(self) -> i64 {
        let d = self.to_naive();
        d.year() as i64 * 10_000 + d.month() as i64 * 100 + d.day() as i64
    }

    pub fn from_naive(date: NaiveDate) -> Self {
        Day(date.num_days_from_ce() - EPOCH_DAYS_FROM_CE)
    }

    pub fn to_naive(self) -> NaiveDate {
        NaiveDate::from_num_days_from_ce_opt(self.0 + EPOCH_DAYS_FROM_CE)
            .expect("day offset within chrono range")
    }

    pub const fn epoch_days(self) -> i32 {
        self.0
    }

    /// Day of week with Monday = 0 through Sunday = 6.
    pub fn weekday(self) -> usize {
        // 1970-01-01 was a Thursday (index 3).
        (self.0 + 3).rem_euclid(7) as usize
    }

    pub fn succ(self) -> Self {
        Day(self.0 + 1)
    }

    pub fn pred(self) -> Self {
        Day(self.0 - 1)
    }

    /// Inclusive iterator over `self..=end`.
    pub fn range_inclusive(self, end: Day) -> impl Iterator<Item = Day> {
        (self.0..=end.0).map(Day)
    }
}

impl Add<i32> for Day {
    type Output = Day;
    fn add(self, rhs: i32) -> Day {
        Day(self.0 + rhs)
    }
}

impl Sub<i32> for Day {
    type Output = Day;
    fn sub(self, rhs: i32) -> Day {
        Day(self.0 - rhs)
    }
}

impl Sub<Day> for Day {
    type Output = i32;
    fn sub(self, rhs: Day) -> i32 {
        self.0 - rhs.0
    }
}

impl fmt::Display for Day {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_naive().format("%Y-%m-%d"))
    }
}

impl FromStr for Day {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Day::parse(s)
    }
}

impl Serialize for Day {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Day {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Day::parse(&s).map_err(serde::de::Error::custom)
    }
}

pub const WEEKDAY_NAMES: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];
