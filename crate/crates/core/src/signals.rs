//! Rule-based external-signal engine: detect scheduling terms in generated
//! responses and demote suggestions that land on calendar-busy days.
//!
//! The engine is deliberately separate from training; it reorders the
//! N-best list after decoding and never creates or drops a suggestion.

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::responder::ScoredResponse;
use crate::textproc::Token;

#[derive(Debug, Error)]
pub enum SignalsError {
    #[error("term {0:?} does not resolve to a date")]
    NonTemporalTerm(String),
    #[error("calendar event {title:?} has start >= end")]
    BadEvent { title: String },
    #[error("bad calendar JSON: {0}")]
    BadCalendar(String),
    #[error("bad timestamp {0:?}: expected YYYY-MM-DDTHH:MM")]
    BadTimestamp(String),
}

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime, SignalsError> {
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .map_err(|_| SignalsError::BadTimestamp(s.to_string()))
}

/// Calendar entry with minute-precision, timezone-naive bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalendarEvent {
    pub title: String,
    #[serde(with = "timestamp_format")]
    pub start: NaiveDateTime,
    #[serde(with = "timestamp_format")]
    pub end: NaiveDateTime,
}

mod timestamp_format {
    use super::{NaiveDateTime, TIMESTAMP_FORMAT};
    use serde::{self, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(dt: &NaiveDateTime, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&dt.format(TIMESTAMP_FORMAT).to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDateTime, D::Error> {
        let text = String::deserialize(d)?;
        NaiveDateTime::parse_from_str(&text, TIMESTAMP_FORMAT).map_err(serde::de::Error::custom)
    }
}

impl CalendarEvent {
    pub fn new(
        title: &str,
        start: NaiveDateTime,
        end: NaiveDateTime,
    ) -> Result<Self, SignalsError> {
        if start >= end {
            return Err(SignalsError::BadEvent {
                title: title.to_string(),
            });
        }
        Ok(CalendarEvent {
            title: title.to_string(),
            start,
            end,
        })
    }
}

/// Parse `calendar.json`: an array of {title, start, end} events.
pub fn parse_calendar(json: &str) -> Result<Vec<CalendarEvent>, SignalsError> {
    let events: Vec<CalendarEvent> =
        serde_json::from_str(json).map_err(|e| SignalsError::BadCalendar(e.to_string()))?;
    for ev in &events {
        if ev.start >= ev.end {
            return Err(SignalsError::BadEvent {
                title: ev.title.clone(),
            });
        }
    }
    Ok(events)
}

pub fn calendar_to_json(events: &[CalendarEvent]) -> String {
    serde_json::to_string_pretty(events).expect("calendar serialization cannot fail")
}

/// The fixed trigger inventory scanned for in responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerTerm {
    Meet,
    Meeting,
    SeeYou,
    Day(Weekday),
    Today,
    Tomorrow,
}

impl TriggerTerm {
    pub fn as_str(&self) -> &'static str {
        match self {
            TriggerTerm::Meet => "meet",
            TriggerTerm::Meeting => "meeting",
            TriggerTerm::SeeYou => "see you",
            TriggerTerm::Today => "today",
            TriggerTerm::Tomorrow => "tomorrow",
            TriggerTerm::Day(d) => match d {
                Weekday::Mon => "monday",
                Weekday::Tue => "tuesday",
                Weekday::Wed => "wednesday",
                Weekday::Thu => "thursday",
                Weekday::Fri => "friday",
                Weekday::Sat => "saturday",
                Weekday::Sun => "sunday",
            },
        }
    }

    fn from_word(word: &str) -> Option<Self> {
        Some(match word {
            "meet" => TriggerTerm::Meet,
            "meeting" => TriggerTerm::Meeting,
            "today" => TriggerTerm::Today,
            "tomorrow" => TriggerTerm::Tomorrow,
            "monday" => TriggerTerm::Day(Weekday::Mon),
            "tuesday" => TriggerTerm::Day(Weekday::Tue),
            "wednesday" => TriggerTerm::Day(Weekday::Wed),
            "thursday" => TriggerTerm::Day(Weekday::Thu),
            "friday" => TriggerTerm::Day(Weekday::Fri),
            "saturday" => TriggerTerm::Day(Weekday::Sat),
            "sunday" => TriggerTerm::Day(Weekday::Sun),
            _ => return None,
        })
    }
}

/// One trigger occurrence at a token position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerHit {
    pub term: TriggerTerm,
    pub position: usize,
}

/// Scan a response for scheduling trigger terms, in token order. "see you"
/// is matched as a bigram at the position of "see".
pub fn detect_triggers(response: &[Token]) -> Vec<TriggerHit> {
    let mut hits = Vec::new();
    for (i, tok) in response.iter().enumerate() {
        if tok.as_str() == "see" && response.get(i + 1).is_some_and(|t| t.as_str() == "you") {
            hits.push(TriggerHit {
                term: TriggerTerm::SeeYou,
                position: i,
            });
        }
        if let Some(term) = TriggerTerm::from_word(tok.as_str()) {
            hits.push(TriggerHit { term, position: i });
        }
    }
    hits
}

/// Resolve a temporal trigger to a concrete date. Day names resolve to the
/// next occurrence strictly after `now`'s date; "today" and "tomorrow" are
/// literal. Non-temporal terms are an error.
pub fn resolve_day(term: &TriggerTerm, now: NaiveDateTime) -> Result<NaiveDate, SignalsError> {
    let today = now.date();
    match term {
        TriggerTerm::Today => Ok(today),
        TriggerTerm::Tomorrow => Ok(today + Duration::days(1)),
        TriggerTerm::Day(target) => {
            let ahead = (target.num_days_from_monday() as i64
                - today.weekday().num_days_from_monday() as i64)
                .rem_euclid(7);
            let ahead = if ahead == 0 { 7 } else { ahead };
            Ok(today + Duration::days(ahead))
        }
        other => Err(SignalsError::NonTemporalTerm(other.as_str().to_string())),
    }
}

/// Busy-day thresholds. Both values are part of the pipeline configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BusyRule {
    /// Business hours start (whole hour, local time).
    pub business_start_hour: u32,
    /// Business hours end (whole hour, local time).
    pub business_end_hour: u32,
    /// A day is busy when events overlap business hours for at least this
    /// many cumulative hours.
    pub busy_hours: f64,
}

impl Default for BusyRule {
    fn default() -> Self {
        BusyRule {
            business_start_hour: 9,
            business_end_hour: 17,
            busy_hours: 4.0,
        }
    }
}

/// True when calendar events overlap the business hours of `date` for at
/// least `busy_hours` cumulative hours. Overlaps are summed per event
/// without merging.
pub fn conflicts(calendar: &[CalendarEvent], date: NaiveDate, rule: &BusyRule) -> bool {
    let open = date.and_time(NaiveTime::from_hms_opt(rule.business_start_hour, 0, 0).unwrap());
    let close = date.and_time(NaiveTime::from_hms_opt(rule.business_end_hour, 0, 0).unwrap());
    let mut busy_minutes = 0i64;
    for ev in calendar {
        let start = ev.start.max(open);
        let end = ev.end.min(close);
        if start < end {
            busy_minutes += (end - start).num_minutes();
        }
    }
    busy_minutes as f64 / 60.0 >= rule.busy_hours
}

fn response_conflicts(
    response: &ScoredResponse,
    calendar: &[CalendarEvent],
    now: NaiveDateTime,
    rule: &BusyRule,
) -> bool {
    detect_triggers(&response.tokens).iter().any(|hit| {
        resolve_day(&hit.term, now)
            .map(|date| conflicts(calendar, date, rule))
            .unwrap_or(false)
    })
}

/// Stable permutation of the ranked responses: any response whose resolved
/// scheduling date lands on a busy day moves after all non-conflicting
/// responses. Nothing is created or dropped.
pub fn rerank(
    responses: Vec<ScoredResponse>,
    calendar: &[CalendarEvent],
    now: NaiveDateTime,
    rule: &BusyRule,
) -> Vec<ScoredResponse> {
    let (conflicting, clear): (Vec<_>, Vec<_>) = responses
        .into_iter()
        .partition(|r| response_conflicts(r, calendar, now, rule));
    let mut out = clear;
    out.extend(conflicting);
    out
}
