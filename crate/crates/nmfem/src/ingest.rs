//! Smart-card validation events → 168-bin weekly temporal profiles, with
//! the regular-card-holder filter and a malformed-row budget.

use std::collections::BTreeMap;
use std::io;

use chrono::{Datelike, NaiveDate, NaiveDateTime, NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::dataset::CountDataset;
use crate::error::{Error, Result};

/// One boarding event.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationEvent {
    pub card_id: String,
    pub timestamp: NaiveDateTime,
    pub station_id: String,
}

/// Filter and parsing knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileBuildConfig {
    /// A card must be seen on at least this many distinct calendar dates.
    pub min_active_days: usize,
    /// The modal first-boarding station must cover at least this fraction
    /// of the card's active days.
    pub home_station_threshold: f64,
    /// Events strictly before this hour are ignored when determining the
    /// day's first boarding (they still count in the profile bins).
    pub first_boarding_cutoff_hour: u32,
    /// Malformed rows are tolerated up to this fraction of all data rows.
    pub bad_row_budget: f64,
}

impl Default for ProfileBuildConfig {
    fn default() -> Self {
        ProfileBuildConfig {
            min_active_days: 4,
            home_station_threshold: 0.5,
            first_boarding_cutoff_hour: 4,
            bad_row_budget: 0.01,
        }
    }
}

impl ProfileBuildConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_active_days == 0 {
            return Err(Error::invalid("min_active_days must be at least 1"));
        }
        if !(self.home_station_threshold > 0.0 && self.home_station_threshold <= 1.0) {
            return Err(Error::invalid(format!(
                "home_station_threshold must be in (0, 1], got {}",
                self.home_station_threshold
            )));
        }
        if self.first_boarding_cutoff_hour > 23 {
            return Err(Error::invalid(format!(
                "first_boarding_cutoff_hour must be in 0..=23, got {}",
                self.first_boarding_cutoff_hour
            )));
        }
        if !(0.0..=1.0).contains(&self.bad_row_budget) {
            return Err(Error::invalid(format!(
                "bad_row_budget must be in [0, 1], got {}",
                self.bad_row_budget
            )));
        }
        Ok(())
    }
}

/// Number of (weekday, hour) bins in a weekly profile.
pub const BIN_COUNT: usize = 7 * 24;

const WEEKDAY_NAMES: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];

/// The 168 bin labels, "Mon-00" through "Sun-23".
pub fn bin_labels() -> Vec<String> {
    let mut labels = Vec::with_capacity(BIN_COUNT);
    for day in WEEKDAY_NAMES {
        for hour in 0..24 {
            labels.push(format!("{day}-{hour:02}"));
        }
    }
    labels
}

/// Bin of a timestamp: hour truncation within the weekday.
pub fn bin_index(ts: NaiveDateTime) -> usize {
    ts.weekday().num_days_from_monday() as usize * 24 + ts.time().hour() as usize
}

/// One malformed input row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowIssue {
    /// 1-based line number in the input (the header is line 1).
    pub line: usize,
    pub message: String,
}

/// Parsed event stream: good events plus a record of skipped rows.
#[derive(Debug, Clone)]
pub struct EventLog {
    pub events: Vec<ValidationEvent>,
    pub issues: Vec<RowIssue>,
    /// Number of data rows seen (good + bad), excluding the header.
    pub total_rows: usize,
}

fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M")
        .or_else(|_| NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S"))
        .ok()
}

/// Read `card_id,timestamp,station_id` CSV. Malformed rows become issues
/// rather than hard errors; a wrong header or an I/O failure is fatal.
pub fn read_events_csv<R: io::Read>(input: R) -> Result<EventLog> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    {
        let headers = reader.headers()?;
        let expected = ["card_id", "timestamp", "station_id"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::invalid(format!(
                "event CSV header must be \"card_id,timestamp,station_id\", got \"{}\"",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
    }

    let mut events = Vec::new();
    let mut issues = Vec::new();
    let mut total_rows = 0usize;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        total_rows += 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                issues.push(RowIssue {
                    line,
                    message: format!("unreadable row: {e}"),
                });
                continue;
            }
        };
        if record.len() != 3 {
            issues.push(RowIssue {
                line,
                message: format!("expected 3 fields, got {}", record.len()),
            });
            continue;
        }
        let card_id = record[0].trim();
        let station_id = record[2].trim();
        if card_id.is_empty() {
            issues.push(RowIssue {
                line,
                message: "empty card_id".into(),
            });
            continue;
        }
        if station_id.is_empty() {
            issues.push(RowIssue {
                line,
                message: "empty station_id".into(),
            });
            continue;
        }
        match parse_timestamp(record[1].trim()) {
            Some(timestamp) => events.push(ValidationEvent {
                card_id: card_id.to_string(),
                timestamp,
                station_id: station_id.to_string(),
            }),
            None => issues.push(RowIssue {
                line,
                message: format!("unparseable timestamp {:?}", &record[1]),
            }),
        }
    }
    Ok(EventLog {
        events,
        issues,
        total_rows,
    })
}

/// Ingestion bookkeeping, serialized into run manifests and logs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestSummary {
    /// Events parsed successfully.
    pub events: usize,
    /// Rows skipped as malformed.
    pub bad_rows: usize,
    /// Distinct cards seen before filtering.
    pub cards_seen: usize,
    /// Cards dropped for too few active days.
    pub dropped_inactive: usize,
    /// Cards dropped because no station covers enough first boardings.
    pub dropped_no_home: usize,
}

/// The filtered profile matrix with its card and home-station bookkeeping.
#[derive(Debug, Clone)]
pub struct ProfileBuild {
    pub dataset: CountDataset,
    /// Kept card ids, lexicographically sorted; row i of the dataset is
    /// `card_index[i]`.
    pub card_index: Vec<String>,
    /// Modal first-boarding station per kept card, aligned with
    /// `card_index`.
    pub home_stations: Vec<String>,
    pub summary: IngestSummary,
    pub issues: Vec<RowIssue>,
}

#[derive(Default)]
struct CardAccumulator {
    bins: Vec<u64>,
    active_dates: std::collections::BTreeSet<NaiveDate>,
    /// Per date: earliest qualifying (time, station); ties on time keep the
    /// lexicographically smaller station.
    first_boarding: BTreeMap<NaiveDate, (NaiveTime, String)>,
}

/// Group events into per-card weekly profiles and apply the
/// regular-card-holder filter. Order-independent in the input.
pub fn build_profiles(events: &[ValidationEvent], cfg: &ProfileBuildConfig) -> Result<ProfileBuild> {
    cfg.validate()?;
    if events.is_empty() {
        return Err(Error::EmptyInput("no events".into()));
    }

    let mut cards: BTreeMap<&str, CardAccumulator> = BTreeMap::new();
    for event in events {
        let acc = cards.entry(event.card_id.as_str()).or_insert_with(|| {
            CardAccumulator {
                bins: vec![0; BIN_COUNT],
                ..CardAccumulator::default()
            }
        });
        acc.bins[bin_index(event.timestamp)] += 1;
        let date = event.timestamp.date();
        acc.active_dates.insert(date);
        if event.timestamp.time().hour() >= cfg.first_boarding_cutoff_hour {
            use std::collections::btree_map::Entry;
            let candidate = (event.timestamp.time(), event.station_id.clone());
            match acc.first_boarding.entry(date) {
                Entry::Vacant(slot) => {
                    slot.insert(candidate);
                }
                Entry::Occupied(mut slot) => {
                    if candidate < *slot.get() {
                        slot.insert(candidate);
                    }
                }
            }
        }
    }

    let cards_seen = cards.len();
    let mut dropped_inactive = 0usize;
    let mut dropped_no_home = 0usize;
    let mut card_index = Vec::new();
    let mut home_stations = Vec::new();
    let mut rows: Vec<Vec<u64>> = Vec::new();

    for (card_id, acc) in cards {
        let active = acc.active_dates.len();
        if active < cfg.min_active_days {
            dropped_inactive += 1;
            continue;
        }
        // Modal first-boarding station; ties broken lexicographically.
        let mut station_days: BTreeMap<&str, usize> = BTreeMap::new();
        for (_, station) in acc.first_boarding.values() {
            *station_days.entry(station.as_str()).or_insert(0) += 1;
        }
        let modal = station_days
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(station, &days)| (station.to_string(), days));
        let (home, modal_days) = match modal {
            Some(pair) => pair,
            None => {
                dropped_no_home += 1;
                continue;
            }
        };
        // Kept iff the modal station covers at least the threshold fraction
        // of active days (tiny slack so exact boundaries are inclusive).
        if (modal_days as f64) < cfg.home_station_threshold * active as f64 - 1e-9 {
            dropped_no_home += 1;
            continue;
        }
        card_index.push(card_id.to_string());
        home_stations.push(home);
        rows.push(acc.bins);
    }

    if card_index.is_empty() {
        return Err(Error::EmptyInput(
            "no cards pass the regular-holder filter".into(),
        ));
    }

    let dataset = CountDataset::from_rows(rows, bin_labels())?;
    Ok(ProfileBuild {
        dataset,
        card_index,
        home_stations,
        summary: IngestSummary {
            events: events.len(),
            bad_rows: 0,
            cards_seen,
            dropped_inactive,
            dropped_no_home,
        },
        issues: Vec::new(),
    })
}

/// Full CSV → profiles pipeline: parse, enforce the bad-row budget, filter.
pub fn ingest_csv<R: io::Read>(input: R, cfg: &ProfileBuildConfig) -> Result<ProfileBuild> {
    cfg.validate()?;
    let log = read_events_csv(input)?;
    let bad = log.issues.len();
    if bad > 0 && (bad as f64) > cfg.bad_row_budget * log.total_rows as f64 {
        let examples = log
            .issues
            .iter()
            .take(20)
            .map(|issue| format!("line {}: {}", issue.line, issue.message))
            .collect();
        return Err(Error::TooManyBadRows {
            bad,
            total: log.total_rows,
            budget: cfg.bad_row_budget,
            examples,
        });
    }
    if log.events.is_empty() {
        return Err(Error::EmptyInput("no events".into()));
    }
    let mut build = build_profiles(&log.events, cfg)?;
    build.summary.bad_rows = bad;
    build.issues = log.issues;
    Ok(build)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn event(card: &str, ts: &str, station: &str) -> ValidationEvent {
        ValidationEvent {
            card_id: card.to_string(),
            timestamp: parse_timestamp(ts).expect("test timestamp"),
            station_id: station.to_string(),
        }
    }

    #[test]
    fn bin_labels_span_the_week_in_order() {
        let labels = bin_labels();
        assert_eq!(labels.len(), 168);
        assert_eq!(labels[0], "Mon-00");
        assert_eq!(labels[32], "Tue-08");
        assert_eq!(labels[167], "Sun-23");
    }

    #[test]
    fn hour_truncation_decides_the_bin() {
        // 2024-01-02 is a Tuesday.
        let before = parse_timestamp("2024-01-02T08:59").unwrap();
        let after = parse_timestamp("2024-01-02T09:00").unwrap();
        assert_eq!(bin_labels()[bin_index(before)], "Tue-08");
        assert_eq!(bin_labels()[bin_index(after)], "Tue-09");
    }

    #[test]
    fn four_active_days_at_one_station_is_kept() {
        let events = vec![
            event("c1", "2024-01-01T08:00", "S"),
            event("c1", "2024-01-02T08:30", "S"),
            event("c1", "2024-01-03T07:45", "S"),
            event("c1", "2024-01-04T09:10", "S"),
        ];
        let build = build_profiles(&events, &ProfileBuildConfig::default()).unwrap();
        assert_eq!(build.card_index, vec!["c1"]);
        assert_eq!(build.home_stations, vec!["S"]);
        assert_eq!(build.dataset.total(), 4);
        assert_eq!(build.summary.cards_seen, 1);
    }

    #[test]
    fn three_active_days_is_dropped() {
        let events = vec![
            event("c1", "2024-01-01T08:00", "S"),
            event("c1", "2024-01-01T18:00", "S"),
            event("c1", "2024-01-02T08:00", "S"),
            event("c1", "2024-01-03T08:00", "S"),
            // A keeper so the build has at least one row.
            event("c2", "2024-01-01T08:00", "T"),
            event("c2", "2024-01-02T08:00", "T"),
            event("c2", "2024-01-03T08:00", "T"),
            event("c2", "2024-01-04T08:00", "T"),
        ];
        let build = build_profiles(&events, &ProfileBuildConfig::default()).unwrap();
        assert_eq!(build.card_index, vec!["c2"]);
        assert_eq!(build.summary.dropped_inactive, 1);
    }

    #[test]
    fn modal_station_below_half_of_active_days_is_dropped() {
        // 5 active days, first boardings at S on only 2 of them (40%).
        let events = vec![
            event("c1", "2024-01-01T08:00", "S"),
            event("c1", "2024-01-02T08:00", "S"),
            event("c1", "2024-01-03T08:00", "A"),
            event("c1", "2024-01-04T08:00", "B"),
            event("c1", "2024-01-05T08:00", "C"),
            event("c2", "2024-01-01T08:00", "T"),
            event("c2", "2024-01-02T08:00", "T"),
            event("c2", "2024-01-03T08:00", "T"),
            event("c2", "2024-01-04T08:00", "T"),
        ];
        let build = build_profiles(&events, &ProfileBuildConfig::default()).unwrap();
        assert_eq!(build.card_index, vec!["c2"]);
        assert_eq!(build.summary.dropped_no_home, 1);
    }

    #[test]
    fn exactly_half_of_active_days_is_kept() {
        let events = vec![
            event("c1", "2024-01-01T08:00", "S"),
            event("c1", "2024-01-02T08:00", "S"),
            event("c1", "2024-01-03T08:00", "A"),
            event("c1", "2024-01-04T08:00", "B"),
        ];
        let build = build_profiles(&events, &ProfileBuildConfig::default()).unwrap();
        assert_eq!(build.card_index, vec!["c1"]);
        assert_eq!(build.home_stations, vec!["S"]);
    }

    #[test]
    fn pre_cutoff_events_count_in_bins_but_not_first_boardings() {
        // Each day has a 03:00 event at N and a later one at S; the home
        // station must be S, and all 8 events must appear in the profile.
        let events = vec![
            event("c1", "2024-01-01T03:00", "N"),
            event("c1", "2024-01-01T08:00", "S"),
            event("c1", "2024-01-02T03:30", "N"),
            event("c1", "2024-01-02T08:00", "S"),
            event("c1", "2024-01-03T03:59", "N"),
            event("c1", "2024-01-03T08:00", "S"),
            event("c1", "2024-01-04T02:00", "N"),
            event("c1", "2024-01-04T08:00", "S"),
        ];
        let build = build_profiles(&events, &ProfileBuildConfig::default()).unwrap();
        assert_eq!(build.home_stations, vec!["S"]);
        assert_eq!(build.dataset.total(), 8, "night events still binned");
        // 2024-01-01 is a Monday: the 03:00 event lands in Mon-03.
        let labels = bin_labels();
        let mon03 = labels.iter().position(|l| l == "Mon-03").unwrap();
        assert_eq!(build.dataset.counts()[(0, mon03)], 1);
    }

    #[test]
    fn day_with_only_night_events_counts_as_active_without_first_boarding() {
        // 4 active days: 3 with S first boardings + 1 night-only day.
        // Modal covers 3/4 ≥ 0.5 → kept.
        let events = vec![
            event("c1", "2024-01-01T08:00", "S"),
            event("c1", "2024-01-02T08:00", "S"),
            event("c1", "2024-01-03T08:00", "S"),
            event("c1", "2024-01-04T03:00", "N"),
        ];
        let build = build_profiles(&events, &ProfileBuildConfig::default()).unwrap();
        assert_eq!(build.card_index, vec!["c1"]);
        assert_eq!(build.home_stations, vec!["S"]);

        // With threshold 1.0 the night-only day breaks full coverage.
        let strict = ProfileBuildConfig {
            home_station_threshold: 1.0,
            ..ProfileBuildConfig::default()
        };
        assert!(build_profiles(&events, &strict).is_err(), "no card passes");
    }

    #[test]
    fn modal_ties_break_lexicographically() {
        let events = vec![
            event("c1", "2024-01-01T08:00", "zeta"),
            event("c1", "2024-01-02T08:00", "zeta"),
            event("c1", "2024-01-03T08:00", "alpha"),
            event("c1", "2024-01-04T08:00", "alpha"),
        ];
        let build = build_profiles(&events, &ProfileBuildConfig::default()).unwrap();
        assert_eq!(build.home_stations, vec!["alpha"]);
    }

    #[test]
    fn same_minute_first_boarding_prefers_smaller_station() {
        let events = vec![
            event("c1", "2024-01-01T08:00", "beta"),
            event("c1", "2024-01-01T08:00", "alpha"),
            event("c1", "2024-01-02T08:00", "alpha"),
            event("c1", "2024-01-03T08:00", "alpha"),
            event("c1", "2024-01-04T08:00", "beta"),
        ];
        let build = build_profiles(&events, &ProfileBuildConfig::default()).unwrap();
        assert_eq!(build.home_stations, vec!["alpha"], "3 of 4 days start at alpha");
    }

    #[test]
    fn output_is_independent_of_event_order() {
        let mut events = vec![
            event("c2", "2024-01-03T10:00", "T"),
            event("c1", "2024-01-01T08:00", "S"),
            event("c2", "2024-01-01T10:00", "T"),
            event("c1", "2024-01-04T09:10", "S"),
            event("c2", "2024-01-02T10:00", "T"),
            event("c1", "2024-01-02T08:30", "S"),
            event("c2", "2024-01-04T10:00", "T"),
            event("c1", "2024-01-03T07:45", "S"),
        ];
        let forward = build_profiles(&events, &ProfileBuildConfig::default()).unwrap();
        events.reverse();
        let backward = build_profiles(&events, &ProfileBuildConfig::default()).unwrap();
        assert_eq!(forward.card_index, backward.card_index);
        assert_eq!(forward.home_stations, backward.home_stations);
        assert_eq!(forward.dataset.counts(), backward.dataset.counts());
    }

    #[test]
    fn counts_never_exceed_input_events() {
        let events = vec![
            event("c1", "2024-01-01T08:00", "S"),
            event("c1", "2024-01-02T08:30", "S"),
            event("c1", "2024-01-03T07:45", "S"),
            event("c1", "2024-01-04T09:10", "S"),
            event("dropme", "2024-01-01T08:00", "X"),
        ];
        let build = build_profiles(&events, &ProfileBuildConfig::default()).unwrap();
        assert!(build.dataset.total() <= events.len() as u64);
        assert_eq!(build.dataset.total(), 4);
    }

    #[test]
    fn csv_reader_reports_bad_rows_with_line_numbers() {
        let csv = "card_id,timestamp,station_id\n\
                   c1,2024-01-01T08:00,S\n\
                   ,2024-01-01T08:05,S\n\
                   c2,not-a-time,S\n\
                   c3,2024-01-01T08:10:30,S\n";
        let log = read_events_csv(csv.as_bytes()).unwrap();
        assert_eq!(log.events.len(), 2, "seconds-precision timestamps accepted");
        assert_eq!(log.total_rows, 4);
        assert_eq!(log.issues.len(), 2);
        assert_eq!(log.issues[0].line, 3);
        assert!(log.issues[0].message.contains("card_id"));
        assert_eq!(log.issues[1].line, 4);
        assert!(log.issues[1].message.contains("timestamp"));
    }

    #[test]
    fn wrong_header_is_fatal() {
        let csv = "card,when,where\nc1,2024-01-01T08:00,S\n";
        let err = read_events_csv(csv.as_bytes()).unwrap_err();
        assert!(err.to_string().contains("header"), "{err}");
    }

    #[test]
    fn bad_row_budget_is_enforced_end_to_end() {
        let mut csv = String::from("card_id,timestamp,station_id\n");
        for day in 1..=4 {
            csv.push_str(&format!("c1,2024-01-0{day}T08:00,S\n"));
        }
        csv.push_str("c9,broken,S\n");
        // 1 bad of 5 rows = 20%, over the default 1% budget.
        let err = ingest_csv(csv.as_bytes(), &ProfileBuildConfig::default()).unwrap_err();
        match &err {
            Error::TooManyBadRows { bad, total, examples, .. } => {
                assert_eq!((*bad, *total), (1, 5));
                assert!(examples[0].starts_with("line 6:"), "{examples:?}");
            }
            other => panic!("expected a bad-row budget error, got {other:?}"),
        }

        // A looser budget lets the same input through, recording the issue.
        let lenient = ProfileBuildConfig {
            bad_row_budget: 0.5,
            ..ProfileBuildConfig::default()
        };
        let build = ingest_csv(csv.as_bytes(), &lenient).unwrap();
        assert_eq!(build.summary.bad_rows, 1);
        assert_eq!(build.issues.len(), 1);
        assert_eq!(build.card_index, vec!["c1"]);
    }

    #[test]
    fn empty_input_yields_no_events_error() {
        let err = ingest_csv("card_id,timestamp,station_id\n".as_bytes(), &ProfileBuildConfig::default())
            .unwrap_err();
        match &err {
            Error::EmptyInput(msg) => assert_eq!(msg, "no events"),
            other => panic!("expected an empty-input error, got {other:?}"),
        }
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let bad = [
            ProfileBuildConfig {
                home_station_threshold: 0.0,
                ..ProfileBuildConfig::default()
            },
            ProfileBuildConfig {
                first_boarding_cutoff_hour: 24,
                ..ProfileBuildConfig::default()
            },
            ProfileBuildConfig {
                bad_row_budget: 1.5,
                ..ProfileBuildConfig::default()
            },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err(), "{cfg:?} should be rejected");
        }
    }
}
