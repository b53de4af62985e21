//! Access-log parsing, traffic filtering and per-user sessionization.
//!
//! Two line formats are accepted:
//!
//! * format A, delimited: `<ISO-8601 timestamp>,<user_hash>,<item_id>[,<source_tag>]`
//! * format B, one JSON object per line with keys `ts`, `user`, `item` and an
//!   optional `agent`; `ts` is an ISO-8601 string or integer epoch milliseconds.
//!
//! Malformed lines never abort a parse. Each one produces a [`Diagnostic`]
//! rendered as `line <n>: <reason>`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use regex::{Regex, RegexSet};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read log stream: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown log format `{0}` (expected `a` or `b`)")]
    UnknownFormat(String),
    #[error("invalid filter pattern `{pattern}`: {source}")]
    BadPattern {
        pattern: String,
        #[source]
        source: regex::Error,
    },
    #[error("session gap must be positive")]
    NonPositiveGap,
}

/// One content request by an anonymous user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEvent {
    pub timestamp: DateTime<Utc>,
    pub user_hash: Arc<str>,
    pub item_id: Arc<str>,
    pub source_tag: Option<Arc<str>>,
}

impl LogEvent {
    pub fn new(timestamp: DateTime<Utc>, user_hash: &str, item_id: &str) -> Self {
        LogEvent {
            timestamp,
            user_hash: Arc::from(user_hash),
            item_id: Arc::from(item_id),
            source_tag: None,
        }
    }

    pub fn with_source_tag(mut self, tag: &str) -> Self {
        self.source_tag = Some(Arc::from(tag));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    /// Comma-delimited text.
    Delimited,
    /// One JSON object per line.
    Structured,
}

impl FromStr for LogFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "a" | "A" | "delimited" | "csv" => Ok(LogFormat::Delimited),
            "b" | "B" | "structured" | "jsonl" => Ok(LogFormat::Structured),
            other => Err(IngestError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based line number in the input stream.
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Default)]
pub struct ParseOutput {
    pub events: Vec<LogEvent>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Shares one allocation per distinct user or item string.
#[derive(Default)]
struct Interner {
    pool: HashSet<Arc<str>>,
}

impl Interner {
    fn intern(&mut self, s: &str) -> Arc<str> {
        if let Some(existing) = self.pool.get(s) {
            return Arc::clone(existing);
        }
        let fresh: Arc<str> = Arc::from(s);
        self.pool.insert(Arc::clone(&fresh));
        fresh
    }
}

/// Parses a log stream line by line.
///
/// Whitespace-only lines are skipped without a diagnostic. Output order
/// follows input order.
pub fn parse_events<R: BufRead>(mut reader: R, format: LogFormat) -> Result<ParseOutput, IngestError> {
    let mut out = ParseOutput::default();
    let mut interner = Interner::default();
    let mut buf = Vec::with_capacity(128);
    let mut line_no = 0usize;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let line = match std::str::from_utf8(&buf) {
            Ok(s) => s.trim_end_matches(['\n', '\r']),
            Err(_) => {
                out.diagnostics.push(Diagnostic { line: line_no, reason: "invalid UTF-8".into() });
                continue;
            }
        };
        if line.trim().is_empty() {
            continue;
        }
        let parsed = match format {
            LogFormat::Delimited => parse_delimited(line, &mut interner),
            LogFormat::Structured => parse_structured(line, &mut interner),
        };
        match parsed {
            Ok(event) => out.events.push(event),
            Err(reason) => out.diagnostics.push(Diagnostic { line: line_no, reason }),
        }
    }
    Ok(out)
}

fn parse_delimited(line: &str, interner: &mut Interner) -> Result<LogEvent, String> {
    let mut fields = [""; 4];
    let mut count = 0;
    for field in line.split(',') {
        if count < fields.len() {
            fields[count] = field;
        }
        count += 1;
    }
    if !(3..=4).contains(&count) {
        return Err(format!("expected 3 or 4 fields, found {count}"));
    }
    let timestamp = parse_iso(fields[0].trim())?;
    let tag = if count == 4 { Some(fields[3].trim()) } else { None };
    build_event(timestamp, fields[1].trim(), fields[2].trim(), tag, interner)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTimestamp {
    Millis(i64),
    Text(String),
}

#[derive(Deserialize)]
struct RawRecord {
    ts: RawTimestamp,
    user: String,
    item: String,
    #[serde(default)]
    agent: Option<String>,
}

fn parse_structured(line: &str, interner: &mut Interner) -> Result<LogEvent, String> {
    let record: RawRecord = serde_json::from_str(line).map_err(|e| format!("invalid record: {e}"))?;
    let timestamp = match record.ts {
        RawTimestamp::Millis(ms) => Utc
            .timestamp_millis_opt(ms)
            .single()
            .ok_or_else(|| format!("epoch milliseconds out of range: {ms}"))?,
        RawTimestamp::Text(s) => parse_iso(&s)?,
    };
    build_event(timestamp, &record.user, &record.item, record.agent.as_deref(), interner)
}

fn parse_iso(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|dt| dt.with_timezone(&Utc))
        .map_err(|e| format!("invalid timestamp `{s}`: {e}"))
}

fn build_event(
    timestamp: DateTime<Utc>,
    user: &str,
    item: &str,
    tag: Option<&str>,
    interner: &mut Interner,
) -> Result<LogEvent, String> {
    if user.is_empty() {
        return Err("empty user_hash".into());
    }
    if item.is_empty() {
        return Err("empty item_id".into());
    }
    Ok(LogEvent {
        timestamp,
        user_hash: interner.intern(user),
        item_id: interner.intern(item),
        source_tag: tag.filter(|t| !t.is_empty()).map(Arc::from),
    })
}

/// Filter configuration as written in a rules file.
#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
pub struct FilterSpec {
    #[serde(default)]
    pub deny: Vec<String>,
    #[serde(default)]
    pub allow_items: Option<String>,
}

/// Compiled traffic filter.
///
/// Deny patterns are regular expressions matched against an event's source
/// tag; untagged events are never denied. The item predicate, when present,
/// must match the item id for the event to be kept.
#[derive(Debug, Clone, Default)]
pub struct FilterRules {
    deny: Option<RegexSet>,
    item_allow: Option<Regex>,
}

impl FilterRules {
    pub fn new<S: AsRef<str>>(deny: &[S], item_allow: Option<&str>) -> Result<Self, IngestError> {
        for pattern in deny {
            let pattern = pattern.as_ref();
            Regex::new(pattern).map_err(|source| IngestError::BadPattern {
                pattern: pattern.to_string(),
                source,
            })?;
        }
        let deny = if deny.is_empty() {
            None
        } else {
            Some(RegexSet::new(deny.iter().map(AsRef::as_ref)).expect("patterns already validated"))
        };
        let item_allow = item_allow
            .map(|p| {
                Regex::new(p).map_err(|source| IngestError::BadPattern { pattern: p.to_string(), source })
            })
            .transpose()?;
        Ok(FilterRules { deny, item_allow })
    }

    pub fn from_spec(spec: &FilterSpec) -> Result<Self, IngestError> {
        Self::new(&spec.deny, spec.allow_items.as_deref())
    }

    pub fn is_empty(&self) -> bool {
        self.deny.is_none() && self.item_allow.is_none()
    }

    pub fn passes(&self, event: &LogEvent) -> bool {
        if let (Some(deny), Some(tag)) = (&self.deny, &event.source_tag) {
            if deny.is_match(tag) {
                return false;
            }
        }
        match &self.item_allow {
            Some(allow) => allow.is_match(&event.item_id),
            None => true,
        }
    }
}

/// Keeps the events that pass `rules`, in their original order.
pub fn filter_events(events: Vec<LogEvent>, rules: &FilterRules) -> Vec<LogEvent> {
    if rules.is_empty() {
        return events;
    }
    events.into_iter().filter(|e| rules.passes(e)).collect()
}

/// How a session's K is counted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ItemCount {
    /// Distinct item ids; re-reads of one article count once.
    #[default]
    Distinct,
    /// Every request counts.
    Raw,
}

pub const DEFAULT_GAP: Duration = Duration::from_secs(1800);

/// A time-bounded run of requests by one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub session_id: usize,
    pub user_hash: Arc<str>,
    pub events: Vec<LogEvent>,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub k_items: u32,
}

/// Splits events into sessions per user.
///
/// Within one user, events are ordered by timestamp (ties keep input order)
/// and a new session starts whenever two consecutive events are more than
/// `gap` apart. Sessions are numbered from 0 by ascending start time, with
/// ties ordered by user hash.
pub fn sessionize(events: Vec<LogEvent>, gap: Duration, count: ItemCount) -> Result<Vec<Session>, IngestError> {
    if gap.is_zero() {
        return Err(IngestError::NonPositiveGap);
    }
    let gap_ms = i64::try_from(gap.as_millis()).unwrap_or(i64::MAX);

    let mut per_user: HashMap<Arc<str>, Vec<LogEvent>> = HashMap::new();
    for event in events {
        match per_user.get_mut(&event.user_hash) {
            Some(list) => list.push(event),
            None => {
                per_user.insert(Arc::clone(&event.user_hash), vec![event]);
            }
        }
    }

    let mut sessions = Vec::new();
    for (user, mut list) in per_user {
        list.sort_by_key(|e| e.timestamp);
        let mut current: Vec<LogEvent> = Vec::new();
        for event in list {
            if let Some(last) = current.last() {
                if (event.timestamp - last.timestamp).num_milliseconds() > gap_ms {
                    sessions.push(close_session(&user, std::mem::take(&mut current), count));
                }
            }
            current.push(event);
        }
        if !current.is_empty() {
            sessions.push(close_session(&user, current, count));
        }
    }

    sessions.sort_unstable_by(|a, b| a.start.cmp(&b.start).then_with(|| a.user_hash.cmp(&b.user_hash)));
    for (id, session) in sessions.iter_mut().enumerate() {
        session.session_id = id;
    }
    Ok(sessions)
}

fn close_session(user: &Arc<str>, events: Vec<LogEvent>, count: ItemCount) -> Session {
    let k_items = match count {
        ItemCount::Raw => events.len(),
        ItemCount::Distinct => distinct_items(&events),
    };
    Session {
        session_id: 0,
        user_hash: Arc::clone(user),
        start: events[0].timestamp,
        end: events[events.len() - 1].timestamp,
        k_items: u32::try_from(k_items).unwrap_or(u32::MAX),
        events,
    }
}

fn distinct_items(events: &[LogEvent]) -> usize {
    if events.len() <= 16 {
        let mut seen: Vec<&str> = Vec::with_capacity(events.len());
        for e in events {
            if !seen.contains(&&*e.item_id) {
                seen.push(&e.item_id);
            }
        }
        seen.len()
    } else {
        events.iter().map(|e| &*e.item_id).collect::<HashSet<_>>().len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::Duration as ChronoDuration;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2021, 3, 1, 10, 0, 0).unwrap()
    }

    fn at(secs: i64, user: &str, item: &str) -> LogEvent {
        LogEvent::new(t0() + ChronoDuration::seconds(secs), user, item)
    }

    #[test]
    fn delimited_line_maps_fields() {
        let out = parse_events("2021-03-01T10:00:00Z,u1,art42\n".as_bytes(), LogFormat::Delimited).unwrap();
        assert!(out.diagnostics.is_empty());
        assert_eq!(out.events, vec![LogEvent::new(t0(), "u1", "art42")]);
    }

    #[test]
    fn delimited_source_tag() {
        let out = parse_events("2021-03-01T10:00:00Z,u1,art42,bot-crawler".as_bytes(), LogFormat::Delimited)
            .unwrap();
        assert_eq!(out.events[0].source_tag.as_deref(), Some("bot-crawler"));
    }

    #[test]
    fn empty_input() {
        let out = parse_events(&b""[..], LogFormat::Delimited).unwrap();
        assert!(out.events.is_empty());
        assert!(out.diagnostics.is_empty());
    }

    #[test]
    fn short_line_is_diagnosed() {
        let input = "2021-03-01T10:00:00Z,u1,a\n2021-03-01T10:00:00Z,u1\n";
        let out = parse_events(input.as_bytes(), LogFormat::Delimited).unwrap();
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.diagnostics.len(), 1);
        assert_eq!(out.diagnostics[0].line, 2);
        assert!(out.diagnostics[0].to_string().starts_with("line 2: "));
    }

    #[test]
    fn bad_fields_are_diagnosed() {
        let input = "not-a-time,u1,a\n2021-03-01T10:00:00Z,,a\n2021-03-01T10:00:00Z,u,\n1,2,3,4,5\n";
        let out = parse_events(input.as_bytes(), LogFormat::Delimited).unwrap();
        assert!(out.events.is_empty());
        let lines: Vec<usize> = out.diagnostics.iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![1, 2, 3, 4]);
    }

    #[test]
    fn invalid_utf8_does_not_abort() {
        let mut input = b"\xff\xfe,u,a\n".to_vec();
        input.extend_from_slice(b"2021-03-01T10:00:00Z,u1,a\r\n");
        let out = parse_events(&input[..], LogFormat::Delimited).unwrap();
        assert_eq!(out.events.len(), 1);
        assert_eq!(out.events[0].item_id.as_ref(), "a");
        assert_eq!(out.diagnostics[0].line, 1);
    }

    #[test]
    fn structured_records() {
        let input = concat!(
            r#"{"ts":"2021-03-01T10:00:00Z","user":"u1","item":"art42"}"#,
            "\n",
            r#"{"ts":1614592800000,"user":"u2","item":"art7","agent":"Googlebot"}"#,
            "\n",
            r#"{"ts":"yesterday","user":"u3","item":"x"}"#,
            "\n",
            r#"{"user":"u3","item":"x"}"#,
            "\n"
        );
        let out = parse_events(input.as_bytes(), LogFormat::Structured).unwrap();
        assert_eq!(out.events.len(), 2);
        assert_eq!(out.events[0], LogEvent::new(t0(), "u1", "art42"));
        assert_eq!(out.events[1].timestamp, t0());
        assert_eq!(out.events[1].source_tag.as_deref(), Some("Googlebot"));
        assert_eq!(out.diagnostics.iter().map(|d| d.line).collect::<Vec<_>>(), vec![3, 4]);
    }

    #[test]
    fn unknown_format_is_config_error() {
        assert!(matches!("xml".parse::<LogFormat>(), Err(IngestError::UnknownFormat(_))));
        assert_eq!("a".parse::<LogFormat>().unwrap(), LogFormat::Delimited);
        assert_eq!("b".parse::<LogFormat>().unwrap(), LogFormat::Structured);
    }

    #[test]
    fn deny_pattern_removes_bot() {
        let rules = FilterRules::new(&["bot"], None).unwrap();
        let events = vec![at(0, "u1", "a").with_source_tag("bot-crawler"), at(1, "u1", "b")];
        let kept = filter_events(events, &rules);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].item_id.as_ref(), "b");
    }

    #[test]
    fn empty_rules_are_identity() {
        let rules = FilterRules::default();
        let events: Vec<_> = (0..5).map(|i| at(i, "u", "a").with_source_tag("bot")).collect();
        assert_eq!(filter_events(events.clone(), &rules), events);
    }

    #[test]
    fn ten_events_three_denied_keep_order() {
        let rules = FilterRules::new(&["^bot", "spider"], None).unwrap();
        let tags = ["x", "bot1", "y", "z", "a-spider", "w", "botnet", "v", "u", "t"];
        let events: Vec<_> = tags
            .iter()
            .enumerate()
            .map(|(i, t)| at(i as i64, "u", &format!("item{i}")).with_source_tag(t))
            .collect();
        let kept = filter_events(events.clone(), &rules);
        // Oracle: walk the input and keep what matches none of the patterns.
        let expected: Vec<_> = events
            .into_iter()
            .filter(|e| {
                let tag = e.source_tag.as_deref().unwrap();
                !(tag.starts_with("bot") || tag.contains("spider"))
            })
            .collect();
        assert_eq!(kept.len(), 7);
        assert_eq!(kept, expected);
    }

    #[test]
    fn item_predicate_keeps_papers() {
        let rules = FilterRules::new::<&str>(&[], Some(r"^art\d+$")).unwrap();
        let kept = filter_events(vec![at(0, "u", "art1"), at(1, "u", "logo.png"), at(2, "u", "art2")], &rules);
        assert_eq!(kept.iter().map(|e| e.item_id.as_ref()).collect::<Vec<_>>(), vec!["art1", "art2"]);
    }

    #[test]
    fn bad_pattern_is_rejected() {
        assert!(matches!(FilterRules::new(&["("], None), Err(IngestError::BadPattern { .. })));
    }

    #[test]
    fn gap_rule_splits_sessions() {
        let events = vec![at(0, "u1", "a"), at(60, "u1", "b"), at(4000, "u1", "c")];
        let sessions = sessionize(events, Duration::from_secs(1800), ItemCount::Distinct).unwrap();
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].events.len(), 2);
        assert_eq!(sessions[0].k_items, 2);
        assert_eq!(sessions[1].start, t0() + ChronoDuration::seconds(4000));
    }

    #[test]
    fn gap_equal_to_threshold_stays_in_session() {
        let events = vec![at(0, "u1", "a"), at(1800, "u1", "b")];
        let sessions = sessionize(events, DEFAULT_GAP, ItemCount::Distinct).unwrap();
        assert_eq!(sessions.len(), 1);
    }

    #[test]
    fn singleton_session() {
        let sessions = sessionize(vec![at(0, "u1", "a")], DEFAULT_GAP, ItemCount::Distinct).unwrap();
        assert_eq!(sessions.len(), 1);
        assert_eq!(sessions[0].k_items, 1);
        assert_eq!(sessions[0].start, sessions[0].end);
    }

    #[test]
    fn interleaved_users_never_merge() {
        let events = vec![at(0, "u1", "a"), at(10, "u2", "a"), at(20, "u1", "b"), at(30, "u2", "c")];
        let sessions = sessionize(events, DEFAULT_GAP, ItemCount::Distinct).unwrap();
        assert_eq!(sessions.len(), 2);
        assert_eq!(sessions[0].user_hash.as_ref(), "u1");
        assert_eq!(sessions[1].user_hash.as_ref(), "u2");
        assert!(sessions.iter().all(|s| s.events.iter().all(|e| e.user_hash == s.user_hash)));
    }

    #[test]
    fn rereads_count_once_in_distinct_mode() {
        let events = vec![at(0, "u1", "a"), at(10, "u1", "a"), at(20, "u1", "b")];
        let distinct = sessionize(events.clone(), DEFAULT_GAP, ItemCount::Distinct).unwrap();
        let raw = sessionize(events, DEFAULT_GAP, ItemCount::Raw).unwrap();
        assert_eq!(distinct[0].k_items, 2);
        assert_eq!(raw[0].k_items, 3);
    }

    #[test]
    fn identical_timestamps_keep_input_order() {
        let events = vec![at(5, "u1", "second"), at(0, "u1", "first"), at(5, "u1", "third")];
        let sessions = sessionize(events, DEFAULT_GAP, ItemCount::Distinct).unwrap();
        let order: Vec<_> = sessions[0].events.iter().map(|e| e.item_id.as_ref()).collect();
        assert_eq!(order, vec!["first", "second", "third"]);
    }

    #[test]
    fn zero_gap_rejected() {
        assert!(matches!(
            sessionize(vec![], Duration::ZERO, ItemCount::Distinct),
            Err(IngestError::NonPositiveGap)
        ));
    }

    #[test]
    fn sessions_numbered_by_start() {
        let events = vec![at(500, "zz", "a"), at(100, "yy", "a"), at(100, "aa", "b")];
        let sessions = sessionize(events, DEFAULT_GAP, ItemCount::Distinct).unwrap();
        let users: Vec<_> = sessions.iter().map(|s| s.user_hash.as_ref()).collect();
        assert_eq!(users, vec!["aa", "yy", "zz"]);
        assert_eq!(sessions.iter().map(|s| s.session_id).collect::<Vec<_>>(), vec![0, 1, 2]);
    }
}
