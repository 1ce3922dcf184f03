use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::Deserialize;

use super::{chronological_split, filter_corpus, Corpus, CorpusTrip, PoiSequence};
use crate::error::{Error, Result};
use crate::geo::{
    expected_duration, CategoryId, CheckIn, Coords, Poi, PoiId, TimeModel, Trip, UserId, World,
    DEFAULT_WALK_SPEED,
};

pub const DEFAULT_GAP_S: i64 = 5 * 3600;
pub const DEFAULT_LAST_STOP_S: i64 = 30 * 60;

const HEADER: [&str; 7] = [
    "user_id",
    "poi_id",
    "lat",
    "lon",
    "category",
    "arrival_ts",
    "departure_ts",
];

/// One CSV row of a check-in file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct CheckInRecord {
    pub user_id: String,
    pub poi_id: String,
    pub lat: f64,
    pub lon: f64,
    pub category: String,
    pub arrival_ts: i64,
    pub departure_ts: Option<i64>,
}

impl CheckInRecord {
    fn departure_or_arrival(&self) -> i64 {
        self.departure_ts.unwrap_or(self.arrival_ts)
    }
}

/// How consecutive check-ins of one user are grouped into trips.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitRule {
    /// New trip when the idle time between check-ins exceeds `gap_s`.
    /// A check-in without a departure is taken to leave when it arrives.
    Gap { gap_s: i64 },
    /// One trip per user and local calendar day.
    CalendarDay { utc_offset_s: i64 },
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule::Gap {
            gap_s: DEFAULT_GAP_S,
        }
    }
}

impl SplitRule {
    fn same_trip(&self, prev: &CheckInRecord, next: &CheckInRecord) -> bool {
        match *self {
            SplitRule::Gap { gap_s } => next.arrival_ts - prev.departure_or_arrival() <= gap_s,
            SplitRule::CalendarDay { utc_offset_s } => {
                let day = |ts: i64| (ts + utc_offset_s).div_euclid(86_400);
                day(prev.arrival_ts) == day(next.arrival_ts)
            }
        }
    }
}

/// Check-ins of one extracted trip, in arrival order.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTrip {
    pub user_id: String,
    pub records: Vec<CheckInRecord>,
}

pub fn parse_checkins(path: &Path) -> Result<Vec<CheckInRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                path: path.into(),
                line: 1,
                message: format!("{other:?}"),
            },
        })?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.iter().map(str::trim).ne(HEADER.iter().copied()) {
        return Err(parse_err(
            1,
            format!("expected header `{}`", HEADER.join(",")),
        ));
    }
    let mut out = Vec::new();
    for row in rdr.deserialize::<CheckInRecord>() {
        let rec = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = out.len() + 2;
        if rec.arrival_ts <= 0 {
            return Err(parse_err(
                line,
                format!("arrival_ts must be positive, got {}", rec.arrival_ts),
            ));
        }
        if let Some(d) = rec.departure_ts {
            if d < rec.arrival_ts {
                return Err(parse_err(
                    line,
                    format!("departure_ts {d} precedes arrival_ts {}", rec.arrival_ts),
                ));
            }
        }
        Coords::new(rec.lat, rec.lon).map_err(|e| parse_err(line, e.to_string()))?;
        out.push(rec);
    }
    Ok(out)
}

/// Per-user record positions in input order.
fn by_user(records: &[CheckInRecord]) -> Vec<Vec<usize>> {
    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry(r.user_id.as_str()).or_default().push(i);
    }
    groups.into_values().collect()
}

/// Fills missing departures: the next arrival when the next check-in of the
/// same user belongs to the same trip, otherwise `arrival + last_stop_s`.
/// Explicit departures are kept. Input must be sorted by arrival per user.
pub fn estimate_departures(
    records: &[CheckInRecord],
    rule: SplitRule,
    last_stop_s: i64,
) -> Vec<CheckInRecord> {
    let mut out = records.to_vec();
    for idx in by_user(records) {
        for w in 0..idx.len() {
            let cur = &records[idx[w]];
            if cur.departure_ts.is_some() {
                continue;
            }
            let next = idx
                .get(w + 1)
                .map(|&j| &records[j])
                .filter(|n| rule.same_trip(cur, n));
            out[idx[w]].departure_ts = Some(match next {
                Some(n) => n.arrival_ts,
                None => cur.arrival_ts + last_stop_s,
            });
        }
    }
    out
}

/// Groups each user's check-ins (sorted by arrival) into trips.
pub fn split_into_trips(records: &[CheckInRecord], rule: SplitRule) -> Vec<RawTrip> {
    let mut trips = Vec::new();
    for idx in by_user(records) {
        let mut sorted: Vec<&CheckInRecord> = idx.iter().map(|&i| &records[i]).collect();
        sorted.sort_by_key(|r| r.arrival_ts);
        let mut current: Vec<CheckInRecord> = Vec::new();
        for r in sorted {
            if let Some(prev) = current.last() {
                if !rule.same_trip(prev, r) {
                    trips.push(RawTrip {
                        user_id: r.user_id.clone(),
                        records: std::mem::take(&mut current),
                    });
                }
            }
            current.push(r.clone());
        }
        if let Some(first) = current.first() {
            trips.push(RawTrip {
                user_id: first.user_id.clone(),
                records: current,
            });
        }
    }
    trips
}

/// Merges consecutive check-ins at the same POI (earliest arrival, latest
/// departure) and drops later revisits of a POI already in the trip.
fn dedupe(records: Vec<CheckInRecord>) -> Vec<CheckInRecord> {
    let mut out: Vec<CheckInRecord> = Vec::with_capacity(records.len());
    for r in records {
        if let Some(last) = out.last_mut() {
            if last.poi_id == r.poi_id {
                last.departure_ts = last.departure_ts.max(r.departure_ts);
                continue;
            }
        }
        if out.iter().any(|o| o.poi_id == r.poi_id) {
            continue;
        }
        out.push(r);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IngestOptions {
    pub rule: SplitRule,
    pub last_stop_s: i64,
    pub min_len: usize,
    pub min_users_per_poi: usize,
    pub walk_speed: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            rule: SplitRule::default(),
            last_stop_s: DEFAULT_LAST_STOP_S,
            min_len: 3,
            min_users_per_poi: 5,
            walk_speed: DEFAULT_WALK_SPEED,
        }
    }
}

#[derive(Clone)]
struct Segment {
    user: UserId,
    checkins: Vec<CheckIn>,
}

impl PoiSequence for Segment {
    fn user_key(&self) -> UserId {
        self.user
    }

    fn poi_ids(&self) -> Vec<PoiId> {
        self.checkins.iter().map(|c| c.poi).collect()
    }

    fn retain_pois(&mut self, keep: &dyn Fn(PoiId) -> bool) {
        self.checkins.retain(|c| keep(c.poi));
    }
}

/// Full pipeline from parsed records to a split corpus with dense ids.
///
/// Records are grouped into trips first, then departures are estimated
/// within each trip, duplicates are merged, durations are averaged per POI,
/// rare POIs and short trips are filtered, and the remainder is split
/// chronologically.
pub fn ingest_checkins(records: &[CheckInRecord], opts: &IngestOptions) -> Result<Corpus> {
    let raw = split_into_trips(records, opts.rule);

    // Dense ids over sorted raw identifiers keep the mapping deterministic.
    let poi_names: BTreeSet<&str> = records.iter().map(|r| r.poi_id.as_str()).collect();
    let cat_names: BTreeSet<&str> = records.iter().map(|r| r.category.as_str()).collect();
    let user_names: BTreeSet<&str> = records.iter().map(|r| r.user_id.as_str()).collect();
    let poi_ix: HashMap<&str, PoiId> = poi_names
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, PoiId(i as u32)))
        .collect();
    let cat_ix: HashMap<&str, CategoryId> = cat_names
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, CategoryId(i as u32)))
        .collect();
    let user_ix: HashMap<&str, UserId> = user_names
        .iter()
        .enumerate()
        .map(|(i, s)| (*s, UserId(i as u32)))
        .collect();

    let mut poi_info: HashMap<PoiId, (Coords, CategoryId)> = HashMap::new();
    for r in records {
        poi_info.entry(poi_ix[r.poi_id.as_str()]).or_insert((
            Coords {
                lat: r.lat,
                lon: r.lon,
            },
            cat_ix[r.category.as_str()],
        ));
    }

    let mut segments = Vec::with_capacity(raw.len());
    let mut stays: HashMap<PoiId, Vec<CheckIn>> = HashMap::new();
    for t in raw {
        let filled = dedupe(estimate_departures(&t.records, opts.rule, opts.last_stop_s));
        let user = user_ix[t.user_id.as_str()];
        let mut checkins = Vec::with_capacity(filled.len());
        for r in &filled {
            let departure = r.departure_ts.unwrap_or(r.arrival_ts);
            let c = CheckIn::new(user, poi_ix[r.poi_id.as_str()], r.arrival_ts, departure)?;
            stays.entry(c.poi).or_default().push(c);
            checkins.push(c);
        }
        segments.push(Segment { user, checkins });
    }

    let kept = filter_corpus(&segments, opts.min_len, opts.min_users_per_poi);
    if kept.is_empty() {
        return Err(Error::invalid("no trips survive filtering"));
    }

    // Re-index the surviving POIs and users densely.
    let surviving_pois: BTreeSet<PoiId> = kept.iter().flat_map(|s| s.poi_ids()).collect();
    let surviving_users: BTreeSet<UserId> = kept.iter().map(|s| s.user).collect();
    let new_poi: HashMap<PoiId, PoiId> = surviving_pois
        .iter()
        .enumerate()
        .map(|(i, p)| (*p, PoiId(i as u32)))
        .collect();
    let new_user: HashMap<UserId, UserId> = surviving_users
        .iter()
        .enumerate()
        .map(|(i, u)| (*u, UserId(i as u32)))
        .collect();
    let used_cats: BTreeSet<CategoryId> = surviving_pois.iter().map(|p| poi_info[p].1).collect();
    let new_cat: HashMap<CategoryId, CategoryId> = used_cats
        .iter()
        .enumerate()
        .map(|(i, c)| (*c, CategoryId(i as u32)))
        .collect();

    let mut pois = Vec::with_capacity(surviving_pois.len());
    let mut durations = HashMap::with_capacity(surviving_pois.len());
    for old in &surviving_pois {
        let (coords, cat) = poi_info[old];
        let id = new_poi[old];
        pois.push(Poi {
            id,
            coords,
            category: new_cat[&cat],
        });
        durations.insert(id, expected_duration(&stays[old])?);
    }
    let world = World::new(pois)?;
    let time_model = TimeModel::new(durations, opts.walk_speed)?;

    let mut trips = Vec::with_capacity(kept.len());
    for s in &kept {
        let trip = Trip::new(
            new_user[&s.user],
            s.checkins.iter().map(|c| new_poi[&c.poi]).collect(),
        )?;
        let budget_s = crate::geo::trip_time(&trip, &world, &time_model)?;
        trips.push(CorpusTrip {
            trip,
            start_ts: s.checkins[0].arrival,
            budget_s,
        });
    }
    let split = chronological_split(&trips.iter().map(|t| t.start_ts).collect::<Vec<_>>())?;
    let corpus = Corpus {
        world,
        trips,
        time_model,
        split,
        n_users: surviving_users.len(),
    };
    corpus.validate()?;
    Ok(corpus)
}
