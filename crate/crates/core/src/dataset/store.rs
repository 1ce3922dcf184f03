//! Corpus directory layout:
//! `pois.csv`, `trips.jsonl`, `time_model.csv`, `split.json` and `meta.json`.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusTrip, Split};
use crate::error::{Error, Result};
use crate::geo::{CategoryId, Coords, Poi, PoiId, TimeModel, Trip, UserId, World};

#[derive(Serialize, Deserialize)]
struct PoiRow {
    id: u32,
    lat: f64,
    lon: f64,
    category: u32,
}

#[derive(Serialize, Deserialize)]
struct DurationRow {
    poi_id: u32,
    duration_s: f64,
}

#[derive(Serialize, Deserialize)]
struct TripLine {
    user: u32,
    poi_ids: Vec<u32>,
    start_ts: i64,
    budget_s: f64,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    walk_speed: f64,
    n_users: usize,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Parse {
            path: path.into(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_err(path, e)))
        .collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.into(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn save_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv(
        &dir.join("pois.csv"),
        corpus.world.pois().iter().map(|p| PoiRow {
            id: p.id.0,
            lat: p.coords.lat,
            lon: p.coords.lon,
            category: p.category.0,
        }),
    )?;
    write_csv(
        &dir.join("time_model.csv"),
        corpus
            .time_model
            .sorted_durations()
            .into_iter()
            .map(|(p, d)| DurationRow {
                poi_id: p.0,
                duration_s: d,
            }),
    )?;

    let path = dir.join("trips.jsonl");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
    for t in &corpus.trips {
        let line = TripLine {
            user: t.trip.user.0,
            poi_ids: t.trip.pois.iter().map(|p| p.0).collect(),
            start_ts: t.start_ts,
            budget_s: t.budget_s,
        };
        let json = serde_json::to_string(&line).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w, "{json}").map_err(|e| Error::io(&path, e))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    write_json(&dir.join("split.json"), &corpus.split)?;
    write_json(
        &dir.join("meta.json"),
        &Meta {
            walk_speed: corpus.time_model.walk_speed(),
            n_users: corpus.n_users,
        },
    )
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let pois = read_csv::<PoiRow>(&dir.join("pois.csv"))?
        .into_iter()
        .map(|r| {
            Ok(Poi {
                id: PoiId(r.id),
                coords: Coords::new(r.lat, r.lon)?,
                category: CategoryId(r.category),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let world = World::new(pois)?;

    let meta: Meta = read_json(&dir.join("meta.json"))?;
    let durations: HashMap<PoiId, f64> = read_csv::<DurationRow>(&dir.join("time_model.csv"))?
        .into_iter()
        .map(|r| (PoiId(r.poi_id), r.duration_s))
        .collect();
    let time_model = TimeModel::new(durations, meta.walk_speed)?;

    let path = dir.join("trips.jsonl");
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut trips = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.clone(),
            line: i + 1,
            message,
        };
        let t: TripLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let trip = Trip::new(UserId(t.user), t.poi_ids.into_iter().map(PoiId).collect())
            .map_err(|e| parse_err(e.to_string()))?;
        trips.push(CorpusTrip {
            trip,
            start_ts: t.start_ts,
            budget_s: t.budget_s,
        });
    }

    let split: Split = read_json(&dir.join("split.json"))?;
    let corpus = Corpus {
        world,
        trips,
        time_model,
        split,
        n_users: meta.n_users,
    };
    corpus.validate()?;
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_world, SyntheticWorldConfig};

    #[test]
    fn round_trip_is_exact() {
        let corpus = generate_synthetic_world(&SyntheticWorldConfig {
            n_pois: 30,
            n_trips: 40,
            ..Default::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_corpus(dir.path(), &corpus).unwrap();
        let back = load_corpus(dir.path()).unwrap();
        assert_eq!(back, corpus);
    }

    #[test]
    fn missing_directory_is_io_error() {
        assert!(matches!(
            load_corpus(Path::new("/nonexistent/corpus")),
            Err(Error::Io { .. })
        ));
    }
}
