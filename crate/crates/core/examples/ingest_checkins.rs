//! Turns a raw check-in CSV into a corpus: trip splitting, departure
//! estimation, rare-POI filtering and the chronological split.
//!
//! `cargo run --example ingest_checkins [checkins.csv]`
//!
//! Without an argument a small city of 8 users walking through 6 venues over
//! two weeks is written to a temporary file first.

use std::fmt::Write as _;
use std::path::PathBuf;

use ant_trip::dataset::{ingest_checkins, parse_checkins, IngestOptions, SplitRule};

fn demo_csv() -> String {
    let venues = [
        ("museum", 40.7794, -73.9632, "Art"),
        ("park", 40.7812, -73.9665, "Outdoors"),
        ("cafe", 40.7769, -73.9591, "Food"),
        ("gallery", 40.7740, -73.9650, "Art"),
        ("bistro", 40.7725, -73.9602, "Food"),
        ("bookshop", 40.7755, -73.9570, "Shop"),
    ];
    let mut s = String::from("user_id,poi_id,lat,lon,category,arrival_ts,departure_ts\n");
    for user in 0..8u64 {
        for day in 0..14u64 {
            if (user + day) % 3 == 0 {
                continue;
            }
            let mut t = 1_700_000_000 + day * 86_400 + 9 * 3600 + user * 300;
            for k in 0..4 {
                let (id, lat, lon, cat) = venues[((user + day + 2 * k) % 6) as usize];
                // Every other check-in lacks a departure and gets it estimated.
                let dep = if k % 2 == 0 {
                    (t + 2700).to_string()
                } else {
                    String::new()
                };
                writeln!(s, "u{user},{id},{lat},{lon},{cat},{t},{dep}").unwrap();
                t += 3600;
            }
        }
    }
    s
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = match std::env::args().nth(1) {
        Some(p) => PathBuf::from(p),
        None => {
            let p = std::env::temp_dir().join("ant-demo-checkins.csv");
            std::fs::write(&p, demo_csv())?;
            p
        }
    };
    let records = parse_checkins(&path)?;
    println!("{} check-ins from {}", records.len(), path.display());
    for (name, rule) in [
        ("5-hour gap", SplitRule::default()),
        (
            "calendar day",
            SplitRule::CalendarDay {
                utc_offset_s: -5 * 3600,
            },
        ),
    ] {
        let corpus = ingest_checkins(
            &records,
            &IngestOptions {
                rule,
                ..Default::default()
            },
        )?;
        println!(
            "{name}: {} trips over {} POIs and {} users; split {}/{}/{}",
            corpus.trips.len(),
            corpus.n_pois(),
            corpus.n_users,
            corpus.split.train.len(),
            corpus.split.validation.len(),
            corpus.split.test.len()
        );
        for (p, d) in corpus.time_model.sorted_durations() {
            println!("  POI {p}: expected stay {d:.0} s");
        }
    }
    Ok(())
}
