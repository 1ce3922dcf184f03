//! Candidate retrieval for one query: hypergraph neighbours of the start POI,
//! nearest first, padded with spatially close POIs, plus the advance costs
//! the decoder's feasibility mask is built from.
//!
//! `cargo run --example candidate_retrieval [n]`

use ant_trip::candidates::{CandidateBuilder, SlotCosts};
use ant_trip::dataset::{generate_synthetic_world, SyntheticWorldConfig};
use ant_trip::geo::haversine_distance;

fn main() -> ant_trip::Result<()> {
    let n: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20);
    let corpus = generate_synthetic_world(&SyntheticWorldConfig {
        n_trips: 300,
        ..Default::default()
    })?;
    let builder = CandidateBuilder::new(&corpus.train_trips(), n);
    let real = &corpus.trips[corpus.split.test[0]].trip;
    let q = corpus.query_for(real, 1.0)?;
    println!(
        "query: user {} starts at POI {} with {:.0} s; the hypergraph has {} trips",
        q.user,
        q.start,
        q.budget_s,
        builder.hypergraph.edges().len()
    );
    let cs = builder.build(&q, &corpus.world)?;
    let costs = SlotCosts::new(&cs, &corpus.world, &corpus.time_model)?;
    let start = corpus.world.get(q.start)?;
    let from_start = costs.advance_row(0);
    println!("slot  poi  source      distance_m  stay_s  advance_from_start_s");
    for (slot, &p) in cs.pois.iter().enumerate() {
        let source = match slot {
            0 => "start",
            s if s <= cs.n_hypergraph => "hypergraph",
            _ => "padding",
        };
        println!(
            "{slot:4} {:4}  {source:10} {:11.0} {:7.0} {:21.0}",
            p.0,
            haversine_distance(start.coords, corpus.world.get(p)?.coords),
            costs.duration(slot),
            from_start[slot]
        );
    }
    let hits = real.pois.iter().filter(|p| cs.pois.contains(p)).count();
    println!(
        "{hits} of the real trip's {} POIs are among the candidates",
        real.len()
    );
    Ok(())
}
