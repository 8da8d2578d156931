//! Generates a small train/test split and writes it as tracklet files.
//!
//! `cargo run --example synthetic_data -- out_dir`

use std::path::PathBuf;

use streamtrack::data::{generate_split, read_tracklets, write_tracklets};
use streamtrack::geom::point_in_box;
use streamtrack::harness::ExperimentConfig;

fn main() -> streamtrack::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "synthetic".into()));
    std::fs::create_dir_all(&out)?;
    let cfg = ExperimentConfig::desk();
    let test = generate_split(&cfg.data.test_scene, 5, cfg.data.test_seed)?;
    let path = out.join("test.jsonl");
    write_tracklets(&test, &path)?;
    assert_eq!(read_tracklets(&path)?, test);

    for t in &test {
        let on_target: Vec<usize> = t
            .frames
            .iter()
            .map(|f| f.points.iter().filter(|p| point_in_box(p, &f.gt)).count())
            .collect();
        println!(
            "track {} ({}, {} frames): target points per frame {:?}",
            t.id,
            t.category,
            t.len(),
            on_target
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}
