//! Bakes a synthetic sequence, serves it over HTTP on a free port and plays it back,
//! seeking once halfway.

use std::net::SocketAddr;
use std::time::Duration;

use gvv::bake::{bake, BakeConfig};
use gvv::player::{Delivery, PlaySession};
use gvv::server::{spawn, ServeConfig};
use gvv::synth::smooth_sequence;

fn main() -> gvv::Result<()> {
    let dir = std::env::temp_dir().join("gvv-stream-example");
    let seq = smooth_sequence(20_000, 60, 1, 5);
    let (manifest, report) = bake(&seq, &dir, &BakeConfig::default())?;
    println!(
        "baked {} frames, {:.1} kB/frame",
        manifest.frame_count,
        report.bytes_per_frame() / 1000.0
    );

    let mut cfg = ServeConfig::new(&dir);
    cfg.addr = SocketAddr::from(([127, 0, 0, 1], 0));
    let server = spawn(&cfg)?;
    let url = format!("{}/manifest.json", server.url());
    println!("serving {url}");

    let mut session = PlaySession::open(&url)?;
    session.play();
    let mut delivered = vec![];
    loop {
        match session.next_frame(Duration::from_secs(10))? {
            Delivery::Frame(f) => {
                delivered.push(f.frame_index);
                if f.frame_index == 10 {
                    session.seek(45)?;
                }
            }
            Delivery::Stall(_) => println!("stall"),
            Delivery::EndOfStream => break,
        }
    }
    println!("delivered {} frames: {:?} .. {:?}", delivered.len(), &delivered[..3], &delivered[delivered.len() - 3..]);
    print!("{}", session.timings());
    Ok(())
}
