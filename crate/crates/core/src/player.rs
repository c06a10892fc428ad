//! Streaming playback: fetch, decode and reconstruct run as three worker threads joined by
//! bounded queues.
//!
//! Seeking bumps a generation counter. Every queued item carries the generation it was produced
//! under and stale items are dropped wherever they are found, so only frames for the latest
//! target reach the caller.

use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, Receiver, SendTimeoutError, Sender, TryRecvError};

use crate::codec::container::{read_manifest, MANIFEST_FILE};
use crate::codec::{decode_group, EncodedGroup, GroupEntry, Manifest, SegmentEntry};
use crate::error::{Error, Result};
use crate::pack::{unpack_frame, PlaneStack};
use crate::splat::GaussianFrame;

const POLL: Duration = Duration::from_millis(5);

/// Where segments come from.
pub trait SegmentSource: Send + Sync {
    fn manifest(&self) -> Result<Manifest>;

    fn fetch_segment(&self, segment: &SegmentEntry) -> Result<Vec<u8>>;

    fn fetch_group(&self, manifest: &Manifest, index: usize) -> Result<EncodedGroup> {
        let entry = manifest
            .groups
            .get(index)
            .ok_or_else(|| Error::Manifest(format!("no group {index}")))?;
        let payloads = entry
            .segments
            .iter()
            .map(|s| self.fetch_segment(s))
            .collect::<Result<Vec<_>>>()?;
        entry.assemble(manifest.sh_degree, payloads)
    }
}

/// A container directory on disk.
#[derive(Debug, Clone)]
pub struct DirSource {
    dir: PathBuf,
}

impl DirSource {
    /// Accepts the directory or the path of its manifest.
    pub fn new(path: impl AsRef<Path>) -> DirSource {
        let p = path.as_ref();
        let dir = if p.is_file() {
            p.parent().unwrap_or(Path::new(".")).to_path_buf()
        } else {
            p.to_path_buf()
        };
        DirSource { dir }
    }
}

impl SegmentSource for DirSource {
    fn manifest(&self) -> Result<Manifest> {
        read_manifest(&self.dir.join(MANIFEST_FILE))
    }

    fn fetch_segment(&self, segment: &SegmentEntry) -> Result<Vec<u8>> {
        let p = self.dir.join(&segment.path);
        std::fs::read(&p).map_err(|_| Error::MissingSegment(p))
    }
}

/// Segments served over HTTP, e.g. by [`crate::server`].
pub struct HttpSource {
    base: String,
    agent: ureq::Agent,
}

impl HttpSource {
    /// `url` may name the manifest itself or the directory that holds it.
    pub fn new(url: &str) -> HttpSource {
        let url = url.trim_end_matches('/');
        let base = match url.strip_suffix(MANIFEST_FILE) {
            Some(b) => b.trim_end_matches('/'),
            None => url,
        };
        HttpSource {
            base: base.to_string(),
            agent: ureq::AgentBuilder::new()
                .timeout_connect(Duration::from_secs(5))
                .timeout_read(Duration::from_secs(30))
                .build(),
        }
    }

    fn get(&self, path: &str) -> Result<Vec<u8>> {
        let url = format!("{}/{path}", self.base);
        let resp = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| Error::Network(format!("{url}: {e}")))?;
        let mut body = Vec::new();
        resp.into_reader()
            .read_to_end(&mut body)
            .map_err(|e| Error::Network(format!("{url}: {e}")))?;
        Ok(body)
    }
}

impl SegmentSource for HttpSource {
    fn manifest(&self) -> Result<Manifest> {
        Manifest::from_json(&self.get(MANIFEST_FILE)?)
    }

    fn fetch_segment(&self, segment: &SegmentEntry) -> Result<Vec<u8>> {
        let data = self.get(&segment.path)?;
        if data.len() as u64 != segment.bytes {
            return Err(Error::Network(format!(
                "{} returned {} bytes, manifest says {}",
                segment.path,
                data.len(),
                segment.bytes
            )));
        }
        Ok(data)
    }
}

/// Picks the HTTP source for `http://` and `https://` URLs and the directory source otherwise.
pub fn source_for(url: &str) -> Arc<dyn SegmentSource> {
    if url.starts_with("http://") || url.starts_with("https://") {
        Arc::new(HttpSource::new(url))
    } else {
        Arc::new(DirSource::new(url.strip_prefix("file://").unwrap_or(url)))
    }
}

pub trait GroupDecoder: Send + Sync {
    fn decode(&self, group: &EncodedGroup, entry: &GroupEntry) -> Result<PlaneStack>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CodecDecoder;

impl GroupDecoder for CodecDecoder {
    fn decode(&self, group: &EncodedGroup, entry: &GroupEntry) -> Result<PlaneStack> {
        decode_group(group, entry)
    }
}

/// Queue capacities between stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlayerConfig {
    /// Fetched groups waiting for decode.
    pub fetch_queue: usize,
    /// Decoded groups waiting for reconstruction.
    pub decode_queue: usize,
    /// Reconstructed frames waiting for the caller.
    pub frame_queue: usize,
}

impl Default for PlayerConfig {
    fn default() -> Self {
        PlayerConfig {
            fetch_queue: 3,
            decode_queue: 2,
            frame_queue: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlaybackState {
    Paused,
    Playing,
    Seeking,
    Ended,
}

#[derive(Debug, Clone)]
pub enum Delivery {
    Frame(Arc<GaussianFrame>),
    /// Nothing was ready in time; carries the last delivered frame to repeat.
    Stall(Option<Arc<GaussianFrame>>),
    EndOfStream,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageStat {
    pub count: u64,
    pub total: Duration,
    pub max: Duration,
}

impl StageStat {
    fn record(&mut self, d: Duration) {
        self.count += 1;
        self.total += d;
        self.max = self.max.max(d);
    }

    pub fn mean(&self) -> Duration {
        if self.count == 0 {
            Duration::ZERO
        } else {
            self.total / self.count as u32
        }
    }
}

/// Download and decode are timed per group, reconstruction per frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub download: StageStat,
    pub decode: StageStat,
    pub reconstruct: StageStat,
}

impl fmt::Display for StageTimings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>7} {:>10} {:>10} {:>11}", "stage", "count", "mean_ms", "max_ms", "total_ms")?;
        let ms = |d: Duration| d.as_secs_f64() * 1e3;
        for (name, s) in [
            ("download", &self.download),
            ("decode", &self.decode),
            ("reconstruct", &self.reconstruct),
        ] {
            writeln!(
                f,
                "{:<12} {:>7} {:>10.3} {:>10.3} {:>11.3}",
                name,
                s.count,
                ms(s.mean()),
                ms(s.max),
                ms(s.total)
            )?;
        }
        Ok(())
    }
}

struct Shared {
    generation: AtomicU64,
    shutdown: AtomicBool,
    timings: Mutex<StageTimings>,
}

impl Shared {
    fn stale(&self, generation: u64) -> bool {
        self.shutdown.load(Ordering::Acquire) || self.generation.load(Ordering::Acquire) != generation
    }
}

struct Seek {
    generation: u64,
    group: usize,
    target: usize,
}

struct Fetched {
    generation: u64,
    group: usize,
    target: usize,
    data: Result<EncodedGroup>,
}

struct Decoded {
    generation: u64,
    group: usize,
    target: usize,
    data: Result<PlaneStack>,
}

enum Output {
    Frame(u64, Arc<GaussianFrame>),
    End(u64),
    Failed(u64, Error),
}

impl Output {
    fn generation(&self) -> u64 {
        match self {
            Output::Frame(g, _) | Output::End(g) | Output::Failed(g, _) => *g,
        }
    }
}

/// Blocks until `item` is queued or its generation goes stale.
fn send_current<T>(tx: &Sender<T>, mut item: T, shared: &Shared, generation: u64) -> bool {
    loop {
        if shared.stale(generation) {
            return false;
        }
        match tx.send_timeout(item, POLL) {
            Ok(()) => return true,
            Err(SendTimeoutError::Timeout(back)) => item = back,
            Err(SendTimeoutError::Disconnected(_)) => return false,
        }
    }
}

fn fetch_worker(
    source: Arc<dyn SegmentSource>,
    manifest: Arc<Manifest>,
    shared: Arc<Shared>,
    control: Receiver<Seek>,
    tx: Sender<Fetched>,
) {
    let mut job: Option<Seek> = None;
    loop {
        let cmd = if job.is_none() {
            match control.recv() {
                Ok(c) => Some(c),
                Err(_) => return,
            }
        } else {
            match control.try_recv() {
                Ok(c) => Some(c),
                Err(TryRecvError::Empty) => None,
                Err(TryRecvError::Disconnected) => return,
            }
        };
        if let Some(c) = cmd {
            job = Some(c);
            continue;
        }
        let Some(cur) = job.take() else { continue };
        if shared.stale(cur.generation) || cur.group >= manifest.groups.len() {
            continue;
        }
        let t0 = Instant::now();
        let data = source.fetch_group(&manifest, cur.group);
        shared.timings.lock().unwrap().download.record(t0.elapsed());
        let failed = data.is_err();
        let item = Fetched {
            generation: cur.generation,
            group: cur.group,
            target: cur.target,
            data,
        };
        if send_current(&tx, item, &shared, cur.generation) && !failed {
            job = Some(Seek {
                group: cur.group + 1,
                ..cur
            });
        }
    }
}

fn decode_worker(
    decoder: Arc<dyn GroupDecoder>,
    manifest: Arc<Manifest>,
    shared: Arc<Shared>,
    rx: Receiver<Fetched>,
    tx: Sender<Decoded>,
) {
    for item in rx.iter() {
        if shared.stale(item.generation) {
            continue;
        }
        let data = item.data.and_then(|g| {
            let t0 = Instant::now();
            let r = decoder.decode(&g, &manifest.groups[item.group]);
            shared.timings.lock().unwrap().decode.record(t0.elapsed());
            r
        });
        let out = Decoded {
            generation: item.generation,
            group: item.group,
            target: item.target,
            data,
        };
        send_current(&tx, out, &shared, item.generation);
    }
}

fn reconstruct_worker(manifest: Arc<Manifest>, shared: Arc<Shared>, rx: Receiver<Decoded>, tx: Sender<Output>) {
    for item in rx.iter() {
        let generation = item.generation;
        if shared.stale(generation) {
            continue;
        }
        let entry = &manifest.groups[item.group];
        let stack = match item.data {
            Ok(s) => s,
            Err(e) => {
                send_current(&tx, Output::Failed(generation, e), &shared, generation);
                continue;
            }
        };
        let mut complete = true;
        for t in 0..stack.num_frames() {
            // frames before the seek target were decoded with the group and are dropped here
            if entry.start_frame + t < item.target {
                continue;
            }
            let t0 = Instant::now();
            let frame = unpack_frame(&stack, t);
            shared.timings.lock().unwrap().reconstruct.record(t0.elapsed());
            let out = match frame {
                Ok(f) => Output::Frame(generation, Arc::new(f)),
                Err(e) => Output::Failed(generation, e),
            };
            let failed = matches!(out, Output::Failed(..));
            if !send_current(&tx, out, &shared, generation) || failed {
                complete = false;
                break;
            }
        }
        if complete && entry.end_frame() >= manifest.frame_count {
            send_current(&tx, Output::End(generation), &shared, generation);
        }
    }
}

/// An open stream. Frames come out in increasing index order, each at most once per seek.
pub struct PlaySession {
    manifest: Arc<Manifest>,
    shared: Arc<Shared>,
    control: Option<Sender<Seek>>,
    frames: Receiver<Output>,
    fetched_probe: Receiver<Fetched>,
    decoded_probe: Receiver<Decoded>,
    workers: Vec<JoinHandle<()>>,
    state: PlaybackState,
    resume: PlaybackState,
    position: usize,
    last: Option<Arc<GaussianFrame>>,
    stalls: u64,
    ended: bool,
}

impl PlaySession {
    /// Opens an HTTP URL or a container directory and starts prefetching from frame 0.
    pub fn open(url: &str) -> Result<PlaySession> {
        PlaySession::open_with(source_for(url), Arc::new(CodecDecoder), PlayerConfig::default())
    }

    pub fn open_with(
        source: Arc<dyn SegmentSource>,
        decoder: Arc<dyn GroupDecoder>,
        cfg: PlayerConfig,
    ) -> Result<PlaySession> {
        if cfg.fetch_queue == 0 || cfg.decode_queue == 0 || cfg.frame_queue == 0 {
            return Err(Error::invalid("queue capacities must be positive"));
        }
        let manifest = Arc::new(source.manifest()?);
        manifest.validate()?;
        let shared = Arc::new(Shared {
            generation: AtomicU64::new(0),
            shutdown: AtomicBool::new(false),
            timings: Mutex::new(StageTimings::default()),
        });
        let (ctl_tx, ctl_rx) = crossbeam_channel::unbounded();
        let (f_tx, f_rx) = bounded(cfg.fetch_queue);
        let (d_tx, d_rx) = bounded(cfg.decode_queue);
        let (o_tx, o_rx) = bounded(cfg.frame_queue);
        let spawn = |name: &str, f: Box<dyn FnOnce() + Send>| {
            std::thread::Builder::new().name(name.to_string()).spawn(f)
        };
        let workers = vec![
            spawn("gvv-fetch", {
                let (m, s, rx) = (manifest.clone(), shared.clone(), ctl_rx);
                Box::new(move || fetch_worker(source, m, s, rx, f_tx))
            })?,
            spawn("gvv-decode", {
                let (m, s, rx) = (manifest.clone(), shared.clone(), f_rx.clone());
                Box::new(move || decode_worker(decoder, m, s, rx, d_tx))
            })?,
            spawn("gvv-reconstruct", {
                let (m, s, rx) = (manifest.clone(), shared.clone(), d_rx.clone());
                Box::new(move || reconstruct_worker(m, s, rx, o_tx))
            })?,
        ];
        ctl_tx
            .send(Seek {
                generation: 0,
                group: 0,
                target: 0,
            })
            .map_err(|_| Error::invalid("fetch worker exited"))?;
        Ok(PlaySession {
            manifest,
            shared,
            control: Some(ctl_tx),
            frames: o_rx,
            fetched_probe: f_rx,
            decoded_probe: d_rx,
            workers,
            state: PlaybackState::Paused,
            resume: PlaybackState::Paused,
            position: 0,
            last: None,
            stalls: 0,
            ended: false,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn frame_count(&self) -> usize {
        self.manifest.frame_count
    }

    pub fn fps(&self) -> f32 {
        self.manifest.fps
    }

    pub fn state(&self) -> PlaybackState {
        self.state
    }

    pub fn play(&mut self) {
        match self.state {
            PlaybackState::Seeking => self.resume = PlaybackState::Playing,
            PlaybackState::Ended => {}
            _ => self.state = PlaybackState::Playing,
        }
    }

    pub fn pause(&mut self) {
        match self.state {
            PlaybackState::Seeking => self.resume = PlaybackState::Paused,
            PlaybackState::Ended => {}
            _ => self.state = PlaybackState::Paused,
        }
    }

    /// Index of the next frame to be delivered.
    pub fn position(&self) -> usize {
        self.position
    }

    pub fn last_frame(&self) -> Option<&Arc<GaussianFrame>> {
        self.last.as_ref()
    }

    pub fn stalls(&self) -> u64 {
        self.stalls
    }

    pub fn timings(&self) -> StageTimings {
        *self.shared.timings.lock().unwrap()
    }

    /// Items currently waiting in the (fetched, decoded, frame) queues.
    pub fn queue_depths(&self) -> (usize, usize, usize) {
        (self.fetched_probe.len(), self.decoded_probe.len(), self.frames.len())
    }

    /// Moves playback to `frame`. Fetching restarts at the start of its group.
    pub fn seek(&mut self, frame: usize) -> Result<()> {
        let group = self.manifest.group_of(frame).ok_or_else(|| {
            Error::invalid(format!("seek target {frame} is past the end ({} frames)", self.frame_count()))
        })?;
        let generation = self.shared.generation.fetch_add(1, Ordering::AcqRel) + 1;
        self.control
            .as_ref()
            .expect("control channel lives as long as the session")
            .send(Seek {
                generation,
                group,
                target: frame,
            })
            .map_err(|_| Error::invalid("fetch worker exited"))?;
        while self.frames.try_recv().is_ok() {}
        if self.state != PlaybackState::Seeking {
            self.resume = match self.state {
                PlaybackState::Ended => PlaybackState::Paused,
                s => s,
            };
        }
        self.state = PlaybackState::Seeking;
        self.position = frame;
        self.ended = false;
        Ok(())
    }

    /// Waits up to `timeout` for the next frame. On timeout a stall is counted and the last
    /// frame is handed back for repeat.
    pub fn next_frame(&mut self, timeout: Duration) -> Result<Delivery> {
        self.receive(Instant::now() + timeout)
    }

    /// Non-blocking [`next_frame`](Self::next_frame).
    pub fn poll_frame(&mut self) -> Result<Delivery> {
        self.receive(Instant::now())
    }

    fn receive(&mut self, deadline: Instant) -> Result<Delivery> {
        if self.ended {
            return Ok(Delivery::EndOfStream);
        }
        let current = self.shared.generation.load(Ordering::Acquire);
        loop {
            let msg = match self.frames.recv_deadline(deadline) {
                Ok(m) => m,
                Err(_) => {
                    self.stalls += 1;
                    return Ok(Delivery::Stall(self.last.clone()));
                }
            };
            if msg.generation() != current {
                continue;
            }
            match msg {
                Output::Frame(_, f) => {
                    if f.frame_index < self.position {
                        continue;
                    }
                    self.position = f.frame_index + 1;
                    self.last = Some(f.clone());
                    if self.state == PlaybackState::Seeking {
                        self.state = self.resume;
                    }
                    return Ok(Delivery::Frame(f));
                }
                Output::End(_) => {
                    self.ended = true;
                    self.state = PlaybackState::Ended;
                    return Ok(Delivery::EndOfStream);
                }
                Output::Failed(_, e) => return Err(e),
            }
        }
    }
}

impl Drop for PlaySession {
    fn drop(&mut self) {
        self.shared.shutdown.store(true, Ordering::Release);
        self.control = None;
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bake::{bake, BakeConfig};
    use crate::synth::smooth_sequence;

    fn baked(frames: usize, group: usize) -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        let seq = smooth_sequence(200, frames, 0, 3);
        let cfg = BakeConfig {
            group_size: group,
            ..BakeConfig::default()
        };
        bake(&seq, dir.path(), &cfg).unwrap();
        dir
    }

    #[test]
    fn plays_to_end_in_order() {
        let dir = baked(12, 5);
        let mut s = PlaySession::open(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(s.state(), PlaybackState::Paused);
        s.play();
        let mut got = vec![];
        loop {
            match s.next_frame(Duration::from_secs(10)).unwrap() {
                Delivery::Frame(f) => got.push(f.frame_index),
                Delivery::EndOfStream => break,
                Delivery::Stall(_) => panic!("stalled"),
            }
        }
        assert_eq!(got, (0..12).collect::<Vec<_>>());
        assert_eq!(s.state(), PlaybackState::Ended);
        assert!(matches!(s.poll_frame().unwrap(), Delivery::EndOfStream));
        let t = s.timings();
        assert_eq!(t.download.count, 3);
        assert_eq!(t.decode.count, 3);
        assert_eq!(t.reconstruct.count, 12);
    }

    #[test]
    fn seek_past_end_is_rejected() {
        let dir = baked(4, 4);
        let mut s = PlaySession::open(dir.path().to_str().unwrap()).unwrap();
        assert!(s.seek(4).is_err());
        s.seek(3).unwrap();
        assert_eq!(s.state(), PlaybackState::Seeking);
        match s.next_frame(Duration::from_secs(10)).unwrap() {
            Delivery::Frame(f) => assert_eq!(f.frame_index, 3),
            d => panic!("{d:?}"),
        }
        assert_eq!(s.state(), PlaybackState::Paused);
    }

    #[test]
    fn missing_container_fails_to_open() {
        let dir = tempfile::tempdir().unwrap();
        assert!(PlaySession::open(dir.path().to_str().unwrap()).is_err());
    }

    #[test]
    fn http_source_url_forms() {
        assert_eq!(HttpSource::new("http://h:1/a/manifest.json").base, "http://h:1/a");
        assert_eq!(HttpSource::new("http://h:1/a/").base, "http://h:1/a");
        assert_eq!(HttpSource::new("http://h:1").base, "http://h:1");
    }
}
