use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{ArgAction, Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use gvv::bake::{ablation_csv, bake_dir, group_size_ablation, BakeConfig, DEFAULT_GROUP_SIZE};
use gvv::codec::{Backend, H264External, QpSetting};
use gvv::io::{read_sequence, read_splats, write_splats};
use gvv::motion::{fit_motion, Chamfer, FitOptions, HashGridConfig, MotionObjective, SupervisedL2};
use gvv::player::{Delivery, PlaySession};
use gvv::rd::{rate_distortion_sweep, rd_csv};
use gvv::regularizers::entropy::Noise;
use gvv::regularizers::pair_losses;
use gvv::render::{render, Camera, RenderOptions};
use gvv::server::{serve, ServeConfig};
use gvv::splat::GaussianFrame;

#[derive(Parser)]
#[command(name = "gvv", version, about = "Bake, serve and play Gaussian splat videos")]
struct Cli {
    /// TOML file; its `[subcommand]` table fills in flags not given on the command line.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bake a directory of per-frame splat files into a streamable container.
    Bake(BakeArgs),
    /// Play a container from a URL or directory.
    Play(PlayArgs),
    /// Encoded size versus PSNR across quantizer settings, as CSV.
    RdSweep(RdArgs),
    /// Per-frame size across group sizes, as CSV.
    Ablation(AblationArgs),
    /// Fit a motion field from one splat cloud to the next.
    FitMotion(FitArgs),
    /// Render one splat file to PNG.
    Render(RenderArgs),
    /// Serve a container over HTTP.
    Serve(ServeArgs),
    /// Dump entropy and temporal losses between two splat files as JSON.
    Losses(LossArgs),
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct BakeArgs {
    #[serde(skip)]
    input: PathBuf,
    #[serde(skip)]
    output: PathBuf,
    #[arg(long)]
    group_size: Option<usize>,
    /// Truncate spherical harmonics to this degree.
    #[arg(long)]
    sh_degree: Option<u8>,
    #[arg(long)]
    prune_ratio: Option<f64>,
    #[arg(long)]
    target_count: Option<usize>,
    /// `lossless` or a base QP for the external H.264 encoder.
    #[arg(long)]
    qp: Option<String>,
    #[arg(long)]
    fps: Option<f32>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct PlayArgs {
    /// `http://…` URL or container directory.
    #[serde(skip)]
    url: String,
    /// Camera text file; defaults to an orbit view framing the first frame.
    #[arg(long)]
    camera: Option<PathBuf>,
    /// Playback rate; defaults to the manifest rate.
    #[arg(long)]
    fps: Option<f32>,
    /// Render every frame to PNG files in this directory instead of pacing playback.
    #[arg(long)]
    offline_out: Option<PathBuf>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    seek: Option<usize>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct RdArgs {
    #[serde(skip)]
    input: PathBuf,
    /// Comma-separated settings, e.g. `lossless,15,25,35`.
    #[arg(long, value_delimiter = ',')]
    qps: Option<Vec<String>>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct AblationArgs {
    #[serde(skip)]
    input: PathBuf,
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long)]
    qp: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct FitArgs {
    #[serde(skip)]
    prev: PathBuf,
    #[serde(skip)]
    next: PathBuf,
    /// Warped copy of the first cloud.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Field checkpoint.
    #[arg(long)]
    field: Option<PathBuf>,
    /// `supervised` (index correspondence), `chamfer`, or `auto` (supervised when counts match).
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log2_table_size: Option<u32>,
    #[arg(long)]
    lr_tables: Option<f64>,
    #[arg(long)]
    lr_mlp: Option<f64>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct RenderArgs {
    #[serde(skip)]
    input: PathBuf,
    #[arg(long)]
    camera: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    sh_degree: Option<u32>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct ServeArgs {
    #[arg(long)]
    root: Option<PathBuf>,
    #[arg(long)]
    addr: Option<SocketAddr>,
    /// Allowed origins, comma-separated; `*` allows any.
    #[arg(long, value_delimiter = ',')]
    cors: Option<Vec<String>>,
    #[arg(long)]
    cache_secs: Option<u32>,
}

#[derive(Args, Deserialize, Default)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct LossArgs {
    #[serde(skip)]
    prev: PathBuf,
    #[serde(skip)]
    next: PathBuf,
    /// Add seeded uniform quantization noise to the residuals.
    #[arg(long)]
    noise_seed: Option<u64>,
    /// Include full gradient arrays.
    #[arg(long, action = ArgAction::SetTrue)]
    gradients: bool,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<gvv::Error> for Failure {
    fn from(e: gvv::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

macro_rules! merge {
    ($a:expr, $b:expr; $($f:ident),+) => {
        $( if $a.$f.is_none() { $a.$f = $b.$f; } )+
    };
}

fn load_section<T: for<'de> Deserialize<'de> + Default>(config: Option<&toml::Table>, name: &str) -> Result<T, Failure> {
    let Some(table) = config.and_then(|t| t.get(name)) else {
        return Ok(T::default());
    };
    table
        .clone()
        .try_into()
        .map_err(|e| usage(format!("config [{name}]: {e}")))
}

fn read_config(path: &Path) -> Result<toml::Table, Failure> {
    const SECTIONS: [&str; 8] = ["bake", "play", "rd-sweep", "ablation", "fit-motion", "render", "serve", "losses"];
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    let table: toml::Table = text
        .parse()
        .map_err(|e| usage(format!("config {}: {e}", path.display())))?;
    if let Some(k) = table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
        return Err(usage(format!("config {}: unknown section [{k}]", path.display())));
    }
    Ok(table)
}

fn parse_qp(s: Option<&str>) -> Result<QpSetting, Failure> {
    s.unwrap_or("lossless").parse().map_err(|e: gvv::Error| usage(e.to_string()))
}

fn backend_for(qp: QpSetting) -> Result<(Backend, u8), Failure> {
    match qp {
        QpSetting::Lossless => Ok((Backend::LosslessInternal, 0)),
        QpSetting::Qp(q) => {
            if !H264External::is_available() {
                return Err(Failure::Runtime(
                    "numeric QPs need ffmpeg on PATH or at $GVV_FFMPEG".to_string(),
                ));
            }
            Ok((Backend::H264External, q))
        }
    }
}

fn camera_for(path: Option<&Path>, frame: &GaussianFrame, width: Option<u32>, height: Option<u32>) -> Result<Camera, Failure> {
    match path {
        Some(p) => Ok(Camera::load(p)?),
        None => Ok(Camera::framing(&frame.bbox(), width.unwrap_or(640), height.unwrap_or(360))?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = (|| -> Outcome {
        let config = cli.config.as_deref().map(read_config).transpose()?;
        let config = config.as_ref();
        match cli.command {
            Command::Bake(mut a) => {
                let f: BakeArgs = load_section(config, "bake")?;
                merge!(a, f; group_size, sh_degree, prune_ratio, target_count, qp, fps);
                run_bake(a)
            }
            Command::Play(mut a) => {
                let f: PlayArgs = load_section(config, "play")?;
                merge!(a, f; camera, fps, offline_out, width, height, seek);
                run_play(a)
            }
            Command::RdSweep(mut a) => {
                let f: RdArgs = load_section(config, "rd-sweep")?;
                merge!(a, f; qps, group_size, camera, width, height, out);
                run_rd(a)
            }
            Command::Ablation(mut a) => {
                let f: AblationArgs = load_section(config, "ablation")?;
                merge!(a, f; sizes, qp, out);
                run_ablation(a)
            }
            Command::FitMotion(mut a) => {
                let f: FitArgs = load_section(config, "fit-motion")?;
                merge!(a, f; out, field, objective, iterations, seed, log2_table_size, lr_tables, lr_mlp);
                run_fit(a)
            }
            Command::Render(mut a) => {
                let f: RenderArgs = load_section(config, "render")?;
                merge!(a, f; camera, out, width, height, sh_degree);
                run_render(a)
            }
            Command::Serve(mut a) => {
                let f: ServeArgs = load_section(config, "serve")?;
                merge!(a, f; root, addr, cors, cache_secs);
                run_serve(a)
            }
            Command::Losses(mut a) => {
                let f: LossArgs = load_section(config, "losses")?;
                merge!(a, f; noise_seed);
                a.gradients |= f.gradients;
                run_losses(a)
            }
        }
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn run_bake(a: BakeArgs) -> Outcome {
    let (backend, base_qp) = backend_for(parse_qp(a.qp.as_deref())?)?;
    let defaults = BakeConfig::default();
    let cfg = BakeConfig {
        group_size: a.group_size.unwrap_or(DEFAULT_GROUP_SIZE),
        sh_degree: a.sh_degree,
        prune_ratio: a.prune_ratio.unwrap_or(defaults.prune_ratio),
        target_count: a.target_count.unwrap_or(defaults.target_count),
        backend,
        base_qp,
        fps: a.fps.unwrap_or(defaults.fps),
    };
    if cfg.group_size == 0 {
        return Err(usage("--group-size must be positive"));
    }
    let (manifest, report) = bake_dir(&a.input, &a.output, &cfg)?;
    println!(
        "baked {} frames in {} groups to {}",
        manifest.frame_count,
        manifest.groups.len(),
        a.output.display()
    );
    println!(
        "{} bytes total, {:.3} kB/frame, {:.3} s/frame",
        report.total_bytes(),
        report.bytes_per_frame() / 1000.0,
        report.seconds_per_frame()
    );
    Ok(())
}

fn run_play(a: PlayArgs) -> Outcome {
    let mut session = PlaySession::open(&a.url)?;
    let fps = a.fps.unwrap_or(session.fps());
    if !(fps > 0.0) {
        return Err(usage("--fps must be positive"));
    }
    if let Some(t) = a.seek {
        session.seek(t)?;
    }
    let opts = RenderOptions {
        sh_degree: session.manifest().sh_degree as u32,
        ..RenderOptions::default()
    };
    let mut camera: Option<Camera> = None;
    let mut render_time = Duration::ZERO;
    let mut frames = 0usize;
    let mut repeats = 0usize;
    let started = Instant::now();
    session.play();

    if let Some(dir) = &a.offline_out {
        std::fs::create_dir_all(dir)?;
        loop {
            match session.next_frame(Duration::from_secs(30))? {
                Delivery::Frame(f) => {
                    let cam = match &camera {
                        Some(c) => c,
                        None => camera.insert(camera_for(a.camera.as_deref(), &f, a.width, a.height)?),
                    };
                    let t0 = Instant::now();
                    let img = render(&f, cam, &opts).image;
                    render_time += t0.elapsed();
                    img.save_png(&dir.join(format!("frame_{:05}.png", f.frame_index)))?;
                    frames += 1;
                }
                Delivery::Stall(_) => return Err(Failure::Runtime("stream starved for 30 s".into())),
                Delivery::EndOfStream => break,
            }
        }
        println!("wrote {frames} frames to {}", dir.display());
    } else {
        let tick = Duration::from_secs_f64(1.0 / fps as f64);
        let mut deadline = Instant::now() + tick;
        loop {
            match session.next_frame(deadline.saturating_duration_since(Instant::now()))? {
                Delivery::Frame(f) => {
                    let cam = match &camera {
                        Some(c) => c,
                        None => camera.insert(camera_for(a.camera.as_deref(), &f, a.width, a.height)?),
                    };
                    let t0 = Instant::now();
                    render(&f, cam, &opts);
                    render_time += t0.elapsed();
                    frames += 1;
                }
                Delivery::Stall(_) => repeats += 1,
                Delivery::EndOfStream => break,
            }
            std::thread::sleep(deadline.saturating_duration_since(Instant::now()));
            deadline += tick;
        }
        println!(
            "played {frames} frames at {fps} fps target, {repeats} repeated for stalls, {:.1} fps achieved",
            frames as f64 / started.elapsed().as_secs_f64()
        );
    }
    print_timings(&session, frames, render_time);
    Ok(())
}

fn print_timings(session: &PlaySession, frames: usize, render_time: Duration) {
    let t = session.timings();
    let n = frames.max(1) as f64;
    println!("{:<12} {:>8} {:>14} {:>10}", "stage", "count", "ms_per_frame", "total_ms");
    for (name, s) in [("download", t.download), ("decode", t.decode), ("reconstruct", t.reconstruct)] {
        let total = s.total.as_secs_f64() * 1e3;
        println!("{name:<12} {:>8} {:>14.3} {:>10.1}", s.count, total / n, total);
    }
    println!("render {:.3} ms/frame", render_time.as_secs_f64() * 1e3 / n);
}

fn read_frames(dir: &Path) -> Result<Vec<GaussianFrame>, Failure> {
    let frames = read_sequence(dir)?;
    if frames.is_empty() {
        return Err(Failure::Runtime(format!("no splat files in {}", dir.display())));
    }
    Ok(frames)
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_rd(a: RdArgs) -> Outcome {
    let qps = a
        .qps
        .unwrap_or_else(|| ["lossless", "15", "25", "35"].map(String::from).to_vec())
        .iter()
        .map(|s| parse_qp(Some(s)))
        .collect::<Result<Vec<_>, _>>()?;
    for &q in &qps {
        backend_for(q)?;
    }
    let frames = read_frames(&a.input)?;
    let camera = camera_for(a.camera.as_deref(), &frames[0], a.width, a.height)?;
    let opts = RenderOptions {
        sh_degree: frames[0].sh_degree as u32,
        ..RenderOptions::default()
    };
    let rows = rate_distortion_sweep(&frames, &qps, &[camera], a.group_size.unwrap_or(DEFAULT_GROUP_SIZE), &opts)?;
    emit(a.out.as_deref(), &rd_csv(&rows))
}

fn run_ablation(a: AblationArgs) -> Outcome {
    let (backend, base_qp) = backend_for(parse_qp(a.qp.as_deref())?)?;
    let sizes = a.sizes.unwrap_or_else(|| vec![10, 15, 20, 25, 30]);
    if sizes.contains(&0) {
        return Err(usage("group sizes must be positive"));
    }
    let frames = read_frames(&a.input)?;
    let cfg = BakeConfig {
        backend,
        base_qp,
        ..BakeConfig::default()
    };
    let rows = group_size_ablation(&frames, &sizes, &cfg)?;
    emit(a.out.as_deref(), &ablation_csv(&rows))
}

fn positions(f: &GaussianFrame) -> Vec<[f32; 3]> {
    f.splats().iter().map(|s| s.position).collect()
}

fn run_fit(a: FitArgs) -> Outcome {
    let prev = read_splats(&a.prev, 0)?;
    let next = read_splats(&a.next, 1)?;
    let (x_prev, x_next) = (positions(&prev), positions(&next));
    let objective: Box<dyn MotionObjective> = match a.objective.as_deref().unwrap_or("auto") {
        "supervised" if x_prev.len() != x_next.len() => {
            return Err(usage("supervised fitting needs equal splat counts"));
        }
        "supervised" => Box::new(SupervisedL2::new(&x_next)),
        "auto" if x_prev.len() == x_next.len() => Box::new(SupervisedL2::new(&x_next)),
        "chamfer" | "auto" => Box::new(Chamfer::new(&x_next)?),
        other => return Err(usage(format!("unknown objective `{other}`"))),
    };
    let defaults = FitOptions::default();
    let opts = FitOptions {
        iterations: a.iterations.unwrap_or(defaults.iterations),
        seed: a.seed.unwrap_or(defaults.seed),
        lr_tables: a.lr_tables.unwrap_or(defaults.lr_tables),
        lr_mlp: a.lr_mlp.unwrap_or(defaults.lr_mlp),
        ..defaults
    };
    let cfg = HashGridConfig {
        log2_table_size: a.log2_table_size.unwrap_or(HashGridConfig::default().log2_table_size),
        ..HashGridConfig::default()
    };
    let report = fit_motion(&x_prev, objective.as_ref(), cfg, &opts)?;
    println!(
        "{} iterations in {:.2} s, loss {:.6e} -> {:.6e}",
        opts.iterations,
        report.elapsed.as_secs_f64(),
        report.losses.first().copied().unwrap_or(report.final_loss),
        report.final_loss
    );
    if let Some(out) = &a.out {
        let warped = report.field.warp(&x_prev);
        let mut splats = prev.splats().to_vec();
        for (s, p) in splats.iter_mut().zip(warped) {
            s.position = p;
        }
        write_splats(out, &GaussianFrame::new(prev.frame_index, splats)?)?;
        println!("warped cloud: {}", out.display());
    }
    if let Some(path) = &a.field {
        report.field.save(path)?;
        println!("field checkpoint: {}", path.display());
    }
    Ok(())
}

fn run_render(a: RenderArgs) -> Outcome {
    let out = a.out.ok_or_else(|| usage("--out is required"))?;
    let frame = read_splats(&a.input, 0)?;
    let camera = camera_for(a.camera.as_deref(), &frame, a.width, a.height)?;
    let opts = RenderOptions {
        sh_degree: a.sh_degree.unwrap_or(frame.sh_degree as u32),
        ..RenderOptions::default()
    };
    let t0 = Instant::now();
    let r = render(&frame, &camera, &opts);
    let elapsed = t0.elapsed();
    r.image.save_png(&out)?;
    println!(
        "{} splats ({} culled) at {}x{} in {:.1} ms -> {}",
        frame.len(),
        r.culled,
        camera.width,
        camera.height,
        elapsed.as_secs_f64() * 1e3,
        out.display()
    );
    Ok(())
}

fn run_serve(a: ServeArgs) -> Outcome {
    let mut cfg = ServeConfig::new(a.root.unwrap_or_else(|| PathBuf::from(".")));
    if let Some(addr) = a.addr {
        cfg.addr = addr;
    }
    if let Some(cors) = a.cors {
        cfg.cors = cors;
    }
    if let Some(s) = a.cache_secs {
        cfg.cache_control_secs = s;
    }
    Ok(serve(&cfg)?)
}

fn run_losses(a: LossArgs) -> Outcome {
    let prev = read_splats(&a.prev, 0)?;
    let next = read_splats(&a.next, 1)?;
    let noise = a.noise_seed.map_or(Noise::Off, Noise::Seeded);
    let l = pair_losses(&prev, &next, noise)?;
    let mut out = json!({
        "splats": next.len(),
        "entropy_bits": l.entropy.bits,
        "temporal": l.temporal.value,
        "attributes": l.attributes.iter().map(|a| a.name()).collect::<Vec<_>>(),
        "mu": l.model.params.iter().map(|p| p.mu).collect::<Vec<_>>(),
        "sigma": l.model.params.iter().map(|p| p.sigma).collect::<Vec<_>>(),
        "grad_mu": l.entropy.grad_mu,
        "grad_sigma": l.entropy.grad_sigma,
    });
    if a.gradients {
        out["grad_residuals"] = json!(l.entropy.grad_residuals);
        out["grad_temporal"] = json!(l.temporal.grad);
    }
    println!("{}", serde_json::to_string_pretty(&out).map_err(|e| Failure::Runtime(e.to_string()))?);
    Ok(())
}
