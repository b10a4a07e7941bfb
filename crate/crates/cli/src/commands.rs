use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use fvhand_core::datapath::{
    dcmi_encode, decode_stream, inject_fault, read_ppm, write_ppm, DecodeEvent, DecodeStats, FaultPolicy, Frame, Mux,
    MuxStream, NUM_CAMERAS,
};
use fvhand_core::eval::{
    generate_dataset, load_dataset, render_qcif, render_view, run_experiment, sample_of, save_dataset, GraspScene,
    ObjectClass,
};
use fvhand_core::hand::{FingerId, HandModel, MotorId};
use fvhand_core::motion::{
    calibrate as calibrate_hand, ButtonAction, ButtonPanel, MotorCommand, Simulator, CLOSING_TIME_TARGETS,
    TICK_SECONDS,
};
use fvhand_core::segnet::{read_weights, train as train_net, write_weights, QuantizedNet, SegNet, SegNetShape, Tensor};

use crate::config::RunConfig;
use crate::{Classify, CliError};

fn parse_motor(s: &str) -> Result<MotorId, String> {
    MotorId::ALL
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| format!("unknown motor {s:?}, expected thumb, index or coupled"))
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).data(format!("creating {}", dir.display()))?;
    }
    Ok(std::io::BufWriter::new(
        std::fs::File::create(path).data(format!("creating {}", path.display()))?,
    ))
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Trace CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Position-drive a motor (thumb, index or coupled) to full close from
    /// t = 0; repeatable.
    #[arg(long, value_parser = parse_motor)]
    close: Vec<MotorId>,
    /// Button script, one event per line: `<time s> <button 1-3> press|release`.
    #[arg(long)]
    script: Option<PathBuf>,
    /// Simulated duration in seconds.
    #[arg(long, default_value_t = 2.0)]
    duration: f64,
}

/// Button events keyed by the tick at whose boundary they apply.
fn parse_script(text: &str) -> Result<Vec<(u64, u8, ButtonAction)>, String> {
    let mut events = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let bad = || format!("script line {}: expected `<time> <button> press|release`, got {line:?}", i + 1);
        let [t, b, a] = fields[..] else { return Err(bad()) };
        let t: f64 = t.parse().map_err(|_| bad())?;
        let b: u8 = b.parse().map_err(|_| bad())?;
        let action = match a {
            "press" => ButtonAction::Press,
            "release" => ButtonAction::Release,
            _ => return Err(bad()),
        };
        if !(t >= 0.0 && t.is_finite()) {
            return Err(bad());
        }
        events.push(((t / TICK_SECONDS).ceil() as u64, b, action));
    }
    events.sort_by_key(|e| e.0);
    Ok(events)
}

pub fn simulate(cfg: &RunConfig, args: SimulateArgs) -> Result<(), CliError> {
    if !(args.duration >= 0.0 && args.duration.is_finite()) {
        return Err(CliError::Usage(format!("duration must be non-negative, got {}", args.duration)));
    }
    let events = match &args.script {
        Some(path) => {
            let text = std::fs::read_to_string(path).data(format!("reading {}", path.display()))?;
            parse_script(&text).map_err(|e| CliError::Data(anyhow::anyhow!(e)))?
        }
        None => Vec::new(),
    };
    let mut sim = Simulator::new(cfg.sim(), HandModel::default()).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut panel = ButtonPanel::new(cfg.drive_velocity);
    for &m in &args.close {
        sim.set_command(m, MotorCommand::Position(m.full_close_steps()));
    }

    let mut out = String::from("tick,time");
    for m in MotorId::ALL {
        let n = m.name();
        let _ = write!(out, ",{n}_count,{n}_duty,{n}_velocity");
    }
    for f in FingerId::ALL {
        let n = f.name();
        let _ = write!(out, ",{n}_mcp,{n}_pip");
    }
    out.push('\n');
    let ticks = (args.duration / TICK_SECONDS).round() as u64;
    let mut next = 0;
    let row = |sim: &Simulator, out: &mut String| -> Result<(), CliError> {
        let state = sim.hand_state().runtime("evaluating hand state")?;
        let _ = write!(out, "{},{:.3}", sim.tick_count(), sim.time());
        for m in &state.motors {
            let _ = write!(out, ",{},{},{:.3}", m.encoder_count, m.pwm_duty, m.velocity_steps());
        }
        for f in &state.fingers {
            let _ = write!(out, ",{:.6},{:.6}", f.mcp_angle, f.pip_angle);
        }
        out.push('\n');
        Ok(())
    };
    row(&sim, &mut out)?;
    while sim.tick_count() < ticks {
        while next < events.len() && events[next].0 <= sim.tick_count() {
            let (_, button, action) = events[next];
            let (motor, _, command) = panel
                .button_command(button, action)
                .map_err(|e| CliError::Data(anyhow::anyhow!("script: {e}")))?;
            sim.set_command(motor, command);
            next += 1;
        }
        sim.tick().runtime("simulation step")?;
        row(&sim, &mut out)?;
    }
    let counts: Vec<String> = sim.motors().iter().map(|m| m.encoder_count.to_string()).collect();
    log::info!("simulated {} ticks; final encoder counts {}", sim.tick_count(), counts.join(" "));
    match &args.out {
        Some(path) => create(path)?
            .write_all(out.as_bytes())
            .data(format!("writing {}", path.display())),
        None => std::io::stdout().write_all(out.as_bytes()).runtime("writing trace"),
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Write the calibrated configuration and closing times as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

pub fn calibrate(cfg: &RunConfig, args: CalibrateArgs) -> Result<(), CliError> {
    let report = calibrate_hand(&cfg.sim(), &HandModel::default(), CLOSING_TIME_TARGETS).runtime("calibration")?;
    println!("motor    target s  closing s  max velocity steps/s");
    for m in MotorId::ALL {
        let i = m.index();
        println!(
            "{:<8} {:>8.3}  {:>9.3}  {:>20.3}",
            m.name(),
            CLOSING_TIME_TARGETS[i],
            report.closing_times[i],
            report.config.controllers[i].max_velocity
        );
    }
    if let Some(path) = &args.out {
        let json = serde_json::to_string_pretty(&report).runtime("serializing report")?;
        create(path)?
            .write_all(json.as_bytes())
            .data(format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct DatasetGenArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

pub fn dataset_gen(cfg: &RunConfig, args: DatasetGenArgs) -> Result<(), CliError> {
    let ds = generate_dataset(&cfg.dataset()).map_err(|e| CliError::Usage(e.to_string()))?;
    save_dataset(&ds, &args.out).data(format!("writing {}", args.out.display()))?;
    println!(
        "runs={} frames={} sub_images={} dir={}",
        ds.runs.len(),
        ds.frame_count(),
        ds.sub_image_count(),
        args.out.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `dataset-gen`.
    #[arg(long)]
    data: PathBuf,
    /// Weights file (int8).
    #[arg(long)]
    out: PathBuf,
    /// Train on one class only.
    #[arg(long)]
    class: Option<ObjectClass>,
    /// Per-epoch loss CSV.
    #[arg(long)]
    losses: Option<PathBuf>,
}

pub fn train(cfg: &RunConfig, args: TrainArgs) -> Result<(), CliError> {
    let ds = load_dataset(&args.data).data(format!("loading {}", args.data.display()))?;
    let samples = ds
        .runs
        .iter()
        .filter(|r| args.class.map_or(true, |c| r.class == c))
        .flat_map(|r| &r.frames)
        .flat_map(|f| &f.views)
        .map(sample_of)
        .collect::<Result<Vec<_>, _>>()
        .data("preparing samples")?;
    if samples.is_empty() {
        return Err(CliError::Data(anyhow::anyhow!("no training samples selected")));
    }
    let mut net = SegNet::<f32>::init(SegNetShape::TABLE, cfg.seed);
    let losses = train_net(&mut net, &samples, &cfg.train()).runtime("training")?;
    let q = QuantizedNet::quantize(&net).runtime("quantizing")?;
    write_weights(&q, &args.out).data(format!("writing {}", args.out.display()))?;
    if let Some(path) = &args.losses {
        let mut s = String::from("epoch,loss\n");
        for (i, l) in losses.iter().enumerate() {
            let _ = writeln!(s, "{},{l}", i + 1);
        }
        create(path)?
            .write_all(s.as_bytes())
            .data(format!("writing {}", path.display()))?;
    }
    println!(
        "samples={} epochs={} final_loss={:.6} weight_bytes={}",
        samples.len(),
        losses.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        q.payload_bytes()
    );
    Ok(())
}

fn load_net(cfg: &RunConfig, weights: Option<&Path>) -> Result<SegNet<f32>, CliError> {
    match weights {
        Some(path) => Ok(read_weights(path)
            .data(format!("reading {}", path.display()))?
            .dequantize()),
        None => {
            log::warn!("no weights given; using the untrained network initialised from seed {}", cfg.seed);
            Ok(SegNet::init(SegNetShape::TABLE, cfg.seed))
        }
    }
}

fn ascii_mask(mask: &[u8], width: usize) -> String {
    mask.chunks(width)
        .map(|row| row.iter().map(|&v| if v == 1 { '#' } else { '.' }).chain(['\n']).collect::<String>())
        .collect()
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Weights file; the seeded untrained network when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// P6 input image, sides multiples of 4; a rendered index-finger view of
    /// `scene_class` when omitted.
    #[arg(long)]
    image: Option<PathBuf>,
    /// Grasp progress of the rendered view.
    #[arg(long, default_value_t = 0.5)]
    progress: f64,
    /// Print the per-layer resource ledger.
    #[arg(long)]
    ledger: bool,
    /// Write the predicted mask as P5.
    #[arg(long)]
    mask_out: Option<PathBuf>,
}

pub fn infer(cfg: &RunConfig, args: InferArgs) -> Result<(), CliError> {
    let net = load_net(cfg, args.weights.as_deref())?;
    let frame = match &args.image {
        Some(path) => read_ppm(path, 0, 0).data(format!("reading {}", path.display()))?,
        None => {
            let scene = GraspScene::new(cfg.seed, cfg.scene_class, 0, cfg.gain_distortion, cfg.noise_sigma);
            let spec = scene.view_at(FingerId::Index, args.progress, 0).runtime("building scene")?;
            render_view(&spec, FingerId::Index.index() as u8, 0).frame
        }
    };
    let rgb = frame.to_rgb888();
    let (w, h) = (usize::from(rgb.width), usize::from(rgb.height));
    let x = Tensor::from_rgb8(h, w, &rgb.pixels).data("converting image")?;
    let inference = net.forward(&x).data("running the network")?;
    print!("{}", ascii_mask(&inference.mask, w));
    let fg = inference.mask.iter().filter(|&&v| v == 1).count();
    println!("foreground pixels {fg} of {}", w * h);
    if args.ledger {
        print!("{}", inference.ledger.render());
    }
    if let Some(path) = &args.mask_out {
        let bytes: Vec<u8> = inference.mask.iter().map(|&v| v * 255).collect();
        let mut f = create(path)?;
        write!(f, "P5\n{w} {h}\n255\n").data(format!("writing {}", path.display()))?;
        f.write_all(&bytes).data(format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory written by `dataset-gen`.
    #[arg(long)]
    data: PathBuf,
    /// Report directory (report.json and CSV tables).
    #[arg(long)]
    out: PathBuf,
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.4}"))
}

pub fn eval(cfg: &RunConfig, args: EvalArgs) -> Result<(), CliError> {
    let ds = load_dataset(&args.data).data(format!("loading {}", args.data.display()))?;
    let report = run_experiment(&ds, &cfg.experiment()).data("running the experiment")?;
    report.write(&args.out).data(format!("writing {}", args.out.display()))?;
    println!("class       fold  test_run  accuracy  iou     quantized");
    for f in &report.folds {
        println!(
            "{:<11} {:>4}  {:>8}  {:.4}    {:.4}  {:.4}",
            f.class.name(),
            f.fold,
            f.test_runs.iter().map(usize::to_string).collect::<Vec<_>>().join(";"),
            f.accuracy,
            f.iou,
            f.quantized_accuracy
        );
    }
    for (i, q) in report.quartiles.iter().enumerate() {
        println!(
            "quartile {} mean {} std {} frames {}",
            i + 1,
            opt(q.map(|q| q.mean)),
            opt(q.map(|q| q.std)),
            q.map_or(0, |q| q.count)
        );
    }
    println!("mean accuracy {:.4}", report.mean_accuracy);
    Ok(())
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// Packet file.
    #[arg(long)]
    out: PathBuf,
    /// P6 image to encode; a rendered QCIF RGB565 camera frame when omitted.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    camera: u8,
    #[arg(long, default_value_t = 0)]
    counter: u32,
}

pub fn encode(cfg: &RunConfig, args: EncodeArgs) -> Result<(), CliError> {
    let finger = FingerId::ALL
        .get(usize::from(args.camera))
        .copied()
        .ok_or_else(|| CliError::Usage(format!("camera must be 0..{NUM_CAMERAS}, got {}", args.camera)))?;
    let frame = match &args.image {
        Some(path) => read_ppm(path, args.camera, args.counter).data(format!("reading {}", path.display()))?,
        None => {
            let scene = GraspScene::new(cfg.seed, cfg.scene_class, 0, cfg.gain_distortion, cfg.noise_sigma);
            let spec = scene.view_at(finger, 0.5, u64::from(args.counter)).runtime("building scene")?;
            render_qcif(&spec, args.camera, args.counter)
        }
    };
    let packet = dcmi_encode(&frame).data("encoding")?;
    create(&args.out)?
        .write_all(&packet)
        .data(format!("writing {}", args.out.display()))?;
    println!(
        "camera={} counter={} {}x{} {:?} packet_bytes={}",
        frame.camera_id,
        frame.frame_counter,
        frame.width,
        frame.height,
        frame.format,
        packet.len()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct MuxArgs {
    /// Stream file.
    #[arg(long)]
    out: PathBuf,
    /// Capture cycles; every cycle each camera delivers one QCIF frame.
    #[arg(long, default_value_t = 100)]
    cycles: u32,
    /// Flip every bit with this probability.
    #[arg(long, group = "fault")]
    ber: Option<f64>,
    /// Cut the packet at this stream position.
    #[arg(long, group = "fault")]
    partial: Option<usize>,
    /// Cable wear-out: `FIRST,DEAD[,P]` cycles and the in-between
    /// corruption probability (default 0.5).
    #[arg(long, group = "fault")]
    dead: Option<String>,
    /// Write the multiplexer statistics as JSON.
    #[arg(long)]
    stats: Option<PathBuf>,
}

fn parse_dead(s: &str) -> Result<FaultPolicy, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || format!("--dead expects FIRST,DEAD[,P], got {s:?}");
    let (first, dead, p) = match parts[..] {
        [a, b] => (a, b, "0.5"),
        [a, b, c] => (a, b, c),
        _ => return Err(bad()),
    };
    Ok(FaultPolicy::DeadAfterCycles {
        first_corrupt: first.parse().map_err(|_| bad())?,
        dead: dead.parse().map_err(|_| bad())?,
        corrupt_probability: p.parse().map_err(|_| bad())?,
    })
}

/// Distinct rendered grasp phases per camera; cycles repeat them.
const MUX_PHASES: usize = 20;

pub fn mux(cfg: &RunConfig, args: MuxArgs) -> Result<(), CliError> {
    let fault = match (args.ber, args.partial, &args.dead) {
        (Some(rate), _, _) => Some(FaultPolicy::BitErrorRate { rate }),
        (_, Some(index), _) => Some(FaultPolicy::PartialFrame { index }),
        (_, _, Some(s)) => Some(parse_dead(s).map_err(CliError::Usage)?),
        _ => None,
    };
    let scene = GraspScene::new(cfg.seed, cfg.scene_class, 0, cfg.gain_distortion, cfg.noise_sigma);
    let mut phases: Vec<Vec<Frame>> = Vec::with_capacity(NUM_CAMERAS);
    for finger in FingerId::ALL {
        let mut frames = Vec::with_capacity(MUX_PHASES);
        for k in 0..MUX_PHASES {
            let spec = scene
                .view_at(finger, k as f64 / (MUX_PHASES - 1) as f64, k as u64)
                .runtime("building scene")?;
            frames.push(render_qcif(&spec, finger.index() as u8, 0));
        }
        phases.push(frames);
    }
    let mut mux = Mux::new(cfg.mux()).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut bytes = Vec::new();
    for cycle in 0..args.cycles {
        let arrivals = phases
            .iter()
            .map(|p| Frame {
                frame_counter: cycle,
                ..p[cycle as usize % MUX_PHASES].clone()
            })
            .collect();
        bytes.extend(mux.step(arrivals).runtime("multiplexing")?);
    }
    while !mux.is_idle() {
        bytes.extend(mux.step(Vec::new()).runtime("multiplexing")?);
    }
    if let Some(policy) = fault {
        bytes = inject_fault(&bytes, policy, cfg.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    MuxStream { bytes }
        .save(&args.out)
        .data(format!("writing {}", args.out.display()))?;
    let stats = mux.stats();
    println!(
        "windows={} frames_in={} frames_emitted={} drops={} payload_bit_rate={} max_occupancy={}",
        stats.windows,
        stats.frames_in,
        stats.frames_emitted,
        stats.drop_count,
        stats.payload_bit_rate(),
        stats.max_occupancy
    );
    if let Some(path) = &args.stats {
        let json = serde_json::to_string_pretty(stats).runtime("serializing statistics")?;
        create(path)?
            .write_all(json.as_bytes())
            .data(format!("writing {}", path.display()))?;
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// DCMI byte stream (one packet or a multiplexed stream).
    #[arg(long)]
    input: PathBuf,
    /// Write every decoded frame as P6 into this directory.
    #[arg(long)]
    frames_out: Option<PathBuf>,
}

pub fn replay(_cfg: &RunConfig, args: ReplayArgs) -> Result<(), CliError> {
    let stream = MuxStream::load(&args.input).data(format!("reading {}", args.input.display()))?;
    let events = decode_stream(&stream.bytes);
    if let Some(dir) = &args.frames_out {
        std::fs::create_dir_all(dir).data(format!("creating {}", dir.display()))?;
    }
    let mut out = String::new();
    for e in &events {
        match e {
            DecodeEvent::Frame(f) => {
                let _ = writeln!(
                    out,
                    "frame camera={} counter={} {}x{} {:?}",
                    f.camera_id, f.frame_counter, f.width, f.height, f.format
                );
                if let Some(dir) = &args.frames_out {
                    let path = dir.join(format!("c{}_f{:06}.ppm", f.camera_id, f.frame_counter));
                    write_ppm(f, &path).data(format!("writing {}", path.display()))?;
                }
            }
            DecodeEvent::SyncLoss(l) => {
                let tag = l
                    .frame
                    .map_or(String::new(), |t| format!(" camera={} counter={}", t.camera_id, t.frame_counter));
                let _ = writeln!(out, "sync_loss offset={} kind={:?}{tag}", l.offset, l.kind);
            }
        }
    }
    let stats = DecodeStats::from_events(&events);
    let _ = writeln!(out, "frames={} sync_losses={}", stats.frames, stats.sync_losses);
    std::io::stdout().write_all(out.as_bytes()).runtime("writing report")
}
