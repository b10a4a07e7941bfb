//! Live session: the 1 kHz simulation ticker, the command receiver and the
//! state/frame publisher, one client at a time.
//!
//! A connection whose first bytes are an HTTP `GET` is upgraded to a
//! WebSocket and carries framed messages in binary WebSocket messages; any
//! other connection carries them directly on the TCP stream. Commands are
//! queued as they arrive and applied only at tick boundaries.

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use clap::Args;
use fvhand_core::datapath::{DOWNSAMPLED_HEIGHT, DOWNSAMPLED_WIDTH, NUM_CAMERAS};
use fvhand_core::eval::{pixel_accuracy, render_view, GraspScene};
use fvhand_core::hand::{FingerId, HandModel, MotorId, FULL_CLOSE_STEPS};
use fvhand_core::motion::{ButtonAction, ButtonPanel, Simulator, LOOP_RATE_HZ};
use fvhand_core::segnet::{read_weights, SegNet, SegNetShape, Tensor};
use fvhand_core::wire::{
    error_code, pack_mask, split_frame, ButtonCommand, CommandAck, FingerSample, FramePacket, Hello, Message,
    MotorSample, StatePacket, WireError, PROTOCOL_VERSION,
};
use tungstenite::WebSocket;

use crate::config::RunConfig;
use crate::{Classify, CliError};

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// TCP port; 0 picks a free one. Overrides the `port` key.
    #[arg(long)]
    port: Option<u16>,
    /// Simulated seconds per wall-clock second; 0 runs unthrottled.
    /// Overrides the `speed` key.
    #[arg(long)]
    speed: Option<f64>,
    /// Stop after this many simulation ticks; runs forever when omitted.
    #[arg(long)]
    ticks: Option<u64>,
    /// Segmentation weights; the seeded untrained network when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Bind address.
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
}

enum Transport {
    Raw { stream: TcpStream, buf: Vec<u8> },
    Ws { socket: WebSocket<TcpStream>, buf: Vec<u8> },
}

enum Incoming {
    Message(Message),
    Bad(WireError),
}

fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut)
}

impl Transport {
    fn accept(stream: TcpStream) -> anyhow::Result<Self> {
        stream.set_nodelay(true)?;
        let mut head = [0u8; 4];
        stream.set_read_timeout(Some(Duration::from_secs(2)))?;
        let n = match stream.peek(&mut head) {
            Ok(n) => n,
            Err(e) if is_timeout(&e) => 0,
            Err(e) => return Err(e.into()),
        };
        let transport = if n == 4 && &head == b"GET " {
            let socket = tungstenite::accept(stream.try_clone()?).map_err(|e| anyhow::anyhow!("websocket handshake: {e}"))?;
            Transport::Ws { socket, buf: Vec::new() }
        } else {
            Transport::Raw {
                stream: stream.try_clone()?,
                buf: Vec::new(),
            }
        };
        stream.set_read_timeout(Some(Duration::from_millis(1)))?;
        Ok(transport)
    }

    fn send(&mut self, msg: &Message) -> anyhow::Result<()> {
        let bytes = msg.encode();
        match self {
            Transport::Raw { stream, .. } => stream.write_all(&bytes)?,
            Transport::Ws { socket, .. } => {
                socket.send(tungstenite::Message::binary(bytes))?;
            }
        }
        Ok(())
    }

    /// Collect whatever has arrived without waiting longer than the read
    /// timeout. `Ok(false)` means the peer closed the connection.
    fn fill(&mut self) -> anyhow::Result<bool> {
        match self {
            Transport::Raw { stream, buf } => {
                let mut chunk = [0u8; 4096];
                loop {
                    match stream.read(&mut chunk) {
                        Ok(0) => return Ok(false),
                        Ok(n) => buf.extend_from_slice(&chunk[..n]),
                        Err(e) if is_timeout(&e) => return Ok(true),
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            Transport::Ws { socket, buf } => loop {
                match socket.read() {
                    Ok(tungstenite::Message::Binary(data)) => buf.extend_from_slice(&data),
                    Ok(tungstenite::Message::Close(_)) => return Ok(false),
                    Ok(_) => {}
                    Err(tungstenite::Error::Io(e)) if is_timeout(&e) => return Ok(true),
                    Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(false),
                    Err(e) => return Err(e.into()),
                }
            },
        }
    }

    /// Next complete message from the receive buffer.
    fn next(&mut self) -> Option<Result<Incoming, WireError>> {
        let buf = match self {
            Transport::Raw { buf, .. } | Transport::Ws { buf, .. } => buf,
        };
        match split_frame(buf) {
            Err(WireError::Truncated) => None,
            Err(e) => Some(Err(e)),
            Ok((tag, body, used)) => {
                let parsed = Message::decode_body(tag, body);
                buf.drain(..used);
                Some(Ok(match parsed {
                    Ok(m) => Incoming::Message(m),
                    Err(e) => Incoming::Bad(e),
                }))
            }
        }
    }
}

struct Session {
    sim: Simulator,
    panel: ButtonPanel,
    scene: GraspScene,
    net: SegNet<f32>,
    frames_sent: u32,
    state_interval: u64,
    frame_interval: u64,
}

impl Session {
    fn state_packet(&self) -> anyhow::Result<StatePacket> {
        let state = self.sim.hand_state()?;
        let motors = std::array::from_fn(|i| {
            let m = &state.motors[i];
            MotorSample {
                encoder_count: m.encoder_count,
                pwm_duty: m.pwm_duty as i16,
                velocity: m.velocity_steps() as f32,
                drive_state: self.panel.state(MotorId::ALL[i]).code(),
            }
        });
        let fingers = std::array::from_fn(|i| {
            let f = &state.fingers[i];
            FingerSample {
                progress: (f.tendon_displacement / FULL_CLOSE_STEPS as f64).clamp(0.0, 1.0) as f32,
                mcp_angle: f.mcp_angle as f32,
                pip_angle: f.pip_angle as f32,
            }
        });
        Ok(StatePacket {
            tick: self.sim.tick_count(),
            time: self.sim.time(),
            motors,
            fingers,
        })
    }

    fn frame_packet(&mut self) -> anyhow::Result<FramePacket> {
        let state = self.sim.hand_state()?;
        let mut images = Vec::with_capacity(NUM_CAMERAS * usize::from(DOWNSAMPLED_WIDTH) * usize::from(DOWNSAMPLED_HEIGHT) * 3);
        let mut masks = Vec::new();
        let mut accuracy = [f32::NAN; 5];
        let mut ledger = None;
        for finger in FingerId::ALL {
            let i = finger.index();
            let spec = self.scene.view_for_displacement(
                finger,
                state.fingers[i].tendon_displacement,
                u64::from(self.frames_sent),
            )?;
            let view = render_view(&spec, i as u8, self.frames_sent);
            let rgb = view.frame.to_rgb888();
            let x = Tensor::from_rgb8(usize::from(rgb.height), usize::from(rgb.width), &rgb.pixels)?;
            let out = self.net.forward(&x)?;
            accuracy[i] = pixel_accuracy(&out.mask, &view.mask)? as f32;
            images.extend_from_slice(&rgb.pixels);
            masks.extend(pack_mask(&out.mask));
            ledger.get_or_insert(out.ledger);
        }
        let ledger = ledger.expect("five cameras");
        let packet = FramePacket {
            tick: self.sim.tick_count(),
            frame_index: self.frames_sent,
            images,
            masks,
            accuracy,
            total_macs: ledger.total_macs(),
            weight_bytes: ledger.weight_bytes as u32,
            peak_activation_bytes: ledger.peak_activation_bytes() as u32,
        };
        self.frames_sent += 1;
        Ok(packet)
    }

    fn handle(&mut self, incoming: Incoming) -> Option<Message> {
        let error = |code, message: String| Some(Message::Error { code, message });
        match incoming {
            Incoming::Bad(WireError::UnknownType(t)) => error(error_code::UNKNOWN_TYPE, format!("unknown message type 0x{t:02x}")),
            Incoming::Bad(e) => error(error_code::MALFORMED, e.to_string()),
            Incoming::Message(Message::ButtonCommand(ButtonCommand { button, action })) => {
                let action = match action {
                    0 => ButtonAction::Press,
                    1 => ButtonAction::Release,
                    other => return error(error_code::MALFORMED, format!("unknown button action {other}")),
                };
                match self.panel.button_command(button, action) {
                    Ok((motor, state, command)) => {
                        self.sim.set_command(motor, command);
                        Some(Message::CommandAck(CommandAck {
                            button,
                            drive_state: state.code(),
                            tick: self.sim.tick_count(),
                        }))
                    }
                    Err(e) => error(error_code::BAD_BUTTON, e.to_string()),
                }
            }
            Incoming::Message(m) => error(error_code::UNEXPECTED, format!("message type 0x{:02x} is server-to-client", m.tag())),
        }
    }
}

enum End {
    PeerClosed,
    TickLimit,
}

fn run_session(
    session: &mut Session,
    transport: &mut Transport,
    speed: f64,
    tick_limit: Option<u64>,
) -> anyhow::Result<End> {
    transport.send(&Message::Hello(Hello {
        version: PROTOCOL_VERSION,
        width: DOWNSAMPLED_WIDTH,
        height: DOWNSAMPLED_HEIGHT,
        cameras: NUM_CAMERAS as u8,
        state_rate_hz: (u64::from(LOOP_RATE_HZ) / session.state_interval) as u16,
        frame_rate_hz: (u64::from(LOOP_RATE_HZ) / session.frame_interval) as u16,
        speed: speed as f32,
    }))?;
    let start = Instant::now();
    let start_tick = session.sim.tick_count();
    let mut pending = Vec::new();
    loop {
        if !transport.fill()? {
            return Ok(End::PeerClosed);
        }
        while let Some(next) = transport.next() {
            match next {
                Ok(incoming) => pending.push(incoming),
                Err(e) => {
                    transport.send(&Message::Error {
                        code: error_code::MALFORMED,
                        message: format!("{e}; closing the connection"),
                    })?;
                    return Ok(End::PeerClosed);
                }
            }
        }
        let due = if speed > 0.0 {
            start_tick + (start.elapsed().as_secs_f64() * speed * f64::from(LOOP_RATE_HZ)) as u64
        } else {
            session.sim.tick_count() + session.state_interval
        };
        let due = tick_limit.map_or(due, |l| due.min(l));
        while session.sim.tick_count() < due {
            for incoming in pending.drain(..) {
                if let Some(reply) = session.handle(incoming) {
                    transport.send(&reply)?;
                }
            }
            session.sim.tick()?;
            let tick = session.sim.tick_count();
            if tick % session.state_interval == 0 {
                transport.send(&Message::State(session.state_packet()?))?;
            }
            if tick % session.frame_interval == 0 {
                let packet = session.frame_packet()?;
                transport.send(&Message::Frame(packet))?;
            }
        }
        if tick_limit.is_some_and(|l| session.sim.tick_count() >= l) {
            return Ok(End::TickLimit);
        }
    }
}

fn interval(rate_hz: u32, what: &str) -> Result<u64, CliError> {
    if rate_hz == 0 || rate_hz > LOOP_RATE_HZ || LOOP_RATE_HZ % rate_hz != 0 {
        return Err(CliError::Usage(format!("{what} must divide {LOOP_RATE_HZ} Hz, got {rate_hz}")));
    }
    Ok(u64::from(LOOP_RATE_HZ / rate_hz))
}

pub fn serve(cfg: &RunConfig, args: ServeArgs) -> Result<(), CliError> {
    let speed = args.speed.unwrap_or(cfg.speed);
    if !(speed >= 0.0 && speed.is_finite()) {
        return Err(CliError::Usage(format!("speed must be non-negative, got {speed}")));
    }
    let net = match &args.weights {
        Some(path) => read_weights(path).data(format!("reading {}", path.display()))?.dequantize(),
        None => SegNet::init(SegNetShape::TABLE, cfg.seed),
    };
    let state_interval = interval(cfg.state_rate_hz, "state_rate_hz")?;
    let frame_interval = interval(cfg.frame_rate_hz, "frame_rate_hz")?;
    let new_session = || -> Result<Session, CliError> {
        Ok(Session {
            sim: Simulator::new(cfg.sim(), HandModel::default()).map_err(|e| CliError::Usage(e.to_string()))?,
            panel: ButtonPanel::new(cfg.drive_velocity),
            scene: GraspScene::new(cfg.seed, cfg.scene_class, 0, cfg.gain_distortion, cfg.noise_sigma),
            net: net.clone(),
            frames_sent: 0,
            state_interval,
            frame_interval,
        })
    };
    new_session()?;
    let port = args.port.unwrap_or(cfg.port);
    let listener = TcpListener::bind((args.host.as_str(), port)).runtime(format!("binding {}:{port}", args.host))?;
    let addr = listener.local_addr().runtime("reading the bound address")?;
    println!("listening on {addr}");
    std::io::stdout().flush().runtime("writing to stdout")?;
    log::info!("serving at speed {speed}");
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
        log::info!("client {peer} connected");
        let mut transport = match Transport::accept(stream) {
            Ok(t) => t,
            Err(e) => {
                log::warn!("client {peer}: {e:#}");
                continue;
            }
        };
        let mut session = new_session()?;
        match run_session(&mut session, &mut transport, speed, args.ticks) {
            Ok(End::TickLimit) => {
                log::info!("tick limit reached");
                return Ok(());
            }
            Ok(End::PeerClosed) => log::info!("client {peer} disconnected"),
            Err(e) => log::warn!("client {peer}: {e:#}"),
        }
    }
    Ok(())
}
