use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{dcmi_encode, DatapathError, Frame, PixelFormat, NUM_CAMERAS};
use crate::exec::Exec;

/// 330 KiB of block RAM.
pub const DEFAULT_BUFFER_CAPACITY: usize = 330 * 1024;
/// Payload cap of the serialized channel.
pub const LINK_RATE_BITS_PER_S: f64 = 100e6;
pub const FRAME_RATE_HZ: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DropPolicy {
    /// Reject an arriving frame that does not fit.
    #[default]
    DropNewest,
    /// Evict queued frames, oldest first, until the arrival fits.
    DropOldest,
}

/// Byte accounting of the frame buffer. `occupancy <= capacity` always.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferBudget {
    pub capacity: usize,
    pub occupancy: usize,
    pub drop_count: u64,
}

impl BufferBudget {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            occupancy: 0,
            drop_count: 0,
        }
    }

    pub fn free(&self) -> usize {
        self.capacity - self.occupancy
    }
}

impl Default for BufferBudget {
    fn default() -> Self {
        Self::new(DEFAULT_BUFFER_CAPACITY)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuxConfig {
    pub capacity: usize,
    pub link_rate_bits_per_s: f64,
    /// One arrival tick: every camera delivers at most one frame per window.
    pub window_seconds: f64,
    pub policy: DropPolicy,
    pub exec: Exec,
}

impl Default for MuxConfig {
    fn default() -> Self {
        Self {
            capacity: DEFAULT_BUFFER_CAPACITY,
            link_rate_bits_per_s: LINK_RATE_BITS_PER_S,
            window_seconds: 1.0 / FRAME_RATE_HZ,
            policy: DropPolicy::DropNewest,
            exec: Exec::default(),
        }
    }
}

impl MuxConfig {
    /// Payload bytes the channel may carry in one window.
    pub fn window_payload_budget(&self) -> usize {
        (self.link_rate_bits_per_s * self.window_seconds / 8.0).floor() as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MuxStats {
    pub windows: u64,
    pub frames_in: u64,
    pub frames_emitted: u64,
    pub drop_count: u64,
    pub drops_per_camera: [u64; NUM_CAMERAS],
    /// Unstuffed pixel bytes of emitted frames.
    pub payload_bytes: u64,
    /// Bytes on the wire, including markers, headers, stuffing and CRCs.
    pub wire_bytes: u64,
    pub duration_seconds: f64,
    pub max_occupancy: usize,
    pub max_window_payload: usize,
}

impl MuxStats {
    /// Emitted payload bits over simulated time.
    pub fn payload_bit_rate(&self) -> f64 {
        if self.duration_seconds > 0.0 {
            self.payload_bytes as f64 * 8.0 / self.duration_seconds
        } else {
            0.0
        }
    }
}

/// The serialized byte stream: concatenated DCMI packets.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MuxStream {
    pub bytes: Vec<u8>,
}

impl MuxStream {
    pub fn save(&self, path: &Path) -> Result<(), DatapathError> {
        Ok(std::fs::write(path, &self.bytes)?)
    }

    pub fn load(path: &Path) -> Result<Self, DatapathError> {
        Ok(Self {
            bytes: std::fs::read(path)?,
        })
    }
}

/// Frame-granular multiplexer: arrivals enter a bounded buffer, the
/// serializer drains whole frames FIFO up to the per-window payload budget.
#[derive(Debug, Clone)]
pub struct Mux {
    config: MuxConfig,
    budget: BufferBudget,
    queue: VecDeque<Frame>,
    last_counter: [Option<u32>; NUM_CAMERAS],
    stats: MuxStats,
}

impl Mux {
    pub fn new(config: MuxConfig) -> Result<Self, DatapathError> {
        if !(config.link_rate_bits_per_s > 0.0 && config.window_seconds > 0.0) {
            return Err(DatapathError::InvalidParameter(
                "link rate and window must be positive".into(),
            ));
        }
        if config.window_payload_budget() < qcif_payload() {
            return Err(DatapathError::InvalidParameter(
                "window budget cannot carry a single frame".into(),
            ));
        }
        Ok(Self {
            budget: BufferBudget::new(config.capacity),
            config,
            queue: VecDeque::new(),
            last_counter: [None; NUM_CAMERAS],
            stats: MuxStats::default(),
        })
    }

    pub fn budget(&self) -> BufferBudget {
        self.budget
    }

    pub fn stats(&self) -> &MuxStats {
        &self.stats
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    fn check(&mut self, frame: &Frame) -> Result<(), DatapathError> {
        frame.validate()?;
        if !frame.is_qcif() || frame.format != PixelFormat::Rgb565 {
            return Err(DatapathError::NotQcif {
                camera: frame.camera_id,
                width: frame.width,
                height: frame.height,
                format: frame.format,
            });
        }
        let slot = &mut self.last_counter[frame.camera_id as usize];
        if let Some(previous) = *slot {
            if frame.frame_counter <= previous {
                return Err(DatapathError::CounterOrder {
                    camera: frame.camera_id,
                    previous,
                    counter: frame.frame_counter,
                });
            }
        }
        *slot = Some(frame.frame_counter);
        Ok(())
    }

    fn drop_frame(&mut self, camera: u8) {
        self.budget.drop_count += 1;
        self.stats.drop_count += 1;
        self.stats.drops_per_camera[camera as usize] += 1;
    }

    fn admit(&mut self, frame: Frame) {
        let size = frame.payload_len();
        self.stats.frames_in += 1;
        if size > self.budget.capacity {
            self.drop_frame(frame.camera_id);
            return;
        }
        match self.config.policy {
            DropPolicy::DropNewest => {
                if size > self.budget.free() {
                    self.drop_frame(frame.camera_id);
                    return;
                }
            }
            DropPolicy::DropOldest => {
                while size > self.budget.free() {
                    let old = self.queue.pop_front().expect("occupied buffer has frames");
                    self.budget.occupancy -= old.payload_len();
                    self.drop_frame(old.camera_id);
                }
            }
        }
        self.budget.occupancy += size;
        self.stats.max_occupancy = self.stats.max_occupancy.max(self.budget.occupancy);
        self.queue.push_back(frame);
    }

    /// Run one window: admit this tick's arrivals round-robin (starting at
    /// camera `window % 5`), then serialize what the link can carry.
    pub fn step(&mut self, arrivals: Vec<Frame>) -> Result<Vec<u8>, DatapathError> {
        for f in &arrivals {
            self.check(f)?;
        }
        let first = (self.stats.windows % NUM_CAMERAS as u64) as usize;
        let mut ordered = arrivals;
        ordered.sort_by_key(|f| (f.camera_id as usize + NUM_CAMERAS - first) % NUM_CAMERAS);
        for f in ordered {
            self.admit(f);
        }

        let limit = self.config.window_payload_budget();
        let mut sent = Vec::new();
        let mut payload = 0;
        while let Some(head) = self.queue.front() {
            if payload + head.payload_len() > limit {
                break;
            }
            payload += head.payload_len();
            self.budget.occupancy -= head.payload_len();
            sent.push(self.queue.pop_front().expect("front exists"));
        }
        let packets = self.config.exec.map(&sent, dcmi_encode);
        let mut out = Vec::new();
        for p in packets {
            out.extend_from_slice(&p?);
        }

        self.stats.windows += 1;
        self.stats.duration_seconds = self.stats.windows as f64 * self.config.window_seconds;
        self.stats.frames_emitted += sent.len() as u64;
        self.stats.payload_bytes += payload as u64;
        self.stats.wire_bytes += out.len() as u64;
        self.stats.max_window_payload = self.stats.max_window_payload.max(payload);
        Ok(out)
    }
}

fn qcif_payload() -> usize {
    super::QCIF_WIDTH as usize * super::QCIF_HEIGHT as usize * PixelFormat::Rgb565.bytes_per_pixel()
}

/// Serialize an arrival schedule (one entry per 50 ms window), then keep
/// draining until the buffer is empty.
pub fn mux_serialize(schedule: Vec<Vec<Frame>>, config: MuxConfig) -> Result<(MuxStream, MuxStats), DatapathError> {
    let mut mux = Mux::new(config)?;
    let mut stream = MuxStream::default();
    for arrivals in schedule {
        stream.bytes.extend(mux.step(arrivals)?);
    }
    while !mux.is_idle() {
        stream.bytes.extend(mux.step(Vec::new())?);
    }
    Ok((stream, mux.stats().clone()))
}
