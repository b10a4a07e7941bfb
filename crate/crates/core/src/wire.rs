//! Binary wire protocol of the live teleoperation session. The byte layout
//! is documented in `PROTOCOL.md` at the repository root.
//!
//! Every message is `u32 length | u8 type | body`, little-endian, where
//! `length` counts the type byte and the body.

use crate::datapath::{DOWNSAMPLED_HEIGHT, DOWNSAMPLED_WIDTH, NUM_CAMERAS};

pub const PROTOCOL_VERSION: u16 = 1;
/// Upper bound on `length`; larger prefixes are rejected before allocating.
pub const MAX_MESSAGE_LEN: u32 = 1 << 20;
/// Bytes of one 88x72 RGB888 tile.
pub const TILE_BYTES: usize = DOWNSAMPLED_WIDTH as usize * DOWNSAMPLED_HEIGHT as usize * 3;
/// Bytes of one 88x72 mask packed eight pixels per byte.
pub const MASK_BYTES: usize = DOWNSAMPLED_WIDTH as usize * DOWNSAMPLED_HEIGHT as usize / 8;
/// Image payload of a frame packet: 5 * 88 * 72 * 3.
pub const FRAME_IMAGE_BYTES: usize = NUM_CAMERAS * TILE_BYTES;
/// Mask payload of a frame packet: 5 * 6336 / 8.
pub const FRAME_MASK_BYTES: usize = NUM_CAMERAS * MASK_BYTES;

pub mod tag {
    pub const HELLO: u8 = 0x01;
    pub const BUTTON_COMMAND: u8 = 0x02;
    pub const COMMAND_ACK: u8 = 0x03;
    pub const ERROR: u8 = 0x04;
    pub const STATE: u8 = 0x10;
    pub const FRAME: u8 = 0x11;
}

/// Error codes carried by [`Message::Error`].
pub mod error_code {
    pub const MALFORMED: u16 = 1;
    pub const UNKNOWN_TYPE: u16 = 2;
    pub const BAD_BUTTON: u16 = 3;
    pub const UNEXPECTED: u16 = 4;
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum WireError {
    #[error("message truncated")]
    Truncated,
    #[error("message length {0} exceeds the limit")]
    TooLarge(u32),
    #[error("unknown message type 0x{0:02x}")]
    UnknownType(u8),
    #[error("malformed message: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hello {
    pub version: u16,
    pub width: u16,
    pub height: u16,
    pub cameras: u8,
    pub state_rate_hz: u16,
    pub frame_rate_hz: u16,
    /// Simulated seconds per wall-clock second.
    pub speed: f32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ButtonCommand {
    /// 1-based button, 1..=3.
    pub button: u8,
    /// 0 press, 1 release.
    pub action: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommandAck {
    pub button: u8,
    /// Drive state code after the command: 0 idle, 1 closing, 2 stopped,
    /// 3 opening.
    pub drive_state: u8,
    /// Tick at whose boundary the command took effect.
    pub tick: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotorSample {
    pub encoder_count: i64,
    pub pwm_duty: i16,
    /// Steps per second.
    pub velocity: f32,
    pub drive_state: u8,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FingerSample {
    /// Tendon displacement over the full-close travel, 0..=1.
    pub progress: f32,
    pub mcp_angle: f32,
    pub pip_angle: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StatePacket {
    pub tick: u64,
    pub time: f64,
    pub motors: [MotorSample; 3],
    pub fingers: [FingerSample; 5],
}

#[derive(Debug, Clone, PartialEq)]
pub struct FramePacket {
    pub tick: u64,
    pub frame_index: u32,
    /// Five 88x72 RGB888 tiles, camera order.
    pub images: Vec<u8>,
    /// Five predicted masks, packed MSB-first, row-major.
    pub masks: Vec<u8>,
    /// Per-tile pixel accuracy against ground truth, NaN when unknown.
    pub accuracy: [f32; 5],
    pub total_macs: u64,
    pub weight_bytes: u32,
    pub peak_activation_bytes: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello(Hello),
    ButtonCommand(ButtonCommand),
    CommandAck(CommandAck),
    Error { code: u16, message: String },
    State(StatePacket),
    Frame(FramePacket),
}

/// Pack a 0/1 mask eight pixels per byte, first pixel in the high bit.
pub fn pack_mask(mask: &[u8]) -> Vec<u8> {
    mask.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &v)| acc | (u8::from(v != 0) << (7 - i))))
        .collect()
}

pub fn unpack_mask(packed: &[u8], pixels: usize) -> Vec<u8> {
    (0..pixels).map(|i| (packed[i / 8] >> (7 - i % 8)) & 1).collect()
}

struct Reader<'a> {
    bytes: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.bytes.len() < n {
            return Err(WireError::Malformed("body shorter than its type requires".into()));
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn i16(&mut self) -> Result<i16, WireError> {
        Ok(i16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.array()?))
    }
    fn i64(&mut self) -> Result<i64, WireError> {
        Ok(i64::from_le_bytes(self.array()?))
    }
    fn f32(&mut self) -> Result<f32, WireError> {
        Ok(f32::from_le_bytes(self.array()?))
    }
    fn f64(&mut self) -> Result<f64, WireError> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn finish(self) -> Result<(), WireError> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(WireError::Malformed(format!("{} trailing bytes", self.bytes.len())))
        }
    }
}

impl Message {
    pub fn tag(&self) -> u8 {
        match self {
            Message::Hello(_) => tag::HELLO,
            Message::ButtonCommand(_) => tag::BUTTON_COMMAND,
            Message::CommandAck(_) => tag::COMMAND_ACK,
            Message::Error { .. } => tag::ERROR,
            Message::State(_) => tag::STATE,
            Message::Frame(_) => tag::FRAME,
        }
    }

    /// Body without the length prefix and type byte.
    pub fn body(&self) -> Vec<u8> {
        let mut b = Vec::new();
        match self {
            Message::Hello(h) => {
                b.extend_from_slice(&h.version.to_le_bytes());
                b.extend_from_slice(&h.width.to_le_bytes());
                b.extend_from_slice(&h.height.to_le_bytes());
                b.push(h.cameras);
                b.extend_from_slice(&h.state_rate_hz.to_le_bytes());
                b.extend_from_slice(&h.frame_rate_hz.to_le_bytes());
                b.extend_from_slice(&h.speed.to_le_bytes());
            }
            Message::ButtonCommand(c) => b.extend_from_slice(&[c.button, c.action]),
            Message::CommandAck(a) => {
                b.extend_from_slice(&[a.button, a.drive_state]);
                b.extend_from_slice(&a.tick.to_le_bytes());
            }
            Message::Error { code, message } => {
                b.extend_from_slice(&code.to_le_bytes());
                let text = message.as_bytes();
                let n = text.len().min(u16::MAX as usize);
                b.extend_from_slice(&(n as u16).to_le_bytes());
                b.extend_from_slice(&text[..n]);
            }
            Message::State(s) => {
                b.extend_from_slice(&s.tick.to_le_bytes());
                b.extend_from_slice(&s.time.to_le_bytes());
                for m in &s.motors {
                    b.extend_from_slice(&m.encoder_count.to_le_bytes());
                    b.extend_from_slice(&m.pwm_duty.to_le_bytes());
                    b.extend_from_slice(&m.velocity.to_le_bytes());
                    b.push(m.drive_state);
                }
                for f in &s.fingers {
                    b.extend_from_slice(&f.progress.to_le_bytes());
                    b.extend_from_slice(&f.mcp_angle.to_le_bytes());
                    b.extend_from_slice(&f.pip_angle.to_le_bytes());
                }
            }
            Message::Frame(f) => {
                b.extend_from_slice(&f.tick.to_le_bytes());
                b.extend_from_slice(&f.frame_index.to_le_bytes());
                b.push(NUM_CAMERAS as u8);
                b.extend_from_slice(&DOWNSAMPLED_WIDTH.to_le_bytes());
                b.extend_from_slice(&DOWNSAMPLED_HEIGHT.to_le_bytes());
                b.extend_from_slice(&f.images);
                b.extend_from_slice(&f.masks);
                for a in &f.accuracy {
                    b.extend_from_slice(&a.to_le_bytes());
                }
                b.extend_from_slice(&f.total_macs.to_le_bytes());
                b.extend_from_slice(&f.weight_bytes.to_le_bytes());
                b.extend_from_slice(&f.peak_activation_bytes.to_le_bytes());
            }
        }
        b
    }

    /// Full framed message.
    pub fn encode(&self) -> Vec<u8> {
        let body = self.body();
        let mut out = Vec::with_capacity(body.len() + 5);
        out.extend_from_slice(&(body.len() as u32 + 1).to_le_bytes());
        out.push(self.tag());
        out.extend_from_slice(&body);
        out
    }

    /// Parse a body of the given type.
    pub fn decode_body(tag: u8, body: &[u8]) -> Result<Message, WireError> {
        let mut r = Reader { bytes: body };
        let msg = match tag {
            tag::HELLO => Message::Hello(Hello {
                version: r.u16()?,
                width: r.u16()?,
                height: r.u16()?,
                cameras: r.u8()?,
                state_rate_hz: r.u16()?,
                frame_rate_hz: r.u16()?,
                speed: r.f32()?,
            }),
            tag::BUTTON_COMMAND => Message::ButtonCommand(ButtonCommand {
                button: r.u8()?,
                action: r.u8()?,
            }),
            tag::COMMAND_ACK => Message::CommandAck(CommandAck {
                button: r.u8()?,
                drive_state: r.u8()?,
                tick: r.u64()?,
            }),
            tag::ERROR => {
                let code = r.u16()?;
                let n = r.u16()? as usize;
                let message = String::from_utf8(r.take(n)?.to_vec())
                    .map_err(|_| WireError::Malformed("error text is not UTF-8".into()))?;
                Message::Error { code, message }
            }
            tag::STATE => {
                let tick = r.u64()?;
                let time = r.f64()?;
                let mut motors = [MotorSample {
                    encoder_count: 0,
                    pwm_duty: 0,
                    velocity: 0.0,
                    drive_state: 0,
                }; 3];
                for m in &mut motors {
                    *m = MotorSample {
                        encoder_count: r.i64()?,
                        pwm_duty: r.i16()?,
                        velocity: r.f32()?,
                        drive_state: r.u8()?,
                    };
                }
                let mut fingers = [FingerSample {
                    progress: 0.0,
                    mcp_angle: 0.0,
                    pip_angle: 0.0,
                }; 5];
                for f in &mut fingers {
                    *f = FingerSample {
                        progress: r.f32()?,
                        mcp_angle: r.f32()?,
                        pip_angle: r.f32()?,
                    };
                }
                Message::State(StatePacket {
                    tick,
                    time,
                    motors,
                    fingers,
                })
            }
            tag::FRAME => {
                let tick = r.u64()?;
                let frame_index = r.u32()?;
                let geometry = (r.u8()?, r.u16()?, r.u16()?);
                if geometry != (NUM_CAMERAS as u8, DOWNSAMPLED_WIDTH, DOWNSAMPLED_HEIGHT) {
                    return Err(WireError::Malformed(format!("unsupported frame geometry {geometry:?}")));
                }
                let images = r.take(FRAME_IMAGE_BYTES)?.to_vec();
                let masks = r.take(FRAME_MASK_BYTES)?.to_vec();
                let mut accuracy = [0f32; 5];
                for a in &mut accuracy {
                    *a = r.f32()?;
                }
                Message::Frame(FramePacket {
                    tick,
                    frame_index,
                    images,
                    masks,
                    accuracy,
                    total_macs: r.u64()?,
                    weight_bytes: r.u32()?,
                    peak_activation_bytes: r.u32()?,
                })
            }
            other => return Err(WireError::UnknownType(other)),
        };
        r.finish()?;
        Ok(msg)
    }

    /// Parse one framed message from the front of `bytes`; returns it and
    /// the number of bytes consumed. `Truncated` means more input is needed.
    pub fn decode(bytes: &[u8]) -> Result<(Message, usize), WireError> {
        let (tag, body, used) = split_frame(bytes)?;
        Ok((Self::decode_body(tag, body)?, used))
    }
}

/// Split one framed message into `(type, body, bytes consumed)` without
/// interpreting the body.
pub fn split_frame(bytes: &[u8]) -> Result<(u8, &[u8], usize), WireError> {
    if bytes.len() < 4 {
        return Err(WireError::Truncated);
    }
    let len = u32::from_le_bytes(bytes[..4].try_into().expect("4 bytes"));
    if len == 0 {
        return Err(WireError::Malformed("zero length".into()));
    }
    if len > MAX_MESSAGE_LEN {
        return Err(WireError::TooLarge(len));
    }
    let end = 4 + len as usize;
    if bytes.len() < end {
        return Err(WireError::Truncated);
    }
    Ok((bytes[4], &bytes[5..end], end))
}
