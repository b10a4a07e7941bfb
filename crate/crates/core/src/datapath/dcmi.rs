//! Byte-level framing of one camera frame on the serialized bus.
//!
//! ```text
//! FF 01                     frame start
//! header (stuffed, 10 B)    camera_id u8 | format u8 | frame_counter u32 LE
//!                           | width u16 LE | height u16 LE
//! height x {
//!   FF 02                   line start
//!   line (stuffed)          width * bytes_per_pixel bytes
//! }
//! FF 03                     frame end
//! crc (stuffed, 4 B)        CRC-32 (IEEE) of header || pixels, LE
//! ```
//!
//! Every literal 0xFF outside a marker is sent as `FF 00`, so `FF 01` can
//! only ever be a frame start and a decoder can resynchronize on it.

use serde::{Deserialize, Serialize};

use super::{DatapathError, Frame, PixelFormat};

pub const ESCAPE: u8 = 0xFF;
pub const STUFFED: u8 = 0x00;
pub const FRAME_START: u8 = 0x01;
pub const LINE_START: u8 = 0x02;
pub const FRAME_END: u8 = 0x03;
pub const HEADER_LEN: usize = 10;
/// Refuse headers announcing frames larger than this in either dimension.
pub const MAX_DIMENSION: u16 = 4096;

fn push_stuffed(out: &mut Vec<u8>, bytes: &[u8]) {
    for &b in bytes {
        out.push(b);
        if b == ESCAPE {
            out.push(STUFFED);
        }
    }
}

fn header_bytes(frame: &Frame) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    h[0] = frame.camera_id;
    h[1] = frame.format.code();
    h[2..6].copy_from_slice(&frame.frame_counter.to_le_bytes());
    h[6..8].copy_from_slice(&frame.width.to_le_bytes());
    h[8..10].copy_from_slice(&frame.height.to_le_bytes());
    h
}

fn frame_crc(header: &[u8], pixels: &[u8]) -> u32 {
    let mut hasher = crc32fast::Hasher::new();
    hasher.update(header);
    hasher.update(pixels);
    hasher.finalize()
}

/// Encode one frame as a DCMI packet.
pub fn dcmi_encode(frame: &Frame) -> Result<Vec<u8>, DatapathError> {
    frame.validate()?;
    if frame.width > MAX_DIMENSION || frame.height > MAX_DIMENSION {
        return Err(DatapathError::FrameTooLarge(frame.width, frame.height));
    }
    let header = header_bytes(frame);
    let line_len = frame.width as usize * frame.format.bytes_per_pixel();
    let mut out = Vec::with_capacity(frame.pixels.len() + frame.pixels.len() / 64 + 3 * frame.height as usize + 32);
    out.extend_from_slice(&[ESCAPE, FRAME_START]);
    push_stuffed(&mut out, &header);
    for line in frame.pixels.chunks_exact(line_len) {
        out.extend_from_slice(&[ESCAPE, LINE_START]);
        push_stuffed(&mut out, line);
    }
    out.extend_from_slice(&[ESCAPE, FRAME_END]);
    push_stuffed(&mut out, &frame_crc(&header, &frame.pixels).to_le_bytes());
    Ok(out)
}

/// Camera and counter of a frame whose header decoded before the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameTag {
    pub camera_id: u8,
    pub frame_counter: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SyncLossKind {
    /// Bytes outside any frame were skipped while hunting for a frame start.
    NoSync,
    /// A marker other than the expected one.
    UnexpectedMarker,
    /// Escape byte followed by an undefined code.
    InvalidEscape,
    /// Header fields out of range.
    BadHeader,
    Crc,
    /// Stream ended inside a frame.
    EndOfStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncLoss {
    /// Byte offset where the problem was detected.
    pub offset: usize,
    pub kind: SyncLossKind,
    pub frame: Option<FrameTag>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeEvent {
    Frame(Frame),
    SyncLoss(SyncLoss),
}

enum Token {
    Byte(u8),
    Marker(u8, usize),
    Invalid(usize),
    End,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn next(&mut self) -> Token {
        let Some(&b) = self.bytes.get(self.pos) else {
            return Token::End;
        };
        if b != ESCAPE {
            self.pos += 1;
            return Token::Byte(b);
        }
        let at = self.pos;
        match self.bytes.get(at + 1) {
            None => Token::End,
            Some(&STUFFED) => {
                self.pos += 2;
                Token::Byte(ESCAPE)
            }
            Some(&code @ (FRAME_START | LINE_START | FRAME_END)) => {
                self.pos += 2;
                Token::Marker(code, at)
            }
            Some(_) => {
                self.pos += 2;
                Token::Invalid(at)
            }
        }
    }

    fn read_into(&mut self, buf: &mut [u8]) -> Result<(), Token> {
        for slot in buf.iter_mut() {
            match self.next() {
                Token::Byte(b) => *slot = b,
                other => return Err(other),
            }
        }
        Ok(())
    }
}

/// Where to resume hunting after a failed frame.
struct Failure {
    loss: SyncLoss,
    resume: usize,
}

fn failure_from_token(token: Token, end: usize, tag: Option<FrameTag>) -> Failure {
    let (offset, kind, resume) = match token {
        Token::Marker(_, at) => (at, SyncLossKind::UnexpectedMarker, at),
        Token::Invalid(at) => (at, SyncLossKind::InvalidEscape, at + 2),
        Token::End => (end, SyncLossKind::EndOfStream, end),
        Token::Byte(_) => unreachable!("bytes are consumed by the caller"),
    };
    Failure {
        loss: SyncLoss { offset, kind, frame: tag },
        resume,
    }
}

/// Parse one frame whose frame-start marker ends right before `start`.
fn parse_frame(bytes: &[u8], start: usize) -> Result<(Frame, usize), Failure> {
    let mut r = Reader { bytes, pos: start };
    let end = bytes.len();
    let mut header = [0u8; HEADER_LEN];
    r.read_into(&mut header).map_err(|t| failure_from_token(t, end, None))?;

    let camera_id = header[0];
    let frame_counter = u32::from_le_bytes(header[2..6].try_into().expect("4 bytes"));
    let width = u16::from_le_bytes([header[6], header[7]]);
    let height = u16::from_le_bytes([header[8], header[9]]);
    let format = PixelFormat::from_code(header[1]);
    let tag = Some(FrameTag {
        camera_id,
        frame_counter,
    });
    let Some(format) = format.filter(|_| {
        (camera_id as usize) < super::NUM_CAMERAS
            && (1..=MAX_DIMENSION).contains(&width)
            && (1..=MAX_DIMENSION).contains(&height)
    }) else {
        return Err(Failure {
            loss: SyncLoss {
                offset: start,
                kind: SyncLossKind::BadHeader,
                frame: None,
            },
            resume: start,
        });
    };

    let line_len = width as usize * format.bytes_per_pixel();
    // A corrupted header can announce a huge frame; never reserve more than
    // the stream could still hold.
    let total = line_len * height as usize;
    let mut pixels = Vec::with_capacity(total.min(bytes.len() - r.pos));
    for _ in 0..height {
        match r.next() {
            Token::Marker(LINE_START, _) => {}
            Token::Byte(_) => {
                return Err(Failure {
                    loss: SyncLoss {
                        offset: r.pos - 1,
                        kind: SyncLossKind::UnexpectedMarker,
                        frame: tag,
                    },
                    resume: r.pos,
                })
            }
            other => return Err(failure_from_token(other, end, tag)),
        }
        let from = pixels.len();
        pixels.resize(from + line_len, 0);
        r.read_into(&mut pixels[from..]).map_err(|t| failure_from_token(t, end, tag))?;
    }
    match r.next() {
        Token::Marker(FRAME_END, _) => {}
        Token::Byte(_) => {
            return Err(Failure {
                loss: SyncLoss {
                    offset: r.pos - 1,
                    kind: SyncLossKind::UnexpectedMarker,
                    frame: tag,
                },
                resume: r.pos,
            })
        }
        other => return Err(failure_from_token(other, end, tag)),
    }
    let mut crc = [0u8; 4];
    r.read_into(&mut crc).map_err(|t| failure_from_token(t, end, tag))?;
    if u32::from_le_bytes(crc) != frame_crc(&header, &pixels) {
        return Err(Failure {
            loss: SyncLoss {
                offset: r.pos,
                kind: SyncLossKind::Crc,
                frame: tag,
            },
            resume: r.pos,
        });
    }
    let frame = Frame {
        camera_id,
        frame_counter,
        width,
        height,
        format,
        pixels,
    };
    Ok((frame, r.pos))
}

fn find_frame_start(bytes: &[u8], from: usize) -> Option<usize> {
    let mut i = from;
    while i + 1 < bytes.len() {
        if bytes[i] == ESCAPE {
            if bytes[i + 1] == FRAME_START {
                return Some(i);
            }
            // Skip the escaped pair so `FF FF 01` cannot alias a marker twice.
            i += 2;
        } else {
            i += 1;
        }
    }
    None
}

/// Decode every frame in a byte stream, reporting sync losses in stream
/// order. Never panics on arbitrary input.
///
/// Bytes skipped while hunting for a frame start are reported once, unless
/// they directly follow another loss (they belong to the same event).
pub fn decode_stream(bytes: &[u8]) -> Vec<DecodeEvent> {
    let mut events = Vec::new();
    let mut pos = 0;
    let mut in_loss = false;
    while pos < bytes.len() {
        let Some(start) = find_frame_start(bytes, pos) else {
            if !in_loss {
                events.push(DecodeEvent::SyncLoss(SyncLoss {
                    offset: pos,
                    kind: SyncLossKind::NoSync,
                    frame: None,
                }));
            }
            break;
        };
        if start > pos && !in_loss {
            events.push(DecodeEvent::SyncLoss(SyncLoss {
                offset: pos,
                kind: SyncLossKind::NoSync,
                frame: None,
            }));
        }
        match parse_frame(bytes, start + 2) {
            Ok((frame, next)) => {
                events.push(DecodeEvent::Frame(frame));
                in_loss = false;
                pos = next;
            }
            Err(Failure { loss, resume }) => {
                events.push(DecodeEvent::SyncLoss(loss));
                in_loss = true;
                pos = resume.max(start + 2);
            }
        }
    }
    events
}

/// Decode a stream expected to hold exactly one frame.
pub fn dcmi_decode(bytes: &[u8]) -> Result<Frame, SyncLoss> {
    match decode_stream(bytes).into_iter().next() {
        Some(DecodeEvent::Frame(f)) => Ok(f),
        Some(DecodeEvent::SyncLoss(l)) => Err(l),
        None => Err(SyncLoss {
            offset: 0,
            kind: SyncLossKind::EndOfStream,
            frame: None,
        }),
    }
}

/// Split a stream into packets, one per frame-start marker. Each span runs
/// from its marker up to the next marker or the end of the stream; the tag
/// is present when the header decodes.
pub fn packet_spans(bytes: &[u8]) -> Vec<(std::ops::Range<usize>, Option<FrameTag>)> {
    let mut starts = Vec::new();
    let mut pos = 0;
    while let Some(s) = find_frame_start(bytes, pos) {
        starts.push(s);
        pos = s + 2;
    }
    starts
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let end = starts.get(k + 1).copied().unwrap_or(bytes.len());
            (s..end, peek_tag(&bytes[s..end]))
        })
        .collect()
}

fn peek_tag(packet: &[u8]) -> Option<FrameTag> {
    let mut r = Reader { bytes: packet, pos: 2 };
    let mut header = [0u8; HEADER_LEN];
    r.read_into(&mut header).ok()?;
    Some(FrameTag {
        camera_id: header[0],
        frame_counter: u32::from_le_bytes(header[2..6].try_into().expect("4 bytes")),
    })
}

/// Byte length of a prefix of `packet` that keeps the header intact and
/// about `keep` (0..1) of the remaining wire bytes, never splitting an
/// escaped pair.
pub(crate) fn truncation_point(packet: &[u8], keep: f64) -> usize {
    let mut r = Reader { bytes: packet, pos: 2 };
    let mut header = [0u8; HEADER_LEN];
    if r.read_into(&mut header).is_err() {
        return packet.len();
    }
    let body = r.pos;
    let goal = body + ((packet.len() - body) as f64 * keep.clamp(0.0, 1.0)) as usize;
    // Always drop at least the CRC so the packet is incomplete.
    let goal = goal.min(packet.len().saturating_sub(1)).max(body);
    while r.pos < goal {
        if matches!(r.next(), Token::End) {
            break;
        }
    }
    r.pos.min(packet.len())
}

/// Frame and loss counts of a decoded stream.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeStats {
    pub frames: usize,
    pub sync_losses: usize,
    pub first_loss: Option<SyncLoss>,
}

impl DecodeStats {
    pub fn from_events(events: &[DecodeEvent]) -> Self {
        let mut stats = DecodeStats::default();
        for e in events {
            match e {
                DecodeEvent::Frame(_) => stats.frames += 1,
                DecodeEvent::SyncLoss(l) => {
                    stats.sync_losses += 1;
                    stats.first_loss.get_or_insert(*l);
                }
            }
        }
        stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_frame(seed: u8) -> Frame {
        let pixels: Vec<u8> = (0..4 * 3 * 3).map(|i| (i as u8).wrapping_mul(37).wrapping_add(seed)).collect();
        Frame::new(2, 9, 4, 3, PixelFormat::Rgb888, pixels).unwrap()
    }

    #[test]
    fn qcif_rgb565_payload_size() {
        let f = Frame::blank(0, 0, 176, 144, PixelFormat::Rgb565);
        assert_eq!(f.payload_len(), 50_688);
        let enc = dcmi_encode(&f).unwrap();
        // Zero pixels need no stuffing: 2 + 10 + 144 * (2 + 352) + 2 + 4 (+ CRC stuffing).
        assert!(enc.len() >= 2 + 10 + 144 * 354 + 2 + 4);
    }

    #[test]
    fn zero_frame_round_trip() {
        let f = Frame::blank(3, 1, 88, 72, PixelFormat::Rgb888);
        assert_eq!(dcmi_decode(&dcmi_encode(&f).unwrap()).unwrap(), f);
    }

    #[test]
    fn escape_bytes_are_stuffed() {
        let f = Frame::new(0, 0xFFFF_FFFF, 2, 1, PixelFormat::Rgb888, vec![0xFF, 0x01, 0xFF, 0x02, 0xFF, 0x03]).unwrap();
        let enc = dcmi_encode(&f).unwrap();
        assert_eq!(find_frame_start(&enc, 1), None);
        assert_eq!(dcmi_decode(&enc).unwrap(), f);
    }

    #[test]
    fn truncated_then_resync() {
        let a = dcmi_encode(&small_frame(1)).unwrap();
        let b = dcmi_encode(&small_frame(2)).unwrap();
        let mut stream = a[..a.len() / 2].to_vec();
        stream.extend_from_slice(&b);
        let events = decode_stream(&stream);
        assert_eq!(events.len(), 2);
        match &events[0] {
            DecodeEvent::SyncLoss(l) => {
                assert_eq!(l.kind, SyncLossKind::UnexpectedMarker);
                assert_eq!(l.offset, a.len() / 2);
                assert_eq!(l.frame, Some(FrameTag { camera_id: 2, frame_counter: 9 }));
            }
            other => panic!("expected loss, got {other:?}"),
        }
        assert_eq!(events[1], DecodeEvent::Frame(small_frame(2)));
    }

    #[test]
    fn truncated_at_end() {
        let a = dcmi_encode(&small_frame(1)).unwrap();
        let err = dcmi_decode(&a[..a.len() - 1]).unwrap_err();
        assert_eq!(err.kind, SyncLossKind::EndOfStream);
    }

    #[test]
    fn crc_mismatch_discards_frame() {
        let mut a = dcmi_encode(&small_frame(1)).unwrap();
        let n = a.len();
        a[n - 1] ^= 0x10;
        assert_eq!(dcmi_decode(&a).unwrap_err().kind, SyncLossKind::Crc);
    }

    #[test]
    fn garbage_is_reported_once() {
        let mut stream = vec![0x13, 0x37, 0xFF, 0x00];
        stream.extend(dcmi_encode(&small_frame(5)).unwrap());
        let events = decode_stream(&stream);
        assert_eq!(events.len(), 2);
        assert!(matches!(events[0], DecodeEvent::SyncLoss(SyncLoss { offset: 0, kind: SyncLossKind::NoSync, .. })));
        assert!(decode_stream(&[]).is_empty());
        assert_eq!(DecodeStats::from_events(&decode_stream(&[0xFF])).sync_losses, 1);
    }

    #[test]
    fn bad_header_rejected() {
        let mut a = dcmi_encode(&small_frame(1)).unwrap();
        a[3] = 7; // pixel format code
        assert_eq!(dcmi_decode(&a).unwrap_err().kind, SyncLossKind::BadHeader);
    }

    #[test]
    fn packet_spans_tag_every_frame() {
        let mut stream = dcmi_encode(&small_frame(1)).unwrap();
        let first = stream.len();
        stream.extend(dcmi_encode(&Frame::blank(4, 77, 2, 2, PixelFormat::Rgb565)).unwrap());
        let spans = packet_spans(&stream);
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[0].0, 0..first);
        assert_eq!(spans[1].1, Some(FrameTag { camera_id: 4, frame_counter: 77 }));
    }

    #[test]
    fn truncation_never_splits_escape_pairs() {
        let f = Frame::new(0, 1, 4, 1, PixelFormat::Rgb888, vec![0xFF; 12]).unwrap();
        let enc = dcmi_encode(&f).unwrap();
        for k in 0..=20 {
            let cut = truncation_point(&enc, k as f64 / 20.0);
            assert!(cut < enc.len());
            let mut stream = enc[..cut].to_vec();
            stream.extend(dcmi_encode(&f).unwrap());
            let stats = DecodeStats::from_events(&decode_stream(&stream));
            assert_eq!((stats.frames, stats.sync_losses), (1, 1), "cut {cut}");
        }
    }

    #[test]
    fn encode_rejects_malformed() {
        let mut f = small_frame(0);
        f.pixels.pop();
        assert!(dcmi_encode(&f).is_err());
    }

    /// Bitwise reflected CRC-32 (poly 0xEDB88320), independent of crc32fast.
    fn crc32_oracle(bytes: &[u8]) -> u32 {
        let mut crc = 0xFFFF_FFFFu32;
        for &b in bytes {
            crc ^= u32::from(b);
            for _ in 0..8 {
                crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
            }
        }
        !crc
    }

    #[test]
    fn crc_matches_reference_vector_and_oracle() {
        assert_eq!(crc32_oracle(b"123456789"), 0xCBF4_3926);
        assert_eq!(frame_crc(b"12345", b"6789"), 0xCBF4_3926);
        let f = small_frame(3);
        let enc = dcmi_encode(&f).unwrap();
        let mut body = header_bytes(&f).to_vec();
        body.extend_from_slice(&f.pixels);
        let expected = crc32_oracle(&body).to_le_bytes();
        // No 0xFF in the CRC of this frame, so the last four bytes are raw.
        assert!(!expected.contains(&0xFF));
        assert_eq!(&enc[enc.len() - 4..], &expected);
    }

    #[test]
    fn every_single_bit_flip_is_rejected() {
        let f = Frame::new(1, 0xFF, 3, 2, PixelFormat::Rgb565, vec![0, 0xFF, 0x12, 0x34, 0xFF, 0xFF, 9, 8, 7, 6, 5, 4]).unwrap();
        let enc = dcmi_encode(&f).unwrap();
        for bit in 0..enc.len() * 8 {
            let mut bad = enc.clone();
            bad[bit / 8] ^= 1 << (bit % 8);
            for e in decode_stream(&bad) {
                if let DecodeEvent::Frame(g) = e {
                    panic!("bit {bit} flipped yet frame {g:?} accepted");
                }
            }
        }
    }

    fn arb_frame() -> impl Strategy<Value = Frame> {
        (0u8..5, any::<u32>(), 1u16..12, 1u16..12, any::<bool>()).prop_flat_map(|(cam, counter, w, h, rgb)| {
            let format = if rgb { PixelFormat::Rgb888 } else { PixelFormat::Rgb565 };
            let len = w as usize * h as usize * format.bytes_per_pixel();
            // Bias towards escape bytes.
            prop::collection::vec(prop_oneof![Just(0xFFu8), Just(0x01), any::<u8>()], len)
                .prop_map(move |pixels| Frame::new(cam, counter, w, h, format, pixels).unwrap())
        })
    }

    proptest! {
        #[test]
        fn round_trip(frames in prop::collection::vec(arb_frame(), 1..6)) {
            let stream: Vec<u8> = frames.iter().flat_map(|f| dcmi_encode(f).unwrap()).collect();
            let decoded: Vec<DecodeEvent> = decode_stream(&stream);
            prop_assert_eq!(decoded, frames.into_iter().map(DecodeEvent::Frame).collect::<Vec<_>>());
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(prop_oneof![Just(0xFFu8), 0u8..4, any::<u8>()], 0..400)) {
            let events = decode_stream(&bytes);
            for e in &events {
                if let DecodeEvent::SyncLoss(l) = e {
                    prop_assert!(l.offset <= bytes.len());
                }
            }
        }
    }
}
