use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use super::dcmi::truncation_point;
use super::{packet_spans, DatapathError};

/// Degradation applied to a serialized stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FaultPolicy {
    /// Flip every bit independently with probability `rate`.
    BitErrorRate { rate: f64 },
    /// Cut the packet at position `index` (0-based, stream order) after its
    /// header, keeping half of the rest.
    PartialFrame { index: usize },
    /// Wear-out of the finger cable, keyed by the frame counter (one frame
    /// per actuation cycle): frames before `first_corrupt` are clean, the
    /// frame at `first_corrupt` is cut short, later frames before `dead` are
    /// cut with probability `corrupt_probability`, and from `dead` on the
    /// link carries nothing.
    DeadAfterCycles {
        first_corrupt: u32,
        dead: u32,
        corrupt_probability: f64,
    },
}

/// Apply `policy` to a stream. Deterministic for a given seed.
pub fn inject_fault(stream: &[u8], policy: FaultPolicy, seed: u64) -> Result<Vec<u8>, DatapathError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match policy {
        FaultPolicy::BitErrorRate { rate } => {
            if !(0.0..=1.0).contains(&rate) {
                return Err(DatapathError::InvalidParameter(format!("bit error rate {rate} outside [0, 1]")));
            }
            let mut out = stream.to_vec();
            if rate == 0.0 {
                return Ok(out);
            }
            let total_bits = out.len() as u64 * 8;
            let gap = Geometric::new(rate).map_err(|e| DatapathError::InvalidParameter(e.to_string()))?;
            let mut bit = gap.sample(&mut rng);
            while bit < total_bits {
                out[(bit / 8) as usize] ^= 1 << (bit % 8);
                bit = bit.saturating_add(1).saturating_add(gap.sample(&mut rng));
            }
            Ok(out)
        }
        FaultPolicy::PartialFrame { index } => {
            let spans = packet_spans(stream);
            let Some((span, _)) = spans.get(index) else {
                return Err(DatapathError::InvalidParameter(format!(
                    "stream holds {} packets, cannot cut packet {index}",
                    spans.len()
                )));
            };
            let mut out = stream[..span.start].to_vec();
            out.extend_from_slice(&stream[span.start..span.start + truncation_point(&stream[span.clone()], 0.5)]);
            out.extend_from_slice(&stream[span.end..]);
            Ok(out)
        }
        FaultPolicy::DeadAfterCycles {
            first_corrupt,
            dead,
            corrupt_probability,
        } => {
            if first_corrupt > dead || !(0.0..=1.0).contains(&corrupt_probability) {
                return Err(DatapathError::InvalidParameter(
                    "need first_corrupt <= dead and probability in [0, 1]".into(),
                ));
            }
            let spans = packet_spans(stream);
            let head = spans.first().map_or(stream.len(), |(s, _)| s.start);
            let mut out = stream[..head].to_vec();
            for (span, tag) in spans {
                let packet = &stream[span];
                let Some(tag) = tag else {
                    out.extend_from_slice(packet);
                    continue;
                };
                let cycle = tag.frame_counter;
                if cycle >= dead {
                    continue;
                }
                let cut = cycle == first_corrupt || (cycle > first_corrupt && rng.gen_bool(corrupt_probability));
                if cut {
                    let keep = rng.gen_range(0.05..0.95);
                    out.extend_from_slice(&packet[..truncation_point(packet, keep)]);
                } else {
                    out.extend_from_slice(packet);
                }
            }
            Ok(out)
        }
    }
}
