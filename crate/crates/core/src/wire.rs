//! 16-byte sensor packet codec.
//!
//! ```text
//! offset  size  field
//!      0     2  magic C0 6D
//!      2     1  version (1)
//!      3     1  led (0 = white, 1 = nir)
//!      4     2  seq, u16 LE
//!      6     4  t_ms, u32 LE
//!     10     2  ch_a, u16 LE   white: Y    nir: IR1
//!     12     2  ch_b, u16 LE   white: Z    nir: IR2
//!     14     2  checksum, u16 LE
//! ```
//!
//! The checksum is the one's-complement sum (end-around carry) of the first
//! seven little-endian u16 words. X is not carried on the wire.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Led, SensorFrame};

pub const FRAME_LEN: usize = 16;
pub const MAGIC: [u8; 2] = [0xC0, 0x6D];
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrameError {
    #[error("need {FRAME_LEN} bytes, got {0}")]
    Truncated(usize),
    #[error("bad magic {0:02X} {1:02X}")]
    BadMagic(u8, u8),
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown led code {0}")]
    BadLed(u8),
    #[error("checksum mismatch: stored {stored:04X}, computed {computed:04X}")]
    Checksum { stored: u16, computed: u16 },
    #[error("{channel} value {value} does not fit in u16")]
    Overflow { channel: &'static str, value: f64 },
    #[error("timestamp {0} s not representable in u32 milliseconds")]
    Time(f64),
}

/// One's-complement sum of little-endian u16 words.
pub fn ones_complement_sum(bytes: &[u8]) -> u16 {
    let mut sum: u32 = 0;
    for pair in bytes.chunks(2) {
        let word = u16::from_le_bytes([pair[0], *pair.get(1).unwrap_or(&0)]);
        sum += u32::from(word);
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    sum as u16
}

/// Float-to-count conversion for the two u16 channel fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireCodec {
    /// Counts on the wire per sensor count.
    pub scale: f64,
}

impl Default for WireCodec {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

impl WireCodec {
    fn to_count(self, channel: &'static str, value: f64) -> Result<u16, FrameError> {
        let scaled = (value * self.scale).round();
        if !(0.0..=65535.0).contains(&scaled) {
            return Err(FrameError::Overflow { channel, value });
        }
        Ok(scaled as u16)
    }

    pub fn encode_frame(&self, frame: &SensorFrame, seq: u16) -> Result<[u8; FRAME_LEN], FrameError> {
        let t_ms = (frame.t * 1000.0).round();
        if !(0.0..=u32::MAX as f64).contains(&t_ms) {
            return Err(FrameError::Time(frame.t));
        }
        let (a, b) = match frame.led {
            Led::White => (self.to_count("y", frame.y)?, self.to_count("z", frame.z)?),
            Led::Nir => (self.to_count("ir1", frame.ir1)?, self.to_count("ir2", frame.ir2)?),
        };
        let mut out = [0u8; FRAME_LEN];
        out[0..2].copy_from_slice(&MAGIC);
        out[2] = VERSION;
        out[3] = frame.led.code();
        out[4..6].copy_from_slice(&seq.to_le_bytes());
        out[6..10].copy_from_slice(&(t_ms as u32).to_le_bytes());
        out[10..12].copy_from_slice(&a.to_le_bytes());
        out[12..14].copy_from_slice(&b.to_le_bytes());
        let checksum = ones_complement_sum(&out[..14]);
        out[14..16].copy_from_slice(&checksum.to_le_bytes());
        Ok(out)
    }

    /// Encodes frames with consecutive sequence numbers starting at 0.
    pub fn encode_stream(&self, frames: &[SensorFrame]) -> Result<Vec<u8>, FrameError> {
        let mut out = Vec::with_capacity(frames.len() * FRAME_LEN);
        for (i, frame) in frames.iter().enumerate() {
            out.extend_from_slice(&self.encode_frame(frame, i as u16)?);
        }
        Ok(out)
    }

    pub fn decode_frame(&self, bytes: &[u8]) -> Result<DecodedFrame, FrameError> {
        if bytes.len() < FRAME_LEN {
            return Err(FrameError::Truncated(bytes.len()));
        }
        let bytes = &bytes[..FRAME_LEN];
        if bytes[0..2] != MAGIC {
            return Err(FrameError::BadMagic(bytes[0], bytes[1]));
        }
        let stored = u16::from_le_bytes([bytes[14], bytes[15]]);
        let computed = ones_complement_sum(&bytes[..14]);
        if stored != computed {
            return Err(FrameError::Checksum { stored, computed });
        }
        if bytes[2] != VERSION {
            return Err(FrameError::BadVersion(bytes[2]));
        }
        let led = Led::from_code(bytes[3]).ok_or(FrameError::BadLed(bytes[3]))?;
        let seq = u16::from_le_bytes([bytes[4], bytes[5]]);
        let t_ms = u32::from_le_bytes([bytes[6], bytes[7], bytes[8], bytes[9]]);
        let a = f64::from(u16::from_le_bytes([bytes[10], bytes[11]])) / self.scale;
        let b = f64::from(u16::from_le_bytes([bytes[12], bytes[13]])) / self.scale;
        let t = f64::from(t_ms) / 1000.0;
        let frame = match led {
            Led::White => SensorFrame::white(t, 0.0, a, b),
            Led::Nir => SensorFrame::nir(t, a, b),
        };
        Ok(DecodedFrame { seq, frame })
    }

    /// Decodes a byte stream, resynchronising on the magic after damage.
    ///
    /// Only checksum-valid packets are returned. Sequence discontinuities
    /// between consecutive decoded packets are reported as gaps and skipped
    /// bytes as malformed spans.
    pub fn decode_stream(&self, bytes: &[u8]) -> DecodeReport {
        let mut report = DecodeReport::default();
        let mut pos = 0;
        let mut skipped_from: Option<usize> = None;
        while pos + FRAME_LEN <= bytes.len() {
            match self.decode_frame(&bytes[pos..]) {
                Ok(decoded) => {
                    if let Some(start) = skipped_from.take() {
                        report.malformed.push(ByteSpan { offset: start, len: pos - start });
                    }
                    if let Some(prev) = report.frames.last() {
                        let missing = decoded.seq.wrapping_sub(prev.seq).wrapping_sub(1);
                        if missing != 0 {
                            report.gaps.push(Gap { after: prev.seq, missing });
                        }
                    }
                    report.frames.push(decoded);
                    pos += FRAME_LEN;
                }
                Err(_) => {
                    skipped_from.get_or_insert(pos);
                    pos += 1;
                }
            }
        }
        let tail_start = skipped_from.unwrap_or(pos);
        if tail_start < bytes.len() {
            report.malformed.push(ByteSpan { offset: tail_start, len: bytes.len() - tail_start });
        }
        report
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedFrame {
    pub seq: u16,
    pub frame: SensorFrame,
}

/// `missing` sequence numbers were lost right after `after`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    pub after: u16,
    pub missing: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteSpan {
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeReport {
    pub frames: Vec<DecodedFrame>,
    pub gaps: Vec<Gap>,
    pub malformed: Vec<ByteSpan>,
}

impl DecodeReport {
    pub fn sensor_frames(&self) -> Vec<SensorFrame> {
        self.frames.iter().map(|d| d.frame).collect()
    }

    pub fn missing_total(&self) -> usize {
        self.gaps.iter().map(|g| g.missing as usize).sum()
    }
}

/// Serializable summary of a decode, for CLI output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub frames: usize,
    pub missing: usize,
    pub gaps: Vec<Gap>,
    pub malformed: Vec<ByteSpan>,
}

impl From<&DecodeReport> for GapSummary {
    fn from(r: &DecodeReport) -> Self {
        Self {
            frames: r.frames.len(),
            missing: r.missing_total(),
            gaps: r.gaps.clone(),
            malformed: r.malformed.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Even bytes are low halves, odd bytes high halves; fold carries at the end.
    fn byte_sum_oracle(bytes: &[u8]) -> u16 {
        let lo: u64 = bytes.iter().step_by(2).map(|&b| u64::from(b)).sum();
        let hi: u64 = bytes.iter().skip(1).step_by(2).map(|&b| u64::from(b)).sum();
        let mut s = lo + (hi << 8);
        while s > 0xFFFF {
            s = (s & 0xFFFF) + (s >> 16);
        }
        s as u16
    }

    #[test]
    fn white_frame_layout() {
        let codec = WireCodec::default();
        let bytes = codec.encode_frame(&SensorFrame::white(0.0, 77.0, 256.0, 1.0), 0).unwrap();
        let head = [0xC0, 0x6D, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01, 0x01, 0x00];
        assert_eq!(bytes[..14], head);
        let oracle = byte_sum_oracle(&head);
        assert_eq!(oracle, 0x6EC2);
        assert_eq!(bytes[14..], oracle.to_le_bytes());
    }

    #[test]
    fn checksum_matches_oracle_with_carries() {
        let bytes = [0xFF; 14];
        assert_eq!(ones_complement_sum(&bytes), byte_sum_oracle(&bytes));
        let bytes = [0xC0, 0x6D, 1, 1, 0xFF, 0xFF, 0x10, 0x27, 0, 0, 0xFF, 0xFE, 0x34, 0xF2];
        assert_eq!(ones_complement_sum(&bytes), byte_sum_oracle(&bytes));
    }

    #[test]
    fn single_byte_corruption_detected() {
        let codec = WireCodec::default();
        let good = codec.encode_frame(&SensorFrame::nir(12.345, 30000.0, 25000.0), 513).unwrap();
        for i in 0..FRAME_LEN {
            for flip in [0x01u8, 0x80, 0xFF, 0x5A] {
                let mut bad = good;
                bad[i] ^= flip;
                assert!(codec.decode_frame(&bad).is_err(), "byte {i} flip {flip:02X}");
            }
        }
    }

    #[test]
    fn overflow_and_time_errors() {
        let codec = WireCodec::default();
        assert!(matches!(
            codec.encode_frame(&SensorFrame::nir(0.0, 70000.0, 1.0), 0),
            Err(FrameError::Overflow { channel: "ir1", .. })
        ));
        assert!(matches!(codec.encode_frame(&SensorFrame::nir(-1.0, 1.0, 1.0), 0), Err(FrameError::Time(_))));
        let half = WireCodec { scale: 0.5 };
        let d = half.decode_frame(&half.encode_frame(&SensorFrame::nir(0.0, 70000.0, 1.0), 0).unwrap()).unwrap();
        assert_eq!(d.frame.ir1, 70000.0);
    }

    #[test]
    fn clean_stream_and_gap() {
        let codec = WireCodec::default();
        let frames: Vec<SensorFrame> = (0..10).map(|i| SensorFrame::nir(i as f64, i as f64, 2.0)).collect();
        let bytes = codec.encode_stream(&frames).unwrap();
        let report = codec.decode_stream(&bytes);
        assert_eq!(report.frames.len(), 10);
        assert!(report.gaps.is_empty() && report.malformed.is_empty());

        let mut missing5 = bytes[..5 * FRAME_LEN].to_vec();
        missing5.extend_from_slice(&bytes[6 * FRAME_LEN..]);
        let report = codec.decode_stream(&missing5);
        assert_eq!(report.frames.len(), 9);
        assert_eq!(report.gaps, vec![Gap { after: 4, missing: 1 }]);
    }

    #[test]
    fn truncated_tail_reported() {
        let codec = WireCodec::default();
        let frames: Vec<SensorFrame> = (0..4).map(|i| SensorFrame::nir(i as f64, 1.0, 2.0)).collect();
        let bytes = codec.encode_stream(&frames).unwrap();
        let report = codec.decode_stream(&bytes[..bytes.len() - 5]);
        assert_eq!(report.frames.len(), 3);
        assert_eq!(report.malformed, vec![ByteSpan { offset: 48, len: 11 }]);
    }

    #[test]
    fn sequence_wraps() {
        let codec = WireCodec::default();
        let mut bytes = codec.encode_frame(&SensorFrame::nir(0.0, 1.0, 1.0), 65535).unwrap().to_vec();
        bytes.extend(codec.encode_frame(&SensorFrame::nir(0.1, 1.0, 1.0), 0).unwrap());
        bytes.extend(codec.encode_frame(&SensorFrame::nir(0.2, 1.0, 1.0), 2).unwrap());
        let report = codec.decode_stream(&bytes);
        assert_eq!(report.gaps, vec![Gap { after: 0, missing: 1 }]);
    }

    prop_compose! {
        fn any_frame()(white in any::<bool>(), t_ms in 0u32..4_000_000, a in 0u16.., b in 0u16.., x in 0.0f64..1e4)
            -> SensorFrame {
            let t = f64::from(t_ms) / 1000.0;
            if white {
                SensorFrame::white(t, x, f64::from(a), f64::from(b))
            } else {
                SensorFrame::nir(t, f64::from(a), f64::from(b))
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip_in_range(frame in any_frame(), seq in any::<u16>()) {
            let codec = WireCodec::default();
            let decoded = codec.decode_frame(&codec.encode_frame(&frame, seq).unwrap()).unwrap();
            prop_assert_eq!(decoded.seq, seq);
            let mut expect = frame;
            expect.x = 0.0;
            prop_assert_eq!(decoded.frame, expect);
        }
    }
}
