//! Bit-exact container primitives: MSB-first bit packing, section framing,
//! and the fixed stream header.
//!
//! Stream layout:
//!
//! ```text
//! magic "DRC1" (4 bytes) | version (u8) | section*
//! section := tag (u8) | payload length in bits (u32 LE) | payload bytes
//! ```
//!
//! Section payloads are padded to a byte boundary with zero bits; nonzero
//! padding is a parse error so that every bit of the file is accounted for.
//! Section order is fixed: header, tags, latent, rcc, optional trailer.

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"DRC1";
pub const VERSION: u8 = 1;

/// Header flag bit: conditional priors use the transmitted latent hint.
pub const FLAG_HINT_CONDITIONING: u8 = 0x01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SectionTag {
    Header = 0x01,
    Tags = 0x02,
    Latent = 0x03,
    Rcc = 0x04,
    Trailer = 0x05,
}

impl SectionTag {
    pub fn from_u8(v: u8, offset: usize) -> Result<Self> {
        match v {
            0x01 => Ok(SectionTag::Header),
            0x02 => Ok(SectionTag::Tags),
            0x03 => Ok(SectionTag::Latent),
            0x04 => Ok(SectionTag::Rcc),
            0x05 => Ok(SectionTag::Trailer),
            other => Err(Error::UnknownSection { tag: other, offset }),
        }
    }
}

/// MSB-first bit writer over a growable byte buffer.
#[derive(Debug, Default, Clone)]
pub struct BitWriter {
    bytes: Vec<u8>,
    /// Bits used in the final byte of `bytes` (0 means byte-aligned).
    partial: u32,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len_bits(&self) -> u64 {
        if self.partial == 0 {
            self.bytes.len() as u64 * 8
        } else {
            (self.bytes.len() as u64 - 1) * 8 + self.partial as u64
        }
    }

    /// Write the low `k` bits of `value`, most significant first. `k` in [0, 64].
    pub fn write_bits(&mut self, value: u64, k: u32) {
        debug_assert!(k <= 64);
        let mut left = k;
        while left > 0 {
            if self.partial == 0 {
                self.bytes.push(0);
            }
            let room = 8 - self.partial;
            let take = room.min(left);
            let shift = left - take;
            let chunk = if shift >= 64 { 0 } else { (value >> shift) as u8 } & ((1u16 << take) - 1) as u8;
            let byte = self.bytes.last_mut().unwrap();
            *byte |= chunk << (room - take);
            self.partial = (self.partial + take) % 8;
            left -= take;
        }
    }

    pub fn write_bit(&mut self, bit: bool) {
        self.write_bits(bit as u64, 1);
    }

    /// Zero-pad to the next byte boundary.
    pub fn align_byte(&mut self) {
        self.partial = 0;
    }

    pub fn into_bytes(mut self) -> Vec<u8> {
        self.align_byte();
        self.bytes
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }
}

/// MSB-first bit reader over a byte slice.
#[derive(Debug, Clone)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    pos: u64,
    end: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0, end: bytes.len() as u64 * 8 }
    }

    /// Reader over a bit-length-limited slice (section payloads).
    pub fn with_limit(bytes: &'a [u8], bit_len: u64) -> Result<Self> {
        if bit_len > bytes.len() as u64 * 8 {
            return Err(Error::Truncated { needed: bit_len, available: bytes.len() as u64 * 8 });
        }
        Ok(Self { bytes, pos: 0, end: bit_len })
    }

    pub fn position(&self) -> u64 {
        self.pos
    }

    pub fn remaining(&self) -> u64 {
        self.end - self.pos
    }

    pub fn read_bits(&mut self, k: u32) -> Result<u64> {
        debug_assert!(k <= 64);
        if (k as u64) > self.remaining() {
            return Err(Error::Truncated { needed: k as u64, available: self.remaining() });
        }
        let mut out = 0u64;
        let mut left = k;
        while left > 0 {
            let byte = self.bytes[(self.pos / 8) as usize];
            let offset = (self.pos % 8) as u32;
            let avail = 8 - offset;
            let take = avail.min(left);
            let chunk = (byte >> (avail - take)) & ((1u16 << take) - 1) as u8;
            out = (out << take) | chunk as u64;
            self.pos += take as u64;
            left -= take;
        }
        Ok(out)
    }

    pub fn read_bit(&mut self) -> Result<bool> {
        Ok(self.read_bits(1)? != 0)
    }

    /// Consume zero padding up to the reader's end; nonzero padding is an error.
    pub fn expect_zero_to_end(&mut self) -> Result<()> {
        while self.remaining() > 0 {
            let take = self.remaining().min(64) as u32;
            if self.read_bits(take)? != 0 {
                return Err(Error::Malformed {
                    offset: self.pos,
                    reason: "nonzero padding bits".into(),
                });
            }
        }
        Ok(())
    }
}

/// A framed section: tag, payload bytes, and the exact payload bit length.
#[derive(Debug, Clone)]
pub struct Section {
    pub tag: SectionTag,
    pub payload: Vec<u8>,
    pub bit_len: u64,
}

impl Section {
    pub fn from_writer(tag: SectionTag, w: BitWriter) -> Result<Self> {
        let bit_len = w.len_bits();
        if bit_len >= (1u64 << 32) {
            return Err(Error::SectionOverflow { bits: bit_len });
        }
        Ok(Self { tag, payload: w.into_bytes(), bit_len })
    }

    /// On-disk size including the 5-byte frame.
    pub fn framed_bytes(&self) -> usize {
        5 + self.payload.len()
    }

    pub fn reader(&self) -> Result<BitReader<'_>> {
        BitReader::with_limit(&self.payload, self.bit_len)
    }
}

/// Serialize magic, version, and sections in order.
pub fn write_stream(sections: &[Section]) -> Vec<u8> {
    let total: usize = 5 + sections.iter().map(|s| s.framed_bytes()).sum::<usize>();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    for s in sections {
        out.push(s.tag as u8);
        out.extend_from_slice(&(s.bit_len as u32).to_le_bytes());
        out.extend_from_slice(&s.payload);
    }
    out
}

/// Parse a stream back into framed sections, validating magic, version,
/// frame lengths and payload padding.
pub fn read_stream(bytes: &[u8]) -> Result<Vec<Section>> {
    if bytes.len() < 5 {
        return Err(Error::BadMagic);
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes[4] != VERSION {
        return Err(Error::UnsupportedVersion(bytes[4]));
    }
    let mut sections = Vec::new();
    let mut pos = 5usize;
    while pos < bytes.len() {
        if bytes.len() - pos < 5 {
            return Err(Error::Malformed {
                offset: pos as u64 * 8,
                reason: "truncated section frame".into(),
            });
        }
        let tag = SectionTag::from_u8(bytes[pos], pos)?;
        let bit_len =
            u32::from_le_bytes([bytes[pos + 1], bytes[pos + 2], bytes[pos + 3], bytes[pos + 4]])
                as u64;
        let byte_len = bit_len.div_ceil(8) as usize;
        pos += 5;
        if bytes.len() - pos < byte_len {
            return Err(Error::Truncated {
                needed: byte_len as u64 * 8,
                available: (bytes.len() - pos) as u64 * 8,
            });
        }
        let payload = bytes[pos..pos + byte_len].to_vec();
        // Padding bits past bit_len must be zero.
        if bit_len % 8 != 0 {
            let last = payload[byte_len - 1];
            let pad = 8 - (bit_len % 8) as u32;
            if last & ((1u16 << pad) - 1) as u8 != 0 {
                return Err(Error::Malformed {
                    offset: (pos + byte_len) as u64 * 8 - pad as u64,
                    reason: "nonzero padding bits in section".into(),
                });
            }
        }
        pos += byte_len;
        sections.push(Section { tag, payload, bit_len });
    }
    Ok(sections)
}

/// Fixed-layout stream header. All multi-byte fields little-endian.
///
/// Byte layout of the header section payload (26 + 14 + ceil(T/8) bytes):
///
/// | field            | type        |
/// |------------------|-------------|
/// | schedule index   | u16         |
/// | T                | u16         |
/// | T_E              | u16         |
/// | tau              | u8 (x/255)  |
/// | flags            | u8          |
/// | seed             | u64         |
/// | tile size        | u16         |
/// | tile overlap     | u16         |
/// | per-tile tag cap | u16         |
/// | mask sigma       | u16 (8.8)   |
/// | kl target        | u16 (8.8)   |
/// | skip threshold   | u16 (8.8)   |
/// | vocab hash       | u64         |
/// | latent shape h,w | u16, u16    |
/// | skip bitmap      | ceil(T/8) B |
///
/// Skip bitmap bit `i` (MSB-first within bytes) marks coded state `z_{T-i}`
/// as skipped. Bits at i >= T_E and padding bits must be zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamHeader {
    pub schedule_index: u16,
    pub t: u16,
    pub t_e: u16,
    pub tau_q: u8,
    pub flags: u8,
    pub seed: u64,
    pub tile: u16,
    pub overlap: u16,
    pub tag_cap: u16,
    pub sigma_q: u16,
    pub kl_target_q: u16,
    pub skip_threshold_q: u16,
    pub vocab_hash: u64,
    pub shape: (u16, u16),
    /// One flag per potentially-skipped coded state, index 0 = z_T.
    pub skipped: Vec<bool>,
}

pub fn q8_encode(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn q8_decode(v: u8) -> f64 {
    v as f64 / 255.0
}

/// 8.8 fixed point for small nonnegative reals.
pub fn q88_encode(x: f64) -> u16 {
    (x.clamp(0.0, 255.99) * 256.0).round() as u16
}

pub fn q88_decode(v: u16) -> f64 {
    v as f64 / 256.0
}

impl StreamHeader {
    pub fn tau(&self) -> f64 {
        q8_decode(self.tau_q)
    }

    pub fn sigma_fraction(&self) -> f64 {
        q88_decode(self.sigma_q)
    }

    pub fn kl_target_bits(&self) -> f64 {
        q88_decode(self.kl_target_q)
    }

    pub fn skip_threshold_bits(&self) -> f64 {
        q88_decode(self.skip_threshold_q)
    }

    pub fn write(&self) -> Result<Section> {
        debug_assert_eq!(self.skipped.len(), self.t as usize);
        let mut b = Vec::with_capacity(40 + self.t.div_ceil(8) as usize);
        b.extend_from_slice(&self.schedule_index.to_le_bytes());
        b.extend_from_slice(&self.t.to_le_bytes());
        b.extend_from_slice(&self.t_e.to_le_bytes());
        b.push(self.tau_q);
        b.push(self.flags);
        b.extend_from_slice(&self.seed.to_le_bytes());
        b.extend_from_slice(&self.tile.to_le_bytes());
        b.extend_from_slice(&self.overlap.to_le_bytes());
        b.extend_from_slice(&self.tag_cap.to_le_bytes());
        b.extend_from_slice(&self.sigma_q.to_le_bytes());
        b.extend_from_slice(&self.kl_target_q.to_le_bytes());
        b.extend_from_slice(&self.skip_threshold_q.to_le_bytes());
        b.extend_from_slice(&self.vocab_hash.to_le_bytes());
        b.extend_from_slice(&self.shape.0.to_le_bytes());
        b.extend_from_slice(&self.shape.1.to_le_bytes());
        let mut bitmap = vec![0u8; self.t.div_ceil(8) as usize];
        for (i, &s) in self.skipped.iter().enumerate() {
            if s {
                bitmap[i / 8] |= 0x80 >> (i % 8);
            }
        }
        b.extend_from_slice(&bitmap);
        let bit_len = b.len() as u64 * 8;
        Ok(Section { tag: SectionTag::Header, payload: b, bit_len })
    }

    pub fn read(section: &Section) -> Result<Self> {
        if section.tag != SectionTag::Header {
            return Err(Error::Malformed { offset: 0, reason: "first section is not a header".into() });
        }
        let b = &section.payload;
        let need = |n: usize| -> Result<()> {
            if b.len() < n {
                Err(Error::Truncated { needed: n as u64 * 8, available: b.len() as u64 * 8 })
            } else {
                Ok(())
            }
        };
        need(40)?;
        let u16_at = |i: usize| u16::from_le_bytes([b[i], b[i + 1]]);
        let u64_at = |i: usize| {
            u64::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3], b[i + 4], b[i + 5], b[i + 6], b[i + 7]])
        };
        let schedule_index = u16_at(0);
        let t = u16_at(2);
        let t_e = u16_at(4);
        let tau_q = b[6];
        let flags = b[7];
        let seed = u64_at(8);
        let tile = u16_at(16);
        let overlap = u16_at(18);
        let tag_cap = u16_at(20);
        let sigma_q = u16_at(22);
        let kl_target_q = u16_at(24);
        let skip_threshold_q = u16_at(26);
        let vocab_hash = u64_at(28);
        let shape = (u16_at(36), u16_at(38));
        let bitmap_len = t.div_ceil(8) as usize;
        need(40 + bitmap_len)?;
        if b.len() != 40 + bitmap_len || section.bit_len != (40 + bitmap_len) as u64 * 8 {
            return Err(Error::Malformed {
                offset: section.bit_len,
                reason: format!("header length {} does not match T={}", b.len(), t),
            });
        }
        if flags & !FLAG_HINT_CONDITIONING != 0 {
            return Err(Error::Malformed { offset: 7 * 8, reason: "reserved header flags set".into() });
        }
        let bitmap = &b[40..40 + bitmap_len];
        let mut skipped = vec![false; t as usize];
        for (i, s) in skipped.iter_mut().enumerate() {
            *s = bitmap[i / 8] & (0x80 >> (i % 8)) != 0;
        }
        // Bits past T in the final bitmap byte must be zero.
        if t as usize % 8 != 0 {
            let tail = bitmap[bitmap_len - 1] & ((1u16 << (8 - t as usize % 8)) - 1) as u8;
            if tail != 0 {
                return Err(Error::Malformed {
                    offset: (40 + bitmap_len) as u64 * 8,
                    reason: "nonzero skip bitmap padding".into(),
                });
            }
        }
        Ok(Self {
            schedule_index,
            t,
            t_e,
            tau_q,
            flags,
            seed,
            tile,
            overlap,
            tag_cap,
            sigma_q,
            kl_target_q,
            skip_threshold_q,
            vocab_hash,
            shape,
            skipped,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_round_trip_patterns() {
        let mut w = BitWriter::new();
        let patterns: &[(u64, u32)] =
            &[(1, 1), (0, 1), (0b101, 3), (0xDEAD_BEEF, 32), (u64::MAX, 64), (0x1234, 13), (7, 64)];
        for &(v, k) in patterns {
            w.write_bits(v, k);
        }
        let total: u32 = patterns.iter().map(|&(_, k)| k).sum();
        assert_eq!(w.len_bits(), total as u64);
        let bytes = w.into_bytes();
        let mut r = BitReader::new(&bytes);
        for &(v, k) in patterns {
            let mask = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
            assert_eq!(r.read_bits(k).unwrap(), v & mask);
        }
        r.expect_zero_to_end().unwrap();
    }

    #[test]
    fn empty_section_is_five_bytes() {
        let s = Section::from_writer(SectionTag::Tags, BitWriter::new()).unwrap();
        assert_eq!(s.framed_bytes(), 5);
        let stream = write_stream(&[s]);
        assert_eq!(stream.len(), 5 + 5);
        let back = read_stream(&stream).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].bit_len, 0);
    }

    #[test]
    fn header_round_trip_and_fixed_size() {
        let h = StreamHeader {
            schedule_index: 0,
            t: 64,
            t_e: 17,
            tau_q: q8_encode(0.5),
            flags: FLAG_HINT_CONDITIONING,
            seed: 0xA5A5_0000_1234_5678,
            tile: 16,
            overlap: 8,
            tag_cap: 4,
            sigma_q: q88_encode(0.3),
            kl_target_q: q88_encode(12.0),
            skip_threshold_q: q88_encode(0.05),
            vocab_hash: 42,
            shape: (8, 8),
            skipped: (0..64).map(|i| i % 5 == 0).collect(),
        };
        let s = h.write().unwrap();
        assert_eq!(s.payload.len(), 40 + 8);
        let back = StreamHeader::read(&s).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn bad_magic_rejected() {
        let mut stream = write_stream(&[]);
        stream[0] = b'X';
        assert!(matches!(read_stream(&stream), Err(Error::BadMagic)));
    }

    #[test]
    fn unknown_version_rejected() {
        let mut stream = write_stream(&[]);
        stream[4] = 9;
        assert!(matches!(read_stream(&stream), Err(Error::UnsupportedVersion(9))));
    }

    #[test]
    fn nonzero_padding_rejected() {
        let mut w = BitWriter::new();
        w.write_bits(0b101, 3);
        let s = Section::from_writer(SectionTag::Rcc, w).unwrap();
        let mut stream = write_stream(&[s]);
        let last = stream.len() - 1;
        stream[last] |= 0x01; // flip a padding bit
        assert!(read_stream(&stream).is_err());
    }
}
