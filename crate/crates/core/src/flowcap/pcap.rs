//! Classic libpcap file reading and writing.
//!
//! Only the classic format is handled (not pcapng). Both byte orders and both
//! timestamp resolutions are accepted:
//!
//! | magic (as read in file order) | byte order | resolution   |
//! |-------------------------------|------------|--------------|
//! | `a1 b2 c3 d4` / `d4 c3 b2 a1` | BE / LE    | microseconds |
//! | `a1 b2 3c 4d` / `4d 3c b2 a1` | BE / LE    | nanoseconds  |
//!
//! Timestamps are kept as integer nanoseconds so that a parse/write round
//! trip is exact at the file's native resolution.

use std::io::{Read, Write};

use super::{FlowcapError, Packet};

pub const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
pub const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
pub const LINKTYPE_ETHERNET: u32 = 1;

const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsResolution {
    Micros,
    Nanos,
}

impl TsResolution {
    fn frac_to_nanos(self, frac: u32) -> u64 {
        match self {
            TsResolution::Micros => u64::from(frac) * 1_000,
            TsResolution::Nanos => u64::from(frac),
        }
    }

    fn nanos_to_frac(self, nanos: u64) -> u32 {
        match self {
            TsResolution::Micros => (nanos / 1_000) as u32,
            TsResolution::Nanos => nanos as u32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ByteOrder {
    Little,
    Big,
}

impl ByteOrder {
    fn u32(self, b: &[u8]) -> u32 {
        let arr = [b[0], b[1], b[2], b[3]];
        match self {
            ByteOrder::Little => u32::from_le_bytes(arr),
            ByteOrder::Big => u32::from_be_bytes(arr),
        }
    }
}

/// A parsed capture file.
#[derive(Debug, Clone, PartialEq)]
pub struct Capture {
    pub resolution: TsResolution,
    pub link_type: u32,
    pub snaplen: u32,
    pub packets: Vec<Packet>,
}

/// Reads a whole classic pcap stream.
pub fn parse_pcap<R: Read>(mut source: R) -> Result<Capture, FlowcapError> {
    let mut buf = Vec::new();
    source.read_to_end(&mut buf)?;
    parse_pcap_bytes(&buf)
}

pub fn parse_pcap_bytes(buf: &[u8]) -> Result<Capture, FlowcapError> {
    if buf.len() < 4 {
        return Err(FlowcapError::TruncatedHeader { offset: 0 });
    }
    let le = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]);
    let (order, resolution) = match le {
        MAGIC_MICROS => (ByteOrder::Little, TsResolution::Micros),
        MAGIC_NANOS => (ByteOrder::Little, TsResolution::Nanos),
        m if m.swap_bytes() == MAGIC_MICROS => (ByteOrder::Big, TsResolution::Micros),
        m if m.swap_bytes() == MAGIC_NANOS => (ByteOrder::Big, TsResolution::Nanos),
        m => return Err(FlowcapError::UnknownMagic { magic: m }),
    };
    if buf.len() < GLOBAL_HEADER_LEN {
        return Err(FlowcapError::TruncatedHeader { offset: buf.len() });
    }
    let snaplen = order.u32(&buf[16..20]);
    let link_type = order.u32(&buf[20..24]);

    let mut packets = Vec::new();
    let mut off = GLOBAL_HEADER_LEN;
    while off < buf.len() {
        if buf.len() - off < RECORD_HEADER_LEN {
            return Err(FlowcapError::TruncatedRecord { offset: off });
        }
        let h = &buf[off..off + RECORD_HEADER_LEN];
        let secs = u64::from(order.u32(&h[0..4]));
        let frac = order.u32(&h[4..8]);
        let incl_len = order.u32(&h[8..12]) as usize;
        let orig_len = order.u32(&h[12..16]);
        let body = off + RECORD_HEADER_LEN;
        if buf.len() - body < incl_len {
            return Err(FlowcapError::TruncatedRecord { offset: off });
        }
        packets.push(Packet {
            ts_ns: secs * 1_000_000_000 + resolution.frac_to_nanos(frac),
            bytes: buf[body..body + incl_len].to_vec(),
            orig_len,
        });
        off = body + incl_len;
    }

    Ok(Capture {
        resolution,
        link_type,
        snaplen,
        packets,
    })
}

/// Writes a little-endian classic pcap with Ethernet link type.
///
/// Sub-resolution nanoseconds are truncated when writing microsecond files.
pub fn write_pcap<W: Write>(
    mut out: W,
    packets: &[Packet],
    resolution: TsResolution,
) -> Result<(), FlowcapError> {
    let magic = match resolution {
        TsResolution::Micros => MAGIC_MICROS,
        TsResolution::Nanos => MAGIC_NANOS,
    };
    let snaplen = packets
        .iter()
        .map(|p| p.bytes.len() as u32)
        .max()
        .unwrap_or(0)
        .max(65_535);
    let mut header = Vec::with_capacity(GLOBAL_HEADER_LEN);
    header.extend_from_slice(&magic.to_le_bytes());
    header.extend_from_slice(&2u16.to_le_bytes());
    header.extend_from_slice(&4u16.to_le_bytes());
    header.extend_from_slice(&0i32.to_le_bytes()); // thiszone
    header.extend_from_slice(&0u32.to_le_bytes()); // sigfigs
    header.extend_from_slice(&snaplen.to_le_bytes());
    header.extend_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
    out.write_all(&header)?;

    for p in packets {
        let secs = p.ts_ns / 1_000_000_000;
        let frac = resolution.nanos_to_frac(p.ts_ns % 1_000_000_000);
        let mut rec = Vec::with_capacity(RECORD_HEADER_LEN + p.bytes.len());
        rec.extend_from_slice(&(secs as u32).to_le_bytes());
        rec.extend_from_slice(&frac.to_le_bytes());
        rec.extend_from_slice(&(p.bytes.len() as u32).to_le_bytes());
        rec.extend_from_slice(&p.orig_len.max(p.bytes.len() as u32).to_le_bytes());
        rec.extend_from_slice(&p.bytes);
        out.write_all(&rec)?;
    }
    Ok(())
}
