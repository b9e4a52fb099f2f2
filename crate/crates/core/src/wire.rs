//! Framed binary block protocol.
//!
//! Every message is one frame: a fixed 27-byte header followed by an
//! optional payload. All integers are little-endian.
//!
//! ```text
//! offset  size  field
//!      0     4  magic 0x46 0x42 0x53 0x4F ("FBSO")
//!      4     1  version (1)
//!      5     1  opcode; 1=READ 2=WRITE 3=FLUSH 4=INFO, responses OR 0x80
//!      6     8  request id
//!     14     8  offset in bytes
//!     22     4  length in bytes
//!     26     1  status (0 in requests)
//!     27     n  payload
//! ```
//!
//! Payload-bearing frames: WRITE requests and READ/INFO responses, with
//! `length` equal to the payload size. READ requests set `length` to the
//! byte count requested and carry nothing. READ responses deliver data for
//! OK and PARITY_MISMATCH statuses and are empty otherwise. INFO responses
//! carry 12 bytes of geometry: block size (u32) then block count (u64).
//!
//! `length` never exceeds 128 KiB; request ids must be unique within the
//! sender's in-flight window.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::block::{DeviceGeometry, IoStatus, MAX_IO_BYTES};

pub const MAGIC: [u8; 4] = *b"FBSO";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 27;
const RESPONSE_BIT: u8 = 0x80;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Read = 1,
    Write = 2,
    Flush = 3,
    Info = 4,
}

impl Opcode {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => Opcode::Read,
            2 => Opcode::Write,
            3 => Opcode::Flush,
            4 => Opcode::Info,
            _ => return None,
        })
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported protocol version {0}")]
    BadVersion(u8),
    #[error("unknown opcode {0:#04x}")]
    BadOpcode(u8),
    #[error("unknown status code {0}")]
    BadStatus(u8),
    #[error("length {0} exceeds the {MAX_IO_BYTES} byte frame limit")]
    Oversize(u32),
    #[error("length field {length} does not match payload of {payload} bytes")]
    LengthMismatch { length: u32, payload: usize },
    #[error("payload not allowed on this frame type")]
    UnexpectedPayload,
}

impl WireError {
    /// Status a server reports back before resetting a broken connection.
    pub fn as_status(&self) -> IoStatus {
        match self {
            WireError::Oversize(_) => IoStatus::SizeLimit,
            _ => IoStatus::IoError,
        }
    }
}

/// One protocol message, request or response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub opcode: Opcode,
    pub response: bool,
    pub request_id: u64,
    pub offset: u64,
    pub length: u32,
    pub status: IoStatus,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn read_request(request_id: u64, offset: u64, length: u32) -> Self {
        Frame {
            opcode: Opcode::Read,
            response: false,
            request_id,
            offset,
            length,
            status: IoStatus::Ok,
            payload: Vec::new(),
        }
    }

    pub fn write_request(request_id: u64, offset: u64, payload: Vec<u8>) -> Self {
        Frame {
            opcode: Opcode::Write,
            response: false,
            request_id,
            offset,
            length: payload.len() as u32,
            status: IoStatus::Ok,
            payload,
        }
    }

    pub fn flush_request(request_id: u64) -> Self {
        Frame {
            opcode: Opcode::Flush,
            response: false,
            request_id,
            offset: 0,
            length: 0,
            status: IoStatus::Ok,
            payload: Vec::new(),
        }
    }

    pub fn info_request(request_id: u64) -> Self {
        Frame {
            opcode: Opcode::Info,
            response: false,
            request_id,
            offset: 0,
            length: 0,
            status: IoStatus::Ok,
            payload: Vec::new(),
        }
    }

    /// Response mirroring a request, with the given status and payload.
    pub fn response_to(opcode: Opcode, request_id: u64, offset: u64, status: IoStatus, payload: Vec<u8>) -> Self {
        Frame {
            opcode,
            response: true,
            request_id,
            offset,
            length: payload.len() as u32,
            status,
            payload,
        }
    }

    pub fn info_response(request_id: u64, geometry: DeviceGeometry) -> Self {
        Frame::response_to(Opcode::Info, request_id, 0, IoStatus::Ok, encode_geometry(geometry))
    }

    fn carries_payload(&self) -> bool {
        matches!(
            (self.opcode, self.response),
            (Opcode::Write, false) | (Opcode::Read, true) | (Opcode::Info, true)
        )
    }

    pub fn encode(&self) -> Result<Vec<u8>, WireError> {
        if self.length > MAX_IO_BYTES {
            return Err(WireError::Oversize(self.length));
        }
        if self.carries_payload() {
            if self.payload.len() != self.length as usize {
                return Err(WireError::LengthMismatch {
                    length: self.length,
                    payload: self.payload.len(),
                });
            }
        } else if !self.payload.is_empty() {
            return Err(WireError::UnexpectedPayload);
        }
        let mut buf = Vec::with_capacity(HEADER_LEN + self.payload.len());
        buf.extend_from_slice(&MAGIC);
        buf.push(VERSION);
        let mut opcode = self.opcode as u8;
        if self.response {
            opcode |= RESPONSE_BIT;
        }
        buf.push(opcode);
        buf.extend_from_slice(&self.request_id.to_le_bytes());
        buf.extend_from_slice(&self.offset.to_le_bytes());
        buf.extend_from_slice(&self.length.to_le_bytes());
        buf.push(if self.response { self.status.code() } else { 0 });
        buf.extend_from_slice(&self.payload);
        Ok(buf)
    }

    /// Writes one encoded frame to a stream.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), WireError> {
        let bytes = self.encode()?;
        w.write_all(&bytes)?;
        Ok(())
    }

    /// Reads exactly one frame from a stream.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Frame, WireError> {
        let mut header = [0u8; HEADER_LEN];
        r.read_exact(&mut header)?;
        let frame = Self::parse_header(&header)?;
        Self::finish_decode(frame, r)
    }

    /// Decodes one frame from a byte slice, returning leftover bytes.
    pub fn decode(bytes: &[u8]) -> Result<(Frame, &[u8]), WireError> {
        if bytes.len() < HEADER_LEN {
            return Err(WireError::Io(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "truncated header",
            )));
        }
        let mut header = [0u8; HEADER_LEN];
        header.copy_from_slice(&bytes[..HEADER_LEN]);
        let frame = Self::parse_header(&header)?;
        let mut rest = &bytes[HEADER_LEN..];
        let frame = Self::finish_decode(frame, &mut rest)?;
        Ok((frame, rest))
    }

    fn parse_header(header: &[u8; HEADER_LEN]) -> Result<Frame, WireError> {
        let magic: [u8; 4] = header[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(WireError::BadMagic(magic));
        }
        if header[4] != VERSION {
            return Err(WireError::BadVersion(header[4]));
        }
        let raw_opcode = header[5];
        let opcode = Opcode::from_code(raw_opcode & !RESPONSE_BIT)
            .ok_or(WireError::BadOpcode(raw_opcode))?;
        let response = raw_opcode & RESPONSE_BIT != 0;
        let request_id = u64::from_le_bytes(header[6..14].try_into().unwrap());
        let offset = u64::from_le_bytes(header[14..22].try_into().unwrap());
        let length = u32::from_le_bytes(header[22..26].try_into().unwrap());
        if length > MAX_IO_BYTES {
            return Err(WireError::Oversize(length));
        }
        let status = IoStatus::from_code(header[26]).ok_or(WireError::BadStatus(header[26]))?;
        Ok(Frame { opcode, response, request_id, offset, length, status, payload: Vec::new() })
    }

    fn finish_decode<R: Read>(mut frame: Frame, r: &mut R) -> Result<Frame, WireError> {
        if frame.carries_payload() {
            let mut payload = vec![0u8; frame.length as usize];
            r.read_exact(&mut payload)?;
            frame.payload = payload;
        }
        Ok(frame)
    }
}

pub fn encode_geometry(geometry: DeviceGeometry) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12);
    buf.extend_from_slice(&geometry.block_size.to_le_bytes());
    buf.extend_from_slice(&geometry.block_count.to_le_bytes());
    buf
}

pub fn decode_geometry(payload: &[u8]) -> Result<DeviceGeometry, WireError> {
    if payload.len() != 12 {
        return Err(WireError::Io(io::Error::new(
            io::ErrorKind::InvalidData,
            "geometry payload must be 12 bytes",
        )));
    }
    Ok(DeviceGeometry {
        block_size: u32::from_le_bytes(payload[0..4].try_into().unwrap()),
        block_count: u64::from_le_bytes(payload[4..12].try_into().unwrap()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    #[test]
    fn read_request_header_is_bit_exact() {
        let frame = Frame::read_request(1, 0, 4096);
        let bytes = frame.encode().unwrap();
        let expected = [
            0x46, 0x42, 0x53, 0x4F, // magic
            0x01, // version
            0x01, // READ request
            0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, // id = 1
            0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, // offset = 0
            0x00, 0x10, 0x00, 0x00, // length = 4096
            0x00, // status
        ];
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), HEADER_LEN);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = Frame::flush_request(9).encode().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Frame::decode(&bytes), Err(WireError::BadMagic(_))));
    }

    #[test]
    fn bad_version_opcode_status_are_rejected() {
        let template = Frame::flush_request(9).encode().unwrap();
        let mut bad = template.clone();
        bad[4] = 2;
        assert!(matches!(Frame::decode(&bad), Err(WireError::BadVersion(2))));
        let mut bad = template.clone();
        bad[5] = 0x7;
        assert!(matches!(Frame::decode(&bad), Err(WireError::BadOpcode(0x7))));
        let mut bad = template;
        bad[26] = 9;
        assert!(matches!(Frame::decode(&bad), Err(WireError::BadStatus(9))));
    }

    #[test]
    fn oversize_length_is_rejected_before_encoding() {
        let frame = Frame::read_request(1, 0, MAX_IO_BYTES + 1);
        assert!(matches!(frame.encode(), Err(WireError::Oversize(_))));
        let payload = vec![0u8; MAX_IO_BYTES as usize + 1];
        let frame = Frame::write_request(1, 0, payload);
        assert!(matches!(frame.encode(), Err(WireError::Oversize(_))));
    }

    #[test]
    fn truncated_frames_error() {
        let frame = Frame::write_request(3, 512, vec![7u8; 512]);
        let bytes = frame.encode().unwrap();
        assert!(Frame::decode(&bytes[..HEADER_LEN - 1]).is_err());
        assert!(Frame::decode(&bytes[..HEADER_LEN + 100]).is_err());
    }

    #[test]
    fn geometry_payload_round_trips() {
        let geometry = DeviceGeometry { block_size: 4096, block_count: 1 << 20 };
        let payload = encode_geometry(geometry);
        assert_eq!(payload.len(), 12);
        assert_eq!(decode_geometry(&payload).unwrap(), geometry);
        assert!(decode_geometry(&payload[..8]).is_err());
    }

    /// Codec law: decode(encode(frame)) is the identity on randomized
    /// frames of every opcode, direction, and status.
    #[test]
    fn random_frames_round_trip() {
        let mut rng = StdRng::seed_from_u64(77);
        for _ in 0..2000 {
            let opcode = match rng.gen_range(1..=4) {
                1 => Opcode::Read,
                2 => Opcode::Write,
                3 => Opcode::Flush,
                _ => Opcode::Info,
            };
            let response = rng.gen_bool(0.5);
            let status = if response {
                IoStatus::from_code(rng.gen_range(0..=5)).unwrap()
            } else {
                IoStatus::Ok
            };
            let mut frame = Frame {
                opcode,
                response,
                request_id: rng.gen(),
                offset: rng.gen_range(0..1 << 40),
                length: 0,
                status,
                payload: Vec::new(),
            };
            let carries = matches!(
                (opcode, response),
                (Opcode::Write, false) | (Opcode::Read, true) | (Opcode::Info, true)
            );
            if carries {
                let len = rng.gen_range(0..2048usize);
                let mut payload = vec![0u8; len];
                rng.fill(payload.as_mut_slice());
                frame.payload = payload;
                frame.length = len as u32;
            } else if opcode == Opcode::Read && !response {
                frame.length = rng.gen_range(0..=MAX_IO_BYTES);
            }
            let bytes = frame.encode().unwrap();
            let (decoded, rest) = Frame::decode(&bytes).unwrap();
            assert_eq!(decoded, frame);
            assert!(rest.is_empty());
        }
    }

    #[test]
    fn sequential_frames_decode_from_one_buffer() {
        let a = Frame::read_request(1, 0, 512).encode().unwrap();
        let b = Frame::write_request(2, 512, vec![9u8; 512]).encode().unwrap();
        let mut buf = a.clone();
        buf.extend_from_slice(&b);
        let (first, rest) = Frame::decode(&buf).unwrap();
        assert_eq!(first.request_id, 1);
        let (second, rest) = Frame::decode(rest).unwrap();
        assert_eq!(second.request_id, 2);
        assert_eq!(second.payload.len(), 512);
        assert!(rest.is_empty());
    }
}
