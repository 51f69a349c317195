//! Fixed-size pose record.
//!
//! Layout (little-endian):
//!
//! | bytes  | field                                   |
//! |--------|-----------------------------------------|
//! | 0..4   | magic `HLPS`                            |
//! | 4      | version (1)                             |
//! | 5      | flags (bit 0: end of stream)            |
//! | 6..10  | sequence, u32                           |
//! | 10..18 | timestamp in microseconds, u64          |
//! | 18..66 | row-major 3x4 camera-to-world, 12 x f32 |
//! | 66..70 | horizontal field of view in degrees, f32|
//! | 70..74 | reserved, zero                          |
//! | 74..78 | CRC-32 (IEEE) of bytes 0..74            |

use std::io::{self, Read};

use nalgebra::{Matrix3, Vector3};
use stabilens_core::Pose;

pub const PACKET_LEN: usize = 78;
pub const MAGIC: [u8; 4] = *b"HLPS";
pub const VERSION: u8 = 1;
pub const FLAG_END_OF_STREAM: u8 = 0x01;
/// Decoded rotations may deviate this much from orthonormal (f32 payload).
pub const ROTATION_TOLERANCE: f64 = 1e-3;

const CRC_OFFSET: usize = 74;
const RESERVED: std::ops::Range<usize> = 70..74;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PacketError {
    #[error("truncated packet: {available} of {PACKET_LEN} bytes")]
    Truncated { available: usize },

    /// Not our protocol, or a version we do not speak.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The bytes were damaged; the connection can no longer be trusted.
    #[error("integrity error: crc {computed:#010x} != {stored:#010x}")]
    Integrity { stored: u32, computed: u32 },

    /// Well-formed packet with unusable contents; drop it and keep going.
    #[error("semantic error: {0}")]
    Semantic(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl PacketError {
    /// Whether the stream should be abandoned after this error.
    pub fn is_fatal(&self) -> bool {
        !matches!(self, PacketError::Semantic(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosePacket {
    pub flags: u8,
    pub sequence: u32,
    pub timestamp_us: u64,
    /// Row-major `[R | t]`.
    pub pose: [f32; 12],
    pub fov_deg: f32,
}

impl PosePacket {
    pub fn new(sequence: u32, timestamp_us: u64, pose: &Pose, fov_deg: f64, flags: u8) -> Result<Self, PacketError> {
        if !(fov_deg > 0.0 && fov_deg < 180.0) {
            return Err(PacketError::InvalidInput(format!("fov must be in (0, 180) degrees, got {fov_deg}")));
        }
        Ok(Self {
            flags,
            sequence,
            timestamp_us,
            pose: pose.to_row_major_3x4().map(|v| v as f32),
            fov_deg: fov_deg as f32,
        })
    }

    pub fn end_of_stream(&self) -> bool {
        self.flags & FLAG_END_OF_STREAM != 0
    }

    pub fn to_pose(&self) -> Result<Pose, PacketError> {
        let m = self.pose.map(f64::from);
        let r = Matrix3::new(m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]);
        let t = Vector3::new(m[3], m[7], m[11]);
        Pose::with_tolerance(r, t, ROTATION_TOLERANCE).map_err(|e| PacketError::Semantic(e.to_string()))
    }

    pub fn encode(&self) -> [u8; PACKET_LEN] {
        let mut b = [0u8; PACKET_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4] = VERSION;
        b[5] = self.flags;
        b[6..10].copy_from_slice(&self.sequence.to_le_bytes());
        b[10..18].copy_from_slice(&self.timestamp_us.to_le_bytes());
        for (i, v) in self.pose.iter().enumerate() {
            b[18 + 4 * i..22 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        b[66..70].copy_from_slice(&self.fov_deg.to_le_bytes());
        let crc = crc32fast::hash(&b[..CRC_OFFSET]);
        b[CRC_OFFSET..].copy_from_slice(&crc.to_le_bytes());
        b
    }

    fn check_contents(&self) -> Result<(), PacketError> {
        if !self.pose.iter().all(|v| v.is_finite()) {
            return Err(PacketError::Semantic("pose has non-finite entries".into()));
        }
        if !(self.fov_deg > 0.0 && self.fov_deg < 180.0) {
            return Err(PacketError::Semantic(format!("fov {} outside (0, 180)", self.fov_deg)));
        }
        self.to_pose().map(|_| ())
    }
}

pub fn encode_pose_packet(
    sequence: u32,
    timestamp_us: u64,
    pose: &Pose,
    fov_deg: f64,
    flags: u8,
) -> Result<[u8; PACKET_LEN], PacketError> {
    Ok(PosePacket::new(sequence, timestamp_us, pose, fov_deg, flags)?.encode())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

/// Decodes the first [`PACKET_LEN`] bytes of `bytes`. Checks run in order
/// magic, version, crc, reserved, contents, so a damaged header reports as a
/// protocol error and damaged payload as an integrity error.
pub fn decode_pose_packet(bytes: &[u8]) -> Result<PosePacket, PacketError> {
    if bytes.len() < PACKET_LEN {
        return Err(PacketError::Truncated { available: bytes.len() });
    }
    let b = &bytes[..PACKET_LEN];
    if b[0..4] != MAGIC {
        return Err(PacketError::Protocol(format!("bad magic {:02x?}", &b[0..4])));
    }
    if b[4] != VERSION {
        return Err(PacketError::Protocol(format!("unsupported version {}", b[4])));
    }
    let stored = u32_at(b, CRC_OFFSET);
    let computed = crc32fast::hash(&b[..CRC_OFFSET]);
    if stored != computed {
        return Err(PacketError::Integrity { stored, computed });
    }
    if b[RESERVED].iter().any(|&x| x != 0) {
        return Err(PacketError::Protocol("reserved bytes are not zero".into()));
    }
    let mut pose = [0f32; 12];
    for (i, v) in pose.iter_mut().enumerate() {
        *v = f32::from_bits(u32_at(b, 18 + 4 * i));
    }
    let packet = PosePacket {
        flags: b[5],
        sequence: u32_at(b, 6),
        timestamp_us: u64::from_le_bytes(b[10..18].try_into().unwrap()),
        pose,
        fov_deg: f32::from_bits(u32_at(b, 66)),
    };
    packet.check_contents()?;
    Ok(packet)
}

/// Reads one packet. `Ok(None)` on a clean end of stream at a packet boundary.
pub fn read_packet<R: Read>(r: &mut R) -> io::Result<Option<Result<PosePacket, PacketError>>> {
    let mut buf = [0u8; PACKET_LEN];
    let mut filled = 0;
    while filled < PACKET_LEN {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Ok(Some(Err(PacketError::Truncated { available: filled }))),
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(Some(decode_pose_packet(&buf)))
}
