use std::io::Write;
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use stabilens_core::Pose;

use crate::error::{Result, StreamError};
use crate::packet::{PosePacket, FLAG_END_OF_STREAM, PACKET_LEN};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    /// Replays the gaps between the original capture timestamps.
    Timestamps,
    /// Fixed packets per second.
    FixedRate(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub timestamp_us: u64,
    pub pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SendStats {
    pub packets_sent: usize,
    /// First packet to last packet.
    pub elapsed: Duration,
}

/// Send offset of every packet relative to the first.
fn schedule(poses: &[TimedPose], pacing: Pacing) -> Result<Vec<Duration>> {
    match pacing {
        Pacing::FixedRate(hz) => {
            if !(hz > 0.0 && hz.is_finite()) {
                return Err(StreamError::InvalidInput(format!("rate must be positive, got {hz}")));
            }
            Ok((0..poses.len()).map(|i| Duration::from_secs_f64(i as f64 / hz)).collect())
        }
        Pacing::Timestamps => {
            let t0 = poses[0].timestamp_us;
            poses
                .iter()
                .map(|p| {
                    p.timestamp_us
                        .checked_sub(t0)
                        .map(Duration::from_micros)
                        .ok_or_else(|| StreamError::InvalidInput("timestamps must not decrease".into()))
                })
                .collect::<Result<Vec<_>>>()
                .and_then(|d| {
                    if d.windows(2).all(|w| w[0] <= w[1]) {
                        Ok(d)
                    } else {
                        Err(StreamError::InvalidInput("timestamps must not decrease".into()))
                    }
                })
        }
    }
}

/// Writes one packet per pose to `out`, paced as requested. Sequence numbers
/// are list positions; the last packet carries the end-of-stream flag.
pub fn send_poses<W: Write>(out: &mut W, poses: &[TimedPose], fov_deg: f64, pacing: Pacing) -> Result<SendStats> {
    if poses.is_empty() {
        return Err(StreamError::InvalidInput("pose list is empty".into()));
    }
    let offsets = schedule(poses, pacing)?;
    let last = poses.len() - 1;
    let packets: Vec<[u8; PACKET_LEN]> = poses
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let flags = if i == last { FLAG_END_OF_STREAM } else { 0 };
            Ok(PosePacket::new(i as u32, p.timestamp_us, &p.pose, fov_deg, flags)?.encode())
        })
        .collect::<Result<_>>()?;

    let start = Instant::now();
    for (i, (bytes, offset)) in packets.iter().zip(&offsets).enumerate() {
        let target = start + *offset;
        let now = Instant::now();
        if target > now {
            std::thread::sleep(target - now);
        }
        out.write_all(bytes).and_then(|_| out.flush()).map_err(|source| StreamError::Send {
            sent: i,
            total: poses.len(),
            source,
        })?;
    }
    Ok(SendStats {
        packets_sent: packets.len(),
        elapsed: start.elapsed(),
    })
}

/// Connects to a render server and streams `poses` to it.
pub fn run_pose_client(addr: impl ToSocketAddrs, poses: &[TimedPose], fov_deg: f64, pacing: Pacing) -> Result<SendStats> {
    if poses.is_empty() {
        return Err(StreamError::InvalidInput("pose list is empty".into()));
    }
    let mut stream = TcpStream::connect(addr).map_err(|e| StreamError::io("connecting to server", e))?;
    stream.set_nodelay(true).ok();
    let stats = send_poses(&mut stream, poses, fov_deg, pacing)?;
    log::info!("sent {} packets in {:.2?}", stats.packets_sent, stats.elapsed);
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::packet::decode_pose_packet;

    fn poses(n: usize, period_us: u64) -> Vec<TimedPose> {
        (0..n)
            .map(|i| TimedPose {
                timestamp_us: 1_000_000 + i as u64 * period_us,
                pose: Pose::from_translation(nalgebra::Vector3::new(i as f64, 0.0, 0.0)),
            })
            .collect()
    }

    #[test]
    fn fixed_rate_pacing() {
        let mut buf = Vec::new();
        let s = send_poses(&mut buf, &poses(5, 1), 90.0, Pacing::FixedRate(10.0)).unwrap();
        assert_eq!(s.packets_sent, 5);
        let ms = s.elapsed.as_secs_f64() * 1e3;
        assert!((320.0..=480.0).contains(&ms), "{ms} ms");
        assert_eq!(buf.len(), 5 * PACKET_LEN);
        let last = decode_pose_packet(&buf[4 * PACKET_LEN..]).unwrap();
        assert!(last.end_of_stream() && last.sequence == 4);
        assert!(!decode_pose_packet(&buf[..]).unwrap().end_of_stream());
    }

    #[test]
    fn timestamp_pacing_replays_capture_rate() {
        // 25 Hz capture, 10 frames span 360 ms
        let mut buf = Vec::new();
        let s = send_poses(&mut buf, &poses(10, 40_000), 90.0, Pacing::Timestamps).unwrap();
        let ms = s.elapsed.as_secs_f64() * 1e3;
        assert!((288.0..=432.0).contains(&ms), "{ms} ms");
    }

    #[test]
    fn rejects_bad_input() {
        let mut buf = Vec::new();
        assert!(send_poses(&mut buf, &[], 90.0, Pacing::Timestamps).is_err());
        assert!(send_poses(&mut buf, &poses(2, 1), 90.0, Pacing::FixedRate(0.0)).is_err());
        assert!(send_poses(&mut buf, &poses(2, 1), 0.0, Pacing::FixedRate(1.0)).is_err());
        let mut back = poses(3, 10);
        back.swap(0, 2);
        assert!(send_poses(&mut buf, &back, 90.0, Pacing::Timestamps).is_err());
        assert!(buf.is_empty());
    }

    #[test]
    fn send_failure_reports_progress() {
        struct Fails(usize);
        impl Write for Fails {
            fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
                if self.0 == 0 {
                    return Err(std::io::Error::new(std::io::ErrorKind::BrokenPipe, "gone"));
                }
                self.0 -= 1;
                Ok(b.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let e = send_poses(&mut Fails(2), &poses(4, 1), 90.0, Pacing::FixedRate(1000.0)).unwrap_err();
        assert!(matches!(e, StreamError::Send { sent: 2, total: 4, .. }));
    }
}
