use std::fs;
use std::io::{BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::time::Instant;

use image::RgbImage;
use stabilens_core::camera::intrinsics_for_fov;
use stabilens_core::imaging::save_rgb;
use stabilens_core::render::{render_mesh, render_pointcloud, RenderConfig};
use stabilens_core::{PointCloud, Pose, TriangleMesh};

use crate::error::{Result, StreamError};
use crate::mailbox::LatestMailbox;
use crate::packet::read_packet;

pub const DEFAULT_PORT: u16 = 9750;

/// Produces one frame for a pose. Shared between sessions, so `&self`.
pub trait FrameRenderer: Send + Sync {
    fn render(&self, pose: &Pose, fov_deg: f64) -> Result<RgbImage>;
}

pub enum Scene {
    Cloud(PointCloud),
    Mesh(TriangleMesh),
}

/// Renders a fixed scene; the requested field of view widens or narrows
/// `base.intr` while keeping its image size and principal point.
pub struct SceneRenderer {
    scene: Scene,
    base: RenderConfig,
}

impl SceneRenderer {
    pub fn new(scene: Scene, base: RenderConfig) -> Result<Self> {
        base.validate()?;
        Ok(Self { scene, base })
    }
}

impl FrameRenderer for SceneRenderer {
    fn render(&self, pose: &Pose, fov_deg: f64) -> Result<RgbImage> {
        let cfg = RenderConfig {
            intr: intrinsics_for_fov(&self.base.intr, fov_deg)?,
            ..self.base
        };
        let out = match &self.scene {
            Scene::Cloud(pc) => render_pointcloud(pc, pose, &cfg)?,
            Scene::Mesh(m) => render_mesh(m, pose, &cfg)?,
        };
        Ok(out.image)
    }
}

pub trait FrameSink: Send {
    fn write_frame(&mut self, sequence: u32, image: &RgbImage) -> Result<()>;
}

/// Writes `<sequence>.png` into a directory.
pub struct PngDirSink {
    dir: PathBuf,
}

impl PngDirSink {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| StreamError::io(format!("creating {}", dir.display()), e))?;
        Ok(Self { dir: dir.to_path_buf() })
    }

    pub fn frame_path(&self, sequence: u32) -> PathBuf {
        self.dir.join(format!("{sequence}.png"))
    }
}

impl FrameSink for PngDirSink {
    fn write_frame(&mut self, sequence: u32, image: &RgbImage) -> Result<()> {
        save_rgb(image, &self.frame_path(sequence))?;
        Ok(())
    }
}

/// Raw stream: per frame a little-endian header (sequence, width, height as
/// u32) followed by packed RGB8 rows.
pub struct RawFrameSink<W: Write + Send> {
    out: BufWriter<W>,
}

impl<W: Write + Send> RawFrameSink<W> {
    pub fn new(out: W) -> Self {
        Self { out: BufWriter::new(out) }
    }
}

impl<W: Write + Send> FrameSink for RawFrameSink<W> {
    fn write_frame(&mut self, sequence: u32, image: &RgbImage) -> Result<()> {
        let mut write = || -> std::io::Result<()> {
            for v in [sequence, image.width(), image.height()] {
                self.out.write_all(&v.to_le_bytes())?;
            }
            self.out.write_all(image.as_raw())?;
            self.out.flush()
        };
        write().map_err(|e| StreamError::io("writing raw frame", e))
    }
}

pub struct DiscardSink;

impl FrameSink for DiscardSink {
    fn write_frame(&mut self, _: u32, _: &RgbImage) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionStats {
    /// Valid packets accepted from the client.
    pub poses_received: u64,
    pub frames_rendered: u64,
    /// Valid poses replaced by a newer one before they could be rendered.
    pub poses_dropped: u64,
    /// Packets dropped for unusable contents.
    pub packets_rejected: u64,
    pub rendered_sequences: Vec<u32>,
    /// Pose arrival to frame written, milliseconds.
    pub latency_mean_ms: f64,
    pub latency_p99_ms: f64,
    pub end_of_stream: bool,
    /// Why the session ended early, if it did.
    pub aborted: Option<String>,
}

impl SessionStats {
    pub fn summary_line(&self) -> String {
        format!(
            "frames {} | dropped {} | rejected {} | latency mean {:.1} ms p99 {:.1} ms{}",
            self.frames_rendered,
            self.poses_dropped,
            self.packets_rejected,
            self.latency_mean_ms,
            self.latency_p99_ms,
            self.aborted.as_deref().map(|a| format!(" | aborted: {a}")).unwrap_or_default()
        )
    }
}

/// Nearest-rank percentile of unsorted samples.
pub(crate) fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut s = samples.to_vec();
    s.sort_unstable_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

struct Pending {
    sequence: u32,
    pose: Pose,
    fov_deg: f64,
    arrived: Instant,
}

#[derive(Default)]
struct Received {
    valid: u64,
    rejected: u64,
    end_of_stream: bool,
    fatal: Option<String>,
}

fn receive(mut stream: TcpStream, mailbox: &LatestMailbox<Pending>) -> Received {
    let mut r = Received::default();
    loop {
        match read_packet(&mut stream) {
            Ok(None) => break,
            Ok(Some(Ok(pkt))) => {
                let arrived = Instant::now();
                // contents were validated by the decoder
                let pose = pkt.to_pose().expect("decoded pose is valid");
                r.valid += 1;
                mailbox.put(Pending {
                    sequence: pkt.sequence,
                    pose,
                    fov_deg: pkt.fov_deg as f64,
                    arrived,
                });
                if pkt.end_of_stream() {
                    r.end_of_stream = true;
                    break;
                }
            }
            Ok(Some(Err(e))) if !e.is_fatal() => {
                log::warn!("dropping packet: {e}");
                r.rejected += 1;
            }
            Ok(Some(Err(e))) => {
                r.fatal = Some(e.to_string());
                mailbox.abort();
                return r;
            }
            Err(e) => {
                log::warn!("connection lost: {e}");
                break;
            }
        }
    }
    mailbox.close();
    r
}

pub struct RenderServer {
    listener: TcpListener,
}

impl RenderServer {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(|e| StreamError::io("binding listener", e))?;
        Ok(Self { listener })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener.local_addr().map_err(|e| StreamError::io("reading local address", e))
    }

    /// Accepts one client and serves it until end of stream, disconnect, or
    /// a fatal packet. Packet receipt and rendering run concurrently and only
    /// share the single-slot mailbox.
    pub fn serve_one(&self, renderer: &dyn FrameRenderer, sink: &mut dyn FrameSink) -> Result<SessionStats> {
        let (stream, peer) = self.listener.accept().map_err(|e| StreamError::io("accepting client", e))?;
        log::info!("client connected from {peer}");
        // best effort, small packets should not wait for coalescing
        stream.set_nodelay(true).ok();
        let reader = stream.try_clone().map_err(|e| StreamError::io("cloning socket", e))?;
        let mailbox = LatestMailbox::new();

        let mut stats = SessionStats::default();
        let mut latencies = Vec::new();
        let received = std::thread::scope(|scope| {
            let rx = scope.spawn(|| receive(reader, &mailbox));
            while let Some(p) = mailbox.take() {
                let frame = renderer
                    .render(&p.pose, p.fov_deg)
                    .and_then(|img| sink.write_frame(p.sequence, &img));
                if let Err(e) = frame {
                    stats.aborted = Some(format!("frame {}: {e}", p.sequence));
                    mailbox.abort();
                    // unblocks the reader
                    stream.shutdown(Shutdown::Both).ok();
                    break;
                }
                latencies.push(p.arrived.elapsed().as_secs_f64() * 1e3);
                stats.rendered_sequences.push(p.sequence);
            }
            rx.join().expect("receiver thread panicked")
        });

        stats.poses_received = received.valid;
        stats.packets_rejected = received.rejected;
        stats.end_of_stream = received.end_of_stream;
        stats.frames_rendered = stats.rendered_sequences.len() as u64;
        stats.poses_dropped = mailbox.overwritten();
        if stats.aborted.is_none() {
            stats.aborted = received.fatal;
        }
        if !latencies.is_empty() {
            stats.latency_mean_ms = latencies.iter().sum::<f64>() / latencies.len() as f64;
            stats.latency_p99_ms = percentile(&latencies, 99.0);
        }
        log::info!("session over: {}", stats.summary_line());
        Ok(stats)
    }
}

/// Binds, serves one client, and returns its statistics.
pub fn run_render_server(
    addr: impl ToSocketAddrs,
    renderer: &dyn FrameRenderer,
    sink: &mut dyn FrameSink,
) -> Result<SessionStats> {
    RenderServer::bind(addr)?.serve_one(renderer, sink)
}
