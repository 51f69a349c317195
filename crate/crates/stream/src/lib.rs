//! Live half of the pipeline: a viewer streams head poses over TCP and the
//! server answers each with a frame rendered from the offline reconstruction
//! at the requested field of view.
//!
//! Rendering is slower than the pose rate, so the server keeps only the
//! newest pose ([`LatestMailbox`]); stale poses are dropped and counted.

pub mod client;
pub mod error;
pub mod mailbox;
pub mod packet;
pub mod server;

pub use client::{run_pose_client, send_poses, Pacing, SendStats, TimedPose};
pub use error::{Result, StreamError};
pub use mailbox::LatestMailbox;
pub use packet::{decode_pose_packet, encode_pose_packet, PacketError, PosePacket, PACKET_LEN};
pub use server::{
    run_render_server, DiscardSink, FrameRenderer, FrameSink, PngDirSink, RawFrameSink, RenderServer, Scene,
    SceneRenderer, SessionStats, DEFAULT_PORT,
};
