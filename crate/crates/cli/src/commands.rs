use std::fs::{self, File};
use std::io;
use std::path::Path;
use std::time::Instant;

use stabilens_core::camera::{intrinsics_for_fov, CameraIntrinsics};
use stabilens_core::dataset::{
    associate_within, load_dataset, read_calibration, read_poses_csv, write_poses_csv, FrameKind, FrameRecord,
    LoadOptions,
};
use stabilens_core::imaging::{load_rgb, save_rgb};
use stabilens_core::meshing::PoissonConfig;
use stabilens_core::metrics::{evaluate_sequence, SsimMode};
use stabilens_core::nerf::{compute_alignment, export_nerf_dataset, select_sharp_frames, ExportFrame, NerfManifest};
use stabilens_core::pointcloud::DepthRange;
use stabilens_core::reconstruct::{build_scene_cloud, mesh_scene, MeshConfig, SceneConfig};
use stabilens_core::render::{render_mesh, render_pointcloud, RenderConfig};
use stabilens_core::synth::{write_synthetic_dataset, SynthConfig};
use stabilens_core::{ply, Pose};
use stabilens_stream::{
    run_pose_client, FrameSink, Pacing, PngDirSink, RawFrameSink, RenderServer, Scene, SceneRenderer, TimedPose,
};

use crate::{
    CameraArgs, Command, EvalArgs, ExportArgs, IngestArgs, MeshArgs, ReconstructArgs, RenderArgs, SceneKind, SelectArgs,
    ServeArgs, SsimModeArg, StreamArgs, SynthArgs,
};

type CmdResult = Result<(), Box<dyn std::error::Error>>;

pub fn parse_rgb(s: &str) -> Result<[u8; 3], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("expected r,g,b, got {s:?}"));
    }
    let mut c = [0u8; 3];
    for (dst, p) in c.iter_mut().zip(parts) {
        *dst = p.parse().map_err(|_| format!("bad color component {p:?}"))?;
    }
    Ok(c)
}

fn mkdir(dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))
}

pub fn run(cmd: Command) -> CmdResult {
    match cmd {
        Command::IngestValidate(a) => ingest_validate(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Mesh(a) => mesh(a),
        Command::Render(a) => render(a),
        Command::SelectFrames(a) => select_frames(a),
        Command::ExportNerf(a) => export_nerf(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
        Command::Stream(a) => stream(a),
        Command::Synth(a) => synth(a),
    }
}

fn ingest_validate(a: IngestArgs) -> CmdResult {
    let ds = load_dataset(
        &a.input,
        LoadOptions {
            check_images: a.check_images,
        },
    )?;
    let paired = ds
        .depth_frames
        .iter()
        .filter(|d| associate_within(d, &ds.rgb_frames, a.max_gap_us).is_some())
        .count();
    let span = |f: &[FrameRecord]| {
        let (first, last) = (f.first().unwrap().timestamp_us, f.last().unwrap().timestamp_us);
        (last - first) as f64 * 1e-6
    };
    let (ri, di) = (&ds.rgb.intrinsics, &ds.depth.intrinsics);
    println!("rgb frames: {} over {:.2} s, {}x{} at {:.2} deg", ds.rgb_frames.len(), span(&ds.rgb_frames), ri.width, ri.height, ri.hfov_deg());
    println!("depth frames: {} over {:.2} s, {}x{} at {:.2} deg", ds.depth_frames.len(), span(&ds.depth_frames), di.width, di.height, di.hfov_deg());
    println!("depth frames with rgb within {} us: {paired}", a.max_gap_us);
    if paired == 0 {
        return Err("no depth frame has an rgb partner".into());
    }
    Ok(())
}

fn reconstruct(a: ReconstructArgs) -> CmdResult {
    let ds = load_dataset(&a.input, LoadOptions::default())?;
    let cfg = SceneConfig {
        depth_range: DepthRange::new(a.z_min, a.z_max)?,
        radius: a.radius,
        radius_min_neighbors: a.radius_min_neighbors,
        stat_k: a.stat_k,
        stat_alpha: a.stat_alpha,
        voxel_size: a.voxel,
        min_separation: a.min_separation,
        edge_margin: a.edge_margin,
        max_gap_us: a.max_gap_us,
    };
    let start = Instant::now();
    let rep = build_scene_cloud(&ds, &cfg)?;
    ply::write_point_cloud(&a.out, &rep.cloud)?;
    println!(
        "{} points from {}/{} depth frames in {:.1} s -> {}",
        rep.cloud.len(),
        rep.frames_used,
        rep.frames_total,
        start.elapsed().as_secs_f64(),
        a.out.display()
    );
    Ok(())
}

fn mesh(a: MeshArgs) -> CmdResult {
    let cloud = ply::read_point_cloud(&a.input)?;
    let centers = match &a.dataset {
        Some(dir) => {
            let ds = load_dataset(dir, LoadOptions::default())?;
            Some(ds.depth_frames.iter().map(|f| f.pose.center()).collect::<Vec<_>>())
        }
        None => None,
    };
    let cfg = MeshConfig {
        normal_k: a.normal_k,
        orient_k: a.orient_k,
        poisson: PoissonConfig {
            max_depth: a.depth,
            scale: a.scale,
            tolerance: a.tolerance,
            max_iterations: a.max_iterations,
        },
        density_quantile: a.density_quantile,
        bbox_expand: a.bbox_expand,
    };
    let start = Instant::now();
    let rep = mesh_scene(&cloud, centers.as_deref(), &cfg)?;
    ply::write_mesh(&a.out, &rep.mesh)?;
    println!(
        "{} vertices, {} triangles ({} before trimming; {} leaves, {} iterations) in {:.1} s -> {}",
        rep.mesh.vertices.len(),
        rep.mesh.triangles.len(),
        rep.vertices_before_trim,
        rep.poisson.leaves,
        rep.poisson.iterations,
        start.elapsed().as_secs_f64(),
        a.out.display()
    );
    Ok(())
}

fn base_intrinsics(c: &CameraArgs) -> Result<CameraIntrinsics, Box<dyn std::error::Error>> {
    match &c.calib {
        Some(path) => Ok(read_calibration(path)?.0.intrinsics),
        None => Ok(CameraIntrinsics::from_hfov(c.width, c.height, c.base_fov_deg)?),
    }
}

fn render_config(c: &CameraArgs, fov_deg: Option<f64>) -> Result<RenderConfig, Box<dyn std::error::Error>> {
    let base = base_intrinsics(c)?;
    let intr = match fov_deg {
        Some(f) => intrinsics_for_fov(&base, f)?,
        None => base,
    };
    let cfg = RenderConfig {
        splat_radius: c.splat_radius,
        background: c.background,
        near: c.near,
        far: c.far,
        ..RenderConfig::new(intr)
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_scene(path: &Path, kind: SceneKind) -> Result<Scene, Box<dyn std::error::Error>> {
    Ok(match kind {
        SceneKind::Cloud => Scene::Cloud(ply::read_point_cloud(path)?),
        SceneKind::Mesh => Scene::Mesh(ply::read_mesh(path)?),
        SceneKind::Auto => {
            let m = ply::read_mesh(path)?;
            if m.triangles.is_empty() {
                Scene::Cloud(ply::read_point_cloud(path)?)
            } else {
                Scene::Mesh(m)
            }
        }
    })
}

fn render(a: RenderArgs) -> CmdResult {
    let scene = load_scene(&a.scene, a.camera.scene_kind)?;
    let poses = read_poses_csv(&a.poses, FrameKind::Rgb)?;
    let cfg = render_config(&a.camera, a.fov_deg)?;
    mkdir(&a.out)?;
    for rec in &poses {
        let out = match &scene {
            Scene::Cloud(pc) => render_pointcloud(pc, &rec.pose, &cfg)?,
            Scene::Mesh(m) => render_mesh(m, &rec.pose, &cfg)?,
        };
        save_rgb(&out.image, &a.out.join(format!("{}.png", rec.timestamp_us)))?;
    }
    println!(
        "{} frames at {:.2} deg -> {}",
        poses.len(),
        cfg.intr.hfov_deg(),
        a.out.display()
    );
    Ok(())
}

fn select_frames(a: SelectArgs) -> CmdResult {
    let ds = load_dataset(&a.input, LoadOptions::default())?;
    let images = ds
        .rgb_frames
        .iter()
        .map(|r| ds.load_rgb(r))
        .collect::<Result<Vec<_>, _>>()?;
    let picked = select_sharp_frames(&images, a.count, a.threshold)?;
    mkdir(&a.out)?;
    let mut records = Vec::with_capacity(picked.len());
    let mut report = String::from("index,timestamp_us,original_sharpness,sharpness,amount,unreached\n");
    for s in &picked {
        let rec = ds.rgb_frames[s.index].clone();
        save_rgb(&s.output.image, &a.out.join(format!("{}.png", rec.timestamp_us)))?;
        report.push_str(&format!(
            "{},{},{:.4},{:.4},{:.6},{}\n",
            s.index, rec.timestamp_us, s.original_sharpness, s.output.sharpness, s.output.amount, s.output.unreached
        ));
        records.push(rec);
    }
    write_poses_csv(&a.out.join("poses_rgb.csv"), &records)?;
    let sel = a.out.join("selection.csv");
    fs::write(&sel, report).map_err(|e| format!("{}: {e}", sel.display()))?;
    let boosted = picked.iter().filter(|s| s.output.amount > 0.0).count();
    let unreached = picked.iter().filter(|s| s.output.unreached).count();
    println!(
        "selected {} of {} frames ({boosted} sharpened, {unreached} below threshold) -> {}",
        picked.len(),
        images.len(),
        a.out.display()
    );
    Ok(())
}

fn export_nerf(a: ExportArgs) -> CmdResult {
    let intr = read_calibration(&a.calib)?.0.intrinsics;
    let records = read_poses_csv(&a.poses, FrameKind::Rgb)?;
    let alignment = match &a.alignment_from {
        Some(path) => NerfManifest::read(path)?.alignment(),
        None => compute_alignment(&records.iter().map(|r| r.pose).collect::<Vec<Pose>>())?,
    };
    let images = records
        .iter()
        .map(|r| load_rgb(&a.images.join(format!("{}.png", r.timestamp_us))))
        .collect::<Result<Vec<_>, _>>()?;
    let frames: Vec<ExportFrame> = records
        .iter()
        .zip(&images)
        .map(|(r, img)| ExportFrame {
            name: r.timestamp_us.to_string(),
            image: img,
            pose: r.pose,
        })
        .collect();
    let manifest = export_nerf_dataset(&frames, &alignment, &intr, &a.out)?;
    println!(
        "{} frames, offset {:?}, scale {:.6} -> {}",
        frames.len(),
        alignment.translation_offset.as_slice(),
        alignment.scale,
        manifest.display()
    );
    Ok(())
}

fn png_names(dir: &Path) -> io::Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    Ok(names)
}

fn eval(a: EvalArgs) -> CmdResult {
    let names = png_names(&a.truth).map_err(|e| format!("{}: {e}", a.truth.display()))?;
    if names.is_empty() {
        return Err(format!("no PNG frames in {}", a.truth.display()).into());
    }
    let mut renders = Vec::with_capacity(names.len());
    let mut truth = Vec::with_capacity(names.len());
    for n in &names {
        renders.push(load_rgb(&a.renders.join(n))?);
        truth.push(load_rgb(&a.truth.join(n))?);
    }
    let mode = match a.ssim_mode {
        SsimModeArg::Luma => SsimMode::Luma,
        SsimModeArg::PerChannel => SsimMode::PerChannel,
    };
    let rep = evaluate_sequence(&renders, &truth, mode)?;
    let mut text = String::new();
    for (f, n) in rep.frames.iter().zip(&names) {
        text.push_str(&format!("{n}: {:.2} dB | {:.4}\n", f.psnr_db, f.ssim));
    }
    text.push_str(&rep.table_line(&a.label));
    text.push('\n');
    print!("{text}");
    if let Some(path) = &a.report {
        fs::write(path, &text).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if let Some(path) = &a.csv {
        rep.write_csv(path)?;
    }
    Ok(())
}

fn serve(a: ServeArgs) -> CmdResult {
    let scene = load_scene(&a.scene, a.camera.scene_kind)?;
    let renderer = SceneRenderer::new(scene, render_config(&a.camera, None)?)?;
    let mut sink: Box<dyn FrameSink> = match (&a.out, &a.raw) {
        (Some(dir), _) => Box::new(PngDirSink::new(dir)?),
        (None, Some(p)) if p.as_os_str() == "-" => Box::new(RawFrameSink::new(io::stdout())),
        (None, Some(p)) => Box::new(RawFrameSink::new(
            File::create(p).map_err(|e| format!("{}: {e}", p.display()))?,
        )),
        (None, None) => return Err("give --out DIR or --raw FILE for the frames".into()),
    };
    let server = RenderServer::bind(a.listen)?;
    eprintln!("listening on {}", server.local_addr()?);
    let stats = server.serve_one(&renderer, sink.as_mut())?;
    eprintln!(
        "received {} poses; {}",
        stats.poses_received,
        stats.summary_line()
    );
    match stats.aborted {
        Some(why) => Err(format!("session aborted: {why}").into()),
        None => Ok(()),
    }
}

fn stream(a: StreamArgs) -> CmdResult {
    let records = read_poses_csv(&a.poses, FrameKind::Rgb)?;
    let poses: Vec<TimedPose> = records
        .iter()
        .map(|r| TimedPose {
            timestamp_us: r.timestamp_us,
            pose: r.pose,
        })
        .collect();
    let pacing = a.rate_hz.map_or(Pacing::Timestamps, Pacing::FixedRate);
    let stats = run_pose_client(a.server, &poses, a.fov_deg, pacing)?;
    println!(
        "sent {} poses in {:.2} s",
        stats.packets_sent,
        stats.elapsed.as_secs_f64()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> CmdResult {
    let cfg = SynthConfig {
        rgb_width: a.rgb_width,
        rgb_height: a.rgb_height,
        rgb_hfov_deg: a.rgb_fov_deg,
        depth_width: a.depth_width,
        depth_height: a.depth_height,
        depth_hfov_deg: a.depth_fov_deg,
        train_frames: a.train_frames,
        test_frames: a.test_frames,
        mesh_spacing: a.mesh_spacing,
    };
    let s = write_synthetic_dataset(&a.out, &cfg)?;
    println!(
        "train: {} rgb + {} depth frames in {}; test: {} frames in {}; mesh {}",
        s.train_rgb,
        s.train_depth,
        s.train_root.display(),
        s.test_rgb,
        s.test_root.display(),
        s.mesh_path.display()
    );
    Ok(())
}
